#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "toib/channel.hpp"
#include "toib/club.hpp"
#include "toib/data.hpp"
#include "toib/errors.hpp"
#include "toib/nn.hpp"
#include "toib/objectives.hpp"
#include "toib/rng.hpp"
#include "toib/serialize.hpp"
#include "toib/tensor.hpp"

namespace toib {

enum class PowerMode { equal };

struct TrainConfig {
    size_t n_users = 2;
    size_t epochs = 100;       // T
    size_t batch = 64;         // V
    size_t resamples = 1;      // L
    size_t club_steps = 5;     // M
    double alpha = 0.01;
    double beta = 0.01;
    double lr = 1e-4;
    double club_lr = 1e-3;
    size_t latent_dim = 16;    // d
    ChannelKind channel = ChannelKind::awgn;
    double snr_db = 5.0;
    double pmax = 1.0;
    PowerMode power = PowerMode::equal;
    PhaseAMode phase_a = PhaseAMode::mle;
    LabelMode label_mode = LabelMode::shared;
    bool equalize = true;
    uint64_t seed = 1;

    std::vector<size_t> enc_hidden{128, 128};
    std::vector<size_t> dec_hidden{128};
    std::vector<size_t> club_hidden{64};
    Activation activation = Activation::relu;

    void validate() const {
        if (n_users < 1) throw ContractError("users must be >= 1");
        if (batch < 2) throw ContractError("batch must be >= 2");
        if (resamples < 1) throw ContractError("resamples must be >= 1");
        if (alpha < 0.0) throw ContractError("alpha must satisfy alpha >= 0");
        if (beta < 0.0) throw ContractError("beta must satisfy beta >= 0");
        if (!(lr > 0.0)) throw ContractError("lr must be > 0");
        if (!(club_lr > 0.0)) throw ContractError("club_lr must be > 0");
        if (latent_dim < 1) throw ContractError("latent_dim must be >= 1");
        if (!(pmax > 0.0)) throw ContractError("pmax must be > 0");
    }

    PowerAllocation allocation() const { return PowerAllocation::equal(n_users, pmax); }
};

// Everything a training run owns: networks, optimizer and estimator state,
// RNG streams, counters. Checkpointing this state and resuming reproduces
// the uninterrupted run bit for bit.
struct RunState {
    TrainConfig cfg;
    size_t d_x = 0;
    size_t k = 0;

    std::vector<GaussianEncoder> encoders;
    std::vector<Decoder> decoders;
    PairEstimatorBank bank;
    AdamState main_opt;

    Rng rng_data;
    Rng rng_eps;
    Rng rng_chan;

    uint64_t epoch = 0;
    uint64_t step = 0;

    std::vector<Tensor> main_params() const {
        std::vector<Tensor> ps;
        for (const auto& e : encoders) e.collect_params(ps);
        for (const auto& d : decoders) d.collect_params(ps);
        return ps;
    }
};

inline RunState init_run(const TrainConfig& cfg, size_t d_x, size_t k) {
    cfg.validate();
    RunState st;
    st.cfg = cfg;
    st.d_x = d_x;
    st.k = k;

    Rng master(cfg.seed);
    Rng init_rng = master.substream("init");
    for (size_t i = 0; i < cfg.n_users; ++i) {
        Rng r = init_rng.substream("enc." + std::to_string(i));
        auto enc = GaussianEncoder::make(d_x, cfg.enc_hidden, cfg.latent_dim, cfg.activation);
        init_params(enc, r);
        st.encoders.push_back(std::move(enc));
    }
    for (size_t i = 0; i < cfg.n_users; ++i) {
        Rng r = init_rng.substream("dec." + std::to_string(i));
        auto dec = Decoder::make(cfg.latent_dim, cfg.dec_hidden, k, cfg.activation);
        init_params(dec, r);
        st.decoders.push_back(std::move(dec));
    }
    Rng club_rng = init_rng.substream("club");
    st.bank = PairEstimatorBank::make(cfg.n_users, cfg.latent_dim, k, cfg.club_hidden, cfg.phase_a,
                                      cfg.club_steps, cfg.club_lr, club_rng);

    AdamConfig ocfg;
    ocfg.lr = cfg.lr;
    st.main_opt = AdamState(st.main_params(), ocfg);

    st.rng_data = master.substream("data");
    st.rng_eps = master.substream("eps");
    st.rng_chan = master.substream("chan");
    return st;
}

struct StepResult {
    LossBreakdown loss;
    std::vector<std::vector<int>> predictions;  // per user, from the first channel resample
    PairDiagnostics phase_a;
};

// One optimization step: encode all users, normalize, superpose, resample
// the channel L times, Phase-A estimator updates on detached latents, then
// a joint Phase-B update of all encoders and decoders with the estimators
// frozen.
inline StepResult train_step(RunState& st, const BatchPair& batch, const TrainConfig& cfg) {
    const size_t n = cfg.n_users;
    if (batch.x.size() != n) throw ContractError("batch user count mismatch");
    const size_t v = batch.batch_size();

    Tape tape;

    // Encode + reparameterize + power-normalize each user.
    std::vector<GaussianLatent> lats;
    std::vector<Tensor> z;
    for (size_t i = 0; i < n; ++i) {
        GaussianLatent lat = st.encoders[i].forward(tape, batch.x[i]);
        Tensor eps = Tensor::zeros({v, cfg.latent_dim});
        for (double& x : eps.values()) x = st.rng_eps.normal();
        Tensor zi = tape.reparam_sample(lat.mu, lat.logvar, eps);
        z.push_back(power_normalize(tape, zi));
        lats.push_back(std::move(lat));
    }

    const PowerAllocation alloc = cfg.allocation();
    Tensor s = superpose(tape, z, alloc);
    const double sigma2 = calibrate_noise(s, SnrSpec{cfg.snr_db});

    // L independent channel draws of the same superposed batch.
    std::vector<std::vector<Tensor>> received(cfg.resamples);
    for (size_t l = 0; l < cfg.resamples; ++l)
        for (size_t i = 0; i < n; ++i) {
            ChannelRealization real{cfg.channel, sigma2, 1.0, cfg.equalize};
            received[l].push_back(transmit(tape, s, real, st.rng_chan));
        }

    // Phase-A on detached latents.
    const ClassPartition part = ClassPartition::from_labels(batch.w, st.k);
    std::vector<Tensor> z_detached;
    for (const auto& zi : z) z_detached.push_back(zi.detach());
    PairDiagnostics diag = st.bank.phase_a_update(z_detached, part, batch.w);

    // Phase-B: assemble the objective with estimator parameters frozen.
    std::vector<Tensor> ce_terms, kl_terms;
    std::vector<std::vector<int>> predictions;
    for (size_t i = 0; i < n; ++i) {
        Tensor ce_acc;
        for (size_t l = 0; l < cfg.resamples; ++l) {
            Tensor logits = st.decoders[i].forward(tape, received[l][i]);
            if (l == 0) predictions.push_back(argmax_classes(logits));
            Tensor ce = cross_entropy(tape, logits, batch.labels[i]);
            ce_acc = l == 0 ? ce : tape.add(ce_acc, ce);
        }
        if (cfg.resamples > 1) ce_acc = tape.scale(ce_acc, 1.0 / static_cast<double>(cfg.resamples));
        ce_terms.push_back(ce_acc);
        kl_terms.push_back(kl_to_std_normal(tape, lats[i]));
    }

    std::vector<std::pair<int, int>> pair_ids = st.bank.pair_ids();
    std::vector<Tensor> vclub_terms;
    if (cfg.alpha != 0.0 && !pair_ids.empty()) {
        st.bank.set_params_requires_grad(false);
        for (const auto& [i, j] : pair_ids)
            vclub_terms.push_back(vclub_pair(tape, st.bank.net(i, j), z[i], z[j], part, batch.w));
    } else {
        // Diagnostics only; the detached values match what the tape would
        // produce since the estimators are frozen after Phase-A.
        for (size_t p = 0; p < pair_ids.size(); ++p) vclub_terms.push_back(Tensor::scalar(diag.vclub[p]));
    }

    LossBreakdown loss = toib_loss(tape, ce_terms, kl_terms, pair_ids, vclub_terms, cfg.alpha, cfg.beta);
    if (!std::isfinite(loss.total)) {
        std::string dump = "non-finite loss at step " + std::to_string(st.step) + ": ce=";
        for (const double x : loss.ce) dump += std::to_string(x) + " ";
        dump += "kl=";
        for (const double x : loss.kl) dump += std::to_string(x) + " ";
        dump += "vclub=";
        for (const double x : loss.vclub) dump += std::to_string(x) + " ";
        if (cfg.alpha != 0.0) st.bank.set_params_requires_grad(true);
        throw Error(dump);
    }

    tape.backward(loss.total_tensor);
    st.main_opt.step();
    if (cfg.alpha != 0.0) st.bank.set_params_requires_grad(true);

    ++st.step;
    StepResult out;
    out.loss = std::move(loss);
    out.predictions = std::move(predictions);
    out.phase_a = std::move(diag);
    return out;
}

struct EpochLog {
    uint64_t epoch = 0;
    std::vector<double> ce;   // per user, epoch mean
    std::vector<double> kl;   // per user, epoch mean
    std::vector<double> acc;  // per user, over first-resample predictions
    std::vector<std::pair<int, int>> pair_ids;
    std::vector<double> vclub;  // per pair, epoch mean
};

// Runs T epochs of class-aligned batches. Returns the per-epoch metric log.
inline std::vector<EpochLog> train(RunState& st, const std::vector<Dataset>& datasets) {
    const TrainConfig& cfg = st.cfg;
    if (datasets.size() != cfg.n_users) throw ContractError("dataset count must match users");
    std::vector<EpochLog> history;

    for (uint64_t epoch = st.epoch; epoch < cfg.epochs; ++epoch) {
        BatchSampler sampler(datasets, cfg.batch, cfg.label_mode, st.rng_data);
        const size_t steps = sampler.batches_per_epoch();

        EpochLog log;
        log.epoch = epoch;
        log.ce.assign(cfg.n_users, 0.0);
        log.kl.assign(cfg.n_users, 0.0);
        log.acc.assign(cfg.n_users, 0.0);
        log.pair_ids = st.bank.pair_ids();
        log.vclub.assign(log.pair_ids.size(), 0.0);
        size_t correct_denom = 0;

        for (size_t b = 0; b < steps; ++b) {
            BatchPair batch = sampler.next();
            StepResult res = train_step(st, batch, cfg);
            for (size_t i = 0; i < cfg.n_users; ++i) {
                log.ce[i] += res.loss.ce[i];
                log.kl[i] += res.loss.kl[i];
                for (size_t s = 0; s < batch.batch_size(); ++s)
                    if (res.predictions[i][s] == batch.labels[i][s]) log.acc[i] += 1.0;
            }
            correct_denom += batch.batch_size();
            for (size_t p = 0; p < log.vclub.size(); ++p) log.vclub[p] += res.loss.vclub[p];
        }

        for (size_t i = 0; i < cfg.n_users; ++i) {
            log.ce[i] /= static_cast<double>(steps);
            log.kl[i] /= static_cast<double>(steps);
            log.acc[i] /= static_cast<double>(correct_denom);
        }
        for (double& x : log.vclub) x /= static_cast<double>(steps);
        history.push_back(std::move(log));

        st.rng_data = sampler.rng();
        st.epoch = epoch + 1;
    }
    return history;
}

// ---- checkpointing ----

inline constexpr char kCheckpointMagic[] = "TOIB";
inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr char kTrailerMagic[] = "TAIL";

namespace detail {

struct NamedTensors {
    std::string name;
    std::vector<Tensor> tensors;
};

inline void write_tensor(BinWriter& w, const Tensor& t) {
    w.u32(static_cast<uint32_t>(t.ndim()));
    for (const size_t d : t.shape()) w.u64(d);
    w.f64_array(t.values());
}

inline void write_raw(BinWriter& w, const Shape& shape, const std::vector<double>& vals) {
    w.u32(static_cast<uint32_t>(shape.size()));
    for (const size_t d : shape) w.u64(d);
    w.f64_array(vals);
}

inline std::pair<Shape, std::vector<double>> read_raw(BinReader& r, const std::string& path) {
    const uint32_t nd = r.u32();
    if (nd > 8) throw FormatError(path + ": implausible tensor rank " + std::to_string(nd));
    Shape shape(nd);
    for (auto& d : shape) d = r.u64();
    const size_t n = shape_numel(shape);
    if (n > (1ull << 28)) throw FormatError(path + ": implausible tensor size");
    return {shape, r.f64_array(n)};
}

inline void collect_networks(const RunState& st, std::vector<NamedTensors>& nets) {
    for (size_t i = 0; i < st.encoders.size(); ++i) {
        NamedTensors nt{"enc" + std::to_string(i), {}};
        st.encoders[i].collect_params(nt.tensors);
        nets.push_back(std::move(nt));
    }
    for (size_t i = 0; i < st.decoders.size(); ++i) {
        NamedTensors nt{"dec" + std::to_string(i), {}};
        st.decoders[i].collect_params(nt.tensors);
        nets.push_back(std::move(nt));
    }
    for (const auto& est : st.bank.estimators()) {
        NamedTensors nt{"club" + std::to_string(est.i) + "_" + std::to_string(est.j), {}};
        est.net.collect_params(nt.tensors);
        nets.push_back(std::move(nt));
    }
}

inline void write_rng(std::vector<std::pair<std::string, uint64_t>>& tr, const std::string& name, const Rng& rng) {
    const auto s = rng.save_state();
    for (size_t w = 0; w < 4; ++w) tr.emplace_back(name + ".s" + std::to_string(w), s[w]);
    tr.emplace_back(name + ".origin", rng.origin_seed());
}

inline Rng read_rng(const std::string& name, const std::vector<std::pair<std::string, uint64_t>>& tr,
                    const std::string& path) {
    auto find = [&](const std::string& key) {
        for (const auto& [k, v] : tr)
            if (k == key) return v;
        throw FormatError(path + ": missing trailer entry " + key);
    };
    Rng rng(find(name + ".origin"));
    std::array<uint64_t, 4> s{};
    for (size_t w = 0; w < 4; ++w) s[w] = find(name + ".s" + std::to_string(w));
    rng.restore_state(s);
    return rng;
}

}  // namespace detail

inline void checkpoint_save(const RunState& st, const std::string& path) {
    BinWriter w(path);
    w.bytes(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);

    std::vector<detail::NamedTensors> nets;
    detail::collect_networks(st, nets);
    w.u32(static_cast<uint32_t>(nets.size()));
    for (const auto& nt : nets) {
        w.str(nt.name);
        w.u32(static_cast<uint32_t>(nt.tensors.size()));
        for (const auto& t : nt.tensors) detail::write_tensor(w, t);
    }

    // Optimizer moments, stored as shape-mirrored tensor groups.
    auto write_opt = [&](const std::string& name, const AdamState& opt) {
        const auto& params = opt.params();
        w.str("adam." + name + ".m1");
        w.u32(static_cast<uint32_t>(params.size()));
        for (size_t i = 0; i < params.size(); ++i) detail::write_raw(w, params[i].shape(), opt.moment1()[i]);
        w.str("adam." + name + ".m2");
        w.u32(static_cast<uint32_t>(params.size()));
        for (size_t i = 0; i < params.size(); ++i) detail::write_raw(w, params[i].shape(), opt.moment2()[i]);
    };
    const uint32_t opt_groups = static_cast<uint32_t>(2 * (1 + st.bank.estimators().size()));
    w.u32(opt_groups);
    write_opt("main", st.main_opt);
    for (const auto& est : st.bank.estimators())
        write_opt("club" + std::to_string(est.i) + "_" + std::to_string(est.j), est.opt);

    std::vector<std::pair<std::string, uint64_t>> trailer;
    trailer.emplace_back("epoch", st.epoch);
    trailer.emplace_back("step", st.step);
    trailer.emplace_back("adam.main.t", st.main_opt.step_count());
    trailer.emplace_back("bank.updates", st.bank.update_count());
    for (const auto& est : st.bank.estimators())
        trailer.emplace_back("adam.club" + std::to_string(est.i) + "_" + std::to_string(est.j) + ".t",
                             est.opt.step_count());
    detail::write_rng(trailer, "rng.data", st.rng_data);
    detail::write_rng(trailer, "rng.eps", st.rng_eps);
    detail::write_rng(trailer, "rng.chan", st.rng_chan);

    w.bytes(kTrailerMagic, 4);
    w.u32(static_cast<uint32_t>(trailer.size()));
    for (const auto& [k, v] : trailer) {
        w.str(k);
        w.u64(v);
    }
    w.close();
}

// Rebuilds the run from config + data dimensions, then loads parameters and
// state by name with shape verification.
inline RunState checkpoint_load(const std::string& path, const TrainConfig& cfg, size_t d_x, size_t k) {
    BinReader r(path);
    r.expect_magic(kCheckpointMagic, 4);
    const uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));

    RunState st = init_run(cfg, d_x, k);

    std::vector<detail::NamedTensors> nets;
    detail::collect_networks(st, nets);
    const uint32_t count = r.u32();
    if (count != nets.size())
        throw FormatError(path + ": checkpoint has " + std::to_string(count) + " networks, config expects " +
                          std::to_string(nets.size()));
    for (auto& nt : nets) {
        const std::string name = r.str();
        if (name != nt.name) throw FormatError(path + ": expected network " + nt.name + ", found " + name);
        const uint32_t tc = r.u32();
        if (tc != nt.tensors.size())
            throw FormatError(path + ": network " + name + " tensor count mismatch");
        for (auto& t : nt.tensors) {
            auto [shape, vals] = detail::read_raw(r, path);
            if (shape != t.shape())
                throw FormatError(path + ": network " + name + " tensor shape " + shape_str(shape) +
                                  ", expected " + shape_str(t.shape()));
            t.values() = std::move(vals);
        }
    }

    const uint32_t opt_groups = r.u32();
    auto read_opt = [&](const std::string& name, AdamState& opt) {
        for (const char* which : {".m1", ".m2"}) {
            const std::string got = r.str();
            if (got != "adam." + name + which)
                throw FormatError(path + ": expected optimizer group adam." + name + which + ", found " + got);
            const uint32_t tc = r.u32();
            if (tc != opt.params().size()) throw FormatError(path + ": optimizer group size mismatch for " + name);
            auto& moments = which == std::string(".m1") ? opt.moment1() : opt.moment2();
            for (size_t i = 0; i < tc; ++i) {
                auto [shape, vals] = detail::read_raw(r, path);
                if (shape != opt.params()[i].shape())
                    throw FormatError(path + ": optimizer moment shape mismatch for " + name);
                moments[i] = std::move(vals);
            }
        }
    };
    const uint32_t expected_groups = static_cast<uint32_t>(2 * (1 + st.bank.estimators().size()));
    if (opt_groups != expected_groups) throw FormatError(path + ": optimizer group count mismatch");
    read_opt("main", st.main_opt);
    for (auto& est : st.bank.estimators())
        read_opt("club" + std::to_string(est.i) + "_" + std::to_string(est.j), est.opt);

    r.expect_magic(kTrailerMagic, 4);
    const uint32_t tn = r.u32();
    std::vector<std::pair<std::string, uint64_t>> trailer;
    for (uint32_t i = 0; i < tn; ++i) {
        std::string key = r.str();
        const uint64_t val = r.u64();
        trailer.emplace_back(std::move(key), val);
    }
    auto find = [&](const std::string& key) {
        for (const auto& [kk, vv] : trailer)
            if (kk == key) return vv;
        throw FormatError(path + ": missing trailer entry " + key);
    };
    st.epoch = find("epoch");
    st.step = find("step");
    st.bank.set_update_count(find("bank.updates"));
    st.main_opt.set_step_count(find("adam.main.t"));
    for (auto& est : st.bank.estimators())
        est.opt.set_step_count(
            find("adam.club" + std::to_string(est.i) + "_" + std::to_string(est.j) + ".t"));
    st.rng_data = detail::read_rng("rng.data", trailer, path);
    st.rng_eps = detail::read_rng("rng.eps", trailer, path);
    st.rng_chan = detail::read_rng("rng.chan", trailer, path);
    return st;
}

}  // namespace toib
