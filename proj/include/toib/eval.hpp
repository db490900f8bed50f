#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include "toib/channel.hpp"
#include "toib/data.hpp"
#include "toib/errors.hpp"
#include "toib/nn.hpp"
#include "toib/objectives.hpp"
#include "toib/rng.hpp"
#include "toib/tensor.hpp"
#include "toib/training.hpp"

namespace toib {

// Shortest decimal form that parses back to the same double, so equal
// values always give byte-equal CSVs and echoed configs reload exactly.
inline std::string fmt_g17(double v) {
    char buf[40];
    for (const int prec : {15, 16, 17}) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

struct EvalOptions {
    size_t n_eval = 2000;
    ChannelKind channel = ChannelKind::awgn;
    bool equalize = true;
    bool latent_mean = false;  // decode from mu instead of a sampled z
    LabelMode label_mode = LabelMode::shared;
};

struct EvalResult {
    std::vector<double> accuracy;  // per user
    std::vector<double> ce;        // per user
};

namespace detail {

struct ForwardOut {
    std::vector<Tensor> logits;                 // per user
    std::vector<std::vector<int>> predictions;  // per user
};

// Full pipeline at evaluation time on one batch: encode, (sample), normalize,
// superpose, transmit per user, decode. No gradients are recorded and no
// parameter is mutated.
inline ForwardOut eval_forward(const RunState& st, const BatchPair& batch, double snr_db,
                               const EvalOptions& opt, Rng& rng) {
    Tape tape(false);
    const size_t n = st.cfg.n_users;
    const size_t v = batch.batch_size();

    std::vector<Tensor> z;
    for (size_t i = 0; i < n; ++i) {
        GaussianLatent lat = st.encoders[i].forward(tape, batch.x[i]);
        Tensor zi;
        if (opt.latent_mean) {
            zi = lat.mu;
        } else {
            Tensor eps = Tensor::zeros({v, st.cfg.latent_dim});
            for (double& x : eps.values()) x = rng.normal();
            zi = tape.reparam_sample(lat.mu, lat.logvar, eps);
        }
        z.push_back(power_normalize(tape, zi));
    }

    Tensor s = superpose(tape, z, st.cfg.allocation());
    const double sigma2 = calibrate_noise(s, SnrSpec{snr_db});

    ForwardOut out;
    for (size_t i = 0; i < n; ++i) {
        ChannelRealization real{opt.channel, sigma2, 1.0, opt.equalize};
        Tensor y = transmit(tape, s, real, rng);
        Tensor logits = st.decoders[i].forward(tape, y);
        out.predictions.push_back(argmax_classes(logits));
        out.logits.push_back(std::move(logits));
    }
    return out;
}

}  // namespace detail

inline EvalResult evaluate_accuracy(const RunState& st, const std::vector<Dataset>& datasets, double snr_db,
                                    const EvalOptions& opt, Rng& rng) {
    if (opt.n_eval < 1) throw ContractError("n_eval must be >= 1");
    if (opt.n_eval > datasets.front().n) throw ContractError("n_eval exceeds dataset size");
    const size_t n = st.cfg.n_users;
    BatchSampler sampler(datasets, st.cfg.batch, opt.label_mode, rng.substream("batches"));
    Rng chan_rng = rng.substream("channel");

    EvalResult res;
    res.accuracy.assign(n, 0.0);
    res.ce.assign(n, 0.0);
    size_t done = 0;
    Tape tape(false);
    while (done < opt.n_eval) {
        const size_t take = std::min(st.cfg.batch, opt.n_eval - done);
        BatchPair batch = sampler.next_sized(take);
        detail::ForwardOut fwd = detail::eval_forward(st, batch, snr_db, opt, chan_rng);
        for (size_t i = 0; i < n; ++i) {
            for (size_t s = 0; s < take; ++s)
                if (fwd.predictions[i][s] == batch.labels[i][s]) res.accuracy[i] += 1.0;
            res.ce[i] += tape.cross_entropy(fwd.logits[i], batch.labels[i]).value() * static_cast<double>(take);
        }
        done += take;
    }
    for (size_t i = 0; i < n; ++i) {
        res.accuracy[i] /= static_cast<double>(opt.n_eval);
        res.ce[i] /= static_cast<double>(opt.n_eval);
    }
    return res;
}

// Training metrics log: per-user rows, then per-pair vCLUB rows.
inline void write_metrics_csv(const std::vector<EpochLog>& history, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot open " + path + " for writing");
    f << "epoch,user,ce,kl,acc_train\n";
    for (const auto& e : history)
        for (size_t u = 0; u < e.ce.size(); ++u)
            f << e.epoch << "," << u << "," << fmt_g17(e.ce[u]) << "," << fmt_g17(e.kl[u]) << ","
              << fmt_g17(e.acc[u]) << "\n";
    f << "epoch,pair_i,pair_j,vclub\n";
    for (const auto& e : history)
        for (size_t p = 0; p < e.vclub.size(); ++p)
            f << e.epoch << "," << e.pair_ids[p].first << "," << e.pair_ids[p].second << ","
              << fmt_g17(e.vclub[p]) << "\n";
}

struct SweepResult {
    std::vector<double> snr_db;            // one entry per sweep point
    std::vector<EvalResult> per_snr;
    ChannelKind channel = ChannelKind::awgn;
    uint64_t seed = 0;
    size_t n_eval = 0;
};

// One evaluation per SNR, each with its own value-keyed RNG substream so a
// point's result does not depend on the rest of the list.
inline SweepResult sweep_snr(const RunState& st, const std::vector<Dataset>& datasets,
                             const std::vector<double>& snrs, const EvalOptions& opt, uint64_t seed) {
    SweepResult out;
    out.channel = opt.channel;
    out.seed = seed;
    out.n_eval = opt.n_eval;
    Rng master(seed);
    for (const double snr : snrs) {
        Rng rng = master.substream("eval.snr." + fmt_g17(snr));
        out.snr_db.push_back(snr);
        out.per_snr.push_back(evaluate_accuracy(st, datasets, snr, opt, rng));
    }
    return out;
}

inline void write_sweep_csv(const SweepResult& res, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot open " + path + " for writing");
    f << "snr_db,user,accuracy,ce\n";
    for (size_t s = 0; s < res.snr_db.size(); ++s)
        for (size_t u = 0; u < res.per_snr[s].accuracy.size(); ++u)
            f << fmt_g17(res.snr_db[s]) << "," << u << "," << fmt_g17(res.per_snr[s].accuracy[u]) << ","
              << fmt_g17(res.per_snr[s].ce[u]) << "\n";
}

// entry (i, j): accuracy of decoder i's prediction from y_i against user j's
// labels. Row i column j, diagonal is normal decoding.
struct CrossDecodeMatrix {
    size_t n = 0;
    std::vector<double> acc;  // [n x n] row-major

    double at(size_t i, size_t j) const { return acc[i * n + j]; }
};

inline CrossDecodeMatrix cross_decode(const RunState& st, const std::vector<Dataset>& datasets, double snr_db,
                                      const EvalOptions& opt, Rng& rng) {
    if (opt.label_mode == LabelMode::shared)
        throw ContractError(
            "cross-decoding requires independent labels; with shared labels u_i = u_j and the "
            "metric collapses to normal decoding");
    if (opt.n_eval > datasets.front().n) throw ContractError("n_eval exceeds dataset size");
    const size_t n = st.cfg.n_users;
    BatchSampler sampler(datasets, st.cfg.batch, LabelMode::independent, rng.substream("batches"));
    Rng chan_rng = rng.substream("channel");

    CrossDecodeMatrix m;
    m.n = n;
    m.acc.assign(n * n, 0.0);
    size_t done = 0;
    while (done < opt.n_eval) {
        const size_t take = std::min(st.cfg.batch, opt.n_eval - done);
        BatchPair batch = sampler.next_sized(take);
        detail::ForwardOut fwd = detail::eval_forward(st, batch, snr_db, opt, chan_rng);
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < n; ++j)
                for (size_t s = 0; s < take; ++s)
                    if (fwd.predictions[i][s] == batch.labels[j][s]) m.acc[i * n + j] += 1.0;
        done += take;
    }
    for (double& x : m.acc) x /= static_cast<double>(opt.n_eval);
    return m;
}

inline void write_crossdecode_csv(const CrossDecodeMatrix& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot open " + path + " for writing");
    f << "decoder,target_user,accuracy\n";
    for (size_t i = 0; i < m.n; ++i)
        for (size_t j = 0; j < m.n; ++j) f << i << "," << j << "," << fmt_g17(m.at(i, j)) << "\n";
}

// Encoder means for n samples per user: CSV `user,label,z_1..z_d`.
inline void export_latents(const RunState& st, const std::vector<Dataset>& datasets, size_t n_samples,
                           const std::string& path, Rng& rng) {
    if (n_samples < 1) throw ContractError("latent export needs n >= 1");
    const size_t d = st.cfg.latent_dim;
    std::ofstream f(path);
    if (!f) throw FormatError("cannot open " + path + " for writing");
    f << "user,label";
    for (size_t j = 1; j <= d; ++j) f << ",z_" << j;
    f << "\n";

    BatchSampler sampler(datasets, st.cfg.batch, LabelMode::shared, rng.substream("batches"));
    Tape tape(false);
    std::vector<std::string> rows_per_user(st.cfg.n_users);
    size_t done = 0;
    while (done < n_samples) {
        const size_t take = std::min(st.cfg.batch, n_samples - done);
        BatchPair batch = sampler.next_sized(take);
        for (size_t u = 0; u < st.cfg.n_users; ++u) {
            GaussianLatent lat = st.encoders[u].forward(tape, batch.x[u]);
            for (size_t s = 0; s < take; ++s) {
                std::string row = std::to_string(u) + "," + std::to_string(batch.labels[u][s]);
                for (size_t j = 0; j < d; ++j) {
                    const double v = lat.mu.at(s, j);
                    if (!std::isfinite(v)) throw Error("non-finite latent in export");
                    row += "," + fmt_g17(v);
                }
                rows_per_user[u] += row + "\n";
            }
        }
        done += take;
    }
    for (const auto& rows : rows_per_user) f << rows;
}

}  // namespace toib
