#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "toib/errors.hpp"
#include "toib/rng.hpp"
#include "toib/serialize.hpp"
#include "toib/tensor.hpp"

namespace toib {

enum class LabelMode { shared, independent };

inline const char* label_mode_name(LabelMode m) { return m == LabelMode::shared ? "shared" : "independent"; }

// Labelled inputs for one user. Labels are 1-based class indices; every class
// must appear at least twice so leave-one-out pairs exist.
struct Dataset {
    size_t n = 0;
    size_t d_x = 0;
    size_t k = 0;
    std::vector<double> x;       // [n x d_x] row-major
    std::vector<int> labels;     // in [1..k]

    void validate() const {
        if (x.size() != n * d_x) throw ContractError("dataset input size mismatch");
        if (labels.size() != n) throw ContractError("dataset label count mismatch");
        std::vector<size_t> counts(k, 0);
        for (const int u : labels) {
            if (u < 1 || static_cast<size_t>(u) > k)
                throw ContractError("dataset label " + std::to_string(u) + " outside [1.." + std::to_string(k) + "]");
            ++counts[static_cast<size_t>(u) - 1];
        }
        for (size_t c = 0; c < k; ++c)
            if (counts[c] < 2)
                throw ContractError("class " + std::to_string(c + 1) + " has " + std::to_string(counts[c]) +
                                    " samples, need at least 2");
    }

    std::vector<std::vector<size_t>> indices_by_class() const {
        std::vector<std::vector<size_t>> by_class(k);
        for (size_t i = 0; i < n; ++i) by_class[static_cast<size_t>(labels[i]) - 1].push_back(i);
        return by_class;
    }
};

struct GenSpec {
    size_t k = 4;
    size_t d_x = 8;
    size_t n_per_user = 2000;
    size_t n_users = 2;
    double c_sep = 4.0;
    double sigma_x = 1.0;
    LabelMode label_mode = LabelMode::shared;
    uint64_t seed = 1;

    void validate() const {
        if (k < 2) throw ContractError("gen spec: classes must be >= 2");
        if (d_x < 1) throw ContractError("gen spec: input_dim must be >= 1");
        if (n_users < 1) throw ContractError("gen spec: users must be >= 1");
        if (!(c_sep > 0.0)) throw ContractError("gen spec: sep must be > 0");
        if (!(sigma_x > 0.0)) throw ContractError("gen spec: noise must be > 0");
        if (n_per_user < 2 * k)
            throw ContractError("gen spec: samples (" + std::to_string(n_per_user) +
                                ") must be >= 2 * classes so every class has two samples");
    }
};

namespace detail {

// Label sequence of length n over [1..k] with every class appearing at least
// twice, shuffled.
inline std::vector<int> label_sequence(size_t n, size_t k, Rng& rng) {
    std::vector<int> seq;
    seq.reserve(n);
    for (size_t c = 1; c <= k; ++c) {
        seq.push_back(static_cast<int>(c));
        seq.push_back(static_cast<int>(c));
    }
    while (seq.size() < n) seq.push_back(static_cast<int>(rng.uniform_index(k)) + 1);
    for (size_t i = seq.size() - 1; i > 0; --i)
        std::swap(seq[i], seq[rng.uniform_index(i + 1)]);
    return seq;
}

}  // namespace detail

namespace detail {

// One dataset per user whose label sequence is the concatenation of the
// given per-segment sequences; centers are drawn once per user before any
// sample noise, so segments share the same mixture.
inline std::vector<Dataset> gen_from_segments(const GenSpec& spec,
                                              const std::vector<std::vector<int>>& shared_segments,
                                              Rng& rng) {
    std::vector<Dataset> out;
    size_t total = 0;
    for (const auto& seg : shared_segments) total += seg.size();

    for (size_t u = 0; u < spec.n_users; ++u) {
        Rng user_rng = rng.substream("user." + std::to_string(u));
        Dataset ds;
        ds.n = total;
        ds.d_x = spec.d_x;
        ds.k = spec.k;

        // One center per class: c_sep * (g / ||g||), g standard normal.
        std::vector<double> centers(spec.k * spec.d_x);
        for (size_t c = 0; c < spec.k; ++c) {
            double norm2 = 0.0;
            for (size_t j = 0; j < spec.d_x; ++j) {
                const double g = user_rng.normal();
                centers[c * spec.d_x + j] = g;
                norm2 += g * g;
            }
            const double s = spec.c_sep / std::sqrt(norm2);
            for (size_t j = 0; j < spec.d_x; ++j) centers[c * spec.d_x + j] *= s;
        }

        if (spec.label_mode == LabelMode::shared) {
            for (const auto& seg : shared_segments) ds.labels.insert(ds.labels.end(), seg.begin(), seg.end());
        } else {
            for (const auto& seg : shared_segments) {
                const auto own = detail::label_sequence(seg.size(), spec.k, user_rng);
                ds.labels.insert(ds.labels.end(), own.begin(), own.end());
            }
        }

        ds.x.resize(ds.n * ds.d_x);
        for (size_t i = 0; i < ds.n; ++i) {
            const size_t c = static_cast<size_t>(ds.labels[i]) - 1;
            for (size_t j = 0; j < spec.d_x; ++j)
                ds.x[i * spec.d_x + j] = centers[c * spec.d_x + j] + spec.sigma_x * user_rng.normal();
        }
        ds.validate();
        out.push_back(std::move(ds));
    }
    return out;
}

}  // namespace detail

// Gaussian-mixture classification data, one dataset per user. Class centers
// are per-user unit directions scaled by c_sep; samples add isotropic noise
// of scale sigma_x. In shared mode all users see the same label sequence.
inline std::vector<Dataset> gen_synthetic(const GenSpec& spec, Rng& rng) {
    spec.validate();
    Rng seq_rng = rng.substream("labels");
    return detail::gen_from_segments(spec, {detail::label_sequence(spec.n_per_user, spec.k, seq_rng)}, rng);
}

struct SplitDatasets {
    std::vector<Dataset> train;
    std::vector<Dataset> eval;
};

// Train and held-out evaluation sets drawn from the same per-user mixtures.
inline SplitDatasets gen_synthetic_split(const GenSpec& spec, size_t n_eval, Rng& rng) {
    spec.validate();
    if (n_eval < 2 * spec.k)
        throw ContractError("eval split needs n_eval >= 2 * classes, got " + std::to_string(n_eval));
    Rng seq_rng = rng.substream("labels");
    const auto seq_train = detail::label_sequence(spec.n_per_user, spec.k, seq_rng);
    const auto seq_eval = detail::label_sequence(n_eval, spec.k, seq_rng);
    const auto full = detail::gen_from_segments(spec, {seq_train, seq_eval}, rng);

    SplitDatasets out;
    for (const auto& ds : full) {
        Dataset train, eva;
        train.n = spec.n_per_user;
        eva.n = n_eval;
        train.d_x = eva.d_x = ds.d_x;
        train.k = eva.k = ds.k;
        const size_t cut = spec.n_per_user * ds.d_x;
        train.x.assign(ds.x.begin(), ds.x.begin() + static_cast<long>(cut));
        eva.x.assign(ds.x.begin() + static_cast<long>(cut), ds.x.end());
        train.labels.assign(ds.labels.begin(), ds.labels.begin() + static_cast<long>(spec.n_per_user));
        eva.labels.assign(ds.labels.begin() + static_cast<long>(spec.n_per_user), ds.labels.end());
        train.validate();
        eva.validate();
        out.train.push_back(std::move(train));
        out.eval.push_back(std::move(eva));
    }
    return out;
}

// Class-aligned mini-batch across users: slot v carries the conditioning
// class w^(v), each user's input/label for that slot, in batch tensors.
struct BatchPair {
    std::vector<Tensor> x;                 // per user, [V x d_x]
    std::vector<std::vector<int>> labels;  // per user, length V
    std::vector<int> w;                    // length V, conditioning classes

    size_t batch_size() const { return w.size(); }
};

// Draws batches per the label mode: shared mode gives every user a fresh
// sample of the slot's class (u_i^(v) = w^(v)); independent mode draws each
// user's class independently of w and of the other users.
class BatchSampler {
public:
    BatchSampler(std::vector<Dataset> datasets, size_t batch_size, LabelMode mode, Rng rng)
        : datasets_(std::move(datasets)), v_(batch_size), mode_(mode), rng_(rng) {
        if (batch_size < 2) throw ContractError("batch size must be >= 2 for leave-one-out pairs");
        if (datasets_.empty()) throw ContractError("sampler needs at least one dataset");
        k_ = datasets_.front().k;
        for (const auto& ds : datasets_) {
            if (ds.k != k_) throw ContractError("datasets disagree on class count");
            by_class_.push_back(ds.indices_by_class());
            for (size_t c = 0; c < k_; ++c)
                if (by_class_.back()[c].empty())
                    throw ContractError("dataset missing class " + std::to_string(c + 1));
        }
    }

    BatchPair next() { return next_sized(v_); }

    // Batch of an explicit size (the final batch of an evaluation pass may
    // be short).
    BatchPair next_sized(size_t v) {
        if (v == 0) throw ContractError("empty batch requested");
        const size_t n_users = datasets_.size();
        BatchPair b;
        b.w.resize(v);
        b.labels.assign(n_users, std::vector<int>(v));
        std::vector<std::vector<double>> xs(n_users, std::vector<double>(v * datasets_.front().d_x));
        for (size_t slot = 0; slot < v; ++slot) {
            const int w = static_cast<int>(rng_.uniform_index(k_)) + 1;
            b.w[slot] = w;
            for (size_t u = 0; u < n_users; ++u) {
                const int cls = mode_ == LabelMode::shared ? w : static_cast<int>(rng_.uniform_index(k_)) + 1;
                const auto& pool = by_class_[u][static_cast<size_t>(cls) - 1];
                const size_t pick = pool[rng_.uniform_index(pool.size())];
                b.labels[u][slot] = cls;
                const auto& ds = datasets_[u];
                std::copy_n(ds.x.begin() + static_cast<long>(pick * ds.d_x), ds.d_x,
                            xs[u].begin() + static_cast<long>(slot * ds.d_x));
            }
        }
        for (size_t u = 0; u < n_users; ++u)
            b.x.push_back(Tensor::from({v, datasets_.front().d_x}, std::move(xs[u])));
        return b;
    }

    // Batches per epoch: enough draws to cover each user's samples at least
    // once in expectation.
    size_t batches_per_epoch() const {
        const size_t n = datasets_.front().n;
        return (n + v_ - 1) / v_;
    }

    Rng& rng() { return rng_; }

private:
    std::vector<Dataset> datasets_;
    size_t v_;
    size_t k_;
    LabelMode mode_;
    Rng rng_;
    std::vector<std::vector<std::vector<size_t>>> by_class_;
};

inline constexpr char kDatasetMagic[] = "TOIBDATA";
inline constexpr uint32_t kDatasetVersion = 1;

inline void save_dataset(const Dataset& ds, const std::string& path) {
    BinWriter w(path);
    w.bytes(kDatasetMagic, 8);
    w.u32(kDatasetVersion);
    w.u64(ds.n);
    w.u32(static_cast<uint32_t>(ds.d_x));
    w.u32(static_cast<uint32_t>(ds.k));
    for (size_t i = 0; i < ds.n; ++i) {
        for (size_t j = 0; j < ds.d_x; ++j) w.f64(ds.x[i * ds.d_x + j]);
        w.u32(static_cast<uint32_t>(ds.labels[i]));
    }
    w.close();
}

inline Dataset load_dataset(const std::string& path) {
    BinReader r(path);
    r.expect_magic(kDatasetMagic, 8);
    const uint32_t version = r.u32();
    if (version != kDatasetVersion)
        throw FormatError(path + ": unsupported dataset version " + std::to_string(version));
    Dataset ds;
    ds.n = r.u64();
    ds.d_x = r.u32();
    ds.k = r.u32();
    if (ds.d_x == 0 || ds.k == 0 || ds.n > (1ull << 32))
        throw FormatError(path + ": implausible header (n=" + std::to_string(ds.n) + ", d_x=" +
                          std::to_string(ds.d_x) + ", K=" + std::to_string(ds.k) + ")");
    ds.x.resize(ds.n * ds.d_x);
    ds.labels.resize(ds.n);
    for (size_t i = 0; i < ds.n; ++i) {
        for (size_t j = 0; j < ds.d_x; ++j) ds.x[i * ds.d_x + j] = r.f64();
        ds.labels[i] = static_cast<int>(r.u32());
    }
    ds.validate();
    return ds;
}

}  // namespace toib
