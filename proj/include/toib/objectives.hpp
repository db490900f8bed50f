#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "toib/errors.hpp"
#include "toib/nn.hpp"
#include "toib/tensor.hpp"

namespace toib {

// Batch grouped by conditioning class: groups[g] holds the sample indices of
// classes_present[g]. Groups are disjoint and cover the batch.
struct ClassPartition {
    std::vector<int> classes_present;
    std::vector<std::vector<size_t>> groups;
    size_t batch_size = 0;

    static ClassPartition from_labels(const std::vector<int>& w, size_t k) {
        if (w.empty()) throw ContractError("class partition of an empty batch");
        ClassPartition part;
        part.batch_size = w.size();
        std::vector<std::vector<size_t>> by_class(k);
        for (size_t v = 0; v < w.size(); ++v) {
            if (w[v] < 1 || static_cast<size_t>(w[v]) > k)
                throw ContractError("conditioning class " + std::to_string(w[v]) + " outside [1.." +
                                    std::to_string(k) + "]");
            by_class[static_cast<size_t>(w[v]) - 1].push_back(v);
        }
        for (size_t c = 0; c < k; ++c) {
            if (by_class[c].empty()) continue;
            part.classes_present.push_back(static_cast<int>(c) + 1);
            part.groups.push_back(std::move(by_class[c]));
        }
        return part;
    }
};

inline Tensor cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& labels) {
    return tape.cross_entropy(logits, labels);
}

// Batch mean of KL(N(mu, diag(e^logvar)) || N(0, I)), closed form:
// 0.5 * sum_dims(mu^2 + sigma^2 - logvar - 1).
inline Tensor kl_to_std_normal(Tape& tape, const GaussianLatent& lat) {
    if (lat.mu.shape() != lat.logvar.shape())
        throw DimensionError("kl_to_std_normal mu/logvar shape mismatch");
    const double v = static_cast<double>(lat.mu.shape()[0]);
    Tensor t = tape.add(tape.mul(lat.mu, lat.mu), tape.exp_(lat.logvar));
    t = tape.add_const(tape.sub(t, lat.logvar), -1.0);
    return tape.scale(tape.sum(t), 0.5 / v);
}

// Rowwise log q_psi(z_j | z_i, w) for a diagonal Gaussian conditional:
// sum_dims[-0.5 ln(2 pi) - 0.5 l - (z_j - mu)^2 / (2 e^l)]. Returns [V].
inline Tensor club_log_density(Tape& tape, const ClubNet& net, const Tensor& z_i, const Tensor& z_j,
                               const std::vector<int>& w) {
    if (z_i.shape() != z_j.shape() || z_i.ndim() != 2)
        throw DimensionError("club_log_density expects matching [V x d] latents");
    if (w.size() != z_i.shape()[0]) throw DimensionError("club_log_density class count mismatch");
    const size_t d = z_i.shape()[1];
    Tensor cond = tape.concat_cols(z_i, one_hot(w, net.n_classes));
    GaussianLatent q = net.forward(tape, cond);
    Tensor diff = tape.sub(z_j, q.mu);
    Tensor quad = tape.mul(tape.mul(diff, diff), tape.exp_(tape.scale(q.logvar, -1.0)));
    // -0.5*(ln 2pi + l + (z_j-mu)^2 e^{-l}) summed over dims
    Tensor per_dim = tape.scale(tape.add(q.logvar, quad), -0.5);
    Tensor row = tape.sum(per_dim, 1);
    const double c = -0.5 * std::log(2.0 * M_PI) * static_cast<double>(d);
    return tape.add_const(row, c);
}

// Monte Carlo vCLUB for one ordered user pair: class-weighted matched mean
// minus leave-one-out mismatched mean. Classes with a single sample
// contribute only their matched term.
inline Tensor vclub_pair(Tape& tape, const ClubNet& net, const Tensor& z_i, const Tensor& z_j,
                         const ClassPartition& part, const std::vector<int>& w) {
    if (part.batch_size == 0 || w.empty()) throw ContractError("vclub_pair on an empty batch");
    if (part.batch_size != z_i.shape()[0]) throw ContractError("vclub_pair partition/batch size mismatch");
    const double v = static_cast<double>(part.batch_size);

    // Matched term: sum_w (|V_w|/V) * mean_{v in V_w} log q(z_j^v | z_i^v, w)
    // collapses to the plain batch mean.
    Tensor matched = tape.mean(club_log_density(tape, net, z_i, z_j, w));

    // Mismatched rows: all ordered LOO pairs (v, v') within each class, with
    // per-row weight 1 / (V * (|V_w| - 1)).
    std::vector<size_t> src, dst;
    std::vector<double> weights;
    std::vector<int> pair_class;
    for (size_t g = 0; g < part.groups.size(); ++g) {
        const auto& idx = part.groups[g];
        if (idx.size() < 2) continue;
        const double wgt = 1.0 / (v * static_cast<double>(idx.size() - 1));
        for (const size_t a : idx)
            for (const size_t b : idx) {
                if (a == b) continue;
                src.push_back(a);
                dst.push_back(b);
                weights.push_back(wgt);
                pair_class.push_back(part.classes_present[g]);
            }
    }
    if (src.empty()) return matched;

    Tensor zi_rows = tape.gather_rows(z_i, src);
    Tensor zj_rows = tape.gather_rows(z_j, dst);
    Tensor rows = club_log_density(tape, net, zi_rows, zj_rows, pair_class);
    Tensor mismatched = tape.sum(tape.mul(rows, Tensor::from({weights.size()}, weights)));
    return tape.sub(matched, mismatched);
}

// Per-term loss values plus the on-tape weighted total.
struct LossBreakdown {
    std::vector<double> ce;               // per user
    std::vector<double> kl;               // per user
    std::vector<std::pair<int, int>> pair_ids;
    std::vector<double> vclub;            // per ordered pair, aligned with pair_ids
    double alpha = 0.0;
    double beta = 0.0;
    double total = 0.0;
    Tensor total_tensor;
};

// total = sum_i ce_i + beta * sum_i kl_i + alpha * sum_{i != j} vclub_ij.
// Zero weights skip their term entirely, so alpha = 0 assembles exactly the
// VIB objective and alpha = beta = 0 the plain cross-entropy sum.
inline LossBreakdown toib_loss(Tape& tape, const std::vector<Tensor>& ce_per_user,
                               const std::vector<Tensor>& kl_per_user,
                               const std::vector<std::pair<int, int>>& pair_ids,
                               const std::vector<Tensor>& vclub_per_pair, double alpha, double beta) {
    if (alpha < 0.0 || beta < 0.0) throw ContractError("loss weights must satisfy alpha, beta >= 0");
    if (ce_per_user.empty() || ce_per_user.size() != kl_per_user.size())
        throw ContractError("toib_loss needs matching per-user ce and kl terms");
    if (pair_ids.size() != vclub_per_pair.size()) throw ContractError("toib_loss pair id/value mismatch");

    LossBreakdown out;
    out.alpha = alpha;
    out.beta = beta;
    out.pair_ids = pair_ids;

    Tensor ce_sum = ce_per_user[0];
    out.ce.push_back(ce_per_user[0].value());
    for (size_t i = 1; i < ce_per_user.size(); ++i) {
        ce_sum = tape.add(ce_sum, ce_per_user[i]);
        out.ce.push_back(ce_per_user[i].value());
    }

    Tensor total = ce_sum;
    Tensor kl_sum;
    for (size_t i = 0; i < kl_per_user.size(); ++i) {
        out.kl.push_back(kl_per_user[i].value());
        kl_sum = i == 0 ? kl_per_user[0] : tape.add(kl_sum, kl_per_user[i]);
    }
    if (beta != 0.0) total = tape.add(total, tape.scale(kl_sum, beta));

    if (!vclub_per_pair.empty()) {
        Tensor vsum = vclub_per_pair[0];
        out.vclub.push_back(vclub_per_pair[0].value());
        for (size_t i = 1; i < vclub_per_pair.size(); ++i) {
            vsum = tape.add(vsum, vclub_per_pair[i]);
            out.vclub.push_back(vclub_per_pair[i].value());
        }
        if (alpha != 0.0) total = tape.add(total, tape.scale(vsum, alpha));
    }

    out.total_tensor = total;
    out.total = total.value();
    return out;
}

// The conventional VIB assembly: sufficiency plus weighted compression.
inline LossBreakdown vib_loss(Tape& tape, const std::vector<Tensor>& ce_per_user,
                              const std::vector<Tensor>& kl_per_user, double beta) {
    return toib_loss(tape, ce_per_user, kl_per_user, {}, {}, 0.0, beta);
}

}  // namespace toib
