#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "toib/errors.hpp"
#include "toib/nn.hpp"
#include "toib/objectives.hpp"
#include "toib/rng.hpp"
#include "toib/tensor.hpp"

namespace toib {

enum class PhaseAMode { mle, vclub_ascent };

inline const char* phase_a_mode_name(PhaseAMode m) { return m == PhaseAMode::mle ? "mle" : "vclub_ascent"; }

struct PairDiagnostics {
    std::vector<std::pair<int, int>> pair_ids;
    std::vector<double> matched_loglik;  // final per-pair matched log-likelihood
    std::vector<double> vclub;           // final per-pair vCLUB estimate
};

// One conditional-density estimator per ordered user pair (i, j), i != j,
// updated only in Phase-A on latents detached from the main tape.
class PairEstimatorBank {
public:
    PairEstimatorBank() = default;

    static PairEstimatorBank make(size_t n_users, size_t latent_dim, size_t n_classes,
                                  const std::vector<size_t>& hidden, PhaseAMode mode, size_t steps_m,
                                  double lr, Rng& rng) {
        PairEstimatorBank bank;
        bank.n_users_ = n_users;
        bank.mode_ = mode;
        bank.steps_m_ = steps_m;
        for (size_t i = 0; i < n_users; ++i)
            for (size_t j = 0; j < n_users; ++j) {
                if (i == j) continue;
                Estimator e;
                e.i = static_cast<int>(i);
                e.j = static_cast<int>(j);
                e.net = ClubNet::make(latent_dim, n_classes, hidden);
                init_params(e.net, rng);
                std::vector<Tensor> ps;
                e.net.collect_params(ps);
                AdamConfig cfg;
                cfg.lr = lr;
                e.opt = AdamState(std::move(ps), cfg);
                bank.estimators_.push_back(std::move(e));
            }
        return bank;
    }

    size_t n_users() const { return n_users_; }
    size_t pair_count() const { return estimators_.size(); }
    PhaseAMode mode() const { return mode_; }
    size_t steps_m() const { return steps_m_; }

    const ClubNet& net(int i, int j) const { return estimators_[pair_index(i, j)].net; }
    ClubNet& net(int i, int j) { return estimators_[pair_index(i, j)].net; }
    AdamState& opt(int i, int j) { return estimators_[pair_index(i, j)].opt; }

    // Total number of per-pair gradient updates performed so far; one train
    // step adds exactly steps_m * N * (N-1).
    uint64_t update_count() const { return update_count_; }
    void set_update_count(uint64_t c) { update_count_ = c; }

    // Runs M optimizer steps per ordered pair. Latents must be detached;
    // encoder and decoder parameters are never touched here. Returns the
    // post-update matched log-likelihood and vCLUB value per pair.
    PairDiagnostics phase_a_update(const std::vector<Tensor>& latents, const ClassPartition& part,
                                   const std::vector<int>& w) {
        if (latents.size() != n_users_) throw ContractError("phase_a_update latent count mismatch");
        if (part.groups.empty()) throw ContractError("phase_a_update on an empty partition");
        for (const auto& z : latents)
            if (z.grad_flows())
                throw ContractError("phase_a_update requires detached latents");

        for (size_t m = 0; m < steps_m_; ++m) {
            for (auto& est : estimators_) {
                Tape tape;
                Tensor objective;
                if (mode_ == PhaseAMode::mle) {
                    objective = tape.mean(
                        club_log_density(tape, est.net, latents[est.i], latents[est.j], w));
                } else {
                    objective = vclub_pair(tape, est.net, latents[est.i], latents[est.j], part, w);
                }
                // Gradient ascent: minimize the negated objective.
                tape.backward(tape.scale(objective, -1.0));
                est.opt.step();
                ++update_count_;
            }
        }

        PairDiagnostics diag;
        for (auto& est : estimators_) {
            Tape tape(false);
            const double ll =
                tape.mean(club_log_density(tape, est.net, latents[est.i], latents[est.j], w)).value();
            const double iv = vclub_pair(tape, est.net, latents[est.i], latents[est.j], part, w).value();
            if (!std::isfinite(ll) || !std::isfinite(iv))
                throw ContractError("non-finite Phase-A diagnostic for pair (" + std::to_string(est.i) +
                                    "," + std::to_string(est.j) + ")");
            diag.pair_ids.emplace_back(est.i, est.j);
            diag.matched_loglik.push_back(ll);
            diag.vclub.push_back(iv);
        }
        return diag;
    }

    void set_params_requires_grad(bool rg) {
        for (auto& est : estimators_) est.net.set_params_requires_grad(rg);
    }

    std::vector<std::pair<int, int>> pair_ids() const {
        std::vector<std::pair<int, int>> ids;
        for (const auto& est : estimators_) ids.emplace_back(est.i, est.j);
        return ids;
    }

    struct Estimator {
        int i = 0, j = 0;
        ClubNet net;
        AdamState opt;
    };

    std::vector<Estimator>& estimators() { return estimators_; }
    const std::vector<Estimator>& estimators() const { return estimators_; }

private:
    size_t pair_index(int i, int j) const {
        for (size_t k = 0; k < estimators_.size(); ++k)
            if (estimators_[k].i == i && estimators_[k].j == j) return k;
        throw ContractError("no estimator for pair (" + std::to_string(i) + "," + std::to_string(j) + ")");
    }

    size_t n_users_ = 0;
    PhaseAMode mode_ = PhaseAMode::mle;
    size_t steps_m_ = 0;
    uint64_t update_count_ = 0;
    std::vector<Estimator> estimators_;
};

// Exact MI of d independent bivariate-Gaussian coordinate pairs with
// per-dimension correlation rho: -(d/2) ln(1 - rho^2), in nats.
inline double gaussian_mi_oracle(double rho, size_t d) {
    if (!(std::abs(rho) < 1.0)) throw DomainError("gaussian_mi_oracle requires |rho| < 1");
    return -0.5 * static_cast<double>(d) * std::log(1.0 - rho * rho);
}

// Value the CLUB functional takes on the same Gaussian pair when q equals
// the true conditional: d * rho^2 / (1 - rho^2). This exceeds the MI for
// every rho != 0 (the bound is strict), so a converged estimator lands here
// rather than on the MI itself.
inline double gaussian_club_oracle(double rho, size_t d) {
    if (!(std::abs(rho) < 1.0)) throw DomainError("gaussian_club_oracle requires |rho| < 1");
    return static_cast<double>(d) * rho * rho / (1.0 - rho * rho);
}

struct CorrelatedPair {
    Tensor z_i;
    Tensor z_j;
};

// z_i ~ N(0, I); z_j = rho * z_i + sqrt(1 - rho^2) * eps per dimension.
inline CorrelatedPair sample_correlated_gaussians(double rho, size_t d, size_t n, Rng& rng) {
    if (!(std::abs(rho) < 1.0)) throw DomainError("sample_correlated_gaussians requires |rho| < 1");
    CorrelatedPair out;
    out.z_i = Tensor::zeros({n, d});
    out.z_j = Tensor::zeros({n, d});
    const double mix = std::sqrt(1.0 - rho * rho);
    for (size_t k = 0; k < n * d; ++k) {
        const double zi = rng.normal();
        out.z_i.values()[k] = zi;
        out.z_j.values()[k] = rho * zi + mix * rng.normal();
    }
    return out;
}

struct MiCheckOptions {
    double rho = 0.8;
    size_t d = 4;
    size_t train_steps = 3000;
    size_t batch = 128;
    double lr = 1e-3;
    size_t eval_batches = 50;
    size_t eval_batch = 256;
    uint64_t seed = 7;
    PhaseAMode mode = PhaseAMode::mle;
    std::vector<size_t> hidden{64};
};

struct MiCheckResult {
    double oracle = 0.0;       // true MI
    double club_value = 0.0;   // CLUB functional at the optimal q
    double estimate = 0.0;     // mean over eval batches
    double stderr_ = 0.0;
    std::vector<double> per_batch;
};

// Trains one estimator on correlated-Gaussian pairs (single conditioning
// class, so conditional MI equals plain MI) and evaluates the vCLUB value
// on fresh batches against the closed-form oracle.
inline MiCheckResult club_mi_check(const MiCheckOptions& opt) {
    Rng master(opt.seed);
    Rng init_rng = master.substream("init");
    Rng train_rng = master.substream("train");
    Rng eval_rng = master.substream("eval");

    ClubNet net = ClubNet::make(opt.d, 1, opt.hidden);
    init_params(net, init_rng);
    std::vector<Tensor> ps;
    net.collect_params(ps);
    AdamConfig acfg;
    acfg.lr = opt.lr;
    AdamState adam(std::move(ps), acfg);

    const std::vector<int> w_train(opt.batch, 1);
    const ClassPartition part_train = ClassPartition::from_labels(w_train, 1);
    for (size_t s = 0; s < opt.train_steps; ++s) {
        CorrelatedPair pair = sample_correlated_gaussians(opt.rho, opt.d, opt.batch, train_rng);
        Tape tape;
        Tensor objective =
            opt.mode == PhaseAMode::mle
                ? tape.mean(club_log_density(tape, net, pair.z_i, pair.z_j, w_train))
                : vclub_pair(tape, net, pair.z_i, pair.z_j, part_train, w_train);
        tape.backward(tape.scale(objective, -1.0));
        adam.step();
    }

    MiCheckResult res;
    res.oracle = gaussian_mi_oracle(opt.rho, opt.d);
    res.club_value = gaussian_club_oracle(opt.rho, opt.d);
    const std::vector<int> w_eval(opt.eval_batch, 1);
    const ClassPartition part_eval = ClassPartition::from_labels(w_eval, 1);
    for (size_t b = 0; b < opt.eval_batches; ++b) {
        CorrelatedPair pair = sample_correlated_gaussians(opt.rho, opt.d, opt.eval_batch, eval_rng);
        Tape tape(false);
        res.per_batch.push_back(vclub_pair(tape, net, pair.z_i, pair.z_j, part_eval, w_eval).value());
    }
    double sum = 0.0;
    for (const double x : res.per_batch) sum += x;
    res.estimate = sum / static_cast<double>(res.per_batch.size());
    double var = 0.0;
    for (const double x : res.per_batch) var += (x - res.estimate) * (x - res.estimate);
    var /= static_cast<double>(res.per_batch.size() - 1);
    res.stderr_ = std::sqrt(var / static_cast<double>(res.per_batch.size()));
    return res;
}

}  // namespace toib
