#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "toib/errors.hpp"
#include "toib/rng.hpp"
#include "toib/tensor.hpp"

namespace toib {

enum class ChannelKind { awgn, rayleigh };

inline const char* channel_kind_name(ChannelKind k) { return k == ChannelKind::awgn ? "awgn" : "rayleigh"; }

// Per-user transmit powers summing to the total budget.
struct PowerAllocation {
    std::vector<double> p;
    double pmax = 1.0;

    static PowerAllocation equal(size_t n_users, double pmax) {
        if (n_users == 0) throw ContractError("power allocation needs at least one user");
        if (!(pmax > 0.0)) throw ContractError("pmax must be positive");
        PowerAllocation a;
        a.pmax = pmax;
        a.p.assign(n_users, pmax / static_cast<double>(n_users));
        return a;
    }

    void validate() const {
        double sum = 0.0;
        for (const double pi : p) {
            if (pi < 0.0) throw ContractError("negative per-user power");
            sum += pi;
        }
        if (std::abs(sum - pmax) > 1e-12 * std::max(1.0, pmax))
            throw ContractError("per-user powers sum to " + std::to_string(sum) + ", expected " +
                                std::to_string(pmax));
    }
};

struct SnrSpec {
    double db = 5.0;

    double linear() const { return std::pow(10.0, db / 10.0); }
};

// One channel draw for one user: gain, per-dimension noise variance, and
// whether the receiver divides by the known gain.
struct ChannelRealization {
    ChannelKind kind = ChannelKind::awgn;
    double sigma2 = 0.0;
    double gain = 1.0;
    bool equalize = true;
};

// Rayleigh scale with E[h^2] = 1.
inline constexpr double kRayleighScale = 0.70710678118654752440;  // 1/sqrt(2)

// Scales the batch so the mean squared row norm is exactly 1. The scale is
// on the tape, so gradients flow through the normalization.
inline Tensor power_normalize(Tape& tape, const Tensor& z) {
    if (z.ndim() != 2 || z.shape()[0] == 0) throw ContractError("power_normalize expects a nonempty [V x d] batch");
    const double v = static_cast<double>(z.shape()[0]);
    double ss = 0.0;
    for (const double x : z.values()) ss += x * x;
    if (ss == 0.0) throw DegenerateInputError("power_normalize on an all-zero batch");
    Tensor sq = tape.mul(z, z);
    Tensor msn = tape.scale(tape.sum(sq), 1.0 / v);  // mean squared norm per sample
    Tensor g = tape.pow_const(msn, -0.5);
    return tape.mul(g, z);
}

// s = sum_i sqrt(p_i) * z_i.
inline Tensor superpose(Tape& tape, const std::vector<Tensor>& latents, const PowerAllocation& alloc) {
    if (latents.empty() || latents.size() != alloc.p.size())
        throw DimensionError("superpose needs one latent per allocated power (" +
                             std::to_string(latents.size()) + " vs " + std::to_string(alloc.p.size()) + ")");
    for (const auto& z : latents)
        if (z.shape() != latents.front().shape())
            throw DimensionError("superpose latent shape mismatch " + shape_str(z.shape()) + " vs " +
                                 shape_str(latents.front().shape()));
    alloc.validate();
    Tensor s = tape.scale(latents[0], std::sqrt(alloc.p[0]));
    for (size_t i = 1; i < latents.size(); ++i) s = tape.add(s, tape.scale(latents[i], std::sqrt(alloc.p[i])));
    return s;
}

// Per-dimension noise variance that hits the target SNR for the given batch:
// sigma^2 = (mean_v ||s||^2 / d) / snr_linear. Fading power averages to 1 for
// both channel kinds, so the same calibration serves awgn and rayleigh.
inline double calibrate_noise(const Tensor& s_batch, const SnrSpec& snr) {
    if (s_batch.ndim() != 2 || s_batch.shape()[0] == 0)
        throw ContractError("calibrate_noise expects a nonempty [V x d] batch");
    double ss = 0.0;
    for (const double x : s_batch.values()) ss += x * x;
    if (ss == 0.0) throw DegenerateInputError("calibrate_noise on a zero-power batch");
    const double per_dim_power = ss / static_cast<double>(s_batch.numel());
    return per_dim_power / snr.linear();
}

// Applies a fixed gain and a fixed noise tensor: y = (h*s + n) / h when
// equalized, else h*s + n. Deterministic, for use where the channel draws
// are made by the caller.
inline Tensor apply_channel(Tape& tape, const Tensor& s, double gain, const Tensor& noise, bool equalize) {
    if (noise.shape() != s.shape())
        throw DimensionError("apply_channel noise shape " + shape_str(noise.shape()) + " vs signal " +
                             shape_str(s.shape()));
    if (!(gain > 0.0)) throw ContractError("channel gain must be positive");
    Tensor y = tape.add(tape.scale(s, gain), noise);
    if (equalize && gain != 1.0) y = tape.scale(y, 1.0 / gain);
    return y;
}

// Draws the fading gain (fresh per call for rayleigh) and elementwise
// Gaussian noise, then applies the channel. Gradients flow through s only.
inline Tensor transmit(Tape& tape, const Tensor& s, ChannelRealization& real, Rng& rng) {
    if (real.sigma2 < 0.0) throw ContractError("noise variance must be nonnegative");
    if (real.kind == ChannelKind::rayleigh)
        real.gain = rng.rayleigh(kRayleighScale);
    else
        real.gain = 1.0;
    Tensor noise = Tensor::zeros(s.shape());
    const double sd = std::sqrt(real.sigma2);
    for (double& x : noise.values()) x = sd * rng.normal();
    return apply_channel(tape, s, real.gain, noise, real.equalize);
}

}  // namespace toib
