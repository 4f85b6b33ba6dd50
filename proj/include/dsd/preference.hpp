// Copyright (c) 2026 dsd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "dsd/denoiser.hpp"
#include "dsd/schedule.hpp"

namespace dsd {

// Scaling knobs of the preference objective.
struct DSDConfig {
    double beta = 500.0;  // KL-regularization temperature
    WeightFn omega{1.0};

    void validate() const {
        if (beta <= 0.0) throw ConfigError("beta must be positive");
    }
};

// One training quadruple: conditioning plus winning/losing targets.
struct PreferenceSample {
    TextEmbedding c_p;
    ImageEmbedding image;  // encoder output of the reference image
    Tensor y0_w;
    Tensor y0_l;
};

struct PreferenceBatch {
    std::vector<PreferenceSample> items;
};

// Bradley-Terry negative log likelihood: -log sigmoid(r_w - r_l).
inline double bt_loss(double r_w, double r_l) {
    const double d = r_w - r_l;
    // softplus(-d), stable on both tails
    return std::max(-d, 0.0) + std::log1p(std::exp(-std::abs(d)));
}

// The four-term combination from predictions already in hand:
//   ||e_w - pred_w||^2 - ||e_w - ref_w||^2 - ||e_l - pred_l||^2 + ||e_l - ref_l||^2
inline Tensor dsd_inner_terms(const Tensor& eps_w, const Tensor& pred_w, const Tensor& ref_w,
                              const Tensor& eps_l, const Tensor& pred_l, const Tensor& ref_l) {
    Tensor align = sum_sq_diff(eps_w, pred_w);
    Tensor reg = sum_sq_diff(eps_w, ref_w);
    Tensor repel = sum_sq_diff(eps_l, pred_l);
    Tensor norm = sum_sq_diff(eps_l, ref_l);
    // grouped per branch so swapping branches negates the result bit-exactly
    return sub(sub(align, reg), sub(repel, norm));
}

// Inner argument of the preference objective; antisymmetric under swapping
// the winning and losing branch (same t, same noises).
inline Tensor dsd_inner(const ModelConfig& cfg, const DenoiserParams& dp,
                        const AdapterParams& theta, const AdapterParams& ref,
                        const PreferenceSample& sample, int t, const Tensor& eps_w,
                        const Tensor& eps_l, const NoiseSchedule& s, double gamma) {
    if (!sample.y0_w.same_shape(sample.y0_l))
        throw ShapeError("dsd_inner: winning/losing shapes differ");
    Tensor yt_w = forward_diffuse(sample.y0_w, t, eps_w, s);
    Tensor yt_l = forward_diffuse(sample.y0_l, t, eps_l, s);

    Tensor pred_w = denoise(yt_w, sample.c_p, sample.image, t, cfg, dp, theta, gamma);
    Tensor ref_w = denoise(yt_w, sample.c_p, sample.image, t, cfg, dp, ref, gamma);
    Tensor pred_l = denoise(yt_l, sample.c_p, sample.image, t, cfg, dp, theta, gamma);
    Tensor ref_l = denoise(yt_l, sample.c_p, sample.image, t, cfg, dp, ref, gamma);

    return dsd_inner_terms(eps_w, pred_w, ref_w, eps_l, pred_l, ref_l);
}

namespace detail {

// Draw order per sample: t, then eps_w, then eps_l. The losing branch reuses
// the winning branch's t; the noises are independent.
struct PreferenceDraw {
    int t;
    Tensor eps_w;
    Tensor eps_l;
};

inline PreferenceDraw draw_for_sample(Rng& rng, const PreferenceSample& sample,
                                      const NoiseSchedule& s) {
    PreferenceDraw d;
    d.t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.T)));
    d.eps_w = Tensor::randn(sample.y0_w.shape(), rng);
    d.eps_l = Tensor::randn(sample.y0_l.shape(), rng);
    return d;
}

inline Tensor preference_loss(const ModelConfig& cfg, const DenoiserParams& dp,
                              const AdapterParams& theta, const AdapterParams& ref,
                              const PreferenceBatch& batch, const NoiseSchedule& s,
                              const DSDConfig& dsd, std::uint64_t seed, double gamma) {
    dsd.validate();
    if (batch.items.empty()) throw ConfigError("preference loss: empty batch");
    Rng rng(mix64(seed, 0xd5d0));
    Tensor acc = Tensor::scalar(0.0);
    for (const auto& sample : batch.items) {
        auto draw = draw_for_sample(rng, sample, s);
        Tensor inner =
            dsd_inner(cfg, dp, theta, ref, sample, draw.t, draw.eps_w, draw.eps_l, s, gamma);
        const double k = -dsd.beta * static_cast<double>(s.T) * dsd.omega(s.snr(draw.t));
        Tensor term = scale(log_sigmoid(scale(inner, k)), -1.0);
        acc = add(acc, term);
    }
    return scale(acc, 1.0 / static_cast<double>(batch.items.size()));
}

}  // namespace detail

// Mean over the batch of -log sigmoid(-beta T omega(lambda_t) * inner term).
// Timesteps and noises are drawn from the seed; the same seed reproduces the
// loss bit-exactly.
inline Tensor dsd_loss(const PreferenceBatch& batch, const ModelConfig& cfg,
                       const DenoiserParams& dp, const AdapterParams& theta,
                       const AdapterParams& ref, const NoiseSchedule& s, const DSDConfig& dsd,
                       std::uint64_t seed, double gamma) {
    return detail::preference_loss(cfg, dp, theta, ref, batch, s, dsd, seed, gamma);
}

// Text-only baseline objective: the same computation with the image branch
// weight forced to zero.
inline Tensor dd_loss(const PreferenceBatch& batch, const ModelConfig& cfg,
                      const DenoiserParams& dp, const AdapterParams& theta,
                      const AdapterParams& ref, const NoiseSchedule& s, const DSDConfig& dsd,
                      std::uint64_t seed) {
    return detail::preference_loss(cfg, dp, theta, ref, batch, s, dsd, seed, 0.0);
}

// Monte-Carlo estimate of the implicit reward margin between the winning and
// losing target. Positive means the model prefers the winning target. Each
// draw applies one (t, eps) to both branches: the expectation is the same as
// with independent noises (the two branch terms are linear in expectation)
// and the difference estimator has less variance.
inline double implicit_reward_gap(const ModelConfig& cfg, const DenoiserParams& dp,
                                  const AdapterParams& theta, const AdapterParams& ref,
                                  const PreferenceSample& sample, const NoiseSchedule& s,
                                  const DSDConfig& dsd, int n_draws, std::uint64_t seed,
                                  double gamma) {
    dsd.validate();
    if (n_draws < 1) throw ConfigError("implicit_reward_gap: n_draws must be >= 1");
    Rng rng(mix64(seed, 0x96a7));
    double acc = 0.0;
    for (int i = 0; i < n_draws; ++i) {
        const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.T)));
        Tensor eps = Tensor::randn(sample.y0_w.shape(), rng);
        Tensor inner = dsd_inner(cfg, dp, theta, ref, sample, t, eps, eps, s, gamma);
        acc += -dsd.beta * static_cast<double>(s.T) * dsd.omega(s.snr(t)) * inner.value();
    }
    return acc / static_cast<double>(n_draws);
}

}  // namespace dsd
