// Copyright (c) 2026 dsd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "dsd/checkpoint.hpp"
#include "dsd/train.hpp"

namespace dsd {

struct EvalReport {
    double text_align = 0.0;     // mean prompt-vs-output similarity
    double subject_align = 0.0;  // mean output-vs-reference similarity
    double pref_accuracy = 0.0;  // implicit-reward sign agreement, ties at 0.5

    std::string to_text() const {
        std::string out;
        out += "text_align=" + detail::fmt_double(text_align) + "\n";
        out += "subject_align=" + detail::fmt_double(subject_align) + "\n";
        out += "pref_accuracy=" + detail::fmt_double(pref_accuracy) + "\n";
        return out;
    }
};

// Everything needed to run the conditioned model outside the training loop.
struct ModelBundle {
    TrainConfig cfg;
    ManifestConfig data_cfg;
    NoiseSchedule sched;
    DenoiserParams dp;
    AdapterParams adapter;
    AdapterParams reference;
    TextEncoder text_enc;
    ImageEncoder img_enc;

    static ModelBundle from_state(const TrainState& st) {
        return ModelBundle{st.cfg,
                           st.data_cfg,
                           st.cfg.schedule(),
                           st.denoiser(),
                           st.adapter(),
                           reference_adapter(st.cfg),
                           text_encoder_from(st.data_cfg),
                           image_encoder_from(st.data_cfg)};
    }
};

// One DDIM generation conditioned on (prompt, reference image) at the given
// fusion weight; bit-deterministic in the seed.
inline Tensor generate(const ModelBundle& mb, const TextEmbedding& c_p,
                       const ImageEmbedding& image, double gamma, std::uint64_t seed) {
    auto predict = [&](const Tensor& xt, int t) {
        return denoise(xt, c_p, image, t, mb.cfg.model, mb.dp, mb.adapter, gamma);
    };
    return ddim_sample(predict, mb.cfg.model.image_shape(), mb.sched, seed);
}

// Metrics over a set of manifest pairs: per record, generate one sample and
// score it against prompt and reference; preference accuracy comes from the
// sign of the implicit reward gap (n_draws Monte-Carlo draws per pair).
inline EvalReport evaluate(const ModelBundle& mb, const Manifest& manifest,
                           const std::string& base_dir,
                           const std::vector<std::size_t>& pair_indices, int n_draws,
                           std::uint64_t seed) {
    if (pair_indices.empty()) throw ConfigError("evaluate: no pairs selected");
    const auto samples = load_pair_samples(manifest, base_dir, mb.text_enc, mb.img_enc);

    EvalReport rep;
    for (std::size_t k = 0; k < pair_indices.size(); ++k) {
        const std::size_t idx = pair_indices[k];
        if (idx >= samples.size()) throw IndexError("evaluate: pair index out of range");
        const PreferenceSample& smp = samples[idx];

        Tensor out = generate(mb, smp.c_p, smp.image, mb.cfg.gamma_train,
                              mix64(seed, 0x9e4e, idx));
        const auto po = pooled(mb.img_enc.encode(out).tokens);

        double s_text = 0.0;
        const auto& prompt = manifest.pairs[idx].prompt_tokens;
        for (int tok : prompt) s_text += cosine(mb.text_enc.row(tok), po);
        rep.text_align += s_text / static_cast<double>(prompt.size());

        const auto pr = pooled(smp.image.tokens);
        rep.subject_align += cosine(po, pr);

        const double gap =
            implicit_reward_gap(mb.cfg.model, mb.dp, mb.adapter, mb.reference, smp, mb.sched,
                                mb.cfg.dsd, n_draws, mix64(seed, 0x9a9, idx),
                                mb.cfg.gamma_train);
        rep.pref_accuracy += gap > 0.0 ? 1.0 : (gap == 0.0 ? 0.5 : 0.0);
    }
    const double n = static_cast<double>(pair_indices.size());
    rep.text_align /= n;
    rep.subject_align /= n;
    rep.pref_accuracy /= n;
    return rep;
}

// Fraction of pairs whose implicit reward gap is positive (ties 0.5); the
// cheap preference metric without generation.
inline double preference_accuracy(const ModelBundle& mb,
                                  const std::vector<PreferenceSample>& samples,
                                  const std::vector<std::size_t>& pair_indices, int n_draws,
                                  std::uint64_t seed) {
    if (pair_indices.empty()) throw ConfigError("preference_accuracy: no pairs selected");
    double acc = 0.0;
    for (std::size_t idx : pair_indices) {
        const double gap =
            implicit_reward_gap(mb.cfg.model, mb.dp, mb.adapter, mb.reference, samples.at(idx),
                                mb.sched, mb.cfg.dsd, n_draws, mix64(seed, 0x9a9, idx),
                                mb.cfg.gamma_train);
        acc += gap > 0.0 ? 1.0 : (gap == 0.0 ? 0.5 : 0.0);
    }
    return acc / static_cast<double>(pair_indices.size());
}

// gamma sweep with a shared noise seed; outputs ordered by gamma.
inline std::vector<std::pair<double, Tensor>> interpolate(const ModelBundle& mb,
                                                          const TextEmbedding& c_p,
                                                          const ImageEmbedding& image,
                                                          std::vector<double> gammas,
                                                          std::uint64_t seed) {
    if (gammas.empty()) throw ConfigError("interpolate: gamma list is empty");
    for (double g : gammas)
        if (!(g >= 0.0)) throw ConfigError("interpolate: gammas must be >= 0");
    std::sort(gammas.begin(), gammas.end());
    std::vector<std::pair<double, Tensor>> out;
    out.reserve(gammas.size());
    for (double g : gammas) out.emplace_back(g, generate(mb, c_p, image, g, seed));
    return out;
}

}  // namespace dsd
