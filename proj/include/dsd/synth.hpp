// Copyright (c) 2026 dsd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dsd/dataset.hpp"
#include "dsd/encoders.hpp"
#include "dsd/rng.hpp"
#include "dsd/tensor.hpp"

namespace dsd {

// Procedural scene generator. A scene is a solid background plus a signed
// checkerboard subject block in one quadrant. Subject colors come in
// antipodal pairs (cb = -ca), so a subject patch sums to zero against any
// solid color: background scoring never sees the subject, and a
// parity-matched checkerboard anchor never sees the background. Subject
// identity is an angle in the plane orthogonal to (1,1,1); the component
// along (1,1,1) is fixed, which keeps every subject equally visible to the
// position anchors while staying distinguishable from other subjects.
//
// Instructions change one attribute (background color or subject position).
// Each instance carries one compliant target, one identity-broken target
// (same edit, different subject) and one instruction-ignoring target (the
// unchanged reference).
struct SynthConfig {
    int height = 8;
    int width = 8;
    int channels = 3;

    double bg_level = 0.3;       // solid background magnitude
    double subject_level = 0.9;   // subject color magnitude
    double subject_axis = 0.6;    // component along (1,1,1)/sqrt(3)
    double min_subject_gap = 1.0; // minimum identity angle distance (radians)

    int subject_size() const { return height / 2; }

    // vocabulary layout: one token per attribute value; the token id alone
    // determines the edit (color ids and position ids do not overlap)
    static constexpr int n_colors = 3;
    static constexpr int color_base = 0;
    static constexpr int n_positions = 4;
    static constexpr int position_base = color_base + n_colors;
    static constexpr int tokens_used = position_base + n_positions;

    std::array<std::array<double, 3>, n_colors> bg_palette() const {
        return {{{bg_level, 0.0, 0.0}, {0.0, bg_level, 0.0}, {0.0, 0.0, bg_level}}};
    }

    // subject color for identity angle phi
    std::array<double, 3> subject_color(double phi) const {
        // orthonormal basis of the plane orthogonal to (1,1,1)
        static constexpr double v1[3] = {0.7071067811865475, -0.7071067811865475, 0.0};
        static constexpr double v2[3] = {0.4082482904638630, 0.4082482904638630,
                                         -0.8164965809277260};
        const double axis = subject_axis / std::sqrt(3.0);
        const double planar = std::sqrt(std::max(0.0, 1.0 - subject_axis * subject_axis));
        std::array<double, 3> c{};
        for (int i = 0; i < 3; ++i)
            c[static_cast<std::size_t>(i)] =
                subject_level *
                (axis + planar * (std::cos(phi) * v1[i] + std::sin(phi) * v2[i]));
        return c;
    }

    // top-left corners of the four quadrant positions
    std::array<std::pair<int, int>, n_positions> positions() const {
        const int s = subject_size();
        return {{{0, 0}, {0, width - s}, {height - s, 0}, {height - s, width - s}}};
    }

    void validate() const {
        if (channels != 3) throw ConfigError("synth scenes are RGB");
        if (height < 4 || width < 4 || height % 2 || width % 2)
            throw ConfigError("synth scenes need even height/width >= 4");
        if (!(subject_axis > 0.0 && subject_axis < 1.0))
            throw ConfigError("subject_axis must lie in (0, 1)");
    }
};

struct SynthScene {
    int bg_color = 0;           // index into bg_palette
    int position = 0;           // index into positions
    double subject_phi = 0.0;   // identity angle
};

inline Tensor render_scene(const SynthConfig& cfg, const SynthScene& sc) {
    cfg.validate();
    const auto bg = cfg.bg_palette()[static_cast<std::size_t>(sc.bg_color)];
    const auto ca = cfg.subject_color(sc.subject_phi);
    const auto [py, px] = cfg.positions()[static_cast<std::size_t>(sc.position)];
    const int S = cfg.subject_size();

    std::vector<double> img(static_cast<std::size_t>(cfg.height * cfg.width * cfg.channels));
    for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) {
            const bool inside = y >= py && y < py + S && x >= px && x < px + S;
            // absolute pixel parity so moved subjects stay phase-aligned
            const double sign = ((y + x) % 2 == 0) ? 1.0 : -1.0;
            for (int c = 0; c < cfg.channels; ++c) {
                const double v = inside ? sign * ca[static_cast<std::size_t>(c)]
                                        : bg[static_cast<std::size_t>(c)];
                img[static_cast<std::size_t>((y * cfg.width + x) * cfg.channels + c)] = v;
            }
        }
    return Tensor(std::move(img),
                  {static_cast<std::size_t>(cfg.height), static_cast<std::size_t>(cfg.width),
                   static_cast<std::size_t>(cfg.channels)});
}

struct SynthInstance {
    std::vector<int> prompt_tokens;
    Tensor reference_image;
    Tensor compliant;
    Tensor identity_broken;
    Tensor instruction_ignoring;
};

inline std::vector<SynthInstance> synth_triplets(int n, const SynthConfig& cfg,
                                                 std::uint64_t seed) {
    if (n < 1) throw ConfigError("synth_triplets: n must be >= 1");
    cfg.validate();
    constexpr double kTau = 6.283185307179586;
    Rng rng(mix64(seed, 0x5e17));
    std::vector<SynthInstance> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        SynthScene ref;
        ref.bg_color = static_cast<int>(rng.below(SynthConfig::n_colors));
        ref.position = static_cast<int>(rng.below(SynthConfig::n_positions));
        ref.subject_phi = kTau * rng.uniform01();

        const bool edit_background = rng.below(2) == 0;
        SynthScene target = ref;
        std::vector<int> prompt;
        if (edit_background) {
            int next = static_cast<int>(rng.below(SynthConfig::n_colors - 1));
            if (next >= ref.bg_color) ++next;
            target.bg_color = next;
            prompt = {SynthConfig::color_base + next};
        } else {
            int next = static_cast<int>(rng.below(SynthConfig::n_positions - 1));
            if (next >= ref.position) ++next;
            target.position = next;
            prompt = {SynthConfig::position_base + next};
        }

        // a different subject undergoing the same edit
        SynthScene broken = target;
        const double gap = cfg.min_subject_gap;
        broken.subject_phi =
            std::fmod(ref.subject_phi + gap + (kTau - 2.0 * gap) * rng.uniform01(), kTau);

        SynthInstance inst;
        inst.prompt_tokens = std::move(prompt);
        inst.reference_image = render_scene(cfg, ref);
        inst.compliant = render_scene(cfg, target);
        inst.identity_broken = render_scene(cfg, broken);
        inst.instruction_ignoring = render_scene(cfg, ref);
        out.push_back(std::move(inst));
    }
    return out;
}

// Canonical attribute scenes used to anchor the text vocabulary.
inline Tensor canonical_color_scene(const SynthConfig& cfg, int color) {
    std::vector<double> img(static_cast<std::size_t>(cfg.height * cfg.width * cfg.channels));
    const auto col = cfg.bg_palette()[static_cast<std::size_t>(color)];
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = col[i % 3];
    return Tensor(std::move(img),
                  {static_cast<std::size_t>(cfg.height), static_cast<std::size_t>(cfg.width),
                   static_cast<std::size_t>(cfg.channels)});
}

// "Subject sits at p" reads as "the background has a hole at p": bright fill
// outside the quadrant, negative fill inside. Subjects themselves are
// invisible to solid probes (their patches are zero-sum against solids), so
// position anchors key on where the background is not.
inline Tensor canonical_position_scene(const SynthConfig& cfg, int position) {
    const auto [py, px] = cfg.positions()[static_cast<std::size_t>(position)];
    const int S = cfg.subject_size();
    std::vector<double> img(static_cast<std::size_t>(cfg.height * cfg.width * cfg.channels), 1.0);
    for (int y = py; y < py + S; ++y)
        for (int x = px; x < px + S; ++x)
            for (int c = 0; c < 3; ++c)
                img[static_cast<std::size_t>((y * cfg.width + x) * 3 + c)] = -1.0;
    return Tensor(std::move(img),
                  {static_cast<std::size_t>(cfg.height), static_cast<std::size_t>(cfg.width),
                   static_cast<std::size_t>(cfg.channels)});
}

// Text encoder whose attribute tokens are anchored to the image-embedding
// directions of canonical attribute scenes: color tokens point at solid
// backgrounds, position tokens at the background-hole scene of that quadrant.
// This gives the frozen random featurizers the coarse text-image alignment
// that scoring relies on; all other rows stay random.
inline TextEncoder make_aligned_text_encoder(int vocab, int dim, std::uint64_t seed,
                                             const ImageEncoder& img_enc,
                                             const SynthConfig& synth) {
    if (vocab < SynthConfig::tokens_used)
        throw ConfigError("vocab too small for the synth vocabulary layout");
    if (dim != img_enc.d_clip())
        throw ConfigError("aligned text encoder needs dim == image d_clip");
    TextEncoder enc(vocab, dim, seed);

    for (int c = 0; c < SynthConfig::n_colors; ++c)
        enc.anchor_row(SynthConfig::color_base + c,
                       pooled(img_enc.encode(canonical_color_scene(synth, c)).tokens));
    for (int p = 0; p < SynthConfig::n_positions; ++p)
        enc.anchor_row(SynthConfig::position_base + p,
                       pooled(img_enc.encode(canonical_position_scene(synth, p)).tokens));
    return enc;
}

// Candidates of one instance, ids instance*3 + {0: compliant, 1: broken,
// 2: ignoring}; the instance index doubles as the (subject, instruction)
// group key.
inline std::vector<Candidate> candidates_of(const SynthInstance& inst, std::int64_t instance) {
    std::vector<Candidate> out(3);
    const Tensor* targets[3] = {&inst.compliant, &inst.identity_broken,
                                &inst.instruction_ignoring};
    for (int k = 0; k < 3; ++k) {
        out[static_cast<std::size_t>(k)].id = instance * 3 + k;
        out[static_cast<std::size_t>(k)].image = *targets[k];
        out[static_cast<std::size_t>(k)].prompt_tokens = inst.prompt_tokens;
        out[static_cast<std::size_t>(k)].reference_image = inst.reference_image;
    }
    return out;
}

enum class GroupMode { per_group, global };

inline std::string to_string(GroupMode m) {
    return m == GroupMode::per_group ? "per_group" : "global";
}

inline GroupMode group_mode_from_string(const std::string& s) {
    if (s == "per_group") return GroupMode::per_group;
    if (s == "global") return GroupMode::global;
    throw ConfigError("unknown group mode '" + s + "'");
}

struct PipelineResult {
    std::vector<ScoredCandidate> scored;  // rank order within each group
    std::vector<PreferencePairRecord> pairs;
};

// score -> rank -> pair, grouped per (subject, instruction) instance or run
// globally over the whole pool.
inline PipelineResult run_dataset_pipeline(const std::vector<SynthInstance>& instances,
                                           const TextEncoder& text_enc,
                                           const ImageEncoder& img_enc, double phi,
                                           int max_per_winner, std::uint64_t pair_seed,
                                           GroupMode mode = GroupMode::per_group) {
    PipelineResult out;
    if (mode == GroupMode::global) {
        std::vector<ScoredCandidate> scored;
        for (std::size_t i = 0; i < instances.size(); ++i)
            for (const Candidate& c : candidates_of(instances[i], static_cast<std::int64_t>(i)))
                scored.push_back(score_candidate(c, text_enc, img_enc, phi));
        out.scored = rank_levels(std::move(scored));
        out.pairs = make_pairs(out.scored, max_per_winner, pair_seed);
        return out;
    }
    for (std::size_t i = 0; i < instances.size(); ++i) {
        std::vector<ScoredCandidate> scored;
        for (const Candidate& c : candidates_of(instances[i], static_cast<std::int64_t>(i)))
            scored.push_back(score_candidate(c, text_enc, img_enc, phi));
        scored = rank_levels(std::move(scored));
        auto pairs = make_pairs(scored, max_per_winner, mix64(pair_seed, i));
        out.scored.insert(out.scored.end(), scored.begin(), scored.end());
        out.pairs.insert(out.pairs.end(), pairs.begin(), pairs.end());
    }
    return out;
}

}  // namespace dsd
