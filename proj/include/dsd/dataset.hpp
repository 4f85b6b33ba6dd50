// Copyright (c) 2026 dsd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "dsd/encoders.hpp"
#include "dsd/tensor.hpp"

namespace dsd {

struct Candidate {
    std::int64_t id = 0;
    Tensor image;
    std::vector<int> prompt_tokens;
    Tensor reference_image;
};

struct ScoredCandidate {
    Candidate candidate;
    double s_text = 0.0;    // instruction alignment, in [-1, 1]
    double s_visual = 0.0;  // subject alignment, in [-1, 1]
    double q = 0.0;         // phi * s_text + (1 - phi) * s_visual
    int level = 0;          // 1..5 once ranked; 0 = unset
};

struct PreferencePairRecord {
    std::vector<int> prompt_tokens;
    Tensor reference_image;
    std::int64_t winner_id = 0;
    std::int64_t loser_id = 0;
};

// Composite quality score: text alignment is the mean cosine between each
// prompt-token row and the pooled candidate embedding; visual alignment is
// the cosine of pooled candidate vs pooled reference embedding.
inline ScoredCandidate score_candidate(const Candidate& c, const TextEncoder& text_enc,
                                       const ImageEncoder& img_enc, double phi) {
    if (!(phi >= 0.0 && phi <= 1.0)) throw ConfigError("phi must lie in [0, 1]");

    const std::vector<double> cand = pooled(img_enc.encode(c.image).tokens);
    const std::vector<double> ref = pooled(img_enc.encode(c.reference_image).tokens);

    double s_text = 0.0;
    if (c.prompt_tokens.empty()) throw ConfigError("score_candidate: empty prompt");
    for (int tok : c.prompt_tokens) s_text += cosine(text_enc.row(tok), cand);
    s_text /= static_cast<double>(c.prompt_tokens.size());

    ScoredCandidate out;
    out.candidate = c;
    out.s_text = s_text;
    out.s_visual = cosine(cand, ref);
    out.q = phi * out.s_text + (1.0 - phi) * out.s_visual;
    return out;
}

// Sort descending by q (ties by ascending id) and split into K contiguous
// buckets of ceil(n/K): the first bucket is level K (best), the last level 1.
// Returns the candidates in rank order with levels assigned.
inline std::vector<ScoredCandidate> rank_levels(std::vector<ScoredCandidate> scored, int K = 5) {
    if (scored.empty()) throw ConfigError("rank_levels: empty list");
    if (K < 1) throw ConfigError("rank_levels: K must be >= 1");
    std::sort(scored.begin(), scored.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
        if (a.q != b.q) return a.q > b.q;
        return a.candidate.id < b.candidate.id;
    });
    const std::size_t bucket = (scored.size() + static_cast<std::size_t>(K) - 1) /
                               static_cast<std::size_t>(K);
    for (std::size_t i = 0; i < scored.size(); ++i)
        scored[i].level = K - static_cast<int>(i / bucket);
    return scored;
}

// Winner (level 4-5) x sampled losers (level 1-3), at most max_per_winner
// losers per winner, sampled without replacement from the loser pool. Pairs
// that do not satisfy winner.q > loser.q are dropped. Deterministic in seed.
inline std::vector<PreferencePairRecord> make_pairs(const std::vector<ScoredCandidate>& scored,
                                                    int max_per_winner, std::uint64_t seed) {
    if (max_per_winner < 1) throw ConfigError("make_pairs: cap must be >= 1");
    std::vector<const ScoredCandidate*> winners, losers;
    for (const auto& sc : scored) {
        if (sc.level >= 4)
            winners.push_back(&sc);
        else if (sc.level >= 1)
            losers.push_back(&sc);
        else
            throw ConfigError("make_pairs: candidate has no level; run rank_levels first");
    }
    if (winners.empty() || losers.empty())
        throw EmptyPoolError("make_pairs: need at least one winner and one loser");

    // visit winners in rank order (descending q, ascending id)
    auto rank_less = [](const ScoredCandidate* a, const ScoredCandidate* b) {
        if (a->q != b->q) return a->q > b->q;
        return a->candidate.id < b->candidate.id;
    };
    std::sort(winners.begin(), winners.end(), rank_less);
    std::sort(losers.begin(), losers.end(), rank_less);

    Rng rng(mix64(seed, 0x9a12));
    std::vector<PreferencePairRecord> out;
    std::vector<std::size_t> idx(losers.size());
    for (const ScoredCandidate* w : winners) {
        std::iota(idx.begin(), idx.end(), 0);
        const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(max_per_winner),
                                                    idx.size());
        for (std::size_t j = 0; j < k; ++j) {
            // partial Fisher-Yates: pick the j-th sampled loser
            const std::size_t pick = j + rng.below(idx.size() - j);
            std::swap(idx[j], idx[pick]);
            const ScoredCandidate* l = losers[idx[j]];
            if (!(w->q > l->q)) continue;
            PreferencePairRecord rec;
            rec.prompt_tokens = w->candidate.prompt_tokens;
            rec.reference_image = w->candidate.reference_image;
            rec.winner_id = w->candidate.id;
            rec.loser_id = l->candidate.id;
            out.push_back(std::move(rec));
        }
    }
    return out;
}

}  // namespace dsd
