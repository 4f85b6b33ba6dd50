// Copyright (c) 2026 dsd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "dsd/errors.hpp"
#include "dsd/rng.hpp"
#include "dsd/tensor.hpp"

namespace dsd {

// One row per instruction token, rows unit-norm.
struct TextEmbedding {
    Tensor tokens;  // [n_p, d]

    std::size_t count() const { return tokens.shape()[0]; }
    std::size_t dim() const { return tokens.shape()[1]; }
};

// Encoder output before any trainable projection.
struct ImageEmbedding {
    Tensor tokens;  // [n_i, d_clip]

    std::size_t count() const { return tokens.shape()[0]; }
    std::size_t dim() const { return tokens.shape()[1]; }
};

// Frozen text featurizer: a fixed seeded lookup table of unit-norm rows.
// Rows can be re-anchored (still frozen afterwards) so a dataset generator
// may pin attribute tokens to meaningful directions in embedding space.
class TextEncoder {
public:
    TextEncoder(int vocab, int dim, std::uint64_t seed)
        : vocab_(vocab), dim_(dim), seed_(seed) {
        if (vocab < 1 || dim < 1) throw ConfigError("text encoder needs vocab >= 1, dim >= 1");
        table_.resize(static_cast<std::size_t>(vocab));
        for (int tok = 0; tok < vocab; ++tok) {
            Rng rng(mix64(seed, 0x7e87u, static_cast<std::uint64_t>(tok)));
            std::vector<double> row(static_cast<std::size_t>(dim));
            for (double& v : row) v = rng.normal();
            table_[static_cast<std::size_t>(tok)] = normalized(std::move(row));
        }
    }

    int vocab() const { return vocab_; }
    int dim() const { return dim_; }
    std::uint64_t seed() const { return seed_; }

    // Replace one row; the row is re-normalized.
    void anchor_row(int token, const std::vector<double>& row) {
        check_token(token);
        if (row.size() != static_cast<std::size_t>(dim_))
            throw ShapeError("anchor_row: dimension mismatch");
        table_[static_cast<std::size_t>(token)] = normalized(row);
    }

    const std::vector<double>& row(int token) const {
        check_token(token);
        return table_[static_cast<std::size_t>(token)];
    }

    TextEmbedding encode(const std::vector<int>& prompt) const {
        if (prompt.empty()) throw ConfigError("encode: empty prompt");
        std::vector<double> data;
        data.reserve(prompt.size() * static_cast<std::size_t>(dim_));
        for (int tok : prompt) {
            const auto& r = row(tok);
            data.insert(data.end(), r.begin(), r.end());
        }
        return TextEmbedding{
            Tensor(std::move(data), {prompt.size(), static_cast<std::size_t>(dim_)})};
    }

private:
    void check_token(int token) const {
        if (token < 0 || token >= vocab_)
            throw VocabError("token id " + std::to_string(token) + " outside vocab 0.." +
                             std::to_string(vocab_ - 1));
    }

    static std::vector<double> normalized(std::vector<double> row) {
        double n2 = 0.0;
        for (double v : row) n2 += v * v;
        const double n = std::sqrt(n2);
        if (n == 0.0) throw DegenerateEmbeddingError("text row has zero norm");
        for (double& v : row) v /= n;
        return row;
    }

    int vocab_;
    int dim_;
    std::uint64_t seed_;
    std::vector<std::vector<double>> table_;
};

// Frozen image featurizer. Non-overlapping patches are flattened and sent
// through a fixed seeded random linear map, structured per patch as two
// orthogonal pieces:
//   - the checkerboard harmonic of the patch (C numbers, one per channel)
//     goes through one projection shared by every grid position, so
//     alternating-pattern content keeps the same embedding wherever it sits;
//   - the residual (everything else, solid fills included) goes through a
//     per-position projection, so layout stays visible to pooled embeddings.
class ImageEncoder {
public:
    ImageEncoder(int patch, int d_clip, std::uint64_t seed)
        : patch_(patch), d_clip_(d_clip), seed_(seed) {
        if (patch < 1 || d_clip < 1) throw ConfigError("image encoder needs patch, d_clip >= 1");
    }

    int patch() const { return patch_; }
    int d_clip() const { return d_clip_; }
    std::uint64_t seed() const { return seed_; }

    // img: [H, W, C] with H and W divisible by the patch size.
    ImageEmbedding encode(const Tensor& img) const {
        if (img.shape().size() != 3) throw ShapeError("encode: image must be rank-3 [H,W,C]");
        const std::size_t H = img.shape()[0], W = img.shape()[1], C = img.shape()[2];
        const std::size_t P = static_cast<std::size_t>(patch_);
        if (H % P != 0 || W % P != 0)
            throw ShapeError("encode: H and W must be divisible by patch size");
        const std::size_t gh = H / P, gw = W / P;
        const std::size_t in_dim = P * P * C;
        const std::size_t out_dim = static_cast<std::size_t>(d_clip_);
        const double n_pix = static_cast<double>(P * P);

        const auto& A = shared_projection(C);
        std::vector<double> out(gh * gw * out_dim, 0.0);
        std::vector<double> flat(in_dim);
        std::vector<double> checker(C);
        for (std::size_t gy = 0; gy < gh; ++gy)
            for (std::size_t gx = 0; gx < gw; ++gx) {
                std::size_t k = 0;
                for (std::size_t py = 0; py < P; ++py)
                    for (std::size_t px = 0; px < P; ++px)
                        for (std::size_t c = 0; c < C; ++c)
                            flat[k++] = img.data()[((gy * P + py) * W + (gx * P + px)) * C + c];

                // checker harmonic per channel, using absolute pixel parity
                std::fill(checker.begin(), checker.end(), 0.0);
                k = 0;
                for (std::size_t py = 0; py < P; ++py)
                    for (std::size_t px = 0; px < P; ++px) {
                        const double sign = ((gy * P + py + gx * P + px) % 2 == 0) ? 1.0 : -1.0;
                        for (std::size_t c = 0; c < C; ++c) checker[c] += sign * flat[k++];
                    }
                for (std::size_t c = 0; c < C; ++c) checker[c] /= n_pix;
                // subtract the reconstructed harmonic; the residual carries
                // the remaining patch structure
                k = 0;
                for (std::size_t py = 0; py < P; ++py)
                    for (std::size_t px = 0; px < P; ++px) {
                        const double sign = ((gy * P + py + gx * P + px) % 2 == 0) ? 1.0 : -1.0;
                        for (std::size_t c = 0; c < C; ++c) flat[k++] -= sign * checker[c];
                    }

                const auto& B = position_projection(gy * gw + gx, in_dim);
                double* dst = out.data() + (gy * gw + gx) * out_dim;
                for (std::size_t r = 0; r < out_dim; ++r) {
                    double s = 0.0;
                    const double* arow = A.data() + r * C;
                    for (std::size_t c = 0; c < C; ++c) s += arow[c] * checker[c];
                    const double* brow = B.data() + r * in_dim;
                    for (std::size_t cI = 0; cI < in_dim; ++cI) s += brow[cI] * flat[cI];
                    dst[r] = s;
                }
            }
        return ImageEmbedding{Tensor(std::move(out), {gh * gw, out_dim})};
    }

private:
    // Entries ~ N(0, 1/d_clip) keep mapped inner products near raw ones.
    std::vector<double> random_matrix(std::uint64_t key, std::size_t cols) const {
        Rng rng(key);
        std::vector<double> M(static_cast<std::size_t>(d_clip_) * cols);
        const double sd = 1.0 / std::sqrt(static_cast<double>(d_clip_));
        for (double& v : M) v = sd * rng.normal();
        return M;
    }

    const std::vector<double>& shared_projection(std::size_t channels) const {
        const std::uint64_t key = mix64(seed_, 0xa11c, channels);
        auto it = proj_cache_.find(key);
        if (it != proj_cache_.end()) return it->second;
        return proj_cache_.emplace(key, random_matrix(key, channels)).first->second;
    }

    const std::vector<double>& position_projection(std::size_t grid_index,
                                                   std::size_t in_dim) const {
        const std::uint64_t key = mix64(seed_, grid_index, in_dim);
        auto it = proj_cache_.find(key);
        if (it != proj_cache_.end()) return it->second;
        return proj_cache_.emplace(key, random_matrix(key, in_dim)).first->second;
    }

    int patch_;
    int d_clip_;
    std::uint64_t seed_;
    mutable std::map<std::uint64_t, std::vector<double>> proj_cache_;
};

// Mean over token rows.
inline std::vector<double> pooled(const Tensor& tokens) {
    const std::size_t n = tokens.shape()[0], d = tokens.shape()[1];
    std::vector<double> out(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[j] += tokens.data()[i * d + j];
    for (double& v : out) v /= static_cast<double>(n);
    return out;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("cosine: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw DegenerateEmbeddingError("cosine of zero-norm embedding");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace dsd
