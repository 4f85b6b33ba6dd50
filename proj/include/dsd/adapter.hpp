// Copyright (c) 2026 dsd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dsd/encoders.hpp"
#include "dsd/tensor.hpp"

namespace dsd {

enum class IpmActivation { gelu, identity };

struct AdapterConfig {
    int d_clip = 16;     // image encoder output dim
    int ipm_hidden = 16; // projection MLP hidden width
    int d_attn = 16;     // cross-attention dim (matches text projections)
    int n_blocks = 2;    // one (w_k, w_v) pair per attention block
    IpmActivation activation = IpmActivation::gelu;
};

// The only trainable state: the image projection MLP plus per-block key and
// value maps for the image attention branch. Value maps start at zero, so a
// fresh adapter leaves the base model's outputs untouched.
struct AdapterParams {
    AdapterConfig cfg;
    Tensor ipm_w1, ipm_b1, ipm_w2, ipm_b2;
    struct Block {
        Tensor w_k;  // [d_attn, d_attn]
        Tensor w_v;  // [d_attn, d_attn]
    };
    std::vector<Block> blocks;

    static AdapterParams init(const AdapterConfig& cfg, std::uint64_t seed,
                              bool trainable = true) {
        Rng rng(mix64(seed, 0xada9));
        AdapterParams p;
        p.cfg = cfg;
        const auto h = static_cast<std::size_t>(cfg.ipm_hidden);
        const auto dc = static_cast<std::size_t>(cfg.d_clip);
        const auto da = static_cast<std::size_t>(cfg.d_attn);
        p.ipm_w1 = Tensor::randn({h, dc}, rng, 1.0 / std::sqrt(double(dc)), trainable);
        p.ipm_b1 = Tensor::zeros({h}, trainable);
        p.ipm_w2 = Tensor::randn({da, h}, rng, 1.0 / std::sqrt(double(h)), trainable);
        p.ipm_b2 = Tensor::zeros({da}, trainable);
        for (int b = 0; b < cfg.n_blocks; ++b) {
            Block blk;
            blk.w_k = Tensor::randn({da, da}, rng, 1.0 / std::sqrt(double(da)), trainable);
            blk.w_v = Tensor::zeros({da, da}, trainable);
            p.blocks.push_back(std::move(blk));
        }
        return p;
    }

    std::size_t param_count() const {
        std::size_t n = ipm_w1.size() + ipm_b1.size() + ipm_w2.size() + ipm_b2.size();
        for (const auto& b : blocks) n += b.w_k.size() + b.w_v.size();
        return n;
    }

    void register_into(ParamSet& ps, const std::string& prefix, bool frozen) const {
        ps.insert(prefix + "ipm.w1", ipm_w1, frozen);
        ps.insert(prefix + "ipm.b1", ipm_b1, frozen);
        ps.insert(prefix + "ipm.w2", ipm_w2, frozen);
        ps.insert(prefix + "ipm.b2", ipm_b2, frozen);
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const std::string bp = prefix + "blk" + std::to_string(b) + ".";
            ps.insert(bp + "w_k", blocks[b].w_k, frozen);
            ps.insert(bp + "w_v", blocks[b].w_v, frozen);
        }
    }

    static AdapterParams bind(const ParamSet& ps, const std::string& prefix,
                              const AdapterConfig& cfg) {
        AdapterParams p;
        p.cfg = cfg;
        p.ipm_w1 = ps.at(prefix + "ipm.w1");
        p.ipm_b1 = ps.at(prefix + "ipm.b1");
        p.ipm_w2 = ps.at(prefix + "ipm.w2");
        p.ipm_b2 = ps.at(prefix + "ipm.b2");
        for (int b = 0; b < cfg.n_blocks; ++b) {
            const std::string bp = prefix + "blk" + std::to_string(b) + ".";
            p.blocks.push_back({ps.at(bp + "w_k"), ps.at(bp + "w_v")});
        }
        return p;
    }
};

// Value-equal, gradient-excluded snapshot of the adapter.
inline AdapterParams freeze_reference(const AdapterParams& ap) {
    AdapterParams ref;
    ref.cfg = ap.cfg;
    ref.ipm_w1 = ap.ipm_w1.detached_copy(false);
    ref.ipm_b1 = ap.ipm_b1.detached_copy(false);
    ref.ipm_w2 = ap.ipm_w2.detached_copy(false);
    ref.ipm_b2 = ap.ipm_b2.detached_copy(false);
    for (const auto& b : ap.blocks)
        ref.blocks.push_back({b.w_k.detached_copy(false), b.w_v.detached_copy(false)});
    return ref;
}

// c_i = MLP(image tokens): affine, nonlinearity, affine; row-wise.
inline Tensor ipm(const ImageEmbedding& emb, const AdapterParams& p) {
    Tensor h = linear(emb.tokens, p.ipm_w1, p.ipm_b1);
    if (p.cfg.activation == IpmActivation::gelu) h = gelu(h);
    return linear(h, p.ipm_w2, p.ipm_b2);
}

// Softmax(Q K^T / sqrt(d)) V
inline Tensor attention(const Tensor& Q, const Tensor& K, const Tensor& V) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(Q.cols()));
    Tensor logits = scale(matmul(Q, transpose(K)), inv_sqrt_d);
    return matmul(softmax_rows(logits), V);
}

// Image cross-attention: keys/values are trainable projections of c_i.
inline Tensor icam(const Tensor& Q, const Tensor& c_i, const Tensor& w_k, const Tensor& w_v) {
    Tensor K = matmul(c_i, transpose(w_k));
    Tensor V = matmul(c_i, transpose(w_v));
    return attention(Q, K, V);
}

// Frozen text-side projections of one attention block.
struct TextProj {
    Tensor w_k;  // [d_attn, d_text]
    Tensor w_v;  // [d_attn, d_text]
};

// F = Attention(Q, K^p, V^p) + gamma * ICAM(Q, K^i, V^i).
// gamma == 0 runs the text path alone, bit-identical to a model that has no
// image branch at all.
inline Tensor fuse(const Tensor& Q, const TextEmbedding& c_p, const Tensor& c_i,
                   const TextProj& text, const AdapterParams::Block& blk, double gamma) {
    Tensor Kp = matmul(c_p.tokens, transpose(text.w_k));
    Tensor Vp = matmul(c_p.tokens, transpose(text.w_v));
    Tensor out = attention(Q, Kp, Vp);
    if (gamma != 0.0) out = add(out, scale(icam(Q, c_i, blk.w_k, blk.w_v), gamma));
    return out;
}

}  // namespace dsd
