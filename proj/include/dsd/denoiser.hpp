// Copyright (c) 2026 dsd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dsd/adapter.hpp"
#include "dsd/encoders.hpp"
#include "dsd/schedule.hpp"
#include "dsd/tensor.hpp"

namespace dsd {

// Geometry and widths of the toy conditioned denoiser plus its encoders.
struct ModelConfig {
    // image geometry
    int height = 8, width = 8, channels = 3;
    int patch = 2;  // encoder patch size; also sets the denoiser token width
    // denoiser
    int d_model = 64;
    int d_attn = 16;
    int mlp_mult = 2;
    int n_stages = 2;
    // conditioning; d_text must equal d_clip so quality scoring can compare
    // prompt rows against pooled image embeddings
    int d_text = 128;
    int d_clip = 128;
    int ipm_hidden = 8;
    int vocab = 64;

    int token_dim() const { return patch * patch * channels; }
    int n_tokens() const { return height * width * channels / token_dim(); }
    std::size_t image_elems() const {
        return static_cast<std::size_t>(height) * width * channels;
    }
    std::vector<std::size_t> image_shape() const {
        return {static_cast<std::size_t>(height), static_cast<std::size_t>(width),
                static_cast<std::size_t>(channels)};
    }

    AdapterConfig adapter_config() const { return {d_clip, ipm_hidden, d_attn, n_stages}; }

    void validate() const {
        if (height < 1 || width < 1 || channels < 1) throw ConfigError("image dims must be >= 1");
        if (patch < 1 || height % patch || width % patch)
            throw ConfigError("patch must divide height and width");
        if (d_model < 1 || d_attn < 1 || mlp_mult < 1 || n_stages < 1)
            throw ConfigError("denoiser widths must be >= 1");
        if (d_text != d_clip)
            throw ConfigError("d_text must equal d_clip (scoring compares the two spaces)");
        if (vocab < 1) throw ConfigError("vocab must be >= 1");
    }

    // Shipped default: small enough for minute-scale training, large enough
    // that the adapter stays a small fraction of the backbone.
    static ModelConfig desk() { return ModelConfig{}; }

    // Minimal geometry for exhaustive per-coordinate gradient checks.
    static ModelConfig tiny() {
        ModelConfig c;
        c.height = 4;
        c.width = 4;
        c.channels = 3;
        c.patch = 2;
        c.d_model = 16;
        c.d_attn = 8;
        c.mlp_mult = 8;
        c.n_stages = 2;
        c.d_text = 16;
        c.d_clip = 16;
        c.ipm_hidden = 8;
        c.vocab = 32;
        return c;
    }
};

// Frozen backbone: token embedding, residual MLP blocks, attention blocks
// with the frozen text projections, and the output head.
struct DenoiserParams {
    struct Stage {
        Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
        Tensor w_q;  // [d_attn, d_model]
        TextProj text;
        Tensor w_o;  // [d_model, d_attn]
    };

    Tensor in_w, in_b;  // [d_model, token_dim], [d_model]
    std::vector<Stage> stages;
    Tensor out_w, out_b;  // [token_dim, d_model], [token_dim]

    static DenoiserParams init(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Rng rng(mix64(seed, 0xd4a0));
        const auto dm = static_cast<std::size_t>(cfg.d_model);
        const auto da = static_cast<std::size_t>(cfg.d_attn);
        const auto dt = static_cast<std::size_t>(cfg.d_text);
        const auto td = static_cast<std::size_t>(cfg.token_dim());
        const auto dh = dm * static_cast<std::size_t>(cfg.mlp_mult);

        auto w = [&rng](std::vector<std::size_t> shape) {
            const double sd = 1.0 / std::sqrt(static_cast<double>(shape.back()));
            return Tensor::randn(std::move(shape), rng, sd, false);
        };

        DenoiserParams p;
        p.in_w = w({dm, td});
        p.in_b = Tensor::zeros({dm});
        for (int s = 0; s < cfg.n_stages; ++s) {
            Stage st;
            st.mlp_w1 = w({dh, dm});
            st.mlp_b1 = Tensor::zeros({dh});
            st.mlp_w2 = w({dm, dh});
            st.mlp_b2 = Tensor::zeros({dm});
            st.w_q = w({da, dm});
            st.text.w_k = w({da, dt});
            st.text.w_v = w({da, dt});
            st.w_o = w({dm, da});
            p.stages.push_back(std::move(st));
        }
        p.out_w = w({td, dm});
        p.out_b = Tensor::zeros({td});
        return p;
    }

    std::size_t param_count() const {
        std::size_t n = in_w.size() + in_b.size() + out_w.size() + out_b.size();
        for (const auto& s : stages)
            n += s.mlp_w1.size() + s.mlp_b1.size() + s.mlp_w2.size() + s.mlp_b2.size() +
                 s.w_q.size() + s.text.w_k.size() + s.text.w_v.size() + s.w_o.size();
        return n;
    }

    void register_into(ParamSet& ps, const std::string& prefix, bool frozen = true) const {
        ps.insert(prefix + "in.w", in_w, frozen);
        ps.insert(prefix + "in.b", in_b, frozen);
        for (std::size_t s = 0; s < stages.size(); ++s) {
            const std::string sp = prefix + "stage" + std::to_string(s) + ".";
            ps.insert(sp + "mlp.w1", stages[s].mlp_w1, frozen);
            ps.insert(sp + "mlp.b1", stages[s].mlp_b1, frozen);
            ps.insert(sp + "mlp.w2", stages[s].mlp_w2, frozen);
            ps.insert(sp + "mlp.b2", stages[s].mlp_b2, frozen);
            ps.insert(sp + "w_q", stages[s].w_q, frozen);
            ps.insert(sp + "text.w_k", stages[s].text.w_k, frozen);
            ps.insert(sp + "text.w_v", stages[s].text.w_v, frozen);
            ps.insert(sp + "w_o", stages[s].w_o, frozen);
        }
        ps.insert(prefix + "out.w", out_w, frozen);
        ps.insert(prefix + "out.b", out_b, frozen);
    }

    static DenoiserParams bind(const ParamSet& ps, const std::string& prefix,
                               const ModelConfig& cfg) {
        DenoiserParams p;
        p.in_w = ps.at(prefix + "in.w");
        p.in_b = ps.at(prefix + "in.b");
        for (int s = 0; s < cfg.n_stages; ++s) {
            const std::string sp = prefix + "stage" + std::to_string(s) + ".";
            Stage st;
            st.mlp_w1 = ps.at(sp + "mlp.w1");
            st.mlp_b1 = ps.at(sp + "mlp.b1");
            st.mlp_w2 = ps.at(sp + "mlp.w2");
            st.mlp_b2 = ps.at(sp + "mlp.b2");
            st.w_q = ps.at(sp + "w_q");
            st.text.w_k = ps.at(sp + "text.w_k");
            st.text.w_v = ps.at(sp + "text.w_v");
            st.w_o = ps.at(sp + "w_o");
            p.stages.push_back(std::move(st));
        }
        p.out_w = ps.at(prefix + "out.w");
        p.out_b = ps.at(prefix + "out.b");
        return p;
    }
};

// Adapter share of the total parameter budget.
inline double adapter_fraction(const DenoiserParams& dp, const AdapterParams& ap) {
    return static_cast<double>(ap.param_count()) / static_cast<double>(dp.param_count());
}

// Sinusoidal timestep embedding; constant per (t, dim).
inline Tensor time_embedding(int t, int dim) {
    std::vector<double> e(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim; i += 2) {
        const double freq = std::pow(10000.0, -double(i) / double(dim));
        e[static_cast<std::size_t>(i)] = std::sin(t * freq);
        if (i + 1 < dim) e[static_cast<std::size_t>(i + 1)] = std::cos(t * freq);
    }
    return Tensor(std::move(e), {static_cast<std::size_t>(dim)});
}

namespace detail {

inline Tensor denoise_impl(const ModelConfig& cfg, const Tensor& xt, const TextEmbedding& c_p,
                           const Tensor* c_i, const DenoiserParams& dp,
                           const AdapterParams* ap, int t, double gamma) {
    if (xt.size() != cfg.image_elems()) throw ShapeError("denoise: input size mismatch");
    if (c_p.dim() != static_cast<std::size_t>(cfg.d_text))
        throw ShapeError("denoise: text embedding dim mismatch");
    if (c_i != nullptr && ap->blocks.size() != dp.stages.size())
        throw ShapeError("denoise: adapter block count differs from stage count");
    const auto m = static_cast<std::size_t>(cfg.n_tokens());
    const auto td = static_cast<std::size_t>(cfg.token_dim());

    Tensor h = linear(reshape(xt, {m, td}), dp.in_w, dp.in_b);
    h = add_rowvec(h, time_embedding(t, cfg.d_model));
    for (const auto& st : dp.stages) {
        // residual MLP
        Tensor u = linear(gelu(linear(h, st.mlp_w1, st.mlp_b1)), st.mlp_w2, st.mlp_b2);
        h = add(h, u);
        // residual fused cross-attention
        Tensor Q = matmul(h, transpose(st.w_q));
        const std::size_t blk = static_cast<std::size_t>(&st - dp.stages.data());
        Tensor a = (c_i != nullptr)
                       ? fuse(Q, c_p, *c_i, st.text, ap->blocks[blk], gamma)
                       : fuse(Q, c_p, Tensor(), st.text, AdapterParams::Block{}, 0.0);
        h = add(h, matmul(a, transpose(st.w_o)));
    }
    Tensor out = linear(h, dp.out_w, dp.out_b);
    return reshape(out, xt.shape());
}

}  // namespace detail

// Predicted noise for xt at step t under fused text+image conditioning.
// Differentiable w.r.t. the adapter only; the backbone is frozen.
inline Tensor denoise(const Tensor& xt, const TextEmbedding& c_p, const ImageEmbedding& image,
                      int t, const ModelConfig& cfg, const DenoiserParams& dp,
                      const AdapterParams& ap, double gamma) {
    if (image.dim() != static_cast<std::size_t>(cfg.d_clip))
        throw ShapeError("denoise: image embedding dim mismatch");
    if (gamma == 0.0) return detail::denoise_impl(cfg, xt, c_p, nullptr, dp, nullptr, t, 0.0);
    Tensor c_i = ipm(image, ap);  // shared across blocks
    return detail::denoise_impl(cfg, xt, c_p, &c_i, dp, &ap, t, gamma);
}

// The gamma = 0 reduction: a model with no image branch at all.
inline Tensor denoise_text_only(const Tensor& xt, const TextEmbedding& c_p, int t,
                                const ModelConfig& cfg, const DenoiserParams& dp) {
    return detail::denoise_impl(cfg, xt, c_p, nullptr, dp, nullptr, t, 0.0);
}

}  // namespace dsd
