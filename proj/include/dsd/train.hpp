// Copyright (c) 2026 dsd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dsd/manifest.hpp"
#include "dsd/preference.hpp"
#include "dsd/tensor_io.hpp"

namespace dsd {

enum class Objective { dsd, dm };

inline std::string to_string(Objective o) { return o == Objective::dsd ? "dsd" : "dm"; }

inline Objective objective_from_string(const std::string& s) {
    if (s == "dsd") return Objective::dsd;
    if (s == "dm") return Objective::dm;
    throw ConfigError("unknown objective '" + s + "'");
}

struct TrainConfig {
    double lr = 2e-3;
    int warmup_steps = 50;
    int batch_size = 8;
    int epochs = 10;
    std::uint64_t seed = 0;
    DSDConfig dsd;  // beta defaults to 500 at T=50
    double gamma_train = 1.0;
    // noise schedule
    ScheduleKind sched_kind = ScheduleKind::linear;
    int T = 50;
    double beta_start = 1e-4;
    double beta_end = 0.05;
    // optimizer and split
    double momentum = 0.9;
    double holdout_frac = 0.1;
    Objective objective = Objective::dsd;
    // base model pretraining (plain text-conditioned denoising); the backbone
    // is frozen once this phase ends
    int base_pretrain_steps = 600;
    double base_lr = 2e-3;
    // model
    ModelConfig model;
    std::uint64_t model_seed = 1;

    void validate() const {
        if (lr <= 0.0) throw ConfigError("lr must be positive");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
        if (epochs < 0) throw ConfigError("epochs must be >= 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
        if (!(holdout_frac >= 0.0 && holdout_frac < 1.0))
            throw ConfigError("holdout_frac must be in [0,1)");
        if (!(gamma_train >= 0.0)) throw ConfigError("gamma_train must be >= 0");
        if (base_pretrain_steps < 0) throw ConfigError("base_pretrain_steps must be >= 0");
        if (base_lr <= 0.0) throw ConfigError("base_lr must be positive");
        dsd.validate();
        model.validate();
    }

    NoiseSchedule schedule() const { return build_schedule(sched_kind, T, beta_start, beta_end); }

    // dataset geometry and encoder dims must match the model
    void check_compatible(const ManifestConfig& m) const {
        if (m.height != model.height || m.width != model.width || m.channels != model.channels)
            throw ConfigError("manifest image geometry differs from the model config");
        if (m.d_text != model.d_text || m.d_clip != model.d_clip || m.vocab != model.vocab ||
            m.patch != model.patch)
            throw ConfigError("manifest encoder dims differ from the model config");
    }
};

struct LossLogEntry {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

// lr * min(1, step / warmup_steps); flat once warmed up.
inline double warmup_lr(std::size_t step, const TrainConfig& cfg) {
    if (cfg.warmup_steps == 0) return cfg.lr;
    const double f = static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    return cfg.lr * std::min(1.0, f);
}

// Deterministic 10%-style split by seeded hash of (winner, loser) ids.
struct PairSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> heldout;
};

inline PairSplit split_pairs(const Manifest& m, double holdout_frac, std::uint64_t seed) {
    PairSplit out;
    for (std::size_t i = 0; i < m.pairs.size(); ++i) {
        const auto& p = m.pairs[i];
        const std::uint64_t h = mix64(mix64(seed, 0x11070u), static_cast<std::uint64_t>(p.winner_id),
                                      static_cast<std::uint64_t>(p.loser_id));
        const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
        (u < holdout_frac ? out.heldout : out.train).push_back(i);
    }
    return out;
}

// Preference samples materialized from manifest records; images are read from
// the .ten files referenced by the manifest.
inline std::vector<PreferenceSample> load_pair_samples(const Manifest& m,
                                                       const std::string& base_dir,
                                                       const TextEncoder& text_enc,
                                                       const ImageEncoder& img_enc) {
    std::map<std::int64_t, const ManifestCandidate*> by_id;
    for (const auto& c : m.candidates) by_id.emplace(c.id, &c);

    auto resolve = [&base_dir](const std::string& rel) {
        return base_dir.empty() ? rel : base_dir + "/" + rel;
    };

    // reference images repeat across pairs; cache by path
    std::map<std::string, Tensor> image_cache;
    auto load = [&](const std::string& rel) {
        auto it = image_cache.find(rel);
        if (it != image_cache.end()) return it->second;
        Tensor t = load_tensor(resolve(rel));
        return image_cache.emplace(rel, std::move(t)).first->second;
    };

    std::vector<PreferenceSample> out;
    out.reserve(m.pairs.size());
    for (const auto& p : m.pairs) {
        auto w = by_id.find(p.winner_id);
        auto l = by_id.find(p.loser_id);
        if (w == by_id.end() || l == by_id.end())
            throw IntegrityError("pair references unknown candidate id");
        PreferenceSample smp;
        smp.c_p = text_enc.encode(p.prompt_tokens);
        smp.image = img_enc.encode(load(p.reference_path));
        smp.y0_w = load(w->second->image_path);
        smp.y0_l = load(l->second->image_path);
        out.push_back(std::move(smp));
    }
    return out;
}

// Reconstruction objective over the winning targets only; the text+image
// conditioning stays on. Used for the no-preference ablation.
inline Tensor dm_batch_loss(const PreferenceBatch& batch, const ModelConfig& cfg,
                            const DenoiserParams& dp, const AdapterParams& theta,
                            const NoiseSchedule& s, const WeightFn& omega, std::uint64_t seed,
                            double gamma) {
    if (batch.items.empty()) throw ConfigError("dm_batch_loss: empty batch");
    Rng rng(mix64(seed, 0xd100));
    Tensor acc = Tensor::scalar(0.0);
    for (const auto& sample : batch.items) {
        const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.T)));
        Tensor eps = Tensor::randn(sample.y0_w.shape(), rng);
        Tensor yt = forward_diffuse(sample.y0_w, t, eps, s);
        Tensor pred = denoise(yt, sample.c_p, sample.image, t, cfg, dp, theta, gamma);
        acc = add(acc, dm_loss(eps, pred, t, omega, s));
    }
    return scale(acc, 1.0 / static_cast<double>(batch.items.size()));
}

// Everything the optimizer owns between steps.
struct TrainState {
    TrainConfig cfg;
    ManifestConfig data_cfg;
    std::size_t step = 0;     // preference-phase steps taken
    bool base_ready = false;  // backbone pretraining finished (or loaded)
    ParamSet base;            // denoiser.* entries, frozen once base_ready
    ParamSet params;          // trainable adapter entries
    std::map<std::string, Tensor> momentum;  // velocity per adapter entry

    AdapterParams adapter() const {
        return AdapterParams::bind(params, "adapter.", cfg.model.adapter_config());
    }
    DenoiserParams denoiser() const {
        return DenoiserParams::bind(base, "denoiser.", cfg.model);
    }
};

struct TrainResult {
    TrainState state;
    std::vector<LossLogEntry> log;           // preference phase, step-indexed
    std::vector<LossLogEntry> pretrain_log;  // backbone phase
};

// Fresh state: random backbone (pretrained later) and an adapter with zero
// value projections, so the model starts output-equal to its frozen
// reference.
inline TrainState init_train_state(const TrainConfig& cfg, const ManifestConfig& data_cfg) {
    cfg.validate();
    cfg.check_compatible(data_cfg);
    TrainState st;
    st.cfg = cfg;
    st.data_cfg = data_cfg;
    st.step = 0;
    DenoiserParams dp = DenoiserParams::init(cfg.model, mix64(cfg.model_seed, 1));
    dp.register_into(st.base, "denoiser.", true);
    st.base_ready = cfg.base_pretrain_steps == 0;
    AdapterParams ap = AdapterParams::init(cfg.model.adapter_config(), mix64(cfg.model_seed, 2));
    ap.register_into(st.params, "adapter.", false);
    for (const auto& [name, e] : st.params)
        st.momentum.emplace(name, Tensor::zeros(e.tensor.shape()));
    return st;
}

// The reference model is the deterministic initial adapter; it never needs
// serializing because it can always be rebuilt from the config.
inline AdapterParams reference_adapter(const TrainConfig& cfg) {
    return freeze_reference(
        AdapterParams::init(cfg.model.adapter_config(), mix64(cfg.model_seed, 2)));
}

namespace detail {

inline std::vector<std::size_t> epoch_order(const std::vector<std::size_t>& train_idx,
                                            std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order = train_idx;
    Rng rng(mix64(seed, 0xe90c, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

}  // namespace detail

// Backbone phase: plain text-conditioned denoising over every target image
// of the training pairs, no image branch. Freezes the backbone afterwards.
inline std::vector<LossLogEntry> pretrain_base(TrainState& st,
                                               const std::vector<PreferenceSample>& samples,
                                               const std::vector<std::size_t>& train_idx,
                                               const NoiseSchedule& sched) {
    const TrainConfig& cfg = st.cfg;
    std::vector<LossLogEntry> log;
    if (st.base_ready) return log;

    // one (prompt, target) item per winner and per loser
    struct Item {
        const TextEmbedding* c_p;
        const Tensor* y0;
    };
    std::vector<Item> items;
    items.reserve(2 * train_idx.size());
    for (std::size_t idx : train_idx) {
        items.push_back({&samples[idx].c_p, &samples[idx].y0_w});
        items.push_back({&samples[idx].c_p, &samples[idx].y0_l});
    }

    ParamSet live;
    st.denoiser().register_into(live, "denoiser.", /*frozen=*/false);
    std::map<std::string, Tensor> velocity;
    for (const auto& [name, e] : live) velocity.emplace(name, Tensor::zeros(e.tensor.shape()));

    for (int step = 0; step < cfg.base_pretrain_steps; ++step) {
        Rng rng(mix64(cfg.seed, 0xba5e, static_cast<std::uint64_t>(step)));
        DenoiserParams dp = DenoiserParams::bind(live, "denoiser.", cfg.model);

        for (const auto& [name, e] : live) e.tensor.node()->grad.clear();
        Tensor acc = Tensor::scalar(0.0);
        for (int b = 0; b < cfg.batch_size; ++b) {
            const Item& it = items[rng.below(items.size())];
            const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.T)));
            Tensor eps = Tensor::randn(it.y0->shape(), rng);
            Tensor yt = forward_diffuse(*it.y0, t, eps, sched);
            Tensor pred = denoise_text_only(yt, *it.c_p, t, cfg.model, dp);
            acc = add(acc, dm_loss(eps, pred, t, cfg.dsd.omega, sched));
        }
        Tensor loss = scale(acc, 1.0 / static_cast<double>(cfg.batch_size));
        if (!std::isfinite(loss.value()))
            throw DivergenceError("non-finite base pretraining loss",
                                  static_cast<std::size_t>(step));
        backward(loss);

        const double lr_t = cfg.base_lr * std::min(1.0, (step + 1) / 50.0);
        for (const auto& [name, e] : live) {
            const Tensor g = e.tensor.grad();
            std::vector<double> v = velocity.at(name).data();
            std::vector<double> next = e.tensor.data();
            for (std::size_t i = 0; i < next.size(); ++i) {
                v[i] = cfg.momentum * v[i] + g.data()[i];
                next[i] -= lr_t * v[i];
            }
            velocity.at(name) = Tensor(std::move(v), e.tensor.shape());
            live.rebind(name, Tensor(std::move(next), e.tensor.shape(), true));
        }
        log.push_back({static_cast<std::size_t>(step), lr_t, loss.value()});
    }

    st.base = live.deep_copy(/*freeze_all=*/true);
    st.base_ready = true;
    return log;
}

// Run (or continue) training until cfg.epochs are exhausted. Deterministic:
// the step index alone fixes the epoch shuffle and every noise draw, so a
// resumed run retraces the uninterrupted one bit for bit.
inline TrainResult train_loop(TrainState st, const Manifest& manifest,
                              const std::string& base_dir) {
    const TrainConfig& cfg = st.cfg;
    cfg.validate();
    cfg.check_compatible(manifest.config);
    if (manifest.pairs.empty()) throw ConfigError("train: manifest has no pairs");

    const NoiseSchedule sched = cfg.schedule();
    const AdapterParams ref = reference_adapter(cfg);
    TextEncoder text_enc = text_encoder_from(manifest.config);
    ImageEncoder img_enc = image_encoder_from(manifest.config);
    const std::vector<PreferenceSample> samples =
        load_pair_samples(manifest, base_dir, text_enc, img_enc);

    const PairSplit split = split_pairs(manifest, cfg.holdout_frac, cfg.seed);
    if (split.train.empty()) throw ConfigError("train: holdout split left no training pairs");

    TrainResult result;
    result.pretrain_log = pretrain_base(st, samples, split.train, sched);
    const DenoiserParams dp = st.denoiser();

    const std::size_t per_epoch =
        (split.train.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
        static_cast<std::size_t>(cfg.batch_size);
    const std::size_t total_steps = per_epoch * static_cast<std::size_t>(cfg.epochs);
    result.log.reserve(total_steps - std::min(total_steps, st.step));

    while (st.step < total_steps) {
        const int epoch = static_cast<int>(st.step / per_epoch);
        const std::size_t batch_idx = st.step % per_epoch;
        const auto order = detail::epoch_order(split.train, cfg.seed, epoch);

        PreferenceBatch batch;
        const std::size_t lo = batch_idx * static_cast<std::size_t>(cfg.batch_size);
        const std::size_t hi =
            std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
        for (std::size_t i = lo; i < hi; ++i) batch.items.push_back(samples[order[i]]);

        const double lr_t = warmup_lr(st.step, cfg);
        const std::uint64_t step_seed = mix64(cfg.seed, 0x57e9, st.step);
        auto loss_fn = [&](const ParamSet& live) {
            AdapterParams theta =
                AdapterParams::bind(live, "adapter.", cfg.model.adapter_config());
            if (cfg.objective == Objective::dsd)
                return dsd_loss(batch, cfg.model, dp, theta, ref, sched, cfg.dsd, step_seed,
                                cfg.gamma_train);
            return dm_batch_loss(batch, cfg.model, dp, theta, sched, cfg.dsd.omega, step_seed,
                                 cfg.gamma_train);
        };

        for (const auto& [name, e] : st.params) e.tensor.node()->grad.clear();
        Tensor loss = loss_fn(st.params);
        if (!std::isfinite(loss.value()))
            throw DivergenceError("non-finite training loss", st.step);
        backward(loss);

        for (const auto& [name, e] : st.params) {
            const Tensor g = e.tensor.grad();
            std::vector<double> v = st.momentum.at(name).data();
            std::vector<double> next = e.tensor.data();
            for (std::size_t i = 0; i < next.size(); ++i) {
                v[i] = cfg.momentum * v[i] + g.data()[i];
                next[i] -= lr_t * v[i];
            }
            st.momentum.at(name) = Tensor(std::move(v), e.tensor.shape());
            st.params.rebind(name, Tensor(std::move(next), e.tensor.shape(), true));
        }

        result.log.push_back({st.step, lr_t, loss.value()});
        ++st.step;
    }

    result.state = std::move(st);
    return result;
}

inline TrainResult train(const TrainConfig& cfg, const Manifest& manifest,
                         const std::string& base_dir) {
    return train_loop(init_train_state(cfg, manifest.config), manifest, base_dir);
}

}  // namespace dsd
