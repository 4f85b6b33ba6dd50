// Copyright (c) 2026 dsd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cinttypes>
#include <fstream>
#include <sstream>
#include <string>

#include "dsd/train.hpp"

namespace dsd {

// Checkpoint layout: text header (schema, hashed config lines, step count),
// then named binary tensor blocks in the `.ten` wire format. Adapter tensors
// are stored under their parameter names, optimizer velocities under
// "opt.m." + name. The frozen backbone and reference adapter are rebuilt
// from the config, never stored.

inline std::string canonical_train_config_line(const TrainConfig& c) {
    std::ostringstream os;
    os << "lr=" << detail::fmt_double(c.lr) << " warmup=" << c.warmup_steps
       << " batch=" << c.batch_size << " epochs=" << c.epochs << " seed=" << c.seed
       << " beta=" << detail::fmt_double(c.dsd.beta)
       << " omega=" << detail::fmt_double(c.dsd.omega.value)
       << " gamma=" << detail::fmt_double(c.gamma_train) << " sched=" << to_string(c.sched_kind)
       << " T=" << c.T << " beta_start=" << detail::fmt_double(c.beta_start)
       << " beta_end=" << detail::fmt_double(c.beta_end)
       << " momentum=" << detail::fmt_double(c.momentum)
       << " holdout=" << detail::fmt_double(c.holdout_frac)
       << " objective=" << to_string(c.objective)
       << " base_steps=" << c.base_pretrain_steps
       << " base_lr=" << detail::fmt_double(c.base_lr) << " model_seed=" << c.model_seed
       << " height=" << c.model.height << " width=" << c.model.width
       << " channels=" << c.model.channels << " patch=" << c.model.patch
       << " d_model=" << c.model.d_model << " d_attn=" << c.model.d_attn
       << " mlp_mult=" << c.model.mlp_mult << " n_stages=" << c.model.n_stages
       << " d_text=" << c.model.d_text << " d_clip=" << c.model.d_clip
       << " ipm_hidden=" << c.model.ipm_hidden << " vocab=" << c.model.vocab;
    return os.str();
}

inline std::uint64_t train_config_hash(const TrainConfig& c) {
    return fnv1a64(canonical_train_config_line(c));
}

inline void save_checkpoint(const TrainState& st, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open for write: " + path);
    char hash[17];
    std::snprintf(hash, sizeof(hash), "%016" PRIx64, train_config_hash(st.cfg));

    f << "dsdckpt 1\n";
    f << "trainconfig " << canonical_train_config_line(st.cfg) << " hash=" << hash << "\n";
    char dhash[17];
    std::snprintf(dhash, sizeof(dhash), "%016" PRIx64, config_hash(st.data_cfg));
    f << "dataconfig " << canonical_config_line(st.data_cfg) << " hash=" << dhash << "\n";
    f << "step " << st.step << "\n";
    f << "base_ready " << (st.base_ready ? 1 : 0) << "\n";
    f << "tensors " << (st.base.size() + st.params.size() + st.momentum.size()) << "\n";
    for (const auto& [name, e] : st.base) {
        f << name << "\n";
        write_tensor(f, e.tensor);
    }
    for (const auto& [name, e] : st.params) {
        f << name << "\n";
        write_tensor(f, e.tensor);
    }
    for (const auto& [name, t] : st.momentum) {
        f << "opt.m." << name << "\n";
        write_tensor(f, t);
    }
    if (!f) throw ParseError("write failed: " + path);
}

namespace detail {

inline TrainConfig parse_train_config(const FieldMap& kv) {
    TrainConfig c;
    c.lr = kv.num("lr");
    c.warmup_steps = static_cast<int>(kv.integer("warmup"));
    c.batch_size = static_cast<int>(kv.integer("batch"));
    c.epochs = static_cast<int>(kv.integer("epochs"));
    c.seed = kv.uinteger("seed");
    c.dsd.beta = kv.num("beta");
    c.dsd.omega = WeightFn(kv.num("omega"));
    c.gamma_train = kv.num("gamma");
    c.sched_kind = schedule_kind_from_string(kv.str("sched"));
    c.T = static_cast<int>(kv.integer("T"));
    c.beta_start = kv.num("beta_start");
    c.beta_end = kv.num("beta_end");
    c.momentum = kv.num("momentum");
    c.holdout_frac = kv.num("holdout");
    c.objective = objective_from_string(kv.str("objective"));
    c.base_pretrain_steps = static_cast<int>(kv.integer("base_steps"));
    c.base_lr = kv.num("base_lr");
    c.model_seed = kv.uinteger("model_seed");
    c.model.height = static_cast<int>(kv.integer("height"));
    c.model.width = static_cast<int>(kv.integer("width"));
    c.model.channels = static_cast<int>(kv.integer("channels"));
    c.model.patch = static_cast<int>(kv.integer("patch"));
    c.model.d_model = static_cast<int>(kv.integer("d_model"));
    c.model.d_attn = static_cast<int>(kv.integer("d_attn"));
    c.model.mlp_mult = static_cast<int>(kv.integer("mlp_mult"));
    c.model.n_stages = static_cast<int>(kv.integer("n_stages"));
    c.model.d_text = static_cast<int>(kv.integer("d_text"));
    c.model.d_clip = static_cast<int>(kv.integer("d_clip"));
    c.model.ipm_hidden = static_cast<int>(kv.integer("ipm_hidden"));
    c.model.vocab = static_cast<int>(kv.integer("vocab"));
    return c;
}

inline ManifestConfig parse_data_config(const FieldMap& kv) {
    ManifestConfig c;
    c.schema_version = static_cast<int>(kv.integer("schema"));
    c.phi = kv.num("phi");
    c.height = static_cast<int>(kv.integer("height"));
    c.width = static_cast<int>(kv.integer("width"));
    c.channels = static_cast<int>(kv.integer("channels"));
    c.patch = static_cast<int>(kv.integer("patch"));
    c.vocab = static_cast<int>(kv.integer("vocab"));
    c.d_text = static_cast<int>(kv.integer("d_text"));
    c.d_clip = static_cast<int>(kv.integer("d_clip"));
    c.text_seed = kv.uinteger("text_seed");
    c.image_seed = kv.uinteger("image_seed");
    c.synth_seed = kv.uinteger("synth_seed");
    c.pair_seed = kv.uinteger("pair_seed");
    c.n_instances = static_cast<int>(kv.integer("n"));
    c.cap = static_cast<int>(kv.integer("cap"));
    c.group_mode = group_mode_from_string(kv.str("group_mode"));
    c.bg_level = kv.num("bg_level");
    c.subject_level = kv.num("subject_level");
    c.subject_axis = kv.num("subject_axis");
    c.min_subject_gap = kv.num("min_subject_gap");
    return c;
}

}  // namespace detail

inline TrainState load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open for read: " + path);

    std::string line;
    if (!std::getline(f, line) || line != "dsdckpt 1")
        throw SchemaError("not a checkpoint file or unsupported schema: " + path);

    TrainState st;
    bool saw_train = false, saw_data = false;
    std::size_t n_tensors = 0;
    std::size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        std::stringstream ss(line);
        std::string tag;
        ss >> tag;
        std::string rest;
        std::getline(ss, rest);
        if (tag == "trainconfig") {
            detail::FieldMap kv(rest, line_no);
            st.cfg = detail::parse_train_config(kv);
            char expect[17];
            std::snprintf(expect, sizeof(expect), "%016" PRIx64, train_config_hash(st.cfg));
            if (kv.str("hash") != expect) throw IntegrityError("train config hash mismatch");
            saw_train = true;
        } else if (tag == "dataconfig") {
            detail::FieldMap kv(rest, line_no);
            st.data_cfg = detail::parse_data_config(kv);
            char expect[17];
            std::snprintf(expect, sizeof(expect), "%016" PRIx64, config_hash(st.data_cfg));
            if (kv.str("hash") != expect) throw IntegrityError("data config hash mismatch");
            saw_data = true;
        } else if (tag == "step") {
            st.step = static_cast<std::size_t>(std::stoull(rest));
        } else if (tag == "base_ready") {
            st.base_ready = std::stoi(rest) != 0;
        } else if (tag == "tensors") {
            n_tensors = static_cast<std::size_t>(std::stoull(rest));
            break;
        } else {
            throw SchemaError("unknown checkpoint header tag '" + tag + "'");
        }
    }
    if (!saw_train || !saw_data) throw SchemaError("checkpoint header incomplete");

    for (std::size_t i = 0; i < n_tensors; ++i) {
        std::string name;
        if (!std::getline(f, name)) throw ParseError("checkpoint truncated at tensor name");
        Tensor t = read_tensor(f);
        if (name.rfind("opt.m.", 0) == 0)
            st.momentum.emplace(name.substr(6), std::move(t));
        else if (name.rfind("denoiser.", 0) == 0)
            st.base.insert(name, std::move(t), true);
        else
            st.params.insert(name, t.detached_copy(true), false);
    }
    if (st.base.size() == 0) throw SchemaError("checkpoint has no backbone tensors");

    // structural sanity: every parameter carries a velocity and vice versa
    for (const auto& [name, e] : st.params)
        if (!st.momentum.count(name))
            throw SchemaError("checkpoint missing optimizer state for '" + name + "'");
    for (const auto& [name, t] : st.momentum)
        if (!st.params.contains(name))
            throw SchemaError("checkpoint has orphan optimizer state '" + name + "'");
    return st;
}

}  // namespace dsd
