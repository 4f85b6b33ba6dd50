// Copyright (c) 2026 dsd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dsd/errors.hpp"
#include "dsd/synth.hpp"
#include "dsd/tensor_io.hpp"

namespace dsd {

// Line-delimited text manifest: a header line, one config line, then one
// line per candidate and per preference pair, each as explicit key=value
// fields. Floats are printed with 17 significant digits so a load/save
// round trip is byte-identical.

struct ManifestConfig {
    int schema_version = 1;
    double phi = 0.7;
    int height = 8, width = 8, channels = 3, patch = 2;
    int vocab = 64, d_text = 128, d_clip = 128;
    std::uint64_t text_seed = 0, image_seed = 0, synth_seed = 0, pair_seed = 0;
    int n_instances = 0;
    int cap = 1;
    GroupMode group_mode = GroupMode::per_group;
    double bg_level = 0.3, subject_level = 0.9, subject_axis = 0.6, min_subject_gap = 1.0;

    bool operator==(const ManifestConfig&) const = default;
};

struct ManifestCandidate {
    std::int64_t id = 0;
    std::int64_t group = 0;
    std::vector<int> prompt_tokens;
    std::string image_path;      // relative to the manifest file
    std::string reference_path;  // relative to the manifest file
    double s_text = 0.0, s_visual = 0.0, q = 0.0;
    int level = 0;

    bool operator==(const ManifestCandidate&) const = default;
};

struct ManifestPair {
    std::vector<int> prompt_tokens;
    std::string reference_path;
    std::int64_t winner_id = 0;
    std::int64_t loser_id = 0;

    bool operator==(const ManifestPair&) const = default;
};

struct Manifest {
    ManifestConfig config;
    std::vector<ManifestCandidate> candidates;
    std::vector<ManifestPair> pairs;

    bool operator==(const Manifest&) const = default;
};

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string fmt_tokens(const std::vector<int>& toks) {
    std::string out;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(toks[i]);
    }
    return out;
}

inline std::vector<int> parse_tokens(const std::string& s, std::size_t line_no) {
    std::vector<int> out;
    std::string cur;
    std::stringstream ss(s);
    while (std::getline(ss, cur, ',')) {
        char* end = nullptr;
        const long v = std::strtol(cur.c_str(), &end, 10);
        if (end == cur.c_str() || *end != '\0')
            throw ParseError("bad token list '" + s + "'", line_no);
        out.push_back(static_cast<int>(v));
    }
    if (out.empty()) throw ParseError("empty token list", line_no);
    return out;
}

// key=value fields separated by single spaces
class FieldMap {
public:
    FieldMap(const std::string& rest, std::size_t line_no) : line_no_(line_no) {
        std::stringstream ss(rest);
        std::string tok;
        while (ss >> tok) {
            const auto eq = tok.find('=');
            if (eq == std::string::npos || eq == 0)
                throw ParseError("expected key=value, got '" + tok + "'", line_no);
            fields_.emplace(tok.substr(0, eq), tok.substr(eq + 1));
        }
    }

    const std::string& str(const std::string& key) const {
        auto it = fields_.find(key);
        if (it == fields_.end()) throw ParseError("missing field '" + key + "'", line_no_);
        return it->second;
    }

    double num(const std::string& key) const {
        const std::string& s = str(key);
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (end == s.c_str() || *end != '\0')
            throw ParseError("bad number in '" + key + "=" + s + "'", line_no_);
        return v;
    }

    long long integer(const std::string& key) const {
        const std::string& s = str(key);
        char* end = nullptr;
        const long long v = std::strtoll(s.c_str(), &end, 10);
        if (end == s.c_str() || *end != '\0')
            throw ParseError("bad integer in '" + key + "=" + s + "'", line_no_);
        return v;
    }

    std::uint64_t uinteger(const std::string& key) const {
        const std::string& s = str(key);
        char* end = nullptr;
        const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
        if (end == s.c_str() || *end != '\0')
            throw ParseError("bad integer in '" + key + "=" + s + "'", line_no_);
        return v;
    }

    std::size_t line() const { return line_no_; }

private:
    std::map<std::string, std::string> fields_;
    std::size_t line_no_;
};

}  // namespace detail

// Canonical config text; the stored hash covers exactly this string.
inline std::string canonical_config_line(const ManifestConfig& c) {
    std::ostringstream os;
    os << "schema=" << c.schema_version << " phi=" << detail::fmt_double(c.phi)
       << " height=" << c.height << " width=" << c.width << " channels=" << c.channels
       << " patch=" << c.patch << " vocab=" << c.vocab << " d_text=" << c.d_text
       << " d_clip=" << c.d_clip << " text_seed=" << c.text_seed
       << " image_seed=" << c.image_seed << " synth_seed=" << c.synth_seed
       << " pair_seed=" << c.pair_seed << " n=" << c.n_instances << " cap=" << c.cap
       << " group_mode=" << to_string(c.group_mode)
       << " bg_level=" << detail::fmt_double(c.bg_level)
       << " subject_level=" << detail::fmt_double(c.subject_level)
       << " subject_axis=" << detail::fmt_double(c.subject_axis)
       << " min_subject_gap=" << detail::fmt_double(c.min_subject_gap);
    return os.str();
}

inline std::uint64_t config_hash(const ManifestConfig& c) {
    return fnv1a64(canonical_config_line(c));
}

inline void save_manifest(const Manifest& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary);  // binary: exact newline control
    if (!f) throw ParseError("cannot open for write: " + path);
    char hash[17];
    std::snprintf(hash, sizeof(hash), "%016" PRIx64, config_hash(m.config));
    f << "dsdmanifest 1\n";
    f << "config " << canonical_config_line(m.config) << " hash=" << hash << "\n";
    for (const auto& c : m.candidates) {
        f << "candidate id=" << c.id << " group=" << c.group
          << " prompt=" << detail::fmt_tokens(c.prompt_tokens) << " image=" << c.image_path
          << " ref=" << c.reference_path << " s_text=" << detail::fmt_double(c.s_text)
          << " s_visual=" << detail::fmt_double(c.s_visual)
          << " q=" << detail::fmt_double(c.q) << " level=" << c.level << "\n";
    }
    for (const auto& p : m.pairs) {
        f << "pair winner=" << p.winner_id << " loser=" << p.loser_id
          << " prompt=" << detail::fmt_tokens(p.prompt_tokens) << " ref=" << p.reference_path
          << "\n";
    }
    if (!f) throw ParseError("write failed: " + path);
}

inline Manifest load_manifest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open for read: " + path);

    Manifest m;
    std::string line;
    std::size_t line_no = 0;
    bool saw_header = false, saw_config = false;

    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tag;
        ss >> tag;
        std::string rest;
        std::getline(ss, rest);

        if (!saw_header) {
            if (tag != "dsdmanifest" || rest != " 1")
                throw ParseError("not a manifest file (bad header)", line_no);
            saw_header = true;
            continue;
        }
        if (tag == "config") {
            if (saw_config) throw ParseError("duplicate config line", line_no);
            detail::FieldMap kv(rest, line_no);
            ManifestConfig& c = m.config;
            c.schema_version = static_cast<int>(kv.integer("schema"));
            if (c.schema_version != 1)
                throw SchemaError("unsupported manifest schema " +
                                  std::to_string(c.schema_version));
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
            char expect[17];
            std::snprintf(expect, sizeof(expect), "%016" PRIx64, config_hash(c));
            if (kv.str("hash") != expect)
                throw IntegrityError("config hash mismatch in " + path);
            saw_config = true;
            continue;
        }
        if (!saw_config) throw ParseError("record before config line", line_no);
        if (tag == "candidate") {
            detail::FieldMap kv(rest, line_no);
            ManifestCandidate c;
            c.id = kv.integer("id");
            c.group = kv.integer("group");
            c.prompt_tokens = detail::parse_tokens(kv.str("prompt"), line_no);
            c.image_path = kv.str("image");
            c.reference_path = kv.str("ref");
            c.s_text = kv.num("s_text");
            c.s_visual = kv.num("s_visual");
            c.q = kv.num("q");
            c.level = static_cast<int>(kv.integer("level"));
            m.candidates.push_back(std::move(c));
            continue;
        }
        if (tag == "pair") {
            detail::FieldMap kv(rest, line_no);
            ManifestPair p;
            p.winner_id = kv.integer("winner");
            p.loser_id = kv.integer("loser");
            p.prompt_tokens = detail::parse_tokens(kv.str("prompt"), line_no);
            p.reference_path = kv.str("ref");
            m.pairs.push_back(std::move(p));
            continue;
        }
        throw ParseError("unknown record tag '" + tag + "'", line_no);
    }
    if (!saw_header) throw ParseError("empty manifest file", 0);
    if (!saw_config) throw ParseError("manifest has no config line", line_no);

    // referential integrity and the winner/loser contract
    std::map<std::int64_t, const ManifestCandidate*> by_id;
    for (const auto& c : m.candidates) {
        if (!by_id.emplace(c.id, &c).second)
            throw IntegrityError("duplicate candidate id " + std::to_string(c.id));
    }
    for (const auto& p : m.pairs) {
        auto w = by_id.find(p.winner_id);
        auto l = by_id.find(p.loser_id);
        if (w == by_id.end())
            throw IntegrityError("pair references unknown winner id " +
                                 std::to_string(p.winner_id));
        if (l == by_id.end())
            throw IntegrityError("pair references unknown loser id " +
                                 std::to_string(p.loser_id));
        if (w->second->level < 4 || l->second->level > 3 || l->second->level < 1 ||
            !(w->second->q > l->second->q))
            throw IntegrityError("pair " + std::to_string(p.winner_id) + "/" +
                                 std::to_string(p.loser_id) +
                                 " violates the winner/loser contract");
    }
    return m;
}

// Generate, score, rank and pair a synthetic dataset, write every image as a
// `.ten` file under out_dir/images/ and the manifest as out_dir/manifest.txt.
// Byte-deterministic in the config.
inline Manifest build_and_save_dataset(const ManifestConfig& cfg, const std::string& out_dir) {
    SynthConfig synth;
    synth.height = cfg.height;
    synth.width = cfg.width;
    synth.channels = cfg.channels;
    synth.bg_level = cfg.bg_level;
    synth.subject_level = cfg.subject_level;
    synth.subject_axis = cfg.subject_axis;
    synth.min_subject_gap = cfg.min_subject_gap;

    ImageEncoder img_enc(cfg.patch, cfg.d_clip, cfg.image_seed);
    TextEncoder text_enc =
        make_aligned_text_encoder(cfg.vocab, cfg.d_text, cfg.text_seed, img_enc, synth);

    const auto instances = synth_triplets(cfg.n_instances, synth, cfg.synth_seed);
    const PipelineResult result = run_dataset_pipeline(instances, text_enc, img_enc, cfg.phi,
                                                       cfg.cap, cfg.pair_seed, cfg.group_mode);

    std::filesystem::create_directories(std::filesystem::path(out_dir) / "images");
    auto cand_path = [](std::int64_t id) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "images/c%06lld.ten", static_cast<long long>(id));
        return std::string(buf);
    };
    auto ref_path = [](std::int64_t group) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "images/r%06lld.ten", static_cast<long long>(group));
        return std::string(buf);
    };

    Manifest m;
    m.config = cfg;
    for (const auto& sc : result.scored) {
        const std::int64_t group = sc.candidate.id / 3;
        ManifestCandidate c;
        c.id = sc.candidate.id;
        c.group = group;
        c.prompt_tokens = sc.candidate.prompt_tokens;
        c.image_path = cand_path(sc.candidate.id);
        c.reference_path = ref_path(group);
        c.s_text = sc.s_text;
        c.s_visual = sc.s_visual;
        c.q = sc.q;
        c.level = sc.level;
        m.candidates.push_back(std::move(c));
        save_tensor(out_dir + "/" + cand_path(sc.candidate.id), sc.candidate.image);
    }
    for (std::size_t i = 0; i < instances.size(); ++i)
        save_tensor(out_dir + "/" + ref_path(static_cast<std::int64_t>(i)),
                    instances[i].reference_image);
    for (const auto& p : result.pairs) {
        ManifestPair mp;
        mp.winner_id = p.winner_id;
        mp.loser_id = p.loser_id;
        mp.prompt_tokens = p.prompt_tokens;
        mp.reference_path = ref_path(p.winner_id / 3);
        m.pairs.push_back(std::move(mp));
    }
    save_manifest(m, out_dir + "/manifest.txt");
    return m;
}

// Rebuild the frozen featurizers a manifest was scored with.
inline SynthConfig synth_config_from(const ManifestConfig& c) {
    SynthConfig s;
    s.height = c.height;
    s.width = c.width;
    s.channels = c.channels;
    s.bg_level = c.bg_level;
    s.subject_level = c.subject_level;
    s.subject_axis = c.subject_axis;
    s.min_subject_gap = c.min_subject_gap;
    return s;
}

inline ImageEncoder image_encoder_from(const ManifestConfig& c) {
    return ImageEncoder(c.patch, c.d_clip, c.image_seed);
}

inline TextEncoder text_encoder_from(const ManifestConfig& c) {
    ImageEncoder img = image_encoder_from(c);
    return make_aligned_text_encoder(c.vocab, c.d_text, c.text_seed, img, synth_config_from(c));
}

}  // namespace dsd
