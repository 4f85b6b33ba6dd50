// Copyright (c) 2026 dsd authors
// SPDX-License-Identifier: Apache-2.0
//
// Quality scoring, five-level ranking, pair curation, the synthetic triplet
// generator, and manifest round trips.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dsd/manifest.hpp"
#include "dsd/synth.hpp"

using namespace dsd;

namespace {

std::vector<double> pooled_of(const ImageEncoder& enc, const Tensor& img) {
    return pooled(enc.encode(img).tokens);
}

// image whose pooled embedding is exactly orthogonal to that of `base`
// (pooled embeddings are linear in the image, so one Gram-Schmidt step in
// image space does it)
Tensor orthogonalized(const ImageEncoder& enc, const Tensor& base, const Tensor& other) {
    auto pb = pooled_of(enc, base);
    auto po = pooled_of(enc, other);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < pb.size(); ++i) {
        num += po[i] * pb[i];
        den += pb[i] * pb[i];
    }
    const double c = num / den;
    std::vector<double> img(other.data());
    for (std::size_t i = 0; i < img.size(); ++i) img[i] -= c * base.data()[i];
    return Tensor(std::move(img), other.shape());
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

Manifest demo_manifest() {
    Manifest m;
    m.config.n_instances = 1;
    m.config.text_seed = 5;
    m.config.image_seed = 6;
    m.config.synth_seed = 7;
    m.config.pair_seed = 8;
    auto cand = [](std::int64_t id, double q, int level) {
        ManifestCandidate c;
        c.id = id;
        c.group = 0;
        c.prompt_tokens = {2};
        char buf[32];
        std::snprintf(buf, sizeof(buf), "images/c%06lld.ten", static_cast<long long>(id));
        c.image_path = buf;
        c.reference_path = "images/r000000.ten";
        c.s_text = q;
        c.s_visual = q / 3.0;
        c.q = q;
        c.level = level;
        return c;
    };
    m.candidates = {cand(0, 0.9, 5), cand(1, 0.5, 4), cand(2, 0.1, 3)};
    ManifestPair p;
    p.prompt_tokens = {2};
    p.reference_path = "images/r000000.ten";
    p.winner_id = 0;
    p.loser_id = 2;
    m.pairs = {p};
    return m;
}

}  // namespace

TEST_CASE("score_candidate endpoint cases") {
    SynthConfig synth;
    ImageEncoder ienc(2, 64, 1);
    TextEncoder tenc(16, 64, 2);
    Rng rng(3);
    Tensor img = Tensor::randn({8, 8, 3}, rng);

    SECTION("prompt row equal to the pooled embedding gives s_text = 1") {
        tenc.anchor_row(0, pooled_of(ienc, img));
        Candidate c{7, img, {0}, img};
        ScoredCandidate sc = score_candidate(c, tenc, ienc, 0.7);
        CHECK(sc.s_text == Catch::Approx(1.0).margin(1e-12));
        CHECK(sc.s_visual == Catch::Approx(1.0).margin(1e-12));
        CHECK(sc.q == Catch::Approx(1.0).margin(1e-12));
        CHECK(sc.level == 0);
    }

    SECTION("phi=0.7 with s_text=1, s_visual=0 gives q=0.7") {
        tenc.anchor_row(0, pooled_of(ienc, img));
        Tensor ref = orthogonalized(ienc, img, Tensor::randn({8, 8, 3}, rng));
        Candidate c{7, img, {0}, ref};
        ScoredCandidate sc = score_candidate(c, tenc, ienc, 0.7);
        CHECK(sc.s_text == Catch::Approx(1.0).margin(1e-12));
        CHECK(sc.s_visual == Catch::Approx(0.0).margin(1e-12));
        CHECK(sc.q == Catch::Approx(0.7).margin(1e-12));
    }

    SECTION("orthogonal prompt with identical reference gives q = 1 - phi") {
        // Gram-Schmidt the token row against the pooled embedding
        auto pi = pooled_of(ienc, img);
        Rng r2(4);
        std::vector<double> row(pi.size());
        for (double& v : row) v = r2.normal();
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < pi.size(); ++i) {
            num += row[i] * pi[i];
            den += pi[i] * pi[i];
        }
        for (std::size_t i = 0; i < pi.size(); ++i) row[i] -= (num / den) * pi[i];
        tenc.anchor_row(1, row);
        Candidate c{7, img, {1}, img};
        ScoredCandidate sc = score_candidate(c, tenc, ienc, 0.7);
        CHECK(sc.s_text == Catch::Approx(0.0).margin(1e-12));
        CHECK(sc.s_visual == Catch::Approx(1.0).margin(1e-12));
        CHECK(sc.q == Catch::Approx(0.3).margin(1e-12));
    }

    SECTION("zero-norm embedding is rejected") {
        Candidate c{7, Tensor::zeros({8, 8, 3}), {0}, img};
        CHECK_THROWS_AS(score_candidate(c, tenc, ienc, 0.7), DegenerateEmbeddingError);
    }

    SECTION("phi outside [0,1] is rejected") {
        Candidate c{7, img, {0}, img};
        CHECK_THROWS_AS(score_candidate(c, tenc, ienc, 1.5), ConfigError);
    }
}

TEST_CASE("q is strictly increasing in each similarity for phi in (0,1)") {
    SynthConfig synth;
    ImageEncoder ienc(2, 64, 11);
    TextEncoder tenc(16, 64, 12);
    Rng rng(13);
    Tensor img = Tensor::randn({8, 8, 3}, rng);
    auto pi = pooled_of(ienc, img);
    tenc.anchor_row(0, pi);  // s_text = 1
    std::vector<double> half(pi);
    Rng r2(14);
    for (std::size_t i = 0; i < half.size(); ++i) half[i] += 3.0 * r2.normal();
    tenc.anchor_row(1, half);  // s_text < 1

    Candidate high{0, img, {0}, img};
    Candidate low{1, img, {1}, img};
    for (double phi : {0.2, 0.5, 0.7, 0.95}) {
        ScoredCandidate a = score_candidate(high, tenc, ienc, phi);
        ScoredCandidate b = score_candidate(low, tenc, ienc, phi);
        REQUIRE(a.s_text > b.s_text);
        CHECK(a.q > b.q);  // same s_visual, higher s_text
    }
}

TEST_CASE("rank_levels quantile split") {
    auto mk = [](std::int64_t id, double q) {
        ScoredCandidate sc;
        sc.candidate.id = id;
        sc.q = q;
        return sc;
    };

    SECTION("10 distinct scores give two per level") {
        std::vector<ScoredCandidate> v;
        for (int i = 0; i < 10; ++i) v.push_back(mk(i, 0.1 * (10 - i)));
        auto ranked = rank_levels(v);
        REQUIRE(ranked.size() == 10);
        for (int i = 0; i < 10; ++i) CHECK(ranked[std::size_t(i)].level == 5 - i / 2);
        CHECK(ranked[0].candidate.id == 0);
        CHECK(ranked[1].candidate.id == 1);
    }

    SECTION("n=3 populates levels 5,4,3") {
        auto ranked = rank_levels({mk(0, 0.2), mk(1, 0.9), mk(2, 0.5)});
        REQUIRE(ranked.size() == 3);
        CHECK(ranked[0].candidate.id == 1);
        CHECK(ranked[0].level == 5);
        CHECK(ranked[1].candidate.id == 2);
        CHECK(ranked[1].level == 4);
        CHECK(ranked[2].candidate.id == 0);
        CHECK(ranked[2].level == 3);
    }

    SECTION("equal scores fall back to id order") {
        auto ranked = rank_levels({mk(4, 0.5), mk(1, 0.5), mk(3, 0.5), mk(0, 0.5), mk(2, 0.5)});
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(ranked[i].candidate.id == static_cast<std::int64_t>(i));
            CHECK(ranked[i].level == 5 - static_cast<int>(i));
        }
    }
}

TEST_CASE("rank_levels ordering matches an independent sort oracle") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(mix64(seed, 0x0c1e));
        const std::size_t n = 1 + rng.below(1000);
        std::vector<ScoredCandidate> v(n);
        std::vector<std::pair<double, std::int64_t>> oracle(n);
        for (std::size_t i = 0; i < n; ++i) {
            v[i].candidate.id = static_cast<std::int64_t>(i);
            v[i].q = (rng.below(4) == 0) ? 0.5 : rng.uniform01();  // force some ties
            oracle[i] = {-v[i].q, v[i].candidate.id};
        }
        std::stable_sort(oracle.begin(), oracle.end());
        auto ranked = rank_levels(v);
        REQUIRE(ranked.size() == n);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(ranked[i].q == -oracle[i].first);
            CHECK(ranked[i].candidate.id == oracle[i].second);
        }
    }
}

TEST_CASE("make_pairs capped cartesian") {
    auto mk = [](std::int64_t id, double q, int level) {
        ScoredCandidate sc;
        sc.candidate.id = id;
        sc.candidate.prompt_tokens = {1};
        sc.candidate.reference_image = Tensor::scalar(0.0);
        sc.q = q;
        sc.level = level;
        return sc;
    };
    std::vector<ScoredCandidate> scored = {mk(0, 0.9, 5), mk(1, 0.8, 4), mk(2, 0.3, 3),
                                           mk(3, 0.2, 2), mk(4, 0.1, 1)};

    SECTION("cap above pool size gives the full cartesian product") {
        auto pairs = make_pairs(scored, 3, 42);
        CHECK(pairs.size() == 6);
        for (const auto& p : pairs) {
            CHECK(p.winner_id <= 1);
            CHECK(p.loser_id >= 2);
        }
    }

    SECTION("cap=1 gives one pair per winner") {
        auto pairs = make_pairs(scored, 1, 42);
        CHECK(pairs.size() == 2);
    }

    SECTION("same seed reproduces the same pairs") {
        auto a = make_pairs(scored, 2, 7);
        auto b = make_pairs(scored, 2, 7);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].winner_id == b[i].winner_id);
            CHECK(a[i].loser_id == b[i].loser_id);
        }
    }

    SECTION("missing winners or losers raise an empty-pool error") {
        std::vector<ScoredCandidate> only_winners = {mk(0, 0.9, 5), mk(1, 0.8, 4)};
        CHECK_THROWS_AS(make_pairs(only_winners, 1, 1), EmptyPoolError);
        std::vector<ScoredCandidate> only_losers = {mk(0, 0.3, 2), mk(1, 0.2, 1)};
        CHECK_THROWS_AS(make_pairs(only_losers, 1, 1), EmptyPoolError);
    }
}

TEST_CASE("pair count over triplet groups lands near 0.6 pairs per sample") {
    // 3334 groups of 3 candidates = 10002 scored samples
    Rng rng(2024);
    std::size_t total_pairs = 0, total_candidates = 0;
    for (int g = 0; g < 3334; ++g) {
        std::vector<ScoredCandidate> group(3);
        for (int k = 0; k < 3; ++k) {
            group[std::size_t(k)].candidate.id = g * 3 + k;
            group[std::size_t(k)].candidate.prompt_tokens = {1};
            group[std::size_t(k)].candidate.reference_image = Tensor::scalar(0.0);
            group[std::size_t(k)].q = rng.uniform01();
        }
        auto ranked = rank_levels(std::move(group));
        auto pairs = make_pairs(ranked, 1, mix64(99, std::uint64_t(g)));
        total_pairs += pairs.size();
        total_candidates += 3;
    }
    const double ratio = double(total_pairs) / double(total_candidates);
    CHECK(ratio > 0.5);
    CHECK(ratio < 0.75);
}

TEST_CASE("synth_triplets is deterministic") {
    SynthConfig cfg;
    auto a = synth_triplets(5, cfg, 31);
    auto b = synth_triplets(5, cfg, 31);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].prompt_tokens == b[i].prompt_tokens);
        CHECK(a[i].reference_image.data() == b[i].reference_image.data());
        CHECK(a[i].compliant.data() == b[i].compliant.data());
        CHECK(a[i].identity_broken.data() == b[i].identity_broken.data());
        CHECK(a[i].instruction_ignoring.data() == b[i].instruction_ignoring.data());
    }
    auto c = synth_triplets(5, cfg, 32);
    CHECK(a[0].reference_image.data() != c[0].reference_image.data());
}

TEST_CASE("same-subject scenes embed closer than different subjects") {
    SynthConfig cfg;
    ImageEncoder ienc(2, 128, 77);
    Rng rng(78);
    int ok = 0;
    const int trials = 200;
    for (int i = 0; i < trials; ++i) {
        SynthScene a;
        a.bg_color = int(rng.below(SynthConfig::n_colors));
        a.position = int(rng.below(SynthConfig::n_positions));
        a.subject_phi = 6.2831853 * rng.uniform01();
        SynthScene same = a;
        same.bg_color = (a.bg_color + 1) % SynthConfig::n_colors;  // unrelated edit
        SynthScene diff = same;
        diff.subject_phi = a.subject_phi + 1.0 + 4.0 * rng.uniform01();

        auto pa = pooled_of(ienc, render_scene(cfg, a));
        auto ps = pooled_of(ienc, render_scene(cfg, same));
        auto pd = pooled_of(ienc, render_scene(cfg, diff));
        ok += cosine(pa, ps) > cosine(pa, pd);
    }
    CHECK(double(ok) / trials >= 0.95);
}

TEST_CASE("compliant targets outscore both distractors on at least 95%") {
    SynthConfig synth;
    ImageEncoder ienc(2, 128, 42);
    TextEncoder tenc = make_aligned_text_encoder(64, 128, 43, ienc, synth);
    auto instances = synth_triplets(600, synth, 7);
    int comp_best = 0, vis_order = 0, text_order = 0;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        auto cands = candidates_of(instances[i], static_cast<std::int64_t>(i));
        auto c0 = score_candidate(cands[0], tenc, ienc, 0.7);
        auto c1 = score_candidate(cands[1], tenc, ienc, 0.7);
        auto c2 = score_candidate(cands[2], tenc, ienc, 0.7);
        comp_best += (c0.q > c1.q && c0.q > c2.q);
        vis_order += (c2.s_visual > c1.s_visual);
        text_order += (c2.s_text < c1.s_text);
    }
    const double n = static_cast<double>(instances.size());
    CHECK(comp_best / n >= 0.95);
    // the ignoring target keeps the subject (visual), the broken target keeps
    // the instruction (text)
    CHECK(vis_order / n >= 0.99);
    CHECK(text_order / n >= 0.90);
}

TEST_CASE("pipeline pairs satisfy the winner/loser contract") {
    SynthConfig synth;
    ImageEncoder ienc(2, 128, 50);
    TextEncoder tenc = make_aligned_text_encoder(64, 128, 51, ienc, synth);
    auto instances = synth_triplets(40, synth, 52);
    auto result = run_dataset_pipeline(instances, tenc, ienc, 0.7, 1, 53);
    REQUIRE(!result.pairs.empty());
    CHECK(result.pairs.size() == 2 * instances.size());  // two winners, one loser per group

    std::map<std::int64_t, const ScoredCandidate*> by_id;
    for (const auto& sc : result.scored) by_id[sc.candidate.id] = &sc;
    for (const auto& p : result.pairs) {
        const auto* w = by_id.at(p.winner_id);
        const auto* l = by_id.at(p.loser_id);
        CHECK(w->level >= 4);
        CHECK(l->level <= 3);
        CHECK(l->level >= 1);
        CHECK(w->q > l->q);
    }
}

TEST_CASE("manifest round trip is identity") {
    auto dir = std::filesystem::temp_directory_path() / "dsd_manifest_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "m.txt").string();
    Manifest m = demo_manifest();
    save_manifest(m, path);
    Manifest back = load_manifest(path);
    CHECK(back == m);

    // resaving the loaded manifest reproduces the bytes
    const std::string path2 = (dir / "m2.txt").string();
    save_manifest(back, path2);
    CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("truncated manifest reports the offending line") {
    auto dir = std::filesystem::temp_directory_path() / "dsd_manifest_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "trunc.txt").string();
    save_manifest(demo_manifest(), path);
    std::string bytes = slurp(path);
    // cut into the middle of the candidate block
    std::ofstream f(path, std::ios::binary);
    f << bytes.substr(0, bytes.find("s_text"));
    f.close();
    try {
        load_manifest(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line == 3);
    }
}

TEST_CASE("dangling pair ids are an integrity error") {
    auto dir = std::filesystem::temp_directory_path() / "dsd_manifest_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "dangling.txt").string();
    Manifest m = demo_manifest();
    m.pairs[0].loser_id = 99;
    save_manifest(m, path);
    CHECK_THROWS_AS(load_manifest(path), IntegrityError);
}

TEST_CASE("hand-edited config is caught by the stored hash") {
    auto dir = std::filesystem::temp_directory_path() / "dsd_manifest_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "tampered.txt").string();
    save_manifest(demo_manifest(), path);
    std::string bytes = slurp(path);
    auto at = bytes.find("cap=1");
    REQUIRE(at != std::string::npos);
    bytes.replace(at, 5, "cap=2");
    std::ofstream f(path, std::ios::binary);
    f << bytes;
    f.close();
    CHECK_THROWS_AS(load_manifest(path), IntegrityError);
}
