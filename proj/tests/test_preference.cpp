// Copyright (c) 2026 dsd authors
// SPDX-License-Identifier: Apache-2.0
//
// Preference objectives: Bradley-Terry loss, the four-term inner argument,
// the preference loss and its text-only baseline, implicit rewards.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dsd/gradcheck.hpp"
#include "dsd/preference.hpp"

using namespace dsd;

namespace {

struct Fixture {
    ModelConfig cfg = ModelConfig::tiny();
    NoiseSchedule s = build_schedule(ScheduleKind::linear, 10, 1e-3, 0.05);
    DenoiserParams dp;
    AdapterParams theta;
    AdapterParams ref;
    TextEncoder tenc;
    ImageEncoder ienc;

    explicit Fixture(std::uint64_t seed = 1000, double perturb_theta = 0.0)
        : dp(DenoiserParams::init(cfg, mix64(seed, 1))),
          theta(AdapterParams::init(cfg.adapter_config(), mix64(seed, 2))),
          ref(freeze_reference(theta)),
          tenc(cfg.vocab, cfg.d_text, mix64(seed, 3)),
          ienc(cfg.patch, cfg.d_clip, mix64(seed, 4)) {
        if (perturb_theta > 0.0) {
            Rng rng(mix64(seed, 5));
            for (auto& b : theta.blocks)
                b.w_v = Tensor::randn(b.w_v.shape(), rng, perturb_theta, true);
            theta.ipm_w1 = Tensor::randn(theta.ipm_w1.shape(), rng, perturb_theta, true);
        }
    }

    PreferenceSample sample(std::uint64_t seed) const {
        Rng rng(mix64(seed, 6));
        PreferenceSample smp;
        smp.c_p = tenc.encode({int(rng.below(std::uint64_t(cfg.vocab))),
                               int(rng.below(std::uint64_t(cfg.vocab)))});
        smp.image = ienc.encode(Tensor::randn(cfg.image_shape(), rng));
        smp.y0_w = Tensor::randn(cfg.image_shape(), rng);
        smp.y0_l = Tensor::randn(cfg.image_shape(), rng);
        return smp;
    }

    PreferenceBatch batch(std::uint64_t seed, int n) const {
        PreferenceBatch b;
        for (int i = 0; i < n; ++i) b.items.push_back(sample(mix64(seed, std::uint64_t(i))));
        return b;
    }
};

constexpr double kLn2 = 0.6931471805599453;

}  // namespace

TEST_CASE("bt_loss closed forms") {
    CHECK(bt_loss(1.3, 1.3) == Catch::Approx(kLn2).margin(1e-12));
    CHECK(bt_loss(21.0, 1.0) < 1e-8);
    // sigmoid identity: exp(-L(a,b)) + exp(-L(b,a)) = 1
    for (double d : {0.1, 1.0, -2.5, 7.0}) {
        const double l1 = bt_loss(d, 0.0), l2 = bt_loss(0.0, d);
        CHECK(std::exp(-l1) + std::exp(-l2) == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("dsd_inner_terms matches the symbolic expansion for a scalar model") {
    // denoisers eps_hat(y) = a*y and eps_hat(y) = r*y on 2-element tensors:
    // inner = (a^2 - r^2)(|yw|^2 - |yl|^2) - 2(a - r)(ew.yw - el.yl)
    NoiseSchedule s = build_schedule(ScheduleKind::linear, 5, 0.05, 0.2);
    const int t = 3;
    const double a = 0.8, r = 0.3;
    Rng rng(77);
    Tensor y0w = Tensor::randn({2}, rng), y0l = Tensor::randn({2}, rng);
    Tensor ew = Tensor::randn({2}, rng), el = Tensor::randn({2}, rng);
    Tensor yw = forward_diffuse(y0w, t, ew, s);
    Tensor yl = forward_diffuse(y0l, t, el, s);

    Tensor inner = dsd_inner_terms(ew, scale(yw, a), scale(yw, r), el, scale(yl, a), scale(yl, r));

    auto dot = [](const Tensor& x, const Tensor& y) {
        return x.data()[0] * y.data()[0] + x.data()[1] * y.data()[1];
    };
    const double expected = (a * a - r * r) * (dot(yw, yw) - dot(yl, yl)) -
                            2.0 * (a - r) * (dot(ew, yw) - dot(el, yl));
    CHECK(inner.value() == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("dsd_inner is exactly zero when theta equals the reference") {
    Fixture fx(2000);
    PreferenceSample smp = fx.sample(1);
    Rng rng(9);
    Tensor ew = Tensor::randn(fx.cfg.image_shape(), rng);
    Tensor el = Tensor::randn(fx.cfg.image_shape(), rng);
    Tensor inner = dsd_inner(fx.cfg, fx.dp, fx.theta, fx.ref, smp, 4, ew, el, fx.s, 1.0);
    CHECK(inner.value() == 0.0);
}

TEST_CASE("dsd_inner flips sign exactly under label swap") {
    Fixture fx(3000, /*perturb_theta=*/0.5);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        PreferenceSample smp = fx.sample(seed);
        Rng rng(mix64(seed, 10));
        Tensor ew = Tensor::randn(fx.cfg.image_shape(), rng);
        Tensor el = Tensor::randn(fx.cfg.image_shape(), rng);

        PreferenceSample swapped = smp;
        std::swap(swapped.y0_w, swapped.y0_l);

        const double fwd =
            dsd_inner(fx.cfg, fx.dp, fx.theta, fx.ref, smp, 3, ew, el, fx.s, 1.0).value();
        const double swp =
            dsd_inner(fx.cfg, fx.dp, fx.theta, fx.ref, swapped, 3, el, ew, fx.s, 1.0).value();
        CHECK(fwd != 0.0);
        CHECK(swp == -fwd);  // bit-exact
    }
}

TEST_CASE("dsd_loss equals ln 2 when theta equals the reference") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Fixture fx(mix64(seed, 4000));
        PreferenceBatch batch = fx.batch(seed, 3);
        DSDConfig dsd;
        const double loss =
            dsd_loss(batch, fx.cfg, fx.dp, fx.theta, fx.ref, fx.s, dsd, seed, 1.0).value();
        CHECK(std::abs(loss - kLn2) < 1e-9);
    }
}

TEST_CASE("dsd_loss is non-negative") {
    Fixture fx(5000, /*perturb_theta=*/0.5);
    DSDConfig dsd;
    dsd.beta = 50.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        PreferenceBatch batch = fx.batch(seed, 2);
        const double loss =
            dsd_loss(batch, fx.cfg, fx.dp, fx.theta, fx.ref, fx.s, dsd, seed, 1.0).value();
        CHECK(loss >= 0.0);
        CHECK(std::isfinite(loss));
    }
}

TEST_CASE("dsd_loss gradient passes finite differences across seeds") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Fixture fx(mix64(seed, 6000), /*perturb_theta=*/0.5);
        PreferenceBatch batch = fx.batch(seed, 2);
        DSDConfig dsd;
        dsd.beta = 2.0;  // keep sigmoid away from saturation for conditioning
        ParamSet ps;
        fx.theta.register_into(ps, "adapter.", false);
        auto f = [&](const ParamSet& live) {
            AdapterParams th = AdapterParams::bind(live, "adapter.", fx.cfg.adapter_config());
            return dsd_loss(batch, fx.cfg, fx.dp, th, fx.ref, fx.s, dsd, seed, 1.0);
        };
        auto rep = finite_diff_check(f, ps, 1e-5, 1e-4);
        INFO("seed " << seed << " worst " << rep.worst_param << " rel " << rep.max_rel_err);
        CHECK(rep.pass);
    }
}

TEST_CASE("dd_loss equals dsd_loss at gamma zero bit-exactly") {
    Fixture fx(7000, /*perturb_theta=*/0.5);
    DSDConfig dsd;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        PreferenceBatch batch = fx.batch(seed, 2);
        const double dd =
            dd_loss(batch, fx.cfg, fx.dp, fx.theta, fx.ref, fx.s, dsd, seed).value();
        const double ds =
            dsd_loss(batch, fx.cfg, fx.dp, fx.theta, fx.ref, fx.s, dsd, seed, 0.0).value();
        CHECK(dd == ds);
    }
}

TEST_CASE("loss decreases as the winning prediction improves") {
    // -log sigmoid(-k * inner) with inner strictly increasing in the
    // preference-alignment term: shrinking that term must shrink the loss.
    const double k = 0.5;
    const double reg = 1.0, repel = 2.0, norm = 1.5;
    double prev = 1e300;
    for (double align : {3.0, 2.0, 1.0, 0.5, 0.1}) {
        const double inner = (align - reg) - (repel - norm);
        const double loss = bt_loss(0.0, k * inner);  // == -log sigmoid(-k*inner)
        CHECK(loss < prev);
        prev = loss;
    }
}

TEST_CASE("implicit_reward_gap is zero when theta equals the reference") {
    Fixture fx(8000);
    PreferenceSample smp = fx.sample(3);
    DSDConfig dsd;
    const double gap =
        implicit_reward_gap(fx.cfg, fx.dp, fx.theta, fx.ref, smp, fx.s, dsd, 16, 5, 1.0);
    CHECK(gap == 0.0);
}

TEST_CASE("implicit_reward_gap flips sign under label swap") {
    Fixture fx(9000, /*perturb_theta=*/0.5);
    DSDConfig dsd;
    int decisive = 0;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        PreferenceSample smp = fx.sample(seed);
        PreferenceSample swapped = smp;
        std::swap(swapped.y0_w, swapped.y0_l);
        const double g =
            implicit_reward_gap(fx.cfg, fx.dp, fx.theta, fx.ref, smp, fx.s, dsd, 400, seed, 1.0);
        const double gs = implicit_reward_gap(fx.cfg, fx.dp, fx.theta, fx.ref, swapped, fx.s, dsd,
                                              400, seed, 1.0);
        if (std::abs(g) > 1e-6) {
            ++decisive;
            CHECK((g > 0) != (gs > 0));
        }
    }
    CHECK(decisive > 0);
}

TEST_CASE("one SGD step on dsd_loss decreases it on the same batch") {
    // mild perturbation and small beta keep the sigmoid in its active region
    Fixture fx(10000, /*perturb_theta=*/0.15);
    PreferenceBatch batch = fx.batch(11, 2);
    DSDConfig dsd;
    dsd.beta = 0.5;
    const std::uint64_t seed = 99;

    ParamSet ps;
    fx.theta.register_into(ps, "adapter.", false);
    auto f = [&](const ParamSet& live) {
        AdapterParams th = AdapterParams::bind(live, "adapter.", fx.cfg.adapter_config());
        return dsd_loss(batch, fx.cfg, fx.dp, th, fx.ref, fx.s, dsd, seed, 1.0);
    };
    const double before = f(ps).value();
    auto g = grad(f, ps);
    const double lr = 1e-5;
    for (const auto& [name, gt] : g) {
        std::vector<double> next = ps.at(name).data();
        for (std::size_t i = 0; i < next.size(); ++i) next[i] -= lr * gt.data()[i];
        ps.rebind(name, Tensor(std::move(next), ps.at(name).shape(), true));
    }
    const double after = f(ps).value();
    CHECK(after < before);
}
