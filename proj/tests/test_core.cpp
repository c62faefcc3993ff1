#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "codealign/core.hpp"
#include "codealign/warp.hpp"

using namespace codealign;
using core::FeatureMap;
using core::Pose;
using core::Rng;
using core::RngSeed;

namespace {

FeatureMap single(double v) {
    FeatureMap f(1, 1, 1);
    f.data[0] = v;
    return f;
}

FeatureMap random_map(int h, int w, int c, Rng& rng, double scale = 2.0) {
    FeatureMap f(h, w, c);
    for (auto& v : f.data) v = rng.uniform(-scale, scale);
    return f;
}

}  // namespace

TEST_CASE("smooth_l1 hand-computed values") {
    // |d| = 2 >= beta: loss = 2 - 0.5, grad sign(d)
    auto r = core::smooth_l1(single(2.0), single(0.0), 1.0);
    CHECK(r.loss == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(r.grad.data[0] == doctest::Approx(1.0).epsilon(1e-12));

    // quadratic branch: 0.5 * 0.25 / 1
    r = core::smooth_l1(single(0.5), single(0.0), 1.0);
    CHECK(r.loss == doctest::Approx(0.125).epsilon(1e-12));
    CHECK(r.grad.data[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("smooth_l1 identity case is exactly zero") {
    Rng rng(RngSeed{11});
    const auto a = random_map(3, 4, 5, rng);
    const auto r = core::smooth_l1(a, a, 1.0);
    CHECK(r.loss == 0.0);
    for (double g : r.grad.data) CHECK(g == 0.0);
}

TEST_CASE("smooth_l1 is symmetric in value, antisymmetric in gradient") {
    Rng rng(RngSeed{12});
    const auto a = random_map(2, 3, 4, rng);
    const auto b = random_map(2, 3, 4, rng);
    const auto ab = core::smooth_l1(a, b, 0.7);
    const auto ba = core::smooth_l1(b, a, 0.7);
    CHECK(ab.loss == doctest::Approx(ba.loss).epsilon(1e-14));
    for (std::size_t i = 0; i < ab.grad.data.size(); ++i) {
        CHECK(ab.grad.data[i] == doctest::Approx(-ba.grad.data[i]).epsilon(1e-14));
    }
}

TEST_CASE("smooth_l1 rejects shape mismatch") {
    CHECK_THROWS_AS(core::smooth_l1(FeatureMap(1, 2, 1), FeatureMap(2, 1, 1), 1.0),
                    core::ShapeError);
    CHECK_THROWS_AS(core::smooth_l1(single(0.0), single(0.0), 0.0), core::ConfigError);
}

TEST_CASE("smooth_l1 gradient matches central finite differences") {
    Rng rng(RngSeed{13});
    // 100 random evaluation points spread over a handful of maps.
    for (int trial = 0; trial < 10; ++trial) {
        auto a = random_map(2, 5, 1, rng);
        const auto b = random_map(2, 5, 1, rng);
        const double beta = 0.4 + 0.4 * rng.uniform();
        const auto base = core::smooth_l1(a, b, beta);
        for (int k = 0; k < 10; ++k) {
            const std::size_t i = static_cast<std::size_t>(rng.uniform_int(a.data.size()));
            const double h = 1e-6;
            const double orig = a.data[i];
            a.data[i] = orig + h;
            const double up = core::smooth_l1(a, b, beta).loss;
            a.data[i] = orig - h;
            const double dn = core::smooth_l1(a, b, beta).loss;
            a.data[i] = orig;
            const double fd = (up - dn) / (2.0 * h);
            const double an = base.grad.data[i];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
            CHECK(std::abs(fd - an) / denom < 1e-5);
        }
    }
}

TEST_CASE("softmax_xent hand-computed values") {
    {
        const std::vector<double> logits{0.0, 0.0};
        const auto r = core::softmax_xent(logits, 0);
        CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
        CHECK(r.grad[0] == doctest::Approx(-0.5).epsilon(1e-12));
        CHECK(r.grad[1] == doctest::Approx(0.5).epsilon(1e-12));
    }
    {
        // stabilization: no overflow, loss ~ 0
        const std::vector<double> logits{1000.0, 0.0};
        const auto r = core::softmax_xent(logits, 0);
        CHECK(std::isfinite(r.loss));
        CHECK(r.loss == doctest::Approx(0.0).epsilon(1e-12));
    }
    {
        const std::vector<double> logits{1.0, 2.0, 3.0};
        const auto r = core::softmax_xent(logits, 2);
        const double expect = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
        CHECK(r.loss == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("softmax_xent gradient sums to zero and matches finite differences") {
    Rng rng(RngSeed{14});
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> logits(5);
        for (auto& v : logits) v = rng.uniform(-3.0, 3.0);
        const int target = static_cast<int>(rng.uniform_int(5));
        const auto r = core::softmax_xent(logits, target);

        double sum = 0.0;
        for (double g : r.grad) sum += g;
        CHECK(std::abs(sum) < 1e-12);

        for (int k = 0; k < 5; ++k) {
            const double h = 1e-6;
            auto up = logits, dn = logits;
            up[k] += h;
            dn[k] -= h;
            const double fd =
                (core::softmax_xent(up, target).loss - core::softmax_xent(dn, target).loss) /
                (2.0 * h);
            const double denom = std::max({std::abs(fd), std::abs(r.grad[k]), 1e-8});
            CHECK(std::abs(fd - r.grad[k]) / denom < 1e-5);
        }
    }
    CHECK_THROWS_AS(core::softmax_xent(std::vector<double>{0.0}, 1), core::IndexError);
}

TEST_CASE("sgd_step basics") {
    CHECK(core::sgd_step({1.0}, {0.0}, 0.5)[0] == 1.0);
    CHECK(core::sgd_step({1.0}, {1.0}, 0.1)[0] == doctest::Approx(0.9).epsilon(1e-15));
    CHECK_THROWS_AS(core::sgd_step({1.0}, {1.0, 2.0}, 0.1), core::ShapeError);

    // descending f(p) = p^2 from p = 1: monotone shrink toward 0
    std::vector<double> p{1.0};
    double prev = p[0];
    for (int i = 0; i < 20; ++i) {
        p = core::sgd_step(p, {2.0 * p[0]}, 0.1);
        CHECK(std::abs(p[0]) < std::abs(prev));
        prev = p[0];
    }
    CHECK(p[0] < 0.05);
}

TEST_CASE("logistic_xent gradient is sigmoid minus target") {
    const auto r = core::logistic_xent(0.0, 1.0);
    CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(r.grad == doctest::Approx(-0.5).epsilon(1e-12));
    // extreme logits stay finite
    CHECK(std::isfinite(core::logistic_xent(1000.0, 0.0).loss));
    CHECK(std::isfinite(core::logistic_xent(-1000.0, 1.0).loss));
}

TEST_CASE("rng streams are deterministic and derivation separates children") {
    Rng a(RngSeed{42}), b(RngSeed{42});
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    const auto s1 = core::derive_seed(RngSeed{42}, "noise", 1, 2);
    const auto s2 = core::derive_seed(RngSeed{42}, "noise", 1, 3);
    const auto s3 = core::derive_seed(RngSeed{42}, "dropout", 1, 2);
    CHECK(s1.value != s2.value);
    CHECK(s1.value != s3.value);
    CHECK(core::derive_seed(RngSeed{42}, "noise", 1, 2).value == s1.value);
}

TEST_CASE("rng normal has sane moments") {
    Rng rng(RngSeed{7});
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        sum += v;
        sq += v * v;
    }
    CHECK(std::abs(sum / n) < 0.03);
    CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("pose heading normalization lands in (-pi, pi]") {
    CHECK(Pose::normalize_heading(std::numbers::pi) == doctest::Approx(std::numbers::pi));
    CHECK(Pose::normalize_heading(-std::numbers::pi) == doctest::Approx(std::numbers::pi));
    CHECK(Pose::normalize_heading(3.0 * std::numbers::pi) == doctest::Approx(std::numbers::pi));
    CHECK(Pose::normalize_heading(0.5) == doctest::Approx(0.5));
    for (double h : {-10.0, -3.0, 0.0, 2.0, 9.0, 100.0}) {
        const double n = Pose::normalize_heading(h);
        CHECK(n > -std::numbers::pi - 1e-15);
        CHECK(n <= std::numbers::pi + 1e-15);
    }
}

TEST_CASE("identity warp is bitwise exact") {
    Rng rng(RngSeed{21});
    const auto f = random_map(8, 9, 3, rng);
    const Pose p{1.25, -2.5, 0.7};
    const auto w = collab::warp(f, p, p, 0.0, 1.0);
    CHECK(w.data == f.data);
}

TEST_CASE("integer-cell translation shifts content exactly") {
    Rng rng(RngSeed{22});
    const auto f = random_map(8, 8, 2, rng);
    const Pose from{0.0, 0.0, 0.0};
    const Pose to{2.0, 0.0, 0.0};  // two cells east
    const auto w = collab::warp(f, from, to, -7.0, 1.0);
    // target cell (r, c) looks up source cell (r, c+2)
    for (int r = 0; r < 8; ++r) {
        for (int c = 0; c < 8; ++c) {
            for (int ch = 0; ch < 2; ++ch) {
                if (c + 2 < 8) {
                    CHECK(w.at(r, c, ch) == f.at(r, c + 2, ch));
                } else {
                    CHECK(w.at(r, c, ch) == -7.0);
                }
            }
        }
    }
}

TEST_CASE("round-trip warp restores interior cells under integer shifts") {
    Rng rng(RngSeed{23});
    const auto f = random_map(10, 10, 1, rng);
    const Pose a{0.0, 0.0, 0.0};
    const Pose b{3.0, -2.0, 0.0};
    const auto fwd = collab::warp(f, a, b, 0.0, 1.0);
    const auto back = collab::warp(fwd, b, a, 0.0, 1.0);
    const auto idx_fwd = collab::warp_indices(10, 10, a, b, 1.0);
    const auto idx_back = collab::warp_indices(10, 10, b, a, 1.0);
    for (std::size_t i = 0; i < idx_back.size(); ++i) {
        if (idx_back[i] >= 0 && idx_fwd[static_cast<std::size_t>(idx_back[i])] >= 0) {
            CHECK(back.data[i] == f.data[i]);
        }
    }
}

TEST_CASE("pose noise is deterministic and zero sigmas are identity") {
    const Pose p{1.0, 2.0, 0.5};
    const auto q0 = collab::inject_pose_noise(p, 0.0, 0.0, RngSeed{5});
    CHECK(q0 == p);
    const auto q1 = collab::inject_pose_noise(p, 0.5, 0.1, RngSeed{5});
    const auto q2 = collab::inject_pose_noise(p, 0.5, 0.1, RngSeed{5});
    CHECK(q1 == q2);
    CHECK(q1.heading <= std::numbers::pi);
    CHECK(q1.heading > -std::numbers::pi);
}
