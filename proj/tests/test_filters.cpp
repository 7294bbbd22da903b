#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "forgesem/ahf.hpp"
#include "forgesem/autograd.hpp"
#include "forgesem/ops.hpp"
#include "forgesem/rng.hpp"
#include "forgesem/tensor.hpp"
#include "support/fd.hpp"
#include "support/oracles.hpp"

using namespace forgesem;
namespace o = forgesem::ops;

namespace {

double channel_sum(const Tensor& w, int c) {
    const int kk = w.dim(2) * w.dim(3);
    double s = 0.0;
    for (int i = 0; i < kk; ++i)
        s += w[static_cast<std::size_t>(c) * kk + i];
    return s;
}

// Direct double-sum DFT magnitude, no separability.
TensorT<double> dft_naive(const Tensor& w, int channel, int k, int n) {
    const float* g = w.data() + static_cast<std::size_t>(channel) * k * k;
    const double tau = 2.0 * std::acos(-1.0);
    TensorT<double> out({n, n});
    for (int u = 0; u < n; ++u)
        for (int v = 0; v < n; ++v) {
            std::complex<double> acc(0.0, 0.0);
            for (int y = 0; y < k; ++y)
                for (int x = 0; x < k; ++x) {
                    const double ang = -tau * (static_cast<double>(u) * y / n +
                                               static_cast<double>(v) * x / n);
                    acc += static_cast<double>(g[y * k + x]) *
                           std::complex<double>(std::cos(ang), std::sin(ang));
                }
            out.at2(u, v) = std::abs(acc);
        }
    return out;
}

} // namespace

TEST_CASE("init weights for k=3 sigma=1 match scalar evaluation") {
    auto w = ahf_init_tensor<float>(3, 1.0, 2);
    for (int c = 0; c < 2; ++c) {
        const float* g = w.data() + static_cast<std::size_t>(c) * 9;
        CHECK(g[4] == doctest::Approx(0.795820).epsilon(1e-5));
        for (int i : {1, 3, 5, 7}) CHECK(g[i] == doctest::Approx(-0.123841).epsilon(1e-4));
        for (int i : {0, 2, 6, 8}) CHECK(g[i] == doctest::Approx(-0.075114).epsilon(1e-4));
    }
}

TEST_CASE("init sums to zero for any k and sigma") {
    for (int k : {3, 5, 7})
        for (double sigma : {0.5, 1.0, 2.0, 3.0}) {
            auto w = ahf_init_tensor<float>(k, sigma, 1);
            CHECK(std::fabs(channel_sum(w, 0)) < 1e-6);
            const int center = (k / 2) * k + (k / 2);
            CHECK(w[static_cast<std::size_t>(center)] > 0.0f);
            CHECK(w[static_cast<std::size_t>(center)] < 1.0f);
        }
}

TEST_CASE("init validates its arguments") {
    CHECK_THROWS_AS(ahf_init_tensor<float>(4, 1.0, 1), contract_error);
    CHECK_THROWS_AS(ahf_init_tensor<float>(1, 1.0, 1), contract_error);
    CHECK_THROWS_AS(ahf_init_tensor<float>(3, 0.0, 1), contract_error);
    CHECK_THROWS_AS(ahf_init_tensor<float>(3, -1.0, 1), contract_error);
}

TEST_CASE("projection of the k=3 sigma=1 kernel") {
    auto w = ahf_init_tensor<float>(3, 1.0, 1);
    ahf_project_tensor(w);
    CHECK(w[4] == -1.0f);
    for (int i : {1, 3, 5, 7}) CHECK(w[i] == doctest::Approx(0.155615).epsilon(1e-4));
    for (int i : {0, 2, 6, 8}) CHECK(w[i] == doctest::Approx(0.094386).epsilon(1e-4));
    const double total = channel_sum(w, 0);
    CHECK(std::fabs(total) < 1e-6);
    CHECK(std::fabs((total - w[4]) - 1.0) < 1e-6);
}

TEST_CASE("projection invariants hold per channel on random kernels") {
    Pcg32 rng(42, 1);
    for (int k : {3, 5}) {
        Tensor w({4, 1, k, k});
        for (std::size_t i = 0; i < w.numel(); ++i)
            w[i] = static_cast<float>(rng.uniform(-2.0, 2.0));
        ahf_project_tensor(w);
        const int center = (k / 2) * k + (k / 2);
        for (int c = 0; c < 4; ++c) {
            const float* g = w.data() + static_cast<std::size_t>(c) * k * k;
            CHECK(g[center] == -1.0f);
            const double total = channel_sum(w, c);
            CHECK(std::fabs(total) < 1e-6);
            CHECK(std::fabs((total - g[center]) - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("projection is idempotent up to rounding") {
    Pcg32 rng(43, 1);
    Tensor w({2, 1, 3, 3});
    for (std::size_t i = 0; i < w.numel(); ++i)
        w[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    ahf_project_tensor(w);
    Tensor once = w;
    ahf_project_tensor(w);
    for (std::size_t i = 0; i < w.numel(); ++i)
        CHECK(std::fabs(w[i] - once[i]) <= 1e-6f);
}

TEST_CASE("non-center weights halve when the denominator is two") {
    Tensor w({1, 1, 3, 3}, {0.5f, 0.25f, 0.25f, 0.5f, 7.0f, 0.25f, 0.125f, 0.0f, 0.125f});
    // non-center sum = 2, so den = 2 regardless of the center entry
    ahf_project_tensor(w);
    CHECK(w[0] == doctest::Approx(0.25f));
    CHECK(w[1] == doctest::Approx(0.125f));
    CHECK(w[4] == -1.0f);
    CHECK(w[6] == doctest::Approx(0.0625f));
    CHECK(w[7] == 0.0f);
}

TEST_CASE("degenerate denominator falls back to the uniform ring") {
    Tensor w({1, 1, 3, 3});
    for (std::size_t i = 0; i < 9; ++i) w[i] = 0.0f;
    w[4] = 3.0f;
    ahf_project_tensor(w);
    CHECK(w[4] == -1.0f);
    for (int i : {0, 1, 2, 3, 5, 6, 7, 8})
        CHECK(w[static_cast<std::size_t>(i)] == doctest::Approx(0.125f));
    CHECK(std::fabs(channel_sum(w, 0)) < 1e-6);
}

TEST_CASE("projected kernel kills constant images on the interior") {
    auto kern = fixed_highpass(3, 2);
    auto x = make_leaf<float>(Tensor::full({1, 2, 8, 8}, 3.7f), false);
    auto kv = make_leaf<float>(kern.weights, false);
    auto y = ahf_apply(kv, x);
    for (int c = 0; c < 2; ++c)
        for (int h = 1; h < 7; ++h)
            for (int w = 1; w < 7; ++w)
                CHECK(std::fabs(y->value.at4(0, c, h, w)) <= 1e-5f);
}

TEST_CASE("step edge response is local and matches the conv oracle") {
    auto kern = fixed_highpass(3, 1);
    const int col = 5;
    Tensor xt({1, 1, 10, 10});
    for (int h = 0; h < 10; ++h)
        for (int w = 0; w < 10; ++w)
            xt.at4(0, 0, h, w) = w >= col ? 1.0f : 0.0f;

    auto y = ahf_apply(make_leaf<float>(kern.weights, false),
                       make_leaf<float>(xt, false));

    auto ref = oracles::conv2d_naive(xt.cast<double>(), kern.weights.cast<double>(), {},
                                     1, 1, 1);
    for (std::size_t i = 0; i < ref.numel(); ++i)
        CHECK(std::fabs(static_cast<double>(y->value[i]) - ref[i]) < 1e-5);

    // interior responses vanish more than k columns from the edge
    for (int h = 1; h < 9; ++h)
        for (int w = 1; w < 9; ++w) {
            if (std::abs(w - col) >= 3) continue;
            if (w < col - 3 || w > col + 3)
                CHECK(std::fabs(y->value.at4(0, 0, h, w)) <= 1e-5f);
        }
    double peak = 0.0;
    for (int h = 1; h < 9; ++h)
        for (int w = col - 1; w <= col; ++w)
            peak = std::max(peak, std::fabs(static_cast<double>(y->value.at4(0, 0, h, w))));
    CHECK(peak > 0.1);
}

TEST_CASE("application is linear") {
    Pcg32 rng(44, 1);
    auto kern = fixed_highpass(3, 2);
    Tensor xt({1, 2, 6, 6});
    for (std::size_t i = 0; i < xt.numel(); ++i)
        xt[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    Tensor x2 = xt;
    for (std::size_t i = 0; i < x2.numel(); ++i) x2[i] *= 2.0f;

    auto kv = make_leaf<float>(kern.weights, false);
    auto y1 = ahf_apply(kv, make_leaf<float>(xt, false));
    auto y2 = ahf_apply(kv, make_leaf<float>(x2, false));
    for (std::size_t i = 0; i < y1->value.numel(); ++i)
        CHECK(std::fabs(y2->value[i] - 2.0f * y1->value[i]) < 1e-5f);
}

TEST_CASE("channel mismatch is rejected") {
    auto kern = fixed_highpass(3, 2);
    auto x = make_leaf<float>(Tensor({1, 3, 4, 4}), false);
    CHECK_THROWS_AS(ahf_apply(make_leaf<float>(kern.weights, false), x), contract_error);
}

TEST_CASE("mhfe produces the level shapes and is deterministic") {
    Pcg32 rng(45, 1);
    const int c = 3;
    Tensor xt({2, c, 32, 32});
    for (std::size_t i = 0; i < xt.numel(); ++i)
        xt[i] = static_cast<float>(rng.uniform(0.0, 1.0));

    auto build = [&](int levels) {
        std::vector<ValueT<float>> kernels;
        std::vector<MhfeMixerT<float>> mixers;
        Pcg32 r2(7, 2);
        for (int l = 0; l < levels; ++l) {
            auto w = ahf_init_tensor<float>(3, 1.0, c);
            ahf_project_tensor(w);
            kernels.push_back(make_leaf<float>(w, false));
            Tensor mw({c, c, 3, 3});
            for (std::size_t i = 0; i < mw.numel(); ++i)
                mw[i] = static_cast<float>(r2.uniform(-0.2, 0.2));
            Tensor mb({c});
            for (std::size_t i = 0; i < mb.numel(); ++i)
                mb[i] = static_cast<float>(r2.uniform(-0.1, 0.1));
            mixers.push_back({make_leaf<float>(mw, false), make_leaf<float>(mb, false)});
        }
        return mhfe_forward(make_leaf<float>(xt, false), levels, kernels, mixers);
    };

    auto p = build(2);
    REQUIRE(p.levels.size() == 2);
    CHECK(p.levels[0]->value.dim(2) == 32);
    CHECK(p.levels[0]->value.dim(3) == 32);
    CHECK(p.levels[1]->value.dim(2) == 16);
    CHECK(p.levels[1]->value.dim(3) == 16);

    auto q = build(2);
    CHECK(p.levels[0]->value.equal(q.levels[0]->value));
    CHECK(p.levels[1]->value.equal(q.levels[1]->value));
}

TEST_CASE("mhfe on constant input reduces to the mixer bias") {
    const int c = 2;
    std::vector<ValueT<float>> kernels;
    std::vector<MhfeMixerT<float>> mixers;
    auto w = ahf_init_tensor<float>(3, 1.0, c);
    ahf_project_tensor(w);
    kernels.push_back(make_leaf<float>(w, false));
    Tensor mw = Tensor::full({c, c, 3, 3}, 0.11f);
    Tensor mb({c}, {0.4f, -0.7f});
    mixers.push_back({make_leaf<float>(mw, false), make_leaf<float>(mb, false)});

    auto x = make_leaf<float>(Tensor::full({1, c, 12, 12}, 2.5f), false);
    auto p = mhfe_forward(x, 1, kernels, mixers);
    for (int ch = 0; ch < c; ++ch)
        for (int h = 3; h < 9; ++h)
            for (int ww = 3; ww < 9; ++ww)
                CHECK(p.levels[0]->value.at4(0, ch, h, ww) ==
                      doctest::Approx(mb[static_cast<std::size_t>(ch)]).epsilon(1e-4));
}

TEST_CASE("mhfe argument validation") {
    auto x = make_leaf<float>(Tensor({1, 1, 8, 8}), false);
    CHECK_THROWS_AS(mhfe_forward(x, 0, {}, {}), contract_error);
    CHECK_THROWS_AS(mhfe_forward(x, 2, {}, {}), contract_error);
}

TEST_CASE("gradients flow through ahf application and mhfe") {
    using fdsup::smooth_random;
    const auto cfg = fdsup::fd_config_f64();
    auto rep = fdsup::fd_check<double>(
        [](Pcg32& r) {
            return std::vector<TensorT<double>>{smooth_random<double>(r, {1, 2, 8, 8}, 0.5),
                                                smooth_random<double>(r, {2, 1, 3, 3}, 0.5)};
        },
        [](const std::vector<ValueT<double>>& l) {
            return o::mean_all(ahf_apply(l[1], l[0]));
        },
        40, cfg, 321);
    INFO("ahf_apply worst " << rep.worst_rel << " " << rep.detail);
    CHECK(rep.worst_rel <= cfg.tol);
}

TEST_CASE("freq response dc bin and delta kernel") {
    auto kern = fixed_highpass(3, 1);
    auto grid = freq_response(kern, 0, 8);
    CHECK(grid.at2(0, 0) <= 1e-6);

    AhfKernel delta;
    delta.k = 3;
    delta.channels = 1;
    delta.weights = Tensor::zeros({1, 1, 3, 3});
    delta.weights[0] = 1.0f;
    auto flat = freq_response(delta, 0, 8);
    for (std::size_t i = 0; i < flat.numel(); ++i)
        CHECK(flat[i] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("freq response matches the double-sum oracle") {
    auto kern = fixed_highpass(3, 1);
    for (int n : {8, 16}) {
        auto grid = freq_response(kern, 0, n);
        auto ref = dft_naive(kern.weights, 0, 3, n);
        REQUIRE(grid.numel() == ref.numel());
        for (std::size_t i = 0; i < grid.numel(); ++i)
            CHECK(std::fabs(grid[i] - ref[i]) < 1e-6);
    }
}

TEST_CASE("freq response csv starts with the size header") {
    auto kern = fixed_highpass(3, 1);
    auto csv = freq_response_csv(freq_response(kern, 0, 4));
    CHECK(csv.rfind("n=4\n", 0) == 0);
    int newlines = 0;
    for (char ch : csv)
        if (ch == '\n') ++newlines;
    CHECK(newlines == 5);
}

TEST_CASE("projection invariants survive 240 noisy update steps") {
    Pcg32 rng(46, 1);
    Tensor w = ahf_init_tensor<float>(3, 1.0, 3);
    ahf_project_tensor(w);
    const int center = 4;
    for (int step = 0; step < 240; ++step) {
        // stand-in for an sgd update
        for (std::size_t i = 0; i < w.numel(); ++i)
            w[i] += static_cast<float>(rng.uniform(-0.05, 0.05));
        ahf_project_tensor(w);
        for (int c = 0; c < 3; ++c) {
            const float* g = w.data() + static_cast<std::size_t>(c) * 9;
            REQUIRE(g[center] == -1.0f);
            const double total = channel_sum(w, c);
            REQUIRE(std::fabs(total) < 1e-6);
            REQUIRE(std::fabs((total - g[center]) - 1.0) < 1e-6);
        }
    }
}
