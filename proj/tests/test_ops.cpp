#include <cmath>

#include "ccnn/ops.hpp"
#include "ccnn/rng.hpp"
#include "ccnn/selfcheck.hpp"
#include "doctest.h"

using namespace ccnn;

namespace {

// Independent quadruple-loop valid cross-correlation, dilation-aware.
template <typename T>
Tensor<T> naive_conv(const Tensor<T>& x, const ConvKernel<T>& k) {
    const int outH = x.h - (k.kh - 1) * k.dilation;
    const int outW = x.w - (k.kw - 1) * k.dilation;
    Tensor<T> out(outH, outW, k.outChannels);
    for (int oy = 0; oy < outH; ++oy) {
        for (int ox = 0; ox < outW; ++ox) {
            for (int oc = 0; oc < k.outChannels; ++oc) {
                T acc = k.bias[static_cast<std::size_t>(oc)];
                for (int dy = 0; dy < k.kh; ++dy) {
                    for (int dx = 0; dx < k.kw; ++dx) {
                        for (int ic = 0; ic < k.inChannels; ++ic) {
                            acc += x.at(oy + dy * k.dilation, ox + dx * k.dilation, ic) *
                                   k.weights[k.windex(dy, dx, ic, oc)];
                        }
                    }
                }
                out.at(oy, ox, oc) = acc;
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> random_tensor(int h, int w, int c, Rng& rng, double lo = -1, double hi = 1) {
    Tensor<T> t(h, w, c);
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
ConvKernel<T> random_kernel(int kh, int kw, int inC, int outC, int dil, Rng& rng) {
    ConvKernel<T> k(kh, kw, inC, outC, dil);
    for (auto& v : k.weights) v = static_cast<T>(rng.uniform(-1, 1));
    for (auto& v : k.bias) v = static_cast<T>(rng.uniform(-1, 1));
    return k;
}

}  // namespace

TEST_CASE("conv: all-ones 3x3 window sums to 9") {
    Tensor<double> x(3, 3, 1, 1.0);
    ConvKernel<double> k(3, 3, 1, 1);
    std::fill(k.weights.begin(), k.weights.end(), 1.0);
    Tensor<double> y = conv_forward(x, k);
    CHECK(y.h == 1);
    CHECK(y.w == 1);
    CHECK(y.at(0, 0, 0) == doctest::Approx(9.0));
}

TEST_CASE("conv: dilation-2 lattice taps on a 5x5 input") {
    Tensor<double> x(5, 5, 1, 1.0);
    ConvKernel<double> k(3, 3, 1, 1, 2);
    std::fill(k.weights.begin(), k.weights.end(), 1.0);
    Tensor<double> y = conv_forward(x, k);
    CHECK(y.h == 1);
    CHECK(y.w == 1);
    CHECK(y.at(0, 0, 0) == doctest::Approx(9.0));
}

TEST_CASE("conv matches the nested-loop oracle") {
    Rng rng(99);
    Tensor<double> x = random_tensor<double>(8, 8, 2, rng);
    for (int dil : {1, 2}) {
        ConvKernel<double> k = random_kernel<double>(3, 3, 2, 3, dil, rng);
        Tensor<double> got = conv_forward(x, k);
        Tensor<double> want = naive_conv(x, k);
        REQUIRE(got.same_shape(want));
        double worst = 0;
        for (std::size_t i = 0; i < got.data.size(); ++i) {
            worst = std::max(worst, std::abs(got.data[i] - want.data[i]));
        }
        CHECK(worst <= 1e-12);
    }
}

TEST_CASE("conv at dilation 1 is bitwise equal to the undilated oracle") {
    Rng rng(123);
    Tensor<float> x = random_tensor<float>(10, 9, 3, rng);
    ConvKernel<float> k = random_kernel<float>(3, 3, 3, 4, 1, rng);
    Tensor<float> got = conv_forward(x, k);
    Tensor<float> want = naive_conv(x, k);
    for (std::size_t i = 0; i < got.data.size(); ++i) {
        CHECK(got.data[i] == want.data[i]);
    }
}

TEST_CASE("conv is linear in the input with zero bias") {
    Rng rng(7);
    Tensor<double> a = random_tensor<double>(7, 7, 2, rng);
    Tensor<double> b = random_tensor<double>(7, 7, 2, rng);
    ConvKernel<double> k = random_kernel<double>(3, 3, 2, 2, 1, rng);
    std::fill(k.bias.begin(), k.bias.end(), 0.0);
    const double alpha = 0.37, beta = -1.9;
    Tensor<double> mix(7, 7, 2);
    for (std::size_t i = 0; i < mix.data.size(); ++i) {
        mix.data[i] = alpha * a.data[i] + beta * b.data[i];
    }
    Tensor<double> lhs = conv_forward(mix, k);
    Tensor<double> ra = conv_forward(a, k);
    Tensor<double> rb = conv_forward(b, k);
    for (std::size_t i = 0; i < lhs.data.size(); ++i) {
        CHECK(lhs.data[i] ==
              doctest::Approx(alpha * ra.data[i] + beta * rb.data[i]).epsilon(1e-10));
    }
}

TEST_CASE("conv sizing errors name the offending axis") {
    Tensor<double> x(4, 10, 2, 0.0);
    ConvKernel<double> k(3, 3, 2, 1, 2);  // span 5 exceeds height 4
    CHECK_THROWS_WITH_AS(conv_forward(x, k), doctest::Contains("height"), std::invalid_argument);
    Tensor<double> bad(10, 10, 3, 0.0);
    ConvKernel<double> k2(3, 3, 2, 1, 1);
    CHECK_THROWS_WITH_AS(conv_forward(bad, k2), doctest::Contains("channels"),
                         std::invalid_argument);
}

TEST_CASE("conv_backward: zero upstream gradient gives zero gradients") {
    Rng rng(5);
    Tensor<double> x = random_tensor<double>(6, 6, 2, rng);
    ConvKernel<double> k = random_kernel<double>(3, 3, 2, 2, 1, rng);
    Tensor<double> dOut(4, 4, 2, 0.0);
    ConvGrads<double> g = conv_backward(x, k, dOut);
    for (double v : g.dInput.data) CHECK(v == 0.0);
    for (double v : g.dWeights) CHECK(v == 0.0);
    for (double v : g.dBias) CHECK(v == 0.0);
}

TEST_CASE("conv_backward: unit upstream at one cell copies the input window") {
    Rng rng(11);
    Tensor<double> x = random_tensor<double>(5, 5, 2, rng);
    ConvKernel<double> k = random_kernel<double>(3, 3, 2, 2, 1, rng);
    Tensor<double> dOut(3, 3, 2, 0.0);
    dOut.at(1, 2, 0) = 1.0;  // output channel 0 only
    ConvGrads<double> g = conv_backward(x, k, dOut);
    for (int dy = 0; dy < 3; ++dy) {
        for (int dx = 0; dx < 3; ++dx) {
            for (int ic = 0; ic < 2; ++ic) {
                CHECK(g.dWeights[k.windex(dy, dx, ic, 0)] ==
                      doctest::Approx(x.at(1 + dy, 2 + dx, ic)));
                CHECK(g.dWeights[k.windex(dy, dx, ic, 1)] == 0.0);
            }
        }
    }
    CHECK(g.dBias[0] == 1.0);
    CHECK(g.dBias[1] == 0.0);
}

TEST_CASE("conv_backward rejects mismatched upstream dims") {
    Tensor<double> x(6, 6, 2, 0.0);
    ConvKernel<double> k(3, 3, 2, 2, 1);
    Tensor<double> dOut(3, 3, 2, 0.0);
    CHECK_THROWS_AS(conv_backward(x, k, dOut), std::invalid_argument);
}

TEST_CASE("max pool: 3x3 values 1..9 stride 2 gives 9") {
    Tensor<double> x(3, 3, 1);
    for (int i = 0; i < 9; ++i) x.data[static_cast<std::size_t>(i)] = i + 1;
    auto [y, route] = pool_forward(x, PoolSpec{PoolKind::Max, 3, 3, 2, 1});
    CHECK(y.h == 1);
    CHECK(y.w == 1);
    CHECK(y.at(0, 0, 0) == 9.0);
    CHECK(route.argmax[0] == 8);
}

TEST_CASE("max pool with dilation 2 takes the max over the lattice taps") {
    Rng rng(31);
    Tensor<double> x = random_tensor<double>(5, 5, 1, rng);
    auto [y, route] = pool_forward(x, PoolSpec{PoolKind::Max, 3, 3, 1, 2});
    CHECK(y.h == 1);
    double best = -1e30;
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) best = std::max(best, x.at(2 * a, 2 * b, 0));
    }
    CHECK(y.at(0, 0, 0) == best);
}

TEST_CASE("pooling a constant input returns the constant") {
    Tensor<double> x(7, 7, 2, 3.25);
    for (PoolKind kind : {PoolKind::Max, PoolKind::Average}) {
        auto [y, route] = pool_forward(x, PoolSpec{kind, 3, 3, 2, 1});
        for (double v : y.data) CHECK(v == doctest::Approx(3.25));
    }
}

TEST_CASE("max pool backward routes to the argmax") {
    Tensor<double> x(3, 3, 1);
    for (int i = 0; i < 9; ++i) x.data[static_cast<std::size_t>(i)] = i + 1;
    auto [y, route] = pool_forward(x, PoolSpec{PoolKind::Max, 3, 3, 2, 1});
    Tensor<double> dOut(1, 1, 1, 1.0);
    Tensor<double> dx = pool_backward<double>(route, dOut);
    for (int i = 0; i < 8; ++i) CHECK(dx.data[static_cast<std::size_t>(i)] == 0.0);
    CHECK(dx.data[8] == 1.0);
}

TEST_CASE("average pool backward splits the window uniformly") {
    Tensor<double> x(3, 3, 1, 0.0);
    auto [y, route] = pool_forward(x, PoolSpec{PoolKind::Average, 3, 3, 2, 1});
    Tensor<double> dOut(1, 1, 1, 9.0);
    Tensor<double> dx = pool_backward<double>(route, dOut);
    for (double v : dx.data) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("pool backward rejects a mismatched routing") {
    Tensor<double> x(5, 5, 1, 0.0);
    auto [y, route] = pool_forward(x, PoolSpec{PoolKind::Max, 3, 3, 2, 1});
    Tensor<double> wrong(3, 3, 1, 0.0);
    CHECK_THROWS_AS(pool_backward<double>(route, wrong), std::invalid_argument);
}

TEST_CASE("pool span errors") {
    Tensor<double> x(4, 4, 1, 0.0);
    CHECK_THROWS_WITH_AS(pool_forward(x, PoolSpec{PoolKind::Max, 3, 3, 1, 2}),
                         doctest::Contains("height"), std::invalid_argument);
}

TEST_CASE("relu and its gate") {
    Tensor<double> x(1, 2, 1);
    x.at(0, 0, 0) = -1.0;
    x.at(0, 1, 0) = 2.0;
    Tensor<double> y = relu(x);
    CHECK(y.at(0, 0, 0) == 0.0);
    CHECK(y.at(0, 1, 0) == 2.0);
    Tensor<double> dOut(1, 2, 1, 5.0);
    Tensor<double> dx = relu_backward(x, dOut);
    CHECK(dx.at(0, 0, 0) == 0.0);
    CHECK(dx.at(0, 1, 0) == 5.0);
}

TEST_CASE("softmax2 basics") {
    auto p = softmax2_pair(0.0, 0.0);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.5));
    auto q = softmax2_pair(std::log(3.0), 0.0);
    CHECK(q[0] == doctest::Approx(0.75));
    CHECK(q[1] == doctest::Approx(0.25));
}

TEST_CASE("softmax2 is shift invariant") {
    Rng rng(17);
    for (int i = 0; i < 50; ++i) {
        const double a = rng.uniform(-5, 5), b = rng.uniform(-5, 5), c = rng.uniform(-30, 30);
        auto p = softmax2_pair(a, b);
        auto q = softmax2_pair(a + c, b + c);
        CHECK(p[0] == doctest::Approx(q[0]).epsilon(1e-12));
        CHECK(p[1] == doctest::Approx(q[1]).epsilon(1e-12));
    }
}

TEST_CASE("output dimension arithmetic") {
    Rng rng(3);
    for (int i = 0; i < 60; ++i) {
        const int k = static_cast<int>(rng.uniform_int(1, 4));
        const int l = static_cast<int>(rng.uniform_int(1, 4));
        const int stride = static_cast<int>(rng.uniform_int(1, 3));
        const int in = static_cast<int>(rng.uniform_int((k - 1) * l + 1, 40));
        CHECK(conv_out_dim(in, k, l) == in - (k - 1) * l);
        CHECK(pool_out_dim(in, k, stride, l) == (in - ((k - 1) * l + 1)) / stride + 1);
    }
}

TEST_CASE("layer backward passes agree with finite differences") {
    for (const CheckResult& r : gradient_checks(2026, 120, 1e-6, 1e-5)) {
        INFO(r.name, " rel err ", r.maxRelErr, " over ", r.coordinates, " coordinates");
        CHECK(r.coordinates >= 100);
        CHECK(r.pass);
    }
}
