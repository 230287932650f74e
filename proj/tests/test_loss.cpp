#include <cmath>

#include "ccnn/loss.hpp"
#include "ccnn/rng.hpp"
#include "doctest.h"

using namespace ccnn;

namespace {

ProbabilityChain<double> chain(std::initializer_list<double> p, int label) {
    ProbabilityChain<double> c;
    c.p = p;
    c.label = label;
    return c;
}

// Brute-force double loop over Eq. 4's nested products.
double naive_cost(const std::vector<ProbabilityChain<double>>& batch,
                  const std::vector<double>& costs) {
    double acc = 0;
    for (const auto& c : batch) {
        for (std::size_t j = 0; j < c.p.size(); ++j) {
            double prod = 1;
            for (std::size_t u = 0; u <= j; ++u) prod *= c.p[u];
            acc += costs[j] * prod;
        }
    }
    return acc / static_cast<double>(batch.size());
}

}  // namespace

TEST_CASE("chain probabilities multiply") {
    CHECK(chain_positive_prob(chain({0.9, 0.8, 1.0}, 1)) == doctest::Approx(0.72));
    CHECK(chain_positive_prob(chain({0.31}, 1)) == doctest::Approx(0.31));
    CHECK(chain_positive_prob(chain({0.9, 0.0, 0.7}, 1)) == 0.0);
}

TEST_CASE("negative probability is the complement") {
    CHECK(chain_negative_prob(chain({0.9, 0.8}, 0)) == doctest::Approx(0.28));
    CHECK(chain_negative_prob(chain({1.0, 1.0, 1.0, 1.0}, 0)) == 0.0);
    Rng rng(9);
    for (int i = 0; i < 40; ++i) {
        ProbabilityChain<double> c;
        c.label = 0;
        for (int j = 0; j < 4; ++j) c.p.push_back(rng.uniform());
        CHECK(chain_positive_prob(c) + chain_negative_prob(c) == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("accuracy loss basics") {
    // perfect prediction: 0 up to the clamp guard
    CHECK(std::abs(loss_accuracy<double>({chain({1.0, 1.0, 1.0}, 1)})) < 1e-5);
    // interior probabilities are exact
    CHECK(loss_accuracy<double>({chain({0.9, 0.8}, 1)}) ==
          doctest::Approx(-std::log(0.72)).epsilon(1e-12));
    CHECK(-std::log(0.72) == doctest::Approx(0.328504).epsilon(1e-5));
    // a 1.0 entry passes through the clamp with at most 1e-7 shift
    CHECK(std::abs(loss_accuracy<double>({chain({0.9, 0.8, 1.0}, 1)}) + std::log(0.72)) < 1e-6);
}

TEST_CASE("K=1 accuracy loss equals plain binary cross-entropy") {
    Rng rng(14);
    for (int i = 0; i < 60; ++i) {
        const double p = rng.uniform(0.02, 0.98);
        const int y = static_cast<int>(rng.uniform_int(0, 1));
        const double bce = y == 1 ? -std::log(p) : -std::log(1 - p);
        CHECK(loss_accuracy<double>({chain({p}, y)}) == doctest::Approx(bce).epsilon(1e-12));
    }
}

TEST_CASE("accuracy loss is nonnegative and zero only at perfection") {
    Rng rng(6);
    for (int i = 0; i < 40; ++i) {
        std::vector<ProbabilityChain<double>> batch;
        for (int n = 0; n < 5; ++n) {
            ProbabilityChain<double> c;
            c.label = static_cast<int>(rng.uniform_int(0, 1));
            for (int j = 0; j < 3; ++j) c.p.push_back(rng.uniform(0.05, 0.95));
            batch.push_back(c);
        }
        CHECK(loss_accuracy(batch) > 0.0);
    }
}

TEST_CASE("accuracy loss depends only on the product, not the factorization") {
    // redistribute the same product across stages
    const double product = 0.42;
    std::vector<std::vector<double>> factorizations = {
        {product, 1.0, 1.0},
        {1.0, product, 1.0},
        {std::sqrt(product), std::sqrt(product), 1.0},
        {0.7, product / 0.7, 1.0},
    };
    for (int label : {0, 1}) {
        const double base = loss_accuracy<double>({chain({product, 1.0, 1.0}, label)});
        for (const auto& f : factorizations) {
            ProbabilityChain<double> c;
            c.p = f;
            c.label = label;
            // the clamp shifts 1.0 entries by up to 1e-7
            CHECK(loss_accuracy<double>({c}) == doctest::Approx(base).epsilon(1e-6));
        }
    }
}

TEST_CASE("cost regularizer follows the prefix-product form") {
    CHECK(loss_cost<double>({chain({0.9, 0.8}, 1)}, {1.0, 2.0}) == doctest::Approx(2.34));
    CHECK(loss_cost<double>({chain({0.0, 0.8}, 1)}, {1.0, 2.0}) == 0.0);
    CHECK_THROWS_AS(loss_cost<double>({chain({0.9, 0.8}, 1)}, {1.0}), std::invalid_argument);
}

TEST_CASE("cost regularizer is monotone in every stage probability") {
    Rng rng(23);
    std::vector<double> costs{1.0, 0.8, 0.3, 0.1};
    for (int i = 0; i < 30; ++i) {
        ProbabilityChain<double> c;
        c.label = 0;
        for (int j = 0; j < 4; ++j) c.p.push_back(rng.uniform(0.05, 0.95));
        const double base = loss_cost<double>({c}, costs);
        const int j = static_cast<int>(rng.uniform_int(0, 3));
        ProbabilityChain<double> up = c;
        up.p[static_cast<std::size_t>(j)] =
            std::min(1.0, up.p[static_cast<std::size_t>(j)] + 0.03);
        CHECK(loss_cost<double>({up}, costs) >= base);
    }
}

TEST_CASE("closed-form cost equals the brute-force oracle") {
    Rng rng(42);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<ProbabilityChain<double>> batch;
        const int n = static_cast<int>(rng.uniform_int(1, 6));
        for (int i = 0; i < n; ++i) {
            ProbabilityChain<double> c;
            c.label = static_cast<int>(rng.uniform_int(0, 1));
            for (int j = 0; j < 4; ++j) c.p.push_back(rng.uniform());
            batch.push_back(c);
        }
        std::vector<double> costs;
        for (int j = 0; j < 4; ++j) costs.push_back(rng.uniform(0, 3));
        CHECK(loss_cost(batch, costs) == doctest::Approx(naive_cost(batch, costs)).epsilon(1e-12));
    }
}

TEST_CASE("joint loss composes the two terms") {
    std::vector<ProbabilityChain<double>> batch{chain({0.9, 0.8}, 1)};
    std::vector<double> costs{1.0, 2.0};

    LossBreakdown<double> zero = loss_joint(batch, costs, 0.0);
    CHECK(zero.total == zero.lp);

    LossBreakdown<double> half = loss_joint(batch, costs, 0.5);
    CHECK(half.lp == doctest::Approx(0.328504).epsilon(1e-5));
    CHECK(half.lgamma == doctest::Approx(2.34).epsilon(1e-9));
    CHECK(half.total == doctest::Approx(1.498504).epsilon(1e-5));
    CHECK(half.total == half.lp + 0.5 * half.lgamma);
    CHECK_THROWS_AS(loss_joint(batch, costs, -1.0), std::invalid_argument);
}

TEST_CASE("hand-derived gradient values") {
    // y=1, K=2, chain (0.5, 0.5), beta=0: dL/dp1 = -1/0.5 = -2
    auto g = loss_gradients<double>({chain({0.5, 0.5}, 1)}, {1.0, 1.0}, 0.0);
    CHECK(g[0][0] == doctest::Approx(-2.0));
    CHECK(g[0][1] == doctest::Approx(-2.0));
    // all p = 1 gives -1 per stage (clamped just inside 1)
    auto g2 = loss_gradients<double>({chain({1.0, 1.0, 1.0}, 1)}, {1.0, 1.0, 1.0}, 0.0);
    for (int j = 0; j < 3; ++j) CHECK(g2[0][j] == doctest::Approx(-1.0).epsilon(1e-5));
}

TEST_CASE("loss gradients match central finite differences") {
    Rng rng(111);
    const double step = 1e-6;
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<ProbabilityChain<double>> batch;
        const int n = static_cast<int>(rng.uniform_int(2, 5));
        for (int i = 0; i < n; ++i) {
            ProbabilityChain<double> c;
            c.label = static_cast<int>(rng.uniform_int(0, 1));
            for (int j = 0; j < 4; ++j) c.p.push_back(rng.uniform(0.05, 0.95));
            batch.push_back(c);
        }
        std::vector<double> costs{1.0, 0.9, 0.2, 0.05};
        const double beta = 0.5;
        auto grads = loss_gradients(batch, costs, beta);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < 4; ++j) {
                auto& p = batch[static_cast<std::size_t>(i)].p[static_cast<std::size_t>(j)];
                const double saved = p;
                p = saved + step;
                const double up = loss_accuracy(batch) + beta * loss_cost(batch, costs);
                p = saved - step;
                const double down = loss_accuracy(batch) + beta * loss_cost(batch, costs);
                p = saved;
                const double fd = (up - down) / (2 * step);
                const double got = grads[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                const double denom = std::max({std::abs(fd), std::abs(got), 1e-10});
                CHECK(std::abs(fd - got) / denom <= 1e-6);
            }
        }
    }
}

TEST_CASE("the breakdown echoes beta and keeps total = lp + beta*lgamma exactly") {
    Rng rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<ProbabilityChain<double>> batch;
        for (int i = 0; i < 3; ++i) {
            ProbabilityChain<double> c;
            c.label = static_cast<int>(rng.uniform_int(0, 1));
            for (int j = 0; j < 4; ++j) c.p.push_back(rng.uniform(0.1, 0.9));
            batch.push_back(c);
        }
        std::vector<double> costs{1.0, 0.9, 0.2, 0.05};
        const double beta = rng.uniform(0, 2);
        LossBreakdown<double> l = loss_joint(batch, costs, beta);
        CHECK(l.beta == beta);
        CHECK(l.total == l.lp + beta * l.lgamma);
        CHECK(l.dPerStage.size() == batch.size());
    }
}
