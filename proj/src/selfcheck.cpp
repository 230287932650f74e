#include "ccnn/selfcheck.hpp"

#include <numeric>

#include "ccnn/trainer.hpp"

namespace ccnn {

using checkdetail::central_diff;
using checkdetail::random_tensor;
using checkdetail::rel_err;

namespace {

// Distinct, well-separated values so max-pool argmax margins dwarf the FD
// step.
Tensor<double> distinct_tensor(int h, int w, int c, Rng& rng) {
    Tensor<double> t(h, w, c);
    std::vector<double> vals(t.data.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.01 * static_cast<double>(i) - 1.0;
    for (std::size_t i = vals.size(); i > 1; --i) {
        std::swap(vals[i - 1], vals[rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
    }
    t.data = std::move(vals);
    return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

CheckResult check_conv(std::uint64_t seed, int samples, double tol, double step, int dilation) {
    Rng rng(seed);
    Tensor<double> x = random_tensor(8, 8, 2, rng);
    ConvKernel<double> k(3, 3, 2, 3, dilation);
    for (auto& wv : k.weights) wv = rng.uniform(-1, 1);
    for (auto& bv : k.bias) bv = rng.uniform(-1, 1);
    Tensor<double> out = conv_forward(x, k);
    Tensor<double> dOut = random_tensor(out.h, out.w, out.c, rng);
    ConvGrads<double> g = conv_backward(x, k, dOut);

    auto loss = [&]() { return dot(conv_forward(x, k), dOut); };
    CheckResult res{"conv_backward dilation " + std::to_string(dilation), 0, 0, false};
    for (int s = 0; s < samples; ++s) {
        switch (rng.uniform_int(0, 2)) {
            case 0: {
                const std::size_t i =
                    static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(x.data.size()) - 1));
                res.maxRelErr = std::max(
                    res.maxRelErr, rel_err(g.dInput.data[i], central_diff(loss, x.data[i], step)));
                break;
            }
            case 1: {
                const std::size_t i = static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<std::int64_t>(k.weights.size()) - 1));
                res.maxRelErr = std::max(
                    res.maxRelErr, rel_err(g.dWeights[i], central_diff(loss, k.weights[i], step)));
                break;
            }
            default: {
                const std::size_t i = static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<std::int64_t>(k.bias.size()) - 1));
                res.maxRelErr = std::max(res.maxRelErr,
                                         rel_err(g.dBias[i], central_diff(loss, k.bias[i], step)));
                break;
            }
        }
        ++res.coordinates;
    }
    res.pass = res.maxRelErr <= tol;
    return res;
}

CheckResult check_pool(std::uint64_t seed, int samples, double tol, double step, PoolKind kind,
                       int stride, int dilation) {
    Rng rng(seed);
    Tensor<double> x = distinct_tensor(9, 9, 2, rng);
    PoolSpec p{kind, 3, 3, stride, dilation};
    auto fwd = pool_forward(x, p);
    Tensor<double> dOut = random_tensor(fwd.first.h, fwd.first.w, fwd.first.c, rng);
    Tensor<double> dx = pool_backward<double>(fwd.second, dOut);

    auto loss = [&]() { return dot(pool_forward(x, p).first, dOut); };
    CheckResult res{std::string(kind == PoolKind::Max ? "max" : "avg") + "_pool_backward stride " +
                        std::to_string(stride) + " dilation " + std::to_string(dilation),
                    0, 0, false};
    for (int s = 0; s < samples; ++s) {
        const std::size_t i = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(x.data.size()) - 1));
        res.maxRelErr =
            std::max(res.maxRelErr, rel_err(dx.data[i], central_diff(loss, x.data[i], step)));
        ++res.coordinates;
    }
    res.pass = res.maxRelErr <= tol;
    return res;
}

CheckResult check_relu(std::uint64_t seed, int samples, double tol, double step) {
    Rng rng(seed);
    Tensor<double> x = random_tensor(6, 6, 3, rng);
    Tensor<double> dOut = random_tensor(6, 6, 3, rng);
    Tensor<double> dx = relu_backward(x, dOut);
    auto loss = [&]() { return dot(relu(x), dOut); };
    CheckResult res{"relu_backward", 0, 0, false};
    for (int s = 0; s < samples; ++s) {
        const std::size_t i = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(x.data.size()) - 1));
        if (std::abs(x.data[i]) <= 0.1) continue;  // stay clear of the kink
        res.maxRelErr =
            std::max(res.maxRelErr, rel_err(dx.data[i], central_diff(loss, x.data[i], step)));
        ++res.coordinates;
    }
    res.pass = res.maxRelErr <= tol;
    return res;
}

CheckResult check_softmax2(std::uint64_t seed, int samples, double tol, double step) {
    Rng rng(seed);
    Tensor<double> logits = random_tensor(4, 4, 2, rng, -2, 2);
    Tensor<double> dOut = random_tensor(4, 4, 2, rng);
    Tensor<double> probs = softmax2(logits);
    Tensor<double> dz = softmax2_backward(probs, dOut);
    auto loss = [&]() { return dot(softmax2(logits), dOut); };
    CheckResult res{"softmax2_backward", 0, 0, false};
    for (int s = 0; s < samples; ++s) {
        const std::size_t i = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(logits.data.size()) - 1));
        res.maxRelErr =
            std::max(res.maxRelErr, rel_err(dz.data[i], central_diff(loss, logits.data[i], step)));
        ++res.coordinates;
    }
    res.pass = res.maxRelErr <= tol;
    return res;
}

CheckResult check_loss(std::uint64_t seed, int samples, double tol) {
    Rng rng(seed);
    const double step = 1e-6;
    std::vector<ProbabilityChain<double>> batch(6);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        batch[i].label = static_cast<int>(rng.uniform_int(0, 1));
        for (int j = 0; j < kStages; ++j) batch[i].p.push_back(rng.uniform(0.05, 0.95));
    }
    std::vector<double> costs{1.0, 0.9, 0.2, 0.05};
    const double beta = 0.7;
    auto grads = loss_gradients(batch, costs, beta);
    auto total = [&]() {
        return loss_accuracy(batch) + beta * loss_cost(batch, costs);
    };
    CheckResult res{"loss_gradients", 0, 0, false};
    for (int s = 0; s < samples; ++s) {
        const std::size_t i =
            static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(batch.size()) - 1));
        const int j = static_cast<int>(rng.uniform_int(0, kStages - 1));
        res.maxRelErr = std::max(
            res.maxRelErr, rel_err(grads[i][j], central_diff(total, batch[i].p[j], step)));
        ++res.coordinates;
    }
    res.pass = res.maxRelErr <= tol;
    return res;
}

}  // namespace

std::vector<CheckResult> gradient_checks(std::uint64_t seed, int samples, double tolerance,
                                         double step) {
    std::vector<CheckResult> results;
    results.push_back(check_conv(Rng::derive(seed, 1), samples, tolerance, step, 1));
    results.push_back(check_conv(Rng::derive(seed, 2), samples, tolerance, step, 2));
    results.push_back(check_pool(Rng::derive(seed, 3), samples, tolerance, step, PoolKind::Max, 2, 1));
    results.push_back(
        check_pool(Rng::derive(seed, 4), samples, tolerance, step, PoolKind::Max, 1, 2));
    results.push_back(
        check_pool(Rng::derive(seed, 5), samples, tolerance, step, PoolKind::Average, 2, 1));
    results.push_back(
        check_pool(Rng::derive(seed, 6), samples, tolerance, step, PoolKind::Average, 1, 2));
    results.push_back(check_relu(Rng::derive(seed, 7), samples, tolerance, step));
    results.push_back(check_softmax2(Rng::derive(seed, 8), samples, tolerance, step));
    results.push_back(check_loss(Rng::derive(seed, 9), samples, tolerance));
    return results;
}

CheckResult full_network_gradient_check(std::uint64_t seed, int samples, double tolerance,
                                        double step) {
    CascadeConfig cfg;
    cfg.trunkFilters = {6, 6, 6, 6};
    CascadeNetwork<double> net = build_network<double>(cfg, seed);
    Rng rng(Rng::derive(seed, 42));

    const int n = 3;
    std::vector<Tensor<double>> patches;
    std::vector<int> labels{1, 0, 1};
    for (int i = 0; i < n; ++i) {
        patches.push_back(random_tensor(cfg.patchSize, cfg.patchSize, 3, rng, 0, 1));
    }
    const std::vector<double> costs = normalized_stage_costs(net);
    const double beta = 0.5;

    auto batch_chains = [&]() {
        std::vector<ProbabilityChain<double>> chains(n);
        PatchCache<double> cache;
        for (int i = 0; i < n; ++i) {
            StageProbs sp = forward_patch(net, patches[i], ForwardMode::AllStages, cache);
            chains[i].label = labels[i];
            chains[i].p.assign(sp.probs.begin(), sp.probs.end());
        }
        return chains;
    };
    auto total_loss = [&]() {
        auto chains = batch_chains();
        return loss_accuracy(chains) + beta * loss_cost(chains, costs);
    };

    // Analytic gradient of the batch objective.
    NetGrads<double> grads;
    grads.resize_like(net);
    {
        auto chains = batch_chains();
        auto dp = loss_gradients(chains, costs, beta);
        PatchCache<double> cache;
        for (int i = 0; i < n; ++i) {
            forward_patch(net, patches[i], ForwardMode::AllStages, cache);
            std::array<double, kStages> dProbs{};
            for (int j = 0; j < kStages; ++j) dProbs[j] = dp[i][j];
            backward_patch(net, patches[i], cache, dProbs, grads);
        }
    }

    CheckResult res{"full_network_gradient", 0, 0, false};
    for (int s = 0; s < samples; ++s) {
        const int stage = static_cast<int>(rng.uniform_int(0, kStages - 1));
        const bool trunk = rng.bernoulli(0.5);
        const bool biasPick = rng.bernoulli(0.15);
        ConvKernel<double>& kern = trunk ? net.trunkConv[stage] : net.branchConv[stage];
        std::vector<double>& params = biasPick ? kern.bias : kern.weights;
        const std::vector<double>& analytic =
            trunk ? (biasPick ? grads.trunk[stage].dB : grads.trunk[stage].dW)
                  : (biasPick ? grads.branch[stage].dB : grads.branch[stage].dW);
        const std::size_t i = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(params.size()) - 1));
        res.maxRelErr =
            std::max(res.maxRelErr, rel_err(analytic[i], central_diff(total_loss, params[i], step)));
        ++res.coordinates;
    }
    res.pass = res.maxRelErr <= tolerance;
    return res;
}

}  // namespace ccnn
