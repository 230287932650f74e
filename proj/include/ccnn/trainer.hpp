#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccnn/loss.hpp"
#include "ccnn/model.hpp"
#include "ccnn/rng.hpp"
#include "ccnn/samples.hpp"

namespace ccnn {

struct TrainConfig {
    double learningRate = 1e-3;
    double adamBeta1 = 0.9;
    double adamBeta2 = 0.999;
    double adamEpsilon = 1e-8;
    int batchSize = 128;
    int epochsBranch = 2;
    int epochsE2E = 4;
    double beta = 0.5;        // weight of the cost regularizer
    double recallFloor = 0.97;
    std::uint64_t seed = 42;
};

// --- Adam ------------------------------------------------------------------

template <typename T>
struct AdamState {
    std::vector<T> m;
    std::vector<T> v;
    explicit AdamState(std::size_t n = 0) : m(n, T(0)), v(n, T(0)) {}
    void resize(std::size_t n) {
        m.assign(n, T(0));
        v.assign(n, T(0));
    }
};

// One bias-corrected Adam update. t is the 1-based step count.
template <typename T>
void adam_step(AdamState<T>& state, std::vector<T>& params, const std::vector<T>& grads,
               long t, const TrainConfig& cfg) {
    if (params.size() != grads.size() || params.size() != state.m.size()) {
        throw std::invalid_argument("adam_step: parameter/gradient/state size mismatch");
    }
    const T b1 = static_cast<T>(cfg.adamBeta1);
    const T b2 = static_cast<T>(cfg.adamBeta2);
    const T lr = static_cast<T>(cfg.learningRate);
    const T eps = static_cast<T>(cfg.adamEpsilon);
    const T c1 = T(1) - static_cast<T>(std::pow(cfg.adamBeta1, static_cast<double>(t)));
    const T c2 = T(1) - static_cast<T>(std::pow(cfg.adamBeta2, static_cast<double>(t)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const T g = grads[i];
        state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
        state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
        const T mhat = state.m[i] / c1;
        const T vhat = state.v[i] / c2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

// Adam state for every kernel in the cascade, with a shared step counter.
template <typename T>
struct NetAdam {
    std::array<AdamState<T>, kStages> trunkW, trunkB, branchW, branchB;
    long t = 0;

    explicit NetAdam(const CascadeNetwork<T>& net) {
        for (int j = 0; j < kStages; ++j) {
            trunkW[j].resize(net.trunkConv[j].weights.size());
            trunkB[j].resize(net.trunkConv[j].bias.size());
            branchW[j].resize(net.branchConv[j].weights.size());
            branchB[j].resize(net.branchConv[j].bias.size());
        }
    }

    // Applies one step to the stages selected by the masks.
    void step(CascadeNetwork<T>& net, const NetGrads<T>& g, const TrainConfig& cfg,
              const std::array<bool, kStages>& trunkMask,
              const std::array<bool, kStages>& branchMask) {
        ++t;
        for (int j = 0; j < kStages; ++j) {
            if (trunkMask[j]) {
                adam_step(trunkW[j], net.trunkConv[j].weights, g.trunk[j].dW, t, cfg);
                adam_step(trunkB[j], net.trunkConv[j].bias, g.trunk[j].dB, t, cfg);
            }
            if (branchMask[j]) {
                adam_step(branchW[j], net.branchConv[j].weights, g.branch[j].dW, t, cfg);
                adam_step(branchB[j], net.branchConv[j].bias, g.branch[j].dB, t, cfg);
            }
        }
    }
};

// --- negative pruning --------------------------------------------------------

struct PruneResult {
    std::vector<std::size_t> keptNegatives;  // indices into the scored list
    double threshold = 0.0;
};

// Largest cutoff that keeps at least recallFloor of the positives; negatives
// scoring below it leave the pool. Positives are never removed.
inline PruneResult prune_negatives(const std::vector<double>& scores,
                                   const std::vector<int>& labels, double recallFloor) {
    if (scores.size() != labels.size()) {
        throw std::invalid_argument("prune_negatives: score/label size mismatch");
    }
    std::vector<double> pos;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == 1) pos.push_back(scores[i]);
    }
    if (pos.empty()) throw std::invalid_argument("prune_negatives: no positive samples");
    std::sort(pos.begin(), pos.end(), std::greater<double>());
    std::size_t keep =
        static_cast<std::size_t>(std::ceil(recallFloor * static_cast<double>(pos.size())));
    keep = std::min(std::max<std::size_t>(keep, 1), pos.size());
    const double threshold = pos[keep - 1];
    PruneResult out;
    out.threshold = threshold;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == 0 && scores[i] >= threshold) out.keptNegatives.push_back(i);
    }
    return out;
}

namespace detail {

inline void log_line(std::ostream* log, const char* phase, int epoch, int batch, double lp,
                     double lgamma, double total) {
    if (!log) return;
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%s,%d,%d,%.6f,%.6f,%.6f\n", phase, epoch, batch, lp, lgamma,
                  total);
    (*log) << buf;
}

inline void shuffle_indices(std::vector<std::size_t>& order, Rng& rng) {
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t k =
            static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(order[i - 1], order[k]);
    }
}

}  // namespace detail

// --- branch-level training ----------------------------------------------------

// Trains trunk block `stage` and its branch (1-based) on cached tap inputs
// with per-branch cross-entropy. Earlier blocks are untouched.
template <typename T>
void train_branch(CascadeNetwork<T>& net, int stage, const std::vector<const Tensor<T>*>& taps,
                  const std::vector<int>& labels, const TrainConfig& cfg,
                  std::ostream* log = nullptr) {
    if (stage < 1 || stage > kStages) throw std::invalid_argument("train_branch: bad stage");
    if (taps.empty()) throw std::invalid_argument("train_branch: empty sample set");
    if (taps.size() != labels.size()) throw std::invalid_argument("train_branch: size mismatch");
    const int j = stage - 1;

    NetAdam<T> adam(net);
    NetGrads<T> grads;
    grads.resize_like(net);
    std::array<bool, kStages> trunkMask{}, branchMask{};
    trunkMask[j] = true;
    branchMask[j] = true;

    std::vector<std::size_t> order(taps.size());
    std::iota(order.begin(), order.end(), 0);
    const std::string phase = "branch" + std::to_string(stage);
    PatchCache<T> cache;

    for (int epoch = 0; epoch < cfg.epochsBranch; ++epoch) {
        Rng shuffleRng(Rng::derive(cfg.seed, 1000 + static_cast<std::uint64_t>(stage) * 100 +
                                                 static_cast<std::uint64_t>(epoch)));
        detail::shuffle_indices(order, shuffleRng);
        int batchIndex = 0;
        for (std::size_t begin = 0; begin < order.size();
             begin += static_cast<std::size_t>(cfg.batchSize)) {
            const std::size_t end =
                std::min(order.size(), begin + static_cast<std::size_t>(cfg.batchSize));
            grads.zero();
            double lossSum = 0;
            for (std::size_t s = begin; s < end; ++s) {
                const std::size_t idx = order[s];
                run_stage(net, j, *taps[idx], cache);
                const T p = clamp_prob(cache.probs[j][0]);
                const int y = labels[idx];
                lossSum -= y == 1 ? std::log(static_cast<double>(p))
                                  : std::log(1.0 - static_cast<double>(p));
                const T dProb = y == 1 ? -T(1) / p : T(1) / (T(1) - p);
                backward_stage(net, j, *taps[idx], cache, dProb, grads.trunk[j], grads.branch[j]);
            }
            adam.step(net, grads, cfg, trunkMask, branchMask);
            detail::log_line(log, phase.c_str(), epoch, batchIndex++, lossSum, 0.0, lossSum);
        }
    }
}

// Forward of trunk block `stage` from a cached tap input; returns the next tap.
template <typename T>
Tensor<T> block_forward(const CascadeNetwork<T>& net, int stage, const Tensor<T>& input) {
    const int j = stage - 1;
    Tensor<T> post = relu(conv_forward(input, net.trunkConv[j]));
    if (j < kStages - 1) return pool_forward(post, net.trunkPool[j]).first;
    return post;
}

// Branch positive probability from its cached tap input.
template <typename T>
double branch_probability(const CascadeNetwork<T>& net, int stage, const Tensor<T>& tapInput) {
    PatchCache<T> cache;
    run_stage(net, stage - 1, tapInput, cache);
    return static_cast<double>(cache.probs[stage - 1][0]);
}

// Branch-level phase: trains branches 1..4 in order, pruning negatives after
// each stage so later branches see the survivors (the hard negatives).
template <typename T>
void train_branches(CascadeNetwork<T>& net, const SampleSet<T>& data, const TrainConfig& cfg,
                    std::ostream* log = nullptr) {
    if (data.empty()) throw std::invalid_argument("train_branches: empty sample set");
    std::vector<std::size_t> pool(data.size());
    std::iota(pool.begin(), pool.end(), 0);

    // Tap inputs of the current block for every pooled sample. Stage 1 reads
    // the patches themselves; later stages read cached block outputs.
    std::vector<Tensor<T>> cached;
    bool usePatches = true;

    for (int stage = 1; stage <= kStages; ++stage) {
        std::vector<const Tensor<T>*> taps(pool.size());
        std::vector<int> labels(pool.size());
        for (std::size_t i = 0; i < pool.size(); ++i) {
            taps[i] = usePatches ? &data.samples[pool[i]].patch : &cached[i];
            labels[i] = data.samples[pool[i]].label;
        }
        train_branch(net, stage, taps, labels, cfg, log);
        if (stage == kStages) break;

        std::vector<double> scores(pool.size());
        for (std::size_t i = 0; i < pool.size(); ++i) {
            scores[i] = branch_probability(net, stage, *taps[i]);
        }
        PruneResult pruned = prune_negatives(scores, labels, cfg.recallFloor);
        std::vector<char> keepNeg(pool.size(), 0);
        for (std::size_t i : pruned.keptNegatives) keepNeg[i] = 1;

        std::vector<std::size_t> nextPool;
        std::vector<Tensor<T>> nextCached;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (labels[i] == 1 || keepNeg[i]) {
                nextPool.push_back(pool[i]);
                nextCached.push_back(block_forward(net, stage, *taps[i]));
            }
        }
        pool = std::move(nextPool);
        cached = std::move(nextCached);
        usePatches = false;
    }
}

// --- end-to-end training -------------------------------------------------------

// Stage costs normalized by T1, the scale the joint loss expects.
template <typename T>
std::vector<T> normalized_stage_costs(const CascadeNetwork<T>& net) {
    std::vector<T> costs(kStages);
    const double t1 = static_cast<double>(net.stageCosts[0]);
    for (int j = 0; j < kStages; ++j) {
        costs[j] = static_cast<T>(static_cast<double>(net.stageCosts[j]) / t1);
    }
    return costs;
}

// Joint loss of a sample set without touching the weights (all stages run).
template <typename T>
LossBreakdown<T> evaluate_joint_loss(const CascadeNetwork<T>& net, const SampleSet<T>& data,
                                     double beta) {
    std::vector<ProbabilityChain<T>> chains;
    chains.reserve(data.size());
    PatchCache<T> cache;
    for (const auto& s : data.samples) {
        StageProbs sp = forward_patch(net, s.patch, ForwardMode::AllStages, cache);
        ProbabilityChain<T> c;
        c.label = s.label;
        for (int j = 0; j < kStages; ++j) c.p.push_back(static_cast<T>(sp.probs[j]));
        chains.push_back(std::move(c));
    }
    return loss_joint(chains, normalized_stage_costs(net), static_cast<T>(beta));
}

// Whole-network training of the joint objective. Both loss terms decompose
// per sample (the cost term through its 1/N weight), so each sample is
// forwarded once and its gradient applied to the batch accumulator directly.
template <typename T>
void train_end_to_end(CascadeNetwork<T>& net, const SampleSet<T>& data, const TrainConfig& cfg,
                      std::ostream* log = nullptr) {
    if (data.empty()) throw std::invalid_argument("train_end_to_end: empty sample set");
    const std::vector<T> costs = normalized_stage_costs(net);

    NetAdam<T> adam(net);
    NetGrads<T> grads;
    grads.resize_like(net);
    const std::array<bool, kStages> all{true, true, true, true};

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    PatchCache<T> cache;
    std::vector<ProbabilityChain<T>> one(1);
    one[0].p.resize(kStages);

    for (int epoch = 0; epoch < cfg.epochsE2E; ++epoch) {
        Rng shuffleRng(Rng::derive(cfg.seed, 5000 + static_cast<std::uint64_t>(epoch)));
        detail::shuffle_indices(order, shuffleRng);
        int batchIndex = 0;
        for (std::size_t begin = 0; begin < order.size();
             begin += static_cast<std::size_t>(cfg.batchSize)) {
            const std::size_t end =
                std::min(order.size(), begin + static_cast<std::size_t>(cfg.batchSize));
            const std::size_t n = end - begin;
            const T betaPerSample = static_cast<T>(cfg.beta / static_cast<double>(n));

            grads.zero();
            double lpSum = 0, lgSum = 0;
            for (std::size_t s = begin; s < end; ++s) {
                const auto& sample = data.samples[order[s]];
                StageProbs sp = forward_patch(net, sample.patch, ForwardMode::AllStages, cache);
                one[0].label = sample.label;
                for (int j = 0; j < kStages; ++j) one[0].p[j] = static_cast<T>(sp.probs[j]);
                lpSum += static_cast<double>(loss_accuracy(one));
                lgSum += static_cast<double>(loss_cost(one, costs));
                const auto g = loss_gradients(one, costs, betaPerSample);
                std::array<T, kStages> dProbs{};
                for (int j = 0; j < kStages; ++j) dProbs[j] = g[0][j];
                backward_patch(net, sample.patch, cache, dProbs, grads);
            }
            adam.step(net, grads, cfg, all, all);
            const double lgMean = lgSum / static_cast<double>(n);
            detail::log_line(log, "e2e", epoch, batchIndex++, lpSum, lgMean,
                             lpSum + cfg.beta * lgMean);
        }
    }
}

// --- threshold calibration -------------------------------------------------------

// Greedy earliest-stage-first grid search on a per-stage probability matrix.
// Picks the largest grid value keeping cumulative recall at or above the
// floor. Throws if the floor is unreachable even at the smallest grid value.
inline std::vector<double> calibrate_grid(const std::vector<std::vector<double>>& probs,
                                          const std::vector<int>& labels, double recallFloor,
                                          const std::vector<double>& grid) {
    if (probs.empty() || probs.size() != labels.size() || grid.empty()) {
        throw std::invalid_argument("calibrate_grid: bad inputs");
    }
    const std::size_t k = probs[0].size();
    std::size_t positives = 0;
    for (int l : labels) positives += l == 1;
    if (positives == 0) throw std::invalid_argument("calibrate_grid: no positives");

    std::vector<double> sorted = grid;
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    std::vector<double> lambdas(k, 0.0);

    auto recall_with = [&](std::size_t stage, double cand) {
        std::size_t recalled = 0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            if (labels[i] != 1) continue;
            bool pass = true;
            for (std::size_t u = 0; u <= stage && pass; ++u) {
                const double lam = u == stage ? cand : lambdas[u];
                pass = probs[i][u] > lam;
            }
            recalled += pass;
        }
        return static_cast<double>(recalled) / static_cast<double>(positives);
    };

    for (std::size_t j = 0; j < k; ++j) {
        bool found = false;
        for (double cand : sorted) {
            if (recall_with(j, cand) >= recallFloor) {
                lambdas[j] = cand;
                found = true;
                break;
            }
        }
        if (!found) {
            throw std::runtime_error("calibrate_thresholds: recall floor " +
                                     std::to_string(recallFloor) + " unreachable at stage " +
                                     std::to_string(j + 1) + "; achievable recall " +
                                     std::to_string(recall_with(j, sorted.back())));
        }
    }
    return lambdas;
}

inline std::vector<double> default_lambda_grid() {
    std::vector<double> grid;
    for (int i = 0; i <= 50; ++i) grid.push_back(static_cast<double>(i) / 100.0);
    return grid;
}

// Calibrates net.thresholds on a validation set and returns the lambdas.
template <typename T>
std::array<double, kStages> calibrate_thresholds(CascadeNetwork<T>& net,
                                                 const SampleSet<T>& validation,
                                                 double recallFloor) {
    if (validation.empty()) throw std::invalid_argument("calibrate_thresholds: empty set");
    std::vector<std::vector<double>> probs(validation.size(), std::vector<double>(kStages));
    std::vector<int> labels(validation.size());
    PatchCache<T> cache;
    for (std::size_t i = 0; i < validation.size(); ++i) {
        StageProbs sp =
            forward_patch(net, validation.samples[i].patch, ForwardMode::AllStages, cache);
        for (int j = 0; j < kStages; ++j) probs[i][j] = sp.probs[j];
        labels[i] = validation.samples[i].label;
    }
    std::vector<double> lambdas = calibrate_grid(probs, labels, recallFloor, default_lambda_grid());
    for (int j = 0; j < kStages; ++j) net.thresholds[j] = lambdas[j];
    return net.thresholds;
}

}  // namespace ccnn
