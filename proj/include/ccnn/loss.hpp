#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccnn/model.hpp"

namespace ccnn {

// Per-stage positive probabilities of one sample, plus its binary label.
template <typename T>
struct ProbabilityChain {
    std::vector<T> p;
    int label = 0;  // 1 player, 0 non-player
};

template <typename T>
struct LossBreakdown {
    T lp = T(0);      // classification term
    T lgamma = T(0);  // computational-cost term
    T total = T(0);   // lp + beta * lgamma
    T beta = T(0);
    // dPerStage[i][j] = d(total)/d p_{i,j}
    std::vector<std::vector<T>> dPerStage;
};

// Probabilities are clamped away from {0,1} only where a log is taken.
template <typename T>
inline T clamp_prob(T p) {
    const T lo = static_cast<T>(1e-7);
    const T hi = T(1) - lo;
    return p < lo ? lo : (p > hi ? hi : p);
}

template <typename T>
T chain_positive_prob(const ProbabilityChain<T>& chain) {
    if (chain.p.empty()) throw std::invalid_argument("chain_positive_prob: empty chain");
    T prod = T(1);
    for (const T v : chain.p) prod *= v;
    return prod;
}

template <typename T>
T chain_negative_prob(const ProbabilityChain<T>& chain) {
    return T(1) - chain_positive_prob(chain);
}

template <typename T>
T loss_accuracy(const std::vector<ProbabilityChain<T>>& batch) {
    if (batch.empty()) throw std::invalid_argument("loss_accuracy: empty batch");
    T loss = T(0);
    for (const auto& chain : batch) {
        T prod = T(1);
        for (const T v : chain.p) prod *= clamp_prob(v);
        if (chain.label == 1) {
            loss -= std::log(prod);
        } else {
            loss -= std::log(T(1) - prod);
        }
    }
    return loss;
}

// Cost regularizer: mean over samples of sum_j T_j * prod_{u<=j} p_u.
// No clamping here, an exact zero in a chain zeroes its contributions.
template <typename T>
T loss_cost(const std::vector<ProbabilityChain<T>>& batch, const std::vector<T>& stageCosts) {
    if (batch.empty()) throw std::invalid_argument("loss_cost: empty batch");
    for (const auto& chain : batch) {
        if (chain.p.size() != stageCosts.size()) {
            throw std::invalid_argument("loss_cost: stage cost vector has " +
                                        std::to_string(stageCosts.size()) + " entries, chain has " +
                                        std::to_string(chain.p.size()));
        }
    }
    T acc = T(0);
    for (const auto& chain : batch) {
        T prefix = T(1);
        for (std::size_t j = 0; j < chain.p.size(); ++j) {
            prefix *= chain.p[j];
            acc += stageCosts[j] * prefix;
        }
    }
    return acc / static_cast<T>(batch.size());
}

template <typename T>
std::vector<std::vector<T>> loss_gradients(const std::vector<ProbabilityChain<T>>& batch,
                                           const std::vector<T>& stageCosts, T beta) {
    const std::size_t n = batch.size();
    std::vector<std::vector<T>> grads(n);
    const T invN = T(1) / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& chain = batch[i];
        const std::size_t k = chain.p.size();
        grads[i].assign(k, T(0));

        std::vector<T> cp(k);
        for (std::size_t j = 0; j < k; ++j) cp[j] = clamp_prob(chain.p[j]);
        T prodClamped = T(1);
        for (const T v : cp) prodClamped *= v;

        for (std::size_t j = 0; j < k; ++j) {
            // Classification part of Eq. 5.
            T g;
            if (chain.label == 1) {
                g = -T(1) / cp[j];
            } else {
                const T prodOthers = prodClamped / cp[j];
                g = prodOthers / (T(1) - prodClamped);
            }
            // Cost part: every prefix product at or beyond stage j contains p_j.
            if (beta != T(0)) {
                T costPart = T(0);
                T prefixOthers = T(1);  // prod_{u<=j', u!=j} p_u, built incrementally
                for (std::size_t u = 0; u < k; ++u) {
                    if (u != j) prefixOthers *= chain.p[u];
                    if (u >= j) costPart += stageCosts[u] * prefixOthers;
                }
                g += beta * invN * costPart;
            }
            grads[i][j] = g;
        }
    }
    return grads;
}

template <typename T>
LossBreakdown<T> loss_joint(const std::vector<ProbabilityChain<T>>& batch,
                            const std::vector<T>& stageCosts, T beta) {
    if (beta < T(0)) throw std::invalid_argument("loss_joint: beta must be nonnegative");
    LossBreakdown<T> out;
    out.lp = loss_accuracy(batch);
    out.lgamma = loss_cost(batch, stageCosts);
    out.beta = beta;
    out.total = out.lp + beta * out.lgamma;
    out.dPerStage = loss_gradients(batch, stageCosts, beta);
    return out;
}

}  // namespace ccnn
