#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccnn/ops.hpp"
#include "ccnn/rng.hpp"
#include "ccnn/tensor.hpp"

namespace ccnn {

inline constexpr int kStages = 4;

struct CascadeConfig {
    std::array<int, kStages> trunkFilters{16, 16, 16, 16};
    int patchSize = 64;
    int inputChannels = 3;
    // Every branch head is a player/non-player pair.
    static constexpr int branchFilters = 2;
};

// Spatial sizes of one cascade stage in patch mode.
struct StageShape {
    int convIn = 0;        // input side length of the trunk conv
    int convOut = 0;       // after the 3x3 valid conv (and ReLU)
    int poolOut = 0;       // after the 3x3/stride-2 max pool; 0 for stage 4
    int tap = 0;           // side length the branch reads
    int branchConvOut = 0; // after the branch 3x3 conv; also the GAP kernel
};

// Walks the trunk arithmetic for a given patch size. Throws, naming the
// failing layer, when the stack does not fit under VALID sizing.
inline std::array<StageShape, kStages> stage_shapes(int patchSize) {
    std::array<StageShape, kStages> s{};
    int side = patchSize;
    for (int j = 0; j < kStages; ++j) {
        s[j].convIn = side;
        if (side < 3) {
            throw std::invalid_argument("patch size too small: trunk conv C" +
                                        std::to_string(j + 1) + " needs input >= 3, has " +
                                        std::to_string(side));
        }
        s[j].convOut = conv_out_dim(side, 3, 1);
        if (j < kStages - 1) {
            if (s[j].convOut < 3) {
                throw std::invalid_argument("patch size too small: trunk pool P" +
                                            std::to_string(j + 1) + " needs input >= 3, has " +
                                            std::to_string(s[j].convOut));
            }
            s[j].poolOut = pool_out_dim(s[j].convOut, 3, 2, 1);
            s[j].tap = s[j].poolOut;
        } else {
            s[j].poolOut = 0;
            s[j].tap = s[j].convOut;
        }
        if (s[j].tap < 3) {
            throw std::invalid_argument("patch size too small: branch conv B" +
                                        std::to_string(j + 1) + " needs input >= 3, has " +
                                        std::to_string(s[j].tap));
        }
        s[j].branchConvOut = conv_out_dim(s[j].tap, 3, 1);
        side = s[j].tap;
    }
    return s;
}

template <typename T>
struct CascadeNetwork {
    CascadeConfig config;
    std::array<ConvKernel<T>, kStages> trunkConv;   // C1..C4, each followed by ReLU
    std::array<PoolSpec, kStages - 1> trunkPool;    // P1..P3, max 3x3 stride 2
    std::array<ConvKernel<T>, kStages> branchConv;  // B1..B4, 2 filters each
    std::array<StageShape, kStages> shapes;         // patch-mode arithmetic
    std::array<double, kStages> thresholds{0, 0, 0, 0};  // cascade lambdas
    std::array<std::uint64_t, kStages> stageCosts{};     // MACs per stage, patch mode

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& k : trunkConv) n += k.parameter_count();
        for (const auto& k : branchConv) n += k.parameter_count();
        return n;
    }
};

// Per-stage MACs in patch mode: convs cost outH*outW*kh*kw*inC*outC, pools
// cost outH*outW*kh*kw*C. Activations and softmax are free.
inline std::uint64_t stage_cost_from_shapes(const CascadeConfig& cfg,
                                            const std::array<StageShape, kStages>& shapes,
                                            int j) {
    if (j < 1 || j > kStages) {
        throw std::invalid_argument("stage_cost: stage index " + std::to_string(j) +
                                    " out of range 1..4");
    }
    const StageShape& s = shapes[j - 1];
    const std::uint64_t inC = (j == 1) ? cfg.inputChannels : cfg.trunkFilters[j - 2];
    const std::uint64_t outC = cfg.trunkFilters[j - 1];
    std::uint64_t macs = 0;
    macs += static_cast<std::uint64_t>(s.convOut) * s.convOut * 9 * inC * outC;
    if (s.poolOut > 0) {
        macs += static_cast<std::uint64_t>(s.poolOut) * s.poolOut * 9 * outC;
    }
    macs += static_cast<std::uint64_t>(s.branchConvOut) * s.branchConvOut * 9 * outC *
            CascadeConfig::branchFilters;
    // Branch global average pool: one output cell over the full extent.
    macs += static_cast<std::uint64_t>(s.branchConvOut) * s.branchConvOut *
            CascadeConfig::branchFilters;
    return macs;
}

template <typename T>
std::uint64_t stage_cost(const CascadeNetwork<T>& net, int j) {
    return stage_cost_from_shapes(net.config, net.shapes, j);
}

template <typename T>
void init_kernel(ConvKernel<T>& k, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(k.kh) * k.kw * k.inChannels);
    for (auto& w : k.weights) w = static_cast<T>(rng.uniform(-bound, bound));
    for (auto& b : k.bias) b = T(0);
}

template <typename T>
CascadeNetwork<T> build_network(const CascadeConfig& config, std::uint64_t seed) {
    for (int j = 0; j < kStages; ++j) {
        if (config.trunkFilters[j] <= 0) {
            throw std::invalid_argument("build_network: trunk filter count for stage " +
                                        std::to_string(j + 1) + " must be positive");
        }
    }
    if (config.inputChannels <= 0) throw std::invalid_argument("build_network: inputChannels");
    CascadeNetwork<T> net;
    net.config = config;
    net.shapes = stage_shapes(config.patchSize);
    Rng rng(seed);
    int inC = config.inputChannels;
    for (int j = 0; j < kStages; ++j) {
        net.trunkConv[j] = ConvKernel<T>(3, 3, inC, config.trunkFilters[j]);
        init_kernel(net.trunkConv[j], rng);
        inC = config.trunkFilters[j];
        if (j < kStages - 1) net.trunkPool[j] = PoolSpec{PoolKind::Max, 3, 3, 2, 1};
    }
    for (int j = 0; j < kStages; ++j) {
        net.branchConv[j] = ConvKernel<T>(3, 3, config.trunkFilters[j], CascadeConfig::branchFilters);
        init_kernel(net.branchConv[j], rng);
    }
    net.thresholds = {0, 0, 0, 0};
    for (int j = 1; j <= kStages; ++j) net.stageCosts[j - 1] = stage_cost(net, j);
    return net;
}

enum class ForwardMode { AllStages, EarlyExit };

struct StageProbs {
    std::array<double, kStages> probs{0, 0, 0, 0};  // positive probability per evaluated stage
    int stagesEvaluated = 0;
    bool positive = false;
    double finalScore = 0.0;  // product of evaluated probs, 0 when rejected
};

// Activation cache of one patch forward pass; reused by training backward.
template <typename T>
struct PatchCache {
    std::array<Tensor<T>, kStages> convPre;        // trunk conv output, pre-ReLU
    std::array<Tensor<T>, kStages> convPost;       // post-ReLU
    std::array<Tensor<T>, kStages - 1> poolOut;
    std::array<PoolRouting, kStages - 1> poolRoute;
    std::array<Tensor<T>, kStages> branchConvOut;
    std::array<std::array<T, 2>, kStages> gap;     // branch global average
    std::array<std::array<T, 2>, kStages> probs;   // softmax pair per branch
    int stagesComputed = 0;
};

// Runs trunk block j (conv + ReLU + pool except stage 4) and branch head j
// from the given tap input. Returns the next tap (pool output, or the ReLU
// output at stage 4).
template <typename T>
const Tensor<T>& run_stage(const CascadeNetwork<T>& net, int j, const Tensor<T>& input,
                           PatchCache<T>& cache) {
    cache.convPre[j] = conv_forward(input, net.trunkConv[j]);
    cache.convPost[j] = relu(cache.convPre[j]);
    const Tensor<T>* tap = &cache.convPost[j];
    if (j < kStages - 1) {
        auto pooled = pool_forward(cache.convPost[j], net.trunkPool[j]);
        cache.poolOut[j] = std::move(pooled.first);
        cache.poolRoute[j] = std::move(pooled.second);
        tap = &cache.poolOut[j];
    }
    cache.branchConvOut[j] = conv_forward(*tap, net.branchConv[j]);
    const Tensor<T>& bc = cache.branchConvOut[j];
    const T inv = T(1) / static_cast<T>(bc.h * bc.w);
    T s0 = T(0), s1 = T(0);
    for (int y = 0; y < bc.h; ++y) {
        for (int x = 0; x < bc.w; ++x) {
            const T* p = bc.row(y, x);
            s0 += p[0];
            s1 += p[1];
        }
    }
    cache.gap[j] = {s0 * inv, s1 * inv};
    cache.probs[j] = softmax2_pair(cache.gap[j][0], cache.gap[j][1]);
    cache.stagesComputed = j + 1;
    return *tap;
}

template <typename T>
StageProbs forward_patch(const CascadeNetwork<T>& net, const Tensor<T>& patch, ForwardMode mode,
                         PatchCache<T>& cache) {
    const int ps = net.config.patchSize;
    if (patch.h != ps || patch.w != ps || patch.c != net.config.inputChannels) {
        throw std::invalid_argument("forward_patch: patch is " + std::to_string(patch.h) + "x" +
                                    std::to_string(patch.w) + "x" + std::to_string(patch.c) +
                                    ", expected " + std::to_string(ps) + "x" + std::to_string(ps) +
                                    "x" + std::to_string(net.config.inputChannels));
    }
    StageProbs out;
    const Tensor<T>* tap = &patch;
    double score = 1.0;
    bool alive = true;
    for (int j = 0; j < kStages; ++j) {
        tap = &run_stage(net, j, *tap, cache);
        const double pj = static_cast<double>(cache.probs[j][0]);
        out.probs[j] = pj;
        out.stagesEvaluated = j + 1;
        score *= pj;
        if (!(pj > net.thresholds[j])) {
            alive = false;
            if (mode == ForwardMode::EarlyExit) break;
        }
    }
    out.positive = alive && out.stagesEvaluated == kStages;
    out.finalScore = out.positive ? score : 0.0;
    return out;
}

template <typename T>
StageProbs forward_patch(const CascadeNetwork<T>& net, const Tensor<T>& patch,
                         ForwardMode mode = ForwardMode::AllStages) {
    PatchCache<T> cache;
    return forward_patch(net, patch, mode, cache);
}

// --- gradients -------------------------------------------------------------

template <typename T>
struct KernelGrads {
    std::vector<T> dW;
    std::vector<T> dB;

    void resize_like(const ConvKernel<T>& k) {
        dW.assign(k.weights.size(), T(0));
        dB.assign(k.bias.size(), T(0));
    }
    void zero() {
        std::fill(dW.begin(), dW.end(), T(0));
        std::fill(dB.begin(), dB.end(), T(0));
    }
    void add(const ConvGrads<T>& g) {
        for (std::size_t i = 0; i < dW.size(); ++i) dW[i] += g.dWeights[i];
        for (std::size_t i = 0; i < dB.size(); ++i) dB[i] += g.dBias[i];
    }
    void add(const KernelGrads<T>& g) {
        for (std::size_t i = 0; i < dW.size(); ++i) dW[i] += g.dW[i];
        for (std::size_t i = 0; i < dB.size(); ++i) dB[i] += g.dB[i];
    }
};

template <typename T>
struct NetGrads {
    std::array<KernelGrads<T>, kStages> trunk;
    std::array<KernelGrads<T>, kStages> branch;

    void resize_like(const CascadeNetwork<T>& net) {
        for (int j = 0; j < kStages; ++j) {
            trunk[j].resize_like(net.trunkConv[j]);
            branch[j].resize_like(net.branchConv[j]);
        }
    }
    void zero() {
        for (int j = 0; j < kStages; ++j) {
            trunk[j].zero();
            branch[j].zero();
        }
    }
    void add(const NetGrads<T>& o) {
        for (int j = 0; j < kStages; ++j) {
            trunk[j].add(o.trunk[j]);
            branch[j].add(o.branch[j]);
        }
    }
};

// Backward through branch head j: dL/dp_j -> gradient w.r.t. the tap tensor,
// accumulating branch kernel gradients.
template <typename T>
Tensor<T> branch_backward(const CascadeNetwork<T>& net, int j, const PatchCache<T>& cache,
                          const Tensor<T>& tapInput, T dProb, KernelGrads<T>& bg) {
    const auto dz = softmax2_pair_backward(cache.probs[j], std::array<T, 2>{dProb, T(0)});
    const Tensor<T>& bc = cache.branchConvOut[j];
    const T inv = T(1) / static_cast<T>(bc.h * bc.w);
    Tensor<T> dBc(bc.h, bc.w, 2);
    for (int y = 0; y < bc.h; ++y) {
        for (int x = 0; x < bc.w; ++x) {
            T* g = dBc.row(y, x);
            g[0] = dz[0] * inv;
            g[1] = dz[1] * inv;
        }
    }
    ConvGrads<T> cg = conv_backward(tapInput, net.branchConv[j], dBc);
    bg.add(cg);
    return std::move(cg.dInput);
}

// Full backward pass from per-stage probability gradients. dProbs[j] may be
// zero for stages that received no loss signal. Gradients are accumulated.
template <typename T>
void backward_patch(const CascadeNetwork<T>& net, const Tensor<T>& patch,
                    const PatchCache<T>& cache, const std::array<T, kStages>& dProbs,
                    NetGrads<T>& grads) {
    Tensor<T> dTap;  // gradient flowing into the tap of the current stage
    for (int j = kStages - 1; j >= 0; --j) {
        const Tensor<T>& tapInput =
            (j == kStages - 1) ? cache.convPost[j] : cache.poolOut[j];
        Tensor<T> dFromBranch =
            branch_backward(net, j, cache, tapInput, dProbs[j], grads.branch[j]);
        if (dTap.size() == 0) {
            dTap = std::move(dFromBranch);
        } else {
            for (std::size_t i = 0; i < dTap.data.size(); ++i) dTap.data[i] += dFromBranch.data[i];
        }
        // Through the pool (stages 1..3), then ReLU, then the trunk conv.
        Tensor<T> dConvPost =
            (j < kStages - 1) ? pool_backward(cache.poolRoute[j], dTap) : std::move(dTap);
        Tensor<T> dConvPre = relu_backward(cache.convPre[j], dConvPost);
        const Tensor<T>& convInput = (j == 0) ? patch : cache.poolOut[j - 1];
        ConvGrads<T> cg = conv_backward(convInput, net.trunkConv[j], dConvPre, j > 0);
        grads.trunk[j].add(cg);
        dTap = std::move(cg.dInput);
    }
}

// Backward through stage j only: branch head, pool, ReLU and the trunk conv,
// without propagating into earlier blocks. Branch-level training uses this
// with earlier blocks frozen.
template <typename T>
void backward_stage(const CascadeNetwork<T>& net, int j, const Tensor<T>& convInput,
                    const PatchCache<T>& cache, T dProb, KernelGrads<T>& trunkG,
                    KernelGrads<T>& branchG) {
    const Tensor<T>& tapInput = (j == kStages - 1) ? cache.convPost[j] : cache.poolOut[j];
    Tensor<T> dTap = branch_backward(net, j, cache, tapInput, dProb, branchG);
    Tensor<T> dConvPost =
        (j < kStages - 1) ? pool_backward(cache.poolRoute[j], dTap) : std::move(dTap);
    Tensor<T> dConvPre = relu_backward(cache.convPre[j], dConvPost);
    ConvGrads<T> cg = conv_backward(convInput, net.trunkConv[j], dConvPre, false);
    trunkG.add(cg);
}

}  // namespace ccnn
