#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ccnn/dense.hpp"
#include "ccnn/loss.hpp"
#include "ccnn/model.hpp"
#include "ccnn/rng.hpp"

namespace ccnn {

struct CheckResult {
    std::string name;
    double maxRelErr = 0;
    int coordinates = 0;
    bool pass = false;
};

namespace checkdetail {

inline double rel_err(double analytic, double fd) {
    const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-10});
    return std::abs(analytic - fd) / denom;
}

// Central finite difference of a scalar function along one coordinate.
inline double central_diff(const std::function<double()>& f, double& coord, double step) {
    const double saved = coord;
    coord = saved + step;
    const double up = f();
    coord = saved - step;
    const double down = f();
    coord = saved;
    return (up - down) / (2 * step);
}

inline Tensor<double> random_tensor(int h, int w, int c, Rng& rng, double lo = -1, double hi = 1) {
    Tensor<double> t(h, w, c);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace checkdetail

// Finite-difference checks of every layer backward at randomly sampled
// coordinates (at least `samples` per parameter group), double precision.
std::vector<CheckResult> gradient_checks(std::uint64_t seed, int samples = 120,
                                         double tolerance = 1e-6, double step = 1e-5);

// Finite-difference check of the full joint objective against the analytic
// whole-network gradient, sampling random weights across all kernels.
CheckResult full_network_gradient_check(std::uint64_t seed, int samples = 100,
                                        double tolerance = 1e-4, double step = 1e-5);

// Dense/patch agreement on random images with random weights at lambda = 0:
// max |dense map - forward_patch| over all anchors, stages and the final map.
template <typename T>
double dense_patch_max_error(const CascadeConfig& cfg, std::uint64_t seed, int images,
                             int imageSize) {
    CascadeNetwork<T> net = build_network<T>(cfg, seed);
    DensePlan plan = to_dense_plan(net);
    const std::array<double, kStages> zeros{0, 0, 0, 0};
    Rng rng(Rng::derive(seed, 77));
    double worst = 0;
    PatchCache<T> cache;
    for (int im = 0; im < images; ++im) {
        Tensor<T> image(imageSize, imageSize, cfg.inputChannels);
        for (auto& v : image.data) v = static_cast<T>(rng.uniform());
        DenseResult dense = dense_forward(net, plan, image, zeros, false);
        for (int ay = 0; ay < dense.anchorsH; ++ay) {
            for (int ax = 0; ax < dense.anchorsW; ++ax) {
                Tensor<T> patch(cfg.patchSize, cfg.patchSize, cfg.inputChannels);
                for (int y = 0; y < cfg.patchSize; ++y) {
                    const T* src = image.row(ay + y, ax);
                    std::copy(src, src + static_cast<std::size_t>(cfg.patchSize) * image.c,
                              patch.row(y, 0));
                }
                StageProbs sp = forward_patch(net, patch, ForwardMode::AllStages, cache);
                for (int j = 0; j < kStages; ++j) {
                    worst = std::max(worst,
                                     std::abs(dense.stageProb[j].at(ay, ax, 0) - sp.probs[j]));
                }
                worst = std::max(worst, std::abs(dense.finalMap.at(ay, ax, 0) - sp.finalScore));
            }
        }
    }
    return worst;
}

}  // namespace ccnn
