#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccnn/model.hpp"

namespace ccnn {

// Dense-mode execution plan. Every pooling stride becomes 1 and each layer
// runs at a dilation equal to the product of the original strides of the
// pooling layers before it, so a stride-1 whole-image pass reproduces the
// patch computation at every anchor. Weights are shared, never rewritten.
struct DensePlan {
    std::array<int, kStages> trunkConvDilation{};
    std::array<int, kStages - 1> trunkPoolDilation{};
    std::array<int, kStages> branchConvDilation{};
    std::array<int, kStages> branchGapDilation{};
    std::array<int, kStages> branchGapKernel{};
};

template <typename T>
DensePlan to_dense_plan(const CascadeNetwork<T>& net) {
    DensePlan plan;
    int cum = 1;
    for (int j = 0; j < kStages; ++j) {
        plan.trunkConvDilation[j] = cum;
        if (j < kStages - 1) {
            plan.trunkPoolDilation[j] = cum;
            cum *= net.trunkPool[j].stride;
        }
        // The branch reads the stage tap, which sits after the stage's pool.
        plan.branchConvDilation[j] = cum;
        plan.branchGapDilation[j] = cum;
        plan.branchGapKernel[j] = net.shapes[j].branchConvOut;
    }
    return plan;
}

struct DenseStats {
    std::uint64_t macs = 0;        // multiply-accumulates actually performed
    std::uint64_t macsNoExit = 0;  // cost of evaluating every anchor at every stage
    std::uint64_t anchorsTotal = 0;
    std::array<std::uint64_t, kStages> anchorsEvaluated{};
    std::array<std::uint64_t, kStages> rejectedAtStage{};

    void add(const DenseStats& o) {
        macs += o.macs;
        macsNoExit += o.macsNoExit;
        anchorsTotal += o.anchorsTotal;
        for (int j = 0; j < kStages; ++j) {
            anchorsEvaluated[j] += o.anchorsEvaluated[j];
            rejectedAtStage[j] += o.rejectedAtStage[j];
        }
    }
};

// Per-anchor score maps of one dense pass. Probabilities are reported in
// double so that dense and patch mode agree bit for bit after the cast.
struct DenseResult {
    int anchorsH = 0;
    int anchorsW = 0;
    std::array<Tensor<double>, kStages> stageProb;  // 0 where skipped/rejected
    Tensor<double> finalMap;                        // product over stages, 0 if rejected
    DenseStats stats;
};

namespace densedetail {

constexpr std::uint8_t kUnknown = 0, kPending = 1, kComputed = 2;

template <typename T>
struct MapState {
    Tensor<T> map;
    std::vector<std::uint8_t> state;  // per spatial cell
    int h = 0, w = 0;

    void init(int hh, int ww, int cc) {
        h = hh;
        w = ww;
        map = Tensor<T>(hh, ww, cc);
        state.assign(static_cast<std::size_t>(hh) * ww, kUnknown);
    }
    std::uint8_t& st(int y, int x) { return state[static_cast<std::size_t>(y) * w + x]; }
};

struct LayerInfo {
    bool isConv = false;
    int stage = 0;     // trunk stage index (0-based)
    int dilation = 1;
    int kh = 3, kw = 3;
    std::uint64_t cellCost = 0;  // MACs per spatial output cell
};

// Marks the (k x k, dilation d) input window of one output cell.
template <typename T>
inline void mark_window(MapState<T>& in, int y, int x, int k, int d) {
    for (int a = 0; a < k; ++a) {
        std::uint8_t* row = &in.state[static_cast<std::size_t>(y + a * d) * in.w + x];
        for (int b = 0; b < k; ++b) {
            std::uint8_t& s = row[static_cast<std::size_t>(b) * d];
            if (s == kUnknown) s = kPending;
        }
    }
}

}  // namespace densedetail

// Exact whole-image evaluation of the patch classifier. The final map entry
// at (y, x) equals forward_patch on the patch anchored there; positions that
// fail a stage threshold are zeroed, and with sparse=true they are skipped in
// later stages (which never changes a surviving score). Stats count the MACs
// actually spent against the cost of running every anchor through all stages.
template <typename T>
DenseResult dense_forward(const CascadeNetwork<T>& net, const DensePlan& plan,
                          const Tensor<T>& image, const std::array<double, kStages>& lambdas,
                          bool sparse) {
    using namespace densedetail;
    const int ps = net.config.patchSize;
    if (image.h < ps || image.w < ps) {
        throw std::invalid_argument("dense_forward: image " + std::to_string(image.h) + "x" +
                                    std::to_string(image.w) + " smaller than patch size " +
                                    std::to_string(ps));
    }
    if (image.c != net.config.inputChannels) {
        throw std::invalid_argument("dense_forward: image has " + std::to_string(image.c) +
                                    " channels, expected " +
                                    std::to_string(net.config.inputChannels));
    }

    // Trunk chain in dense order: C1 P1 C2 P2 C3 P3 C4. Taps per stage are
    // maps 1, 3, 5, 6.
    constexpr int nTrunk = 2 * kStages - 1;
    std::array<LayerInfo, nTrunk> info;
    std::array<densedetail::MapState<T>, nTrunk> maps;
    std::array<int, kStages> tapIndex{};
    {
        int h = image.h, w = image.w;
        int li = 0;
        for (int j = 0; j < kStages; ++j) {
            const auto& k = net.trunkConv[j];
            const int d = plan.trunkConvDilation[j];
            info[li] = {true, j, d, k.kh, k.kw,
                        static_cast<std::uint64_t>(k.kh) * k.kw * k.inChannels * k.outChannels};
            h = conv_out_dim(h, k.kh, d);
            w = conv_out_dim(w, k.kw, d);
            maps[li].init(h, w, k.outChannels);
            ++li;
            if (j < kStages - 1) {
                const auto& p = net.trunkPool[j];
                const int pd = plan.trunkPoolDilation[j];
                info[li] = {false, j, pd, p.kh, p.kw,
                            static_cast<std::uint64_t>(p.kh) * p.kw * k.outChannels};
                h = conv_out_dim(h, p.kh, pd);  // stride 1 in dense mode
                w = conv_out_dim(w, p.kw, pd);
                maps[li].init(h, w, k.outChannels);
                tapIndex[j] = li;
                ++li;
            } else {
                tapIndex[j] = li - 1;
            }
        }
    }
    std::array<densedetail::MapState<T>, kStages> bconv;
    std::array<std::uint64_t, kStages> bconvCellCost{};
    for (int j = 0; j < kStages; ++j) {
        const auto& tap = maps[tapIndex[j]];
        const int bd = plan.branchConvDilation[j];
        bconv[j].init(conv_out_dim(tap.h, 3, bd), conv_out_dim(tap.w, 3, bd),
                      CascadeConfig::branchFilters);
        bconvCellCost[j] = static_cast<std::uint64_t>(9) * net.branchConv[j].inChannels *
                           CascadeConfig::branchFilters;
    }

    DenseResult res;
    res.anchorsH = image.h - ps + 1;
    res.anchorsW = image.w - ps + 1;
    for (int j = 0; j < kStages; ++j) res.stageProb[j] = Tensor<double>(res.anchorsH, res.anchorsW, 1);
    res.finalMap = Tensor<double>(res.anchorsH, res.anchorsW, 1);
    res.stats.anchorsTotal =
        static_cast<std::uint64_t>(res.anchorsH) * static_cast<std::uint64_t>(res.anchorsW);

    const std::uint64_t gapCost[kStages] = {
        static_cast<std::uint64_t>(plan.branchGapKernel[0]) * plan.branchGapKernel[0] * 2,
        static_cast<std::uint64_t>(plan.branchGapKernel[1]) * plan.branchGapKernel[1] * 2,
        static_cast<std::uint64_t>(plan.branchGapKernel[2]) * plan.branchGapKernel[2] * 2,
        static_cast<std::uint64_t>(plan.branchGapKernel[3]) * plan.branchGapKernel[3] * 2};

    // One wave per stage: mark the branch cells the surviving anchors need,
    // pull the requirement down the trunk, evaluate pending cells bottom-up,
    // then score the anchors.
    std::vector<std::uint8_t> alive(res.stats.anchorsTotal, 1);
    std::vector<double> score(res.stats.anchorsTotal, 1.0);

    // Counting pass for the no-exit reference: identical marking with every
    // anchor alive, no evaluation.
    {
        std::array<densedetail::MapState<T>, nTrunk> cmaps;
        std::array<densedetail::MapState<T>, kStages> cbconv;
        for (int li = 0; li < nTrunk; ++li) {
            cmaps[li].h = maps[li].h;
            cmaps[li].w = maps[li].w;
            cmaps[li].state.assign(maps[li].state.size(), kUnknown);
        }
        for (int j = 0; j < kStages; ++j) {
            cbconv[j].h = bconv[j].h;
            cbconv[j].w = bconv[j].w;
            cbconv[j].state.assign(bconv[j].state.size(), kUnknown);
        }
        std::uint64_t total = 0;
        for (int j = 0; j < kStages; ++j) {
            const int gd = plan.branchGapDilation[j];
            const int gk = plan.branchGapKernel[j];
            for (int ay = 0; ay < res.anchorsH; ++ay) {
                for (int ax = 0; ax < res.anchorsW; ++ax) {
                    mark_window(cbconv[j], ay, ax, gk, gd);
                }
            }
            total += res.stats.anchorsTotal * gapCost[j];
            const int bd = plan.branchConvDilation[j];
            auto& tap = cmaps[tapIndex[j]];
            std::uint64_t cells = 0;
            for (int y = 0; y < cbconv[j].h; ++y) {
                for (int x = 0; x < cbconv[j].w; ++x) {
                    if (cbconv[j].st(y, x) != kPending) continue;
                    cbconv[j].st(y, x) = kComputed;
                    ++cells;
                    mark_window(tap, y, x, 3, bd);
                }
            }
            total += cells * bconvCellCost[j];
            for (int li = tapIndex[j]; li >= 0; --li) {
                auto& m = cmaps[li];
                densedetail::MapState<T>* below = li > 0 ? &cmaps[li - 1] : nullptr;
                std::uint64_t newCells = 0;
                for (int y = 0; y < m.h; ++y) {
                    for (int x = 0; x < m.w; ++x) {
                        if (m.st(y, x) != kPending) continue;
                        m.st(y, x) = kComputed;
                        ++newCells;
                        if (below) mark_window(*below, y, x, info[li].kh, info[li].dilation);
                    }
                }
                total += newCells * info[li].cellCost;
            }
        }
        res.stats.macsNoExit = total;
    }

    // Real pass.
    std::array<PoolSpec, nTrunk> densePool;  // pool specs with stride 1
    for (int li = 0; li < nTrunk; ++li) {
        if (!info[li].isConv) {
            densePool[li] = net.trunkPool[info[li].stage];
            densePool[li].stride = 1;
            densePool[li].dilation = info[li].dilation;
        }
    }

    for (int j = 0; j < kStages; ++j) {
        const int gd = plan.branchGapDilation[j];
        const int gk = plan.branchGapKernel[j];
        const int bd = plan.branchConvDilation[j];

        std::uint64_t evaluatedAnchors = 0;
        for (int ay = 0; ay < res.anchorsH; ++ay) {
            for (int ax = 0; ax < res.anchorsW; ++ax) {
                if (sparse && !alive[static_cast<std::size_t>(ay) * res.anchorsW + ax]) continue;
                mark_window(bconv[j], ay, ax, gk, gd);
                ++evaluatedAnchors;
            }
        }
        res.stats.anchorsEvaluated[j] = evaluatedAnchors;
        res.stats.macs += evaluatedAnchors * gapCost[j];

        // Pull branch-conv needs onto the tap, then down the trunk.
        auto& tap = maps[tapIndex[j]];
        std::uint64_t cells = 0;
        for (int y = 0; y < bconv[j].h; ++y) {
            for (int x = 0; x < bconv[j].w; ++x) {
                if (bconv[j].st(y, x) != kPending) continue;
                ++cells;
                mark_window(tap, y, x, 3, bd);
            }
        }
        res.stats.macs += cells * bconvCellCost[j];
        for (int li = tapIndex[j]; li >= 0; --li) {
            auto& m = maps[li];
            densedetail::MapState<T>* below = li > 0 ? &maps[li - 1] : nullptr;
            std::uint64_t newCells = 0;
            for (int y = 0; y < m.h; ++y) {
                for (int x = 0; x < m.w; ++x) {
                    if (m.st(y, x) != kPending) continue;
                    ++newCells;
                    if (below) mark_window(*below, y, x, info[li].kh, info[li].dilation);
                }
            }
            res.stats.macs += newCells * info[li].cellCost;
        }

        // Evaluate pending cells bottom-up; every input a pending cell needs
        // is pending or computed one level below.
        for (int li = 0; li <= tapIndex[j]; ++li) {
            auto& m = maps[li];
            const Tensor<T>& input = li > 0 ? maps[li - 1].map : image;
            if (info[li].isConv) {
                const auto& kern = net.trunkConv[info[li].stage];
                for (int y = 0; y < m.h; ++y) {
                    for (int x = 0; x < m.w; ++x) {
                        if (m.st(y, x) != kPending) continue;
                        m.st(y, x) = kComputed;
                        T* out = m.map.row(y, x);
                        conv_cell(input, kern, info[li].dilation, y, x, out);
                        for (int ch = 0; ch < m.map.c; ++ch)
                            if (out[ch] < T(0)) out[ch] = T(0);
                    }
                }
            } else {
                const PoolSpec& p = densePool[li];
                for (int y = 0; y < m.h; ++y) {
                    for (int x = 0; x < m.w; ++x) {
                        if (m.st(y, x) != kPending) continue;
                        m.st(y, x) = kComputed;
                        max_pool_cell(input, p, y, x, m.map.row(y, x), nullptr);
                    }
                }
            }
        }
        for (int y = 0; y < bconv[j].h; ++y) {
            for (int x = 0; x < bconv[j].w; ++x) {
                if (bconv[j].st(y, x) != kPending) continue;
                bconv[j].st(y, x) = kComputed;
                conv_cell(tap.map, net.branchConv[j], bd, y, x, bconv[j].map.row(y, x));
            }
        }

        // Score the anchors at this stage.
        const Tensor<T>& bm = bconv[j].map;
        const T inv = T(1) / static_cast<T>(gk * gk);
        for (int ay = 0; ay < res.anchorsH; ++ay) {
            for (int ax = 0; ax < res.anchorsW; ++ax) {
                const std::size_t ai = static_cast<std::size_t>(ay) * res.anchorsW + ax;
                if (sparse && !alive[ai]) continue;
                T s0 = T(0), s1 = T(0);
                for (int a = 0; a < gk; ++a) {
                    const T* row = bm.row(ay + a * gd, ax);
                    for (int b = 0; b < gk; ++b) {
                        const T* cellv = row + static_cast<std::size_t>(b) * gd * bm.c;
                        s0 += cellv[0];
                        s1 += cellv[1];
                    }
                }
                const auto prob = softmax2_pair(s0 * inv, s1 * inv);
                const double pj = static_cast<double>(prob[0]);
                res.stageProb[j].at(ay, ax, 0) = pj;
                if (alive[ai]) {
                    score[ai] *= pj;
                    if (!(pj > lambdas[j])) {
                        alive[ai] = 0;
                        score[ai] = 0.0;
                        ++res.stats.rejectedAtStage[j];
                    }
                }
            }
        }
    }

    for (std::size_t ai = 0; ai < alive.size(); ++ai) {
        res.finalMap.data[ai] = alive[ai] ? score[ai] : 0.0;
    }
    return res;
}

// --- image pyramid and box handling ----------------------------------------

struct DetectionBox {
    int x = 0;
    int y = 0;
    int size = 0;
    double score = 0.0;
    int level = 0;
};

inline double box_iou(const DetectionBox& a, const DetectionBox& b) {
    const double ix = std::max(0.0, std::min<double>(a.x + a.size, b.x + b.size) -
                                        std::max<double>(a.x, b.x));
    const double iy = std::max(0.0, std::min<double>(a.y + a.size, b.y + b.size) -
                                        std::max<double>(a.y, b.y));
    const double inter = ix * iy;
    const double uni =
        static_cast<double>(a.size) * a.size + static_cast<double>(b.size) * b.size - inter;
    return uni > 0 ? inter / uni : 0.0;
}

// Greedy non-maximum suppression; highest score wins, ties broken by
// (level, y, x) so the output order is deterministic.
inline std::vector<DetectionBox> nms(std::vector<DetectionBox> boxes, double iouThreshold) {
    std::sort(boxes.begin(), boxes.end(), [](const DetectionBox& a, const DetectionBox& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.level != b.level) return a.level < b.level;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });
    std::vector<DetectionBox> kept;
    for (const auto& box : boxes) {
        bool suppressed = false;
        for (const auto& k : kept) {
            if (box_iou(box, k) > iouThreshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(box);
    }
    return kept;
}

// Anchor/box coordinate mapping for one pyramid level. Exact inverses for
// any scale > 1.
inline double level_scale(double scaleFactor, int level) {
    return std::pow(scaleFactor, static_cast<double>(level));
}

inline DetectionBox anchor_to_box(int ay, int ax, int patchSize, double scaleFactor, int level,
                                  double score) {
    const double s = level_scale(scaleFactor, level);
    DetectionBox b;
    b.x = static_cast<int>(std::lround(ax * s));
    b.y = static_cast<int>(std::lround(ay * s));
    b.size = static_cast<int>(std::lround(patchSize * s));
    b.score = score;
    b.level = level;
    return b;
}

inline std::pair<int, int> box_to_anchor(const DetectionBox& b, double scaleFactor) {
    const double s = level_scale(scaleFactor, b.level);
    return {static_cast<int>(std::lround(b.y / s)), static_cast<int>(std::lround(b.x / s))};
}

// Bilinear resize; interpolation in double regardless of T.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& src, int outH, int outW) {
    if (outH <= 0 || outW <= 0) throw std::invalid_argument("resize_bilinear: bad target size");
    Tensor<T> out(outH, outW, src.c);
    const double sy = static_cast<double>(src.h) / outH;
    const double sx = static_cast<double>(src.w) / outW;
    for (int y = 0; y < outH; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(src.h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < outW; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(src.w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.w - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < src.c; ++ch) {
                const double v00 = static_cast<double>(src.at(y0, x0, ch));
                const double v01 = static_cast<double>(src.at(y0, x1, ch));
                const double v10 = static_cast<double>(src.at(y1, x0, ch));
                const double v11 = static_cast<double>(src.at(y1, x1, ch));
                const double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                 wy * ((1 - wx) * v10 + wx * v11);
                out.at(y, x, ch) = static_cast<T>(v);
            }
        }
    }
    return out;
}

struct DetectParams {
    double scaleFactor = 1.25;
    int minSize = 0;        // smallest box side to search; 0 means the patch size
    double nmsIou = 0.3;
    double minScore = 0.0;  // extra gate on the final cascade score
};

struct DetectResult {
    std::vector<DetectionBox> boxes;
    DenseStats stats;
};

// Multi-scale detection: dense cascade inference on an image pyramid. Levels
// below 0 upscale the image so players smaller than the patch can be found
// when minSize asks for them; level 0 upward repeatedly downscales by
// scaleFactor until the image is smaller than one patch.
template <typename T>
DetectResult pyramid_detect(const CascadeNetwork<T>& net, const Tensor<T>& image,
                            const std::array<double, kStages>& lambdas,
                            const DetectParams& params = {}) {
    if (!(params.scaleFactor > 1.0)) {
        throw std::invalid_argument("pyramid_detect: scale factor must exceed 1");
    }
    const int ps = net.config.patchSize;
    const int minSize = params.minSize > 0 ? params.minSize : ps;

    int lmin = 0;
    while (std::lround(ps * level_scale(params.scaleFactor, lmin - 1)) >= minSize) --lmin;

    DensePlan plan = to_dense_plan(net);
    DetectResult result;
    std::vector<DetectionBox> all;

    Tensor<T> prev;  // previous level image for cascaded downscaling
    for (int level = lmin;; ++level) {
        const double s = level_scale(params.scaleFactor, level);
        const int lw = static_cast<int>(std::floor(image.w / s));
        const int lh = static_cast<int>(std::floor(image.h / s));
        if (lw < ps || lh < ps) break;

        Tensor<T> levelImage;
        if (level <= 0) {
            levelImage = (lw == image.w && lh == image.h) ? image : resize_bilinear(image, lh, lw);
        } else {
            levelImage = resize_bilinear(prev, lh, lw);
        }

        DenseResult dr = dense_forward(net, plan, levelImage, lambdas, true);
        result.stats.add(dr.stats);
        for (int ay = 0; ay < dr.anchorsH; ++ay) {
            for (int ax = 0; ax < dr.anchorsW; ++ax) {
                const double sc = dr.finalMap.at(ay, ax, 0);
                if (sc <= 0.0 || sc < params.minScore) continue;
                DetectionBox b = anchor_to_box(ay, ax, ps, params.scaleFactor, level, sc);
                b.size = std::min({b.size, image.w, image.h});
                b.x = std::min(std::max(b.x, 0), image.w - b.size);
                b.y = std::min(std::max(b.y, 0), image.h - b.size);
                all.push_back(b);
            }
        }
        prev = std::move(levelImage);
    }

    result.boxes = nms(std::move(all), params.nmsIou);
    return result;
}

}  // namespace ccnn
