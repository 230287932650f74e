#include "ccnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace ccnn {

double iou(const Rect& a, const Rect& b) {
    const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0 ? inter / uni : 0.0;
}

MatchResult match_detections(const std::vector<Rect>& detections,
                             const std::vector<double>& scores,
                             const std::vector<Rect>& groundTruth, double iouThreshold) {
    if (detections.size() != scores.size()) {
        throw std::invalid_argument("match_detections: detection/score size mismatch");
    }
    std::vector<std::size_t> order(detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });

    MatchResult res;
    std::vector<char> gtUsed(groundTruth.size(), 0);
    for (std::size_t oi : order) {
        double best = 0;
        int bestGt = -1;
        for (std::size_t g = 0; g < groundTruth.size(); ++g) {
            if (gtUsed[g]) continue;
            const double v = iou(detections[oi], groundTruth[g]);
            if (v > best) {
                best = v;
                bestGt = static_cast<int>(g);
            }
        }
        if (bestGt >= 0 && best >= iouThreshold) {
            gtUsed[static_cast<std::size_t>(bestGt)] = 1;
            ++res.tp;
            res.matches.emplace_back(static_cast<int>(oi), bestGt);
        } else {
            ++res.fp;
        }
    }
    res.fn = static_cast<int>(groundTruth.size()) - res.tp;
    return res;
}

RocCurve roc_points(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw std::invalid_argument("roc_points: bad inputs");
    }
    std::size_t pos = 0, neg = 0;
    for (int l : labels) (l == 1 ? pos : neg) += 1;
    if (pos == 0 || neg == 0) {
        throw std::invalid_argument("roc_points: need both classes present");
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve curve;
    curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double t = scores[order[i]];
        // consume every sample tied at this threshold
        while (i < order.size() && scores[order[i]] == t) {
            (labels[order[i]] == 1 ? tp : fp) += 1;
            ++i;
        }
        curve.points.push_back({t, static_cast<double>(fp) / static_cast<double>(neg),
                                static_cast<double>(tp) / static_cast<double>(pos)});
    }
    double auc = 0;
    for (std::size_t k = 1; k < curve.points.size(); ++k) {
        const auto& a = curve.points[k - 1];
        const auto& b = curve.points[k];
        auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
    }
    curve.auc = auc;
    return curve;
}

double recall_at_fpr(const RocCurve& curve, double fprTarget) {
    if (curve.points.empty()) throw std::invalid_argument("recall_at_fpr: empty curve");
    std::size_t last = 0;
    bool found = false;
    for (std::size_t i = 0; i < curve.points.size(); ++i) {
        if (curve.points[i].fpr <= fprTarget) {
            last = i;
            found = true;
        }
    }
    if (!found) return 0.0;
    const RocPoint& a = curve.points[last];
    if (last + 1 >= curve.points.size()) return a.tpr;
    const RocPoint& b = curve.points[last + 1];
    if (b.fpr <= a.fpr) return a.tpr;
    const double t = (fprTarget - a.fpr) / (b.fpr - a.fpr);
    return a.tpr + t * (b.tpr - a.tpr);
}

void write_roc_csv(const RocCurve& curve, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_roc_csv: cannot open " + path);
    f << "threshold,fpr,tpr\n";
    char buf[96];
    for (const RocPoint& p : curve.points) {
        std::snprintf(buf, sizeof(buf), "%.9g,%.6f,%.6f\n", p.threshold, p.fpr, p.tpr);
        f << buf;
    }
}

void write_stage_report_csv(const StageReport& report, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_stage_report_csv: cannot open " + path);
    f << "stage,recall_at_0.1fpr,accuracy,survivors,negative_survivors\n";
    char buf[128];
    for (int j = 0; j < kStages; ++j) {
        const StageRow& r = report.rows[j];
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f\n", j + 1, r.recallAt01Fpr,
                      r.accuracy, r.survivorFraction, r.negativeSurvivorFraction);
        f << buf;
    }
}

}  // namespace ccnn
