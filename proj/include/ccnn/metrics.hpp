#pragma once

#include <array>
#include <string>
#include <vector>

#include "ccnn/model.hpp"
#include "ccnn/samples.hpp"

namespace ccnn {

struct Rect {
    double x = 0, y = 0, w = 0, h = 0;
};

double iou(const Rect& a, const Rect& b);

struct MatchResult {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    std::vector<std::pair<int, int>> matches;  // (detection index, gt index)
};

// Greedy one-to-one matching in descending score order; a detection is a true
// positive iff it overlaps a still-unmatched ground truth at or above the
// threshold.
MatchResult match_detections(const std::vector<Rect>& detections,
                             const std::vector<double>& scores, const std::vector<Rect>& groundTruth,
                             double iouThreshold = 0.7);

struct RocPoint {
    double threshold = 0;
    double fpr = 0;
    double tpr = 0;
};

struct RocCurve {
    std::vector<RocPoint> points;  // threshold descending, (0,0) .. (1,1)
    double auc = 0;
};

// Threshold sweep over the unique scores (predict positive at score >= t),
// AUC by the trapezoidal rule. Throws when only one class is present.
RocCurve roc_points(const std::vector<double>& scores, const std::vector<int>& labels);

// TPR at the target FPR, linearly interpolated between adjacent curve points.
double recall_at_fpr(const RocCurve& curve, double fprTarget = 0.1);

void write_roc_csv(const RocCurve& curve, const std::string& path);

struct StageRow {
    double recallAt01Fpr = 0;
    double accuracy = 0;          // at the 0.5 cumulative-score threshold
    double survivorFraction = 0;  // fraction of patches alive under the lambdas
    double negativeSurvivorFraction = 0;
};

struct StageReport {
    std::array<StageRow, kStages> rows;
};

void write_stage_report_csv(const StageReport& report, const std::string& path);

// Cumulative per-stage statistics over a patch set: recall@0.1FPR and
// accuracy using the product of the first j probabilities, survivors under
// the calibrated thresholds.
template <typename T>
StageReport stage_report(const CascadeNetwork<T>& net, const SampleSet<T>& patches) {
    if (patches.empty()) throw std::invalid_argument("stage_report: empty patch set");
    const std::size_t n = patches.size();
    std::vector<std::array<double, kStages>> probs(n);
    std::vector<int> labels(n);
    PatchCache<T> cache;
    for (std::size_t i = 0; i < n; ++i) {
        StageProbs sp = forward_patch(net, patches.samples[i].patch, ForwardMode::AllStages, cache);
        for (int j = 0; j < kStages; ++j) probs[i][j] = sp.probs[j];
        labels[i] = patches.samples[i].label;
    }

    StageReport report;
    std::size_t negTotal = 0;
    for (int l : labels) negTotal += l == 0;
    for (int j = 0; j < kStages; ++j) {
        std::vector<double> cumulative(n);
        std::size_t correct = 0, alive = 0, negAlive = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double prod = 1.0;
            bool pass = true;
            for (int u = 0; u <= j; ++u) {
                prod *= probs[i][u];
                pass = pass && probs[i][u] > net.thresholds[u];
            }
            cumulative[i] = prod;
            correct += (prod > 0.5 ? 1 : 0) == labels[i];
            alive += pass;
            negAlive += pass && labels[i] == 0;
        }
        RocCurve curve = roc_points(cumulative, labels);
        report.rows[j].recallAt01Fpr = recall_at_fpr(curve, 0.1);
        report.rows[j].accuracy = static_cast<double>(correct) / static_cast<double>(n);
        report.rows[j].survivorFraction = static_cast<double>(alive) / static_cast<double>(n);
        report.rows[j].negativeSurvivorFraction =
            negTotal > 0 ? static_cast<double>(negAlive) / static_cast<double>(negTotal) : 0.0;
    }
    return report;
}

}  // namespace ccnn
