#include <cmath>

#include "ccnn/dense.hpp"
#include "ccnn/rng.hpp"
#include "ccnn/selfcheck.hpp"
#include "doctest.h"

using namespace ccnn;

namespace {

template <typename T>
Tensor<T> random_image(int h, int w, Rng& rng) {
    Tensor<T> t(h, w, 3);
    for (auto& v : t.data) v = static_cast<T>(rng.uniform());
    return t;
}

}  // namespace

TEST_CASE("dense plan carries the cumulative-stride dilations") {
    CascadeConfig cfg;
    cfg.trunkFilters = {4, 4, 4, 4};
    auto net = build_network<float>(cfg, 1);
    DensePlan plan = to_dense_plan(net);
    CHECK(plan.trunkConvDilation == std::array<int, 4>{1, 2, 4, 8});
    CHECK(plan.trunkPoolDilation == std::array<int, 3>{1, 2, 4});
    CHECK(plan.branchConvDilation == std::array<int, 4>{2, 4, 8, 8});
    CHECK(plan.branchGapDilation == std::array<int, 4>{2, 4, 8, 8});
    CHECK(plan.branchGapKernel == std::array<int, 4>{28, 11, 3, 1});
}

TEST_CASE("building the plan leaves the weights untouched") {
    CascadeConfig cfg;
    cfg.trunkFilters = {4, 4, 4, 4};
    auto net = build_network<float>(cfg, 2);
    auto before = net.trunkConv[0].weights;
    (void)to_dense_plan(net);
    CHECK(net.trunkConv[0].weights == before);
}

TEST_CASE("a 64x64 image yields the single-patch result") {
    CascadeConfig cfg;
    cfg.trunkFilters = {4, 4, 4, 4};
    auto net = build_network<double>(cfg, 3);
    Rng rng(5);
    Tensor<double> image = random_image<double>(64, 64, rng);
    DenseResult dr = dense_forward(net, to_dense_plan(net), image, {0, 0, 0, 0}, false);
    CHECK(dr.anchorsH == 1);
    CHECK(dr.anchorsW == 1);
    StageProbs sp = forward_patch(net, image);
    for (int j = 0; j < kStages; ++j) {
        CHECK(dr.stageProb[j].at(0, 0, 0) == sp.probs[j]);
    }
    CHECK(dr.finalMap.at(0, 0, 0) == sp.finalScore);
}

TEST_CASE("dense maps equal the sliding patch oracle at every anchor") {
    CascadeConfig cfg;
    cfg.trunkFilters = {4, 4, 4, 4};
    SUBCASE("double precision") {
        const double err = dense_patch_max_error<double>(cfg, 17, 2, 80);
        CHECK(err <= 1e-10);
    }
    SUBCASE("single precision") {
        const double err = dense_patch_max_error<float>(cfg, 18, 2, 80);
        CHECK(err <= 1e-5);
    }
}

TEST_CASE("sparse skipping changes no surviving value and only zeroes the rest") {
    CascadeConfig cfg;
    cfg.trunkFilters = {4, 4, 4, 4};
    auto net = build_network<float>(cfg, 9);
    DensePlan plan = to_dense_plan(net);
    Rng rng(21);
    Tensor<float> image = random_image<float>(90, 90, rng);

    // calibrate a threshold near the median stage-1 probability so the mask bites
    DenseResult probe = dense_forward(net, plan, image, {0, 0, 0, 0}, false);
    std::vector<double> p1(probe.stageProb[0].data.begin(), probe.stageProb[0].data.end());
    std::nth_element(p1.begin(), p1.begin() + p1.size() / 2, p1.end());
    const double lambda1 = p1[p1.size() / 2];
    const std::array<double, kStages> lambdas{lambda1, 0, 0, 0};

    DenseResult dense = dense_forward(net, plan, image, lambdas, false);
    DenseResult sparse = dense_forward(net, plan, image, lambdas, true);
    REQUIRE(dense.anchorsH == sparse.anchorsH);
    int rejected = 0, survived = 0;
    for (int ay = 0; ay < dense.anchorsH; ++ay) {
        for (int ax = 0; ax < dense.anchorsW; ++ax) {
            CHECK(dense.finalMap.at(ay, ax, 0) == sparse.finalMap.at(ay, ax, 0));
            if (dense.finalMap.at(ay, ax, 0) == 0.0) {
                ++rejected;
                // sparse mode stops evaluating later stages there
                CHECK(sparse.stageProb[1].at(ay, ax, 0) == 0.0);
            } else {
                ++survived;
                for (int j = 0; j < kStages; ++j) {
                    CHECK(dense.stageProb[j].at(ay, ax, 0) == sparse.stageProb[j].at(ay, ax, 0));
                }
            }
        }
    }
    CHECK(rejected > 0);
    CHECK(survived > 0);
    CHECK(sparse.stats.rejectedAtStage[0] == static_cast<std::uint64_t>(rejected));
    CHECK(sparse.stats.macs < dense.stats.macs);
    CHECK(dense.stats.macs == dense.stats.macsNoExit);
}

TEST_CASE("with zero thresholds the final map is strictly positive") {
    CascadeConfig cfg;
    cfg.trunkFilters = {4, 4, 4, 4};
    auto net = build_network<float>(cfg, 10);
    Rng rng(2);
    Tensor<float> image = random_image<float>(70, 75, rng);
    DenseResult dr = dense_forward(net, to_dense_plan(net), image, {0, 0, 0, 0}, true);
    CHECK(dr.anchorsH == 7);
    CHECK(dr.anchorsW == 12);
    for (double v : dr.finalMap.data) CHECK(v > 0.0);
    // sparse run with nothing rejected costs exactly the no-exit budget
    CHECK(dr.stats.macs == dr.stats.macsNoExit);
    for (int j = 0; j < kStages; ++j) {
        CHECK(dr.stats.anchorsEvaluated[j] == dr.stats.anchorsTotal);
    }
}

TEST_CASE("evaluated positions shrink monotonically through the cascade") {
    CascadeConfig cfg;
    cfg.trunkFilters = {4, 4, 4, 4};
    auto net = build_network<float>(cfg, 30);
    DensePlan plan = to_dense_plan(net);
    Rng rng(12);
    Tensor<float> image = random_image<float>(96, 96, rng);
    DenseResult probe = dense_forward(net, plan, image, {0, 0, 0, 0}, false);
    std::array<double, kStages> lambdas{};
    for (int j = 0; j < kStages; ++j) {
        std::vector<double> p(probe.stageProb[j].data.begin(), probe.stageProb[j].data.end());
        std::nth_element(p.begin(), p.begin() + p.size() / 3, p.end());
        lambdas[j] = p[p.size() / 3];
    }
    DenseResult sparse = dense_forward(net, plan, image, lambdas, true);
    for (int j = 1; j < kStages; ++j) {
        CHECK(sparse.stats.anchorsEvaluated[j] <= sparse.stats.anchorsEvaluated[j - 1]);
    }
}

TEST_CASE("images smaller than a patch are rejected") {
    auto net = build_network<float>(CascadeConfig{}, 1);
    Tensor<float> small(32, 100, 3, 0.0f);
    CHECK_THROWS_AS(dense_forward(net, to_dense_plan(net), small, {0, 0, 0, 0}, false),
                    std::invalid_argument);
}

TEST_CASE("nms keeps a lone box") {
    std::vector<DetectionBox> boxes{{10, 10, 50, 0.9, 0}};
    auto kept = nms(boxes, 0.3);
    CHECK(kept.size() == 1);
    CHECK(kept[0].score == 0.9);
}

TEST_CASE("nms suppresses the weaker of two heavily overlapping boxes") {
    // two 100-boxes offset by 5px: IoU well above 0.3
    std::vector<DetectionBox> boxes{{0, 0, 100, 0.7, 0}, {5, 0, 100, 0.9, 0}};
    CHECK(box_iou(boxes[0], boxes[1]) > 0.7);
    auto kept = nms(boxes, 0.3);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].score == 0.9);
}

TEST_CASE("nms keeps disjoint boxes") {
    std::vector<DetectionBox> boxes{
        {0, 0, 30, 0.5, 0}, {100, 0, 30, 0.8, 0}, {0, 100, 30, 0.3, 1}};
    auto kept = nms(boxes, 0.3);
    CHECK(kept.size() == 3);
    // sorted by score descending
    CHECK(kept[0].score == 0.8);
    CHECK(kept[2].score == 0.3);
}

TEST_CASE("anchor to box to anchor is an exact roundtrip at every level") {
    Rng rng(40);
    for (int level = 0; level <= 11; ++level) {
        for (int trial = 0; trial < 30; ++trial) {
            const int ay = static_cast<int>(rng.uniform_int(0, 600));
            const int ax = static_cast<int>(rng.uniform_int(0, 900));
            DetectionBox b = anchor_to_box(ay, ax, 64, 1.25, level, 1.0);
            auto [ry, rx] = box_to_anchor(b, 1.25);
            CHECK(ry == ay);
            CHECK(rx == ax);
        }
    }
}

TEST_CASE("pyramid detection on a flat image with high thresholds finds nothing") {
    CascadeConfig cfg;
    cfg.trunkFilters = {4, 4, 4, 4};
    auto net = build_network<float>(cfg, 14);
    Tensor<float> flat(96, 128, 3, 0.5f);
    // flat input: every anchor has the same probabilities; gate just above them
    DenseResult probe = dense_forward(net, to_dense_plan(net), flat, {0, 0, 0, 0}, false);
    std::array<double, kStages> lambdas{};
    lambdas[0] = std::min(0.999, probe.stageProb[0].at(0, 0, 0) + 1e-9);
    DetectResult det = pyramid_detect(net, flat, lambdas, DetectParams{});
    CHECK(det.boxes.empty());
    CHECK(det.stats.anchorsTotal > 0);
}

TEST_CASE("pyramid levels stop below one patch and boxes stay inside the image") {
    CascadeConfig cfg;
    cfg.trunkFilters = {4, 4, 4, 4};
    auto net = build_network<float>(cfg, 15);
    Rng rng(9);
    Tensor<float> image = random_image<float>(100, 140, rng);
    DetectResult det = pyramid_detect(net, image, {0, 0, 0, 0}, DetectParams{});
    CHECK(!det.boxes.empty());
    for (const DetectionBox& b : det.boxes) {
        CHECK(b.x >= 0);
        CHECK(b.y >= 0);
        CHECK(b.x + b.size <= 140);
        CHECK(b.y + b.size <= 100);
        CHECK(b.score > 0.0);
        CHECK(b.level >= 0);
        // level image must still hold one patch
        CHECK(std::floor(100 / std::pow(1.25, b.level)) >= 64);
    }
}

TEST_CASE("bilinear resize preserves constants and is exact on the identity") {
    Tensor<float> c(20, 30, 3, 0.75f);
    Tensor<float> small = resize_bilinear(c, 9, 11);
    for (float v : small.data) CHECK(v == doctest::Approx(0.75f));
    Tensor<float> same = resize_bilinear(c, 20, 30);
    for (std::size_t i = 0; i < c.data.size(); ++i) CHECK(same.data[i] == c.data[i]);
}
