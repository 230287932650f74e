#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ccnn/synth.hpp"
#include "doctest.h"

using namespace ccnn;

TEST_CASE("same seed renders bitwise identical scenes") {
    SceneParams p;
    p.width = 200;
    p.height = 150;
    p.heightMin = 24;
    p.heightMax = 80;
    p.seed = 321;
    Scene a = generate_scene(p);
    Scene b = generate_scene(p);
    CHECK(a.image.rgb == b.image.rgb);
    REQUIRE(a.boxes.size() == b.boxes.size());
    for (std::size_t i = 0; i < a.boxes.size(); ++i) {
        CHECK(a.boxes[i].x == b.boxes[i].x);
        CHECK(a.boxes[i].y == b.boxes[i].y);
        CHECK(a.boxes[i].size == b.boxes[i].size);
    }
    p.seed = 322;
    Scene c = generate_scene(p);
    CHECK(a.image.rgb != c.image.rgb);
}

TEST_CASE("ground-truth boxes stay inside the frame within the height range") {
    SceneParams p;
    p.width = 320;
    p.height = 200;
    p.heightMin = 30;
    p.heightMax = 120;
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        p.seed = seed;
        Scene s = generate_scene(p);
        CHECK(!s.boxes.empty());
        for (const GtBox& b : s.boxes) {
            CHECK(b.x >= 0);
            CHECK(b.y >= 0);
            CHECK(b.x + b.size <= p.width);
            CHECK(b.y + b.size <= p.height);
            CHECK(b.size <= p.heightMax);
            // occlusion may trim the sprite, never below a third
            CHECK(b.size >= p.heightMin / 3);
        }
    }
}

TEST_CASE("zero players gives a background-only scene") {
    SceneParams p;
    p.width = 160;
    p.height = 120;
    p.playersMin = 0;
    p.playersMax = 0;
    Scene s = generate_scene(p);
    CHECK(s.boxes.empty());
    CHECK(s.image.w == 160);
}

TEST_CASE("ppm roundtrip is byte identical") {
    SceneParams p;
    p.width = 97;
    p.height = 61;
    p.heightMin = 20;
    p.heightMax = 40;
    p.seed = 5;
    Scene s = generate_scene(p);
    const std::string path = "test_roundtrip.ppm";
    ppm_write(s.image, path);
    Image8 back = ppm_read(path);
    CHECK(back.w == s.image.w);
    CHECK(back.h == s.image.h);
    CHECK(back.rgb == s.image.rgb);
    // file bytes are exactly the canonical serialization
    std::ifstream f(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    CHECK(bytes == ppm_bytes(s.image));
    std::filesystem::remove(path);
}

TEST_CASE("canonical 1x1 black pixel layout") {
    Image8 px(1, 1);
    const std::string bytes = ppm_bytes(px);
    CHECK(bytes == std::string("P6\n1 1\n255\n") + std::string(3, '\0'));
    CHECK(bytes.size() == 14);
}

TEST_CASE("ppm reader rejects bad inputs with distinct errors") {
    const std::string dir = "test_ppm_errors";
    std::filesystem::create_directories(dir);
    auto writeFile = [&](const std::string& name, const std::string& content) {
        std::ofstream f(dir + "/" + name, std::ios::binary);
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        return dir + "/" + name;
    };
    CHECK_THROWS_WITH_AS(ppm_read(writeFile("ascii.ppm", "P3\n1 1\n255\n0 0 0\n")),
                         doctest::Contains("P6"), std::runtime_error);
    CHECK_THROWS_WITH_AS(ppm_read(writeFile("maxval.ppm", std::string("P6\n1 1\n65535\n") +
                                                              std::string(6, '\0'))),
                         doctest::Contains("maxval"), std::runtime_error);
    CHECK_THROWS_WITH_AS(ppm_read(writeFile("short.ppm", std::string("P6\n4 4\n255\n") +
                                                             std::string(10, '\0'))),
                         doctest::Contains("truncated"), std::runtime_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("sampled positives overlap their source and negatives avoid all truth") {
    SceneParams p;
    p.width = 320;
    p.height = 240;
    p.heightMin = 40;
    p.heightMax = 120;
    SampleParams sp;
    sp.seed = 17;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        p.seed = seed + 100;
        Scene scene = generate_scene(p);
        for (const PatchSpec& spec : plan_patches(scene, static_cast<int>(seed), sp)) {
            GtBox cand{static_cast<int>(std::lround(spec.x)), static_cast<int>(std::lround(spec.y)),
                       static_cast<int>(std::lround(spec.size))};
            CHECK(spec.x >= 0);
            CHECK(spec.y >= 0);
            CHECK(spec.x + spec.size <= p.width + 0.51);
            CHECK(spec.y + spec.size <= p.height + 0.51);
            if (spec.label == 1) {
                REQUIRE(spec.boxId >= 0);
                CHECK(box_iou(cand, scene.boxes[static_cast<std::size_t>(spec.boxId)]) >=
                      sp.positiveIoUMin - 0.02);
            } else {
                for (const GtBox& gt : scene.boxes) {
                    CHECK(box_iou(cand, gt) < sp.negativeIoUMax + 0.02);
                }
            }
        }
    }
}

TEST_CASE("the realized class ratio tracks the requested one over 40 scenes") {
    SceneParams p;
    p.width = 320;
    p.height = 240;
    p.heightMin = 40;
    p.heightMax = 120;
    SampleParams sp;
    sp.seed = 4;
    int pos = 0, neg = 0;
    for (int i = 0; i < 40; ++i) {
        p.seed = 1000 + static_cast<std::uint64_t>(i);
        Scene scene = generate_scene(p);
        for (const PatchSpec& spec : plan_patches(scene, i, sp)) {
            (spec.label == 1 ? pos : neg) += 1;
        }
    }
    REQUIRE(pos > 0);
    const double ratio = static_cast<double>(neg) / pos;
    CHECK(ratio >= sp.negativesPerPositive * 0.95);
    CHECK(ratio <= sp.negativesPerPositive * 1.05);
}

TEST_CASE("extracted patches stay in [0,1] with the right shape") {
    SceneParams p;
    p.width = 200;
    p.height = 160;
    p.heightMin = 40;
    p.heightMax = 90;
    p.seed = 9;
    Scene scene = generate_scene(p);
    SampleParams sp;
    SampleSet<float> set;
    append_patches(set, scene, 0, sp);
    REQUIRE(!set.empty());
    for (const auto& s : set.samples) {
        CHECK(s.patch.h == 64);
        CHECK(s.patch.w == 64);
        CHECK(s.patch.c == 3);
        for (float v : s.patch.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("dataset write/load roundtrip preserves annotations and the split") {
    const std::string dir = "test_dataset_dir";
    SceneParams p;
    p.width = 128;
    p.height = 96;
    p.playersMin = 1;
    p.playersMax = 3;
    p.heightMin = 24;
    p.heightMax = 48;
    p.seed = 77;
    write_dataset(dir, p, 6);
    Dataset ds = load_dataset(dir);
    CHECK(ds.images.size() == 6);
    CHECK(ds.split.size() == 6);
    int train = 0;
    for (int s : ds.split) train += s == 0;
    CHECK(train == 3);
    int boxes = 0;
    for (const auto& b : ds.boxes) boxes += static_cast<int>(b.size());
    CHECK(boxes > 0);
    // scene files exist and parse
    Image8 img = ppm_read(dir + "/" + ds.images[0]);
    CHECK(img.w == 128);
    CHECK(img.h == 96);
    std::filesystem::remove_all(dir);
}
