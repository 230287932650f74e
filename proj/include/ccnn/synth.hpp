#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ccnn/samples.hpp"
#include "ccnn/tensor.hpp"

namespace ccnn {

// 8-bit RGB image, row-major interleaved.
struct Image8 {
    int w = 0;
    int h = 0;
    std::vector<std::uint8_t> rgb;

    Image8() = default;
    Image8(int w_, int h_) : w(w_), h(h_), rgb(static_cast<std::size_t>(w_) * h_ * 3, 0) {}

    std::uint8_t* px(int y, int x) { return &rgb[(static_cast<std::size_t>(y) * w + x) * 3]; }
    const std::uint8_t* px(int y, int x) const {
        return &rgb[(static_cast<std::size_t>(y) * w + x) * 3];
    }
};

struct GtBox {
    int x = 0;
    int y = 0;
    int size = 0;
};

struct SceneParams {
    int width = 640;
    int height = 360;
    int playersMin = 3;
    int playersMax = 12;
    int heightMin = 20;
    int heightMax = 250;
    double blurProbability = 0.2;
    double occlusionProbability = 0.1;
    int textureKind = 0;  // 0 grass field, 1 indoor court
    double overlapIoUMax = 0.2;
    std::uint64_t seed = 42;
};

struct Scene {
    Image8 image;
    std::vector<GtBox> boxes;
};

// Deterministic rendered scene: textured playing field with line markings and
// articulated two-tone player sprites. Same params give identical bytes.
Scene generate_scene(const SceneParams& params);

double box_iou(const GtBox& a, const GtBox& b);

// --- PPM (binary P6, maxval 255) --------------------------------------------

void ppm_write(const Image8& image, const std::string& path);
Image8 ppm_read(const std::string& path);
std::string ppm_bytes(const Image8& image);

void draw_box_outline(Image8& image, const GtBox& box, std::uint8_t r, std::uint8_t g,
                      std::uint8_t b, int thickness = 2);

// --- dataset on disk ---------------------------------------------------------

struct Dataset {
    std::string root;
    std::vector<std::string> images;          // relative paths, scene order
    std::vector<std::vector<GtBox>> boxes;    // per scene
    std::vector<int> split;                   // 0 train, 1 test
};

// Writes scenes/NNNN.ppm, annotations.csv and split.csv (50/50 train/test).
void write_dataset(const std::string& dir, const SceneParams& base, int sceneCount);
Dataset load_dataset(const std::string& dir);

// --- patch sampling -----------------------------------------------------------

struct SampleParams {
    double positiveIoUMin = 0.7;  // jitter floor against the source box
    double negativeIoUMax = 0.3;  // ceiling against every ground truth
    double negativesPerPositive = 3.0;
    int positivesPerBox = 1;
    int patchSize = 64;
    int negSizeMin = 0;  // 0: derive from the scene's ground-truth sizes
    int negSizeMax = 0;
    std::uint64_t seed = 42;
};

// Bilinear crop of a square region to patchSize x patchSize, values in [0,1].
template <typename T>
Tensor<T> extract_patch(const Image8& image, double x0, double y0, double size, int patchSize) {
    Tensor<T> out(patchSize, patchSize, 3);
    const double step = size / patchSize;
    for (int i = 0; i < patchSize; ++i) {
        double fy = y0 + (i + 0.5) * step - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(image.h - 1));
        const int iy0 = static_cast<int>(fy);
        const int iy1 = std::min(iy0 + 1, image.h - 1);
        const double wy = fy - iy0;
        for (int jx = 0; jx < patchSize; ++jx) {
            double fx = x0 + (jx + 0.5) * step - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(image.w - 1));
            const int ix0 = static_cast<int>(fx);
            const int ix1 = std::min(ix0 + 1, image.w - 1);
            const double wx = fx - ix0;
            const std::uint8_t* p00 = image.px(iy0, ix0);
            const std::uint8_t* p01 = image.px(iy0, ix1);
            const std::uint8_t* p10 = image.px(iy1, ix0);
            const std::uint8_t* p11 = image.px(iy1, ix1);
            for (int ch = 0; ch < 3; ++ch) {
                const double v = ((1 - wy) * ((1 - wx) * p00[ch] + wx * p01[ch]) +
                                  wy * ((1 - wx) * p10[ch] + wx * p11[ch])) /
                                 255.0;
                out.at(i, jx, ch) = static_cast<T>(v);
            }
        }
    }
    return out;
}

// Provenance-carrying jittered crops: positives keep IoU >= positiveIoUMin
// with their ground-truth square, negatives stay below negativeIoUMax against
// every ground truth. Throws naming the scene when a constraint cannot be
// met within the retry budget.
struct PatchSpec {
    int sceneId = 0;
    int boxId = -1;
    int label = 0;
    double x = 0, y = 0, size = 0;
};

std::vector<PatchSpec> plan_patches(const Scene& scene, int sceneId, const SampleParams& params);

template <typename T>
void append_patches(SampleSet<T>& out, const Scene& scene, int sceneId,
                    const SampleParams& params) {
    for (const PatchSpec& spec : plan_patches(scene, sceneId, params)) {
        Sample<T> s;
        s.patch = extract_patch<T>(scene.image, spec.x, spec.y, spec.size, params.patchSize);
        s.label = spec.label;
        s.sceneId = spec.sceneId;
        s.boxId = spec.boxId;
        out.samples.push_back(std::move(s));
    }
}

template <typename T>
SampleSet<T> sample_patches(const std::vector<Scene>& scenes, const SampleParams& params) {
    SampleSet<T> out;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        append_patches(out, scenes[i], static_cast<int>(i), params);
    }
    return out;
}

template <typename T>
Tensor<T> image_to_tensor(const Image8& image) {
    Tensor<T> out(image.h, image.w, 3);
    const T inv = T(1) / T(255);
    for (std::size_t i = 0; i < image.rgb.size(); ++i) {
        out.data[i] = static_cast<T>(image.rgb[i]) * inv;
    }
    return out;
}

}  // namespace ccnn
