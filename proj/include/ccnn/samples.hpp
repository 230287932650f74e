#pragma once

#include <vector>

#include "ccnn/tensor.hpp"

namespace ccnn {

// Labeled 64x64 patch with its origin for debugging/splitting.
template <typename T>
struct Sample {
    Tensor<T> patch;
    int label = 0;    // 1 player, 0 non-player
    int sceneId = -1;
    int boxId = -1;   // ground-truth box index, -1 for negatives
};

template <typename T>
struct SampleSet {
    std::vector<Sample<T>> samples;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
};

}  // namespace ccnn
