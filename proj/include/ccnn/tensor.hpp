#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace ccnn {

// Dense rank-3 array in row-major (height, width, channel) order.
// Carrier of images, feature maps, kernels-as-windows and gradients.
template <typename T>
struct Tensor {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<T> data;

    Tensor() = default;

    Tensor(int h_, int w_, int c_, T fill = T(0))
        : h(h_), w(w_), c(c_), data() {
        if (h_ <= 0 || w_ <= 0 || c_ <= 0) {
            throw std::invalid_argument("Tensor: dimensions must be positive, got " +
                                        std::to_string(h_) + "x" + std::to_string(w_) +
                                        "x" + std::to_string(c_));
        }
        data.assign(static_cast<std::size_t>(h_) * w_ * c_, fill);
    }

    std::size_t size() const { return data.size(); }

    std::size_t index(int y, int x, int ch) const {
        return (static_cast<std::size_t>(y) * w + x) * c + ch;
    }

    T& at(int y, int x, int ch) { return data[index(y, x, ch)]; }
    const T& at(int y, int x, int ch) const { return data[index(y, x, ch)]; }

    // Pointer to the channel vector at (y, x); channels are contiguous.
    T* row(int y, int x) { return data.data() + index(y, x, 0); }
    const T* row(int y, int x) const { return data.data() + index(y, x, 0); }

    bool same_shape(const Tensor& o) const { return h == o.h && w == o.w && c == o.c; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(h, w, c);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

}  // namespace ccnn
