#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ccnn/tensor.hpp"

namespace ccnn {

// All spatial operations are VALID (no padding). Pooling carries stride;
// convolution is always stride 1. Dilation inserts a lattice step between
// kernel taps without touching the weights.

inline int dilated_span(int k, int dilation) { return (k - 1) * dilation + 1; }

inline int conv_out_dim(int in, int k, int dilation) { return in - (k - 1) * dilation; }

inline int pool_out_dim(int in, int k, int stride, int dilation) {
    return (in - dilated_span(k, dilation)) / stride + 1;
}

template <typename T>
struct ConvKernel {
    int kh = 3;
    int kw = 3;
    int inChannels = 0;
    int outChannels = 0;
    int dilation = 1;
    // Layout (kh, kw, inChannels, outChannels); one bias per output channel.
    std::vector<T> weights;
    std::vector<T> bias;

    ConvKernel() = default;
    ConvKernel(int kh_, int kw_, int inC, int outC, int dil = 1)
        : kh(kh_), kw(kw_), inChannels(inC), outChannels(outC), dilation(dil),
          weights(static_cast<std::size_t>(kh_) * kw_ * inC * outC, T(0)),
          bias(static_cast<std::size_t>(outC), T(0)) {
        if (kh_ <= 0 || kw_ <= 0 || inC <= 0 || outC <= 0 || dil < 1) {
            throw std::invalid_argument("ConvKernel: invalid geometry");
        }
    }

    std::size_t windex(int dy, int dx, int ic, int oc) const {
        return ((static_cast<std::size_t>(dy) * kw + dx) * inChannels + ic) * outChannels + oc;
    }

    std::size_t parameter_count() const { return weights.size() + bias.size(); }
};

enum class PoolKind : std::uint8_t { Max, Average };

struct PoolSpec {
    PoolKind kind = PoolKind::Max;
    int kh = 3;
    int kw = 3;
    int stride = 2;
    int dilation = 1;
};

template <typename T>
inline void check_conv_pre(const Tensor<T>& x, const ConvKernel<T>& k) {
    if (x.c != k.inChannels) {
        throw std::invalid_argument("conv: input has " + std::to_string(x.c) +
                                    " channels, kernel expects " + std::to_string(k.inChannels));
    }
    if (dilated_span(k.kh, k.dilation) > x.h) {
        throw std::invalid_argument("conv: kernel span " +
                                    std::to_string(dilated_span(k.kh, k.dilation)) +
                                    " exceeds input height " + std::to_string(x.h));
    }
    if (dilated_span(k.kw, k.dilation) > x.w) {
        throw std::invalid_argument("conv: kernel span " +
                                    std::to_string(dilated_span(k.kw, k.dilation)) +
                                    " exceeds input width " + std::to_string(x.w));
    }
}

// Single output position of a valid cross-correlation. The tap order
// (dy, dx, ic) and the bias-seeded accumulator are shared by the patch and
// dense paths, so aligned positions produce identical floating-point sums.
template <typename T>
inline void conv_cell(const Tensor<T>& x, const ConvKernel<T>& k, int dilation, int y0, int x0,
                      T* acc) {
    const int outC = k.outChannels;
    for (int oc = 0; oc < outC; ++oc) acc[oc] = k.bias[static_cast<std::size_t>(oc)];
    for (int dy = 0; dy < k.kh; ++dy) {
        for (int dx = 0; dx < k.kw; ++dx) {
            const T* px = x.row(y0 + dy * dilation, x0 + dx * dilation);
            const T* pw = &k.weights[k.windex(dy, dx, 0, 0)];
            for (int ic = 0; ic < k.inChannels; ++ic) {
                const T v = px[ic];
                const T* wrow = pw + static_cast<std::size_t>(ic) * outC;
                for (int oc = 0; oc < outC; ++oc) acc[oc] += v * wrow[oc];
            }
        }
    }
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const ConvKernel<T>& k) {
    check_conv_pre(x, k);
    const int outH = conv_out_dim(x.h, k.kh, k.dilation);
    const int outW = conv_out_dim(x.w, k.kw, k.dilation);
    Tensor<T> out(outH, outW, k.outChannels);
    for (int y = 0; y < outH; ++y) {
        for (int xx = 0; xx < outW; ++xx) {
            conv_cell(x, k, k.dilation, y, xx, out.row(y, xx));
        }
    }
    return out;
}

template <typename T>
struct ConvGrads {
    Tensor<T> dInput;
    std::vector<T> dWeights;
    std::vector<T> dBias;
};

template <typename T>
ConvGrads<T> conv_backward(const Tensor<T>& x, const ConvKernel<T>& k, const Tensor<T>& dOut,
                           bool wantDInput = true) {
    check_conv_pre(x, k);
    const int outH = conv_out_dim(x.h, k.kh, k.dilation);
    const int outW = conv_out_dim(x.w, k.kw, k.dilation);
    if (dOut.h != outH || dOut.w != outW || dOut.c != k.outChannels) {
        throw std::invalid_argument("conv_backward: dOut is " + std::to_string(dOut.h) + "x" +
                                    std::to_string(dOut.w) + "x" + std::to_string(dOut.c) +
                                    ", expected " + std::to_string(outH) + "x" +
                                    std::to_string(outW) + "x" + std::to_string(k.outChannels));
    }
    ConvGrads<T> g{wantDInput ? Tensor<T>(x.h, x.w, x.c) : Tensor<T>(),
                   std::vector<T>(k.weights.size(), T(0)), std::vector<T>(k.bias.size(), T(0))};
    const int outC = k.outChannels;
    for (int y = 0; y < outH; ++y) {
        for (int xx = 0; xx < outW; ++xx) {
            const T* go = dOut.row(y, xx);
            for (int oc = 0; oc < outC; ++oc) g.dBias[static_cast<std::size_t>(oc)] += go[oc];
            for (int dy = 0; dy < k.kh; ++dy) {
                for (int dx = 0; dx < k.kw; ++dx) {
                    const int iy = y + dy * k.dilation;
                    const int ix = xx + dx * k.dilation;
                    const T* px = x.row(iy, ix);
                    const std::size_t wbase = k.windex(dy, dx, 0, 0);
                    if (wantDInput) {
                        T* gx = g.dInput.row(iy, ix);
                        for (int ic = 0; ic < k.inChannels; ++ic) {
                            const T* wrow = &k.weights[wbase + static_cast<std::size_t>(ic) * outC];
                            T* gwrow = &g.dWeights[wbase + static_cast<std::size_t>(ic) * outC];
                            T accx = T(0);
                            const T xv = px[ic];
                            for (int oc = 0; oc < outC; ++oc) {
                                gwrow[oc] += xv * go[oc];
                                accx += wrow[oc] * go[oc];
                            }
                            gx[ic] += accx;
                        }
                    } else {
                        for (int ic = 0; ic < k.inChannels; ++ic) {
                            T* gwrow = &g.dWeights[wbase + static_cast<std::size_t>(ic) * outC];
                            const T xv = px[ic];
                            for (int oc = 0; oc < outC; ++oc) gwrow[oc] += xv * go[oc];
                        }
                    }
                }
            }
        }
    }
    return g;
}

struct PoolRouting {
    PoolSpec spec;
    int inH = 0, inW = 0, inC = 0;
    int outH = 0, outW = 0;
    // Max pooling: flat (y * inW + x) source per output cell and channel,
    // layout (outH, outW, c). Empty for average pooling.
    std::vector<std::int32_t> argmax;
};

template <typename T>
inline void check_pool_pre(const Tensor<T>& x, const PoolSpec& p) {
    if (dilated_span(p.kh, p.dilation) > x.h) {
        throw std::invalid_argument("pool: kernel span " +
                                    std::to_string(dilated_span(p.kh, p.dilation)) +
                                    " exceeds input height " + std::to_string(x.h));
    }
    if (dilated_span(p.kw, p.dilation) > x.w) {
        throw std::invalid_argument("pool: kernel span " +
                                    std::to_string(dilated_span(p.kw, p.dilation)) +
                                    " exceeds input width " + std::to_string(x.w));
    }
    if (p.stride < 1 || p.dilation < 1) throw std::invalid_argument("pool: invalid stride/dilation");
}

// Max over one dilated window, first occurrence in row-major scan wins.
template <typename T>
inline void max_pool_cell(const Tensor<T>& x, const PoolSpec& p, int y0, int x0, T* out,
                          std::int32_t* route) {
    for (int ch = 0; ch < x.c; ++ch) {
        T best = x.at(y0, x0, ch);
        std::int32_t besti = static_cast<std::int32_t>(y0) * x.w + x0;
        for (int dy = 0; dy < p.kh; ++dy) {
            for (int dx = 0; dx < p.kw; ++dx) {
                const int iy = y0 + dy * p.dilation;
                const int ix = x0 + dx * p.dilation;
                const T v = x.at(iy, ix, ch);
                if (v > best) {
                    best = v;
                    besti = static_cast<std::int32_t>(iy) * x.w + ix;
                }
            }
        }
        out[ch] = best;
        if (route) route[ch] = besti;
    }
}

template <typename T>
inline void avg_pool_cell(const Tensor<T>& x, const PoolSpec& p, int y0, int x0, T* out) {
    const T inv = T(1) / static_cast<T>(p.kh * p.kw);
    for (int ch = 0; ch < x.c; ++ch) out[ch] = T(0);
    for (int dy = 0; dy < p.kh; ++dy) {
        for (int dx = 0; dx < p.kw; ++dx) {
            const T* px = x.row(y0 + dy * p.dilation, x0 + dx * p.dilation);
            for (int ch = 0; ch < x.c; ++ch) out[ch] += px[ch];
        }
    }
    for (int ch = 0; ch < x.c; ++ch) out[ch] *= inv;
}

template <typename T>
std::pair<Tensor<T>, PoolRouting> pool_forward(const Tensor<T>& x, const PoolSpec& p) {
    check_pool_pre(x, p);
    const int outH = pool_out_dim(x.h, p.kh, p.stride, p.dilation);
    const int outW = pool_out_dim(x.w, p.kw, p.stride, p.dilation);
    Tensor<T> out(outH, outW, x.c);
    PoolRouting route{p, x.h, x.w, x.c, outH, outW, {}};
    if (p.kind == PoolKind::Max) {
        route.argmax.assign(static_cast<std::size_t>(outH) * outW * x.c, 0);
    }
    for (int y = 0; y < outH; ++y) {
        for (int xx = 0; xx < outW; ++xx) {
            const int y0 = y * p.stride;
            const int x0 = xx * p.stride;
            if (p.kind == PoolKind::Max) {
                max_pool_cell(x, p, y0, x0, out.row(y, xx),
                              &route.argmax[out.index(y, xx, 0)]);
            } else {
                avg_pool_cell(x, p, y0, x0, out.row(y, xx));
            }
        }
    }
    return {std::move(out), std::move(route)};
}

template <typename T>
Tensor<T> pool_backward(const PoolRouting& route, const Tensor<T>& dOut) {
    const PoolSpec& p = route.spec;
    if (dOut.h != route.outH || dOut.w != route.outW || dOut.c != route.inC) {
        throw std::invalid_argument("pool_backward: dOut shape does not match routing (" +
                                    std::to_string(dOut.h) + "x" + std::to_string(dOut.w) + "x" +
                                    std::to_string(dOut.c) + " vs " + std::to_string(route.outH) +
                                    "x" + std::to_string(route.outW) + "x" +
                                    std::to_string(route.inC) + ")");
    }
    Tensor<T> dx(route.inH, route.inW, route.inC);
    if (p.kind == PoolKind::Max) {
        if (route.argmax.size() != dOut.size()) {
            throw std::invalid_argument("pool_backward: routing table does not match spec");
        }
        for (int y = 0; y < route.outH; ++y) {
            for (int xx = 0; xx < route.outW; ++xx) {
                const T* go = dOut.row(y, xx);
                const std::int32_t* rt = &route.argmax[dOut.index(y, xx, 0)];
                for (int ch = 0; ch < route.inC; ++ch) {
                    const int iy = rt[ch] / route.inW;
                    const int ix = rt[ch] % route.inW;
                    dx.at(iy, ix, ch) += go[ch];
                }
            }
        }
    } else {
        const T inv = T(1) / static_cast<T>(p.kh * p.kw);
        for (int y = 0; y < route.outH; ++y) {
            for (int xx = 0; xx < route.outW; ++xx) {
                const T* go = dOut.row(y, xx);
                for (int dy = 0; dy < p.kh; ++dy) {
                    for (int dx2 = 0; dx2 < p.kw; ++dx2) {
                        T* gx = dx.row(y * p.stride + dy * p.dilation,
                                       xx * p.stride + dx2 * p.dilation);
                        for (int ch = 0; ch < route.inC; ++ch) gx[ch] += go[ch] * inv;
                    }
                }
            }
        }
    }
    return dx;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> y(x.h, x.w, x.c);
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    return y;
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
    for (auto& v : x.data)
        if (v < T(0)) v = T(0);
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dOut) {
    if (!x.same_shape(dOut)) throw std::invalid_argument("relu_backward: shape mismatch");
    Tensor<T> dx(x.h, x.w, x.c);
    for (std::size_t i = 0; i < x.data.size(); ++i)
        dx.data[i] = x.data[i] > T(0) ? dOut.data[i] : T(0);
    return dx;
}

// Two-way softmax on a (positive, negative) logit pair, stabilized by
// max-subtraction. Returns (p_positive, p_negative).
template <typename T>
inline std::array<T, 2> softmax2_pair(T logitPos, T logitNeg) {
    const T m = std::max(logitPos, logitNeg);
    const T ep = std::exp(logitPos - m);
    const T en = std::exp(logitNeg - m);
    const T inv = T(1) / (ep + en);
    return {ep * inv, en * inv};
}

// Gradient of the logit pair given the probabilities and upstream dL/dp.
template <typename T>
inline std::array<T, 2> softmax2_pair_backward(const std::array<T, 2>& p,
                                               const std::array<T, 2>& dP) {
    const T dot = dP[0] * p[0] + dP[1] * p[1];
    return {p[0] * (dP[0] - dot), p[1] * (dP[1] - dot)};
}

template <typename T>
Tensor<T> softmax2(const Tensor<T>& logits) {
    if (logits.c != 2) {
        throw std::invalid_argument("softmax2: expected 2 channels, got " +
                                    std::to_string(logits.c));
    }
    Tensor<T> out(logits.h, logits.w, 2);
    for (int y = 0; y < logits.h; ++y) {
        for (int x = 0; x < logits.w; ++x) {
            const T* l = logits.row(y, x);
            const auto p = softmax2_pair(l[0], l[1]);
            T* o = out.row(y, x);
            o[0] = p[0];
            o[1] = p[1];
        }
    }
    return out;
}

template <typename T>
Tensor<T> softmax2_backward(const Tensor<T>& probs, const Tensor<T>& dOut) {
    if (!probs.same_shape(dOut) || probs.c != 2) {
        throw std::invalid_argument("softmax2_backward: shape mismatch");
    }
    Tensor<T> dz(probs.h, probs.w, 2);
    for (int y = 0; y < probs.h; ++y) {
        for (int x = 0; x < probs.w; ++x) {
            const T* p = probs.row(y, x);
            const T* g = dOut.row(y, x);
            const auto d = softmax2_pair_backward<T>({p[0], p[1]}, {g[0], g[1]});
            dz.at(y, x, 0) = d[0];
            dz.at(y, x, 1) = d[1];
        }
    }
    return dz;
}

}  // namespace ccnn
