#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccnn/model.hpp"

namespace ccnn {

// Model file layout (all multi-byte fields little-endian):
//   magic "CCNN" | version u16 | flags u16 (bit 0: thresholds present) |
//   patchSize u16 | K u8 | 6K-1 layer records | weight payload (binary32,
//   declaration order: trunk convs then branch convs, weights then bias) |
//   K thresholds as binary64 when flagged.
// Layer record: type u8 (0 conv, 1 maxpool, 2 avgpool, 3 relu, 4 softmax2),
// then inC, outC, kh, kw, stride, dilation as u16.

inline constexpr char kModelMagic[4] = {'C', 'C', 'N', 'N'};
inline constexpr std::uint16_t kModelVersion = 1;

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size()) {
            throw std::runtime_error(std::string("model file truncated while reading ") + what);
        }
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint8_t>(buf[pos]) |
                          (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
};

enum LayerCode : std::uint8_t { LConv = 0, LMaxPool = 1, LAvgPool = 2, LReLU = 3, LSoftmax2 = 4 };

inline void put_record(std::string& out, std::uint8_t type, int inC, int outC, int kh, int kw,
                       int stride, int dilation) {
    out.push_back(static_cast<char>(type));
    put_u16(out, static_cast<std::uint16_t>(inC));
    put_u16(out, static_cast<std::uint16_t>(outC));
    put_u16(out, static_cast<std::uint16_t>(kh));
    put_u16(out, static_cast<std::uint16_t>(kw));
    put_u16(out, static_cast<std::uint16_t>(stride));
    put_u16(out, static_cast<std::uint16_t>(dilation));
}

struct LayerRecord {
    std::uint8_t type;
    int inC, outC, kh, kw, stride, dilation;
};

inline LayerRecord read_record(Reader& r) {
    LayerRecord rec{};
    rec.type = r.u8("layer type");
    rec.inC = r.u16("layer inC");
    rec.outC = r.u16("layer outC");
    rec.kh = r.u16("layer kh");
    rec.kw = r.u16("layer kw");
    rec.stride = r.u16("layer stride");
    rec.dilation = r.u16("layer dilation");
    return rec;
}

}  // namespace detail

template <typename T>
std::string serialize_model(const CascadeNetwork<T>& net) {
    using namespace detail;
    std::string out;
    out.append(kModelMagic, 4);
    put_u16(out, kModelVersion);
    put_u16(out, 1);  // thresholds always written
    put_u16(out, static_cast<std::uint16_t>(net.config.patchSize));
    out.push_back(static_cast<char>(kStages));
    for (int j = 0; j < kStages; ++j) {
        const auto& k = net.trunkConv[j];
        put_record(out, LConv, k.inChannels, k.outChannels, k.kh, k.kw, 1, 1);
        put_record(out, LReLU, k.outChannels, k.outChannels, 1, 1, 1, 1);
        if (j < kStages - 1) {
            const auto& p = net.trunkPool[j];
            put_record(out, LMaxPool, k.outChannels, k.outChannels, p.kh, p.kw, p.stride, p.dilation);
        }
    }
    for (int j = 0; j < kStages; ++j) {
        const auto& b = net.branchConv[j];
        put_record(out, LConv, b.inChannels, b.outChannels, b.kh, b.kw, 1, 1);
        const int gk = net.shapes[j].branchConvOut;
        put_record(out, LAvgPool, b.outChannels, b.outChannels, gk, gk, 1, 1);
        put_record(out, LSoftmax2, 2, 2, 1, 1, 1, 1);
    }
    for (int j = 0; j < kStages; ++j) {
        for (const T w : net.trunkConv[j].weights) put_f32(out, static_cast<float>(w));
        for (const T b : net.trunkConv[j].bias) put_f32(out, static_cast<float>(b));
    }
    for (int j = 0; j < kStages; ++j) {
        for (const T w : net.branchConv[j].weights) put_f32(out, static_cast<float>(w));
        for (const T b : net.branchConv[j].bias) put_f32(out, static_cast<float>(b));
    }
    for (int j = 0; j < kStages; ++j) put_f64(out, net.thresholds[j]);
    return out;
}

// Size in bytes of the binary32 weight payload alone.
template <typename T>
std::size_t weight_payload_bytes(const CascadeNetwork<T>& net) {
    return net.parameter_count() * 4;
}

template <typename T>
CascadeNetwork<T> deserialize_model(const std::string& buf) {
    using namespace detail;
    Reader r{buf};
    r.need(4, "magic");
    if (std::memcmp(buf.data(), kModelMagic, 4) != 0) {
        throw std::runtime_error("not a cascade model file (bad magic)");
    }
    r.pos = 4;
    const std::uint16_t version = r.u16("version");
    if (version != kModelVersion) {
        throw std::runtime_error("unsupported cascade model version " + std::to_string(version));
    }
    const std::uint16_t flags = r.u16("flags");
    const int patchSize = r.u16("patch size");
    const int k = r.u8("stage count");
    if (k != kStages) {
        throw std::runtime_error("unsupported stage count " + std::to_string(k));
    }

    CascadeConfig cfg;
    cfg.patchSize = patchSize;
    std::vector<LayerRecord> trunkConvs, branchConvs;
    for (int j = 0; j < kStages; ++j) {
        LayerRecord conv = read_record(r);
        if (conv.type != LConv) throw std::runtime_error("model file: expected trunk conv record");
        trunkConvs.push_back(conv);
        LayerRecord act = read_record(r);
        if (act.type != LReLU) throw std::runtime_error("model file: expected relu record");
        if (j < kStages - 1) {
            LayerRecord pool = read_record(r);
            if (pool.type != LMaxPool) throw std::runtime_error("model file: expected pool record");
        }
    }
    for (int j = 0; j < kStages; ++j) {
        LayerRecord conv = read_record(r);
        if (conv.type != LConv) throw std::runtime_error("model file: expected branch conv record");
        branchConvs.push_back(conv);
        LayerRecord gap = read_record(r);
        if (gap.type != LAvgPool) throw std::runtime_error("model file: expected avgpool record");
        LayerRecord sm = read_record(r);
        if (sm.type != LSoftmax2) throw std::runtime_error("model file: expected softmax record");
    }
    cfg.inputChannels = trunkConvs[0].inC;
    for (int j = 0; j < kStages; ++j) cfg.trunkFilters[j] = trunkConvs[j].outC;

    CascadeNetwork<T> net = build_network<T>(cfg, 0);
    for (int j = 0; j < kStages; ++j) {
        if (branchConvs[j].inC != cfg.trunkFilters[j] ||
            branchConvs[j].outC != CascadeConfig::branchFilters) {
            throw std::runtime_error("model file: branch record inconsistent with trunk");
        }
    }
    for (int j = 0; j < kStages; ++j) {
        for (auto& w : net.trunkConv[j].weights) w = static_cast<T>(r.f32("trunk weights"));
        for (auto& b : net.trunkConv[j].bias) b = static_cast<T>(r.f32("trunk bias"));
    }
    for (int j = 0; j < kStages; ++j) {
        for (auto& w : net.branchConv[j].weights) w = static_cast<T>(r.f32("branch weights"));
        for (auto& b : net.branchConv[j].bias) b = static_cast<T>(r.f32("branch bias"));
    }
    if (flags & 1u) {
        for (int j = 0; j < kStages; ++j) net.thresholds[j] = r.f64("thresholds");
    } else {
        net.thresholds = {0, 0, 0, 0};
    }
    for (int j = 1; j <= kStages; ++j) net.stageCosts[j - 1] = stage_cost(net, j);
    return net;
}

template <typename T>
void save_model(const CascadeNetwork<T>& net, const std::string& path) {
    const std::string bytes = serialize_model(net);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed for " + path);
}

template <typename T>
CascadeNetwork<T> load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_model<T>(bytes);
}

}  // namespace ccnn
