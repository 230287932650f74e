#include "ccnn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ccnn/rng.hpp"

namespace ccnn {

namespace {

struct Color {
    std::uint8_t r, g, b;
};

inline std::uint8_t clamp8(int v) {
    return static_cast<std::uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
}

inline Color jitter(const Color& c, Rng& rng, int amount) {
    return {clamp8(c.r + static_cast<int>(rng.uniform_int(-amount, amount))),
            clamp8(c.g + static_cast<int>(rng.uniform_int(-amount, amount))),
            clamp8(c.b + static_cast<int>(rng.uniform_int(-amount, amount)))};
}

void paint_background(Image8& img, int textureKind, Rng& rng) {
    const Color base = textureKind == 0 ? Color{44, 110, 48} : Color{198, 150, 106};
    const int stripeW = static_cast<int>(rng.uniform_int(22, 44));
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            double shade = 1.0;
            if (textureKind == 0) {
                shade = ((x / stripeW) % 2 == 0) ? 0.94 : 1.06;  // mowing stripes
            } else if ((y / 9) % 2 == 0) {
                shade = 0.96;  // plank seams
            }
            const int n = static_cast<int>(rng.uniform_int(-8, 8));
            std::uint8_t* p = img.px(y, x);
            p[0] = clamp8(static_cast<int>(base.r * shade) + n);
            p[1] = clamp8(static_cast<int>(base.g * shade) + n);
            p[2] = clamp8(static_cast<int>(base.b * shade) + n);
        }
    }
}

void paint_disc(Image8& img, double cy, double cx, double radius, const Color& c) {
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
    const int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(cy + radius)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
    const int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(cx + radius)));
    const double r2 = radius * radius;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dy = y - cy, dx = x - cx;
            if (dy * dy + dx * dx <= r2) {
                std::uint8_t* p = img.px(y, x);
                p[0] = c.r;
                p[1] = c.g;
                p[2] = c.b;
            }
        }
    }
}

void paint_segment(Image8& img, double y0, double x0, double y1, double x1, double halfWidth,
                   const Color& c) {
    const double len = std::max(1.0, std::hypot(y1 - y0, x1 - x0));
    const int steps = static_cast<int>(len * 2) + 1;
    for (int s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / steps;
        paint_disc(img, y0 + t * (y1 - y0), x0 + t * (x1 - x0), halfWidth, c);
    }
}

void paint_field_lines(Image8& img, int textureKind, Rng& rng) {
    const Color white{233, 233, 233};
    if (textureKind == 0) {
        const int nLines = static_cast<int>(rng.uniform_int(2, 4));
        for (int i = 0; i < nLines; ++i) {
            const double hw = rng.uniform(0.8, 1.6);
            if (rng.bernoulli(0.5)) {
                const double x = rng.uniform(0.05, 0.95) * img.w;
                paint_segment(img, 0, x, img.h - 1, x + rng.uniform(-40.0, 40.0), hw, white);
            } else {
                const double y = rng.uniform(0.05, 0.95) * img.h;
                paint_segment(img, y, 0, y + rng.uniform(-25.0, 25.0), img.w - 1, hw, white);
            }
        }
        // center-circle style arc
        const double cy = rng.uniform(0.2, 0.8) * img.h;
        const double cx = rng.uniform(0.2, 0.8) * img.w;
        const double radius = rng.uniform(0.12, 0.3) * img.h;
        const int steps = static_cast<int>(radius * 8) + 16;
        for (int s = 0; s < steps; ++s) {
            const double a = 2.0 * 3.14159265358979323846 * s / steps;
            const double py = cy + radius * std::sin(a);
            const double px = cx + radius * std::cos(a);
            if (py >= 1 && py < img.h - 1 && px >= 1 && px < img.w - 1) {
                paint_disc(img, py, px, 1.1, white);
            }
        }
    } else {
        const double y = rng.uniform(0.3, 0.7) * img.h;
        paint_segment(img, y, 0, y, img.w - 1, 1.5, white);
        const double x0 = rng.uniform(0.1, 0.4) * img.w;
        const double x1 = x0 + rng.uniform(0.2, 0.4) * img.w;
        const double yTop = rng.uniform(0.15, 0.35) * img.h;
        const double yBot = yTop + rng.uniform(0.25, 0.45) * img.h;
        paint_segment(img, yTop, x0, yTop, x1, 1.2, white);
        paint_segment(img, yBot, x0, yBot, x1, 1.2, white);
        paint_segment(img, yTop, x0, yBot, x0, 1.2, white);
        paint_segment(img, yTop, x1, yBot, x1, 1.2, white);
    }
}

struct SpriteTile {
    int w = 0, h = 0;
    std::vector<std::uint8_t> rgb;
    std::vector<std::uint8_t> mask;

    SpriteTile(int w_, int h_)
        : w(w_), h(h_), rgb(static_cast<std::size_t>(w_) * h_ * 3, 0),
          mask(static_cast<std::size_t>(w_) * h_, 0) {}
};

void tile_disc(SpriteTile& t, double cy, double cx, double radius, const Color& c) {
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
    const int y1 = std::min(t.h - 1, static_cast<int>(std::ceil(cy + radius)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
    const int x1 = std::min(t.w - 1, static_cast<int>(std::ceil(cx + radius)));
    const double r2 = radius * radius;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dy = y - cy, dx = x - cx;
            if (dy * dy + dx * dx <= r2) {
                const std::size_t i = static_cast<std::size_t>(y) * t.w + x;
                t.mask[i] = 1;
                t.rgb[i * 3] = c.r;
                t.rgb[i * 3 + 1] = c.g;
                t.rgb[i * 3 + 2] = c.b;
            }
        }
    }
}

void tile_segment(SpriteTile& t, double y0, double x0, double y1, double x1, double halfWidth,
                  const Color& c) {
    const double len = std::max(1.0, std::hypot(y1 - y0, x1 - x0));
    const int steps = static_cast<int>(len * 2) + 1;
    for (int s = 0; s <= steps; ++s) {
        const double u = static_cast<double>(s) / steps;
        tile_disc(t, y0 + u * (y1 - y0), x0 + u * (x1 - x0), halfWidth, c);
    }
}

const Color kJerseyPalette[] = {{204, 36, 36},  {36, 60, 204},  {232, 232, 232},
                                {224, 206, 58}, {40, 182, 198}, {146, 58, 186}};
const Color kShortsPalette[] = {{235, 235, 235}, {28, 28, 58}, {24, 24, 24}};

// Articulated player sprite: head and legs in skin tone, jersey torso and
// arms, contrasting shorts, pose jitter in the limbs.
SpriteTile render_sprite(int height, const Color& jersey, const Color& shorts, Rng& rng) {
    const double h = height;
    const int tw = std::max(9, static_cast<int>(h * 0.62));
    SpriteTile tile(tw, height);
    const double cx = tw / 2.0;
    const Color skin = jitter(Color{208, 164, 128}, rng, 14);

    const double lean = rng.uniform(-0.05, 0.05) * h;
    const double headR = std::max(1.2, 0.085 * h);
    const double hipY = 0.52 * h;
    const double shortsY = std::min(h - 1.0, 0.66 * h);

    // legs (drawn first so torso overlaps the hip)
    for (int side = -1; side <= 1; side += 2) {
        const double spread = rng.uniform(0.03, 0.16) * h * side;
        const double hipX = cx + 0.045 * h * side + lean * 0.3;
        tile_segment(tile, hipY, hipX, h - 1, cx + spread + lean * 0.2,
                     std::max(0.8, 0.045 * h), skin);
    }
    // shorts
    tile_segment(tile, hipY, cx + lean * 0.4, shortsY, cx + lean * 0.3, std::max(1.0, 0.12 * h),
                 shorts);
    // torso
    tile_segment(tile, 2 * headR, cx + lean, hipY, cx + lean * 0.4, std::max(1.0, 0.13 * h),
                 jersey);
    // arms
    for (int side = -1; side <= 1; side += 2) {
        const double shoulderY = 0.24 * h;
        const double shoulderX = cx + lean + 0.11 * h * side;
        const double handY = shoulderY + rng.uniform(0.08, 0.28) * h;
        const double handX = shoulderX + rng.uniform(0.04, 0.18) * h * side;
        tile_segment(tile, shoulderY, shoulderX, handY, handX, std::max(0.7, 0.035 * h), jersey);
    }
    // head
    tile_disc(tile, headR, cx + lean, headR, skin);
    return tile;
}

void blur_region(Image8& img, int x0, int y0, int x1, int y1, int radius) {
    x0 = std::max(0, x0);
    y0 = std::max(0, y0);
    x1 = std::min(img.w - 1, x1);
    y1 = std::min(img.h - 1, y1);
    for (int y = y0; y <= y1; ++y) {
        std::vector<std::uint8_t> rowCopy((x1 - x0 + 1) * 3);
        std::copy(img.px(y, x0), img.px(y, x0) + rowCopy.size(), rowCopy.begin());
        for (int x = x0; x <= x1; ++x) {
            int acc[3] = {0, 0, 0};
            int count = 0;
            for (int dx = -radius; dx <= radius; ++dx) {
                const int sx = x + dx;
                if (sx < x0 || sx > x1) continue;
                const std::uint8_t* p = &rowCopy[(sx - x0) * 3];
                acc[0] += p[0];
                acc[1] += p[1];
                acc[2] += p[2];
                ++count;
            }
            std::uint8_t* o = img.px(y, x);
            o[0] = static_cast<std::uint8_t>(acc[0] / count);
            o[1] = static_cast<std::uint8_t>(acc[1] / count);
            o[2] = static_cast<std::uint8_t>(acc[2] / count);
        }
    }
}

}  // namespace

double box_iou(const GtBox& a, const GtBox& b) {
    const double ix = std::max(0.0, static_cast<double>(std::min(a.x + a.size, b.x + b.size)) -
                                        std::max(a.x, b.x));
    const double iy = std::max(0.0, static_cast<double>(std::min(a.y + a.size, b.y + b.size)) -
                                        std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni =
        static_cast<double>(a.size) * a.size + static_cast<double>(b.size) * b.size - inter;
    return uni > 0 ? inter / uni : 0.0;
}

Scene generate_scene(const SceneParams& params) {
    if (params.width < 8 || params.height < 8) {
        throw std::invalid_argument("generate_scene: scene too small");
    }
    if (params.playersMin < 0 || params.playersMax < params.playersMin) {
        throw std::invalid_argument("generate_scene: bad player count range");
    }
    if (params.heightMin < 8 || params.heightMax < params.heightMin) {
        throw std::invalid_argument("generate_scene: bad height range");
    }
    Rng rng(params.seed);
    Scene scene;
    scene.image = Image8(params.width, params.height);
    paint_background(scene.image, params.textureKind, rng);
    paint_field_lines(scene.image, params.textureKind, rng);

    const int maxSide = std::min(params.width, params.height) - 2;
    const int count = static_cast<int>(rng.uniform_int(params.playersMin, params.playersMax));
    const Color teamA = kJerseyPalette[rng.uniform_int(0, 5)];
    Color teamB = kJerseyPalette[rng.uniform_int(0, 5)];
    while (teamB.r == teamA.r && teamB.g == teamA.g && teamB.b == teamA.b) {
        teamB = kJerseyPalette[rng.uniform_int(0, 5)];
    }
    const Color shortsA = kShortsPalette[rng.uniform_int(0, 2)];
    const Color shortsB = kShortsPalette[rng.uniform_int(0, 2)];

    for (int i = 0; i < count; ++i) {
        const int h = std::min<int>(
            maxSide, static_cast<int>(rng.uniform_int(params.heightMin, params.heightMax)));
        const bool teamIsA = rng.bernoulli(0.5);
        const Color jersey = jitter(teamIsA ? teamA : teamB, rng, 10);
        const Color shorts = jitter(teamIsA ? shortsA : shortsB, rng, 8);
        SpriteTile tile = render_sprite(h, jersey, shorts, rng);

        // Partial occlusion: hide a bottom strip before measuring the box.
        if (rng.bernoulli(params.occlusionProbability)) {
            const double maxCut = std::min(0.28, 1.0 - static_cast<double>(params.heightMin) / h);
            if (maxCut > 0.05) {
                const int cutFrom = h - static_cast<int>(rng.uniform(0.05, maxCut) * h);
                std::fill(tile.mask.begin() + static_cast<std::size_t>(cutFrom) * tile.w,
                          tile.mask.end(), 0);
            }
        }

        int bx0 = tile.w, by0 = tile.h, bx1 = -1, by1 = -1;
        for (int y = 0; y < tile.h; ++y) {
            for (int x = 0; x < tile.w; ++x) {
                if (!tile.mask[static_cast<std::size_t>(y) * tile.w + x]) continue;
                bx0 = std::min(bx0, x);
                by0 = std::min(by0, y);
                bx1 = std::max(bx1, x);
                by1 = std::max(by1, y);
            }
        }
        if (bx1 < 0) continue;  // nothing visible
        const int bw = bx1 - bx0 + 1, bh = by1 - by0 + 1;
        const int side = std::min(maxSide, std::max(bw, bh));

        GtBox box;
        bool placed = false;
        for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
            box.x = static_cast<int>(rng.uniform_int(0, params.width - side));
            box.y = static_cast<int>(rng.uniform_int(0, params.height - side));
            box.size = side;
            placed = true;
            for (const GtBox& other : scene.boxes) {
                if (box_iou(box, other) > params.overlapIoUMax) {
                    placed = false;
                    break;
                }
            }
        }
        if (!placed) continue;

        const int offX = box.x + (side - bw) / 2 - bx0;
        const int offY = box.y + (side - bh) / 2 - by0;
        for (int y = by0; y <= by1; ++y) {
            const int sy = y + offY;
            if (sy < 0 || sy >= params.height) continue;
            for (int x = bx0; x <= bx1; ++x) {
                const std::size_t ti = static_cast<std::size_t>(y) * tile.w + x;
                if (!tile.mask[ti]) continue;
                const int sx = x + offX;
                if (sx < 0 || sx >= params.width) continue;
                std::uint8_t* p = scene.image.px(sy, sx);
                p[0] = tile.rgb[ti * 3];
                p[1] = tile.rgb[ti * 3 + 1];
                p[2] = tile.rgb[ti * 3 + 2];
            }
        }
        if (rng.bernoulli(params.blurProbability)) {
            const int radius = static_cast<int>(rng.uniform_int(1, 2));
            blur_region(scene.image, box.x - radius, box.y, box.x + side + radius, box.y + side,
                        radius);
        }
        scene.boxes.push_back(box);
    }
    return scene;
}

// --- PPM -----------------------------------------------------------------------

std::string ppm_bytes(const Image8& image) {
    std::string out = "P6\n" + std::to_string(image.w) + " " + std::to_string(image.h) + "\n255\n";
    out.append(reinterpret_cast<const char*>(image.rgb.data()), image.rgb.size());
    return out;
}

void ppm_write(const Image8& image, const std::string& path) {
    if (image.w <= 0 || image.h <= 0) throw std::invalid_argument("ppm_write: empty image");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("ppm_write: cannot open " + path);
    const std::string bytes = ppm_bytes(image);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("ppm_write: write failed for " + path);
}

namespace {

// Skips PPM whitespace and comments, then parses a nonnegative integer.
long ppm_int(const std::string& buf, std::size_t& pos, const std::string& path) {
    while (pos < buf.size()) {
        const char c = buf[pos];
        if (c == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= buf.size() || buf[pos] < '0' || buf[pos] > '9') {
        throw std::runtime_error("ppm_read: malformed header in " + path);
    }
    long v = 0;
    while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
        v = v * 10 + (buf[pos] - '0');
        ++pos;
    }
    return v;
}

}  // namespace

Image8 ppm_read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("ppm_read: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '6') {
        throw std::runtime_error("ppm_read: not a binary P6 file: " + path);
    }
    std::size_t pos = 2;
    const long w = ppm_int(buf, pos, path);
    const long h = ppm_int(buf, pos, path);
    const long maxval = ppm_int(buf, pos, path);
    if (maxval != 255) {
        throw std::runtime_error("ppm_read: unsupported maxval " + std::to_string(maxval) +
                                 " in " + path);
    }
    if (pos >= buf.size()) throw std::runtime_error("ppm_read: truncated header in " + path);
    ++pos;  // single whitespace byte after maxval
    const std::size_t need = static_cast<std::size_t>(w) * h * 3;
    if (buf.size() - pos < need) {
        throw std::runtime_error("ppm_read: truncated pixel data in " + path);
    }
    Image8 img(static_cast<int>(w), static_cast<int>(h));
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(pos),
              buf.begin() + static_cast<std::ptrdiff_t>(pos + need),
              reinterpret_cast<char*>(img.rgb.data()));
    return img;
}

void draw_box_outline(Image8& image, const GtBox& box, std::uint8_t r, std::uint8_t g,
                      std::uint8_t b, int thickness) {
    for (int t = 0; t < thickness; ++t) {
        const int x0 = std::max(0, box.x + t);
        const int y0 = std::max(0, box.y + t);
        const int x1 = std::min(image.w - 1, box.x + box.size - 1 - t);
        const int y1 = std::min(image.h - 1, box.y + box.size - 1 - t);
        if (x0 > x1 || y0 > y1) break;
        for (int x = x0; x <= x1; ++x) {
            std::uint8_t* p = image.px(y0, x);
            p[0] = r, p[1] = g, p[2] = b;
            p = image.px(y1, x);
            p[0] = r, p[1] = g, p[2] = b;
        }
        for (int y = y0; y <= y1; ++y) {
            std::uint8_t* p = image.px(y, x0);
            p[0] = r, p[1] = g, p[2] = b;
            p = image.px(y, x1);
            p[0] = r, p[1] = g, p[2] = b;
        }
    }
}

// --- dataset -------------------------------------------------------------------

void write_dataset(const std::string& dir, const SceneParams& base, int sceneCount) {
    namespace fs = std::filesystem;
    if (sceneCount <= 0) throw std::invalid_argument("write_dataset: need at least one scene");
    fs::create_directories(fs::path(dir) / "scenes");

    std::ofstream ann(fs::path(dir) / "annotations.csv");
    if (!ann) throw std::runtime_error("write_dataset: cannot write annotations.csv");
    ann << "image,x,y,size\n";

    std::vector<int> order(sceneCount);
    std::iota(order.begin(), order.end(), 0);
    Rng splitRng(Rng::derive(base.seed, 0xC0FFEE));
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[splitRng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
    }
    std::vector<int> split(sceneCount, 1);
    for (int i = 0; i < sceneCount / 2; ++i) split[order[i]] = 0;

    std::ofstream sp(fs::path(dir) / "split.csv");
    if (!sp) throw std::runtime_error("write_dataset: cannot write split.csv");
    sp << "scene,split\n";

    for (int i = 0; i < sceneCount; ++i) {
        SceneParams p = base;
        p.seed = base.seed + static_cast<std::uint64_t>(i);
        Scene scene = generate_scene(p);
        char name[32];
        std::snprintf(name, sizeof(name), "scenes/%04d.ppm", i);
        ppm_write(scene.image, (fs::path(dir) / name).string());
        for (const GtBox& b : scene.boxes) {
            ann << name << "," << b.x << "," << b.y << "," << b.size << "\n";
        }
        sp << i << "," << (split[i] == 0 ? "train" : "test") << "\n";
    }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset ds;
    ds.root = dir;

    std::ifstream sp(fs::path(dir) / "split.csv");
    if (!sp) throw std::runtime_error("load_dataset: missing split.csv in " + dir);
    std::string line;
    std::getline(sp, line);  // header
    while (std::getline(sp, line)) {
        if (line.empty()) continue;
        const auto cols = split_csv_line(line);
        if (cols.size() != 2) throw std::runtime_error("load_dataset: malformed split.csv line");
        const int id = std::stoi(cols[0]);
        if (id != static_cast<int>(ds.images.size())) {
            throw std::runtime_error("load_dataset: split.csv scene ids must be dense");
        }
        char name[32];
        std::snprintf(name, sizeof(name), "scenes/%04d.ppm", id);
        ds.images.push_back(name);
        ds.boxes.emplace_back();
        ds.split.push_back(cols[1] == "train" ? 0 : 1);
    }

    std::ifstream ann(fs::path(dir) / "annotations.csv");
    if (!ann) throw std::runtime_error("load_dataset: missing annotations.csv in " + dir);
    std::getline(ann, line);  // header
    while (std::getline(ann, line)) {
        if (line.empty()) continue;
        const auto cols = split_csv_line(line);
        if (cols.size() != 4) throw std::runtime_error("load_dataset: malformed annotation line");
        const std::string& image = cols[0];
        auto it = std::find(ds.images.begin(), ds.images.end(), image);
        if (it == ds.images.end()) {
            throw std::runtime_error("load_dataset: annotation for unknown image " + image);
        }
        GtBox b{std::stoi(cols[1]), std::stoi(cols[2]), std::stoi(cols[3])};
        ds.boxes[static_cast<std::size_t>(it - ds.images.begin())].push_back(b);
    }
    return ds;
}

// --- patch planning ---------------------------------------------------------------

std::vector<PatchSpec> plan_patches(const Scene& scene, int sceneId, const SampleParams& params) {
    std::vector<PatchSpec> out;
    Rng rng(Rng::derive(params.seed, static_cast<std::uint64_t>(sceneId)));
    const int W = scene.image.w, H = scene.image.h;

    int posCount = 0;
    for (std::size_t bi = 0; bi < scene.boxes.size(); ++bi) {
        const GtBox& gt = scene.boxes[bi];
        for (int rep = 0; rep < params.positivesPerBox; ++rep) {
            PatchSpec spec;
            spec.sceneId = sceneId;
            spec.boxId = static_cast<int>(bi);
            spec.label = 1;
            bool ok = false;
            for (int attempt = 0; attempt < 40 && !ok; ++attempt) {
                const double scale = rng.uniform(0.85, 1.18);
                double size = gt.size * scale;
                double dx = rng.uniform(-0.12, 0.12) * gt.size;
                double dy = rng.uniform(-0.12, 0.12) * gt.size;
                double x = gt.x + (gt.size - size) / 2 + dx;
                double y = gt.y + (gt.size - size) / 2 + dy;
                if (x < 0 || y < 0 || x + size > W || y + size > H) continue;
                GtBox cand{static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y)),
                           static_cast<int>(std::lround(size))};
                if (box_iou(cand, gt) < params.positiveIoUMin) continue;
                spec.x = x;
                spec.y = y;
                spec.size = size;
                ok = true;
            }
            if (!ok) {
                // The unjittered box always satisfies the floor.
                spec.x = gt.x;
                spec.y = gt.y;
                spec.size = gt.size;
            }
            out.push_back(spec);
            ++posCount;
        }
    }

    int sMin = params.negSizeMin, sMax = params.negSizeMax;
    if (sMin <= 0 || sMax <= 0) {
        sMin = std::min(W, H);
        sMax = 0;
        for (const GtBox& b : scene.boxes) {
            sMin = std::min(sMin, b.size);
            sMax = std::max(sMax, b.size);
        }
        if (sMax == 0) {  // background-only scene
            sMin = std::min(std::min(W, H) / 4, 64);
            sMax = std::min(W, H) / 2;
        }
        sMin = std::max(12, sMin);
        sMax = std::min(std::min(W, H), std::max(sMax, sMin));
    }

    const int negCount = posCount > 0
                             ? static_cast<int>(std::lround(params.negativesPerPositive * posCount))
                             : 3;
    for (int n = 0; n < negCount; ++n) {
        bool ok = false;
        PatchSpec spec;
        spec.sceneId = sceneId;
        spec.boxId = -1;
        spec.label = 0;
        for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
            const int size = static_cast<int>(rng.uniform_int(sMin, sMax));
            if (size > std::min(W, H)) continue;
            const int x = static_cast<int>(rng.uniform_int(0, W - size));
            const int y = static_cast<int>(rng.uniform_int(0, H - size));
            const GtBox cand{x, y, size};
            bool clear = true;
            for (const GtBox& gt : scene.boxes) {
                if (box_iou(cand, gt) >= params.negativeIoUMax) {
                    clear = false;
                    break;
                }
            }
            if (!clear) continue;
            spec.x = x;
            spec.y = y;
            spec.size = size;
            ok = true;
        }
        if (!ok) {
            throw std::runtime_error("sample_patches: could not place a negative in scene " +
                                     std::to_string(sceneId) + " within the retry budget");
        }
        out.push_back(spec);
    }
    return out;
}

}  // namespace ccnn
