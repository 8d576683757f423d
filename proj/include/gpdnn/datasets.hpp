#pragma once

// Dataset ingestion and synthesis: MNIST IDX files, the Semeion digits text
// format, generic grayscale/resize preprocessing, half moons, and splits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gpdnn/checkpoint.hpp"
#include "gpdnn/error.hpp"
#include "gpdnn/random.hpp"
#include "gpdnn/tensor.hpp"

namespace gpdnn {

struct Dataset {
    std::string name;
    Tensor images;                    // [N, H, W, C] or [N, D]
    std::vector<std::size_t> labels;  // class indices
    double lo = -1.0, hi = 1.0;       // value range of `images`
    std::size_t classes = 10;

    std::size_t size() const { return labels.size(); }

    Dataset subset(std::span<const std::size_t> rows, std::string new_name = {}) const {
        Dataset d{new_name.empty() ? name : std::move(new_name), gather_rows(images, rows), {}, lo, hi, classes};
        d.labels.reserve(rows.size());
        for (std::size_t r : rows) d.labels.push_back(labels.at(r));
        return d;
    }

    Dataset head(std::size_t n) const {
        n = std::min(n, size());
        std::vector<std::size_t> rows(n);
        for (std::size_t i = 0; i < n; ++i) rows[i] = i;
        return subset(rows);
    }
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t at, const std::string& source) {
    if (at + 4 > b.size()) throw DataError(source + ": truncated IDX header");
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
           std::uint32_t{b[at + 3]};
}

inline void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

}  // namespace detail

/// Raw contents of an IDX file: dims and the unsigned-byte payload.
struct IdxArray {
    std::vector<std::uint32_t> dims;
    std::vector<unsigned char> values;
};

inline IdxArray parse_idx(const std::vector<unsigned char>& bytes, std::uint32_t expected_magic, const std::string& source) {
    const std::uint32_t magic = detail::read_be32(bytes, 0, source);
    if (magic != expected_magic) {
        std::ostringstream os;
        os << source << ": bad IDX magic 0x" << std::hex << magic << ", expected 0x" << expected_magic;
        throw DataError(os.str());
    }
    IdxArray a;
    const std::size_t rank = magic & 0xFF;
    std::size_t count = 1;
    for (std::size_t k = 0; k < rank; ++k) {
        a.dims.push_back(detail::read_be32(bytes, 4 + 4 * k, source));
        count *= a.dims.back();
    }
    const std::size_t offset = 4 + 4 * rank;
    if (bytes.size() < offset + count) throw DataError(source + ": truncated IDX payload");
    if (bytes.size() > offset + count) throw DataError(source + ": trailing bytes after IDX payload");
    a.values.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
    return a;
}

inline std::vector<unsigned char> encode_idx(const IdxArray& a) {
    std::vector<unsigned char> out;
    detail::put_be32(out, 0x00000800u | static_cast<std::uint32_t>(a.dims.size()));
    for (std::uint32_t d : a.dims) detail::put_be32(out, d);
    out.insert(out.end(), a.values.begin(), a.values.end());
    return out;
}

/// Pixel byte → [−1, 1] via x·2/255 − 1.
inline double normalize_byte(unsigned char v) { return static_cast<double>(v) * 2.0 / 255.0 - 1.0; }

inline unsigned char denormalize_byte(double v) {
    return static_cast<unsigned char>(std::clamp(std::lround((v + 1.0) * 255.0 / 2.0), 0L, 255L));
}

/// MNIST-style image/label IDX pair, pixels scaled to [−1, 1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path, const std::string& name = "mnist") {
    const IdxArray images = parse_idx(read_file_bytes(images_path), kIdxImageMagic, images_path);
    const IdxArray labels = parse_idx(read_file_bytes(labels_path), kIdxLabelMagic, labels_path);
    if (images.dims[0] != labels.dims[0]) {
        throw DataError(images_path + ": " + std::to_string(images.dims[0]) + " images but " + labels_path + " holds " +
                        std::to_string(labels.dims[0]) + " labels");
    }
    Dataset d;
    d.name = name;
    Tensor t(Shape{images.dims[0], images.dims[1], images.dims[2], 1});
    double* p = t.mutable_ptr();
    for (std::size_t i = 0; i < images.values.size(); ++i) p[i] = normalize_byte(images.values[i]);
    d.images = std::move(t);
    std::size_t max_label = 0;
    for (unsigned char l : labels.values) {
        d.labels.push_back(l);
        max_label = std::max<std::size_t>(max_label, l);
    }
    d.classes = std::max<std::size_t>(10, max_label + 1);
    return d;
}

struct MnistFiles {
    Dataset train;  // 60000 items
    Dataset test;   // 10000 items
};

/// The four standard MNIST files under `dir`.
inline MnistFiles load_mnist(const std::string& dir) {
    const std::string root = dir.empty() || dir.back() == '/' ? dir : dir + "/";
    return {load_idx(root + "train-images-idx3-ubyte", root + "train-labels-idx1-ubyte", "mnist-train"),
            load_idx(root + "t10k-images-idx3-ubyte", root + "t10k-labels-idx1-ubyte", "mnist-test")};
}

/// Bytes of the IDX image and label files that would produce `d`.
inline std::pair<std::vector<unsigned char>, std::vector<unsigned char>> to_idx_bytes(const Dataset& d) {
    IdxArray images{{static_cast<std::uint32_t>(d.images.dim(0)), static_cast<std::uint32_t>(d.images.dim(1)),
                     static_cast<std::uint32_t>(d.images.dim(2))},
                    {}};
    images.values.reserve(d.images.size());
    for (double v : d.images.data()) images.values.push_back(denormalize_byte(v));
    IdxArray labels{{static_cast<std::uint32_t>(d.size())}, {}};
    for (std::size_t l : d.labels) labels.values.push_back(static_cast<unsigned char>(l));
    return {encode_idx(images), encode_idx(labels)};
}

/// Bilinear resampling of [N, H, W, C] with half-pixel centres and edge clamping.
inline Tensor bilinear_resize(const Tensor& images, std::size_t out_h, std::size_t out_w) {
    if (images.rank() != 4) throw ShapeError("bilinear_resize: expected [N,H,W,C], got " + shape_string(images.shape()));
    const std::size_t n = images.dim(0), h = images.dim(1), w = images.dim(2), ch = images.dim(3);
    if (h == out_h && w == out_w) return images;
    Tensor out(Shape{n, out_h, out_w, ch});
    double* o = out.mutable_ptr();
    auto axis = [](std::size_t i, std::size_t in, std::size_t outn) {
        double src = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::size_t>(std::floor(src));
        const std::size_t hi = std::min(lo + 1, in - 1);
        return std::tuple<std::size_t, std::size_t, double>{lo, hi, src - static_cast<double>(lo)};
    };
    for (std::size_t y = 0; y < out_h; ++y) {
        const auto [y0, y1, fy] = axis(y, h, out_h);
        for (std::size_t x = 0; x < out_w; ++x) {
            const auto [x0, x1, fx] = axis(x, w, out_w);
            for (std::size_t b = 0; b < n; ++b) {
                const double* img = images.ptr() + b * h * w * ch;
                for (std::size_t c = 0; c < ch; ++c) {
                    const double top = (1 - fx) * img[(y0 * w + x0) * ch + c] + fx * img[(y0 * w + x1) * ch + c];
                    const double bottom = (1 - fx) * img[(y1 * w + x0) * ch + c] + fx * img[(y1 * w + x1) * ch + c];
                    o[((b * out_h + y) * out_w + x) * ch + c] = (1 - fy) * top + fy * bottom;
                }
            }
        }
    }
    return out;
}

/// Luminance grayscale, bilinear resize to 28×28, then [in_lo, in_hi] → [−1, 1].
inline Dataset preprocess_external(const Tensor& images, std::vector<std::size_t> labels, const std::string& name,
                                   double in_lo = 0.0, double in_hi = 255.0, std::size_t size = 28) {
    if (images.rank() != 4) throw ShapeError("preprocess_external: expected [N,H,W,C], got " + shape_string(images.shape()));
    const std::size_t n = images.dim(0), h = images.dim(1), w = images.dim(2), ch = images.dim(3);
    if (ch != 1 && ch != 3) throw DataError("preprocess_external: unsupported channel count " + std::to_string(ch));
    if (labels.size() != n) throw DataError("preprocess_external: one label per image required");
    if (!(in_hi > in_lo)) throw ContractError("preprocess_external: empty input range");
    Tensor gray = images;
    if (ch == 3) {
        gray = Tensor(Shape{n, h, w, 1});
        double* g = gray.mutable_ptr();
        for (std::size_t i = 0; i < n * h * w; ++i) {
            const double* px = images.ptr() + i * 3;
            g[i] = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        }
    }
    Tensor resized = bilinear_resize(gray, size, size).clone();
    for (double& v : resized.mutable_data()) v = std::clamp((v - in_lo) / (in_hi - in_lo) * 2.0 - 1.0, -1.0, 1.0);
    Dataset d{name, std::move(resized), std::move(labels), -1.0, 1.0, 10};
    for (std::size_t l : d.labels) d.classes = std::max(d.classes, l + 1);
    return d;
}

/// Semeion handwritten digits: each row holds 256 pixel values (16×16, 0/1)
/// followed by a 10-element one-hot label. Upscaled to 28×28, scaled to [−1, 1].
inline Dataset parse_semeion(std::istream& in, const std::string& source) {
    std::vector<double> pixels;
    std::vector<std::size_t> labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream fields(line);
        std::vector<double> values;
        double v;
        while (fields >> v) values.push_back(v);
        if (!fields.eof()) throw DataError(source + ":" + std::to_string(line_no) + ": non-numeric field");
        if (values.empty()) continue;
        if (values.size() != 266) {
            throw DataError(source + ":" + std::to_string(line_no) + ": expected 266 fields, found " + std::to_string(values.size()));
        }
        std::size_t hot = 10, ones = 0;
        for (std::size_t k = 0; k < 10; ++k) {
            const double x = values[256 + k];
            if (x == 1.0) {
                hot = k;
                ++ones;
            } else if (x != 0.0) {
                ones = 2;
            }
        }
        if (ones != 1) throw DataError(source + ":" + std::to_string(line_no) + ": label is not one-hot");
        for (std::size_t k = 0; k < 256; ++k) {
            if (values[k] < 0.0 || values[k] > 1.0) throw DataError(source + ":" + std::to_string(line_no) + ": pixel outside [0,1]");
        }
        pixels.insert(pixels.end(), values.begin(), values.begin() + 256);
        labels.push_back(hot);
    }
    const std::size_t n = labels.size();
    if (n == 0) throw DataError(source + ": no rows");
    Tensor raw(Shape{n, 16, 16, 1}, std::move(pixels));
    return preprocess_external(raw, std::move(labels), "semeion", 0.0, 1.0);
}

inline Dataset load_semeion(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    return parse_semeion(in, path);
}

/// Two interleaving half circles: class 0 on (cos t, sin t), class 1 on
/// (1 − cos t, 0.5 − sin t), t ~ U[0, π], plus N(0, σ²) noise. Coordinates stay raw.
inline Dataset half_moons(std::size_t n, double noise, std::uint64_t seed) {
    if (n == 0 || n % 2 != 0) throw ContractError("half_moons: n must be a positive even number");
    Rng rng(seed);
    Tensor pts(Shape{n, 2});
    double* p = pts.mutable_ptr();
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const bool upper = i < n / 2;
        const double t = rng.uniform(0.0, std::numbers::pi);
        double x = upper ? std::cos(t) : 1.0 - std::cos(t);
        double y = upper ? std::sin(t) : 0.5 - std::sin(t);
        x += noise * rng.normal();
        y += noise * rng.normal();
        p[2 * i] = x;
        p[2 * i + 1] = y;
        labels[i] = upper ? 0 : 1;
    }
    const auto [lo, hi] = std::minmax_element(pts.ptr(), pts.ptr() + pts.size());
    return Dataset{"halfmoons", pts, std::move(labels), *lo, *hi, 2};
}

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

/// Validation = the first `val_size` items, fixed. Training = a seeded uniform
/// subsample of round(proportion · remainder) of the rest, kept in file order.
inline Split split(std::size_t n, std::size_t val_size, double proportion, std::uint64_t seed) {
    if (val_size >= n) throw ContractError("split: validation size must be smaller than the dataset");
    if (!(proportion > 0.0 && proportion <= 1.0)) throw ContractError("split: proportion must lie in (0, 1]");
    Split s;
    for (std::size_t i = 0; i < val_size; ++i) s.validation.push_back(i);
    const std::size_t rest = n - val_size;
    const auto take = static_cast<std::size_t>(std::llround(proportion * static_cast<double>(rest)));
    if (take == rest) {
        for (std::size_t i = val_size; i < n; ++i) s.train.push_back(i);
        return s;
    }
    Rng rng(seed);
    auto picked = rng.sample_without_replacement(rest, take);
    std::sort(picked.begin(), picked.end());
    for (std::size_t i : picked) s.train.push_back(val_size + i);
    return s;
}

}  // namespace gpdnn
