#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kafforge/errors.hpp"
#include "kafforge/tensor.hpp"

namespace kafforge {

/// Labeled image collection. Pixels live in [0,1]; grayscale storage with an
/// explicit channel axis, so vector data rides along as (n,1,1,dim).
struct Dataset {
    Tensor images; // (n, channels, H, W)
    std::vector<int> labels;
    int class_count = 0;
    std::vector<std::string> class_names;

    std::size_t size() const { return images.rank() == 4 ? images.dim(0) : 0; }

    void validate() const {
        if (images.rank() != 4)
            throw DomainError("dataset images must be (n,channels,H,W), got " +
                              images.shape_string());
        if (labels.size() != size())
            throw DomainError("dataset has " + std::to_string(labels.size()) + " labels for " +
                              std::to_string(size()) + " images");
        if (class_count <= 0 && size() > 0)
            throw DomainError("dataset class count must be positive");
        for (int label : labels)
            if (label < 0 || label >= class_count)
                throw DomainError("dataset label " + std::to_string(label) +
                                  " outside [0," + std::to_string(class_count) + ")");
        for (std::size_t i = 0; i < images.size(); ++i)
            if (!(images[i] >= 0.0 && images[i] <= 1.0))
                throw DomainError("dataset pixel outside [0,1]");
    }
};

inline std::vector<double> one_hot(int label, int classes) {
    if (label < 0 || label >= classes)
        throw DomainError("one-hot label " + std::to_string(label) + " outside [0," +
                          std::to_string(classes) + ")");
    std::vector<double> v(static_cast<std::size_t>(classes), 0.0);
    v[static_cast<std::size_t>(label)] = 1.0;
    return v;
}

inline Tensor one_hot_batch(const std::vector<int>& labels, int classes) {
    Tensor t({labels.size(), static_cast<std::size_t>(classes)});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes)
            throw DomainError("one-hot label outside range");
        t(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return t;
}

/// Rows of `index` copied out as a new dataset (images and labels).
inline Dataset subset(const Dataset& ds, const std::vector<std::size_t>& index) {
    const std::size_t ch = ds.images.dim(1), h = ds.images.dim(2), w = ds.images.dim(3);
    const std::size_t stride = ch * h * w;
    Dataset out;
    out.class_count = ds.class_count;
    out.class_names = ds.class_names;
    out.images = Tensor({index.size(), ch, h, w});
    out.labels.resize(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        const std::size_t src = index[i];
        if (src >= ds.size()) throw DomainError("subset index out of range");
        out.labels[i] = ds.labels[src];
        for (std::size_t j = 0; j < stride; ++j)
            out.images[i * stride + j] = ds.images[src * stride + j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// ICRD container: magic "ICRD1", u32 n, classes, channels, H, W (little
// endian), n labels as u8, then n*channels*H*W pixel bytes row-major.
// Pixels map to reals as byte/255.
// ---------------------------------------------------------------------------

inline void save_icrd(const Dataset& ds, const std::string& path) {
    ds.validate();
    if (ds.class_count > 256)
        throw DomainError("ICRD stores u8 labels; class count must be <= 256");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write dataset: " + path);
    os.write("ICRD1", 5);
    const auto put_u32 = [&os](std::uint32_t v) {
        os.write(reinterpret_cast<const char*>(&v), 4);
    };
    put_u32(static_cast<std::uint32_t>(ds.size()));
    put_u32(static_cast<std::uint32_t>(ds.class_count));
    put_u32(static_cast<std::uint32_t>(ds.images.dim(1)));
    put_u32(static_cast<std::uint32_t>(ds.images.dim(2)));
    put_u32(static_cast<std::uint32_t>(ds.images.dim(3)));
    for (int label : ds.labels) {
        const auto byte = static_cast<unsigned char>(label);
        os.write(reinterpret_cast<const char*>(&byte), 1);
    }
    std::vector<unsigned char> pixels(ds.images.size());
    for (std::size_t i = 0; i < ds.images.size(); ++i)
        pixels[i] = static_cast<unsigned char>(std::lround(ds.images[i] * 255.0));
    os.write(reinterpret_cast<const char*>(pixels.data()),
             static_cast<std::streamsize>(pixels.size()));
    if (!os) throw FormatError("write failed: " + path);
}

inline Dataset load_icrd(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot read dataset: " + path);
    char magic[5] = {};
    if (!is.read(magic, 5) || std::string(magic, 5) != "ICRD1")
        throw FormatError("bad ICRD magic at offset 0: " + path);
    std::size_t offset = 5;
    const auto get_u32 = [&](const char* what) {
        std::uint32_t v = 0;
        if (!is.read(reinterpret_cast<char*>(&v), 4))
            throw FormatError(std::string("ICRD truncated reading ") + what + " at offset " +
                              std::to_string(offset));
        offset += 4;
        return v;
    };
    const std::uint32_t n = get_u32("sample count");
    const std::uint32_t classes = get_u32("class count");
    const std::uint32_t channels = get_u32("channel count");
    const std::uint32_t height = get_u32("height");
    const std::uint32_t width = get_u32("width");
    if (n > 0 && (classes == 0 || channels == 0 || height == 0 || width == 0))
        throw FormatError("ICRD header has zero dimensions at offset 5");

    Dataset ds;
    ds.class_count = static_cast<int>(classes);
    ds.labels.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        unsigned char byte = 0;
        if (!is.read(reinterpret_cast<char*>(&byte), 1))
            throw FormatError("ICRD truncated reading labels at offset " + std::to_string(offset));
        if (byte >= classes)
            throw FormatError("ICRD label " + std::to_string(byte) + " >= class count " +
                              std::to_string(classes) + " at offset " + std::to_string(offset));
        ds.labels[i] = static_cast<int>(byte);
        ++offset;
    }
    const std::size_t pixel_count =
        static_cast<std::size_t>(n) * channels * height * width;
    std::vector<unsigned char> pixels(pixel_count);
    if (pixel_count > 0 &&
        !is.read(reinterpret_cast<char*>(pixels.data()),
                 static_cast<std::streamsize>(pixel_count)))
        throw FormatError("ICRD truncated reading pixels at offset " + std::to_string(offset));
    ds.images = Tensor({n, channels, height, width});
    for (std::size_t i = 0; i < pixel_count; ++i)
        ds.images[i] = static_cast<double>(pixels[i]) / 255.0;
    is.peek();
    if (!is.eof())
        throw FormatError("ICRD has trailing bytes at offset " +
                          std::to_string(offset + pixel_count));
    return ds;
}

// ---------------------------------------------------------------------------
// CSV ingestion: one sample per row, label first, then H*W pixel values in
// 0..255. Single channel.
// ---------------------------------------------------------------------------

inline Dataset load_csv_dataset(const std::string& path, int classes, std::size_t height,
                                std::size_t width) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot read dataset: " + path);
    const std::size_t pixels_per_row = height * width;
    std::vector<int> labels;
    std::vector<double> pixels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream row(line);
        std::string cell;
        std::vector<double> values;
        while (std::getline(row, cell, ',')) {
            try {
                std::size_t used = 0;
                const double v = std::stod(cell, &used);
                while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used])))
                    ++used;
                if (used != cell.size()) throw std::invalid_argument(cell);
                values.push_back(v);
            } catch (const std::exception&) {
                throw FormatError("line " + std::to_string(line_no) + ": non-numeric cell '" +
                                  cell + "'");
            }
        }
        if (values.size() != pixels_per_row + 1)
            throw FormatError("line " + std::to_string(line_no) + ": expected " +
                              std::to_string(pixels_per_row + 1) + " fields, got " +
                              std::to_string(values.size()));
        const double label_value = values[0];
        const int label = static_cast<int>(label_value);
        if (label != label_value || label < 0 || label >= classes)
            throw FormatError("line " + std::to_string(line_no) + ": label " +
                              std::to_string(label_value) + " outside [0," +
                              std::to_string(classes) + ")");
        labels.push_back(label);
        for (std::size_t i = 1; i < values.size(); ++i) {
            if (!(values[i] >= 0.0 && values[i] <= 255.0))
                throw FormatError("line " + std::to_string(line_no) + ": pixel value " +
                                  std::to_string(values[i]) + " outside [0,255]");
            pixels.push_back(values[i] / 255.0);
        }
    }
    Dataset ds;
    ds.class_count = classes;
    ds.labels = std::move(labels);
    ds.images = Tensor({ds.labels.size(), 1, height, width}, std::move(pixels));
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic generators. Pure functions of (arguments, seed); pixel values
// land on the byte grid so the ICRD round trip is exact.
// ---------------------------------------------------------------------------

namespace detail {

inline double quantize_byte(double v) { return std::lround(v * 255.0) / 255.0; }

} // namespace detail

/// Gaussian clusters whose class means sit equispaced on the unit circle in
/// the first two coordinates; all values affinely squashed into [0,1].
/// Emitted shape is (n,1,1,dim).
inline Dataset gen_blobs(std::size_t n_per_class, int classes, std::size_t dim, double spread,
                         std::uint64_t seed) {
    if (classes < 2) throw DomainError("blob generator needs at least 2 classes");
    if (dim < 2) throw DomainError("blob generator needs dim >= 2");
    if (spread < 0.0) throw DomainError("blob spread must be non-negative");

    const std::size_t n = n_per_class * static_cast<std::size_t>(classes);
    std::vector<double> raw(n * dim);
    std::vector<int> labels(n);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double two_pi = 6.283185307179586;

    std::size_t row = 0;
    for (int c = 0; c < classes; ++c) {
        const double angle = two_pi * static_cast<double>(c) / static_cast<double>(classes);
        for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
            labels[row] = c;
            for (std::size_t d = 0; d < dim; ++d) {
                const double mean = d == 0 ? std::cos(angle) : d == 1 ? std::sin(angle) : 0.0;
                raw[row * dim + d] = mean + (spread > 0.0 ? spread * noise(rng) : 0.0);
            }
        }
    }

    double lo = raw[0], hi = raw[0];
    for (double v : raw) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double range = hi > lo ? hi - lo : 1.0;
    for (double& v : raw) v = detail::quantize_byte((v - lo) / range);

    Dataset ds;
    ds.class_count = classes;
    ds.labels = std::move(labels);
    ds.images = Tensor({n, 1, 1, dim}, std::move(raw));
    return ds;
}

namespace detail {

// Fixed binary stroke patterns on a unit-agnostic pixel grid; strokes stay
// inside a 2-pixel margin so +-2 shifts never clip them.
inline bool glyph_pixel(int pattern, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
    const auto yy = static_cast<std::ptrdiff_t>(y);
    const auto xx = static_cast<std::ptrdiff_t>(x);
    const auto hh = static_cast<std::ptrdiff_t>(h);
    const auto ww = static_cast<std::ptrdiff_t>(w);
    const std::ptrdiff_t m = 2;                      // margin
    const std::ptrdiff_t cy = hh / 2, cx = ww / 2;   // center
    if (yy < m || yy >= hh - m || xx < m || xx >= ww - m) return false;
    const bool hbar = yy >= cy - 1 && yy <= cy;
    const bool vbar = xx >= cx - 1 && xx <= cx;
    const bool main_diag =
        std::abs((yy - m) - (xx - m) * (hh - 2 * m - 1) / std::max<std::ptrdiff_t>(ww - 2 * m - 1, 1)) <= 1;
    const bool anti_diag =
        std::abs((yy - m) - (ww - 1 - m - xx) * (hh - 2 * m - 1) /
                                std::max<std::ptrdiff_t>(ww - 2 * m - 1, 1)) <= 1;
    const bool top = yy <= m + 1, bottom = yy >= hh - m - 2;
    const bool left = xx <= m + 1, right = xx >= ww - m - 2;
    switch (pattern % 16) {
    case 0: return hbar;
    case 1: return vbar;
    case 2: return main_diag;
    case 3: return anti_diag;
    case 4: return hbar || vbar;
    case 5: return main_diag || anti_diag;
    case 6: return top || bottom || left || right;
    case 7: return std::abs(yy - cy) <= hh / 4 && std::abs(xx - cx) <= ww / 4;
    case 8: return top || vbar;
    case 9: return left || bottom;
    case 10: return left || right || bottom;
    case 11: return left || right || hbar;
    case 12: return top || bottom || anti_diag;
    case 13: return std::abs(std::abs(yy - cy) + std::abs(xx - cx) - hh / 3) <= 1;
    case 14: return ((yy - m) % 4 < 2) && ((xx - m) % 4 < 2);
    default: return top || bottom;
    }
}

} // namespace detail

/// OCR-flavored toy task: `classes` fixed stroke patterns, per-sample random
/// shifts up to +-max_shift pixels and salt-and-pepper noise at the given
/// rate. Binary pixels.
inline Dataset gen_glyphs(std::size_t n_per_class, int classes, std::size_t height,
                          std::size_t width, double noise, std::uint64_t seed,
                          int max_shift = 2) {
    if (classes < 2 || classes > 16) throw DomainError("glyph generator supports 2..16 classes");
    if (height < 8 || width < 8) throw DomainError("glyph canvas must be at least 8x8");
    if (!(noise >= 0.0 && noise <= 1.0)) throw DomainError("glyph noise rate must be in [0,1]");
    if (max_shift < 0) throw DomainError("glyph shift must be non-negative");

    const std::size_t n = n_per_class * static_cast<std::size_t>(classes);
    Tensor images({n, 1, height, width});
    std::vector<int> labels(n);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> shift(-max_shift, max_shift);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::size_t row = 0;
    for (int c = 0; c < classes; ++c)
        for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
            labels[row] = c;
            const int dy = max_shift > 0 ? shift(rng) : 0;
            const int dx = max_shift > 0 ? shift(rng) : 0;
            for (std::size_t y = 0; y < height; ++y)
                for (std::size_t x = 0; x < width; ++x) {
                    const auto sy = static_cast<std::ptrdiff_t>(y) - dy;
                    const auto sx = static_cast<std::ptrdiff_t>(x) - dx;
                    bool on = sy >= 0 && sy < static_cast<std::ptrdiff_t>(height) && sx >= 0 &&
                              sx < static_cast<std::ptrdiff_t>(width) &&
                              detail::glyph_pixel(c, static_cast<std::size_t>(sy),
                                                  static_cast<std::size_t>(sx), height, width);
                    if (noise > 0.0 && unit(rng) < noise) on = unit(rng) < 0.5;
                    images(row, 0, y, x) = on ? 1.0 : 0.0;
                }
        }

    Dataset ds;
    ds.class_count = classes;
    ds.labels = std::move(labels);
    ds.images = std::move(images);
    return ds;
}

} // namespace kafforge
