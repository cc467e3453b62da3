#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "gramlab/matrix.hpp"
#include "gramlab/nn.hpp"  // BadMagic / TruncatedFile / CountMismatch, write_le helpers
#include "gramlab/rng.hpp"

namespace gramlab {

struct DatasetMeta {
    std::string name;
    std::size_t classes = 0;   // 0 for regression
    bool centered = false;
    std::uint64_t seed = 0;
    bool standardized = false;
};

struct Dataset {
    Matrix x;                  // d x N
    Matrix y;                  // N x C (N x 1 for regression)
    std::vector<int> labels;   // raw class ids when classification, else empty
    DatasetMeta meta;
    std::size_t size() const { return x.cols(); }
};

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

/// 2-D Swiss roll: x = (t cos t, t sin t)/scale + noise, t ~ U[1.5pi, 4.5pi],
/// target = t standardized. At sigma = 0 the points sit exactly on the spiral.
inline Dataset swiss_roll(std::size_t n, double sigma, std::uint64_t seed) {
    SplitMix64 rng(seed);
    Dataset ds;
    ds.meta = {"swiss_roll", 0, false, seed, false};
    ds.x = Matrix(2, n);
    ds.y = Matrix(n, 1);
    const double lo = 1.5 * std::numbers::pi, hi = 4.5 * std::numbers::pi;
    const double scale = hi;  // keeps coordinates O(1)
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) {
        t[i] = lo + (hi - lo) * rng.next_uniform();
        ds.x(0, i) = t[i] * std::cos(t[i]) / scale;
        ds.x(1, i) = t[i] * std::sin(t[i]) / scale;
    }
    if (sigma > 0.0)
        for (std::size_t i = 0; i < ds.x.size(); ++i) ds.x.raw()[i] += sigma * rng.next_gaussian();
    double mean = 0.0;
    for (double v : t) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : t) var += (v - mean) * (v - mean);
    double sd = std::sqrt(var / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) ds.y(i, 0) = (t[i] - mean) / sd;
    return ds;
}

/// Gaussian inputs with the staircase target y = x1x2x3x4 + x1x2x3 + x1x2 + x1.
inline Dataset staircase(std::size_t n, std::size_t d, std::uint64_t seed) {
    if (d < 4) throw ShapeMismatch("staircase: d >= 4 required");
    SplitMix64 rng(seed);
    Dataset ds;
    ds.meta = {"staircase", 0, false, seed, false};
    ds.x = Matrix(d, n);
    ds.y = Matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t r = 0; r < d; ++r) ds.x(r, i) = rng.next_gaussian();
        double x1 = ds.x(0, i), x2 = ds.x(1, i), x3 = ds.x(2, i), x4 = ds.x(3, i);
        ds.y(i, 0) = x1 * x2 * x3 * x4 + x1 * x2 * x3 + x1 * x2 + x1;
    }
    return ds;
}

/// Modular addition over Z_p: inputs are the concatenated one-hots of (a, b),
/// labels the centered one-hot of (a + b) mod p. All p^2 pairs, split by a
/// shuffled index into disjoint, exhaustive train/test parts.
inline std::pair<Dataset, Dataset> mod_add(std::size_t p, double train_frac, std::uint64_t seed) {
    if (p < 2) throw ShapeMismatch("mod_add: p >= 2 required");
    if (train_frac <= 0.0 || train_frac >= 1.0)
        throw ShapeMismatch("mod_add: train_frac must be in (0, 1)");
    const std::size_t total = p * p;
    std::vector<std::size_t> order(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = i;
    SplitMix64 rng(seed);
    for (std::size_t i = total; i-- > 1;) std::swap(order[i], order[rng.next_below(i + 1)]);

    const std::size_t n_train = static_cast<std::size_t>(train_frac * static_cast<double>(total));
    auto build = [&](std::size_t begin, std::size_t end, const char* tag) {
        Dataset ds;
        std::size_t n = end - begin;
        ds.meta = {std::string("mod_add_") + tag, p, true, seed, false};
        ds.x = Matrix(2 * p, n);
        ds.y = Matrix(n, p);
        ds.labels.resize(n);
        const double on = 1.0 - 1.0 / static_cast<double>(p);
        const double off = -1.0 / static_cast<double>(p);
        for (std::size_t k = begin; k < end; ++k) {
            std::size_t idx = order[k], col = k - begin;
            std::size_t a = idx / p, b = idx % p;
            ds.x(a, col) = 1.0;
            ds.x(p + b, col) = 1.0;
            int label = static_cast<int>((a + b) % p);
            ds.labels[col] = label;
            for (std::size_t c = 0; c < p; ++c) ds.y(col, c) = (static_cast<int>(c) == label) ? on : off;
        }
        return ds;
    };
    return {build(0, n_train, "train"), build(n_train, total, "test")};
}

// ---------------------------------------------------------------------------
// Binary loaders (IDX / CIFAR)
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const char* what) {
    std::array<unsigned char, 4> b{};
    in.read(reinterpret_cast<char*>(b.data()), 4);
    if (!in) throw TruncatedFile(std::string("truncated while reading ") + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

/// Big-endian IDX pair (u8 image tensor + u8 label vector), pixels scaled to
/// [0,1], flattened to rows*cols x N. Labels are returned raw; callers center.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::size_t limit = 0) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw TruncatedFile("cannot open " + images_path);
    if (detail::read_be32(fi, "image magic") != 0x00000803u)
        throw BadMagic("bad IDX image magic in " + images_path);
    std::uint32_t n = detail::read_be32(fi, "image count");
    std::uint32_t rows = detail::read_be32(fi, "image rows");
    std::uint32_t cols = detail::read_be32(fi, "image cols");

    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw TruncatedFile("cannot open " + labels_path);
    if (detail::read_be32(fl, "label magic") != 0x00000801u)
        throw BadMagic("bad IDX label magic in " + labels_path);
    std::uint32_t nl = detail::read_be32(fl, "label count");
    if (nl != n) throw CountMismatch("IDX image/label counts differ");

    std::size_t take = (limit > 0 && limit < n) ? limit : n;
    const std::size_t d = static_cast<std::size_t>(rows) * cols;
    Dataset ds;
    ds.meta = {"idx", 10, false, 0, false};
    ds.x = Matrix(d, take);
    ds.labels.resize(take);
    std::vector<unsigned char> buf(d);
    for (std::size_t i = 0; i < take; ++i) {
        fi.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(d));
        if (!fi) throw TruncatedFile("truncated image data in " + images_path);
        for (std::size_t r = 0; r < d; ++r) ds.x(r, i) = buf[r] / 255.0;
        char lb;
        fl.read(&lb, 1);
        if (!fl) throw TruncatedFile("truncated label data in " + labels_path);
        ds.labels[i] = static_cast<unsigned char>(lb);
    }
    int cmax = 0;
    for (int l : ds.labels) cmax = std::max(cmax, l);
    ds.meta.classes = static_cast<std::size_t>(cmax) + 1;
    return ds;
}

/// CIFAR binary records: 3073 bytes (label + 3072 pixels) or 3074 bytes
/// (coarse + fine label + pixels; fine label is used). Pixels scaled to [0,1].
inline Dataset load_cifar_binary(const std::vector<std::string>& paths, bool cifar100 = false,
                                 std::size_t limit = 0) {
    const std::size_t pix = 3072;
    const std::size_t rec = cifar100 ? 3074 : 3073;
    Dataset ds;
    ds.meta = {cifar100 ? "cifar100" : "cifar10", cifar100 ? 100u : 10u, false, 0, false};

    std::vector<std::vector<unsigned char>> records;
    for (const auto& path : paths) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw TruncatedFile("cannot open " + path);
        f.seekg(0, std::ios::end);
        std::size_t bytes = static_cast<std::size_t>(f.tellg());
        f.seekg(0);
        if (bytes % rec != 0) throw TruncatedFile("file size not a record multiple: " + path);
        std::size_t count = bytes / rec;
        for (std::size_t i = 0; i < count; ++i) {
            std::vector<unsigned char> r(rec);
            f.read(reinterpret_cast<char*>(r.data()), static_cast<std::streamsize>(rec));
            if (!f) throw TruncatedFile("truncated record in " + path);
            records.push_back(std::move(r));
            if (limit > 0 && records.size() >= limit) break;
        }
        if (limit > 0 && records.size() >= limit) break;
    }
    const std::size_t n = records.size();
    ds.x = Matrix(pix, n);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        int label = cifar100 ? records[i][1] : records[i][0];
        if (static_cast<std::size_t>(label) >= ds.meta.classes)
            throw CountMismatch("CIFAR label out of range");
        ds.labels[i] = label;
        const std::size_t off = rec - pix;
        for (std::size_t r = 0; r < pix; ++r) ds.x(r, i) = records[i][off + r] / 255.0;
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Label / feature transforms
// ---------------------------------------------------------------------------

/// Centered one-hot rows: 1 - 1/C at the label, -1/C elsewhere; rows sum to 0.
inline Matrix one_hot_centered(const std::vector<int>& labels, std::size_t classes) {
    Matrix y(labels.size(), classes);
    const double on = 1.0 - 1.0 / static_cast<double>(classes);
    const double off = -1.0 / static_cast<double>(classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
            throw CountMismatch("one_hot_centered: label out of range");
        for (std::size_t c = 0; c < classes; ++c)
            y(i, c) = (c == static_cast<std::size_t>(labels[i])) ? on : off;
    }
    return y;
}

/// Plain one-hot rows (softmax-cross-entropy targets).
inline Matrix one_hot(const std::vector<int>& labels, std::size_t classes) {
    Matrix y(labels.size(), classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
            throw CountMismatch("one_hot: label out of range");
        y(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return y;
}

/// Resamples a Bernoulli(p) subset of labels uniformly over the class set.
inline Dataset corrupt_labels(const Dataset& ds, double p, std::uint64_t seed) {
    if (p < 0.0 || p > 1.0) throw ShapeMismatch("corrupt_labels: p must lie in [0, 1]");
    if (ds.meta.classes < 2) throw DegenerateLabels("corrupt_labels: classification dataset required");
    Dataset out = ds;
    SplitMix64 rng(seed);
    for (std::size_t i = 0; i < out.labels.size(); ++i)
        if (rng.next_uniform() < p)
            out.labels[i] = static_cast<int>(rng.next_below(ds.meta.classes));
    if (out.y.rows() == out.labels.size() && out.y.cols() == ds.meta.classes)
        out.y = ds.meta.centered ? one_hot_centered(out.labels, ds.meta.classes)
                                 : one_hot(out.labels, ds.meta.classes);
    return out;
}

struct StandardizeStats {
    std::vector<double> mean, std;
};

/// Per-feature mean 0 / std 1; features with std < 1e-12 are centered only.
inline StandardizeStats standardize(Matrix& x) {
    const std::size_t d = x.rows(), n = x.cols();
    StandardizeStats st;
    st.mean.resize(d);
    st.std.resize(d);
    for (std::size_t r = 0; r < d; ++r) {
        double m = 0.0;
        for (std::size_t c = 0; c < n; ++c) m += x(r, c);
        m /= static_cast<double>(n);
        double v = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            double dv = x(r, c) - m;
            v += dv * dv;
        }
        double sd = std::sqrt(v / static_cast<double>(n));
        st.mean[r] = m;
        st.std[r] = sd;
        double inv = sd < 1e-12 ? 1.0 : 1.0 / sd;
        for (std::size_t c = 0; c < n; ++c) x(r, c) = (x(r, c) - m) * inv;
    }
    return st;
}

inline void unstandardize(Matrix& x, const StandardizeStats& st) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double sd = st.std[r] < 1e-12 ? 1.0 : st.std[r];
        for (std::size_t c = 0; c < x.cols(); ++c) x(r, c) = x(r, c) * sd + st.mean[r];
    }
}

/// Seeded subsample without replacement (class-agnostic).
inline Dataset subsample(const Dataset& ds, std::size_t n, std::uint64_t seed) {
    if (n > ds.size()) throw CountMismatch("subsample: n exceeds dataset size");
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SplitMix64 rng(seed);
    for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[rng.next_below(i + 1)]);
    Dataset out;
    out.meta = ds.meta;
    out.x = Matrix(ds.x.rows(), n);
    if (!ds.labels.empty()) out.labels.resize(n);
    bool has_y = ds.y.rows() == ds.size();
    if (has_y) out.y = Matrix(n, ds.y.cols());
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t src = order[i];
        for (std::size_t r = 0; r < ds.x.rows(); ++r) out.x(r, i) = ds.x(r, src);
        if (!ds.labels.empty()) out.labels[i] = ds.labels[src];
        if (has_y)
            for (std::size_t c = 0; c < ds.y.cols(); ++c) out.y(i, c) = ds.y(src, c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// IDX / CIFAR writers + synthetic stand-in image sets
// ---------------------------------------------------------------------------

inline void write_idx(const std::string& images_path, const std::string& labels_path,
                      const Matrix& x01, const std::vector<int>& labels, std::uint32_t rows,
                      std::uint32_t cols) {
    const std::size_t n = x01.cols();
    std::ofstream fi(images_path, std::ios::binary);
    detail::write_be32(fi, 0x00000803u);
    detail::write_be32(fi, static_cast<std::uint32_t>(n));
    detail::write_be32(fi, rows);
    detail::write_be32(fi, cols);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < x01.rows(); ++r) {
            double v = std::clamp(x01(r, i), 0.0, 1.0);
            unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0));
            fi.write(reinterpret_cast<const char*>(&b), 1);
        }
    std::ofstream fl(labels_path, std::ios::binary);
    detail::write_be32(fl, 0x00000801u);
    detail::write_be32(fl, static_cast<std::uint32_t>(n));
    for (int l : labels) {
        unsigned char b = static_cast<unsigned char>(l);
        fl.write(reinterpret_cast<const char*>(&b), 1);
    }
}

inline void write_cifar_binary(const std::string& path, const Matrix& x01,
                               const std::vector<int>& labels, bool cifar100 = false) {
    std::ofstream f(path, std::ios::binary);
    for (std::size_t i = 0; i < x01.cols(); ++i) {
        unsigned char lb = static_cast<unsigned char>(labels[i]);
        if (cifar100) {
            unsigned char coarse = 0;
            f.write(reinterpret_cast<const char*>(&coarse), 1);
        }
        f.write(reinterpret_cast<const char*>(&lb), 1);
        for (std::size_t r = 0; r < x01.rows(); ++r) {
            double v = std::clamp(x01(r, i), 0.0, 1.0);
            unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0));
            f.write(reinterpret_cast<const char*>(&b), 1);
        }
    }
}

/// Class-structured synthetic image set in [0,1]^d: each class gets a smooth
/// prototype (random low-frequency cosine mix), samples are prototype + noise.
/// Used to stand in for MNIST/CIFAR when the real binaries are absent.
/// `nuisance` adds a per-sample random cosine pair of that amplitude — smooth
/// within-class variation sharing the prototypes' frequency band, which caps
/// linear separability the way natural-image nuisance variation does.
/// The class signal is windowed toward the middle coordinates (objects are
/// centered; margins are mostly background), so per-coordinate relevance
/// varies strongly across the image as it does in natural photos.
inline Dataset synthetic_images(std::size_t n, std::size_t d, std::size_t classes, double noise,
                                std::uint64_t seed, double nuisance = 0.0) {
    SplitMix64 rng(seed);
    Dataset ds;
    ds.meta = {"synthetic_images", classes, false, seed, false};
    ds.x = Matrix(d, n);
    ds.labels.resize(n);
    Matrix proto(d, classes);
    for (std::size_t c = 0; c < classes; ++c) {
        // three low-frequency cosines per class, amplitudes in [0.1, 0.3]
        double f1 = 1.0 + 3.0 * rng.next_uniform(), f2 = 1.0 + 3.0 * rng.next_uniform();
        double p1 = 6.28 * rng.next_uniform(), p2 = 6.28 * rng.next_uniform();
        double a1 = 0.1 + 0.2 * rng.next_uniform(), a2 = 0.1 + 0.2 * rng.next_uniform();
        for (std::size_t r = 0; r < d; ++r) {
            double t = static_cast<double>(r) / static_cast<double>(d);
            double window = 0.1 + 0.9 * std::exp(-(t - 0.5) * (t - 0.5) / (2.0 * 0.15 * 0.15));
            proto(r, c) = 0.45 + window * (a1 * std::cos(6.28 * f1 * t + p1) +
                                           a2 * std::cos(6.28 * f2 * t + p2));
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        int c = static_cast<int>(i % classes);
        ds.labels[i] = c;
        double g1 = 0.0, g2 = 0.0, q1 = 0.0, q2 = 0.0;
        if (nuisance > 0.0) {
            // same frequency band as the prototypes: irreducible class
            // overlap that caps attainable accuracy well below 100%
            g1 = 1.0 + 3.0 * rng.next_uniform();
            g2 = 1.0 + 3.0 * rng.next_uniform();
            q1 = 6.28 * rng.next_uniform();
            q2 = 6.28 * rng.next_uniform();
        }
        for (std::size_t r = 0; r < d; ++r) {
            double v = proto(r, static_cast<std::size_t>(c)) + noise * rng.next_gaussian();
            if (nuisance > 0.0) {
                double t = static_cast<double>(r) / static_cast<double>(d);
                v += nuisance * (std::cos(6.28 * g1 * t + q1) + std::cos(6.28 * g2 * t + q2));
            }
            ds.x(r, i) = std::clamp(v, 0.0, 1.0);
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Activation / target dump files (probe input)
// ---------------------------------------------------------------------------
// "GRMH": magic, u16 version, u16 layer count, then per layer u32 rows, u32
// cols, f64 LE row-major. "GRMY": magic, u16 version, u32 rows, u32 cols, f64.

inline void save_activation_dump(const std::string& path, const std::vector<Matrix>& layers) {
    std::ofstream f(path, std::ios::binary);
    f.write("GRMH", 4);
    detail::write_le<std::uint16_t>(f, 1);
    detail::write_le<std::uint16_t>(f, static_cast<std::uint16_t>(layers.size()));
    for (const Matrix& m : layers) {
        detail::write_le<std::uint32_t>(f, static_cast<std::uint32_t>(m.rows()));
        detail::write_le<std::uint32_t>(f, static_cast<std::uint32_t>(m.cols()));
        for (std::size_t i = 0; i < m.size(); ++i) detail::write_le<double>(f, m.data()[i]);
    }
}

inline std::vector<Matrix> load_activation_dump(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw TruncatedFile("cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != "GRMH") throw BadMagic("bad activation-dump magic: " + path);
    detail::read_le<std::uint16_t>(f);  // version
    std::uint16_t count = detail::read_le<std::uint16_t>(f);
    if (!f) throw TruncatedFile("truncated activation dump header: " + path);
    std::vector<Matrix> out;
    for (std::uint16_t l = 0; l < count; ++l) {
        std::uint32_t r = detail::read_le<std::uint32_t>(f);
        std::uint32_t c = detail::read_le<std::uint32_t>(f);
        if (!f) throw TruncatedFile("truncated activation dump: " + path);
        Matrix m(r, c);
        for (std::size_t i = 0; i < m.size(); ++i) m.raw()[i] = detail::read_le<double>(f);
        if (!f) throw TruncatedFile("truncated activation dump: " + path);
        out.push_back(std::move(m));
    }
    return out;
}

inline void save_target_dump(const std::string& path, const Matrix& y) {
    std::ofstream f(path, std::ios::binary);
    f.write("GRMY", 4);
    detail::write_le<std::uint16_t>(f, 1);
    detail::write_le<std::uint32_t>(f, static_cast<std::uint32_t>(y.rows()));
    detail::write_le<std::uint32_t>(f, static_cast<std::uint32_t>(y.cols()));
    for (std::size_t i = 0; i < y.size(); ++i) detail::write_le<double>(f, y.data()[i]);
}

inline Matrix load_target_dump(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw TruncatedFile("cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != "GRMY") throw BadMagic("bad target-dump magic: " + path);
    detail::read_le<std::uint16_t>(f);
    std::uint32_t r = detail::read_le<std::uint32_t>(f);
    std::uint32_t c = detail::read_le<std::uint32_t>(f);
    if (!f) throw TruncatedFile("truncated target dump header: " + path);
    Matrix y(r, c);
    for (std::size_t i = 0; i < y.size(); ++i) y.raw()[i] = detail::read_le<double>(f);
    if (!f) throw TruncatedFile("truncated target dump: " + path);
    return y;
}

}  // namespace gramlab
