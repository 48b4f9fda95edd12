#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "dfl/errors.hpp"
#include "dfl/rng.hpp"
#include "dfl/tensor.hpp"

namespace dfl {

struct Dataset {
    Tensor images;             // [N][1][H][W], pixel scale 0..1 before normalization
    std::vector<int> labels;   // values in [0, num_classes)
    int num_classes = 10;

    int count() const { return static_cast<int>(labels.size()); }
    int height() const { return images.dims()[2]; }
    int width() const { return images.dims()[3]; }
};

// Index lists into a parent Dataset plus per-client normalization constants.
// Lists are disjoint as produced by the partitioners; share_data expands them
// (non-disjoint across clients, never duplicated within one client).
struct PartitionPlan {
    int parent_count = 0;
    std::vector<std::vector<int>> client_indices;
    std::vector<double> mu;      // per-client normalization mean
    std::vector<double> sigma;   // per-client normalization std
    double skew_u = 0.0;
    double share_s = 0.0;
    double size_variance = 0.0;

    int num_clients() const { return static_cast<int>(client_indices.size()); }

    bool operator==(const PartitionPlan& o) const {
        return parent_count == o.parent_count && client_indices == o.client_indices && mu == o.mu &&
               sigma == o.sigma;
    }
};

// ---------------------------------------------------------------------------
// IDX container (big-endian): images magic 0x803 then N,H,W and N*H*W bytes;
// labels magic 0x801 then N and N bytes.
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IoError("truncated IDX header in " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | b[3];
}

}  // namespace detail

inline Dataset load_idx(const std::string& image_path, const std::string& label_path) {
    std::ifstream img(image_path, std::ios::binary);
    if (!img) throw IoError("cannot open " + image_path);
    const std::uint32_t img_magic = detail::read_be32(img, image_path);
    if (img_magic != 0x00000803u)
        throw FormatError("bad image magic in " + image_path + " (got " + std::to_string(img_magic) + ")");
    const std::uint32_t n = detail::read_be32(img, image_path);
    const std::uint32_t h = detail::read_be32(img, image_path);
    const std::uint32_t w = detail::read_be32(img, image_path);
    if (n == 0 || h == 0 || w == 0) throw FormatError("empty IDX image file " + image_path);

    std::ifstream lab(label_path, std::ios::binary);
    if (!lab) throw IoError("cannot open " + label_path);
    const std::uint32_t lab_magic = detail::read_be32(lab, label_path);
    if (lab_magic != 0x00000801u)
        throw FormatError("bad label magic in " + label_path + " (got " + std::to_string(lab_magic) + ")");
    const std::uint32_t ln = detail::read_be32(lab, label_path);
    if (ln != n)
        throw DataError("image/label count mismatch: " + std::to_string(n) + " vs " + std::to_string(ln));

    Dataset ds;
    ds.images = Tensor({static_cast<int>(n), 1, static_cast<int>(h), static_cast<int>(w)});
    std::vector<unsigned char> buf(static_cast<std::size_t>(h) * w);
    for (std::uint32_t i = 0; i < n; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!img) throw IoError("truncated image data in " + image_path);
        double* out = ds.images.data() + static_cast<std::size_t>(i) * h * w;
        for (std::size_t p = 0; p < buf.size(); ++p) out[p] = buf[p] / 255.0;
    }
    ds.labels.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        char c;
        lab.read(&c, 1);
        if (!lab) throw IoError("truncated label data in " + label_path);
        ds.labels[i] = static_cast<unsigned char>(c);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic stand-in: a bright Gaussian blob at a class-specific anchor plus
// two dimmer distractor blobs at other classes' anchors, under pixel noise.
// The amplitude contrast keeps it linearly separable (a linear model clears
// 80%) while the distractors stop a conv net from converging in a handful of
// steps.
// ---------------------------------------------------------------------------

inline Dataset synth_dataset(std::uint64_t seed, int n, int classes = 10) {
    if (n < 1) throw ConfigError("synth_dataset: n must be >= 1");
    if (classes < 2 || classes > 10) throw ConfigError("synth_dataset: classes must be in [2,10]");
    if (n < classes) throw ConfigError("synth_dataset: n must be >= classes");
    const int H = 28, W = 28;

    Dataset ds;
    ds.num_classes = classes;
    ds.images = Tensor({n, 1, H, W});
    ds.labels.resize(n);

    // balanced labels in shuffled order
    for (int i = 0; i < n; ++i) ds.labels[i] = i % classes;
    Rng order_rng(derive_seed(seed, 0x5E0));
    order_rng.shuffle(ds.labels);

    const double s2 = 2.0 * 2.2 * 2.2;
    auto anchor_x = [classes](int c) { return 13.5 + 7.5 * std::cos(2.0 * M_PI * c / classes); };
    auto anchor_y = [classes](int c) { return 13.5 + 7.5 * std::sin(2.0 * M_PI * c / classes); };

    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, 0x5E1, static_cast<std::uint64_t>(i)));
        const int c = ds.labels[i];

        struct Blob {
            double cx, cy, amp;
        };
        Blob blobs[3];
        blobs[0] = {anchor_x(c) + rng.uniform(-1.5, 1.5), anchor_y(c) + rng.uniform(-1.5, 1.5),
                    rng.uniform(0.70, 1.0)};
        int d1 = rng.uniform_int(0, classes - 2);
        if (d1 >= c) ++d1;
        int d2 = rng.uniform_int(0, classes - 2);
        if (d2 >= c) ++d2;
        blobs[1] = {anchor_x(d1) + rng.uniform(-1.5, 1.5), anchor_y(d1) + rng.uniform(-1.5, 1.5),
                    rng.uniform(0.25, 0.50)};
        blobs[2] = {anchor_x(d2) + rng.uniform(-1.5, 1.5), anchor_y(d2) + rng.uniform(-1.5, 1.5),
                    rng.uniform(0.25, 0.50)};

        double* img = ds.images.data() + static_cast<std::size_t>(i) * H * W;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                double v = rng.uniform(0.0, 0.15);
                for (const auto& b : blobs) {
                    const double d2v = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy);
                    v += b.amp * std::exp(-d2v / s2);
                }
                img[y * W + x] = std::min(1.0, std::max(0.0, v));
            }
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Partitioners
// ---------------------------------------------------------------------------

inline PartitionPlan partition_iid(const Dataset& ds, int k, std::uint64_t seed) {
    const int n = ds.count();
    if (k < 1) throw ConfigError("partition_iid: K must be >= 1");
    if (k > n) throw ConfigError("partition_iid: K exceeds dataset size");
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, 0x11D));
    rng.shuffle(idx);

    PartitionPlan plan;
    plan.parent_count = n;
    plan.client_indices.resize(k);
    plan.mu.assign(k, 0.0);
    plan.sigma.assign(k, 1.0);
    const int base = n / k;
    const int extra = n % k;
    int pos = 0;
    for (int i = 0; i < k; ++i) {
        const int sz = base + (i < extra ? 1 : 0);
        plan.client_indices[i].assign(idx.begin() + pos, idx.begin() + pos + sz);
        pos += sz;
    }
    return plan;
}

// Size rule behind the Gaussian partitioner. The floor variant assigns
// N_i = max(round(|x_i| N / sum|x_j|), B); the literal variant caps at B
// instead, which collapses every client to at most one batch of data.
inline std::vector<int> gaussian_sizes_from_draws(const std::vector<double>& draws, int n, int batch_floor,
                                                  bool literal_min = false) {
    const int k = static_cast<int>(draws.size());
    double total = 0.0;
    for (double d : draws) total += std::abs(d);
    std::vector<int> sizes(k);
    if (total <= 0.0) {
        for (auto& s : sizes) s = n / k;
        return sizes;
    }
    for (int i = 0; i < k; ++i) {
        const double raw = std::abs(draws[i]) * n / total;
        if (literal_min)
            sizes[i] = static_cast<int>(std::min(std::floor(raw + 0.5), static_cast<double>(batch_floor)));
        else
            sizes[i] = static_cast<int>(std::max(std::floor(raw + 0.5), static_cast<double>(batch_floor)));
    }
    // flooring can overshoot the parent set; shrink the largest parts first
    long long sum = std::accumulate(sizes.begin(), sizes.end(), 0LL);
    while (sum > n) {
        int arg = 0;
        for (int i = 1; i < k; ++i)
            if (sizes[i] > sizes[arg]) arg = i;
        if (sizes[arg] <= batch_floor) break;
        --sizes[arg];
        --sum;
    }
    return sizes;
}

inline PartitionPlan partition_gaussian_sizes(const Dataset& ds, int k, double sigma2, int batch_floor,
                                              std::uint64_t seed, bool literal_min = false) {
    const int n = ds.count();
    if (k < 1) throw ConfigError("partition_gaussian_sizes: K must be >= 1");
    if (static_cast<long long>(k) * batch_floor > n)
        throw ConfigError("partition_gaussian_sizes: K*B exceeds dataset size");
    Rng rng(derive_seed(seed, 0x6A11));

    std::vector<double> draws(k);
    const double sd = std::sqrt(std::max(0.0, sigma2));
    auto all_zero = [&draws] {
        for (double d : draws)
            if (d != 0.0) return false;
        return true;
    };
    for (auto& d : draws) d = rng.normal(0.0, sd);
    if (all_zero()) {  // resample once, then fall back to the equal split
        for (auto& d : draws) d = rng.normal(0.0, sd);
        if (all_zero()) draws.assign(k, 1.0);
    }

    const auto sizes = gaussian_sizes_from_draws(draws, n, batch_floor, literal_min);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);

    PartitionPlan plan;
    plan.parent_count = n;
    plan.size_variance = sigma2;
    plan.client_indices.resize(k);
    plan.mu.assign(k, 0.0);
    plan.sigma.assign(k, 1.0);
    std::size_t pos = 0;
    for (int i = 0; i < k; ++i) {
        const std::size_t sz = static_cast<std::size_t>(sizes[i]);
        if (pos + sz > idx.size()) throw DataError("partition_gaussian_sizes: sizes exceed dataset");
        plan.client_indices[i].assign(idx.begin() + pos, idx.begin() + pos + sz);
        pos += sz;
    }
    return plan;
}

// Label-skewed split: client i holds a fraction U of label-i data, the rest
// drawn uniformly from other labels. Requires K == number of classes. The
// per-client size is capped by the smallest class so every client's own-label
// quota is satisfiable; leftover samples stay unassigned.
inline PartitionPlan partition_skewed(const Dataset& ds, int k, double u, std::uint64_t seed) {
    if (k != ds.num_classes)
        throw ConfigError("partition_skewed: K must equal the number of classes (" +
                          std::to_string(ds.num_classes) + ")");
    if (u < 0.0 || u > 1.0) throw ConfigError("partition_skewed: U must be in [0,1]");
    const int n = ds.count();

    Rng rng(derive_seed(seed, 0x5C3));
    std::vector<std::vector<int>> pools(k);
    for (int i = 0; i < n; ++i) pools[ds.labels[i]].push_back(i);
    std::size_t min_class = pools[0].size();
    for (const auto& p : pools) min_class = std::min(min_class, p.size());
    if (min_class == 0) throw DataError("partition_skewed: a class has no samples");
    for (auto& p : pools) rng.shuffle(p);

    const int size = static_cast<int>(std::min<std::size_t>(n / k, min_class));
    if (size < 1) throw ConfigError("partition_skewed: not enough samples");

    PartitionPlan plan;
    plan.parent_count = n;
    plan.skew_u = u;
    plan.client_indices.resize(k);
    plan.mu.assign(k, 0.0);
    plan.sigma.assign(k, 1.0);

    auto take = [&pools](int c, int count, std::vector<int>& dst) {
        for (int t = 0; t < count; ++t) {
            dst.push_back(pools[c].back());
            pools[c].pop_back();
        }
    };

    const int own = static_cast<int>(std::floor(u * size + 0.5));
    // reserve every client's own-label block first so later draws cannot starve it
    for (int i = 0; i < k; ++i) {
        if (static_cast<int>(pools[i].size()) < own)
            throw DataError("partition_skewed: class " + std::to_string(i) + " has too few samples");
        take(i, own, plan.client_indices[i]);
    }
    // balanced per-class quotas for the non-own remainder; the rotating
    // remainder keeps aggregate class demand within one sample of supply
    const int rest = size - own;
    const int base = rest / (k - 1);
    const int extra = rest % (k - 1);
    std::vector<int> shortfall(k, 0);
    for (int i = 0; i < k; ++i) {
        int slot = 0;
        for (int off = 1; off < k; ++off) {
            const int c = (i + off) % k;
            const int want = base + (slot < extra ? 1 : 0);
            const int got = std::min<int>(want, static_cast<int>(pools[c].size()));
            take(c, got, plan.client_indices[i]);
            shortfall[i] += want - got;
            ++slot;
        }
    }
    // top up any shortfall from whatever non-own samples remain
    for (int i = 0; i < k; ++i) {
        while (shortfall[i] > 0) {
            std::size_t avail = 0;
            for (int c = 0; c < k; ++c)
                if (c != i) avail += pools[c].size();
            if (avail == 0) throw DataError("partition_skewed: ran out of non-label samples");
            std::uint64_t pick = rng.uniform_index(avail);
            for (int c = 0; c < k; ++c) {
                if (c == i) continue;
                if (pick < pools[c].size()) {
                    plan.client_indices[i].push_back(pools[c][pick]);
                    pools[c][pick] = pools[c].back();
                    pools[c].pop_back();
                    break;
                }
                pick -= pools[c].size();
            }
            --shortfall[i];
        }
    }
    return plan;
}

// Pairwise data sharing: each donor j draws round(S*|D_j|) of its samples and
// splits them evenly across the other K-1 clients (remainder to the
// lowest-indexed recipients). Donors keep their samples; sharing is copying.
inline PartitionPlan share_data(const PartitionPlan& plan, double s, std::uint64_t seed) {
    if (s < 0.0 || s > 1.0) throw ConfigError("share_data: S must be in [0,1]");
    PartitionPlan out = plan;
    out.share_s = s;
    if (s == 0.0 || plan.num_clients() < 2) return out;

    const int k = plan.num_clients();
    for (int donor = 0; donor < k; ++donor) {
        Rng rng(derive_seed(seed, 0x5A2, static_cast<std::uint64_t>(donor)));
        const auto& src = plan.client_indices[donor];
        const int n_share = static_cast<int>(std::floor(s * static_cast<double>(src.size()) + 0.5));
        if (n_share == 0) continue;
        auto order = rng.sample_without_replacement(static_cast<int>(src.size()), n_share);

        const int base = n_share / (k - 1);
        const int extra = n_share % (k - 1);
        int pos = 0;
        int slot = 0;  // recipient rank among the k-1 non-donors
        for (int rec = 0; rec < k; ++rec) {
            if (rec == donor) continue;
            const int take = base + (slot < extra ? 1 : 0);
            for (int t = 0; t < take; ++t) out.client_indices[rec].push_back(src[order[pos++]]);
            ++slot;
        }
    }
    return out;
}

// Expected post-sharing skewedness. Mean over clients of
//   (U(K-1) + S(U-1)) / ((1+S)(K-1)) + S(1-U)/((1+S)(K-1)) * |D|/|D_i|.
// The prediction is exact at U=1 (donors hold no foreign own-label data).
inline double expected_skewedness(double u, double s, int k, const std::vector<double>& sizes) {
    if (k < 2) throw ConfigError("expected_skewedness: K must be >= 2");
    if (static_cast<int>(sizes.size()) != k) throw ConfigError("expected_skewedness: sizes must have K entries");
    const double total = std::accumulate(sizes.begin(), sizes.end(), 0.0);
    double acc = 0.0;
    for (int i = 0; i < k; ++i) {
        const double t1 = (u * (k - 1) + s * (u - 1.0)) / ((1.0 + s) * (k - 1));
        const double t2 = s * (1.0 - u) / ((1.0 + s) * (k - 1)) * (total / sizes[i]);
        acc += t1 + t2;
    }
    return acc / k;
}

// Fraction of client i's list holding label i.
inline double measured_skewedness(const Dataset& ds, const PartitionPlan& plan, int client) {
    const auto& idx = plan.client_indices.at(client);
    if (idx.empty()) return 0.0;
    std::size_t own = 0;
    for (int i : idx)
        if (ds.labels[i] == client) ++own;
    return static_cast<double>(own) / static_cast<double>(idx.size());
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

inline double dataset_mean(const Dataset& ds) {
    double acc = 0.0;
    for (std::size_t i = 0; i < ds.images.size(); ++i) acc += ds.images[i];
    return acc / static_cast<double>(ds.images.size());
}

inline double dataset_std(const Dataset& ds) {
    const double mean = dataset_mean(ds);
    double acc = 0.0;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        const double d = ds.images[i] - mean;
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(ds.images.size()));
}

inline double client_pixel_mean(const Dataset& ds, const std::vector<int>& indices) {
    if (indices.empty()) return 0.0;
    const std::size_t px = static_cast<std::size_t>(ds.height()) * ds.width();
    double acc = 0.0;
    for (int i : indices) {
        const double* img = ds.images.data() + static_cast<std::size_t>(i) * px;
        for (std::size_t p = 0; p < px; ++p) acc += img[p];
    }
    return acc / (static_cast<double>(indices.size()) * static_cast<double>(px));
}

// Stores per-client normalization; pixels are transformed lazily at batch
// assembly, the raw dataset is never modified.
inline void apply_normalization(PartitionPlan& plan, const std::vector<double>& client_means, double stddev) {
    if (static_cast<int>(client_means.size()) != plan.num_clients())
        throw ConfigError("apply_normalization: need one mean per client");
    if (stddev == 0.0) throw ConfigError("apply_normalization: std must be nonzero");
    for (double m : client_means)
        if (!std::isfinite(m)) throw ConfigError("apply_normalization: means must be finite");
    plan.mu = client_means;
    plan.sigma.assign(plan.num_clients(), stddev);
}

// Normalized batch view: rows picked by `positions` into the client list.
inline Tensor gather_images(const Dataset& ds, const std::vector<int>& indices, const std::vector<int>& positions,
                            double mu, double sigma) {
    const int h = ds.height(), w = ds.width();
    Tensor out({static_cast<int>(positions.size()), 1, h, w});
    const std::size_t px = static_cast<std::size_t>(h) * w;
    for (std::size_t r = 0; r < positions.size(); ++r) {
        const double* src = ds.images.data() + static_cast<std::size_t>(indices[positions[r]]) * px;
        double* dst = out.data() + r * px;
        for (std::size_t p = 0; p < px; ++p) dst[p] = (src[p] - mu) / sigma;
    }
    return out;
}

inline std::vector<int> gather_labels(const Dataset& ds, const std::vector<int>& indices,
                                      const std::vector<int>& positions) {
    std::vector<int> out(positions.size());
    for (std::size_t r = 0; r < positions.size(); ++r) out[r] = ds.labels[indices[positions[r]]];
    return out;
}

}  // namespace dfl
