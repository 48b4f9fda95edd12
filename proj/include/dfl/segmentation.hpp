#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "dfl/errors.hpp"
#include "dfl/model.hpp"
#include "dfl/rng.hpp"

namespace dfl {

enum class SegmentUnit { Layer, OutChannel, InChannel, Kernel };

inline const char* to_string(SegmentUnit u) {
    switch (u) {
        case SegmentUnit::Layer: return "layer";
        case SegmentUnit::OutChannel: return "out_channel";
        case SegmentUnit::InChannel: return "in_channel";
        case SegmentUnit::Kernel: return "kernel";
    }
    return "?";
}

inline SegmentUnit segment_unit_from_string(const std::string& s) {
    if (s == "layer") return SegmentUnit::Layer;
    if (s == "out_channel") return SegmentUnit::OutChannel;
    if (s == "in_channel") return SegmentUnit::InChannel;
    if (s == "kernel") return SegmentUnit::Kernel;
    throw ConfigError("unknown segment unit '" + s + "'");
}

// (layer, channel) identifier; layer is 1-based to match the notation used
// throughout. For kernel units the channel flattens (c_in, c_out) as
// c_in * C_out + c_out; for layer units the channel is 0.
struct SegmentId {
    int layer = 1;
    int channel = 0;
    SegmentUnit unit = SegmentUnit::OutChannel;

    auto operator<=>(const SegmentId&) const = default;
};

enum class SelectPolicy { FixedPerClient, PerEpoch, SharedAcrossClients };

inline const char* to_string(SelectPolicy p) {
    switch (p) {
        case SelectPolicy::FixedPerClient: return "fixed-per-client";
        case SelectPolicy::PerEpoch: return "per-epoch";
        case SelectPolicy::SharedAcrossClients: return "shared-across-clients";
    }
    return "?";
}

struct SegmentIndexSet {
    int owner = 0;
    int epoch = 0;
    std::vector<SegmentId> segments;  // sorted, duplicate-free

    bool contains(const SegmentId& id) const {
        return std::binary_search(segments.begin(), segments.end(), id);
    }
    bool operator==(const SegmentIndexSet& o) const { return segments == o.segments; }
};

// Complete, duplicate-free enumeration ordered by (layer, channel).
inline std::vector<SegmentId> enumerate_segments(const Architecture& arch, SegmentUnit unit) {
    arch.validate();
    std::vector<SegmentId> out;
    for (int li = 0; li < arch.num_layers(); ++li) {
        const auto& spec = arch.layers[li];
        int count = 0;
        switch (unit) {
            case SegmentUnit::Layer: count = 1; break;
            case SegmentUnit::OutChannel: count = spec.out_channels(); break;
            case SegmentUnit::InChannel: count = spec.in_channels(); break;
            case SegmentUnit::Kernel: count = spec.in_channels() * spec.out_channels(); break;
        }
        for (int c = 0; c < count; ++c) out.push_back({li + 1, c, unit});
    }
    return out;
}

// Layer-local flat entry indices addressed by a segment (see
// LayerParams::entry for the addressing: weights first, then bias).
// Out-channel segments carry their bias scalar and layer segments the whole
// bias vector, so out-channel segments partition every parameter exactly once.
inline std::vector<std::size_t> segment_entries(const Architecture& arch, const SegmentId& id) {
    if (id.layer < 1 || id.layer > arch.num_layers()) throw ShapeError("segment layer out of range");
    const auto& spec = arch.layers[id.layer - 1];
    const std::size_t w_count = spec.weight_count();
    std::vector<std::size_t> entries;

    auto check_channel = [&](int limit) {
        if (id.channel < 0 || id.channel >= limit) throw ShapeError("segment channel out of range");
    };

    switch (id.unit) {
        case SegmentUnit::Layer: {
            check_channel(1);
            entries.resize(spec.param_count());
            for (std::size_t e = 0; e < entries.size(); ++e) entries[e] = e;
            break;
        }
        case SegmentUnit::OutChannel: {
            check_channel(spec.out_channels());
            if (spec.is_conv()) {
                const auto& cs = spec.conv();
                const std::size_t per_oc = static_cast<std::size_t>(cs.in_channels) * cs.kernel_h * cs.kernel_w;
                const std::size_t start = static_cast<std::size_t>(id.channel) * per_oc;
                for (std::size_t e = 0; e < per_oc; ++e) entries.push_back(start + e);
            } else {
                const auto& d = spec.dense();
                for (int i = 0; i < d.in_dim; ++i)
                    entries.push_back(static_cast<std::size_t>(i) * d.out_dim + id.channel);
            }
            entries.push_back(w_count + static_cast<std::size_t>(id.channel));  // the bias scalar
            break;
        }
        case SegmentUnit::InChannel: {
            check_channel(spec.in_channels());
            if (spec.is_conv()) {
                const auto& cs = spec.conv();
                const std::size_t k = static_cast<std::size_t>(cs.kernel_h) * cs.kernel_w;
                for (int oc = 0; oc < cs.out_channels; ++oc) {
                    const std::size_t start = (static_cast<std::size_t>(oc) * cs.in_channels + id.channel) * k;
                    for (std::size_t e = 0; e < k; ++e) entries.push_back(start + e);
                }
            } else {
                const auto& d = spec.dense();
                const std::size_t start = static_cast<std::size_t>(id.channel) * d.out_dim;
                for (int o = 0; o < d.out_dim; ++o) entries.push_back(start + o);
            }
            break;
        }
        case SegmentUnit::Kernel: {
            check_channel(spec.in_channels() * spec.out_channels());
            const int c_out = spec.out_channels();
            const int ic = id.channel / c_out;
            const int oc = id.channel % c_out;
            if (spec.is_conv()) {
                const auto& cs = spec.conv();
                const std::size_t k = static_cast<std::size_t>(cs.kernel_h) * cs.kernel_w;
                const std::size_t start = (static_cast<std::size_t>(oc) * cs.in_channels + ic) * k;
                for (std::size_t e = 0; e < k; ++e) entries.push_back(start + e);
            } else {
                entries.push_back(static_cast<std::size_t>(ic) * spec.dense().out_dim + oc);
            }
            break;
        }
    }
    return entries;
}

inline std::size_t segment_param_count(const Architecture& arch, const SegmentId& id) {
    return segment_entries(arch, id).size();
}

// Uniform sample without replacement over ALL layers' segments jointly (no
// per-layer quota), of size round(PSS * total). The policy picks the stream:
//   fixed-per-client      (seed, client)          identical every epoch
//   per-epoch             (seed, client, epoch)   regenerated each epoch
//   shared-across-clients (seed)                  one set for everyone
inline SegmentIndexSet select_segments(const Architecture& arch, SegmentUnit unit, double pss,
                                       std::uint64_t seed, SelectPolicy policy, int client = 0, int epoch = 0) {
    if (pss <= 0.0 || pss > 1.0) throw ConfigError("PSS must be in (0,1]");
    const auto all = enumerate_segments(arch, unit);
    const int total = static_cast<int>(all.size());
    int want = static_cast<int>(std::floor(pss * total + 0.5));
    want = std::max(1, std::min(want, total));

    std::uint64_t key = 0;
    switch (policy) {
        case SelectPolicy::FixedPerClient: key = derive_seed(seed, 0x5E6, static_cast<std::uint64_t>(client)); break;
        case SelectPolicy::PerEpoch:
            key = derive_seed(seed, 0x5E7, static_cast<std::uint64_t>(client), static_cast<std::uint64_t>(epoch));
            break;
        case SelectPolicy::SharedAcrossClients: key = derive_seed(seed, 0x5E8); break;
    }
    Rng rng(key);
    auto picks = rng.sample_without_replacement(total, want);
    std::sort(picks.begin(), picks.end());

    SegmentIndexSet out;
    out.owner = client;
    out.epoch = epoch;
    out.segments.reserve(picks.size());
    for (int p : picks) out.segments.push_back(all[p]);
    return out;
}

inline std::vector<double> extract_segment(const ModelParams& params, const Architecture& arch,
                                           const SegmentId& id) {
    const auto entries = segment_entries(arch, id);
    const auto& lp = params.layers.at(id.layer - 1);
    std::vector<double> values(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) values[i] = lp.entry(entries[i]);
    return values;
}

inline void apply_segment(ModelParams& params, const Architecture& arch, const SegmentId& id,
                          const std::vector<double>& values) {
    const auto entries = segment_entries(arch, id);
    if (values.size() != entries.size()) throw ShapeError("segment value count mismatch");
    auto& lp = params.layers.at(id.layer - 1);
    for (std::size_t i = 0; i < entries.size(); ++i) lp.entry(entries[i]) = values[i];
}

// l2 norm of the parameter difference restricted to one segment.
inline double segment_distance(const ModelParams& a, const ModelParams& b, const Architecture& arch,
                               const SegmentId& id) {
    if (!a.same_shape(b)) throw ShapeError("segment_distance: architecture mismatch");
    const auto entries = segment_entries(arch, id);
    const auto& la = a.layers[id.layer - 1];
    const auto& lb = b.layers[id.layer - 1];
    double sq = 0.0;
    for (std::size_t e : entries) {
        const double d = la.entry(e) - lb.entry(e);
        sq += d * d;
    }
    return std::sqrt(sq);
}

}  // namespace dfl
