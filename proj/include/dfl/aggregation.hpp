#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dfl/errors.hpp"
#include "dfl/model.hpp"
#include "dfl/rng.hpp"
#include "dfl/segmentation.hpp"
#include "dfl/topology.hpp"

namespace dfl {

// ---------------------------------------------------------------------------
// Whole-model consensus and averaging
// ---------------------------------------------------------------------------

namespace detail {

// Mixing weight that keeps I - alpha*L row-stochastic with positive diagonal,
// hence stable on any undirected graph; symmetric, so the centroid is
// preserved.
inline double consensus_alpha(const Graph& g) { return 1.0 / (1.0 + g.max_degree()); }

inline double max_pairwise_distance(const std::vector<ModelParams>& models) {
    double mx = 0.0;
    for (std::size_t i = 0; i < models.size(); ++i)
        for (std::size_t j = i + 1; j < models.size(); ++j)
            mx = std::max(mx, model_distance(models[i], models[j]));
    return mx;
}

}  // namespace detail

// One synchronous consensus iteration: every client adds alpha * sum of
// neighbor differences, all reads against the iteration-start snapshot.
inline void consensus_step(std::vector<ModelParams>& models, const Graph& g, double alpha = -1.0) {
    if (static_cast<int>(models.size()) != g.num_nodes()) throw ConfigError("consensus_step: model/node count mismatch");
    if (alpha <= 0.0) alpha = detail::consensus_alpha(g);
    const std::vector<ModelParams> snap = models;
    for (int i = 0; i < g.num_nodes(); ++i) {
        const auto& nbrs = g.neighbors(i);
        if (nbrs.empty()) continue;
        for (std::size_t li = 0; li < models[i].layers.size(); ++li) {
            auto& dst = models[i].layers[li];
            const auto& self = snap[i].layers[li];
            const std::size_t n = dst.param_count();
            std::vector<double> acc(n, 0.0);
            for (int m : nbrs) {
                const auto& other = snap[m].layers[li];
                for (std::size_t e = 0; e < n; ++e) acc[e] += other.entry(e) - self.entry(e);
            }
            for (std::size_t e = 0; e < n; ++e) dst.entry(e) = self.entry(e) + alpha * acc[e];
        }
    }
}

// Direct neighborhood mean: w_i <- mean over N_i and i of the epoch-start
// models. Isolated nodes are untouched.
inline void direct_average(std::vector<ModelParams>& models, const Graph& g) {
    if (static_cast<int>(models.size()) != g.num_nodes()) throw ConfigError("direct_average: model/node count mismatch");
    const std::vector<ModelParams> snap = models;
    for (int i = 0; i < g.num_nodes(); ++i) {
        const auto& nbrs = g.neighbors(i);
        if (nbrs.empty()) continue;
        const double count = static_cast<double>(nbrs.size() + 1);
        for (std::size_t li = 0; li < models[i].layers.size(); ++li) {
            auto& dst = models[i].layers[li];
            const std::size_t n = dst.param_count();
            for (std::size_t e = 0; e < n; ++e) {
                double sum = snap[i].layers[li].entry(e);
                for (int m : nbrs) sum += snap[m].layers[li].entry(e);
                dst.entry(e) = sum / count;
            }
        }
    }
}

// Iterate consensus until the largest pairwise model distance drops to eps
// or s_max iterations have run. Returns the iteration count for
// communication accounting.
inline int run_consensus(std::vector<ModelParams>& models, const Graph& g, double eps, int s_max) {
    if (eps <= 0.0) throw ConfigError("run_consensus: eps must be positive");
    int iters = 0;
    while (iters < s_max) {
        if (detail::max_pairwise_distance(models) <= eps) break;
        consensus_step(models, g);
        ++iters;
    }
    return iters;
}

// ---------------------------------------------------------------------------
// Centralized FedAvg round
// ---------------------------------------------------------------------------

inline std::vector<int> fedavg_select(int k, double c_fraction, std::uint64_t seed, int round) {
    if (c_fraction <= 0.0 || c_fraction > 1.0) throw ConfigError("fedavg: C must be in (0,1]");
    const int want = std::max(1, static_cast<int>(std::floor(c_fraction * k + 0.5)));
    Rng rng(derive_seed(seed, 0xFED, static_cast<std::uint64_t>(round)));
    auto picks = rng.sample_without_replacement(k, want);
    std::sort(picks.begin(), picks.end());
    return picks;
}

// Server takes the unweighted mean of this round's participants, then a new
// selection is drawn and every newly selected client is reset to the server
// model. Returns the new selection.
inline std::vector<int> fedavg_round(ModelParams& server, std::vector<ModelParams>& clients,
                                     const std::vector<int>& participants, double c_fraction,
                                     std::uint64_t seed, int round) {
    if (!participants.empty()) {
        ModelParams sum = clients.at(participants[0]);
        for (std::size_t t = 1; t < participants.size(); ++t) {
            const auto& m = clients.at(participants[t]);
            for (std::size_t li = 0; li < sum.layers.size(); ++li) {
                auto& dst = sum.layers[li];
                const auto& src = m.layers[li];
                const std::size_t n = dst.param_count();
                for (std::size_t e = 0; e < n; ++e) dst.entry(e) += src.entry(e);
            }
        }
        const double inv = 1.0 / static_cast<double>(participants.size());
        for (auto& l : sum.layers) {
            const std::size_t n = l.param_count();
            for (std::size_t e = 0; e < n; ++e) l.entry(e) *= inv;
        }
        server = std::move(sum);
    }
    auto next = fedavg_select(static_cast<int>(clients.size()), c_fraction, seed, round);
    for (int i : next) clients[i] = server;
    return next;
}

// ---------------------------------------------------------------------------
// Segment-level weighted polling (the generalized aggregation rule):
// k_j <- (|D_j| k_j + sum_m |D_m| k_m) / (|D_j| + sum_m |D_m|)
// ---------------------------------------------------------------------------

inline void segmented_aggregate(ModelParams& client, const Architecture& arch, const SegmentId& seg,
                                const std::vector<const ModelParams*>& neighbor_models, double self_size,
                                const std::vector<double>& neighbor_sizes) {
    if (neighbor_models.size() != neighbor_sizes.size())
        throw ConfigError("segmented_aggregate: neighbor model/size count mismatch");
    if (neighbor_models.empty()) return;  // no-op
    if (self_size <= 0.0) throw ConfigError("segmented_aggregate: sizes must be positive");
    for (double s : neighbor_sizes)
        if (s <= 0.0) throw ConfigError("segmented_aggregate: sizes must be positive");

    double denom = self_size;
    for (double s : neighbor_sizes) denom += s;

    const auto entries = segment_entries(arch, seg);
    auto& lp = client.layers[seg.layer - 1];
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const std::size_t e = entries[i];
        double acc = self_size * lp.entry(e);
        for (std::size_t m = 0; m < neighbor_models.size(); ++m)
            acc += neighbor_sizes[m] * neighbor_models[m]->layers[seg.layer - 1].entry(e);
        lp.entry(e) = acc / denom;
    }
}

// ---------------------------------------------------------------------------
// Aggregation plans: the four segmented-sharing settings
// ---------------------------------------------------------------------------

enum class AggregationSetting { Default, PerEpochSegments, CompleteGraph, PerSegmentTopology, DirectedRandom };

inline const char* to_string(AggregationSetting s) {
    switch (s) {
        case AggregationSetting::Default: return "default";
        case AggregationSetting::PerEpochSegments: return "per-epoch-segments";
        case AggregationSetting::CompleteGraph: return "complete-graph";
        case AggregationSetting::PerSegmentTopology: return "per-segment-topology";
        case AggregationSetting::DirectedRandom: return "directed-random";
    }
    return "?";
}

inline AggregationSetting setting_from_string(const std::string& s) {
    if (s == "default") return AggregationSetting::Default;
    if (s == "per-epoch-segments") return AggregationSetting::PerEpochSegments;
    if (s == "complete-graph") return AggregationSetting::CompleteGraph;
    if (s == "per-segment-topology") return AggregationSetting::PerSegmentTopology;
    if (s == "directed-random") return AggregationSetting::DirectedRandom;
    throw ConfigError("unknown aggregation setting '" + s + "'");
}

enum class AlphaRule { ConsensusUniform, SizeWeighted };

struct AggregationPlan {
    AggregationSetting setting = AggregationSetting::Default;
    SegmentUnit unit = SegmentUnit::OutChannel;
    double pss = 1.0;
    int epoch = 0;
    Graph client_graph;
    std::map<SegmentId, Graph> segment_graphs;  // present iff the setting uses them
    std::vector<SegmentIndexSet> seg_ind;       // one per client
    AlphaRule alpha_rule = AlphaRule::ConsensusUniform;
    double epsilon = 0.1;
    int s_max = 20;

    const Graph& graph_for(const SegmentId& seg) const {
        const auto it = segment_graphs.find(seg);
        return it == segment_graphs.end() ? client_graph : it->second;
    }
};

// Builds the per-epoch plan for one setting. Graph and segment-set streams
// are keyed so that fixed pieces are identical across epochs and regenerated
// pieces differ:
//   default              fixed small-world client graph, fixed per-client sets
//   per-epoch-segments   same graph, sets regenerated each epoch
//   complete-graph       complete client graph, fixed per-client sets
//   per-segment-topology one fixed small-world graph per segment, one shared set
//   directed-random      per-epoch sets and per-epoch per-segment graphs,
//                        size-weighted polling (no symmetry guarantee)
inline AggregationPlan build_plan(const Architecture& arch, AggregationSetting setting, int k_clients,
                                  int ws_k, double ws_p, double pss, std::uint64_t seed, int epoch,
                                  SegmentUnit unit = SegmentUnit::OutChannel, double epsilon = 0.1,
                                  int s_max = 20) {
    if (pss <= 0.0 || pss > 1.0) throw ConfigError("build_plan: PSS must be in (0,1]");
    if (epsilon <= 0.0) throw ConfigError("build_plan: eps must be positive");
    if (s_max < 1) throw ConfigError("build_plan: s_max must be >= 1");

    AggregationPlan plan;
    plan.setting = setting;
    plan.unit = unit;
    plan.pss = pss;
    plan.epoch = epoch;
    plan.epsilon = epsilon;
    plan.s_max = s_max;
    plan.alpha_rule =
        setting == AggregationSetting::DirectedRandom ? AlphaRule::SizeWeighted : AlphaRule::ConsensusUniform;

    if (setting == AggregationSetting::CompleteGraph)
        plan.client_graph = complete(k_clients);
    else if (ws_p == 0.0)
        plan.client_graph = ring_lattice(k_clients, ws_k);
    else
        plan.client_graph = watts_strogatz(k_clients, ws_k, ws_p, derive_seed(seed, 0xC1A));

    SelectPolicy policy = SelectPolicy::FixedPerClient;
    switch (setting) {
        case AggregationSetting::Default:
        case AggregationSetting::CompleteGraph: policy = SelectPolicy::FixedPerClient; break;
        case AggregationSetting::PerEpochSegments:
        case AggregationSetting::DirectedRandom: policy = SelectPolicy::PerEpoch; break;
        case AggregationSetting::PerSegmentTopology: policy = SelectPolicy::SharedAcrossClients; break;
    }
    plan.seg_ind.reserve(k_clients);
    for (int j = 0; j < k_clients; ++j)
        plan.seg_ind.push_back(select_segments(arch, unit, pss, seed, policy, j, epoch));

    if (setting == AggregationSetting::PerSegmentTopology || setting == AggregationSetting::DirectedRandom) {
        const auto all = enumerate_segments(arch, unit);
        std::vector<char> needed(all.size(), 0);
        for (const auto& s : plan.seg_ind)
            for (const auto& id : s.segments) {
                const auto it = std::lower_bound(all.begin(), all.end(), id);
                needed[static_cast<std::size_t>(it - all.begin())] = 1;
            }
        for (std::size_t i = 0; i < all.size(); ++i) {
            if (!needed[i]) continue;
            const std::uint64_t key =
                setting == AggregationSetting::PerSegmentTopology
                    ? derive_seed(seed, 0xC2B, static_cast<std::uint64_t>(i))
                    : derive_seed(seed, 0xC2C, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(epoch));
            plan.segment_graphs.emplace(all[i], watts_strogatz(k_clients, ws_k, ws_p, key));
        }
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Segment-restricted distance and the aggregation runner
// ---------------------------------------------------------------------------

namespace detail {

// Per-layer sorted entry mask covering the union of every client's shared
// segments; with PSS=1 this is all entries in natural order, making the
// restricted distance bit-identical to model_distance.
inline std::vector<std::vector<std::size_t>> union_entry_mask(const Architecture& arch,
                                                              const std::vector<SegmentIndexSet>& seg_ind) {
    std::vector<std::vector<std::size_t>> mask(arch.num_layers());
    std::set<SegmentId> seen;
    for (const auto& s : seg_ind)
        for (const auto& id : s.segments)
            if (seen.insert(id).second) {
                const auto entries = segment_entries(arch, id);
                auto& m = mask[id.layer - 1];
                m.insert(m.end(), entries.begin(), entries.end());
            }
    for (auto& m : mask) {
        std::sort(m.begin(), m.end());
        m.erase(std::unique(m.begin(), m.end()), m.end());
    }
    return mask;
}

inline double masked_model_distance(const ModelParams& a, const ModelParams& b,
                                    const std::vector<std::vector<std::size_t>>& mask) {
    double total = 0.0;
    for (std::size_t li = 0; li < a.layers.size(); ++li) {
        const auto& la = a.layers[li];
        const auto& lb = b.layers[li];
        double sq = 0.0;
        for (std::size_t e : mask[li]) {
            const double d = la.entry(e) - lb.entry(e);
            sq += d * d;
        }
        total += std::sqrt(sq);
    }
    return total;
}

inline double max_masked_distance(const std::vector<ModelParams>& models,
                                  const std::vector<std::vector<std::size_t>>& mask) {
    double mx = 0.0;
    for (std::size_t i = 0; i < models.size(); ++i)
        for (std::size_t j = i + 1; j < models.size(); ++j)
            mx = std::max(mx, masked_model_distance(models[i], models[j], mask));
    return mx;
}

}  // namespace detail

struct AggregationResult {
    int iterations = 0;
    long long floats_shared = 0;  // payload parameters over all directed messages
};

// Runs the plan's mixing for up to s_max synchronous iterations, stopping
// early once the pairwise model distance restricted to the union of shared
// segments reaches eps. Every client only touches segments in its own
// SegInd; everything else keeps its exact bits. floats_shared counts, per
// iteration, one message of the segment's size from each polled neighbor.
inline AggregationResult run_aggregation(std::vector<ModelParams>& models, const Architecture& arch,
                                         const AggregationPlan& plan, const std::vector<double>& sizes,
                                         double eps, int s_max) {
    const int k = static_cast<int>(models.size());
    if (static_cast<int>(plan.seg_ind.size()) != k) throw ConfigError("run_aggregation: plan does not match client count");
    if (plan.client_graph.num_nodes() != k) throw ConfigError("run_aggregation: graph does not match client count");
    if (plan.alpha_rule == AlphaRule::SizeWeighted && static_cast<int>(sizes.size()) != k)
        throw ConfigError("run_aggregation: need one dataset size per client");
    if (eps <= 0.0) throw ConfigError("run_aggregation: eps must be positive");

    const auto mask = detail::union_entry_mask(arch, plan.seg_ind);

    // entry lists and graph alphas resolved once per distinct segment
    std::map<SegmentId, std::vector<std::size_t>> entry_cache;
    for (const auto& s : plan.seg_ind)
        for (const auto& id : s.segments)
            if (!entry_cache.count(id)) entry_cache.emplace(id, segment_entries(arch, id));
    std::map<SegmentId, double> alpha_cache;
    const double client_alpha = detail::consensus_alpha(plan.client_graph);
    for (const auto& [id, g] : plan.segment_graphs) alpha_cache.emplace(id, detail::consensus_alpha(g));

    AggregationResult res;
    while (res.iterations < s_max) {
        if (detail::max_masked_distance(models, mask) <= eps) break;
        const std::vector<ModelParams> snap = models;
        for (int j = 0; j < k; ++j) {
            for (const auto& seg : plan.seg_ind[j].segments) {
                const Graph& g = plan.graph_for(seg);
                const auto& nbrs = g.neighbors(j);
                if (nbrs.empty()) continue;
                const auto& entries = entry_cache.at(seg);
                auto& dst = models[j].layers[seg.layer - 1];
                const auto& self = snap[j].layers[seg.layer - 1];

                if (plan.alpha_rule == AlphaRule::ConsensusUniform) {
                    const auto it = alpha_cache.find(seg);
                    const double alpha = it == alpha_cache.end() ? client_alpha : it->second;
                    std::vector<double> acc(entries.size(), 0.0);
                    for (int m : nbrs) {
                        const auto& other = snap[m].layers[seg.layer - 1];
                        for (std::size_t i = 0; i < entries.size(); ++i)
                            acc[i] += other.entry(entries[i]) - self.entry(entries[i]);
                    }
                    for (std::size_t i = 0; i < entries.size(); ++i)
                        dst.entry(entries[i]) = self.entry(entries[i]) + alpha * acc[i];
                } else {
                    double denom = sizes[j];
                    for (int m : nbrs) denom += sizes[m];
                    for (std::size_t i = 0; i < entries.size(); ++i) {
                        const std::size_t e = entries[i];
                        double acc = sizes[j] * self.entry(e);
                        for (int m : nbrs) acc += sizes[m] * snap[m].layers[seg.layer - 1].entry(e);
                        dst.entry(e) = acc / denom;
                    }
                }
                res.floats_shared += static_cast<long long>(nbrs.size()) * static_cast<long long>(entries.size());
            }
        }
        ++res.iterations;
    }
    return res;
}

}  // namespace dfl
