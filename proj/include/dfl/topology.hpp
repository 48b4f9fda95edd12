#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dfl/errors.hpp"
#include "dfl/rng.hpp"

namespace dfl {

// Communication topology over K clients. Undirected graphs store each edge
// once and answer adjacency symmetrically; no self-loops, no duplicates.
class Graph {
public:
    Graph() = default;
    explicit Graph(int nodes, bool directed = false) : n_(nodes), directed_(directed), adj_(nodes) {
        if (nodes < 1) throw ConfigError("graph needs at least one node");
    }

    int num_nodes() const { return n_; }
    int num_edges() const { return static_cast<int>(edges_.size()); }
    bool directed() const { return directed_; }
    const std::vector<std::pair<int, int>>& edges() const { return edges_; }

    void add_edge(int u, int v, double weight = 1.0) {
        if (u < 0 || v < 0 || u >= n_ || v >= n_) throw ConfigError("edge endpoint out of range");
        if (u == v) throw ConfigError("self-loops are not allowed");
        if (has_edge(u, v)) throw ConfigError("duplicate edge");
        edges_.emplace_back(u, v);
        weights_.push_back(weight);
        adj_[u].push_back(v);
        if (!directed_) adj_[v].push_back(u);
        sorted_ = false;
    }

    bool has_edge(int u, int v) const {
        for (int t : adj_[u])
            if (t == v) return true;
        if (directed_) return false;
        return false;  // undirected adjacency already holds both sides
    }

    // Neighbors in ascending order. For directed graphs these are the
    // out-neighbors of u; in_neighbors(v) lists senders into v.
    const std::vector<int>& neighbors(int u) const {
        sort_if_needed();
        return adj_[u];
    }

    std::vector<int> in_neighbors(int v) const {
        if (!directed_) return neighbors(v);
        std::vector<int> in;
        for (const auto& [a, b] : edges_)
            if (b == v) in.push_back(a);
        std::sort(in.begin(), in.end());
        return in;
    }

    int degree(int u) const { return static_cast<int>(adj_[u].size()); }

    int max_degree() const {
        int d = 0;
        for (int i = 0; i < n_; ++i) d = std::max(d, degree(i));
        return d;
    }

    double edge_weight(std::size_t edge_index) const { return weights_[edge_index]; }

    // Weak connectivity: a single component when edge directions are ignored.
    bool is_connected() const {
        if (n_ == 0) return false;
        std::vector<std::vector<int>> und(n_);
        for (const auto& [u, v] : edges_) {
            und[u].push_back(v);
            und[v].push_back(u);
        }
        std::vector<char> seen(n_, 0);
        std::queue<int> q;
        q.push(0);
        seen[0] = 1;
        int count = 1;
        while (!q.empty()) {
            const int u = q.front();
            q.pop();
            for (int v : und[u]) {
                if (!seen[v]) {
                    seen[v] = 1;
                    ++count;
                    q.push(v);
                }
            }
        }
        return count == n_;
    }

    // Strong connectivity (directed): every node reachable forward and backward.
    bool is_strongly_connected() const {
        if (!directed_) return is_connected();
        auto reach = [this](bool forward) {
            std::vector<std::vector<int>> g(n_);
            for (const auto& [u, v] : edges_) {
                if (forward)
                    g[u].push_back(v);
                else
                    g[v].push_back(u);
            }
            std::vector<char> seen(n_, 0);
            std::queue<int> q;
            q.push(0);
            seen[0] = 1;
            int count = 1;
            while (!q.empty()) {
                const int u = q.front();
                q.pop();
                for (int v : g[u])
                    if (!seen[v]) {
                        seen[v] = 1;
                        ++count;
                        q.push(v);
                    }
            }
            return count == n_;
        };
        return reach(true) && reach(false);
    }

    // Canonical edge list (endpoints ordered, list sorted) for comparisons.
    std::vector<std::pair<int, int>> canonical_edges() const {
        std::vector<std::pair<int, int>> e = edges_;
        if (!directed_)
            for (auto& [u, v] : e)
                if (u > v) std::swap(u, v);
        std::sort(e.begin(), e.end());
        return e;
    }

    bool operator==(const Graph& o) const {
        return n_ == o.n_ && directed_ == o.directed_ && canonical_edges() == o.canonical_edges();
    }

private:
    void sort_if_needed() const {
        if (sorted_) return;
        for (auto& a : adj_) std::sort(a.begin(), a.end());
        sorted_ = true;
    }

    int n_ = 0;
    bool directed_ = false;
    std::vector<std::pair<int, int>> edges_;
    std::vector<double> weights_;
    mutable std::vector<std::vector<int>> adj_;
    mutable bool sorted_ = true;
};

// ---------------------------------------------------------------------------
// Constructions
// ---------------------------------------------------------------------------

inline Graph ring_lattice(int k_nodes, int k_degree) {
    if (k_nodes < 3) throw ConfigError("ring_lattice: need at least 3 nodes");
    if (k_degree < 2 || k_degree % 2 != 0) throw ConfigError("ring_lattice: k must be even and >= 2");
    if (k_degree >= k_nodes) throw ConfigError("ring_lattice: k must be smaller than the node count");
    Graph g(k_nodes);
    for (int i = 0; i < k_nodes; ++i) {
        for (int j = 1; j <= k_degree / 2; ++j) {
            const int t = (i + j) % k_nodes;
            if (!g.has_edge(i, t)) g.add_edge(i, t);
        }
    }
    return g;
}

inline Graph cycle(int k) {
    if (k < 2) throw ConfigError("cycle: need at least 2 nodes");
    if (k == 2) {
        Graph g(2);
        g.add_edge(0, 1);
        return g;
    }
    return ring_lattice(k, 2);
}

inline Graph complete(int k) {
    if (k < 2) throw ConfigError("complete: need at least 2 nodes");
    Graph g(k);
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) g.add_edge(i, j);
    return g;
}

// K+1 nodes; node 0 is the center (the server in centralized training).
inline Graph star(int k_clients) {
    if (k_clients < 2) throw ConfigError("star: need at least 2 clients");
    Graph g(k_clients + 1);
    for (int i = 1; i <= k_clients; ++i) g.add_edge(0, i);
    return g;
}

// Watts-Strogatz rewiring: each lattice edge keeps its source and, with
// probability p, moves its far endpoint to a uniformly random node that is
// neither the source nor already adjacent to it. Edge count is preserved.
// Disconnected outcomes are regenerated up to `max_retries` times.
inline Graph watts_strogatz(int k_nodes, int k_degree, double p, std::uint64_t seed, int max_retries = 100) {
    if (p < 0.0 || p > 1.0) throw ConfigError("watts_strogatz: p must be in [0,1]");
    ring_lattice(k_nodes, k_degree);  // validate lattice parameters up front

    for (int attempt = 0; attempt < max_retries; ++attempt) {
        Rng rng(derive_seed(seed, 0x575, static_cast<std::uint64_t>(attempt)));
        // adjacency sets evolve while edges are visited in construction order
        std::vector<std::set<int>> adj(k_nodes);
        std::vector<std::pair<int, int>> edges;
        for (int i = 0; i < k_nodes; ++i) {
            for (int j = 1; j <= k_degree / 2; ++j) {
                const int t = (i + j) % k_nodes;
                if (adj[i].count(t)) continue;
                edges.emplace_back(i, t);
                adj[i].insert(t);
                adj[t].insert(i);
            }
        }
        for (auto& [u, v] : edges) {
            if (!rng.bernoulli(p)) continue;
            if (static_cast<int>(adj[u].size()) >= k_nodes - 1) continue;  // u already sees everyone
            int t = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(k_nodes)));
            while (t == u || adj[u].count(t)) t = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(k_nodes)));
            adj[u].erase(v);
            adj[v].erase(u);
            adj[u].insert(t);
            adj[t].insert(u);
            v = t;
        }
        Graph g(k_nodes);
        for (const auto& [u, v] : edges) g.add_edge(u, v);
        if (g.is_connected()) return g;
    }
    throw GenerationError("watts_strogatz: no connected graph within the retry budget");
}

// ---------------------------------------------------------------------------
// Spectrum
// ---------------------------------------------------------------------------

namespace detail {

// Cyclic Jacobi eigenvalue iteration for a dense symmetric matrix. The
// graphs here have at most a few hundred nodes, so no external solver is
// pulled in. Converges to ~1e-12 relative accuracy.
inline std::vector<double> symmetric_eigenvalues(std::vector<double> a, int n) {
    auto at = [&a, n](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
    double scale = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) scale = std::max(scale, std::abs(at(i, j)));
    if (scale == 0.0) return std::vector<double>(n, 0.0);
    const double tol = 1e-14 * scale;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
        if (std::sqrt(off) <= tol) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = at(p, q);
                if (std::abs(apq) <= tol * 1e-2) continue;
                const double app = at(p, p), aqq = at(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (int i = 0; i < n; ++i) {
                    const double aip = at(i, p), aiq = at(i, q);
                    at(i, p) = c * aip - s * aiq;
                    at(i, q) = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = at(p, i), aqi = at(q, i);
                    at(p, i) = c * api - s * aqi;
                    at(q, i) = s * api + c * aqi;
                }
            }
        }
    }
    std::vector<double> ev(n);
    for (int i = 0; i < n; ++i) ev[i] = at(i, i);
    std::sort(ev.begin(), ev.end());
    return ev;
}

}  // namespace detail

// Eigenvalues of L = D - A in ascending order (undirected graphs only).
inline std::vector<double> laplacian_spectrum(const Graph& g) {
    if (g.directed()) throw ConfigError("laplacian_spectrum: directed graphs unsupported");
    const int n = g.num_nodes();
    std::vector<double> lap(static_cast<std::size_t>(n) * n, 0.0);
    for (std::size_t e = 0; e < g.edges().size(); ++e) {
        const auto& [u, v] = g.edges()[e];
        const double w = g.edge_weight(e);
        lap[static_cast<std::size_t>(u) * n + v] -= w;
        lap[static_cast<std::size_t>(v) * n + u] -= w;
        lap[static_cast<std::size_t>(u) * n + u] += w;
        lap[static_cast<std::size_t>(v) * n + v] += w;
    }
    return detail::symmetric_eigenvalues(std::move(lap), n);
}

// Second-smallest Laplacian eigenvalue; zero iff the graph is disconnected.
// The consensus literature often reports eigenvalues of -L; magnitudes agree.
inline double algebraic_connectivity(const Graph& g) {
    if (g.directed()) throw ConfigError("algebraic_connectivity: directed graphs unsupported");
    if (g.num_nodes() < 2) throw ConfigError("algebraic_connectivity: need at least 2 nodes");
    const auto ev = laplacian_spectrum(g);
    return std::max(0.0, ev[1]);
}

// One "u v" pair per line, 0-indexed.
inline void write_edge_list(const Graph& g, std::ostream& out) {
    for (const auto& [u, v] : g.edges()) out << u << " " << v << "\n";
}

}  // namespace dfl
