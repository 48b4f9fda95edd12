#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dfl/aggregation.hpp"
#include "dfl/dataset.hpp"
#include "dfl/errors.hpp"
#include "dfl/model.hpp"
#include "dfl/optim.hpp"
#include "dfl/rng.hpp"
#include "dfl/topology.hpp"

namespace dfl {

struct ClientState {
    int id = 0;
    ModelParams params;
    OptimizerState opt;
    std::vector<int> data_indices;   // into the parent dataset
    double mu = 0.0;                 // normalization of this client's view
    double sigma = 1.0;
    double epochs_per_agg = 1.0;     // E_i
    std::uint64_t stream = 0;        // base of this client's RNG streams

    // batch cursor; survives across epochs so E<1 walks the data gradually
    std::vector<int> order;
    std::size_t cursor = 0;
    long long reshuffles = 0;
};

// Everything needed to reproduce a run. Validated before anything executes.
struct ExperimentConfig {
    std::string scenario;

    // data
    std::string dataset = "synth";       // synth | mnist
    std::string dataset_dir;
    int synth_train = 5000;
    int synth_test = 500;
    int classes = 10;

    // clients and partition
    int clients = 5;                     // K
    std::string arch = "desk";           // desk | paper | linear
    std::string partition = "iid";       // iid | gaussian | skewed | full
    double skew_u = 0.0;                 // U
    double share_s = 0.0;                // S
    double sigma2 = 1.0;                 // gaussian size variance
    bool gaussian_literal_min = false;   // literal min() size formula
    std::string norm_mode = "global";    // global | offsets | local
    std::vector<double> norm_offsets;    // per client, offsets mode

    // local training
    int batch_size = 64;                 // B (also the gaussian size floor)
    std::vector<double> e_per_client = {1.0};          // E_i, broadcast if single
    std::vector<std::string> optimizers = {"adam"};    // broadcast if single
    std::vector<double> learning_rates = {0.001};      // broadcast if single
    bool dropout = false;
    std::string init = "shared-uniform";  // shared-uniform | per-client-random

    // aggregation
    std::string aggregation = "consensus";  // none | direct | consensus | fedavg | segmented
    std::string topology = "cycle";         // cycle | ring | ws | complete
    int topo_k = 2;
    double topo_p = 0.5;
    std::string setting = "default";        // segmented setting
    double pss = 1.0;
    std::string unit = "out_channel";
    double c_fraction = 0.5;                // fedavg C
    double epsilon = 0.1;
    int s_max = 100;

    // run
    int epochs = 10;                        // T
    std::uint64_t seed = 1;
    int workers = 1;

    Architecture architecture() const {
        if (arch == "desk") return desk_architecture();
        if (arch == "paper") return paper_architecture();
        if (arch == "linear") {
            Architecture a;
            a.input_h = 28;
            a.input_w = 28;
            a.layers.push_back({DenseSpec{784, 10}, false, false, 0.0});
            return a;
        }
        throw ConfigError("unknown arch '" + arch + "'");
    }

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;                    // 1-based
    std::vector<double> train_loss;   // per client, post-local-update (pre-aggregation)
    std::vector<double> test_acc;     // per client, post-aggregation
    int best_client = 0;              // lowest train loss, ties to the lowest id
    double best_acc = 0.0;
    double mean_acc = 0.0;
    double dist_min = 0.0;            // post-aggregation pairwise model distance
    double dist_max = 0.0;
    int consensus_iters = 0;
    long long floats_shared = 0;
};

struct MetricsLog {
    std::vector<EpochRecord> epochs;
    bool diverged = false;
    int diverged_epoch = -1;          // 1-based; -1 when the run completed
    std::vector<std::string> warnings;

    long long total_floats() const {
        long long t = 0;
        for (const auto& e : epochs) t += e.floats_shared;
        return t;
    }
};

// ---------------------------------------------------------------------------

inline void ExperimentConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("config: " + what); };
    if (clients < 1) fail("K must be >= 1");
    if (epochs < 0) fail("epochs must be >= 0");
    if (batch_size < 1) fail("B must be >= 1");
    if (epsilon <= 0.0) fail("eps must be > 0");
    if (s_max < 1) fail("s_max must be >= 1");
    if (share_s < 0.0 || share_s > 1.0) fail("S must be in [0,1]");
    if (skew_u < 0.0 || skew_u > 1.0) fail("U must be in [0,1]");
    if (pss <= 0.0 || pss > 1.0) fail("PSS must be in (0,1]");
    if (c_fraction <= 0.0 || c_fraction > 1.0) fail("C must be in (0,1]");
    architecture().validate();

    if (dataset != "synth" && dataset != "mnist") fail("dataset must be synth or mnist");
    if (dataset == "synth") {
        if (synth_train < classes) fail("synth_train too small");
        if (synth_test < 1) fail("synth_test must be >= 1");
        const long long n = synth_train;
        if (partition != "full" && static_cast<long long>(clients) * batch_size > n)
            fail("K*B exceeds the dataset size (" + std::to_string(clients) + "*" + std::to_string(batch_size) +
                 " > " + std::to_string(n) + ")");
    }
    if (partition != "iid" && partition != "gaussian" && partition != "skewed" && partition != "full")
        fail("partition must be iid, gaussian, skewed or full");
    if (partition == "skewed" && clients != classes) fail("skewed partition requires K == classes");

    if (norm_mode != "global" && norm_mode != "offsets" && norm_mode != "local")
        fail("norm_mode must be global, offsets or local");
    if (norm_mode == "offsets" && static_cast<int>(norm_offsets.size()) != clients)
        fail("norm_offsets needs exactly K entries");

    auto check_broadcast = [&](std::size_t n, const std::string& name) {
        if (n != 1 && n != static_cast<std::size_t>(clients)) fail(name + " needs 1 or K entries");
    };
    check_broadcast(e_per_client.size(), "E");
    check_broadcast(optimizers.size(), "optimizer");
    check_broadcast(learning_rates.size(), "lr");
    for (double e : e_per_client)
        if (e <= 0.0) fail("E must be > 0");
    for (double lr : learning_rates)
        if (lr <= 0.0) fail("lr must be > 0");
    for (const auto& o : optimizers) optimizer_from_string(o);

    if (aggregation != "none" && aggregation != "direct" && aggregation != "consensus" &&
        aggregation != "fedavg" && aggregation != "segmented")
        fail("aggregation must be none, direct, consensus, fedavg or segmented");
    if (aggregation == "segmented") {
        setting_from_string(setting);
        segment_unit_from_string(unit);
        if (clients < 3) fail("segmented aggregation needs K >= 3");
        if (topo_k % 2 != 0 || topo_k >= clients) fail("topology k must be even and < K");
    }
    if (aggregation == "consensus" || aggregation == "direct") {
        if (topology != "cycle" && topology != "ring" && topology != "ws" && topology != "complete")
            fail("topology must be cycle, ring, ws or complete");
        if ((topology == "ring" || topology == "ws") && (topo_k % 2 != 0 || topo_k >= clients))
            fail("topology k must be even and < K");
        if (topology != "complete" && clients < 3 && clients > 1) fail("cycle/ring topologies need K >= 3");
    }
    if (topo_p < 0.0 || topo_p > 1.0) fail("topology p must be in [0,1]");
    if (workers < 1) fail("workers must be >= 1");
}

namespace detail {

template <typename F>
void parallel_for(int count, int workers, F&& fn) {
    if (workers <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    const int n_threads = std::min(workers, count);
    pool.reserve(n_threads);
    for (int w = 0; w < n_threads; ++w) {
        pool.emplace_back([&next, count, &fn] {
            int i;
            while ((i = next.fetch_add(1)) < count) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace detail

// floor(|D_i| * E_i / B) optimizer steps on batches drawn without replacement
// from the client's view, reshuffling at exhaustion. Returns the mean batch
// loss, or NaN when the schedule yields zero steps.
inline double local_update(ClientState& c, const Dataset& ds, const Architecture& arch, int batch_size,
                           int epoch, bool dropout) {
    const std::size_t n = c.data_indices.size();
    if (n == 0) throw ConfigError("local_update: client has no data");
    const long long steps =
        static_cast<long long>(std::floor(static_cast<double>(n) * c.epochs_per_agg / batch_size));
    if (steps <= 0) return std::numeric_limits<double>::quiet_NaN();

    if (c.order.size() != n) {  // first touch
        c.order.resize(n);
        for (std::size_t i = 0; i < n; ++i) c.order[i] = static_cast<int>(i);
        Rng rng(derive_seed(c.stream, 0x0B0, static_cast<std::uint64_t>(c.reshuffles++)));
        rng.shuffle(c.order);
        c.cursor = 0;
    }

    double loss_sum = 0.0;
    std::vector<int> positions(batch_size);
    for (long long step = 0; step < steps; ++step) {
        for (int b = 0; b < batch_size; ++b) {
            if (c.cursor >= n) {
                Rng rng(derive_seed(c.stream, 0x0B0, static_cast<std::uint64_t>(c.reshuffles++)));
                rng.shuffle(c.order);
                c.cursor = 0;
            }
            positions[b] = c.order[c.cursor++];
        }
        const Tensor images = gather_images(ds, c.data_indices, positions, c.mu, c.sigma);
        const std::vector<int> labels = gather_labels(ds, c.data_indices, positions);
        const std::uint64_t dropout_seed =
            derive_seed(c.stream, 0x0D0, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(step));
        auto [loss, grads] = loss_and_gradient(arch, c.params, images, labels, dropout, dropout_seed);
        optimizer_step(c.params, grads, c.opt);
        loss_sum += loss;
    }
    return loss_sum / static_cast<double>(steps);
}

// Argmax-correct fraction; dropout is off, ties resolve to the lowest class.
inline double evaluate(const Architecture& arch, const ModelParams& params, const Dataset& test, double mu,
                       double sigma, int eval_batch = 256) {
    if (test.count() < 1) throw ConfigError("evaluate: test set is empty");
    std::vector<int> identity(test.count());
    for (int i = 0; i < test.count(); ++i) identity[i] = i;
    int correct = 0;
    for (int start = 0; start < test.count(); start += eval_batch) {
        const int stop = std::min(test.count(), start + eval_batch);
        std::vector<int> pos(identity.begin() + start, identity.begin() + stop);
        const Tensor images = gather_images(test, identity, pos, mu, sigma);
        const Tensor lp = forward(arch, params, images);
        for (int r = 0; r < stop - start; ++r) {
            int arg = 0;
            for (int j = 1; j < lp.dims()[1]; ++j)
                if (lp(r, j) > lp(r, arg)) arg = j;
            if (arg == test.labels[start + r]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(test.count());
}

// (min, max) over all K(K-1)/2 pairwise whole-model distances.
inline std::pair<double, double> distance_range(const std::vector<ModelParams>& models) {
    if (models.size() < 2) throw ConfigError("distance_range: need at least 2 models");
    double mn = std::numeric_limits<double>::infinity(), mx = 0.0;
    for (std::size_t i = 0; i < models.size(); ++i)
        for (std::size_t j = i + 1; j < models.size(); ++j) {
            const double d = model_distance(models[i], models[j]);
            mn = std::min(mn, d);
            mx = std::max(mx, d);
        }
    return {mn, mx};
}

// First epoch whose best-client accuracy exceeds p percent; absent if never.
inline std::optional<int> epoch_threshold(const MetricsLog& log, double p) {
    if (p <= 0.0 || p >= 100.0) throw ConfigError("epoch_threshold: p must be in (0,100)");
    for (const auto& e : log.epochs)
        if (e.best_acc > p / 100.0) return e.epoch;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

namespace detail {

inline Graph build_topology(const ExperimentConfig& cfg) {
    if (cfg.topology == "complete") return complete(cfg.clients);
    if (cfg.topology == "cycle") return cycle(cfg.clients);
    if (cfg.topology == "ring") return ring_lattice(cfg.clients, cfg.topo_k);
    if (cfg.topology == "ws")
        return watts_strogatz(cfg.clients, cfg.topo_k, cfg.topo_p, derive_seed(cfg.seed, 0x7090));
    throw ConfigError("unknown topology '" + cfg.topology + "'");
}

}  // namespace detail

inline MetricsLog run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const Architecture arch = cfg.architecture();
    MetricsLog log;

    // data
    Dataset train, test;
    if (cfg.dataset == "synth") {
        train = synth_dataset(derive_seed(cfg.seed, 0xDA7A, 0), cfg.synth_train, cfg.classes);
        test = synth_dataset(derive_seed(cfg.seed, 0xDA7A, 1), cfg.synth_test, cfg.classes);
    } else {
        const std::string dir = cfg.dataset_dir.empty() ? "." : cfg.dataset_dir;
        train = load_idx(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
        test = load_idx(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
    }

    // partition
    PartitionPlan plan;
    if (cfg.partition == "iid") {
        plan = partition_iid(train, cfg.clients, derive_seed(cfg.seed, 0xBA5E));
    } else if (cfg.partition == "gaussian") {
        plan = partition_gaussian_sizes(train, cfg.clients, cfg.sigma2, cfg.batch_size,
                                        derive_seed(cfg.seed, 0xBA5E), cfg.gaussian_literal_min);
    } else if (cfg.partition == "skewed") {
        plan = partition_skewed(train, cfg.clients, cfg.skew_u, derive_seed(cfg.seed, 0xBA5E));
    } else {  // full: every client sees the entire training set
        plan.parent_count = train.count();
        plan.client_indices.assign(cfg.clients, {});
        for (int i = 0; i < cfg.clients; ++i) {
            plan.client_indices[i].resize(train.count());
            for (int t = 0; t < train.count(); ++t) plan.client_indices[i][t] = t;
        }
        plan.mu.assign(cfg.clients, 0.0);
        plan.sigma.assign(cfg.clients, 1.0);
    }
    if (cfg.share_s > 0.0) plan = share_data(plan, cfg.share_s, derive_seed(cfg.seed, 0x5A2E));

    // normalization
    const double mu_m = cfg.dataset == "mnist" ? 0.1307 : dataset_mean(train);
    const double sd_m = cfg.dataset == "mnist" ? 0.3081 : dataset_std(train);
    std::vector<double> means(cfg.clients, mu_m);
    if (cfg.norm_mode == "offsets") {
        for (int i = 0; i < cfg.clients; ++i) means[i] = mu_m + cfg.norm_offsets[i];
    } else if (cfg.norm_mode == "local") {
        for (int i = 0; i < cfg.clients; ++i) means[i] = client_pixel_mean(train, plan.client_indices[i]);
    }
    apply_normalization(plan, means, sd_m);

    // clients
    const InitMode init_mode =
        cfg.init == "per-client-random" ? InitMode::PerClientRandom : InitMode::SharedUniform;
    std::vector<ClientState> clients(cfg.clients);
    std::vector<double> sizes(cfg.clients);
    for (int i = 0; i < cfg.clients; ++i) {
        auto& c = clients[i];
        c.id = i;
        c.params = init_params(arch, cfg.seed, init_mode, i);
        const auto kind = optimizer_from_string(cfg.optimizers[cfg.optimizers.size() == 1 ? 0 : i]);
        const double lr = cfg.learning_rates[cfg.learning_rates.size() == 1 ? 0 : i];
        c.opt = OptimizerState::create(kind, lr, c.params);
        c.data_indices = plan.client_indices[i];
        if (c.data_indices.empty()) throw ConfigError("config: client " + std::to_string(i) + " has no data");
        c.mu = plan.mu[i];
        c.sigma = plan.sigma[i];
        c.epochs_per_agg = cfg.e_per_client[cfg.e_per_client.size() == 1 ? 0 : i];
        c.stream = derive_seed(cfg.seed, 0xC11E27, static_cast<std::uint64_t>(i));
        sizes[i] = static_cast<double>(c.data_indices.size());
    }

    Graph graph;
    if (cfg.aggregation == "consensus" || cfg.aggregation == "direct") graph = detail::build_topology(cfg);
    if ((cfg.aggregation == "consensus" || cfg.aggregation == "direct") && !graph.is_connected())
        log.warnings.push_back("topology is disconnected; consensus converges per component");

    const long long param_count = static_cast<long long>(arch.param_count());
    ModelParams server;
    std::vector<int> selection;
    if (cfg.aggregation == "fedavg") {
        server = init_params(arch, cfg.seed, InitMode::SharedUniform);
        selection = fedavg_select(cfg.clients, cfg.c_fraction, cfg.seed, 0);
        if (init_mode == InitMode::SharedUniform)
            for (auto& c : clients) c.params = server;
    }

    bool warned_zero_steps = false;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss.assign(cfg.clients, std::numeric_limits<double>::quiet_NaN());

        // local training (conceptually parallel; per-client streams make the
        // result independent of the worker count)
        const bool fedavg = cfg.aggregation == "fedavg";
        std::vector<int> active;
        if (fedavg)
            active = selection;
        else
            for (int i = 0; i < cfg.clients; ++i) active.push_back(i);

        detail::parallel_for(static_cast<int>(active.size()), cfg.workers, [&](int t) {
            const int i = active[t];
            rec.train_loss[i] = local_update(clients[i], train, arch, cfg.batch_size, epoch, cfg.dropout);
        });
        for (int i : active) {
            if (std::isnan(rec.train_loss[i]) && !warned_zero_steps) {
                log.warnings.push_back("client " + std::to_string(i) + " schedule yields zero steps per epoch");
                warned_zero_steps = true;
            }
        }

        auto check_divergence = [&]() {
            for (const auto& c : clients)
                if (!c.params.all_finite()) return true;
            return false;
        };
        if (check_divergence()) {
            log.diverged = true;
            log.diverged_epoch = epoch;
            break;
        }

        // aggregation
        std::vector<ModelParams> models;
        models.reserve(cfg.clients);
        for (const auto& c : clients) models.push_back(c.params);
        if (cfg.aggregation == "consensus") {
            rec.consensus_iters = run_consensus(models, graph, cfg.epsilon, cfg.s_max);
            long long degs = 0;
            for (int i = 0; i < cfg.clients; ++i) degs += graph.degree(i);
            rec.floats_shared = static_cast<long long>(rec.consensus_iters) * degs * param_count;
        } else if (cfg.aggregation == "direct") {
            direct_average(models, graph);
            rec.consensus_iters = 1;
            long long degs = 0;
            for (int i = 0; i < cfg.clients; ++i) degs += graph.degree(i);
            rec.floats_shared = degs * param_count;
        } else if (cfg.aggregation == "fedavg") {
            const auto prev = selection;
            selection = fedavg_round(server, models, prev, cfg.c_fraction, cfg.seed, epoch);
            rec.consensus_iters = 1;
            rec.floats_shared = static_cast<long long>(prev.size() + selection.size()) * param_count;
        } else if (cfg.aggregation == "segmented") {
            const auto agg_plan =
                build_plan(arch, setting_from_string(cfg.setting), cfg.clients, cfg.topo_k, cfg.topo_p, cfg.pss,
                           derive_seed(cfg.seed, 0xA66), epoch, segment_unit_from_string(cfg.unit), cfg.epsilon,
                           cfg.s_max);
            const auto r = run_aggregation(models, arch, agg_plan, sizes, cfg.epsilon, cfg.s_max);
            rec.consensus_iters = r.iterations;
            rec.floats_shared = r.floats_shared;
        }
        for (int i = 0; i < cfg.clients; ++i) clients[i].params = std::move(models[i]);

        if (check_divergence()) {
            log.diverged = true;
            log.diverged_epoch = epoch;
            break;
        }

        // evaluation (post-aggregation state, each client under its own
        // normalization)
        rec.test_acc.assign(cfg.clients, 0.0);
        detail::parallel_for(cfg.clients, cfg.workers, [&](int i) {
            rec.test_acc[i] = evaluate(arch, clients[i].params, test, clients[i].mu, clients[i].sigma);
        });

        int best = 0;
        double best_loss = std::numeric_limits<double>::infinity();
        for (int i = 0; i < cfg.clients; ++i) {
            const double l = std::isnan(rec.train_loss[i]) ? std::numeric_limits<double>::infinity()
                                                           : rec.train_loss[i];
            if (l < best_loss) {
                best_loss = l;
                best = i;
            }
        }
        rec.best_client = best;
        rec.best_acc = rec.test_acc[best];
        double mean = 0.0;
        for (double a : rec.test_acc) mean += a;
        rec.mean_acc = mean / cfg.clients;

        if (cfg.clients >= 2) {
            std::vector<ModelParams> snap;
            snap.reserve(cfg.clients);
            for (const auto& c : clients) snap.push_back(c.params);
            const auto [mn, mx] = distance_range(snap);
            rec.dist_min = mn;
            rec.dist_max = mx;
        }
        log.epochs.push_back(std::move(rec));
    }
    return log;
}

}  // namespace dfl
