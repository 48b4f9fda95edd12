// Decentralized federated learning simulator CLI.
//
// Subcommands:
//   topology    build a communication graph, report connectivity and lambda_2
//   partition   build a dataset partition, report sizes and skewedness
//   run         run an experiment from a config file or scenario preset
//   thresholds  recompute epoch thresholds e_p from a metrics CSV
//
// Exit codes: 0 ok, 2 configuration error, 3 divergence detected, 4 IO error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dfl/config.hpp"
#include "dfl/metrics_io.hpp"
#include "dfl/simulator.hpp"
#include "dfl/topology.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_topology(const std::string& kind, int nodes, int k, double p, std::uint64_t seed,
                 const std::string& export_path) {
    dfl::Graph g;
    if (kind == "complete")
        g = dfl::complete(nodes);
    else if (kind == "cycle")
        g = dfl::cycle(nodes);
    else if (kind == "ring")
        g = dfl::ring_lattice(nodes, k);
    else if (kind == "ws")
        g = dfl::watts_strogatz(nodes, k, p, seed);
    else if (kind == "star")
        g = dfl::star(nodes);
    else
        throw dfl::ConfigError("unknown topology kind '" + kind + "'");

    std::cout << "nodes = " << g.num_nodes() << "\n";
    std::cout << "edges = " << g.num_edges() << "\n";
    std::cout << "connected = " << (g.is_connected() ? "true" : "false") << "\n";
    std::cout << "lambda2 = " << dfl::detail::fmt_double(dfl::algebraic_connectivity(g)) << "\n";
    if (!export_path.empty()) {
        std::ofstream out(export_path);
        if (!out) throw dfl::IoError("cannot write " + export_path);
        dfl::write_edge_list(g, out);
        std::cout << "edge list written to " << export_path << "\n";
    }
    return 0;
}

int cmd_partition(const std::string& scheme, int clients, double u, double s, double sigma2, int batch,
                  int n, int classes, std::uint64_t seed, const std::string& dataset,
                  const std::string& dataset_dir) {
    dfl::Dataset ds;
    if (dataset == "synth") {
        ds = dfl::synth_dataset(dfl::derive_seed(seed, 0xDA7A, 0), n, classes);
    } else {
        ds = dfl::load_idx(dataset_dir + "/train-images-idx3-ubyte", dataset_dir + "/train-labels-idx1-ubyte");
    }

    dfl::PartitionPlan plan;
    if (scheme == "iid")
        plan = dfl::partition_iid(ds, clients, seed);
    else if (scheme == "gaussian")
        plan = dfl::partition_gaussian_sizes(ds, clients, sigma2, batch, seed);
    else if (scheme == "skewed")
        plan = dfl::partition_skewed(ds, clients, u, seed);
    else
        throw dfl::ConfigError("unknown partition scheme '" + scheme + "'");
    if (s > 0.0) plan = dfl::share_data(plan, s, dfl::derive_seed(seed, 0x5A2E));

    std::cout << "scheme = " << scheme << ", K = " << clients << ", N = " << ds.count() << "\n";
    for (int i = 0; i < clients; ++i) {
        std::cout << "client " << i << ": size = " << plan.client_indices[i].size()
                  << ", measured_skewedness = " << dfl::detail::fmt_double(dfl::measured_skewedness(ds, plan, i))
                  << "\n";
    }
    if (clients >= 2) {
        std::vector<double> sizes;
        for (const auto& part : plan.client_indices)
            sizes.push_back(static_cast<double>(part.size()) / (1.0 + s));  // pre-share sizes for the prediction
        std::cout << "expected_skewedness = "
                  << dfl::detail::fmt_double(dfl::expected_skewedness(u, s, clients, sizes)) << "\n";
    }
    return 0;
}

int cmd_run(const std::string& config_path, const std::string& preset_name,
            const std::vector<std::string>& overrides, const std::string& out_dir, int workers_override) {
    dfl::ExperimentConfig cfg;
    if (!preset_name.empty())
        cfg = dfl::preset(preset_name);
    else if (!config_path.empty())
        cfg = dfl::parse_config_file(config_path);
    else
        throw dfl::ConfigError("run: need --config or --preset");

    for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos) throw dfl::ConfigError("--set expects key=value, got '" + ov + "'");
        dfl::apply_config_entry(cfg, ov.substr(0, eq), ov.substr(eq + 1));
    }
    if (workers_override > 0) cfg.workers = workers_override;
    if (cfg.dataset == "mnist" && cfg.dataset_dir.empty()) {
        if (const char* env = std::getenv("DFL_DATA_DIR")) cfg.dataset_dir = env;
    }
    cfg.validate();

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw dfl::IoError("cannot create output directory " + out_dir);

    // manifest goes out before training so a crashed run is still identifiable
    dfl::write_text_file(out_dir + "/manifest.json", dfl::manifest_json(cfg, out_dir).dump(2) + "\n");

    const dfl::MetricsLog log = dfl::run_experiment(cfg);

    dfl::write_text_file(out_dir + "/metrics.csv", dfl::metrics_csv_string(log));
    dfl::write_text_file(out_dir + "/summary.json", dfl::summary_json(cfg, log).dump(2) + "\n");

    for (const auto& w : log.warnings) std::cerr << "warning: " << w << "\n";
    if (log.diverged) {
        std::cerr << "run diverged at epoch " << log.diverged_epoch << " (partial outputs written)\n";
        return 3;
    }
    std::cout << "run complete: " << log.epochs.size() << " epochs, outputs in " << out_dir << "\n";
    return 0;
}

int cmd_thresholds(const std::string& csv_path, const std::vector<double>& ps) {
    for (double p : ps) {
        const auto t = dfl::thresholds_from_csv(csv_path, p);
        std::cout << "e_" << p << " = ";
        if (t)
            std::cout << *t << "\n";
        else
            std::cout << "never\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dfl: decentralized federated learning simulator"};
    app.require_subcommand(1);

    // topology
    auto* topo = app.add_subcommand("topology", "build a graph and report its spectrum");
    std::string topo_kind = "ws";
    int topo_nodes = 10, topo_k = 2;
    double topo_p = 0.5;
    std::uint64_t topo_seed = 1;
    std::string topo_export;
    topo->add_option("--kind", topo_kind, "complete|cycle|ring|ws|star");
    topo->add_option("--nodes", topo_nodes, "node count (clients for star)");
    topo->add_option("--k", topo_k, "lattice neighbors (even)");
    topo->add_option("--p", topo_p, "rewiring probability");
    topo->add_option("--seed", topo_seed, "rewiring seed");
    topo->add_option("--export", topo_export, "write edge list to this path");

    // partition
    auto* part = app.add_subcommand("partition", "partition a dataset and report skewedness");
    std::string part_scheme = "iid", part_dataset = "synth", part_dir;
    int part_k = 10, part_b = 64, part_n = 5000, part_classes = 10;
    double part_u = 0.0, part_s = 0.0, part_sigma2 = 1.0;
    std::uint64_t part_seed = 1;
    part->add_option("--scheme", part_scheme, "iid|gaussian|skewed");
    part->add_option("--K", part_k, "client count");
    part->add_option("--U", part_u, "skewedness");
    part->add_option("--S", part_s, "sharing fraction");
    part->add_option("--sigma2", part_sigma2, "gaussian size variance");
    part->add_option("--B", part_b, "batch size floor");
    part->add_option("--n", part_n, "synthetic sample count");
    part->add_option("--classes", part_classes, "class count");
    part->add_option("--seed", part_seed, "seed");
    part->add_option("--dataset", part_dataset, "synth|mnist");
    part->add_option("--dataset-dir", part_dir, "IDX directory for mnist");

    // run
    auto* run = app.add_subcommand("run", "run an experiment");
    std::string run_config, run_preset, run_out = "out";
    std::vector<std::string> run_sets;
    int run_workers = 0;
    bool run_list = false;
    run->add_option("--config", run_config, "config file (key = value lines)");
    run->add_option("--preset", run_preset, "scenario preset name");
    run->add_option("--set", run_sets, "override config entries, key=value")->take_all();
    run->add_option("--out", run_out, "output directory");
    run->add_option("--workers", run_workers, "worker threads for client updates");
    run->add_flag("--list-presets", run_list, "list preset names and exit");

    // thresholds
    auto* thr = app.add_subcommand("thresholds", "recompute e_p from a metrics CSV");
    std::string thr_csv;
    std::vector<double> thr_p = {90, 95, 97, 98, 99};
    thr->add_option("--csv", thr_csv, "metrics.csv path")->required();
    thr->add_option("--p", thr_p, "accuracy thresholds in percent")->take_all();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;  // bad usage is a configuration error
    }

    try {
        if (topo->parsed()) return cmd_topology(topo_kind, topo_nodes, topo_k, topo_p, topo_seed, topo_export);
        if (part->parsed())
            return cmd_partition(part_scheme, part_k, part_u, part_s, part_sigma2, part_b, part_n, part_classes,
                                 part_seed, part_dataset, part_dir);
        if (run->parsed()) {
            if (run_list) {
                for (const auto& n : dfl::preset_names()) std::cout << n << "\n";
                return 0;
            }
            return cmd_run(run_config, run_preset, run_sets, run_out, run_workers);
        }
        if (thr->parsed()) return cmd_thresholds(thr_csv, thr_p);
    } catch (const dfl::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const dfl::ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const dfl::GenerationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const dfl::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const dfl::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const dfl::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
