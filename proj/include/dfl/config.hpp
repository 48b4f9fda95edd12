#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dfl/errors.hpp"
#include "dfl/simulator.hpp"

namespace dfl {

inline constexpr const char* kArtifactVersion = "1.0.0";

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto t = trim(item);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: bad numeric value '" + v + "' for " + key);
    }
}

inline long long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long i = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer value '" + v + "' for " + key);
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config: bad boolean value '" + v + "' for " + key);
}

inline std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    for (const auto& item : split_list(v)) out.push_back(parse_double(key, item));
    if (out.empty()) throw ConfigError("config: empty list for " + key);
    return out;
}

}  // namespace detail

// One "key = value" assignment; unknown keys are configuration errors so
// typos never silently run a different experiment.
inline void apply_config_entry(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    using namespace detail;
    if (key == "scenario") cfg.scenario = value;
    else if (key == "dataset") cfg.dataset = value;
    else if (key == "dataset_dir") cfg.dataset_dir = value;
    else if (key == "synth_train") cfg.synth_train = static_cast<int>(parse_int(key, value));
    else if (key == "synth_test") cfg.synth_test = static_cast<int>(parse_int(key, value));
    else if (key == "classes") cfg.classes = static_cast<int>(parse_int(key, value));
    else if (key == "clients") cfg.clients = static_cast<int>(parse_int(key, value));
    else if (key == "arch") cfg.arch = value;
    else if (key == "partition") cfg.partition = value;
    else if (key == "U") cfg.skew_u = parse_double(key, value);
    else if (key == "S") cfg.share_s = parse_double(key, value);
    else if (key == "sigma2") cfg.sigma2 = parse_double(key, value);
    else if (key == "gaussian_literal_min") cfg.gaussian_literal_min = parse_bool(key, value);
    else if (key == "norm_mode") cfg.norm_mode = value;
    else if (key == "norm_offsets") cfg.norm_offsets = parse_double_list(key, value);
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "E") cfg.e_per_client = parse_double_list(key, value);
    else if (key == "optimizer") cfg.optimizers = split_list(value);
    else if (key == "lr") cfg.learning_rates = parse_double_list(key, value);
    else if (key == "dropout") cfg.dropout = parse_bool(key, value);
    else if (key == "init") cfg.init = value;
    else if (key == "aggregation") cfg.aggregation = value;
    else if (key == "topology") cfg.topology = value;
    else if (key == "topo_k") cfg.topo_k = static_cast<int>(parse_int(key, value));
    else if (key == "topo_p") cfg.topo_p = parse_double(key, value);
    else if (key == "setting") cfg.setting = value;
    else if (key == "pss") cfg.pss = parse_double(key, value);
    else if (key == "unit") cfg.unit = value;
    else if (key == "C") cfg.c_fraction = parse_double(key, value);
    else if (key == "epsilon") cfg.epsilon = parse_double(key, value);
    else if (key == "s_max") cfg.s_max = static_cast<int>(parse_int(key, value));
    else if (key == "epochs") cfg.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "workers") cfg.workers = static_cast<int>(parse_int(key, value));
    else throw ConfigError("config: unknown key '" + key + "'");
}

// Flat "key = value" text, one entry per line, # comments.
inline ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " is not 'key = value'");
        apply_config_entry(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

// Full echo; parsing it back reproduces the config exactly.
inline std::string config_to_text(const ExperimentConfig& c) {
    std::ostringstream o;
    o.precision(17);
    auto list = [](const auto& v) {
        std::ostringstream s;
        s.precision(17);
        for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
        return s.str();
    };
    o << "scenario = " << c.scenario << "\n";
    o << "dataset = " << c.dataset << "\n";
    o << "dataset_dir = " << c.dataset_dir << "\n";
    o << "synth_train = " << c.synth_train << "\n";
    o << "synth_test = " << c.synth_test << "\n";
    o << "classes = " << c.classes << "\n";
    o << "clients = " << c.clients << "\n";
    o << "arch = " << c.arch << "\n";
    o << "partition = " << c.partition << "\n";
    o << "U = " << c.skew_u << "\n";
    o << "S = " << c.share_s << "\n";
    o << "sigma2 = " << c.sigma2 << "\n";
    o << "gaussian_literal_min = " << (c.gaussian_literal_min ? "true" : "false") << "\n";
    o << "norm_mode = " << c.norm_mode << "\n";
    if (!c.norm_offsets.empty()) o << "norm_offsets = " << list(c.norm_offsets) << "\n";
    o << "batch_size = " << c.batch_size << "\n";
    o << "E = " << list(c.e_per_client) << "\n";
    o << "optimizer = " << list(c.optimizers) << "\n";
    o << "lr = " << list(c.learning_rates) << "\n";
    o << "dropout = " << (c.dropout ? "true" : "false") << "\n";
    o << "init = " << c.init << "\n";
    o << "aggregation = " << c.aggregation << "\n";
    o << "topology = " << c.topology << "\n";
    o << "topo_k = " << c.topo_k << "\n";
    o << "topo_p = " << c.topo_p << "\n";
    o << "setting = " << c.setting << "\n";
    o << "pss = " << c.pss << "\n";
    o << "unit = " << c.unit << "\n";
    o << "C = " << c.c_fraction << "\n";
    o << "epsilon = " << c.epsilon << "\n";
    o << "s_max = " << c.s_max << "\n";
    o << "epochs = " << c.epochs << "\n";
    o << "seed = " << c.seed << "\n";
    o << "workers = " << c.workers << "\n";
    return o.str();
}

// ---------------------------------------------------------------------------
// Scenario presets: the experiment grid at desk scale (K <= 10, <= 10k
// samples, small epoch counts). Exact parameter choices are documented in
// the README.
// ---------------------------------------------------------------------------

inline ExperimentConfig preset(const std::string& name) {
    ExperimentConfig c;
    c.scenario = name;
    c.dataset = "synth";
    c.arch = "desk";
    c.optimizers = {"adam"};
    c.learning_rates = {0.001};
    c.seed = 1;

    if (name == "baseline-single") {
        // one client, no aggregation: the centralized reference
        c.clients = 1;
        c.aggregation = "none";
        c.synth_train = 4000;
        c.synth_test = 500;
        c.batch_size = 64;
        c.epochs = 5;
    } else if (name == "fedavg-star") {
        // central server over a star graph, half the clients per round
        c.clients = 10;
        c.aggregation = "fedavg";
        c.c_fraction = 0.5;
        c.partition = "iid";
        c.synth_train = 5000;
        c.synth_test = 500;
        c.batch_size = 32;
        c.epochs = 12;
    } else if (name == "dfl-table1-e1" || name == "dfl-table1-e005" || name == "dfl-table1-e0005") {
        c.clients = 5;
        c.aggregation = "consensus";
        c.topology = "cycle";
        c.epsilon = 0.1;
        c.s_max = 100;
        c.partition = "iid";
        c.synth_train = 6000;
        c.synth_test = 500;
        c.batch_size = 64;
        c.learning_rates = {0.01};  // desk-scale empirical rate for the aggregation-frequency grid
        if (name == "dfl-table1-e1") {
            c.e_per_client = {1.0};
            c.epochs = 10;
        } else if (name == "dfl-table1-e005") {
            c.e_per_client = {0.05};
            c.epochs = 40;
        } else {
            // E=0.005 needs a small batch for a nonzero step count at desk scale
            c.e_per_client = {0.005};
            c.batch_size = 6;
            c.epochs = 40;
        }
    } else if (name == "dfl-table2") {
        // random initial weights plus overlapping full data access
        c.clients = 5;
        c.aggregation = "consensus";
        c.topology = "cycle";
        c.s_max = 100;
        c.partition = "full";
        c.init = "per-client-random";
        c.synth_train = 6000;
        c.synth_test = 500;
        c.batch_size = 64;
        c.learning_rates = {0.01};  // matches the dfl-table1 grid
        c.e_per_client = {1.0};
        c.epochs = 5;
    } else if (name == "gaussian-sizes") {
        c.clients = 10;
        c.aggregation = "consensus";
        c.topology = "cycle";
        c.s_max = 100;
        c.partition = "gaussian";
        c.sigma2 = 10.0;
        c.synth_train = 8000;
        c.synth_test = 500;
        c.batch_size = 64;
        c.epochs = 12;
    } else if (name == "skewed-sharing-s0" || name == "skewed-sharing-s01") {
        c.clients = 10;
        c.aggregation = "consensus";
        c.topology = "cycle";
        c.s_max = 20;
        c.partition = "skewed";
        c.skew_u = 1.0;
        c.share_s = name == "skewed-sharing-s01" ? 0.1 : 0.0;
        c.synth_train = 6000;
        c.synth_test = 500;
        c.batch_size = 32;
        c.epochs = 30;
    } else if (name == "norm-shift") {
        // the shifted normalization means: -0.1 x4, +0.1 x4, +0.3 x2
        c.clients = 10;
        c.aggregation = "consensus";
        c.topology = "cycle";
        c.s_max = 100;
        c.partition = "iid";
        c.norm_mode = "offsets";
        c.norm_offsets = {-0.1, -0.1, -0.1, -0.1, 0.1, 0.1, 0.1, 0.1, 0.3, 0.3};
        c.synth_train = 5000;
        c.synth_test = 500;
        c.batch_size = 64;
        c.epochs = 10;
    } else if (name == "mixed-lr") {
        c.clients = 10;
        c.aggregation = "consensus";
        c.topology = "cycle";
        c.s_max = 100;
        c.partition = "gaussian";
        c.sigma2 = 0.7;
        c.share_s = 0.1;
        c.optimizers = {"adadelta"};
        c.learning_rates = {0.001, 0.01, 0.1, 1.0, 5.0, 0.001, 0.01, 0.1, 1.0, 5.0};
        c.synth_train = 5000;
        c.synth_test = 500;
        c.batch_size = 64;
        c.epochs = 10;
    } else if (name == "mixed-optim") {
        c.clients = 10;
        c.aggregation = "consensus";
        c.topology = "cycle";
        c.s_max = 100;
        c.partition = "gaussian";
        c.sigma2 = 0.7;
        c.share_s = 0.1;
        c.optimizers = {"adam", "adagrad", "adadelta", "rmsprop", "sgd",
                        "adam", "adagrad", "adadelta", "rmsprop", "sgd"};
        c.learning_rates = {0.001, 0.01, 0.005, 0.0005, 0.05, 0.001, 0.01, 0.005, 0.0005, 0.05};
        c.synth_train = 5000;
        c.synth_test = 500;
        c.batch_size = 64;
        c.epochs = 10;
    } else if (name == "segmented-settings") {
        c.clients = 10;
        c.aggregation = "segmented";
        c.setting = "default";
        c.pss = 0.5;
        c.topo_k = 2;
        c.topo_p = 0.5;
        c.epsilon = 0.1;
        c.s_max = 20;
        c.partition = "iid";
        c.synth_train = 5000;
        c.synth_test = 500;
        c.batch_size = 64;
        c.epochs = 10;
    } else if (name == "comm-cost") {
        c.clients = 10;
        c.aggregation = "segmented";
        c.setting = "default";
        c.pss = 1.0;
        c.topo_k = 2;
        c.topo_p = 0.5;
        c.epsilon = 0.1;
        c.s_max = 20;
        c.partition = "iid";
        c.synth_train = 4000;
        c.synth_test = 400;
        c.batch_size = 64;
        c.epochs = 5;
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    return c;
}

inline std::vector<std::string> preset_names() {
    return {"baseline-single", "fedavg-star",      "dfl-table1-e1",  "dfl-table1-e005",
            "dfl-table1-e0005", "dfl-table2",      "gaussian-sizes", "skewed-sharing-s0",
            "skewed-sharing-s01", "norm-shift",    "mixed-lr",       "mixed-optim",
            "segmented-settings", "comm-cost"};
}

}  // namespace dfl
