#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfl/config.hpp"
#include "dfl/errors.hpp"
#include "dfl/simulator.hpp"

namespace dfl {

namespace detail {

inline std::string fmt_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace detail

// Fixed column set; per-client rows leave the aggregate columns empty and the
// client_id=-1 row carries them. No timestamps: reruns are byte-identical.
inline void write_metrics_csv(const MetricsLog& log, std::ostream& out) {
    out << "epoch,client_id,train_loss,test_acc,best_acc,mean_acc,dist_min,dist_max,consensus_iters,floats_shared\n";
    for (const auto& e : log.epochs) {
        for (std::size_t i = 0; i < e.train_loss.size(); ++i) {
            out << e.epoch << ',' << i << ',' << detail::fmt_double(e.train_loss[i]) << ','
                << detail::fmt_double(e.test_acc[i]) << ",,,,,,\n";
        }
        out << e.epoch << ",-1,,," << detail::fmt_double(e.best_acc) << ',' << detail::fmt_double(e.mean_acc)
            << ',' << detail::fmt_double(e.dist_min) << ',' << detail::fmt_double(e.dist_max) << ','
            << e.consensus_iters << ',' << e.floats_shared << "\n";
    }
}

inline std::string metrics_csv_string(const MetricsLog& log) {
    std::ostringstream out;
    write_metrics_csv(log, out);
    return out.str();
}

inline nlohmann::json summary_json(const ExperimentConfig& cfg, const MetricsLog& log) {
    nlohmann::json j;
    j["scenario"] = cfg.scenario;
    j["seed"] = cfg.seed;
    j["epochs_completed"] = log.epochs.size();
    j["diverged"] = log.diverged;
    if (log.diverged) j["diverged_epoch"] = log.diverged_epoch;

    double max_best = 0.0, max_mean = 0.0;
    int max_best_epoch = -1;
    for (const auto& e : log.epochs) {
        if (e.best_acc > max_best) {
            max_best = e.best_acc;
            max_best_epoch = e.epoch;
        }
        max_mean = std::max(max_mean, e.mean_acc);
    }
    j["max_best_acc"] = max_best;
    j["max_best_acc_epoch"] = max_best_epoch;
    j["max_mean_acc"] = max_mean;

    nlohmann::json ep;
    for (double p : {90.0, 95.0, 97.0, 98.0, 99.0}) {
        const auto t = epoch_threshold(log, p);
        const std::string key = "e_" + std::to_string(static_cast<int>(p));
        if (t)
            ep[key] = *t;
        else
            ep[key] = nullptr;  // threshold never reached
    }
    j["epoch_thresholds"] = ep;
    j["total_floats_shared"] = log.total_floats();

    if (!log.epochs.empty()) j["final_test_acc"] = log.epochs.back().test_acc;
    j["warnings"] = log.warnings;
    return j;
}

// Written before training starts; the config echo alone reproduces the run.
inline nlohmann::json manifest_json(const ExperimentConfig& cfg, const std::string& out_dir) {
    nlohmann::json j;
    j["artifact_version"] = kArtifactVersion;
    j["scenario"] = cfg.scenario;
    j["seed"] = cfg.seed;
    j["config"] = config_to_text(cfg);
    j["outputs"] = {{"metrics_csv", out_dir + "/metrics.csv"},
                    {"summary_json", out_dir + "/summary.json"},
                    {"manifest_json", out_dir + "/manifest.json"}};
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    j["created"] = buf;  // the only timestamp in any output
    return j;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << content;
    if (!out) throw IoError("failed writing " + path);
}

// e_p recomputation from a metrics CSV (the aggregate rows).
inline std::optional<int> thresholds_from_csv(const std::string& csv_path, double p) {
    if (p <= 0.0 || p >= 100.0) throw ConfigError("thresholds: p must be in (0,100)");
    std::ifstream in(csv_path);
    if (!in) throw IoError("cannot open " + csv_path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty CSV " + csv_path);
    if (line.rfind("epoch,client_id", 0) != 0) throw FormatError("unexpected CSV header in " + csv_path);
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() < 5 || fields[1] != "-1") continue;
        const int epoch = std::stoi(fields[0]);
        const double best = std::stod(fields[4]);
        if (best > p / 100.0) return epoch;
    }
    return std::nullopt;
}

}  // namespace dfl
