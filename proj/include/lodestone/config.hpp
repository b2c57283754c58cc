// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lodestone/errors.hpp"
#include "lodestone/io.hpp"
#include "lodestone/labeling.hpp"
#include "lodestone/taskdata.hpp"
#include "lodestone/text.hpp"
#include "lodestone/training.hpp"

namespace lodestone {

/// One flat, reproducible run configuration: `key = value` lines, `#`
/// comments. Command-line flags override file values.
struct RunConfig {
    // Artifact paths.
    std::string tasks;           // examples JSONL
    std::string tasks_manifest;  // defaults to "<tasks>.manifest.json" convention
    std::string pool;
    std::string labels;
    std::string checkpoint;
    std::string index;
    std::string report;  // JSON path; .csv/.txt variants derived from it

    // Pool construction.
    std::string holdout_cluster;
    PoolMode pool_mode = PoolMode::RemainingClusters;
    std::string target_task;
    size_t sample_cap = 10000;

    LabelingConfig labeling;
    TrainConfig training;
    double train_fraction = 0.9;

    // Encoder shape.
    size_t embed_dim = 64;
    size_t encode_dim = 64;
    size_t vocab_max = 8192;
    size_t max_seq_len = 256;

    // Inference.
    int k = 3;
    double eval_failure_tolerance = 0.01;

    // LM selection.
    std::string lm = "mock";  // mock | remote
    std::string lm_url;
    std::string lm_mock_table;  // optional path to a MockTable JSON

    uint64_t seed = 0;
    bool seed_set = false;
    int workers = 1;

    std::map<std::string, std::string> as_flat_map() const;
    uint64_t config_hash() const;
};

namespace config_detail {

inline const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        "tasks",       "tasks_manifest", "pool",          "labels",
        "checkpoint",  "index",          "report",        "holdout_cluster",
        "pool_mode",   "target_task",    "sample_cap",    "L",
        "B",           "R",              "epochs",        "learning_rate",
        "batch_size",  "warmup_steps",   "weight_decay",  "adam_eps",
        "adam_beta1",  "adam_beta2",     "train_fraction", "embed_dim",
        "encode_dim",  "vocab_max",      "max_seq_len",   "k",
        "max_new_tokens", "eval_failure_tolerance", "lm",  "lm_url",
        "lm_mock_table", "seed",         "workers"};
    return keys;
}

inline uint64_t parse_u64(const std::string& key, const std::string& value,
                          std::vector<std::string>& errors) {
    try {
        size_t pos = 0;
        const uint64_t v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        errors.push_back(key + ": expected an unsigned integer, got '" + value + "'");
        return 0;
    }
}

inline long parse_int(const std::string& key, const std::string& value,
                      std::vector<std::string>& errors) {
    try {
        size_t pos = 0;
        const long v = std::stol(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        errors.push_back(key + ": expected an integer, got '" + value + "'");
        return 0;
    }
}

inline double parse_double(const std::string& key, const std::string& value,
                           std::vector<std::string>& errors) {
    try {
        size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        errors.push_back(key + ": expected a number, got '" + value + "'");
        return 0.0;
    }
}

}  // namespace config_detail

/// Parses `key = value` lines. Unknown keys and malformed values are
/// collected and reported together.
inline std::map<std::string, std::string> parse_flat_config(const std::string& content,
                                                            const std::string& origin) {
    std::map<std::string, std::string> kv;
    std::vector<std::string> errors;
    size_t lineno = 0;
    for (const auto& raw_line : split_lines(content)) {
        ++lineno;
        const auto line = trim(raw_line);
        if (line.empty() || line.front() == '#') continue;
        const size_t eq = line.find('=');
        if (eq == std::string_view::npos) {
            errors.push_back(origin + ":" + std::to_string(lineno) +
                             ": expected 'key = value'");
            continue;
        }
        const std::string key(trim(line.substr(0, eq)));
        const std::string value(trim(line.substr(eq + 1)));
        if (!config_detail::known_keys().count(key)) {
            errors.push_back(origin + ":" + std::to_string(lineno) + ": unknown key '" + key +
                             "'");
            continue;
        }
        kv[key] = value;
    }
    if (!errors.empty()) throw ConfigError("invalid config:\n  " + join(errors, "\n  "));
    return kv;
}

/// Applies a flat key/value map onto a RunConfig, accumulating value errors.
inline void apply_config_entries(RunConfig& cfg,
                                 const std::map<std::string, std::string>& kv,
                                 std::vector<std::string>& errors) {
    using namespace config_detail;
    for (const auto& [key, value] : kv) {
        if (key == "tasks") cfg.tasks = value;
        else if (key == "tasks_manifest") cfg.tasks_manifest = value;
        else if (key == "pool") cfg.pool = value;
        else if (key == "labels") cfg.labels = value;
        else if (key == "checkpoint") cfg.checkpoint = value;
        else if (key == "index") cfg.index = value;
        else if (key == "report") cfg.report = value;
        else if (key == "holdout_cluster") cfg.holdout_cluster = value;
        else if (key == "pool_mode") {
            try {
                cfg.pool_mode = pool_mode_from_string(value);
            } catch (const ConfigError& e) {
                errors.push_back(e.what());
            }
        } else if (key == "target_task") cfg.target_task = value;
        else if (key == "sample_cap") cfg.sample_cap = parse_u64(key, value, errors);
        else if (key == "L") cfg.labeling.candidate_subset_size =
            static_cast<int>(parse_int(key, value, errors));
        else if (key == "B") cfg.labeling.negatives_count =
            static_cast<int>(parse_int(key, value, errors));
        else if (key == "R") cfg.labeling.max_rounds =
            static_cast<int>(parse_int(key, value, errors));
        else if (key == "epochs") cfg.training.epochs =
            static_cast<int>(parse_int(key, value, errors));
        else if (key == "learning_rate") cfg.training.learning_rate =
            parse_double(key, value, errors);
        else if (key == "batch_size") cfg.training.batch_size =
            static_cast<int>(parse_int(key, value, errors));
        else if (key == "warmup_steps") cfg.training.warmup_steps =
            static_cast<int>(parse_int(key, value, errors));
        else if (key == "weight_decay") cfg.training.weight_decay =
            parse_double(key, value, errors);
        else if (key == "adam_eps") cfg.training.adam_eps = parse_double(key, value, errors);
        else if (key == "adam_beta1") cfg.training.adam_beta1 = parse_double(key, value, errors);
        else if (key == "adam_beta2") cfg.training.adam_beta2 = parse_double(key, value, errors);
        else if (key == "train_fraction") cfg.train_fraction = parse_double(key, value, errors);
        else if (key == "embed_dim") cfg.embed_dim = parse_u64(key, value, errors);
        else if (key == "encode_dim") cfg.encode_dim = parse_u64(key, value, errors);
        else if (key == "vocab_max") cfg.vocab_max = parse_u64(key, value, errors);
        else if (key == "max_seq_len") cfg.max_seq_len = parse_u64(key, value, errors);
        else if (key == "k") cfg.k = static_cast<int>(parse_int(key, value, errors));
        else if (key == "max_new_tokens") {
            cfg.labeling.max_new_tokens = static_cast<int>(parse_int(key, value, errors));
        } else if (key == "eval_failure_tolerance")
            cfg.eval_failure_tolerance = parse_double(key, value, errors);
        else if (key == "lm") cfg.lm = value;
        else if (key == "lm_url") cfg.lm_url = value;
        else if (key == "lm_mock_table") cfg.lm_mock_table = value;
        else if (key == "seed") {
            cfg.seed = parse_u64(key, value, errors);
            cfg.seed_set = true;
        } else if (key == "workers") cfg.workers =
            static_cast<int>(parse_int(key, value, errors));
    }
}

/// Full validation; every violation is reported, not just the first.
inline void validate_config(const RunConfig& cfg) {
    std::vector<std::string> errors;
    if (!cfg.seed_set) errors.push_back("seed: required (runs must not draw implicit entropy)");
    if (cfg.lm != "mock" && cfg.lm != "remote")
        errors.push_back("lm: must be 'mock' or 'remote', got '" + cfg.lm + "'");
    if (cfg.lm == "remote" && cfg.lm_url.empty())
        errors.push_back("lm_url: required when lm = remote");
    if (cfg.pool_mode == PoolMode::TargetTask && cfg.target_task.empty())
        errors.push_back("target_task: required when pool_mode = target-task");
    if (cfg.k < 0) errors.push_back("k: must be >= 0");
    if (cfg.workers < 1) errors.push_back("workers: must be >= 1");
    if (cfg.labeling.candidate_subset_size < 1) errors.push_back("L: must be >= 1");
    if (cfg.labeling.negatives_count < 1) errors.push_back("B: must be >= 1");
    if (cfg.labeling.max_rounds < 1) errors.push_back("R: must be >= 1");
    if (cfg.labeling.max_new_tokens < 1) errors.push_back("max_new_tokens: must be >= 1");
    if (cfg.training.epochs < 1) errors.push_back("epochs: must be >= 1");
    if (!(cfg.training.learning_rate >= 0.0)) errors.push_back("learning_rate: must be >= 0");
    if (cfg.training.batch_size < 1) errors.push_back("batch_size: must be >= 1");
    if (cfg.training.warmup_steps < 0) errors.push_back("warmup_steps: must be >= 0");
    if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0))
        errors.push_back("train_fraction: must be in (0, 1)");
    if (cfg.sample_cap < 1) errors.push_back("sample_cap: must be >= 1");
    if (cfg.embed_dim < 1) errors.push_back("embed_dim: must be >= 1");
    if (cfg.encode_dim < 1) errors.push_back("encode_dim: must be >= 1");
    if (cfg.vocab_max < 1) errors.push_back("vocab_max: must be >= 1");
    if (cfg.max_seq_len < 1) errors.push_back("max_seq_len: must be >= 1");
    if (!(cfg.eval_failure_tolerance >= 0.0 && cfg.eval_failure_tolerance <= 1.0))
        errors.push_back("eval_failure_tolerance: must be in [0, 1]");
    if (!errors.empty())
        throw ConfigError("invalid config:\n  " + join(errors, "\n  "));
}

inline RunConfig load_config(const std::filesystem::path& path,
                             const std::map<std::string, std::string>& overrides = {}) {
    RunConfig cfg;
    std::vector<std::string> errors;
    apply_config_entries(cfg, parse_flat_config(read_file(path), path.string()), errors);
    apply_config_entries(cfg, overrides, errors);
    if (!errors.empty()) throw ConfigError("invalid config:\n  " + join(errors, "\n  "));
    if (cfg.tasks_manifest.empty() && !cfg.tasks.empty()) {
        std::filesystem::path p(cfg.tasks);
        p.replace_extension("manifest.json");
        cfg.tasks_manifest = p.string();
    }
    // The training sub-config shares the global seed and tokenizer length.
    cfg.training.seed = cfg.seed;
    cfg.training.max_seq_len = cfg.max_seq_len;
    validate_config(cfg);
    return cfg;
}

inline std::map<std::string, std::string> RunConfig::as_flat_map() const {
    char buf[64];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    return {{"tasks", tasks},
            {"tasks_manifest", tasks_manifest},
            {"pool", pool},
            {"labels", labels},
            {"checkpoint", checkpoint},
            {"index", index},
            {"report", report},
            {"holdout_cluster", holdout_cluster},
            {"pool_mode", to_string(pool_mode)},
            {"target_task", target_task},
            {"sample_cap", std::to_string(sample_cap)},
            {"L", std::to_string(labeling.candidate_subset_size)},
            {"B", std::to_string(labeling.negatives_count)},
            {"R", std::to_string(labeling.max_rounds)},
            {"epochs", std::to_string(training.epochs)},
            {"learning_rate", fmt(training.learning_rate)},
            {"batch_size", std::to_string(training.batch_size)},
            {"warmup_steps", std::to_string(training.warmup_steps)},
            {"weight_decay", fmt(training.weight_decay)},
            {"adam_eps", fmt(training.adam_eps)},
            {"adam_beta1", fmt(training.adam_beta1)},
            {"adam_beta2", fmt(training.adam_beta2)},
            {"train_fraction", fmt(train_fraction)},
            {"embed_dim", std::to_string(embed_dim)},
            {"encode_dim", std::to_string(encode_dim)},
            {"vocab_max", std::to_string(vocab_max)},
            {"max_seq_len", std::to_string(max_seq_len)},
            {"k", std::to_string(k)},
            {"max_new_tokens", std::to_string(labeling.max_new_tokens)},
            {"eval_failure_tolerance", fmt(eval_failure_tolerance)},
            {"lm", lm},
            {"lm_url", lm_url},
            {"lm_mock_table", lm_mock_table},
            {"seed", std::to_string(seed)},
            {"workers", std::to_string(workers)}};
}

inline uint64_t RunConfig::config_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [k2, v] : as_flat_map()) {
        h = fnv1a64(k2, h);
        h = fnv1a64("=", h);
        h = fnv1a64(v, h);
        h = fnv1a64("\n", h);
    }
    return h;
}

/// Run manifest: enough to reproduce the stage exactly with the mock LM.
/// Written next to each stage's primary output as `<output>.manifest.json`.
inline void write_stage_manifest(const std::filesystem::path& primary_output,
                                 const std::string& command, const RunConfig& cfg,
                                 const std::vector<std::filesystem::path>& inputs,
                                 const std::vector<std::filesystem::path>& outputs) {
    json in = json::object(), out = json::object();
    for (const auto& p : inputs)
        if (std::filesystem::exists(p)) in[p.string()] = file_fingerprint(p);
    for (const auto& p : outputs)
        if (std::filesystem::exists(p)) out[p.string()] = file_fingerprint(p);
    write_json(std::filesystem::path(primary_output.string() + ".manifest.json"),
               json{{"command", command},
                    {"config_hash", to_hex(cfg.config_hash())},
                    {"seed", cfg.seed},
                    {"workers", cfg.workers},
                    {"inputs", in},
                    {"outputs", out}});
}

}  // namespace lodestone
