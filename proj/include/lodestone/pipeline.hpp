// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "lodestone/config.hpp"
#include "lodestone/evalharness.hpp"
#include "lodestone/index.hpp"
#include "lodestone/labeling.hpp"
#include "lodestone/mock_lm.hpp"
#include "lodestone/remote_lm.hpp"
#include "lodestone/training.hpp"

namespace lodestone {

namespace pipeline_detail {

inline void require_input(const std::string& path, const std::string& what,
                          const std::string& producer) {
    if (path.empty())
        throw ConfigError(what + " path not configured; set it in the config file");
    if (!std::filesystem::exists(path))
        throw ConfigError(what + " not found: " + path + " (run `" + producer + "` first)");
}

inline std::filesystem::path with_suffix(const std::filesystem::path& p,
                                         const std::string& suffix) {
    std::filesystem::path out = p;
    const std::string ext = out.extension().string();
    out.replace_extension();
    return std::filesystem::path(out.string() + suffix + ext);
}

inline std::filesystem::path with_extension(const std::filesystem::path& p,
                                            const std::string& ext) {
    std::filesystem::path out = p;
    out.replace_extension(ext);
    return out;
}

}  // namespace pipeline_detail

inline std::unique_ptr<LmClient> make_lm(const RunConfig& cfg) {
    if (cfg.lm == "remote") {
        RemoteLmConfig rc;
        rc.base_url = cfg.lm_url;
        return std::make_unique<RemoteLm>(rc);
    }
    MockTable table;  // topic-blind default
    if (!cfg.lm_mock_table.empty()) table = MockTable::load(cfg.lm_mock_table);
    return std::make_unique<MockLm>(table);
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline void stage_pool_build(const RunConfig& cfg, std::ostream& log = std::cout) {
    pipeline_detail::require_input(cfg.tasks, "task examples file", "(data preparation)");
    pipeline_detail::require_input(cfg.tasks_manifest, "tasks manifest", "(data preparation)");
    if (cfg.holdout_cluster.empty())
        throw ConfigError("holdout_cluster: required for pool-build");
    const TaskSet ts = load_taskset(cfg.tasks_manifest, cfg.tasks);
    const PromptPool pool = build_pool(ts, cfg.holdout_cluster, cfg.pool_mode, cfg.seed,
                                       cfg.sample_cap, cfg.target_task);
    save_pool(pool, cfg.pool);
    write_stage_manifest(cfg.pool, "pool-build", cfg, {cfg.tasks, cfg.tasks_manifest},
                         {cfg.pool});
    log << "pool-build: " << pool.records.size() << " prompts from " << pool.by_task.size()
        << " tasks -> " << cfg.pool << "\n";
}

inline LabelRunStats stage_label(const RunConfig& cfg, std::ostream& log = std::cout) {
    pipeline_detail::require_input(cfg.tasks, "task examples file", "(data preparation)");
    pipeline_detail::require_input(cfg.pool, "prompt pool", "pool-build");
    const TaskSet ts = load_taskset(cfg.tasks_manifest, cfg.tasks);
    const PromptPool pool = load_pool(cfg.pool);
    const auto examples = labeling_examples(ts, pool);
    std::map<std::string, TaskScoring> scoring;
    for (const auto& [tid, task] : ts.tasks)
        scoring[tid] = TaskScoring{task.metric_name, task.max_new_tokens};

    const auto lm = make_lm(cfg);
    const LabelRunStats stats = label_dataset(*lm, pool, examples, cfg.labeling, cfg.seed,
                                              cfg.labels, cfg.workers, scoring);
    write_stage_manifest(cfg.labels, "label", cfg, {cfg.tasks, cfg.tasks_manifest, cfg.pool},
                         {cfg.labels, cfg.labels + ".progress"});
    log << "label: " << stats.labeled << " labeled, " << stats.filtered << " filtered, "
        << stats.skipped << " resumed -> " << cfg.labels << "\n";
    return stats;
}

inline TrainResult stage_train(const RunConfig& cfg, std::ostream& log = std::cout) {
    pipeline_detail::require_input(cfg.pool, "prompt pool", "pool-build");
    pipeline_detail::require_input(cfg.labels, "labeled instances", "label");
    const PromptPool pool = load_pool(cfg.pool);
    const auto instances = load_labels(cfg.labels);
    if (instances.size() < 2)
        throw DataError("training needs at least 2 labeled instances, got " +
                        std::to_string(instances.size()));

    std::vector<std::string> corpus;
    corpus.reserve(pool.records.size() + instances.size());
    for (const auto& r : pool.records) corpus.push_back(r.text);
    for (const auto& inst : instances) corpus.push_back(inst.input_text);
    const Vocab vocab = build_vocab(corpus, cfg.vocab_max);

    EncoderParams params = init_params(vocab, cfg.embed_dim, cfg.encode_dim, cfg.seed);
    Rng split_rng = derive_rng(cfg.seed, "split");
    auto [train_set, valid_set] = split_train_valid(instances, cfg.train_fraction, split_rng);

    TrainResult result = train(train_set, valid_set, pool, vocab, std::move(params),
                               cfg.training);
    save_checkpoint(result.best, vocab, cfg.checkpoint);
    const auto log_path = std::filesystem::path(cfg.checkpoint + ".log.csv");
    write_training_log(result.log, log_path);
    write_stage_manifest(cfg.checkpoint, "train", cfg, {cfg.pool, cfg.labels},
                         {cfg.checkpoint, log_path});

    log << "train: " << train_set.size() << " train / " << valid_set.size()
        << " valid instances, initial acc " << result.initial_accuracy << "\n";
    for (size_t e = 0; e < result.epoch_accuracy.size(); ++e)
        log << "  epoch " << (e + 1) << ": valid retrieval accuracy "
            << result.epoch_accuracy[e] << "\n";
    log << "train: best epoch " << result.best.epoch << " (acc "
        << result.best.valid_accuracy << ") -> " << cfg.checkpoint << "\n";
    return result;
}

inline void stage_index_build(const RunConfig& cfg, std::ostream& log = std::cout) {
    pipeline_detail::require_input(cfg.pool, "prompt pool", "pool-build");
    pipeline_detail::require_input(cfg.checkpoint, "encoder checkpoint", "train");
    const PromptPool pool = load_pool(cfg.pool);
    auto [ckpt, vocab] = load_checkpoint(cfg.checkpoint);
    const RetrievalIndex index =
        build_index(ckpt.params, vocab, pool, cfg.max_seq_len, cfg.workers);
    save_index(index, cfg.index);
    write_stage_manifest(cfg.index, "index-build", cfg, {cfg.pool, cfg.checkpoint},
                         {cfg.index});
    log << "index-build: " << index.vectors.rows << " x " << index.vectors.cols << " -> "
        << cfg.index << "\n";
}

/// Evaluates the held-out cluster at the given K (cfg.k unless overridden)
/// and writes the report triple next to `report_path`.
inline EvalReport stage_eval(const RunConfig& cfg, int k,
                             const std::filesystem::path& report_path,
                             std::ostream& log = std::cout) {
    pipeline_detail::require_input(cfg.tasks, "task examples file", "(data preparation)");
    if (cfg.holdout_cluster.empty()) throw ConfigError("holdout_cluster: required for eval");
    const TaskSet ts = load_taskset(cfg.tasks_manifest, cfg.tasks);
    const auto lm = make_lm(cfg);

    EvalConfig ec;
    ec.k = k;
    ec.max_new_tokens = cfg.labeling.max_new_tokens;
    ec.max_seq_len = cfg.max_seq_len;
    ec.failure_tolerance = cfg.eval_failure_tolerance;
    ec.workers = cfg.workers;

    EvalReport report;
    std::vector<std::filesystem::path> inputs{cfg.tasks, cfg.tasks_manifest};
    if (k > 0) {
        pipeline_detail::require_input(cfg.pool, "prompt pool", "pool-build");
        pipeline_detail::require_input(cfg.checkpoint, "encoder checkpoint", "train");
        pipeline_detail::require_input(cfg.index, "retrieval index", "index-build");
        const PromptPool pool = load_pool(cfg.pool);
        auto [ckpt, vocab] = load_checkpoint(cfg.checkpoint);
        const RetrievalIndex index = load_index(cfg.index, ckpt.params);
        Retriever retriever{&ckpt.params, &vocab, &index, &pool};
        report = evaluate_cluster(*lm, &retriever, ts, cfg.holdout_cluster, ec, cfg.pool_mode,
                                  cfg.seed);
        inputs.insert(inputs.end(), {cfg.pool, cfg.checkpoint, cfg.index});
    } else {
        report = evaluate_cluster(*lm, nullptr, ts, cfg.holdout_cluster, ec, cfg.pool_mode,
                                  cfg.seed);
    }

    const auto csv_path = pipeline_detail::with_extension(report_path, "csv");
    const auto txt_path = pipeline_detail::with_extension(report_path, "txt");
    write_json(report_path, report_to_json(report));
    write_file(csv_path, report_to_csv(report));
    const std::string table = report_to_table(report);
    write_file(txt_path, table);
    write_stage_manifest(report_path, "eval", cfg, inputs,
                         {report_path, csv_path, txt_path});
    log << table;
    return report;
}

inline std::vector<DeltaRow> stage_compare(const std::filesystem::path& baseline_path,
                                           const std::filesystem::path& candidate_path,
                                           const std::filesystem::path& out_csv,
                                           std::ostream& log = std::cout) {
    const EvalReport baseline = report_from_json(read_json(baseline_path));
    const EvalReport candidate = report_from_json(read_json(candidate_path));
    const auto deltas = compare_runs(baseline, candidate);
    if (!out_csv.empty()) write_file(out_csv, deltas_to_csv(deltas));
    log << deltas_to_table(deltas);
    return deltas;
}

struct PipelineSummary {
    double valid_accuracy = 0.0;          // best checkpoint
    EvalReport baseline;                  // K = 0
    EvalReport prompted;                  // K = cfg.k
    std::vector<DeltaRow> deltas;
};

/// All stages chained: pool-build, label, train, index-build, eval at K=0
/// and at the configured K, then the comparison.
inline PipelineSummary stage_pipeline(const RunConfig& cfg, std::ostream& log = std::cout) {
    stage_pool_build(cfg, log);
    stage_label(cfg, log);
    PipelineSummary summary;
    summary.valid_accuracy = stage_train(cfg, log).best.valid_accuracy;
    stage_index_build(cfg, log);

    const std::filesystem::path report_path(cfg.report);
    const auto baseline_path = pipeline_detail::with_suffix(report_path, "_k0");
    summary.baseline = stage_eval(cfg, 0, baseline_path, log);
    summary.prompted = stage_eval(cfg, cfg.k, report_path, log);
    const auto compare_path =
        pipeline_detail::with_extension(pipeline_detail::with_suffix(report_path, "_compare"),
                                        "csv");
    summary.deltas = stage_compare(baseline_path, report_path, compare_path, log);
    return summary;
}

}  // namespace lodestone
