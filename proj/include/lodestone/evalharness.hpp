// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lodestone/index.hpp"
#include "lodestone/lmclient.hpp"
#include "lodestone/parallel.hpp"
#include "lodestone/scoring.hpp"
#include "lodestone/taskdata.hpp"

namespace lodestone {

/// Everything needed to turn a task input into a prompted context.
struct Retriever {
    const EncoderParams* params = nullptr;
    const Vocab* vocab = nullptr;
    const RetrievalIndex* index = nullptr;
    const PromptPool* pool = nullptr;
};

struct EvalConfig {
    int k = 3;  // 0 = vanilla zero-shot baseline
    int max_new_tokens = 32;
    size_t max_seq_len = 256;
    double failure_tolerance = 0.01;  // max fraction of failed examples per run
    int workers = 1;
};

struct ExampleEval {
    bool failed = false;
    std::string failure;
    std::map<std::string, double> metrics;  // "f1"/"em" or "accuracy"
};

/// Builds the LM context for one example: the K retrieved demonstrations
/// stacked ahead of the input, or the bare input when K = 0.
inline std::string build_context(const Retriever* retriever, const TaskExample& example, int k,
                                 size_t max_len) {
    if (k <= 0) return example.input_text;
    if (!retriever || !retriever->params || !retriever->vocab || !retriever->index ||
        !retriever->pool)
        throw ConfigError("evaluation with K > 0 requires a retriever (params + index + pool)");
    const auto query =
        encode(retriever->params->input_tower, tokenize(*retriever->vocab, example.input_text,
                                                        max_len));
    const auto top = retrieve_topk(*retriever->index, query, k);
    std::vector<std::string> texts;
    texts.reserve(top.size());
    for (int pid : top) texts.push_back(retriever->pool->record(pid).text);
    return assemble_input(texts, example.input_text);
}

/// Scores one example: greedy completion -> F1 and EM for text completion,
/// highest-likelihood option -> accuracy for multiple choice.
inline ExampleEval evaluate_example(const LmClient& lm, const Retriever* retriever,
                                    const TaskExample& example, const EvalConfig& cfg) {
    ExampleEval out;
    try {
        const std::string context = build_context(retriever, example, cfg.k, cfg.max_seq_len);
        if (example.question_type == QuestionType::TextCompletion) {
            CompletionRequest req;
            req.context = context;
            req.max_new_tokens = cfg.max_new_tokens;
            const std::string prediction = lm.greedy_complete(req);
            out.metrics["f1"] = token_f1(prediction, example.completion);
            out.metrics["em"] = exact_match(prediction, example.completion);
        } else {
            const int choice = predict_choice(lm, context, example.options);
            out.metrics["accuracy"] = choice == example.gold_option_index ? 1.0 : 0.0;
        }
    } catch (const LmTransportError& e) {
        out.failed = true;
        out.failure = e.what();
    } catch (const LmProtocolError& e) {
        out.failed = true;
        out.failure = e.what();
    }
    return out;
}

/// The task's designated evaluation split: test when available, else
/// validation.
inline std::vector<const TaskExample*> evaluation_split(const Task& task) {
    std::vector<const TaskExample*> out;
    for (Split want : {Split::Test, Split::Validation}) {
        for (const auto& e : task.examples)
            if (e.split == want) out.push_back(&e);
        if (!out.empty()) return out;
    }
    throw DataError("task " + task.task_id + " has no test or validation examples");
}

struct TaskRow {
    std::string task_id;
    std::string cluster_id;
    std::string metric;
    double score = 0.0;  // in [0, 1]; rendered x100 for display
    size_t count = 0;    // evaluated examples (failures excluded)
};

struct ClusterRow {
    std::string cluster_id;
    double mean = 0.0;  // unweighted mean over the cluster's metric rows
    size_t rows = 0;
};

struct EvalReport {
    int k = 0;
    std::string pool_mode;
    std::string lm_identity;
    std::string params_fingerprint;  // empty for the K=0 baseline
    uint64_t seed = 0;
    std::vector<TaskRow> rows;
    std::vector<ClusterRow> clusters;
    size_t failed_examples = 0;
    size_t total_examples = 0;
};

inline std::vector<ClusterRow> cluster_means(const std::vector<TaskRow>& rows) {
    std::map<std::string, std::pair<double, size_t>> acc;
    for (const auto& r : rows) {
        acc[r.cluster_id].first += r.score;
        acc[r.cluster_id].second += 1;
    }
    std::vector<ClusterRow> out;
    for (const auto& [cid, sum_n] : acc)
        out.push_back(ClusterRow{cid, sum_n.first / static_cast<double>(sum_n.second),
                                 sum_n.second});
    return out;
}

struct TaskEval {
    std::vector<TaskRow> rows;
    size_t attempted = 0;
    size_t failures = 0;
};

/// Mean metric rows for one task over its evaluation split; text-completion
/// tasks report both F1 and EM, multiple-choice tasks report accuracy. A
/// task-level max_new_tokens overrides the run default.
inline TaskEval evaluate_task(const LmClient& lm, const Retriever* retriever, const Task& task,
                              const EvalConfig& cfg) {
    EvalConfig task_cfg = cfg;
    if (task.max_new_tokens > 0) task_cfg.max_new_tokens = task.max_new_tokens;
    const auto split = evaluation_split(task);
    std::vector<ExampleEval> evals(split.size());
    parallel_for(split.size(), cfg.workers, [&](size_t i) {
        evals[i] = evaluate_example(lm, retriever, *split[i], task_cfg);
    });

    const std::vector<std::string> names = task.question_type == QuestionType::TextCompletion
                                               ? std::vector<std::string>{"f1", "em"}
                                               : std::vector<std::string>{"accuracy"};
    std::map<std::string, double> sums;
    TaskEval out;
    out.attempted = split.size();
    size_t evaluated = 0;
    for (const auto& ev : evals) {
        if (ev.failed) {
            out.failures += 1;
            continue;
        }
        evaluated += 1;
        for (const auto& name : names) sums[name] += ev.metrics.at(name);
    }
    if (evaluated == 0) throw DataError("task " + task.task_id + ": every example failed");

    for (const auto& name : names)
        out.rows.push_back(TaskRow{task.task_id, task.cluster_id, name,
                                   sums[name] / static_cast<double>(evaluated), evaluated});
    return out;
}

/// Evaluates every task of one cluster and aggregates per-cluster means.
/// Aborts when the failure rate across the run exceeds the configured bound.
inline EvalReport evaluate_cluster(const LmClient& lm, const Retriever* retriever,
                                   const TaskSet& taskset, const std::string& cluster_id,
                                   const EvalConfig& cfg, PoolMode pool_mode, uint64_t seed) {
    EvalReport report;
    report.k = cfg.k;
    report.pool_mode = to_string(pool_mode);
    report.lm_identity = lm.identity();
    report.seed = seed;
    if (cfg.k > 0 && retriever && retriever->params)
        report.params_fingerprint = params_fingerprint(*retriever->params);

    bool found = false;
    for (const auto& [task_id, task] : taskset.tasks) {
        if (task.cluster_id != cluster_id) continue;
        found = true;
        TaskEval eval = evaluate_task(lm, retriever, task, cfg);
        report.failed_examples += eval.failures;
        report.total_examples += eval.attempted;
        for (auto& r : eval.rows) report.rows.push_back(std::move(r));
    }
    if (!found) throw ConfigError("no tasks in cluster: " + cluster_id);

    if (static_cast<double>(report.failed_examples) >
        cfg.failure_tolerance * static_cast<double>(report.total_examples))
        throw Error("evaluation failure rate exceeded tolerance: " +
                    std::to_string(report.failed_examples) + " of " +
                    std::to_string(report.total_examples) + " examples failed");

    report.clusters = cluster_means(report.rows);
    return report;
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

struct DeltaRow {
    std::string task_id;  // empty for cluster rows
    std::string cluster_id;
    std::string metric;
    double baseline = 0.0;
    double candidate = 0.0;
    double delta = 0.0;
};

/// Signed per-row and per-cluster deltas between two reports covering the
/// same (task, metric) rows.
inline std::vector<DeltaRow> compare_runs(const EvalReport& baseline,
                                          const EvalReport& candidate) {
    if (baseline.rows.size() != candidate.rows.size())
        throw DataError("compare_runs: reports cover different row sets");
    std::vector<DeltaRow> out;
    for (size_t i = 0; i < baseline.rows.size(); ++i) {
        const TaskRow& a = baseline.rows[i];
        const TaskRow& b = candidate.rows[i];
        if (a.task_id != b.task_id || a.metric != b.metric)
            throw DataError("compare_runs: row mismatch at " + a.task_id + "/" + a.metric +
                            " vs " + b.task_id + "/" + b.metric);
        out.push_back(DeltaRow{a.task_id, a.cluster_id, a.metric, a.score, b.score,
                               b.score - a.score});
    }
    for (size_t i = 0; i < baseline.clusters.size(); ++i) {
        const ClusterRow& a = baseline.clusters[i];
        const ClusterRow& b = candidate.clusters[i];
        if (a.cluster_id != b.cluster_id)
            throw DataError("compare_runs: cluster mismatch " + a.cluster_id + " vs " +
                            b.cluster_id);
        out.push_back(DeltaRow{"", a.cluster_id, "mean", a.mean, b.mean, b.mean - a.mean});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rendering and persistence
// ---------------------------------------------------------------------------

inline json report_to_json(const EvalReport& r) {
    json rows = json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"task_id", row.task_id},
                        {"cluster_id", row.cluster_id},
                        {"metric", row.metric},
                        {"score", row.score},
                        {"count", row.count}});
    json clusters = json::array();
    for (const auto& c : r.clusters)
        clusters.push_back({{"cluster_id", c.cluster_id}, {"mean", c.mean}, {"rows", c.rows}});
    return json{{"k", r.k},
                {"pool_mode", r.pool_mode},
                {"lm_identity", r.lm_identity},
                {"params_fingerprint", r.params_fingerprint},
                {"seed", r.seed},
                {"rows", rows},
                {"clusters", clusters},
                {"failed_examples", r.failed_examples},
                {"total_examples", r.total_examples}};
}

inline EvalReport report_from_json(const json& j) {
    EvalReport r;
    r.k = j.at("k").get<int>();
    r.pool_mode = j.at("pool_mode").get<std::string>();
    r.lm_identity = j.at("lm_identity").get<std::string>();
    r.params_fingerprint = j.value("params_fingerprint", "");
    r.seed = j.at("seed").get<uint64_t>();
    for (const auto& row : j.at("rows"))
        r.rows.push_back(TaskRow{row.at("task_id").get<std::string>(),
                                 row.at("cluster_id").get<std::string>(),
                                 row.at("metric").get<std::string>(),
                                 row.at("score").get<double>(), row.at("count").get<size_t>()});
    for (const auto& c : j.at("clusters"))
        r.clusters.push_back(ClusterRow{c.at("cluster_id").get<std::string>(),
                                        c.at("mean").get<double>(),
                                        c.at("rows").get<size_t>()});
    r.failed_examples = j.value("failed_examples", size_t{0});
    r.total_examples = j.value("total_examples", size_t{0});
    return r;
}

inline std::string report_to_csv(const EvalReport& r) {
    std::string csv = "scope,task_id,cluster_id,metric,score,count,k,pool_mode\n";
    char buf[256];
    for (const auto& row : r.rows) {
        std::snprintf(buf, sizeof(buf), "task,%s,%s,%s,%.6f,%zu,%d,%s\n", row.task_id.c_str(),
                      row.cluster_id.c_str(), row.metric.c_str(), row.score, row.count, r.k,
                      r.pool_mode.c_str());
        csv += buf;
    }
    for (const auto& c : r.clusters) {
        std::snprintf(buf, sizeof(buf), "cluster,,%s,mean,%.6f,%zu,%d,%s\n",
                      c.cluster_id.c_str(), c.mean, c.rows, r.k, r.pool_mode.c_str());
        csv += buf;
    }
    return csv;
}

/// Table with scores x100, the display convention for these metrics.
inline std::string report_to_table(const EvalReport& r) {
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof(buf), "K=%d  pool=%s  lm=%s\n", r.k, r.pool_mode.c_str(),
                  r.lm_identity.c_str());
    out += buf;
    out += "task                      cluster               metric     score      n\n";
    out += "----------------------------------------------------------------------\n";
    for (const auto& row : r.rows) {
        std::snprintf(buf, sizeof(buf), "%-25s %-21s %-9s %6.1f %6zu\n", row.task_id.c_str(),
                      row.cluster_id.c_str(), row.metric.c_str(), 100.0 * row.score, row.count);
        out += buf;
    }
    for (const auto& c : r.clusters) {
        std::snprintf(buf, sizeof(buf), "%-25s %-21s %-9s %6.1f %6zu\n", "(average)",
                      c.cluster_id.c_str(), "mean", 100.0 * c.mean, c.rows);
        out += buf;
    }
    return out;
}

inline std::string deltas_to_csv(const std::vector<DeltaRow>& deltas) {
    std::string csv = "scope,task_id,cluster_id,metric,baseline,candidate,delta\n";
    char buf[256];
    for (const auto& d : deltas) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%.6f,%.6f,%+.6f\n",
                      d.task_id.empty() ? "cluster" : "task", d.task_id.c_str(),
                      d.cluster_id.c_str(), d.metric.c_str(), d.baseline, d.candidate, d.delta);
        csv += buf;
    }
    return csv;
}

inline std::string deltas_to_table(const std::vector<DeltaRow>& deltas) {
    std::string out;
    out += "task                      cluster               metric     base    ours   delta\n";
    out += "-------------------------------------------------------------------------------\n";
    char buf[256];
    for (const auto& d : deltas) {
        std::snprintf(buf, sizeof(buf), "%-25s %-21s %-9s %6.1f  %6.1f  %+6.1f\n",
                      d.task_id.empty() ? "(average)" : d.task_id.c_str(), d.cluster_id.c_str(),
                      d.metric.c_str(), 100.0 * d.baseline, 100.0 * d.candidate,
                      100.0 * d.delta);
        out += buf;
    }
    return out;
}

}  // namespace lodestone
