// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lodestone/parallel.hpp"
#include "lodestone/rng.hpp"
#include "lodestone/scoring.hpp"
#include "lodestone/taskdata.hpp"

namespace lodestone {

struct LabelingConfig {
    int candidate_subset_size = 50;  // L: same-task candidates scored per round
    int negatives_count = 20;        // B: random negatives, and cap on hard negatives
    int max_rounds = 7;              // R: re-sampling rounds before filtering
    int max_new_tokens = 32;

    void validate() const {
        if (candidate_subset_size < 1) throw ConfigError("labeling: L must be >= 1");
        if (negatives_count < 1) throw ConfigError("labeling: B must be >= 1");
        if (max_rounds < 1) throw ConfigError("labeling: R must be >= 1");
    }
};

/// One contrastive training example: the LM's best prompt as positive, the
/// same task's worst-scoring prompts as hard negatives and B cross-task
/// prompts as random negatives.
struct LabeledInstance {
    std::string example_id;
    std::string task_id;
    std::string input_text;
    int positive_id = -1;
    double positive_score = 0.0;
    std::vector<int> hard_negative_ids;    // <= B, same task as the example
    std::vector<int> random_negative_ids;  // exactly B, different task
};

/// Uniform same-task candidate sample of size min(L, available), excluding
/// already-scored ids and the demonstration derived from the example itself.
inline std::vector<PromptRecord> sample_candidates(const PromptPool& pool,
                                                   const TaskExample& example, int subset_size,
                                                   Rng& rng, const std::set<int>& exclude) {
    auto it = pool.by_task.find(example.task_id);
    if (it == pool.by_task.end())
        throw LabelingError("no pool prompts for task " + example.task_id);

    std::vector<int> eligible;
    for (int pid : it->second) {
        const PromptRecord& rec = pool.record(pid);
        if (rec.source_example == example.example_id) continue;  // self
        if (exclude.count(pid)) continue;
        eligible.push_back(pid);
    }
    if (eligible.empty() && exclude.empty())
        throw LabelingError("no eligible same-task prompt for example " + example.example_id);

    const size_t take = std::min<size_t>(eligible.size(), static_cast<size_t>(subset_size));
    std::vector<PromptRecord> out;
    out.reserve(take);
    for (size_t pick : rng.sample_indices(eligible.size(), take))
        out.push_back(pool.record(eligible[pick]));
    return out;
}

/// Labels one training example. Rounds of L fresh candidates are scored until
/// one scores above zero (at most R rounds, or until same-task candidates run
/// out); the positive is the best-scoring candidate across all rounds, hard
/// negatives the worst B. Returns nullopt when every scored candidate is 0.
/// All tie-breaks go to the lower prompt_id.
inline std::optional<LabeledInstance> label_example(const LmClient& lm, const PromptPool& pool,
                                                    const TaskExample& example,
                                                    const LabelingConfig& cfg, Rng& rng,
                                                    MetricName tc_metric = MetricName::F1,
                                                    int max_new_tokens_override = 0) {
    cfg.validate();
    const int max_new_tokens =
        max_new_tokens_override > 0 ? max_new_tokens_override : cfg.max_new_tokens;

    const size_t same_task = pool.by_task.count(example.task_id)
                                 ? pool.by_task.at(example.task_id).size()
                                 : 0;
    if (pool.records.size() - same_task < static_cast<size_t>(cfg.negatives_count))
        throw ConfigError("pool has fewer than B cross-task prompts for task " +
                          example.task_id);

    std::vector<std::pair<int, double>> scored;  // (prompt_id, score)
    std::set<int> seen;
    for (int round = 0; round < cfg.max_rounds; ++round) {
        const auto candidates =
            sample_candidates(pool, example, cfg.candidate_subset_size, rng, seen);
        if (candidates.empty()) break;  // same-task candidates exhausted
        double round_best = 0.0;
        for (const auto& cand : candidates) {
            const PromptScore s = score_prompt(lm, cand, example, tc_metric, max_new_tokens);
            scored.emplace_back(cand.prompt_id, s.value);
            seen.insert(cand.prompt_id);
            round_best = std::max(round_best, s.value);
        }
        if (round_best > 0.0) break;
    }

    auto better = [](const std::pair<int, double>& a, const std::pair<int, double>& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    };
    std::sort(scored.begin(), scored.end(), better);
    if (scored.empty() || scored.front().second <= 0.0) return std::nullopt;  // Filtered

    LabeledInstance inst;
    inst.example_id = example.example_id;
    inst.task_id = example.task_id;
    inst.input_text = example.input_text;
    inst.positive_id = scored.front().first;
    inst.positive_score = scored.front().second;

    // Hard negatives: up to B lowest scores among the remaining scored
    // candidates, ties to the lower prompt_id.
    std::vector<std::pair<int, double>> rest(scored.begin() + 1, scored.end());
    std::sort(rest.begin(), rest.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second < b.second;
        return a.first < b.first;
    });
    for (const auto& [pid, score] : rest) {
        if (static_cast<int>(inst.hard_negative_ids.size()) >= cfg.negatives_count) break;
        inst.hard_negative_ids.push_back(pid);
    }

    // Random negatives: B cross-task prompts, without replacement within this
    // example.
    std::vector<int> cross;
    cross.reserve(pool.records.size() - same_task);
    for (const auto& rec : pool.records)
        if (rec.source_task != example.task_id) cross.push_back(rec.prompt_id);
    for (size_t pick :
         rng.sample_indices(cross.size(), static_cast<size_t>(cfg.negatives_count)))
        inst.random_negative_ids.push_back(cross[pick]);

    return inst;
}

/// Disjoint shuffle-split into ceil(fraction * n) training instances and the
/// remainder for validation.
inline std::pair<std::vector<LabeledInstance>, std::vector<LabeledInstance>> split_train_valid(
    const std::vector<LabeledInstance>& instances, double fraction, Rng& rng) {
    if (instances.size() < 2)
        throw DataError("split_train_valid needs at least 2 instances");
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ConfigError("split fraction must be in (0, 1)");
    std::vector<size_t> order(instances.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    const size_t train_n =
        static_cast<size_t>(std::ceil(fraction * static_cast<double>(instances.size())));
    std::pair<std::vector<LabeledInstance>, std::vector<LabeledInstance>> out;
    for (size_t i = 0; i < order.size(); ++i)
        (i < train_n ? out.first : out.second).push_back(instances[order[i]]);
    return out;
}

// ---------------------------------------------------------------------------
// Dataset-level labeling with progress checkpoint
// ---------------------------------------------------------------------------

inline json instance_to_json(const LabeledInstance& inst) {
    return json{{"example_id", inst.example_id},
                {"task_id", inst.task_id},
                {"input_text", inst.input_text},
                {"positive_id", inst.positive_id},
                {"positive_score", inst.positive_score},
                {"hard_negative_ids", inst.hard_negative_ids},
                {"random_negative_ids", inst.random_negative_ids}};
}

inline LabeledInstance instance_from_json(const json& j) {
    LabeledInstance inst;
    inst.example_id = j.at("example_id").get<std::string>();
    inst.task_id = j.at("task_id").get<std::string>();
    inst.input_text = j.at("input_text").get<std::string>();
    inst.positive_id = j.at("positive_id").get<int>();
    inst.positive_score = j.at("positive_score").get<double>();
    inst.hard_negative_ids = j.at("hard_negative_ids").get<std::vector<int>>();
    inst.random_negative_ids = j.at("random_negative_ids").get<std::vector<int>>();
    return inst;
}

inline std::vector<LabeledInstance> load_labels(const std::filesystem::path& path) {
    std::vector<LabeledInstance> out;
    for (const auto& row : read_jsonl(path)) out.push_back(instance_from_json(row));
    return out;
}

/// The examples a pool supervises: every Train example whose own
/// demonstration landed in the pool, in pool prompt_id order (already sorted
/// by task and example id).
inline std::vector<TaskExample> labeling_examples(const TaskSet& taskset,
                                                  const PromptPool& pool) {
    std::map<std::pair<std::string, std::string>, const TaskExample*> by_key;
    for (const auto& [task_id, task] : taskset.tasks)
        for (const auto& e : task.examples) by_key[{task_id, e.example_id}] = &e;

    std::vector<TaskExample> out;
    out.reserve(pool.records.size());
    for (const auto& rec : pool.records) {
        auto it = by_key.find({rec.source_task, rec.source_example});
        if (it == by_key.end())
            throw DataError("pool prompt " + std::to_string(rec.prompt_id) +
                            " references missing example " + rec.source_example);
        out.push_back(*it->second);
    }
    return out;
}

struct LabelRunStats {
    size_t labeled = 0;
    size_t filtered = 0;
    size_t skipped = 0;  // already done per the progress checkpoint
};

/// Per-task scoring knobs, keyed by task_id in label_dataset.
struct TaskScoring {
    MetricName tc_metric = MetricName::F1;
    int max_new_tokens = 0;  // 0 = use the run default
};

/// Labels a whole dataset into `labels_path` (JSONL of instances) with a
/// sidecar `<labels_path>.progress` checkpoint of processed example ids, one
/// per line, enabling resume. Examples are processed in deterministic order;
/// per-example rng streams are derived from (seed, example_id) so any worker
/// count yields byte-identical files.
inline LabelRunStats label_dataset(const LmClient& lm, const PromptPool& pool,
                                   const std::vector<TaskExample>& examples,
                                   const LabelingConfig& cfg, uint64_t seed,
                                   const std::filesystem::path& labels_path, int workers = 1,
                                   const std::map<std::string, TaskScoring>& task_scoring = {}) {
    cfg.validate();
    const std::filesystem::path progress_path =
        labels_path.string() + ".progress";

    std::set<std::string> done;
    if (std::filesystem::exists(progress_path)) {
        std::ifstream in(progress_path);
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) done.insert(line);
    }

    std::vector<const TaskExample*> todo;
    LabelRunStats stats;
    for (const auto& e : examples) {
        if (done.count(e.example_id)) {
            stats.skipped += 1;
        } else {
            todo.push_back(&e);
        }
    }

    std::vector<std::optional<LabeledInstance>> results(todo.size());
    parallel_for(todo.size(), workers, [&](size_t i) {
        Rng rng = derive_rng(seed, "label", todo[i]->example_id);
        TaskScoring scoring;
        if (auto it = task_scoring.find(todo[i]->task_id); it != task_scoring.end())
            scoring = it->second;
        if (scoring.tc_metric == MetricName::Accuracy) scoring.tc_metric = MetricName::F1;
        results[i] =
            label_example(lm, pool, *todo[i], cfg, rng, scoring.tc_metric,
                          scoring.max_new_tokens);
    });

    if (labels_path.has_parent_path())
        std::filesystem::create_directories(labels_path.parent_path());
    std::ofstream labels_out(labels_path, std::ios::binary | std::ios::app);
    std::ofstream progress_out(progress_path, std::ios::binary | std::ios::app);
    if (!labels_out || !progress_out)
        throw IoError("cannot open labels output: " + labels_path.string());
    for (size_t i = 0; i < todo.size(); ++i) {
        if (results[i]) {
            labels_out << instance_to_json(*results[i]).dump() << '\n';
            stats.labeled += 1;
        } else {
            stats.filtered += 1;
        }
        progress_out << todo[i]->example_id << '\n';
    }
    return stats;
}

}  // namespace lodestone
