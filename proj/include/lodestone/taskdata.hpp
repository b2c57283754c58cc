// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "lodestone/errors.hpp"
#include "lodestone/io.hpp"
#include "lodestone/rng.hpp"
#include "lodestone/text.hpp"

namespace lodestone {

enum class QuestionType { TextCompletion, MultipleChoice };

inline std::string to_string(QuestionType q) {
    return q == QuestionType::TextCompletion ? "text-completion" : "multiple-choice";
}

inline QuestionType question_type_from_string(const std::string& s) {
    if (s == "text-completion") return QuestionType::TextCompletion;
    if (s == "multiple-choice") return QuestionType::MultipleChoice;
    throw DataError("unknown question_type: " + s);
}

enum class MetricName { F1, Em, Accuracy };

inline std::string to_string(MetricName m) {
    switch (m) {
        case MetricName::F1: return "f1";
        case MetricName::Em: return "em";
        default: return "accuracy";
    }
}

inline MetricName metric_from_string(const std::string& s) {
    if (s == "f1") return MetricName::F1;
    if (s == "em") return MetricName::Em;
    if (s == "accuracy") return MetricName::Accuracy;
    throw DataError("unknown metric_name: " + s);
}

/// Evaluation split tag. Pool construction and labeling only ever consume
/// Train; evaluation prefers Test and falls back to Validation.
enum class Split { Train, Validation, Test };

inline std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Validation: return "validation";
        default: return "test";
    }
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "validation") return Split::Validation;
    if (s == "test") return Split::Test;
    throw DataError("unknown split: " + s);
}

/// Natural-language instruction template. `pattern` renders the task input,
/// `completion_pattern` renders the gold answer; both use `{field}`
/// placeholders resolved against an example's field map.
struct Template {
    std::string id;
    std::string pattern;
    std::string completion_pattern;
};

struct TaskExample {
    std::string example_id;
    std::string task_id;
    std::string cluster_id;
    std::string input_text;  // sanitized, newline-free
    std::string completion;
    QuestionType question_type = QuestionType::TextCompletion;
    std::vector<std::string> options;  // multiple-choice only
    int gold_option_index = -1;        // multiple-choice only
    std::string class_label;           // optional, enables class-balanced sampling
    Split split = Split::Train;
};

struct Task {
    std::string task_id;
    std::string cluster_id;
    QuestionType question_type = QuestionType::TextCompletion;
    MetricName metric_name = MetricName::F1;
    int max_new_tokens = 0;  // 0 = inherit the run-level default
    std::vector<Template> templates;
    std::vector<TaskExample> examples;
};

struct TaskSet {
    std::map<std::string, Task> tasks;  // task_id -> task, deterministic order

    const Task& at(const std::string& task_id) const {
        auto it = tasks.find(task_id);
        if (it == tasks.end()) throw DataError("unknown task_id: " + task_id);
        return it->second;
    }

    std::set<std::string> clusters() const {
        std::set<std::string> out;
        for (const auto& [id, t] : tasks) out.insert(t.cluster_id);
        return out;
    }
};

struct PromptRecord {
    int prompt_id = 0;  // dense, 0-based, contiguous within a pool
    std::string text;
    std::string source_task;
    std::string source_example;
};

struct PromptPool {
    std::vector<PromptRecord> records;
    std::map<std::string, std::vector<int>> by_task;  // task_id -> prompt_ids

    const PromptRecord& record(int prompt_id) const {
        if (prompt_id < 0 || static_cast<size_t>(prompt_id) >= records.size())
            throw DataError("prompt_id out of range: " + std::to_string(prompt_id));
        return records[static_cast<size_t>(prompt_id)];
    }
};

enum class PoolMode { RemainingClusters, TargetTask, AllTasks };

inline std::string to_string(PoolMode m) {
    switch (m) {
        case PoolMode::RemainingClusters: return "remaining-clusters";
        case PoolMode::TargetTask: return "target-task";
        default: return "all-tasks";
    }
}

inline PoolMode pool_mode_from_string(const std::string& s) {
    if (s == "remaining-clusters") return PoolMode::RemainingClusters;
    if (s == "target-task") return PoolMode::TargetTask;
    if (s == "all-tasks") return PoolMode::AllTasks;
    throw ConfigError("unknown pool mode: " + s);
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Fills `{field}` placeholders from the field map. Unknown fields are a data
/// error naming both the field and the template.
inline std::string fill_placeholders(std::string_view pattern,
                                     const std::map<std::string, std::string>& fields,
                                     const std::string& template_id) {
    std::string out;
    out.reserve(pattern.size());
    size_t i = 0;
    while (i < pattern.size()) {
        const char c = pattern[i];
        if (c == '{') {
            const size_t close = pattern.find('}', i + 1);
            if (close == std::string_view::npos)
                throw DataError("unclosed placeholder in template " + template_id);
            const std::string name(pattern.substr(i + 1, close - i - 1));
            auto it = fields.find(name);
            if (it == fields.end())
                throw DataError("template " + template_id + " references missing field '" + name +
                                "'");
            out += it->second;
            i = close + 1;
        } else {
            out.push_back(c);
            i += 1;
        }
    }
    return out;
}

struct RenderedExample {
    std::string input_text;
    std::string completion;
    std::string template_id;
};

/// Renders one raw example through a template chosen uniformly from the
/// task's template list. The input side is sanitized; the completion is used
/// verbatim.
inline RenderedExample render_example(const std::map<std::string, std::string>& example_fields,
                                      const std::vector<Template>& templates, Rng& rng) {
    if (templates.empty()) throw DataError("render_example: task has no templates");
    const Template& tpl = templates[static_cast<size_t>(rng.below(templates.size()))];
    RenderedExample out;
    out.input_text = sanitize_input(fill_placeholders(tpl.pattern, example_fields, tpl.id));
    out.completion = fill_placeholders(tpl.completion_pattern, example_fields, tpl.id);
    out.template_id = tpl.id;
    return out;
}

/// Caps a task's example list. When every example carries a class label the
/// cap is divided evenly across the C observed classes (floor(cap / C) per
/// class); otherwise a plain uniform sample of min(cap, n) is taken. Output
/// preserves input order.
inline std::vector<TaskExample> sample_dataset(const std::vector<TaskExample>& examples,
                                               size_t cap, Rng& rng) {
    if (cap < 1) throw ConfigError("sample_dataset: cap must be >= 1");
    const size_t n = examples.size();

    const bool all_labeled =
        !examples.empty() &&
        std::all_of(examples.begin(), examples.end(),
                    [](const TaskExample& e) { return !e.class_label.empty(); });

    std::vector<char> keep(n, 0);
    if (all_labeled) {
        std::map<std::string, std::vector<size_t>> by_class;
        for (size_t i = 0; i < n; ++i) by_class[examples[i].class_label].push_back(i);
        const size_t per_class = cap / by_class.size();
        for (auto& [label, idx] : by_class) {
            if (idx.size() <= per_class) {
                for (size_t i : idx) keep[i] = 1;
            } else {
                for (size_t pick : rng.sample_indices(idx.size(), per_class)) keep[idx[pick]] = 1;
            }
        }
    } else {
        if (n <= cap) {
            std::fill(keep.begin(), keep.end(), 1);
        } else {
            for (size_t pick : rng.sample_indices(n, cap)) keep[pick] = 1;
        }
    }

    std::vector<TaskExample> out;
    for (size_t i = 0; i < n; ++i)
        if (keep[i]) out.push_back(examples[i]);
    return out;
}

/// One pool demonstration: task input, a single space, the completion. The
/// space keeps "\n" reserved as the inter-prompt delimiter.
inline std::string render_demonstration(const std::string& input_text,
                                        const std::string& completion) {
    if (input_text.empty() || completion.empty())
        throw DataError("render_demonstration: input and completion must be nonempty");
    return input_text + " " + completion;
}

/// Builds the prompt pool for one hold-out configuration. Only Train-split
/// examples enter the pool, capped per task by sample_dataset with a stream
/// derived from (seed, task_id). prompt_ids follow (task_id, example_id)
/// sort order, so the pool is independent of task iteration order.
inline PromptPool build_pool(const TaskSet& taskset, const std::string& holdout_cluster,
                             PoolMode mode, uint64_t seed, size_t sample_cap = 10000,
                             const std::string& target_task = "") {
    if (!taskset.clusters().count(holdout_cluster))
        throw ConfigError("holdout cluster not present in task set: " + holdout_cluster);
    if (mode == PoolMode::TargetTask && taskset.tasks.find(target_task) == taskset.tasks.end())
        throw ConfigError("pool mode target-task requires a valid target task, got: '" +
                          target_task + "'");

    std::vector<TaskExample> sampled;
    for (const auto& [task_id, task] : taskset.tasks) {
        const bool include = mode == PoolMode::AllTasks ||
                             (mode == PoolMode::RemainingClusters &&
                              task.cluster_id != holdout_cluster) ||
                             (mode == PoolMode::TargetTask && task_id == target_task);
        if (!include) continue;

        std::vector<TaskExample> train;
        for (const auto& e : task.examples)
            if (e.split == Split::Train) train.push_back(e);

        Rng rng = derive_rng(seed, "pool-sample", task_id);
        for (auto& e : sample_dataset(train, sample_cap, rng)) sampled.push_back(std::move(e));
    }

    std::sort(sampled.begin(), sampled.end(), [](const TaskExample& a, const TaskExample& b) {
        return std::tie(a.task_id, a.example_id) < std::tie(b.task_id, b.example_id);
    });

    PromptPool pool;
    pool.records.reserve(sampled.size());
    for (const auto& e : sampled) {
        PromptRecord rec;
        rec.prompt_id = static_cast<int>(pool.records.size());
        rec.text = render_demonstration(e.input_text, e.completion);
        rec.source_task = e.task_id;
        rec.source_example = e.example_id;
        pool.by_task[e.task_id].push_back(rec.prompt_id);
        pool.records.push_back(std::move(rec));
    }

    if (pool.records.empty())
        throw ConfigError("pool is empty for holdout=" + holdout_cluster + " mode=" +
                          to_string(mode));
    return pool;
}

// ---------------------------------------------------------------------------
// File formats: tasks manifest (JSON), examples (JSONL), pool (JSONL)
// ---------------------------------------------------------------------------

inline void validate_example(const TaskExample& e) {
    if (e.input_text.find('\n') != std::string::npos)
        throw DataError("example " + e.example_id + ": input_text contains a newline");
    if (e.question_type == QuestionType::MultipleChoice) {
        const auto m = e.options.size();
        if (m < 2)
            throw DataError("example " + e.example_id + ": multiple-choice needs >= 2 options");
        if (e.gold_option_index < 0 || static_cast<size_t>(e.gold_option_index) >= m)
            throw DataError("example " + e.example_id + ": gold_option_index out of range");
        if (e.completion != e.options[static_cast<size_t>(e.gold_option_index)])
            throw DataError("example " + e.example_id +
                            ": completion must equal options[gold_option_index]");
    }
}

inline json example_to_json(const TaskExample& e) {
    json j{{"example_id", e.example_id},
           {"task_id", e.task_id},
           {"cluster_id", e.cluster_id},
           {"input_text", e.input_text},
           {"completion", e.completion},
           {"question_type", to_string(e.question_type)},
           {"split", to_string(e.split)}};
    if (e.question_type == QuestionType::MultipleChoice) {
        j["options"] = e.options;
        j["gold_option_index"] = e.gold_option_index;
    }
    if (!e.class_label.empty()) j["class_label"] = e.class_label;
    return j;
}

inline TaskExample example_from_json(const json& j) {
    TaskExample e;
    e.example_id = j.at("example_id").get<std::string>();
    e.task_id = j.at("task_id").get<std::string>();
    e.cluster_id = j.value("cluster_id", "");
    e.input_text = sanitize_input(j.at("input_text").get<std::string>());
    e.completion = j.at("completion").get<std::string>();
    e.question_type = question_type_from_string(j.value("question_type", "text-completion"));
    if (j.contains("options")) e.options = j.at("options").get<std::vector<std::string>>();
    e.gold_option_index = j.value("gold_option_index", -1);
    e.class_label = j.value("class_label", "");
    e.split = split_from_string(j.value("split", "train"));
    return e;
}

inline json manifest_to_json(const TaskSet& ts) {
    json tasks = json::array();
    for (const auto& [id, t] : ts.tasks) {
        json templates = json::array();
        for (const auto& tpl : t.templates)
            templates.push_back({{"id", tpl.id},
                                 {"pattern", tpl.pattern},
                                 {"completion_pattern", tpl.completion_pattern}});
        json jt{{"task_id", t.task_id},
                {"cluster_id", t.cluster_id},
                {"question_type", to_string(t.question_type)},
                {"metric_name", to_string(t.metric_name)},
                {"templates", templates}};
        if (t.max_new_tokens > 0) jt["max_new_tokens"] = t.max_new_tokens;
        tasks.push_back(std::move(jt));
    }
    return json{{"tasks", tasks}};
}

/// Loads a task set from its manifest plus the example JSONL file, stamping
/// manifest-level fields onto each example and validating invariants.
inline TaskSet load_taskset(const std::filesystem::path& manifest_path,
                            const std::filesystem::path& examples_path) {
    TaskSet ts;
    const json manifest = read_json(manifest_path);
    for (const auto& jt : manifest.at("tasks")) {
        Task t;
        t.task_id = jt.at("task_id").get<std::string>();
        t.cluster_id = jt.at("cluster_id").get<std::string>();
        t.question_type = question_type_from_string(jt.at("question_type").get<std::string>());
        t.metric_name = metric_from_string(jt.at("metric_name").get<std::string>());
        t.max_new_tokens = jt.value("max_new_tokens", 0);
        for (const auto& jtpl : jt.value("templates", json::array())) {
            t.templates.push_back(Template{jtpl.at("id").get<std::string>(),
                                           jtpl.at("pattern").get<std::string>(),
                                           jtpl.at("completion_pattern").get<std::string>()});
        }
        if (ts.tasks.count(t.task_id))
            throw DataError("duplicate task_id in manifest: " + t.task_id);
        ts.tasks[t.task_id] = std::move(t);
    }

    std::map<std::string, std::set<std::string>> seen_ids;
    for (const auto& row : read_jsonl(examples_path)) {
        TaskExample e = example_from_json(row);
        auto it = ts.tasks.find(e.task_id);
        if (it == ts.tasks.end())
            throw DataError("example " + e.example_id + " references unknown task " + e.task_id);
        Task& task = it->second;
        if (!e.cluster_id.empty() && e.cluster_id != task.cluster_id)
            throw DataError("example " + e.example_id + ": cluster_id disagrees with manifest");
        e.cluster_id = task.cluster_id;
        if (row.contains("question_type") && e.question_type != task.question_type)
            throw DataError("example " + e.example_id + ": question_type disagrees with manifest");
        e.question_type = task.question_type;
        validate_example(e);
        if (!seen_ids[e.task_id].insert(e.example_id).second)
            throw DataError("duplicate example_id " + e.example_id + " in task " + e.task_id);
        task.examples.push_back(std::move(e));
    }
    return ts;
}

inline void save_taskset(const TaskSet& ts, const std::filesystem::path& manifest_path,
                         const std::filesystem::path& examples_path) {
    write_json(manifest_path, manifest_to_json(ts));
    std::vector<json> rows;
    for (const auto& [id, t] : ts.tasks)
        for (const auto& e : t.examples) rows.push_back(example_to_json(e));
    write_jsonl(examples_path, rows);
}

inline void save_pool(const PromptPool& pool, const std::filesystem::path& path) {
    std::vector<json> rows;
    rows.reserve(pool.records.size());
    for (const auto& r : pool.records)
        rows.push_back({{"prompt_id", r.prompt_id},
                        {"text", r.text},
                        {"source_task", r.source_task},
                        {"source_example", r.source_example}});
    write_jsonl(path, rows);
}

inline PromptPool load_pool(const std::filesystem::path& path) {
    PromptPool pool;
    for (const auto& row : read_jsonl(path)) {
        PromptRecord r;
        r.prompt_id = row.at("prompt_id").get<int>();
        r.text = row.at("text").get<std::string>();
        r.source_task = row.at("source_task").get<std::string>();
        r.source_example = row.at("source_example").get<std::string>();
        if (r.text.empty()) throw DataError("pool record " + std::to_string(r.prompt_id) +
                                            " has empty text");
        if (r.prompt_id != static_cast<int>(pool.records.size()))
            throw DataError("pool prompt_ids must be dense and 0-based, got " +
                            std::to_string(r.prompt_id) + " at row " +
                            std::to_string(pool.records.size()));
        pool.by_task[r.source_task].push_back(r.prompt_id);
        pool.records.push_back(std::move(r));
    }
    if (pool.records.empty()) throw DataError("pool file is empty: " + path.string());
    return pool;
}

}  // namespace lodestone
