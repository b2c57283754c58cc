// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "lodestone/mock_lm.hpp"
#include "lodestone/rng.hpp"
#include "lodestone/taskdata.hpp"

namespace lodestone {

/// Parameters of the bundled synthetic corpus: 4 task clusters (two
/// multiple-choice, two text-completion), 2 tasks each, and 4 hidden topics
/// with a fixed topic -> answer mapping shared by every task. Inputs carry
/// exactly one topic token; the matching MockTable rewards contexts whose
/// demonstrations share the query's topic, so a retriever that learns topic
/// affinity measurably helps the mock on held-out clusters.
struct SyntheticSpec {
    int train_per_task = 120;
    int test_per_task = 60;
    uint64_t seed = 7;
};

namespace synthetic_detail {

inline const std::vector<std::string>& topics() {
    static const std::vector<std::string> v{"ember", "frost", "lichen", "quartz"};
    return v;
}

inline const std::map<std::string, std::string>& answer_of() {
    static const std::map<std::string, std::string> m{{"ember", "crimson"},
                                                      {"frost", "azure"},
                                                      {"lichen", "verdant"},
                                                      {"quartz", "golden"}};
    return m;
}

inline const std::vector<std::string>& fillers() {
    static const std::vector<std::string> v{"drift", "orbit", "pulse",  "static",
                                            "vector", "murmur", "grain", "flux"};
    return v;
}

struct TaskPlan {
    std::string task_id;
    std::string cluster_id;
    QuestionType question_type;
    std::string verb;  // task-identifying token used in every template
};

inline const std::vector<TaskPlan>& plans() {
    static const std::vector<TaskPlan> v{
        {"beacon-pick", "signal-choice", QuestionType::MultipleChoice, "beacon"},
        {"channel-pick", "signal-choice", QuestionType::MultipleChoice, "channel"},
        {"prism-pick", "relay-choice", QuestionType::MultipleChoice, "prism"},
        {"relay-pick", "relay-choice", QuestionType::MultipleChoice, "relay"},
        {"call-name", "echo-completion", QuestionType::TextCompletion, "call"},
        {"echo-name", "echo-completion", QuestionType::TextCompletion, "echo"},
        {"scan-name", "trace-completion", QuestionType::TextCompletion, "scan"},
        {"trace-name", "trace-completion", QuestionType::TextCompletion, "trace"},
    };
    return v;
}

inline std::vector<Template> make_templates(const TaskPlan& plan) {
    static const std::vector<std::string> variants{"now", "again", "next", "first",
                                                   "later", "twice", "slowly"};
    std::vector<Template> out;
    for (size_t i = 0; i < variants.size(); ++i) {
        Template tpl;
        tpl.id = plan.task_id + "-t" + std::to_string(i);
        tpl.pattern = plan.verb + " " + variants[i] + " the {noise} signal {topic} report hue";
        tpl.completion_pattern = "{answer}";
        out.push_back(std::move(tpl));
    }
    return out;
}

}  // namespace synthetic_detail

/// The mock table paired with the synthetic corpus.
inline MockTable synthetic_mock_table() {
    MockTable t;
    t.topics = synthetic_detail::topics();
    t.base_p = 0.05;
    t.boost = 8.0;
    t.fallback_completion = "void";
    return t;
}

/// Deterministic synthetic task set; topics cycle for balance, option order
/// and filler tokens vary per example.
inline TaskSet make_synthetic_taskset(const SyntheticSpec& spec) {
    using namespace synthetic_detail;
    if (spec.train_per_task < 1 || spec.test_per_task < 0)
        throw ConfigError("synthetic: train_per_task must be >= 1, test_per_task >= 0");

    const auto& topic_list = topics();
    std::vector<std::string> answers;
    for (const auto& t : topic_list) answers.push_back(answer_of().at(t));

    TaskSet ts;
    for (const auto& plan : plans()) {
        Task task;
        task.task_id = plan.task_id;
        task.cluster_id = plan.cluster_id;
        task.question_type = plan.question_type;
        task.metric_name = plan.question_type == QuestionType::MultipleChoice
                               ? MetricName::Accuracy
                               : MetricName::F1;
        task.templates = make_templates(plan);

        const int total = spec.train_per_task + spec.test_per_task;
        for (int i = 0; i < total; ++i) {
            const bool is_test = i >= spec.train_per_task;
            const std::string& topic = topic_list[static_cast<size_t>(i) % topic_list.size()];
            const std::string& answer = answer_of().at(topic);

            Rng rng = derive_rng(spec.seed, "synth", plan.task_id + "/" + std::to_string(i));
            std::map<std::string, std::string> fields{
                {"topic", topic},
                {"answer", answer},
                {"noise", fillers()[static_cast<size_t>(rng.below(fillers().size()))]}};
            const RenderedExample rendered = render_example(fields, task.templates, rng);

            TaskExample e;
            e.example_id = plan.task_id + "-" + (is_test ? "test-" : "train-") +
                           std::to_string(is_test ? i - spec.train_per_task : i);
            e.task_id = plan.task_id;
            e.cluster_id = plan.cluster_id;
            e.input_text = rendered.input_text;
            e.completion = rendered.completion;
            e.question_type = plan.question_type;
            e.class_label = answer;
            e.split = is_test ? Split::Test : Split::Train;
            if (plan.question_type == QuestionType::MultipleChoice) {
                e.options = answers;
                rng.shuffle(e.options);
                for (size_t m = 0; m < e.options.size(); ++m)
                    if (e.options[m] == answer) e.gold_option_index = static_cast<int>(m);
            }
            validate_example(e);
            task.examples.push_back(std::move(e));
        }
        ts.tasks[task.task_id] = std::move(task);
    }
    return ts;
}

/// Writes the corpus triple (manifest, examples, mock table) into a
/// directory; returns the written paths.
struct SyntheticPaths {
    std::filesystem::path manifest;
    std::filesystem::path examples;
    std::filesystem::path mock_table;
};

inline SyntheticPaths write_synthetic_corpus(const std::filesystem::path& dir,
                                             const SyntheticSpec& spec) {
    std::filesystem::create_directories(dir);
    SyntheticPaths paths{dir / "tasks.manifest.json", dir / "tasks.jsonl",
                         dir / "mock_table.json"};
    const TaskSet ts = make_synthetic_taskset(spec);
    save_taskset(ts, paths.manifest, paths.examples);
    write_json(paths.mock_table, synthetic_mock_table().to_json());
    return paths;
}

}  // namespace lodestone
