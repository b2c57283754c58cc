// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "lodestone/lmclient.hpp"
#include "lodestone/taskdata.hpp"
#include "lodestone/text.hpp"

namespace lodestone {

/// Delimiter between a prompt and the task input, and between stacked
/// prompts.
inline constexpr char kPromptDelimiter = '\n';

/// Token-level F1 over normalized token multisets. Both sides empty -> 1,
/// exactly one empty -> 0.
inline double token_f1(const std::string& prediction, const std::string& gold) {
    const auto pred = normalize_tokens(prediction);
    const auto ref = normalize_tokens(gold);
    if (pred.empty() && ref.empty()) return 1.0;
    if (pred.empty() || ref.empty()) return 0.0;

    std::map<std::string, int> ref_counts;
    for (const auto& t : ref) ref_counts[t] += 1;
    int overlap = 0;
    for (const auto& t : pred) {
        auto it = ref_counts.find(t);
        if (it != ref_counts.end() && it->second > 0) {
            overlap += 1;
            it->second -= 1;
        }
    }
    if (overlap == 0) return 0.0;
    const double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
    const double recall = static_cast<double>(overlap) / static_cast<double>(ref.size());
    return 2.0 * precision * recall / (precision + recall);
}

/// 1.0 iff the two strings are equal after the same normalization token_f1
/// uses.
inline double exact_match(const std::string& prediction, const std::string& gold) {
    return normalize_tokens(prediction) == normalize_tokens(gold) ? 1.0 : 0.0;
}

inline double apply_metric(MetricName metric, const std::string& gold,
                           const std::string& prediction) {
    switch (metric) {
        case MetricName::F1: return token_f1(prediction, gold);
        case MetricName::Em: return exact_match(prediction, gold);
        default:
            throw ConfigError("accuracy is not a text-completion scoring metric");
    }
}

struct PromptScore {
    int prompt_id = 0;
    std::string example_id;
    double value = 0.0;  // in [0, 1]
    QuestionType question_type = QuestionType::TextCompletion;
};

/// Score of a (prompt, example) pair for a free-form completion question:
/// the task metric applied to the LM's greedy prediction given
/// "prompt\ninput".
inline PromptScore score_text_completion(const LmClient& lm, const PromptRecord& prompt,
                                         const TaskExample& example, MetricName metric,
                                         int max_new_tokens = 32) {
    if (example.question_type != QuestionType::TextCompletion)
        throw DataError("score_text_completion on a non-text-completion example");
    CompletionRequest req;
    req.context = prompt.text + kPromptDelimiter + example.input_text;
    req.max_new_tokens = max_new_tokens;
    const std::string prediction = lm.greedy_complete(req);
    PromptScore s;
    s.prompt_id = prompt.prompt_id;
    s.example_id = example.example_id;
    s.value = apply_metric(metric, example.completion, prediction);
    s.question_type = QuestionType::TextCompletion;
    return s;
}

/// Score of a (prompt, example) pair for a multiple-choice question:
/// prediction accuracy times the gold option's per-token likelihood
/// normalized by the likelihood mass of all options.
inline PromptScore score_multiple_choice(const LmClient& lm, const PromptRecord& prompt,
                                         const TaskExample& example) {
    if (example.question_type != QuestionType::MultipleChoice)
        throw DataError("score_multiple_choice on a non-multiple-choice example");
    const std::string context = prompt.text + kPromptDelimiter + example.input_text;
    const auto scores = lm.option_likelihoods(context, example.options);

    int predicted = 0;
    double total = 0.0;
    for (size_t i = 0; i < scores.size(); ++i) {
        total += scores[i].per_token_likelihood;
        if (scores[i].per_token_likelihood >
            scores[static_cast<size_t>(predicted)].per_token_likelihood)
            predicted = static_cast<int>(i);
    }
    const double acc = predicted == example.gold_option_index ? 1.0 : 0.0;
    const double gold_mass =
        scores[static_cast<size_t>(example.gold_option_index)].per_token_likelihood;

    PromptScore s;
    s.prompt_id = prompt.prompt_id;
    s.example_id = example.example_id;
    s.value = acc * gold_mass / total;
    s.question_type = QuestionType::MultipleChoice;
    return s;
}

/// Dispatch on the example's question type.
inline PromptScore score_prompt(const LmClient& lm, const PromptRecord& prompt,
                                const TaskExample& example, MetricName metric,
                                int max_new_tokens = 32) {
    return example.question_type == QuestionType::MultipleChoice
               ? score_multiple_choice(lm, prompt, example)
               : score_text_completion(lm, prompt, example, metric, max_new_tokens);
}

}  // namespace lodestone
