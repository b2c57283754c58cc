// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "lodestone/io.hpp"
#include "lodestone/lmclient.hpp"
#include "lodestone/text.hpp"

namespace lodestone {

/// Rule table for the offline mock LM. The mock treats its context as
/// newline-separated lines: the last line is the query, every earlier line a
/// demonstration. A demonstration "matches" the query when both contain the
/// same topic token. The published rules are:
///
///   greedy_complete  -> the last token of the first matching demonstration,
///                       or `fallback_completion` when none matches.
///   option_likelihoods -> every option token has probability `base_p`;
///                       tokens of an option whose text contains the answer
///                       token of a matching demonstration (its last token)
///                       get multiplied by `boost`.
///
/// With boost > 1 this rewards contexts that carry a same-topic
/// demonstration, which is exactly the signal a prompt retriever can learn.
/// An empty topic list makes the mock topic-blind: uniform likelihoods and
/// the fallback completion everywhere.
struct MockTable {
    std::vector<std::string> topics;
    double base_p = 0.05;
    double boost = 8.0;
    std::string fallback_completion = "void";

    void validate() const {
        if (!(base_p > 0.0 && base_p <= 1.0))
            throw ConfigError("mock table: base_p must be in (0, 1]");
        if (boost < 1.0) throw ConfigError("mock table: boost must be >= 1");
        if (base_p * boost > 1.0)
            throw ConfigError("mock table: base_p * boost must stay <= 1");
        if (fallback_completion.empty())
            throw ConfigError("mock table: fallback_completion must be nonempty");
    }

    static MockTable from_json(const json& j) {
        MockTable t;
        t.topics = j.value("topics", std::vector<std::string>{});
        t.base_p = j.value("base_p", 0.05);
        t.boost = j.value("boost", 8.0);
        t.fallback_completion = j.value("fallback_completion", std::string("void"));
        t.validate();
        return t;
    }

    json to_json() const {
        return json{{"topics", topics},
                    {"base_p", base_p},
                    {"boost", boost},
                    {"fallback_completion", fallback_completion}};
    }

    static MockTable load(const std::filesystem::path& path) {
        return from_json(read_json(path));
    }
};

class MockLm final : public LmClient {
public:
    explicit MockLm(MockTable table) : table_(std::move(table)) {
        table_.validate();
        topic_set_.insert(table_.topics.begin(), table_.topics.end());
    }

    std::string greedy_complete(const CompletionRequest& req) const override {
        if (req.context.empty()) throw DataError("greedy_complete: empty context");
        if (req.max_new_tokens < 1) throw DataError("greedy_complete: max_new_tokens must be >= 1");
        const std::string answer = matching_answer(req.context);
        const std::string& full = answer.empty() ? table_.fallback_completion : answer;
        auto tokens = split_ws(full);
        if (static_cast<int>(tokens.size()) > req.max_new_tokens)
            tokens.resize(static_cast<size_t>(req.max_new_tokens));
        return join(tokens, " ");
    }

    std::vector<OptionScore> option_likelihoods(
        const std::string& context, const std::vector<std::string>& options) const override {
        if (options.empty()) throw DataError("option_likelihoods: empty option list");
        const std::string answer = matching_answer(context);
        std::vector<OptionScore> out;
        out.reserve(options.size());
        for (size_t i = 0; i < options.size(); ++i) {
            const auto tokens = split_ws(options[i]);
            if (tokens.empty()) throw DataError("option_likelihoods: empty option string");
            const bool boosted =
                !answer.empty() &&
                std::find(tokens.begin(), tokens.end(), answer) != tokens.end();
            const double log_p =
                std::log(table_.base_p) + (boosted ? std::log(table_.boost) : 0.0);
            OptionScore s;
            s.option_index = static_cast<int>(i);
            s.token_count = static_cast<int>(tokens.size());
            s.per_token_likelihood = per_token_likelihood(log_p * s.token_count, s.token_count);
            out.push_back(s);
        }
        return out;
    }

    std::string identity() const override {
        return "mock:" + to_hex(fnv1a64(table_.to_json().dump()));
    }

    const MockTable& table() const { return table_; }

private:
    // Answer token of the first demonstration sharing the query's topic, or
    // "" when the query has no topic or nothing matches.
    std::string matching_answer(const std::string& context) const {
        const auto lines = split_lines(context);
        const std::string query_topic = topic_of(lines.back());
        if (query_topic.empty()) return "";
        for (size_t i = 0; i + 1 < lines.size(); ++i) {
            if (topic_of(lines[i]) != query_topic) continue;
            const auto tokens = split_ws(lines[i]);
            if (!tokens.empty()) return tokens.back();
        }
        return "";
    }

    std::string topic_of(std::string_view line) const {
        for (const auto& tok : split_ws(line))
            if (topic_set_.count(tok)) return tok;
        return "";
    }

    MockTable table_;
    std::set<std::string> topic_set_;
};

}  // namespace lodestone
