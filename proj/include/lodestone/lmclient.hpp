// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lodestone/errors.hpp"

namespace lodestone {

struct CompletionRequest {
    std::string context;
    int max_new_tokens = 32;
    // Decoding is always greedy; there is deliberately no knob for it.
};

struct OptionScore {
    int option_index = 0;
    double per_token_likelihood = 0.0;  // in (0, 1]
    int token_count = 1;
};

/// per-token likelihood from a summed log-probability: the geometric mean of
/// the option's token probabilities, exp(sum_logprob / token_count).
inline double per_token_likelihood(double sum_logprob, int token_count) {
    if (token_count < 1) throw LmProtocolError("token_count must be >= 1");
    if (sum_logprob > 0.0) throw LmProtocolError("sum_logprob must be <= 0");
    return std::exp(sum_logprob / token_count);
}

/// Scoring/inference language model contract. Implementations must be safe
/// for concurrent calls from multiple workers.
class LmClient {
public:
    virtual ~LmClient() = default;

    /// Greedy continuation of the request context, truncated at
    /// max_new_tokens or the model's stop condition.
    virtual std::string greedy_complete(const CompletionRequest& req) const = 0;

    /// Per-token likelihood of each option given the context, in input order.
    virtual std::vector<OptionScore> option_likelihoods(
        const std::string& context, const std::vector<std::string>& options) const = 0;

    virtual std::string identity() const = 0;
};

/// Index of the most likely option; ties go to the lowest index.
inline int predict_choice(const LmClient& lm, const std::string& context,
                          const std::vector<std::string>& options) {
    const auto scores = lm.option_likelihoods(context, options);
    int best = 0;
    for (size_t i = 1; i < scores.size(); ++i)
        if (scores[i].per_token_likelihood > scores[best].per_token_likelihood)
            best = static_cast<int>(i);
    return best;
}

}  // namespace lodestone
