// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "lodestone/lmclient.hpp"

namespace lodestone {

/// Environment variable consulted for the bearer token sent to the remote
/// endpoint. Unset or empty means no Authorization header.
inline constexpr const char* kAuthTokenEnv = "LODESTONE_LM_TOKEN";

struct RemoteLmConfig {
    std::string base_url;      // e.g. "http://127.0.0.1:8089"
    int max_attempts = 3;      // total tries per request
    int backoff_initial_ms = 200;
    int timeout_seconds = 120;
};

/// HTTP client for an external inference server exposing two endpoints:
///
///   POST /complete       {"context": str, "max_new_tokens": int} -> {"text": str}
///   POST /loglikelihood  {"context": str, "options": [str]}
///                        -> {"results": [{"sum_logprob": float, "token_count": int}]}
///
/// The per-token likelihood is computed locally from sum_logprob /
/// token_count. Transport failures are retried with exponential backoff up
/// to max_attempts; each worker thread may hold its own RemoteLm, which
/// bounds concurrent connections by the worker count.
class RemoteLm final : public LmClient {
public:
    explicit RemoteLm(RemoteLmConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.base_url.empty()) throw ConfigError("remote LM requires a base URL");
        if (cfg_.max_attempts < 1) throw ConfigError("remote LM: max_attempts must be >= 1");
        if (const char* tok = std::getenv(kAuthTokenEnv); tok && *tok) auth_token_ = tok;
    }

    std::string greedy_complete(const CompletionRequest& req) const override {
        if (req.context.empty()) throw DataError("greedy_complete: empty context");
        json body{{"context", req.context}, {"max_new_tokens", req.max_new_tokens}};
        const json reply = post("/complete", body);
        if (!reply.contains("text") || !reply["text"].is_string())
            throw LmProtocolError("/complete reply missing string field 'text'");
        return reply["text"].get<std::string>();
    }

    std::vector<OptionScore> option_likelihoods(
        const std::string& context, const std::vector<std::string>& options) const override {
        if (options.empty()) throw DataError("option_likelihoods: empty option list");
        json body{{"context", context}, {"options", options}};
        const json reply = post("/loglikelihood", body);
        if (!reply.contains("results") || !reply["results"].is_array() ||
            reply["results"].size() != options.size())
            throw LmProtocolError("/loglikelihood reply must carry one result per option");
        std::vector<OptionScore> out;
        out.reserve(options.size());
        for (size_t i = 0; i < options.size(); ++i) {
            const json& r = reply["results"][i];
            if (!r.contains("sum_logprob") || !r.contains("token_count"))
                throw LmProtocolError("/loglikelihood result missing sum_logprob/token_count");
            OptionScore s;
            s.option_index = static_cast<int>(i);
            s.token_count = r["token_count"].get<int>();
            s.per_token_likelihood =
                per_token_likelihood(r["sum_logprob"].get<double>(), s.token_count);
            out.push_back(s);
        }
        return out;
    }

    std::string identity() const override { return "remote:" + cfg_.base_url; }

private:
    json post(const std::string& path, const json& body) const {
        httplib::Client client(cfg_.base_url);
        client.set_connection_timeout(cfg_.timeout_seconds);
        client.set_read_timeout(cfg_.timeout_seconds);
        httplib::Headers headers;
        if (!auth_token_.empty()) headers.emplace("Authorization", "Bearer " + auth_token_);

        int backoff_ms = cfg_.backoff_initial_ms;
        std::string last_failure = "no attempt made";
        for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
            auto res = client.Post(path, headers, body.dump(), "application/json");
            if (!res) {
                last_failure = "transport error: " + httplib::to_string(res.error());
            } else if (res->status >= 500 || res->status == 429) {
                last_failure = "server overloaded or failing (HTTP " +
                               std::to_string(res->status) + ")";
            } else if (res->status != 200) {
                throw LmProtocolError("unexpected HTTP " + std::to_string(res->status) +
                                      " from " + path);
            } else {
                try {
                    return json::parse(res->body);
                } catch (const json::exception& e) {
                    throw LmProtocolError(std::string("malformed JSON from ") + path + ": " +
                                          e.what());
                }
            }
            if (attempt < cfg_.max_attempts) {
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
                backoff_ms *= 2;
            }
        }
        throw LmTransportError(path + " failed after " + std::to_string(cfg_.max_attempts) +
                                   " attempts; last: " + last_failure,
                               cfg_.max_attempts);
    }

    RemoteLmConfig cfg_;
    std::string auth_token_;
};

}  // namespace lodestone
