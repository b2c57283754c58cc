// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "lodestone/encoder.hpp"
#include "lodestone/parallel.hpp"
#include "lodestone/taskdata.hpp"

namespace lodestone {

/// Dense matrix of prompt-tower encodings for exact maximum-inner-product
/// search. Immutable after build; concurrent queries are safe.
struct RetrievalIndex {
    Matrix vectors;               // N_P x d, row i = encoding of prompt_ids[i]
    std::vector<int> prompt_ids;  // aligned to rows
    std::string params_fingerprint;
};

/// Encodes the whole pool with the prompt tower. Row placement is by pool
/// order regardless of worker count.
inline RetrievalIndex build_index(const EncoderParams& params, const Vocab& vocab,
                                  const PromptPool& pool, size_t max_len = 256,
                                  int workers = 1) {
    if (pool.records.empty()) throw DataError("build_index: empty pool");
    RetrievalIndex index;
    index.vectors = Matrix(pool.records.size(), params.out_dim);
    index.prompt_ids.resize(pool.records.size());
    index.params_fingerprint = params_fingerprint(params);
    parallel_for(pool.records.size(), workers, [&](size_t i) {
        const auto ids = tokenize(vocab, pool.records[i].text, max_len);
        const auto vec = encode(params.prompt_tower, ids);
        std::copy(vec.begin(), vec.end(), index.vectors.row(i));
        index.prompt_ids[i] = pool.records[i].prompt_id;
    });
    return index;
}

/// Exact top-min(K, N_P) prompt ids by inner product, descending; equal
/// scores rank the lower prompt_id first. Plain full scan.
inline std::vector<int> retrieve_topk(const RetrievalIndex& index,
                                      const std::vector<double>& query, int k = 3) {
    if (k < 1) throw ConfigError("retrieve_topk: K must be >= 1");
    if (query.size() != index.vectors.cols)
        throw Error("retrieve_topk: query dimension mismatch");

    const size_t n = index.vectors.rows;
    std::vector<std::pair<double, int>> scored(n);
    for (size_t i = 0; i < n; ++i) {
        const double* row = index.vectors.row(i);
        double s = 0.0;
        for (size_t j = 0; j < query.size(); ++j) s += row[j] * query[j];
        scored[i] = {s, index.prompt_ids[i]};
    }
    const size_t take = std::min<size_t>(static_cast<size_t>(k), n);
    auto better = [](const std::pair<double, int>& a, const std::pair<double, int>& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    };
    std::partial_sort(scored.begin(), scored.begin() + static_cast<long>(take), scored.end(),
                      better);
    std::vector<int> out(take);
    for (size_t i = 0; i < take; ++i) out[i] = scored[i].second;
    return out;
}

/// Final LM input: prompts stacked least-similar first so the best prompt
/// sits adjacent to the task input, each part separated by exactly one
/// newline. `retrieved` arrives most-similar first, as retrieve_topk returns
/// it; empty `retrieved` yields the bare input (the 0-shot baseline).
inline std::string assemble_input(const std::vector<std::string>& retrieved,
                                  const std::string& input_text) {
    std::string out;
    for (size_t i = retrieved.size(); i > 0; --i) {
        out += retrieved[i - 1];
        out += '\n';
    }
    out += input_text;
    return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline constexpr int kIndexFileVersion = 1;

inline void save_index(const RetrievalIndex& index, const std::filesystem::path& path) {
    write_json(path, json{{"version", kIndexFileVersion},
                          {"params_fingerprint", index.params_fingerprint},
                          {"dim", index.vectors.cols},
                          {"prompt_ids", index.prompt_ids},
                          {"vectors", matrix_to_json(index.vectors)}});
}

/// Loads an index and rejects it when it was not built by `params`.
inline RetrievalIndex load_index(const std::filesystem::path& path,
                                 const EncoderParams& params) {
    const json j = read_json(path);
    if (j.value("version", -1) != kIndexFileVersion)
        throw DataError("unsupported index file version");
    RetrievalIndex index;
    index.params_fingerprint = j.at("params_fingerprint").get<std::string>();
    const std::string expect = params_fingerprint(params);
    if (index.params_fingerprint != expect)
        throw DataError("index was built with different encoder parameters (fingerprint " +
                        index.params_fingerprint + ", expected " + expect + ")");
    index.prompt_ids = j.at("prompt_ids").get<std::vector<int>>();
    index.vectors = matrix_from_json(j.at("vectors"));
    if (index.vectors.rows != index.prompt_ids.size())
        throw DataError("index row/id count mismatch");
    return index;
}

}  // namespace lodestone
