// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "lodestone/errors.hpp"
#include "lodestone/io.hpp"
#include "lodestone/rng.hpp"
#include "lodestone/text.hpp"

namespace lodestone {

/// Closed token vocabulary with reserved unknown/padding entries appended
/// after the regular tokens.
struct Vocab {
    std::vector<std::string> tokens;  // regular tokens, then <unk>, <pad>
    std::map<std::string, int> ids;

    int unk_id = -1;
    int pad_id = -1;

    size_t size() const { return tokens.size(); }

    int id_of(const std::string& token) const {
        auto it = ids.find(token);
        return it == ids.end() ? unk_id : it->second;
    }

    uint64_t hash() const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& t : tokens) {
            h = fnv1a64(t, h);
            h = fnv1a64("\x1f", h);  // unit separator between tokens
        }
        return h;
    }

    static Vocab from_tokens(std::vector<std::string> regular) {
        Vocab v;
        v.tokens = std::move(regular);
        v.tokens.push_back("<unk>");
        v.tokens.push_back("<pad>");
        for (size_t i = 0; i < v.tokens.size(); ++i)
            v.ids[v.tokens[i]] = static_cast<int>(i);
        v.unk_id = static_cast<int>(v.tokens.size()) - 2;
        v.pad_id = static_cast<int>(v.tokens.size()) - 1;
        return v;
    }
};

/// Lowercased tokens split on whitespace and punctuation; the encoder-side
/// tokenization (metrics use their own normalization).
inline std::vector<std::string> encoder_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isspace(u) || std::ispunct(u)) {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(u)));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

/// Keeps the max_size most frequent corpus tokens (frequency ties resolved
/// lexicographically), then appends the special entries.
template <typename Iterable>
Vocab build_vocab(const Iterable& corpus, size_t max_size) {
    std::map<std::string, size_t> counts;
    for (const auto& text : corpus)
        for (auto& tok : encoder_tokens(text)) counts[tok] += 1;
    if (counts.empty()) throw DataError("build_vocab: empty corpus");

    std::vector<std::pair<std::string, size_t>> by_freq(counts.begin(), counts.end());
    std::sort(by_freq.begin(), by_freq.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (by_freq.size() > max_size) by_freq.resize(max_size);

    std::vector<std::string> kept;
    kept.reserve(by_freq.size());
    for (auto& [tok, n] : by_freq) kept.push_back(tok);
    return Vocab::from_tokens(std::move(kept));
}

/// Token ids for a text, truncated to max_len. Empty text maps to a single
/// unknown id so every input has an encoding.
inline std::vector<int> tokenize(const Vocab& vocab, std::string_view text,
                                 size_t max_len = 256) {
    std::vector<int> ids;
    for (const auto& tok : encoder_tokens(text)) {
        if (ids.size() >= max_len) break;
        ids.push_back(vocab.id_of(tok));
    }
    if (ids.empty()) ids.push_back(vocab.unk_id);
    return ids;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Dense row-major matrix of doubles.
struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(size_t r, size_t c) { return data[r * cols + c]; }
    double at(size_t r, size_t c) const { return data[r * cols + c]; }
    const double* row(size_t r) const { return data.data() + r * cols; }
    double* row(size_t r) { return data.data() + r * cols; }
};

/// One encoder tower: token embeddings (|V| x d_e) followed by a bias-free
/// linear projection (d_e x d).
struct Tower {
    Matrix embedding;
    Matrix projection;
};

/// All trainable parameters of the bi-encoder. The two towers have identical
/// shapes but independent values.
struct EncoderParams {
    size_t embed_dim = 64;
    size_t out_dim = 64;
    uint64_t vocab_hash = 0;
    Tower input_tower;
    Tower prompt_tower;

    size_t parameter_count() const {
        return 2 * (input_tower.embedding.data.size() + input_tower.projection.data.size());
    }
};

/// Fresh parameters, uniform in [-0.05, 0.05], deterministic in the seed.
inline EncoderParams init_params(const Vocab& vocab, size_t embed_dim, size_t out_dim,
                                 uint64_t seed) {
    if (embed_dim < 1 || out_dim < 1) throw ConfigError("encoder dims must be >= 1");
    EncoderParams p;
    p.embed_dim = embed_dim;
    p.out_dim = out_dim;
    p.vocab_hash = vocab.hash();
    auto fill = [&](Matrix& m, size_t rows, size_t cols, std::string_view tag) {
        m = Matrix(rows, cols);
        Rng rng = derive_rng(seed, "init", tag);
        for (auto& x : m.data) x = rng.uniform(-0.05, 0.05);
    };
    fill(p.input_tower.embedding, vocab.size(), embed_dim, "input.embedding");
    fill(p.input_tower.projection, embed_dim, out_dim, "input.projection");
    fill(p.prompt_tower.embedding, vocab.size(), embed_dim, "prompt.embedding");
    fill(p.prompt_tower.projection, embed_dim, out_dim, "prompt.projection");
    return p;
}

/// Tower forward pass: mean of the ids' embedding rows, then the linear
/// projection. Linear in the embedding matrix for fixed ids.
inline std::vector<double> encode(const Tower& tower, const std::vector<int>& ids) {
    if (ids.empty()) throw DataError("encode: empty id list");
    const size_t de = tower.embedding.cols;
    const size_t d = tower.projection.cols;

    std::vector<double> mean(de, 0.0);
    for (int id : ids) {
        if (id < 0 || static_cast<size_t>(id) >= tower.embedding.rows)
            throw Error("encode: token id out of range (invariant breach)");
        const double* row = tower.embedding.row(static_cast<size_t>(id));
        for (size_t k = 0; k < de; ++k) mean[k] += row[k];
    }
    const double inv = 1.0 / static_cast<double>(ids.size());
    for (auto& x : mean) x *= inv;

    std::vector<double> out(d, 0.0);
    for (size_t k = 0; k < de; ++k) {
        const double mk = mean[k];
        if (mk == 0.0) continue;
        const double* prow = tower.projection.row(k);
        for (size_t j = 0; j < d; ++j) out[j] += mk * prow[j];
    }
    return out;
}

/// Inner-product similarity.
inline double sim(const std::vector<double>& x_vec, const std::vector<double>& p_vec) {
    if (x_vec.size() != p_vec.size())
        throw Error("sim: dimension mismatch " + std::to_string(x_vec.size()) + " vs " +
                    std::to_string(p_vec.size()));
    double s = 0.0;
    for (size_t i = 0; i < x_vec.size(); ++i) s += x_vec[i] * p_vec[i];
    return s;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Fingerprint over dims, vocab hash and the exact bit patterns of every
/// parameter; identifies a parameter state for index validation.
inline std::string params_fingerprint(const EncoderParams& p) {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix_u64 = [&h](uint64_t v) {
        char buf[8];
        std::memcpy(buf, &v, 8);
        h = fnv1a64(std::string_view(buf, 8), h);
    };
    mix_u64(p.embed_dim);
    mix_u64(p.out_dim);
    mix_u64(p.vocab_hash);
    for (const Matrix* m : {&p.input_tower.embedding, &p.input_tower.projection,
                            &p.prompt_tower.embedding, &p.prompt_tower.projection}) {
        for (double x : m->data) {
            uint64_t bits;
            std::memcpy(&bits, &x, 8);
            mix_u64(bits);
        }
    }
    return to_hex(h);
}

inline json matrix_to_json(const Matrix& m) {
    return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

inline Matrix matrix_from_json(const json& j) {
    Matrix m(j.at("rows").get<size_t>(), j.at("cols").get<size_t>());
    m.data = j.at("data").get<std::vector<double>>();
    if (m.data.size() != m.rows * m.cols) throw DataError("matrix data size mismatch");
    return m;
}

inline constexpr int kParamsFileVersion = 1;

/// Self-contained parameter container: dims, the vocabulary, its hash, and
/// both towers. Loading re-hashes the stored tokens and rejects the file if
/// the recorded vocab hash does not match.
inline json params_to_json(const EncoderParams& p, const Vocab& vocab) {
    return json{{"version", kParamsFileVersion},
                {"embed_dim", p.embed_dim},
                {"out_dim", p.out_dim},
                {"vocab_hash", to_hex(p.vocab_hash)},
                {"vocab_tokens", vocab.tokens},
                {"input_tower",
                 {{"embedding", matrix_to_json(p.input_tower.embedding)},
                  {"projection", matrix_to_json(p.input_tower.projection)}}},
                {"prompt_tower",
                 {{"embedding", matrix_to_json(p.prompt_tower.embedding)},
                  {"projection", matrix_to_json(p.prompt_tower.projection)}}}};
}

inline std::pair<EncoderParams, Vocab> params_from_json(const json& j) {
    if (j.value("version", -1) != kParamsFileVersion)
        throw DataError("unsupported parameter file version");
    Vocab vocab;
    vocab.tokens = j.at("vocab_tokens").get<std::vector<std::string>>();
    if (vocab.tokens.size() < 2) throw DataError("parameter file vocab too small");
    for (size_t i = 0; i < vocab.tokens.size(); ++i)
        vocab.ids[vocab.tokens[i]] = static_cast<int>(i);
    vocab.unk_id = static_cast<int>(vocab.tokens.size()) - 2;
    vocab.pad_id = static_cast<int>(vocab.tokens.size()) - 1;

    EncoderParams p;
    p.embed_dim = j.at("embed_dim").get<size_t>();
    p.out_dim = j.at("out_dim").get<size_t>();
    p.vocab_hash = vocab.hash();
    if (to_hex(p.vocab_hash) != j.at("vocab_hash").get<std::string>())
        throw DataError("parameter file vocab hash mismatch");
    p.input_tower.embedding = matrix_from_json(j.at("input_tower").at("embedding"));
    p.input_tower.projection = matrix_from_json(j.at("input_tower").at("projection"));
    p.prompt_tower.embedding = matrix_from_json(j.at("prompt_tower").at("embedding"));
    p.prompt_tower.projection = matrix_from_json(j.at("prompt_tower").at("projection"));

    for (const Tower* t : {&p.input_tower, &p.prompt_tower}) {
        if (t->embedding.rows != vocab.size() || t->embedding.cols != p.embed_dim ||
            t->projection.rows != p.embed_dim || t->projection.cols != p.out_dim)
            throw DataError("parameter file tower shape mismatch");
    }
    return {std::move(p), std::move(vocab)};
}

}  // namespace lodestone
