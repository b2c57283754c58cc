// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "lodestone/encoder.hpp"
#include "test_support.hpp"

using namespace lodestone;

TEST_CASE("build_vocab keeps the most frequent tokens") {
    const std::vector<std::string> corpus{"a a b"};
    const Vocab v = build_vocab(corpus, 10);
    REQUIRE(v.tokens.size() == 4);  // a, b, <unk>, <pad>
    CHECK(v.tokens[0] == "a");
    CHECK(v.tokens[1] == "b");
    CHECK(v.unk_id == 2);
    CHECK(v.pad_id == 3);

    const Vocab small = build_vocab(corpus, 1);
    REQUIRE(small.tokens.size() == 3);
    CHECK(small.tokens[0] == "a");
    CHECK(small.id_of("b") == small.unk_id);

    CHECK_THROWS_AS(build_vocab(std::vector<std::string>{"", "  "}, 10), DataError);
}

TEST_CASE("build_vocab ordering matches an independent counter") {
    Rng rng(31);
    std::vector<std::string> corpus;
    const std::vector<std::string> words{"red", "blue", "green", "teal", "pink", "onyx"};
    for (int i = 0; i < 200; ++i) {
        std::string line;
        for (size_t j = 0, n = 1 + rng.below(8); j < n; ++j) {
            if (j) line += ' ';
            line += words[rng.below(words.size())];
        }
        corpus.push_back(line);
    }
    // Oracle: count with a plain map, sort by (-count, token).
    std::map<std::string, int> counts;
    for (const auto& line : corpus)
        for (const auto& tok : split_ws(line)) counts[tok] += 1;
    std::vector<std::pair<int, std::string>> order;
    for (const auto& [tok, n] : counts) order.push_back({-n, tok});
    std::sort(order.begin(), order.end());

    const Vocab v = build_vocab(corpus, 4);
    REQUIRE(v.tokens.size() == 6);  // 4 + specials
    for (size_t i = 0; i < 4; ++i) CHECK(v.tokens[i] == order[i].second);
}

TEST_CASE("build_vocab lowercases and splits punctuation") {
    const std::vector<std::string> corpus{"Red, red! BLUE?"};
    const Vocab v = build_vocab(corpus, 10);
    CHECK(v.tokens[0] == "red");
    CHECK(v.id_of("red") == 0);
    CHECK(v.id_of("blue") == 1);
}

TEST_CASE("tokenize truncates, maps OOV to unk, never returns empty") {
    const Vocab v = build_vocab(std::vector<std::string>{"a b"}, 10);
    CHECK(tokenize(v, "a b") == std::vector<int>{v.id_of("a"), v.id_of("b")});
    CHECK(tokenize(v, "zzz") == std::vector<int>{v.unk_id});
    CHECK(tokenize(v, "") == std::vector<int>{v.unk_id});

    std::string long_text;
    for (int i = 0; i < 300; ++i) long_text += "a ";
    CHECK(tokenize(v, long_text).size() == 256);
    CHECK(tokenize(v, long_text, 16).size() == 16);
}

namespace {

// Independent encode oracle: naive mean + textbook matrix-vector product,
// written against the raw data buffers.
std::vector<double> encode_oracle(const Tower& tower, const std::vector<int>& ids) {
    const size_t de = tower.embedding.cols, d = tower.projection.cols;
    std::vector<double> mean(de, 0.0), out(d, 0.0);
    for (size_t k = 0; k < de; ++k) {
        double acc = 0.0;
        for (int id : ids) acc += tower.embedding.data[static_cast<size_t>(id) * de + k];
        mean[k] = acc / static_cast<double>(ids.size());
    }
    for (size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (size_t k = 0; k < de; ++k) acc += mean[k] * tower.projection.data[k * d + j];
        out[j] = acc;
    }
    return out;
}

Tower random_tower(size_t vocab, size_t de, size_t d, uint64_t seed) {
    Tower t;
    t.embedding = Matrix(vocab, de);
    t.projection = Matrix(de, d);
    Rng rng(seed);
    for (auto& x : t.embedding.data) x = rng.uniform(-1.0, 1.0);
    for (auto& x : t.projection.data) x = rng.uniform(-1.0, 1.0);
    return t;
}

}  // namespace

TEST_CASE("encode with an identity projection returns the embedding row") {
    Tower t;
    t.embedding = Matrix(3, 2);
    t.embedding.at(1, 0) = 0.25;
    t.embedding.at(1, 1) = -0.5;
    t.projection = Matrix(2, 2);
    t.projection.at(0, 0) = 1.0;
    t.projection.at(1, 1) = 1.0;
    const auto v = encode(t, {1});
    CHECK(v == std::vector<double>{0.25, -0.5});
    // The mean is idempotent on repeated ids.
    CHECK(encode(t, {1, 1}) == v);
    CHECK_THROWS_AS(encode(t, {}), DataError);
    CHECK_THROWS_AS(encode(t, {7}), Error);
}

TEST_CASE("encode matches an independently coded matrix oracle") {
    Rng rng(101);
    for (int trial = 0; trial < 50; ++trial) {
        const size_t vocab = 3 + rng.below(20), de = 1 + rng.below(12), d = 1 + rng.below(12);
        const Tower t = random_tower(vocab, de, d, rng.next_u64());
        std::vector<int> ids;
        for (size_t i = 0, n = 1 + rng.below(10); i < n; ++i)
            ids.push_back(static_cast<int>(rng.below(vocab)));
        const auto got = encode(t, ids);
        const auto want = encode_oracle(t, ids);
        REQUIRE(got.size() == want.size());
        for (size_t j = 0; j < got.size(); ++j)
            CHECK(got[j] == Catch::Approx(want[j]).margin(1e-12));
    }
}

TEST_CASE("encode is linear in the embedding matrix") {
    Tower t = random_tower(8, 4, 4, 55);
    const std::vector<int> ids{1, 3, 3, 5};
    const auto base = encode(t, ids);
    Tower scaled = t;
    for (auto& x : scaled.embedding.data) x *= 2.5;
    const auto v = encode(scaled, ids);
    for (size_t j = 0; j < v.size(); ++j)
        CHECK(v[j] == Catch::Approx(2.5 * base[j]).margin(1e-12));
}

TEST_CASE("sim is the inner product") {
    CHECK(sim({1, 0}, {0, 1}) == 0.0);
    CHECK(sim({1, 2}, {3, 4}) == 11.0);
    CHECK_THROWS_AS(sim({1, 2}, {1, 2, 3}), Error);

    Rng rng(66);
    for (int trial = 0; trial < 1000; ++trial) {
        const size_t d = 1 + rng.below(16);
        std::vector<double> a(d), b(d);
        for (auto& x : a) x = rng.uniform(-2.0, 2.0);
        for (auto& x : b) x = rng.uniform(-2.0, 2.0);
        CHECK(sim(a, b) == sim(b, a));
    }
}

TEST_CASE("init_params is deterministic, bounded, and per-tower independent") {
    const Vocab v = build_vocab(std::vector<std::string>{"a b c d e"}, 10);
    const EncoderParams p1 = init_params(v, 8, 6, 42);
    const EncoderParams p2 = init_params(v, 8, 6, 42);
    const EncoderParams p3 = init_params(v, 8, 6, 43);
    CHECK(params_fingerprint(p1) == params_fingerprint(p2));
    CHECK(params_fingerprint(p1) != params_fingerprint(p3));
    CHECK(p1.input_tower.embedding.data != p1.prompt_tower.embedding.data);
    for (double x : p1.input_tower.embedding.data) {
        CHECK(x >= -0.05);
        CHECK(x <= 0.05);
    }
    CHECK(p1.input_tower.embedding.rows == v.size());
    CHECK(p1.input_tower.projection.rows == 8);
    CHECK(p1.input_tower.projection.cols == 6);
}

TEST_CASE("params files round-trip and validate the vocab hash") {
    testing::TempDir dir("encoder");
    const Vocab v = build_vocab(std::vector<std::string>{"a b c d e f g"}, 10);
    const EncoderParams p = init_params(v, 8, 6, 42);
    write_json(dir / "params.json", params_to_json(p, v));

    auto [loaded, loaded_vocab] = params_from_json(read_json(dir / "params.json"));
    CHECK(params_fingerprint(loaded) == params_fingerprint(p));
    CHECK(loaded_vocab.tokens == v.tokens);
    CHECK(loaded_vocab.unk_id == v.unk_id);

    // Tampering with a stored token breaks the hash check.
    json j = read_json(dir / "params.json");
    j["vocab_tokens"][0] = "tampered";
    CHECK_THROWS_AS(params_from_json(j), DataError);

    json j2 = read_json(dir / "params.json");
    j2["version"] = 999;
    CHECK_THROWS_AS(params_from_json(j2), DataError);
}

TEST_CASE("params fingerprint tracks every weight") {
    const Vocab v = build_vocab(std::vector<std::string>{"a b"}, 10);
    EncoderParams p = init_params(v, 4, 4, 1);
    const std::string before = params_fingerprint(p);
    p.prompt_tower.projection.at(2, 3) += 1e-9;
    CHECK(params_fingerprint(p) != before);
}
