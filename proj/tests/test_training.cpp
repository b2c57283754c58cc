// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lodestone/mock_lm.hpp"
#include "lodestone/pipeline.hpp"
#include "lodestone/synthetic.hpp"
#include "lodestone/training.hpp"
#include "test_support.hpp"

using namespace lodestone;

TEST_CASE("info_nce_loss equals ln(1 + n) when every similarity ties") {
    for (double base : {-50.0, -1.0, 0.0, 3.5, 80.0}) {
        const std::vector<double> negs(40, base);
        CHECK(info_nce_loss(base, negs) == Catch::Approx(std::log(41.0)).margin(1e-9));
    }
    CHECK(info_nce_loss(0.0, {0.0}) == Catch::Approx(std::log(2.0)).margin(1e-12));
}

TEST_CASE("info_nce_loss saturates cleanly when the positive dominates") {
    std::vector<double> negs(40, -10.0);
    CHECK(info_nce_loss(40.0, negs) < 1e-20);
    CHECK(info_nce_loss(40.0, negs) > 0.0);  // strictly positive always
    // And the reverse direction overflows neither.
    CHECK(std::isfinite(info_nce_loss(-500.0, {500.0})));
    CHECK(info_nce_loss(-500.0, {500.0}) == Catch::Approx(1000.0).epsilon(1e-12));
}

TEST_CASE("info_nce_loss matches a naive log-sum-exp oracle") {
    Rng rng(8);
    for (int trial = 0; trial < 500; ++trial) {
        const size_t n = 1 + rng.below(41);
        const double pos = rng.uniform(-30.0, 30.0);
        std::vector<double> negs(n);
        for (auto& s : negs) s = rng.uniform(-30.0, 30.0);
        // Oracle: direct formula, safe in this range.
        double denom = std::exp(pos);
        for (double s : negs) denom += std::exp(s);
        const double want = -std::log(std::exp(pos) / denom);
        CHECK(info_nce_loss(pos, negs) == Catch::Approx(want).margin(1e-10));
    }
}

TEST_CASE("info_nce_loss is shift invariant") {
    Rng rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        const double pos = rng.uniform(-5.0, 5.0);
        std::vector<double> negs(10);
        for (auto& s : negs) s = rng.uniform(-5.0, 5.0);
        const double base = info_nce_loss(pos, negs);
        const double c = rng.uniform(-100.0, 100.0);
        std::vector<double> shifted = negs;
        for (auto& s : shifted) s += c;
        CHECK(info_nce_loss(pos + c, shifted) == Catch::Approx(base).margin(1e-8));
    }
}

TEST_CASE("info_nce_loss is monotone in its arguments") {
    const std::vector<double> negs{0.3, -0.2, 1.0};
    const double base = info_nce_loss(0.5, negs);
    CHECK(info_nce_loss(0.6, negs) < base);
    std::vector<double> worse = negs;
    worse[1] += 0.5;
    CHECK(info_nce_loss(0.5, worse) > base);

    CHECK_THROWS_AS(info_nce_loss(0.5, {}), Error);
    CHECK_THROWS_AS(info_nce_loss(std::nan(""), {0.0}), Error);
    CHECK_THROWS_AS(info_nce_loss(0.0, {std::numeric_limits<double>::infinity()}), Error);
}

// ---------------------------------------------------------------------------
// Gradient checks
// ---------------------------------------------------------------------------

namespace {

struct SmallProblem {
    Vocab vocab;
    EncoderParams params;
    std::vector<InstanceTokens> batch;
};

// Random (d=4, |V|=10) setup with `b` negatives per instance.
SmallProblem make_problem(uint64_t seed, int b, int batch_size = 2) {
    Rng rng(seed);
    std::vector<std::string> corpus;
    for (int i = 0; i < 10; ++i) corpus.push_back("w" + std::to_string(i));
    SmallProblem p;
    p.vocab = build_vocab(corpus, 8);  // 8 regular + unk + pad = 10 rows
    p.params = init_params(p.vocab, 4, 4, rng.next_u64());
    // Spread the initial weights so gradients are far from degenerate.
    for (Matrix* m : {&p.params.input_tower.embedding, &p.params.input_tower.projection,
                      &p.params.prompt_tower.embedding, &p.params.prompt_tower.projection})
        for (auto& x : m->data) x = rng.uniform(-0.8, 0.8);

    auto random_ids = [&] {
        std::vector<int> ids;
        for (size_t i = 0, n = 1 + rng.below(6); i < n; ++i)
            ids.push_back(static_cast<int>(rng.below(p.vocab.size())));
        return ids;
    };
    for (int i = 0; i < batch_size; ++i) {
        InstanceTokens t;
        t.example_id = "e" + std::to_string(i);
        t.input_ids = random_ids();
        for (int k = 0; k < 1 + b; ++k) t.prompt_ids.push_back(random_ids());
        p.batch.push_back(std::move(t));
    }
    return p;
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1e-6, std::abs(a), std::abs(b)});
}

// Central finite differences over every coordinate of every matrix.
double max_grad_rel_err(SmallProblem& p, double h = 1e-5) {
    GradBuffers grad(p.params);
    loss_gradient(p.params, p.batch, grad);

    double worst = 0.0;
    auto check_matrix = [&](Matrix& theta, const Matrix& analytic) {
        for (size_t i = 0; i < theta.data.size(); ++i) {
            const double keep = theta.data[i];
            theta.data[i] = keep + h;
            const double up = batch_loss(p.params, p.batch);
            theta.data[i] = keep - h;
            const double down = batch_loss(p.params, p.batch);
            theta.data[i] = keep;
            const double numeric = (up - down) / (2.0 * h);
            worst = std::max(worst, rel_err(analytic.data[i], numeric));
        }
    };
    check_matrix(p.params.input_tower.embedding, grad.input_embedding);
    check_matrix(p.params.input_tower.projection, grad.input_projection);
    check_matrix(p.params.prompt_tower.embedding, grad.prompt_embedding);
    check_matrix(p.params.prompt_tower.projection, grad.prompt_projection);
    return worst;
}

}  // namespace

TEST_CASE("loss_gradient matches central finite differences") {
    for (int b : {1, 3, 20}) {
        SmallProblem p = make_problem(1000 + static_cast<uint64_t>(b), b);
        CHECK(max_grad_rel_err(p) < 1e-4);
    }
}

TEST_CASE("loss_gradient is flat where the loss saturates") {
    SmallProblem p = make_problem(77, 2, 1);
    // Rig the towers so the positive similarity dwarfs the negatives: ids 0
    // and 1 get huge aligned embeddings through an identity-ish projection.
    p.batch[0].input_ids = {0};
    p.batch[0].prompt_ids = {{0}, {1}, {2}};
    auto& in_t = p.params.input_tower;
    auto& pr_t = p.params.prompt_tower;
    std::fill(in_t.embedding.data.begin(), in_t.embedding.data.end(), 0.0);
    std::fill(pr_t.embedding.data.begin(), pr_t.embedding.data.end(), 0.0);
    std::fill(in_t.projection.data.begin(), in_t.projection.data.end(), 0.0);
    std::fill(pr_t.projection.data.begin(), pr_t.projection.data.end(), 0.0);
    for (size_t k = 0; k < 4; ++k) {
        in_t.projection.at(k, k) = 1.0;
        pr_t.projection.at(k, k) = 1.0;
    }
    in_t.embedding.at(0, 0) = 10.0;
    pr_t.embedding.at(0, 0) = 10.0;   // sim(positive) = 100
    pr_t.embedding.at(1, 0) = -10.0;  // sim(neg 1) = -100
    pr_t.embedding.at(2, 0) = -10.0;  // sim(neg 2) = -100

    GradBuffers grad(p.params);
    const double loss = loss_gradient(p.params, p.batch, grad);
    CHECK(loss < 1e-20);
    double norm = 0.0;
    for (const Matrix* m : {&grad.input_embedding, &grad.input_projection,
                            &grad.prompt_embedding, &grad.prompt_projection})
        for (double x : m->data) norm += x * x;
    CHECK(std::sqrt(norm) < 1e-12);
}

TEST_CASE("gradient stays correct when all negative embeddings are scaled") {
    SmallProblem p = make_problem(123, 3);
    // Scale every prompt-tower row that appears only in negatives.
    std::set<int> positive_rows, negative_rows;
    for (const auto& inst : p.batch) {
        for (int id : inst.prompt_ids[0]) positive_rows.insert(id);
        for (size_t k = 1; k < inst.prompt_ids.size(); ++k)
            for (int id : inst.prompt_ids[k]) negative_rows.insert(id);
    }
    for (int id : negative_rows)
        if (!positive_rows.count(id))
            for (size_t c = 0; c < p.params.embed_dim; ++c)
                p.params.prompt_tower.embedding.at(static_cast<size_t>(id), c) *= 1.7;
    CHECK(max_grad_rel_err(p) < 1e-4);
}

// ---------------------------------------------------------------------------
// Validation metric
// ---------------------------------------------------------------------------

namespace {

struct TinyWorld {
    PromptPool pool;
    std::vector<LabeledInstance> instances;
    Vocab vocab;
};

TinyWorld tiny_world(uint64_t seed, size_t n_prompts = 12, size_t n_instances = 8) {
    TinyWorld w;
    Rng rng(seed);
    std::vector<std::string> corpus;
    for (size_t i = 0; i < n_prompts; ++i) {
        PromptRecord r;
        r.prompt_id = static_cast<int>(i);
        r.text = "tok" + std::to_string(i % 5) + " tok" + std::to_string(rng.below(5));
        r.source_task = i % 2 ? "a" : "b";
        r.source_example = "p" + std::to_string(i);
        w.pool.by_task[r.source_task].push_back(r.prompt_id);
        corpus.push_back(r.text);
        w.pool.records.push_back(std::move(r));
    }
    for (size_t i = 0; i < n_instances; ++i) {
        LabeledInstance inst;
        inst.example_id = "e" + std::to_string(i);
        inst.task_id = i % 2 ? "a" : "b";
        inst.input_text = "tok" + std::to_string(rng.below(5)) + " query";
        inst.positive_id = static_cast<int>(rng.below(n_prompts));
        inst.positive_score = 1.0;
        for (int k = 0; k < 3; ++k) {
            int pid = static_cast<int>(rng.below(n_prompts));
            if (pid != inst.positive_id) inst.hard_negative_ids.push_back(pid);
        }
        for (int k = 0; k < 3; ++k)
            inst.random_negative_ids.push_back(static_cast<int>(rng.below(n_prompts)));
        corpus.push_back(inst.input_text);
        w.instances.push_back(std::move(inst));
    }
    w.vocab = build_vocab(corpus, 64);
    return w;
}

}  // namespace

TEST_CASE("retrieval_accuracy matches a brute-force ranking oracle") {
    TinyWorld w = tiny_world(5);
    const EncoderParams params = init_params(w.vocab, 8, 8, 3);
    const double got = retrieval_accuracy(params, w.vocab, w.instances, w.pool);

    size_t hits = 0;
    for (const auto& inst : w.instances) {
        const auto x = encode(params.input_tower, tokenize(w.vocab, inst.input_text));
        const double pos =
            sim(x, encode(params.prompt_tower,
                          tokenize(w.vocab, w.pool.record(inst.positive_id).text)));
        bool ok = true;
        std::vector<int> negs = inst.hard_negative_ids;
        negs.insert(negs.end(), inst.random_negative_ids.begin(),
                    inst.random_negative_ids.end());
        for (int pid : negs)
            if (sim(x, encode(params.prompt_tower, tokenize(w.vocab, w.pool.record(pid).text))) >=
                pos)
                ok = false;
        if (ok) hits += 1;
    }
    CHECK(got == Catch::Approx(static_cast<double>(hits) / w.instances.size()));
}

TEST_CASE("retrieval_accuracy is zero for all-zero parameters (ties fail)") {
    TinyWorld w = tiny_world(6);
    EncoderParams params = init_params(w.vocab, 8, 8, 3);
    for (Matrix* m : {&params.input_tower.embedding, &params.input_tower.projection,
                      &params.prompt_tower.embedding, &params.prompt_tower.projection})
        std::fill(m->data.begin(), m->data.end(), 0.0);
    CHECK(retrieval_accuracy(params, w.vocab, w.instances, w.pool) == 0.0);
}

TEST_CASE("lr schedule warms up linearly then decays to zero") {
    // 200 steps, warmup capped at 20.
    const int total = 200;
    const double peak = 0.1;
    CHECK(lr_at_step(1, total, 1000, peak) == Catch::Approx(peak / 20.0));
    CHECK(lr_at_step(20, total, 1000, peak) == Catch::Approx(peak));
    CHECK(lr_at_step(110, total, 1000, peak) == Catch::Approx(peak * 90.0 / 180.0));
    CHECK(lr_at_step(total, total, 1000, peak) == 0.0);
    // Explicit warmup below the cap is honored.
    CHECK(lr_at_step(5, total, 10, peak) == Catch::Approx(peak / 2.0));
    // Monotone up then down.
    for (int s = 2; s <= 20; ++s)
        CHECK(lr_at_step(s, total, 1000, peak) > lr_at_step(s - 1, total, 1000, peak));
    for (int s = 21; s <= total; ++s)
        CHECK(lr_at_step(s, total, 1000, peak) <= lr_at_step(s - 1, total, 1000, peak));
}

// ---------------------------------------------------------------------------
// The training loop
// ---------------------------------------------------------------------------

namespace {

struct TrainFixture {
    PromptPool pool;
    Vocab vocab;
    std::vector<LabeledInstance> train_set, valid_set;

    explicit TrainFixture(uint64_t seed) {
        SyntheticSpec spec;
        spec.train_per_task = 30;
        spec.test_per_task = 0;
        spec.seed = seed;
        const TaskSet ts = make_synthetic_taskset(spec);
        pool = build_pool(ts, "signal-choice", PoolMode::RemainingClusters, seed);
        const MockLm lm(synthetic_mock_table());
        LabelingConfig cfg;
        cfg.candidate_subset_size = 15;
        cfg.negatives_count = 8;
        std::vector<LabeledInstance> instances;
        for (const auto& e : labeling_examples(ts, pool)) {
            Rng rng = derive_rng(seed, "label", e.example_id);
            if (auto inst = label_example(lm, pool, e, cfg, rng)) instances.push_back(*inst);
        }
        std::vector<std::string> corpus;
        for (const auto& r : pool.records) corpus.push_back(r.text);
        for (const auto& inst : instances) corpus.push_back(inst.input_text);
        vocab = build_vocab(corpus, 512);
        Rng rng = derive_rng(seed, "split");
        std::tie(train_set, valid_set) = split_train_valid(instances, 0.9, rng);
    }
};

}  // namespace

TEST_CASE("training improves validation accuracy on the synthetic corpus") {
    TrainFixture fx(7);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.learning_rate = 0.15;
    cfg.batch_size = 16;
    cfg.seed = 7;
    const EncoderParams init = init_params(fx.vocab, 16, 16, 7);
    const TrainResult result = train(fx.train_set, fx.valid_set, fx.pool, fx.vocab, init, cfg);

    CHECK(result.epoch_accuracy.size() == 3);  // one checkpoint considered per epoch
    CHECK(result.epoch_accuracy[0] > result.initial_accuracy);
    CHECK(result.best.valid_accuracy >= result.epoch_accuracy[0]);
    CHECK(result.best.epoch >= 1);
    CHECK(result.best.epoch <= 3);
    // The log covers every step with positive finite losses.
    const int steps_per_epoch =
        static_cast<int>((fx.train_set.size() + 15) / 16);
    CHECK(static_cast<int>(result.log.size()) == 3 * steps_per_epoch);
    for (const auto& row : result.log) {
        CHECK(std::isfinite(row.loss));
        CHECK(row.loss > 0.0);
    }
}

TEST_CASE("training with lr=0 changes nothing and ties resolve to the earliest epoch") {
    TrainFixture fx(7);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.learning_rate = 0.0;
    cfg.seed = 7;
    const EncoderParams init = init_params(fx.vocab, 16, 16, 7);
    const std::string before = params_fingerprint(init);
    const TrainResult result = train(fx.train_set, fx.valid_set, fx.pool, fx.vocab, init, cfg);
    CHECK(params_fingerprint(result.best.params) == before);
    CHECK(result.best.valid_accuracy == result.initial_accuracy);
    CHECK(result.best.epoch == 1);  // all epochs tie; earliest wins
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
    TrainFixture fx(7);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.learning_rate = 0.15;
    cfg.seed = 11;
    const EncoderParams init = init_params(fx.vocab, 16, 16, 7);
    const TrainResult a = train(fx.train_set, fx.valid_set, fx.pool, fx.vocab, init, cfg);
    const TrainResult b = train(fx.train_set, fx.valid_set, fx.pool, fx.vocab, init, cfg);
    CHECK(params_fingerprint(a.best.params) == params_fingerprint(b.best.params));
    REQUIRE(a.log.size() == b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].loss == b.log[i].loss);
        CHECK(a.log[i].lr == b.log[i].lr);
    }
}

TEST_CASE("training aborts with step and batch diagnostics on a blow-up") {
    TrainFixture fx(7);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.learning_rate = 1e200;  // guaranteed overflow
    cfg.warmup_steps = 0;
    cfg.seed = 7;
    const EncoderParams init = init_params(fx.vocab, 16, 16, 7);
    try {
        train(fx.train_set, fx.valid_set, fx.pool, fx.vocab, init, cfg);
        FAIL("expected abort");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("step") != std::string::npos);
        CHECK(msg.find("batch") != std::string::npos);
    }
}

TEST_CASE("checkpoints round-trip through their file format") {
    testing::TempDir dir("training");
    TrainFixture fx(7);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.learning_rate = 0.05;
    cfg.seed = 7;
    const EncoderParams init = init_params(fx.vocab, 16, 16, 7);
    const TrainResult result = train(fx.train_set, fx.valid_set, fx.pool, fx.vocab, init, cfg);
    save_checkpoint(result.best, fx.vocab, dir / "ckpt.json");
    auto [loaded, vocab] = load_checkpoint(dir / "ckpt.json");
    CHECK(params_fingerprint(loaded.params) == params_fingerprint(result.best.params));
    CHECK(loaded.epoch == result.best.epoch);
    CHECK(loaded.valid_accuracy == result.best.valid_accuracy);
    CHECK(vocab.tokens == fx.vocab.tokens);

    write_training_log(result.log, dir / "log.csv");
    const std::string csv = read_file(dir / "log.csv");
    CHECK(csv.rfind("step,loss,lr\n", 0) == 0);
}
