// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lodestone/encoder.hpp"
#include "lodestone/labeling.hpp"
#include "lodestone/taskdata.hpp"

namespace lodestone {

struct TrainConfig {
    int epochs = 3;
    double learning_rate = 1e-2;  // peak; linear warmup then linear decay to 0
    int batch_size = 16;
    int warmup_steps = 1000;  // additionally capped at 10% of total steps
    double weight_decay = 0.0;
    double adam_eps = 1e-8;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    size_t max_seq_len = 256;
    uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (!(learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be >= 0");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (warmup_steps < 0) throw ConfigError("train: warmup_steps must be >= 0");
    }
};

/// InfoNCE: -log( e^pos / (e^pos + sum_j e^neg_j) ), max-shifted so extreme
/// similarities neither overflow nor round the near-zero branch to 0.
inline double info_nce_loss(double pos_sim, const std::vector<double>& neg_sims) {
    if (neg_sims.empty()) throw Error("info_nce_loss: no negatives");
    if (!std::isfinite(pos_sim)) throw Error("info_nce_loss: non-finite positive similarity");
    double max_neg = -std::numeric_limits<double>::infinity();
    for (double s : neg_sims) {
        if (!std::isfinite(s)) throw Error("info_nce_loss: non-finite negative similarity");
        max_neg = std::max(max_neg, s);
    }
    if (pos_sim >= max_neg) {
        double acc = 0.0;
        for (double s : neg_sims) acc += std::exp(s - pos_sim);
        return std::log1p(acc);
    }
    double acc = std::exp(pos_sim - max_neg);
    for (double s : neg_sims) acc += std::exp(s - max_neg);
    return std::log(acc) + (max_neg - pos_sim);
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

/// Token ids of one instance: the input and its prompts with the positive
/// first, ready for the towers.
struct InstanceTokens {
    std::vector<int> input_ids;
    std::vector<std::vector<int>> prompt_ids;  // [0] positive, then negatives
    std::string example_id;
};

inline InstanceTokens tokenize_instance(const Vocab& vocab, const LabeledInstance& inst,
                                        const PromptPool& pool, size_t max_len = 256) {
    InstanceTokens t;
    t.example_id = inst.example_id;
    t.input_ids = tokenize(vocab, inst.input_text, max_len);
    t.prompt_ids.reserve(1 + inst.hard_negative_ids.size() + inst.random_negative_ids.size());
    t.prompt_ids.push_back(tokenize(vocab, pool.record(inst.positive_id).text, max_len));
    for (int pid : inst.hard_negative_ids)
        t.prompt_ids.push_back(tokenize(vocab, pool.record(pid).text, max_len));
    for (int pid : inst.random_negative_ids)
        t.prompt_ids.push_back(tokenize(vocab, pool.record(pid).text, max_len));
    return t;
}

/// Gradient (or optimizer-moment) storage shaped exactly like EncoderParams.
struct GradBuffers {
    Matrix input_embedding;
    Matrix input_projection;
    Matrix prompt_embedding;
    Matrix prompt_projection;

    explicit GradBuffers(const EncoderParams& p)
        : input_embedding(p.input_tower.embedding.rows, p.input_tower.embedding.cols),
          input_projection(p.input_tower.projection.rows, p.input_tower.projection.cols),
          prompt_embedding(p.prompt_tower.embedding.rows, p.prompt_tower.embedding.cols),
          prompt_projection(p.prompt_tower.projection.rows, p.prompt_tower.projection.cols) {}

    void zero() {
        for (Matrix* m : {&input_embedding, &input_projection, &prompt_embedding,
                          &prompt_projection})
            std::fill(m->data.begin(), m->data.end(), 0.0);
    }
};

namespace detail {

inline std::vector<double> mean_embedding(const Matrix& embedding, const std::vector<int>& ids) {
    std::vector<double> mean(embedding.cols, 0.0);
    for (int id : ids) {
        const double* row = embedding.row(static_cast<size_t>(id));
        for (size_t k = 0; k < embedding.cols; ++k) mean[k] += row[k];
    }
    const double inv = 1.0 / static_cast<double>(ids.size());
    for (auto& x : mean) x *= inv;
    return mean;
}

inline std::vector<double> project(const Matrix& projection, const std::vector<double>& mean) {
    std::vector<double> out(projection.cols, 0.0);
    for (size_t k = 0; k < projection.rows; ++k) {
        const double mk = mean[k];
        if (mk == 0.0) continue;
        const double* prow = projection.row(k);
        for (size_t j = 0; j < projection.cols; ++j) out[j] += mk * prow[j];
    }
    return out;
}

}  // namespace detail

/// Mean InfoNCE loss of a batch under the given parameters. Reference path
/// for gradient checks and validation; shares no code with loss_gradient's
/// backward pass.
inline double batch_loss(const EncoderParams& params,
                         std::span<const InstanceTokens> batch) {
    if (batch.empty()) throw Error("batch_loss: empty batch");
    double total = 0.0;
    for (const auto& inst : batch) {
        const auto m_x = detail::mean_embedding(params.input_tower.embedding, inst.input_ids);
        const auto v_x = detail::project(params.input_tower.projection, m_x);
        double pos = 0.0;
        std::vector<double> negs;
        negs.reserve(inst.prompt_ids.size() - 1);
        for (size_t k = 0; k < inst.prompt_ids.size(); ++k) {
            const auto m_p =
                detail::mean_embedding(params.prompt_tower.embedding, inst.prompt_ids[k]);
            const auto v_p = detail::project(params.prompt_tower.projection, m_p);
            const double s = sim(v_x, v_p);
            if (k == 0)
                pos = s;
            else
                negs.push_back(s);
        }
        total += info_nce_loss(pos, negs);
    }
    return total / static_cast<double>(batch.size());
}

/// Analytic gradient of the mean batch loss, accumulated into `grad` (which
/// is zeroed first). Returns the mean loss.
inline double loss_gradient(const EncoderParams& params, std::span<const InstanceTokens> batch,
                            GradBuffers& grad) {
    if (batch.empty()) throw Error("loss_gradient: empty batch");
    grad.zero();
    const size_t de = params.embed_dim;
    const size_t d = params.out_dim;
    const double inv_batch = 1.0 / static_cast<double>(batch.size());

    double total_loss = 0.0;
    for (const auto& inst : batch) {
        const size_t n_prompts = inst.prompt_ids.size();
        if (n_prompts < 2) throw Error("loss_gradient: instance has no negatives");

        // Forward.
        const auto m_x = detail::mean_embedding(params.input_tower.embedding, inst.input_ids);
        const auto v_x = detail::project(params.input_tower.projection, m_x);
        std::vector<std::vector<double>> m_p(n_prompts), v_p(n_prompts);
        std::vector<double> sims(n_prompts);
        for (size_t k = 0; k < n_prompts; ++k) {
            m_p[k] = detail::mean_embedding(params.prompt_tower.embedding, inst.prompt_ids[k]);
            v_p[k] = detail::project(params.prompt_tower.projection, m_p[k]);
            sims[k] = sim(v_x, v_p[k]);
        }
        {
            std::vector<double> negs(sims.begin() + 1, sims.end());
            total_loss += info_nce_loss(sims[0], negs);
        }

        // Softmax weights over {positive} u negatives, max-shifted.
        const double m = *std::max_element(sims.begin(), sims.end());
        std::vector<double> alpha(n_prompts);
        double z = 0.0;
        for (size_t k = 0; k < n_prompts; ++k) {
            alpha[k] = std::exp(sims[k] - m);
            z += alpha[k];
        }
        for (auto& a : alpha) a /= z;

        // dL/ds_k = alpha_k - [k == 0]; chain through sim, projection, mean.
        std::vector<double> g_vx(d, 0.0);
        for (size_t k = 0; k < n_prompts; ++k) {
            const double w = (alpha[k] - (k == 0 ? 1.0 : 0.0)) * inv_batch;
            if (w == 0.0) continue;
            for (size_t j = 0; j < d; ++j) g_vx[j] += w * v_p[k][j];

            // Prompt tower: dW_P += m_k (x) g_vk; dE_P[id] += W_P g_vk / n.
            std::vector<double> g_vk(d);
            for (size_t j = 0; j < d; ++j) g_vk[j] = w * v_x[j];
            for (size_t r = 0; r < de; ++r) {
                const double mr = m_p[k][r];
                if (mr != 0.0) {
                    double* gp = grad.prompt_projection.row(r);
                    for (size_t j = 0; j < d; ++j) gp[j] += mr * g_vk[j];
                }
            }
            std::vector<double> g_mk(de, 0.0);
            for (size_t r = 0; r < de; ++r) {
                const double* prow = params.prompt_tower.projection.row(r);
                double acc = 0.0;
                for (size_t j = 0; j < d; ++j) acc += prow[j] * g_vk[j];
                g_mk[r] = acc;
            }
            const double inv_len = 1.0 / static_cast<double>(inst.prompt_ids[k].size());
            for (int id : inst.prompt_ids[k]) {
                double* erow = grad.prompt_embedding.row(static_cast<size_t>(id));
                for (size_t r = 0; r < de; ++r) erow[r] += g_mk[r] * inv_len;
            }
        }

        // Input tower: dW_X += m_x (x) g_vx; dE_X[id] += W_X g_vx / n.
        for (size_t r = 0; r < de; ++r) {
            const double mr = m_x[r];
            if (mr != 0.0) {
                double* gp = grad.input_projection.row(r);
                for (size_t j = 0; j < d; ++j) gp[j] += mr * g_vx[j];
            }
        }
        std::vector<double> g_mx(de, 0.0);
        for (size_t r = 0; r < de; ++r) {
            const double* prow = params.input_tower.projection.row(r);
            double acc = 0.0;
            for (size_t j = 0; j < d; ++j) acc += prow[j] * g_vx[j];
            g_mx[r] = acc;
        }
        const double inv_len = 1.0 / static_cast<double>(inst.input_ids.size());
        for (int id : inst.input_ids) {
            double* erow = grad.input_embedding.row(static_cast<size_t>(id));
            for (size_t r = 0; r < de; ++r) erow[r] += g_mx[r] * inv_len;
        }
    }
    return total_loss * inv_batch;
}

// ---------------------------------------------------------------------------
// Validation metric and the training loop
// ---------------------------------------------------------------------------

/// Fraction of validation instances whose positive prompt scores strictly
/// above every one of its own recorded negatives; ties count as failures.
inline double retrieval_accuracy(const EncoderParams& params, const Vocab& vocab,
                                 const std::vector<LabeledInstance>& valid,
                                 const PromptPool& pool, size_t max_len = 256) {
    if (valid.empty()) throw DataError("retrieval_accuracy: empty validation set");
    size_t hits = 0;
    for (const auto& inst : valid) {
        const InstanceTokens t = tokenize_instance(vocab, inst, pool, max_len);
        const auto v_x = encode(params.input_tower, t.input_ids);
        const double pos = sim(v_x, encode(params.prompt_tower, t.prompt_ids[0]));
        bool ok = true;
        for (size_t k = 1; k < t.prompt_ids.size() && ok; ++k)
            ok = pos > sim(v_x, encode(params.prompt_tower, t.prompt_ids[k]));
        if (ok) hits += 1;
    }
    return static_cast<double>(hits) / static_cast<double>(valid.size());
}

/// Peak-anchored linear warmup/decay. 1-based step; warmup is capped at 10%
/// of the total step budget; the last step decays to 0.
inline double lr_at_step(int step, int total_steps, int warmup_steps, double peak) {
    if (total_steps <= 1) return peak;
    const int w = std::min(warmup_steps, total_steps / 10);
    if (step <= w) return peak * static_cast<double>(step) / static_cast<double>(w);
    return peak * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - w);
}

struct Checkpoint {
    EncoderParams params;
    int epoch = 0;
    double valid_accuracy = 0.0;
};

struct TrainLogRow {
    int step = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    Checkpoint best;
    double initial_accuracy = 0.0;           // before any update
    std::vector<double> epoch_accuracy;      // one entry per epoch
    std::vector<TrainLogRow> log;
};

/// Adam over the InfoNCE objective with per-epoch validation; returns the
/// checkpoint with the best validation retrieval accuracy (earliest epoch on
/// ties). Deterministic in (seed, config, data order).
inline TrainResult train(const std::vector<LabeledInstance>& train_set,
                         const std::vector<LabeledInstance>& valid_set, const PromptPool& pool,
                         const Vocab& vocab, EncoderParams params, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.empty() || valid_set.empty())
        throw DataError("train: empty train or validation set");

    std::vector<InstanceTokens> tokens;
    tokens.reserve(train_set.size());
    for (const auto& inst : train_set)
        tokens.push_back(tokenize_instance(vocab, inst, pool, cfg.max_seq_len));

    const int steps_per_epoch =
        static_cast<int>((train_set.size() + cfg.batch_size - 1) / cfg.batch_size);
    const int total_steps = cfg.epochs * steps_per_epoch;

    GradBuffers grad(params), adam_m(params), adam_v(params);
    TrainResult result;
    result.initial_accuracy =
        retrieval_accuracy(params, vocab, valid_set, pool, cfg.max_seq_len);

    auto adam_update = [&](Matrix& theta, const Matrix& g, Matrix& m1, Matrix& m2, double lr,
                           double bc1, double bc2) {
        for (size_t i = 0; i < theta.data.size(); ++i) {
            double gi = g.data[i] + cfg.weight_decay * theta.data[i];
            m1.data[i] = cfg.adam_beta1 * m1.data[i] + (1.0 - cfg.adam_beta1) * gi;
            m2.data[i] = cfg.adam_beta2 * m2.data[i] + (1.0 - cfg.adam_beta2) * gi * gi;
            const double mhat = m1.data[i] / bc1;
            const double vhat = m2.data[i] / bc2;
            theta.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    };

    int step = 0;
    Checkpoint best;
    bool have_best = false;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<size_t> order(tokens.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng epoch_rng = derive_rng(cfg.seed, "train-epoch", static_cast<uint64_t>(epoch));
        epoch_rng.shuffle(order);

        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<InstanceTokens> batch;
            batch.reserve(end - start);
            for (size_t i = start; i < end; ++i) batch.push_back(tokens[order[i]]);

            step += 1;
            double loss = 0.0;
            try {
                loss = loss_gradient(params, batch, grad);
                if (!std::isfinite(loss)) throw Error("loss is not finite");
            } catch (const Error& e) {
                std::string ids;
                for (const auto& b : batch) ids += (ids.empty() ? "" : ",") + b.example_id;
                throw Error("train: aborted at step " + std::to_string(step) + " (batch: " +
                            ids + "): " + e.what());
            }
            const double lr = lr_at_step(step, total_steps, cfg.warmup_steps, cfg.learning_rate);
            const double bc1 = 1.0 - std::pow(cfg.adam_beta1, step);
            const double bc2 = 1.0 - std::pow(cfg.adam_beta2, step);
            adam_update(params.input_tower.embedding, grad.input_embedding, adam_m.input_embedding,
                        adam_v.input_embedding, lr, bc1, bc2);
            adam_update(params.input_tower.projection, grad.input_projection,
                        adam_m.input_projection, adam_v.input_projection, lr, bc1, bc2);
            adam_update(params.prompt_tower.embedding, grad.prompt_embedding,
                        adam_m.prompt_embedding, adam_v.prompt_embedding, lr, bc1, bc2);
            adam_update(params.prompt_tower.projection, grad.prompt_projection,
                        adam_m.prompt_projection, adam_v.prompt_projection, lr, bc1, bc2);
            result.log.push_back(TrainLogRow{step, loss, lr});
        }

        const double acc = retrieval_accuracy(params, vocab, valid_set, pool, cfg.max_seq_len);
        result.epoch_accuracy.push_back(acc);
        if (!have_best || acc > best.valid_accuracy) {
            best = Checkpoint{params, epoch, acc};
            have_best = true;
        }
    }
    result.best = std::move(best);
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoint persistence
// ---------------------------------------------------------------------------

inline void save_checkpoint(const Checkpoint& ckpt, const Vocab& vocab,
                            const std::filesystem::path& path) {
    json j = params_to_json(ckpt.params, vocab);
    j["epoch"] = ckpt.epoch;
    j["valid_accuracy"] = ckpt.valid_accuracy;
    write_json(path, j);
}

inline std::pair<Checkpoint, Vocab> load_checkpoint(const std::filesystem::path& path) {
    const json j = read_json(path);
    auto [params, vocab] = params_from_json(j);
    Checkpoint ckpt;
    ckpt.params = std::move(params);
    ckpt.epoch = j.value("epoch", 0);
    ckpt.valid_accuracy = j.value("valid_accuracy", 0.0);
    return {std::move(ckpt), std::move(vocab)};
}

inline void write_training_log(const std::vector<TrainLogRow>& log,
                               const std::filesystem::path& path) {
    std::string csv = "step,loss,lr\n";
    char buf[128];
    for (const auto& row : log) {
        std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g\n", row.step, row.loss, row.lr);
        csv += buf;
    }
    write_file(path, csv);
}

}  // namespace lodestone
