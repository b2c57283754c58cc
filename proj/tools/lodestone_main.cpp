// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point for the prompt-retrieval pipeline. Every
// subcommand reads a flat config file; a handful of flags override it.

#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "lodestone/lodestone.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string seed;
    std::string workers;
    std::string k;
    std::string lm;
    std::string lm_url;
    std::string holdout_cluster;
    std::string pool_mode;
    std::string target_task;

    std::map<std::string, std::string> overrides() const {
        std::map<std::string, std::string> kv;
        if (!seed.empty()) kv["seed"] = seed;
        if (!workers.empty()) kv["workers"] = workers;
        if (!k.empty()) kv["k"] = k;
        if (!lm.empty()) kv["lm"] = lm;
        if (!lm_url.empty()) kv["lm_url"] = lm_url;
        if (!holdout_cluster.empty()) kv["holdout_cluster"] = holdout_cluster;
        if (!pool_mode.empty()) kv["pool_mode"] = pool_mode;
        if (!target_task.empty()) kv["target_task"] = target_task;
        return kv;
    }
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "Run configuration file")->required();
    cmd->add_option("--seed", flags.seed, "Override: global seed");
    cmd->add_option("--workers", flags.workers, "Override: parallel worker count");
    cmd->add_option("--k", flags.k, "Override: number of retrieved prompts");
    cmd->add_option("--lm", flags.lm, "Override: LM backend (mock|remote)");
    cmd->add_option("--lm-url", flags.lm_url, "Override: remote LM base URL");
    cmd->add_option("--holdout-cluster", flags.holdout_cluster,
                    "Override: cluster held out from the pool and used for eval");
    cmd->add_option("--pool-mode", flags.pool_mode,
                    "Override: remaining-clusters|target-task|all-tasks");
    cmd->add_option("--target-task", flags.target_task,
                    "Override: pool task for target-task mode");
}

lodestone::RunConfig config_for(const CommonFlags& flags) {
    return lodestone::load_config(flags.config_path, flags.overrides());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lodestone: LM-supervised prompt retrieval"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string compare_baseline, compare_candidate, compare_out;

    auto* pool_build = app.add_subcommand("pool-build", "Construct the prompt pool");
    auto* label = app.add_subcommand("label", "Score and label training examples");
    auto* train = app.add_subcommand("train", "Train the bi-encoder retriever");
    auto* index_build = app.add_subcommand("index-build", "Encode the pool for retrieval");
    auto* eval = app.add_subcommand("eval", "Evaluate the held-out cluster");
    auto* compare = app.add_subcommand("compare", "Diff two evaluation reports");
    auto* pipeline = app.add_subcommand("pipeline", "Run every stage in order");

    for (CLI::App* cmd : {pool_build, label, train, index_build, eval, pipeline})
        add_common_flags(cmd, flags);

    compare->add_option("baseline", compare_baseline, "Baseline report JSON")->required();
    compare->add_option("candidate", compare_candidate, "Candidate report JSON")->required();
    compare->add_option("--out", compare_out, "Optional CSV output path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (pool_build->parsed()) {
            lodestone::stage_pool_build(config_for(flags));
        } else if (label->parsed()) {
            lodestone::stage_label(config_for(flags));
        } else if (train->parsed()) {
            lodestone::stage_train(config_for(flags));
        } else if (index_build->parsed()) {
            lodestone::stage_index_build(config_for(flags));
        } else if (eval->parsed()) {
            const auto cfg = config_for(flags);
            lodestone::stage_eval(cfg, cfg.k, cfg.report);
        } else if (compare->parsed()) {
            lodestone::stage_compare(compare_baseline, compare_candidate, compare_out);
        } else if (pipeline->parsed()) {
            const auto cfg = config_for(flags);
            const auto summary = lodestone::stage_pipeline(cfg);
            std::cout << "pipeline: best validation retrieval accuracy "
                      << summary.valid_accuracy << "\n";
        }
    } catch (const lodestone::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
