// SPDX-License-Identifier: Apache-2.0
//
// Generates the bundled synthetic corpus (tasks, templates, mock LM table)
// plus a ready-to-run config, so the whole pipeline can be exercised offline:
//
//   lodestone-synth --out demo
//   lodestone pipeline --config demo/run.conf

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lodestone/io.hpp"
#include "lodestone/synthetic.hpp"

int main(int argc, char** argv) {
    CLI::App app{"lodestone-synth: generate the synthetic demo corpus"};
    std::string out_dir = "demo";
    int train_per_task = 120;
    int test_per_task = 60;
    uint64_t seed = 7;
    std::string holdout = "signal-choice";
    app.add_option("--out", out_dir, "Output directory");
    app.add_option("--train-per-task", train_per_task, "Training examples per task");
    app.add_option("--test-per-task", test_per_task, "Test examples per task");
    app.add_option("--seed", seed, "Corpus generation seed");
    app.add_option("--holdout-cluster", holdout, "Cluster named in the emitted config");
    CLI11_PARSE(app, argc, argv);

    try {
        lodestone::SyntheticSpec spec;
        spec.train_per_task = train_per_task;
        spec.test_per_task = test_per_task;
        spec.seed = seed;
        const auto paths = lodestone::write_synthetic_corpus(out_dir, spec);

        const std::string conf =
            "# generated by lodestone-synth\n"
            "tasks = " + paths.examples.string() + "\n"
            "tasks_manifest = " + paths.manifest.string() + "\n"
            "pool = " + out_dir + "/out/pool.jsonl\n"
            "labels = " + out_dir + "/out/labels.jsonl\n"
            "checkpoint = " + out_dir + "/out/retriever.json\n"
            "index = " + out_dir + "/out/index.json\n"
            "report = " + out_dir + "/out/report.json\n"
            "holdout_cluster = " + holdout + "\n"
            "pool_mode = remaining-clusters\n"
            "lm = mock\n"
            "lm_mock_table = " + paths.mock_table.string() + "\n"
            "embed_dim = 32\n"
            "encode_dim = 32\n"
            "learning_rate = 0.15\n"
            "epochs = 5\n"
            "k = 3\n"
            "seed = 7\n"
            "workers = 1\n";
        const auto conf_path = std::filesystem::path(out_dir) / "run.conf";
        lodestone::write_file(conf_path, conf);

        std::cout << "wrote " << paths.manifest << ", " << paths.examples << ",\n      "
                  << paths.mock_table << ", " << conf_path << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
