// SPDX-License-Identifier: Apache-2.0
//
// End-to-end checks of the installed command-line surface; every test shells
// out to the real binaries.
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <string>

#include "lodestone/evalharness.hpp"
#include "lodestone/io.hpp"
#include "test_support.hpp"

using namespace lodestone;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

RunResult run(const std::string& command) {
    RunResult r;
    FILE* pipe = ::popen((command + " 2>&1").c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    while (size_t n = std::fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, n);
    const int status = ::pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

const std::string cli = LODESTONE_CLI_PATH;
const std::string synth = LODESTONE_SYNTH_PATH;

std::string prepare_demo(const testing::TempDir& dir) {
    const auto r = run(synth + " --out " + dir.path.string() +
                       " --train-per-task 60 --test-per-task 16");
    REQUIRE(r.exit_code == 0);
    return (dir / "run.conf").string();
}

}  // namespace

TEST_CASE("cli pipeline completes and writes the report") {
    testing::TempDir dir("cli-pipe");
    const std::string conf = prepare_demo(dir);
    const auto r = run(cli + " pipeline --config " + conf);
    INFO(r.output);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("best validation retrieval accuracy") != std::string::npos);
    CHECK(std::filesystem::exists(dir / "out/report.json"));
    CHECK(std::filesystem::exists(dir / "out/report_k0.json"));
    CHECK(std::filesystem::exists(dir / "out/report_compare.csv"));
}

TEST_CASE("cli label reruns are byte-identical") {
    testing::TempDir dir("cli-label");
    const std::string conf = prepare_demo(dir);
    REQUIRE(run(cli + " pool-build --config " + conf).exit_code == 0);
    REQUIRE(run(cli + " label --config " + conf).exit_code == 0);
    const std::string first = read_file(dir / "out/labels.jsonl");

    // Resume over the finished run: nothing changes.
    REQUIRE(run(cli + " label --config " + conf).exit_code == 0);
    CHECK(read_file(dir / "out/labels.jsonl") == first);

    // A fresh run from scratch reproduces the same bytes.
    std::filesystem::remove(dir / "out/labels.jsonl");
    std::filesystem::remove(dir / "out/labels.jsonl.progress");
    REQUIRE(run(cli + " label --config " + conf).exit_code == 0);
    CHECK(read_file(dir / "out/labels.jsonl") == first);
}

TEST_CASE("cli eval supports k overrides and compare diffs the reports") {
    testing::TempDir dir("cli-eval");
    const std::string conf = prepare_demo(dir);
    REQUIRE(run(cli + " pipeline --config " + conf).exit_code == 0);

    // Re-evaluate the baseline through the flag override into a second file.
    const auto r0 = run(cli + " eval --config " + conf + " --k 0");
    CHECK(r0.exit_code == 0);
    const EvalReport rep = report_from_json(read_json(dir / "out/report.json"));
    CHECK(rep.k == 0);

    const auto cmp = run(cli + " compare " + (dir / "out/report_k0.json").string() + " " +
                         (dir / "out/report.json").string());
    CHECK(cmp.exit_code == 0);
    CHECK(cmp.output.find("delta") != std::string::npos);

    const auto bad = run(cli + " compare missing.json also-missing.json");
    CHECK(bad.exit_code != 0);
}

TEST_CASE("cli surfaces config violations and missing inputs") {
    testing::TempDir dir("cli-errs");
    write_file(dir / "bad.conf", "lm = banana\nworkers = 0\n");
    const auto r = run(cli + " pool-build --config " + (dir / "bad.conf").string());
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("seed") != std::string::npos);
    CHECK(r.output.find("lm") != std::string::npos);
    CHECK(r.output.find("workers") != std::string::npos);

    const std::string conf = prepare_demo(dir);
    const auto missing = run(cli + " label --config " + conf);
    CHECK(missing.exit_code == 1);
    CHECK(missing.output.find("pool-build") != std::string::npos);
}

TEST_CASE("cli rejects unknown subcommands and requires --config") {
    const auto r = run(cli + " frobnicate");
    CHECK(r.exit_code != 0);
    const auto r2 = run(cli + " train");
    CHECK(r2.exit_code != 0);
    CHECK(r2.output.find("--config") != std::string::npos);
}
