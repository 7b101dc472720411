// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tvla/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kFixture = fs::path(TVLA_SOURCE_DIR) / "tests" / "fixtures" / "cli";

struct Result {
    int status = -1;
    std::string out;
    std::string err;
};

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("tvla_test_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string quote(const std::string& s) { return "'" + s + "'"; }

Result run(const std::string& args, const std::string& env = "") {
    const fs::path err_file = fs::temp_directory_path() / "tvla_test_cli_stderr.txt";
    const std::string cmd = env + " " + quote(TVLA_CLI_PATH) + " " + args + " 2>" + quote(err_file.string());
    Result r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    std::size_t n = 0;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) {
        r.out.append(buf, n);
    }
    const int status = pclose(pipe);
    r.status = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = tvla::read_file(err_file);
    return r;
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        out.push_back(line);
    }
    return out;
}

json error_of(const Result& r) {
    const json j = json::parse(r.err);
    REQUIRE(j.contains("error"));
    return j.at("error");
}

std::string fixture(const std::string& name) { return quote((kFixture / name).string()); }

} // namespace

TEST_CASE("eval on the bundled 50-episode fixture") {
    const fs::path dir = scratch("eval");
    const auto t0 = std::chrono::steady_clock::now();
    const Result r = run("eval --checkpoint " + fixture("model.ckpt") + " --data " + fixture("data") + " --out " +
                         quote((dir / "a.json").string()));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    MESSAGE("eval took " << seconds << " s");
    REQUIRE(r.status == 0);
    CHECK(r.err.empty());
    CHECK(seconds < 60.0);
    CHECK(r.out.find("| Output | ROUGE↑ | BLEU↑ | CosSim↑ | MSE↓ |") != std::string::npos);
    CHECK(r.out.find("| Full |") != std::string::npos);

    const json report = json::parse(tvla::read_file(dir / "a.json"));
    CHECK(report.at("n_samples").get<int>() > 0);
    CHECK(report.at("config").at("split") == "test");

    REQUIRE(run("eval --checkpoint " + fixture("model.ckpt") + " --data " + fixture("data") + " --out " +
                quote((dir / "b.json").string()))
                .status == 0);
    CHECK(tvla::read_file(dir / "a.json") == tvla::read_file(dir / "b.json"));

    const Result action = run("eval --checkpoint " + fixture("model.ckpt") + " --data " + fixture("data") +
                              " --spec action --split val --max-records 5");
    REQUIRE(action.status == 0);
    CHECK(action.out.find("| Action | - | - |") != std::string::npos);
}

TEST_CASE("infer prints one prompt, one generated and one ground-truth line") {
    for (const char* frame : {"0", "4"}) {
        const Result r = run("infer --checkpoint " + fixture("model.ckpt") + " --data " + fixture("data") +
                             " --episode 25 --frame " + frame);
        REQUIRE(r.status == 0);
        const auto ls = lines(r.out);
        REQUIRE(ls.size() == 3);
        CHECK(ls[0].rfind("prompt: ", 0) == 0);
        CHECK(ls[1].rfind("generated: ", 0) == 0);
        CHECK(ls[1].find("| action: ") != std::string::npos);
        CHECK(ls[2].rfind("ground truth: ", 0) == 0);
        CHECK(ls[2].find("[action]") != std::string::npos);
    }
}

TEST_CASE("train rejects an unknown config key by name") {
    const fs::path dir = scratch("unknown_key");
    tvla::write_file_atomic(dir / "c.json", R"({"schema_version": 1, "train": {"epochs": 1, "learnin_rate": 0.1}})");
    const Result r = run("train --config " + quote((dir / "c.json").string()) + " --data " + fixture("data") +
                         " --out " + quote((dir / "run").string()));
    CHECK(r.status == 2);
    CHECK(r.out.empty());
    const json e = error_of(r);
    CHECK(e.at("code") == "config_error");
    CHECK(e.at("exit_code") == 2);
    CHECK(e.at("detail").at("key") == "train.learnin_rate");
    CHECK(e.at("message").get<std::string>().find("train.learnin_rate") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "run"));
}

TEST_CASE("exit codes") {
    const fs::path dir = scratch("exit_codes");
    CHECK(run("--help").status == 0);
    CHECK(run("").status == 2);
    CHECK(run("eval --data " + fixture("data")).status == 2);

    const Result missing = run("eval --checkpoint " + quote((dir / "absent.ckpt").string()) + " --data " +
                               fixture("data"));
    CHECK(missing.status == 3);
    CHECK(error_of(missing).at("code") == "io_error");

    const Result bad_frame = run("infer --checkpoint " + fixture("model.ckpt") + " --data " + fixture("data") +
                                 " --episode 0 --frame 100000");
    CHECK(bad_frame.status == 3);

    tvla::write_file_atomic(dir / "res16.json", R"({"schema_version": 1, "codec": {"resolution": 16}})");
    const Result mismatch = run("train --config " + quote((dir / "res16.json").string()) + " --data " +
                                fixture("data") + " --out " + quote((dir / "run").string()));
    CHECK(mismatch.status == 4);
    CHECK(error_of(mismatch).at("code") == "incompatible_artifacts");

    REQUIRE(run("datagen --episodes 10 --resolution 16 --out " + quote((dir / "d16").string())).status == 0);
    const Result ckpt_mismatch = run("eval --checkpoint " + fixture("model.ckpt") + " --data " +
                                     quote((dir / "d16").string()));
    CHECK(ckpt_mismatch.status == 4);
}

TEST_CASE("datagen is reproducible and flags override the config") {
    const fs::path dir = scratch("datagen");
    const std::string cfg = fixture("config.json");
    REQUIRE(run("datagen --config " + cfg + " --out " + quote((dir / "a").string())).status == 0);
    REQUIRE(run("datagen --config " + cfg + " --out " + quote((dir / "b").string())).status == 0);
    for (const auto& entry : fs::directory_iterator(dir / "a")) {
        CAPTURE(entry.path().filename().string());
        CHECK(tvla::read_file(entry.path()) == tvla::read_file(dir / "b" / entry.path().filename()));
    }
    CHECK(tvla::read_file(dir / "a" / "train-00000.jsonl") ==
          tvla::read_file(kFixture / "data" / "train-00000.jsonl"));

    const Result r = run("datagen --config " + cfg + " --episodes 20 --seed 5 --split-ratios 0.5,0.25,0.25 --out " +
                         quote((dir / "c").string()));
    REQUIRE(r.status == 0);
    const json summary = json::parse(r.out);
    CHECK(summary.at("episodes") == 20);
    CHECK(summary.at("train") == 10);
    CHECK(summary.at("val") == 5);
    CHECK(summary.at("test") == 5);

    const Result bad = run("datagen --split-ratios 0.5,0.5 --out " + quote((dir / "d").string()));
    CHECK(bad.status == 2);
}

TEST_CASE("train, resume and rerun from the persisted config snapshot") {
    const fs::path dir = scratch("train");
    tvla::write_file_atomic(dir / "c.json", R"({
      "schema_version": 1,
      "codec": {"resolution": 10},
      "model": {"embed_dim": 16, "layers": 1, "heads": 2, "ff_dim": 32, "max_seq_len": 112},
      "train": {"epochs": 2, "batch_size": 4, "accumulation_steps": 1, "epoch_examples": 16, "warmup_steps": 2,
                "val_max_records": 4},
      "data": {"episodes": 50, "seed": 11},
      "eval": {"max_new_tokens": 24}})");
    const std::string data = fixture("data");
    const Result full = run("train --config " + quote((dir / "c.json").string()) + " --data " + data + " --out " +
                            quote((dir / "full").string()));
    REQUIRE(full.status == 0);
    CHECK(json::parse(lines(full.out).back()).at("steps") == 8);

    REQUIRE(run("train --config " + quote((dir / "c.json").string()) + " --data " + data + " --out " +
                quote((dir / "resumed").string()) + " --stop-after-steps 3")
                .status == 0);
    REQUIRE(run("train --config " + quote((dir / "c.json").string()) + " --data " + data + " --out " +
                quote((dir / "resumed").string()) + " --resume")
                .status == 0);
    CHECK(tvla::read_file(dir / "full" / "best.ckpt") == tvla::read_file(dir / "resumed" / "best.ckpt"));

    REQUIRE(run("train --config " + quote((dir / "full" / "config.json").string()) + " --data " + data + " --out " +
                quote((dir / "snapshot").string()))
                .status == 0);
    CHECK(tvla::read_file(dir / "full" / "final.ckpt") == tvla::read_file(dir / "snapshot" / "final.ckpt"));
    CHECK(tvla::read_file(dir / "full" / "config.json") == tvla::read_file(dir / "snapshot" / "config.json"));
}

TEST_CASE("pretrain then train from the pretrained checkpoint") {
    const fs::path dir = scratch("pretrain");
    tvla::write_file_atomic(dir / "c.json", R"({
      "schema_version": 1,
      "codec": {"resolution": 10},
      "model": {"embed_dim": 16, "layers": 1, "heads": 2, "ff_dim": 32, "max_seq_len": 112},
      "train": {"epochs": 1, "batch_size": 4, "accumulation_steps": 1, "epoch_examples": 8, "val_max_records": 4},
      "data": {"episodes": 50, "seed": 11},
      "eval": {"max_new_tokens": 24},
      "ablation": {"pretrain_episodes": 20,
                   "pretrain": {"epochs": 1, "batch_size": 4, "accumulation_steps": 1, "epoch_examples": 8,
                                "val_max_records": 4}}})");
    const Result pre = run("pretrain --config " + quote((dir / "c.json").string()) + " --out " +
                           quote((dir / "pre").string()));
    REQUIRE(pre.status == 0);
    REQUIRE(fs::exists(dir / "pre" / "final.ckpt"));
    const Result joint = run("train --config " + quote((dir / "c.json").string()) + " --data " + fixture("data") +
                             " --init-checkpoint " + quote((dir / "pre" / "final.ckpt").string()) + " --out " +
                             quote((dir / "joint").string()));
    CHECK(joint.status == 0);
    const Result infer = run("infer --checkpoint " + quote((dir / "pre" / "final.ckpt").string()) + " --data " +
                             fixture("data") + " --episode 25 --frame 0");
    REQUIRE(infer.status == 0);
    CHECK(lines(infer.out)[0].find("action") == std::string::npos);
}

TEST_CASE("ablate writes the table under the output root and caches under TP_CACHE_DIR") {
    const fs::path dir = scratch("ablate");
    tvla::write_file_atomic(dir / "plan.json", R"({
      "schema_version": 1,
      "codec": {"resolution": 10},
      "model": {"embed_dim": 16, "layers": 1, "heads": 2, "ff_dim": 32, "max_seq_len": 112},
      "train": {"epochs": 1, "batch_size": 4, "accumulation_steps": 1, "epoch_examples": 8, "val_max_records": 4},
      "data": {"episodes": 20, "seed": 11},
      "eval": {"max_records": 4, "max_new_tokens": 16},
      "ablation": {"name": "cli_state", "axis": "include_state", "seeds": [0], "resolution": 10}})");
    const std::string env = "TP_CACHE_DIR=" + quote((dir / "cache").string());
    const std::string args =
        "ablate --plan " + quote((dir / "plan.json").string()) + " --out-root " + quote((dir / "runs").string());
    const Result r = run(args, env);
    REQUIRE(r.status == 0);
    CHECK(r.out.find("| State |") != std::string::npos);
    CHECK(fs::exists(dir / "runs" / "cli_state" / "table.md"));
    CHECK(fs::exists(dir / "runs" / "cli_state" / "verdicts.md"));
    CHECK(fs::exists(dir / "runs" / "cli_state" / "config.json"));
    CHECK(fs::exists(dir / "cache" / "cells"));
    CHECK_FALSE(fs::exists(dir / "runs" / "cache"));

    const std::string table = tvla::read_file(dir / "runs" / "cli_state" / "table.md");
    const Result again = run(args, env);
    REQUIRE(again.status == 0);
    CHECK(json::parse(lines(again.out).back()).at("train_steps") == 0);
    CHECK(tvla::read_file(dir / "runs" / "cli_state" / "table.md") == table);
}
