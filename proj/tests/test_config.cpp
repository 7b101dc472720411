// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "tvla/config.hpp"
#include "tvla/error.hpp"
#include "tvla/io.hpp"

using namespace tvla;
using nlohmann::json;

namespace {

// Returns the offending key reported by a config error, or "<no error>".
std::string rejected_key(const json& j) {
    try {
        parse_run_config(j);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::config_error);
        CHECK(exit_code(e.code()) == 2);
        return e.detail().value("key", std::string("<no key>"));
    }
    return "<no error>";
}

} // namespace

TEST_CASE("defaults round-trip and partial configs are materialized") {
    const json defaults = to_json(RunConfigFile{});
    CHECK(to_json(parse_run_config(defaults)) == defaults);

    const RunConfigFile c = parse_run_config({{"schema_version", 1}, {"train", {{"epochs", 5}}}});
    CHECK(c.train.epochs == 5);
    CHECK(c.train.batch_size == 8);
    const json full = to_json(c);
    CHECK(full.at("model").at("embed_dim") == 128);
    CHECK(full.at("ablation").at("seeds") == json::array({0, 1, 2}));
    CHECK(full.at("codec").at("resolution") == 50);
}

TEST_CASE("unknown keys are rejected by name") {
    CHECK(rejected_key({{"schema_version", 1}, {"trian", json::object()}}) == "trian");
    CHECK(rejected_key({{"schema_version", 1}, {"train", {{"learnin_rate", 0.1}}}}) == "train.learnin_rate");
    CHECK(rejected_key({{"schema_version", 1}, {"train", {{"spec", {{"kindd", "full"}}}}}}) == "train.spec.kindd");
    CHECK(rejected_key({{"schema_version", 1}, {"data", {{"expert", {{"sigma", 0.1}}}}}}) == "data.expert.sigma");
    CHECK(rejected_key({{"schema_version", 1}, {"model", {{"vocab_size", 10}}}}) == "model.vocab_size");
    CHECK(rejected_key({{"schema_version", 1},
                        {"ablation", {{"hypotheses", {{{"name", "x"}, {"metrc", "mse"}}}}}}}) ==
          "ablation.hypotheses[0].metrc");
}

TEST_CASE("schema version and types are enforced") {
    CHECK(rejected_key(json::object()) == "schema_version");
    CHECK(rejected_key({{"schema_version", 2}}) == "schema_version");
    CHECK(rejected_key({{"schema_version", 1}, {"train", {{"epochs", "three"}}}}) == "train.epochs");
    CHECK(rejected_key({{"schema_version", 1}, {"train", {{"epochs", 2.5}}}}) == "train.epochs");
    CHECK(rejected_key({{"schema_version", 1}, {"train", {{"learning_rate", 1}}}}) == "<no error>");
    CHECK(rejected_key({{"schema_version", 1}, {"model", {{"embed_dim", 100}, {"heads", 3}}}}) == "model");
    CHECK(rejected_key({{"schema_version", 1}, {"codec", {{"resolution", 1}}}}) == "codec");
    CHECK(rejected_key({{"schema_version", 1}, {"ablation", {{"axis", "colour"}}}}) == "ablation.axis");
    CHECK(rejected_key({{"schema_version", 1}, {"data", {{"split_ratios", {0.5, 0.5}}}}}) ==
          "data.split_ratios");
}

TEST_CASE("ablation settings") {
    const RunConfigFile c = parse_run_config(
        {{"schema_version", 1},
         {"ablation", {{"axis", "checkpoint"}, {"seeds", {3, 4}}, {"pretrain", {{"epochs", 1}}}}}});
    CHECK(c.ablation.axis == AblationAxis::checkpoint);
    CHECK(c.ablation.pretrain.epochs == 1);
    CHECK(c.ablation.pretrain.phase == TrainPhase::pretrain_language);
    CHECK(c.ablation.hypotheses.size() == default_hypotheses(AblationAxis::checkpoint).size());
    const AblationPlan p = ablation_plan(c);
    CHECK(p.seeds == std::vector<std::uint64_t>{3, 4});
    CHECK(p.data.codec == c.codec);
    CHECK(plan_cells(p).size() == 4);
}

TEST_CASE("config files") {
    const auto dir = std::filesystem::temp_directory_path() / "tvla_test_config";
    std::filesystem::create_directories(dir);
    write_file_atomic(dir / "bad.json", "{\"schema_version\": 1,");
    try {
        load_run_config(dir / "bad.json");
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::config_error);
    }
    try {
        load_run_config(dir / "absent.json");
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::io_error);
    }
    for (const auto& entry : std::filesystem::directory_iterator(std::filesystem::path(TVLA_SOURCE_DIR) / "configs")) {
        CAPTURE(entry.path().string());
        CHECK_NOTHROW(load_run_config(entry.path()));
    }
}
