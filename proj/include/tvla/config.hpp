// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include <json.hpp>

#include "tvla/ablate.hpp"

namespace tvla {

struct AblationSettings {
    std::string name = "ablation";
    AblationAxis axis = AblationAxis::resolution;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::vector<int> resolutions{10, 25, 50};
    std::vector<OutputKind> outputs{OutputKind::action_only, OutputKind::full};
    int resolution = 50;
    std::size_t pretrain_episodes = 2000;
    TrainConfig pretrain = default_pretrain();
    std::vector<Hypothesis> hypotheses = default_hypotheses(AblationAxis::resolution);

    static TrainConfig default_pretrain();
};

/// One configuration file for every subcommand.
struct RunConfigFile {
    static constexpr int kSchemaVersion = 1;
    CodecConfig codec;
    ModelConfig model;
    TrainConfig train;
    DatagenOptions data; // codec and pretraining_templates come from elsewhere
    EvalSettings eval;
    AblationSettings ablation;
};

/// Every field, defaults included.
nlohmann::json to_json(const RunConfigFile& c);

/// Strict parse: unknown keys, wrong types and a missing or unsupported
/// schema_version throw config_error naming the key.
RunConfigFile parse_run_config(const nlohmann::json& j);
RunConfigFile load_run_config(const std::filesystem::path& path);

/// Dataset generation options with the config's codec.
DatagenOptions datagen_options(const RunConfigFile& c, bool pretraining = false);
AblationPlan ablation_plan(const RunConfigFile& c);

} // namespace tvla
