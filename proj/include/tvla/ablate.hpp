// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tvla/train.hpp"

namespace tvla {

enum class AblationAxis { actions_first, include_state, resolution, checkpoint, training };
std::string_view to_string(AblationAxis a);
AblationAxis ablation_axis_from_string(std::string_view s);

/// Row key of a table cell: (column, value) pairs in column order.
using CellKey = std::vector<std::pair<std::string, std::string>>;

/// Directional claim `lhs.metric <relation> rhs.metric` over two table rows.
struct Hypothesis {
    std::string name;
    std::string claim;
    std::string metric = "cossim"; // rouge1, bleu, cossim or mse
    std::map<std::string, std::string> lhs;
    std::string relation = ">"; // ">" or "<"
    std::map<std::string, std::string> rhs;
};

nlohmann::json to_json(const Hypothesis& h);
Hypothesis hypothesis_from_json(const nlohmann::json& j);

/// Pre-registered trend hypotheses for each axis.
std::vector<Hypothesis> default_hypotheses(AblationAxis axis);

struct AblationPlan {
    std::string name = "ablation";
    AblationAxis axis = AblationAxis::resolution;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::vector<int> resolutions{10, 25, 50}; // resolution axis only
    std::vector<OutputKind> outputs{OutputKind::action_only, OutputKind::full};
    int resolution = 50; // every other axis
    ModelConfig model;
    TrainConfig train;
    DatagenOptions data;
    EvalSettings eval;
    TrainConfig pretrain;                // checkpoint axis; phase and spec are forced to language pretraining
    std::size_t pretrain_episodes = 2000; // checkpoint axis
    std::vector<Hypothesis> hypotheses;

    /// Throws config_error.
    void validate() const;
};

struct AblationCell {
    CellKey key;
    PromptSpec spec;
    int resolution = 50;
    bool pretrained = false;
    bool freeze_vision = false;

    /// "Resolution=10,Output=Full"
    std::string label() const;
};

/// Key columns of the paper's table for this axis.
std::vector<std::string> axis_columns(AblationAxis axis);
std::string axis_caption(AblationAxis axis);
/// Cells in the paper's row order.
std::vector<AblationCell> plan_cells(const AblationPlan& plan);

struct SeedResult {
    std::uint64_t seed = 0;
    std::string config_hash;
    std::optional<MetricsReport> report;
    nlohmann::json error; // null on success
    bool cached = false;
    std::int64_t train_steps = 0; // optimizer steps taken by this invocation
};

/// Across-seed summary of one metric.
struct MetricSummary {
    double mean = 0.0;        // mean of the per-seed means
    double seed_std = 0.0;    // population std of the per-seed means
    double sample_std = 0.0;  // mean of the per-seed per-sample std
    std::size_t seeds = 0;
};

struct CellResult {
    AblationCell cell;
    std::vector<SeedResult> seeds;
    std::map<std::string, MetricSummary> metrics; // metrics defined for every successful seed
    double parse_failure_rate = 0.0;              // mean over successful seeds
    std::size_t succeeded = 0;
};

CellResult summarize_cell(AblationCell cell, std::vector<SeedResult> seeds);

struct AblationTable {
    std::string name;
    AblationAxis axis = AblationAxis::resolution;
    std::vector<CellResult> rows;
};

nlohmann::json to_json(const AblationTable& t);

/// Paper-layout table (mean ± across-seed std) followed by the per-sample
/// std table. Byte-stable for identical inputs.
std::string table_markdown(const AblationTable& t);
std::string table_csv(const AblationTable& t);

enum class TrendOutcome { pass, fail, no_difference };
std::string_view to_string(TrendOutcome o);

struct Verdict {
    Hypothesis hypothesis;
    double lhs = 0.0;
    double rhs = 0.0;
    double difference = 0.0;            // lhs - rhs
    std::optional<double> effect_size;  // difference over the pooled across-seed std
    TrendOutcome outcome = TrendOutcome::no_difference;
};

/// Throws missing_cell when a referenced row or metric is absent.
Verdict compare_trend(const AblationTable& table, const Hypothesis& hypothesis);
nlohmann::json to_json(const Verdict& v);
std::string verdicts_markdown(const std::vector<Verdict>& verdicts, const std::vector<nlohmann::json>& missing);

struct AblationOptions {
    std::filesystem::path out_root = "runs";
    std::optional<std::filesystem::path> cache_root; // overrides TP_CACHE_DIR
    std::function<void(const std::string&)> log;
};

/// Explicit option, then TP_CACHE_DIR, then <out_root>/cache.
std::filesystem::path resolve_cache_root(const AblationOptions& options);

struct AblationResult {
    AblationTable table;
    std::vector<Verdict> verdicts;
    std::vector<nlohmann::json> missing; // hypotheses that referenced absent cells
    std::filesystem::path out_dir;
    std::int64_t train_steps = 0; // optimizer steps taken by this invocation, pretraining included
};

/// Trains and evaluates every cell and seed, continuing past failures, and
/// writes table.md, table.csv, verdicts.md, results.json and per-cell
/// records under <out_root>/<plan name>.
AblationResult run_ablation(const AblationPlan& plan, const AblationOptions& options = {});

} // namespace tvla
