// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tvla/codec.hpp"
#include "tvla/data.hpp"
#include "tvla/model.hpp"

namespace tvla {

/// Lowercase, replace punctuation with spaces, split on whitespace.
std::vector<std::string> metric_tokens(std::string_view text);

/// Unigram F1 with clipped overlap; 0 when either side is empty.
double rouge1(std::span<const std::string> candidate, std::span<const std::string> reference);
double rouge1(std::string_view candidate, std::string_view reference);

struct BleuResult {
    double score = 0.0;
    double brevity_penalty = 0.0;
    std::array<double, 4> precisions{}; // clipped n-gram precisions, 0 for skipped orders
    int orders_used = 0;
    std::size_t candidate_length = 0;
    std::size_t reference_length = 0;
};

/// Corpus BLEU-4 with one reference per candidate. Throws empty_corpus and
/// length_mismatch.
BleuResult bleu(const std::vector<std::vector<std::string>>& candidates,
                const std::vector<std::vector<std::string>>& references);
double sentence_bleu(std::span<const std::string> candidate, std::span<const std::string> reference);

/// a.b / (|a||b|), 0 when either norm is below 1e-9.
double cosine_similarity(ActionVec a, ActionVec b);
/// Mean over the two dimensions of the squared error.
double action_mse(ActionVec a, ActionVec b);

struct Stat {
    double mean = 0.0;
    double std = 0.0; // population standard deviation
    std::size_t n = 0;
};

Stat summarize(std::span<const double> values);
nlohmann::json to_json(const Stat& s);

struct TrajectoryMetrics {
    Stat mse;
    Stat cossim;
    double parse_failure_rate = 0.0;
    std::size_t total = 0;
};

/// Throws length_mismatch when the lists differ in length.
TrajectoryMetrics trajectory_metrics(std::span<const std::optional<ActionVec>> predicted,
                                     std::span<const ActionVec> truth);

enum class ParseStatus { ok, malformed_action, missing_statement };
enum class OrderObserved { action_first, language_first, not_applicable };
std::string_view to_string(ParseStatus s);
std::string_view to_string(OrderObserved o);

struct ParsedOutput {
    std::string statement;
    std::optional<ActionVec> action;
    ParseStatus status = ParseStatus::ok;
    OrderObserved order = OrderObserved::not_applicable;
};

/// Token strings are whatever the decoder produced; nothing throws.
ParsedOutput parse_output(std::span<const std::string> tokens, const PromptSpec& spec, const CodecConfig& cfg);

struct MetricsReport {
    std::optional<Stat> rouge1;
    std::optional<Stat> bleu; // mean is corpus BLEU-4, std is over sentence BLEU
    double bleu_sentence_mean = 0.0;
    std::optional<Stat> mse;
    std::optional<Stat> cossim;
    double parse_failure_rate = 0.0;
    std::size_t n_samples = 0;
    nlohmann::json config = nlohmann::json::object();

    /// ROUGE-1 + CosSim over whichever of the two are defined.
    double selection_score() const;
};

nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_report_from_json(const nlohmann::json& j);
/// "0.1234 ± 0.0567" or "-" when absent.
std::string format_stat(const std::optional<Stat>& s);
/// Single-row table in the column order ROUGE, BLEU, CosSim, MSE.
std::string to_markdown(const MetricsReport& r, std::string_view label);

struct SampleOutput {
    std::string prompt;
    std::string generated;
    std::string reference;
    ParsedOutput parsed;
    ActionVec truth;
};

struct EvalOptions {
    int max_new_tokens = 48;
};

/// Greedy decode of every record, then every metric the spec defines.
MetricsReport evaluate(const Transformer<float>& model, const std::vector<SampleRecord>& records,
                       const PromptSpec& spec, const TokenVocab& vocab, const CodecConfig& codec,
                       const EvalOptions& options = {}, std::vector<SampleOutput>* outputs = nullptr);

/// Reference text of a record under the spec: caption words joined by spaces.
std::string reference_statement(const SampleRecord& r);

} // namespace tvla
