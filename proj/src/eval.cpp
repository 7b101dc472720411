// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvla/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

#include "tvla/error.hpp"

namespace tvla {

std::vector<std::string> metric_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c) || std::ispunct(c)) {
            if (!cur.empty()) {
                out.push_back(std::move(cur));
                cur.clear();
            }
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!cur.empty()) {
        out.push_back(std::move(cur));
    }
    return out;
}

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, int> ngram_counts(std::span<const std::string> words, std::size_t n) {
    std::map<Ngram, int> counts;
    for (std::size_t i = 0; i + n <= words.size(); ++i) {
        ++counts[Ngram(words.begin() + static_cast<std::ptrdiff_t>(i), words.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

std::size_t clipped_overlap(const std::map<Ngram, int>& cand, const std::map<Ngram, int>& ref) {
    std::size_t hits = 0;
    for (const auto& [gram, count] : cand) {
        const auto it = ref.find(gram);
        if (it != ref.end()) {
            hits += static_cast<std::size_t>(std::min(count, it->second));
        }
    }
    return hits;
}

} // namespace

double rouge1(std::span<const std::string> candidate, std::span<const std::string> reference) {
    if (candidate.empty() || reference.empty()) {
        return 0.0;
    }
    const double overlap = static_cast<double>(clipped_overlap(ngram_counts(candidate, 1), ngram_counts(reference, 1)));
    if (overlap == 0.0) {
        return 0.0;
    }
    const double precision = overlap / static_cast<double>(candidate.size());
    const double recall = overlap / static_cast<double>(reference.size());
    return 2.0 * precision * recall / (precision + recall);
}

double rouge1(std::string_view candidate, std::string_view reference) {
    const auto c = metric_tokens(candidate);
    const auto r = metric_tokens(reference);
    return rouge1(c, r);
}

BleuResult bleu(const std::vector<std::vector<std::string>>& candidates,
                const std::vector<std::vector<std::string>>& references) {
    if (candidates.size() != references.size()) {
        throw Error(ErrorCode::length_mismatch, "BLEU needs one reference per candidate",
                    {{"candidates", candidates.size()}, {"references", references.size()}});
    }
    if (candidates.empty()) {
        throw Error(ErrorCode::empty_corpus, "BLEU over an empty corpus");
    }
    BleuResult r;
    std::array<std::size_t, 4> matches{}, totals{};
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        const auto& c = candidates[k];
        const auto& ref = references[k];
        r.candidate_length += c.size();
        r.reference_length += ref.size();
        for (std::size_t n = 1; n <= 4; ++n) {
            if (c.size() >= n) {
                totals[n - 1] += c.size() - n + 1;
                matches[n - 1] += clipped_overlap(ngram_counts(c, n), ngram_counts(ref, n));
            }
        }
    }
    double log_sum = 0.0;
    bool zero = false;
    for (std::size_t n = 0; n < 4; ++n) {
        if (totals[n] == 0) {
            continue; // no candidate reaches this length
        }
        ++r.orders_used;
        r.precisions[n] = static_cast<double>(matches[n]) / static_cast<double>(totals[n]);
        if (matches[n] == 0) {
            zero = true;
        } else {
            log_sum += std::log(r.precisions[n]);
        }
    }
    if (r.candidate_length == 0) {
        return r;
    }
    r.brevity_penalty = r.candidate_length > r.reference_length
                            ? 1.0
                            : std::exp(1.0 - static_cast<double>(r.reference_length) /
                                                 static_cast<double>(r.candidate_length));
    if (!zero && r.orders_used > 0) {
        r.score = r.brevity_penalty * std::exp(log_sum / r.orders_used);
    }
    return r;
}

double sentence_bleu(std::span<const std::string> candidate, std::span<const std::string> reference) {
    return bleu({std::vector<std::string>(candidate.begin(), candidate.end())},
                {std::vector<std::string>(reference.begin(), reference.end())})
        .score;
}

double cosine_similarity(ActionVec a, ActionVec b) {
    const double na = std::hypot(a.dx, a.dy);
    const double nb = std::hypot(b.dx, b.dy);
    if (na < 1e-9 || nb < 1e-9) {
        return 0.0;
    }
    return (a.dx * b.dx + a.dy * b.dy) / (na * nb);
}

double action_mse(ActionVec a, ActionVec b) {
    const double ex = a.dx - b.dx;
    const double ey = a.dy - b.dy;
    return 0.5 * (ex * ex + ey * ey);
}

Stat summarize(std::span<const double> values) {
    Stat s;
    s.n = values.size();
    if (values.empty()) {
        return s;
    }
    double sum = 0.0;
    for (double v : values) {
        sum += v;
    }
    s.mean = sum / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) {
        sq += (v - s.mean) * (v - s.mean);
    }
    s.std = std::sqrt(sq / static_cast<double>(values.size()));
    return s;
}

nlohmann::json to_json(const Stat& s) {
    return {{"mean", s.mean}, {"std", s.std}, {"n", s.n}};
}

namespace {

Stat stat_from_json(const nlohmann::json& j) {
    return {j.at("mean").get<double>(), j.at("std").get<double>(), j.at("n").get<std::size_t>()};
}

std::optional<Stat> optional_stat(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) {
        return std::nullopt;
    }
    return stat_from_json(j.at(key));
}

nlohmann::json optional_json(const std::optional<Stat>& s) {
    return s ? to_json(*s) : nlohmann::json(nullptr);
}

} // namespace

TrajectoryMetrics trajectory_metrics(std::span<const std::optional<ActionVec>> predicted,
                                     std::span<const ActionVec> truth) {
    if (predicted.size() != truth.size()) {
        throw Error(ErrorCode::length_mismatch, "predicted and true trajectories differ in length",
                    {{"predicted", predicted.size()}, {"truth", truth.size()}});
    }
    std::vector<double> mse, cos;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i]) {
            mse.push_back(action_mse(*predicted[i], truth[i]));
            cos.push_back(cosine_similarity(*predicted[i], truth[i]));
        }
    }
    TrajectoryMetrics m;
    m.total = predicted.size();
    m.mse = summarize(mse);
    m.cossim = summarize(cos);
    m.parse_failure_rate =
        m.total == 0 ? 0.0 : static_cast<double>(m.total - mse.size()) / static_cast<double>(m.total);
    return m;
}

std::string_view to_string(ParseStatus s) {
    switch (s) {
    case ParseStatus::ok:
        return "ok";
    case ParseStatus::malformed_action:
        return "malformed_action";
    case ParseStatus::missing_statement:
        return "missing_statement";
    }
    return "?";
}

std::string_view to_string(OrderObserved o) {
    switch (o) {
    case OrderObserved::action_first:
        return "action_first";
    case OrderObserved::language_first:
        return "language_first";
    case OrderObserved::not_applicable:
        return "n/a";
    }
    return "?";
}

namespace {

bool is_bin_token(const std::string& t) {
    return t.size() >= 2 && (t[0] == 'a' || t[0] == 's') &&
           std::all_of(t.begin() + 1, t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

bool is_text_token(const std::string& t, const CodecConfig& cfg) {
    if (t.empty() || t == cfg.action_marker || t == cfg.state_marker || is_bin_token(t)) {
        return false;
    }
    return !(t.front() == '<' && t.back() == '>');
}

} // namespace

ParsedOutput parse_output(std::span<const std::string> tokens, const PromptSpec& spec, const CodecConfig& cfg) {
    const auto eos = std::find(tokens.begin(), tokens.end(), std::string(kEos));
    const std::span<const std::string> body = tokens.first(static_cast<std::size_t>(eos - tokens.begin()));

    ParsedOutput out;
    const auto block = find_action_block(body, cfg);
    if (block) {
        out.action = ActionVec{bin_center(block->bin_x, cfg.action, cfg.resolution),
                               bin_center(block->bin_y, cfg.action, cfg.resolution)};
    }
    std::optional<std::size_t> first_text;
    std::string statement;
    for (std::size_t i = 0; i < body.size(); ++i) {
        if (block && i >= block->begin && i < block->begin + ActionBlock::kLength) {
            continue;
        }
        if (is_text_token(body[i], cfg)) {
            if (!first_text) {
                first_text = i;
            }
            if (!statement.empty()) {
                statement += ' ';
            }
            statement += body[i];
        }
    }
    out.statement = std::move(statement);
    if (block && first_text) {
        out.order = block->begin < *first_text ? OrderObserved::action_first : OrderObserved::language_first;
    }
    if (spec.wants_action() && !out.action) {
        out.status = ParseStatus::malformed_action;
    } else if (spec.wants_statement() && out.statement.empty()) {
        out.status = ParseStatus::missing_statement;
    }
    return out;
}

double MetricsReport::selection_score() const {
    double s = 0.0;
    if (rouge1) {
        s += rouge1->mean;
    }
    if (cossim) {
        s += cossim->mean;
    }
    return s;
}

nlohmann::json to_json(const MetricsReport& r) {
    return {{"rouge1_f1", optional_json(r.rouge1)},
            {"bleu", optional_json(r.bleu)},
            {"bleu_sentence_mean", r.bleu ? nlohmann::json(r.bleu_sentence_mean) : nlohmann::json(nullptr)},
            {"mse", optional_json(r.mse)},
            {"cossim", optional_json(r.cossim)},
            {"parse_failure_rate", r.parse_failure_rate},
            {"n_samples", r.n_samples},
            {"config", r.config}};
}

MetricsReport metrics_report_from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.rouge1 = optional_stat(j, "rouge1_f1");
    r.bleu = optional_stat(j, "bleu");
    if (r.bleu) {
        r.bleu_sentence_mean = j.at("bleu_sentence_mean").get<double>();
    }
    r.mse = optional_stat(j, "mse");
    r.cossim = optional_stat(j, "cossim");
    r.parse_failure_rate = j.at("parse_failure_rate").get<double>();
    r.n_samples = j.at("n_samples").get<std::size_t>();
    r.config = j.value("config", nlohmann::json::object());
    return r;
}

std::string format_stat(const std::optional<Stat>& s) {
    if (!s) {
        return "-";
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f ± %.4f", s->mean, s->std);
    return buf;
}

namespace {

std::string format_mse(const std::optional<Stat>& s) {
    if (!s) {
        return "-";
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e ± %.3e", s->mean, s->std);
    return buf;
}

} // namespace

std::string to_markdown(const MetricsReport& r, std::string_view label) {
    std::string out = "| Output | ROUGE↑ | BLEU↑ | CosSim↑ | MSE↓ |\n|---|---|---|---|---|\n";
    out += "| " + std::string(label) + " | " + format_stat(r.rouge1) + " | " + format_stat(r.bleu) + " | " +
           format_stat(r.cossim) + " | " + format_mse(r.mse) + " |\n";
    return out;
}

std::string reference_statement(const SampleRecord& r) {
    std::string out;
    for (const auto& w : split_text(r.caption)) {
        if (!out.empty()) {
            out += ' ';
        }
        out += w;
    }
    return out;
}

MetricsReport evaluate(const Transformer<float>& model, const std::vector<SampleRecord>& records,
                       const PromptSpec& spec, const TokenVocab& vocab, const CodecConfig& codec,
                       const EvalOptions& options, std::vector<SampleOutput>* outputs) {
    spec.validate();
    if (records.empty()) {
        throw Error(ErrorCode::empty_split, "no records to evaluate");
    }
    GenerateOptions gen;
    gen.max_new_tokens = options.max_new_tokens;
    gen.eos_id = vocab.eos_id();

    std::vector<std::vector<std::string>> candidates, references;
    std::vector<double> rouge, sentence;
    std::vector<std::optional<ActionVec>> predicted;
    std::vector<ActionVec> truth;
    std::size_t statement_failures = 0;
    for (const auto& r : records) {
        const auto ids = model.generate(r.image, r.prompt_ids, gen);
        const auto tokens = vocab.decode(ids);
        const ParsedOutput parsed = parse_output(tokens, spec, codec);
        const std::string reference = reference_statement(r);
        if (spec.wants_statement()) {
            auto cand = metric_tokens(parsed.statement);
            auto ref = metric_tokens(reference);
            rouge.push_back(rouge1(cand, ref));
            sentence.push_back(sentence_bleu(cand, ref));
            candidates.push_back(std::move(cand));
            references.push_back(std::move(ref));
            statement_failures += parsed.statement.empty() ? 1 : 0;
        }
        if (spec.wants_action()) {
            predicted.push_back(parsed.action);
            truth.push_back(r.action);
        }
        if (outputs) {
            std::string generated;
            for (const auto& t : tokens) {
                generated += (generated.empty() ? "" : " ") + t;
            }
            std::string prompt;
            for (const auto& t : vocab.decode(r.prompt_ids)) {
                prompt += (prompt.empty() ? "" : " ") + t;
            }
            outputs->push_back({prompt, generated, reference, parsed, r.action});
        }
    }

    MetricsReport report;
    report.n_samples = records.size();
    if (spec.wants_statement()) {
        report.rouge1 = summarize(rouge);
        const Stat s = summarize(sentence);
        report.bleu = Stat{bleu(candidates, references).score, s.std, s.n};
        report.bleu_sentence_mean = s.mean;
    }
    if (spec.wants_action()) {
        const TrajectoryMetrics tm = trajectory_metrics(predicted, truth);
        if (tm.mse.n > 0) { // left absent when nothing parsed; the failure rate says why
            report.mse = tm.mse;
            report.cossim = tm.cossim;
        }
        report.parse_failure_rate = tm.parse_failure_rate;
    } else {
        report.parse_failure_rate = static_cast<double>(statement_failures) / static_cast<double>(records.size());
    }
    report.config = {{"spec", to_json(spec)},
                     {"decoding", "greedy"},
                     {"max_new_tokens", options.max_new_tokens},
                     {"codec_resolution", codec.resolution},
                     {"rouge", "unigram F1, clipped counts"},
                     {"bleu", "corpus BLEU-4 with brevity penalty; std over sentence BLEU"},
                     {"std", "population"},
                     {"trajectory", "per-sample MSE and cosine, parse failures excluded"}};
    return report;
}

} // namespace tvla
