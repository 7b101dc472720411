// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvla/codec.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "tvla/error.hpp"
#include "tvla/grammar.hpp"
#include "tvla/hash.hpp"

namespace tvla {

void CodecConfig::validate() const {
    if (resolution < 2) {
        throw Error(ErrorCode::config_error, "codec resolution must be at least 2");
    }
    for (const Range* r : {&action, &state_x, &state_y}) {
        if (!(r->lo < r->hi)) {
            throw Error(ErrorCode::config_error, "codec range lower bound must be below upper bound");
        }
    }
    if (action_marker.empty() || state_marker.empty() || action_marker == state_marker) {
        throw Error(ErrorCode::config_error, "action and state markers must be distinct and nonempty");
    }
}

nlohmann::json to_json(const CodecConfig& c) {
    return {{"resolution", c.resolution},
            {"action_range", {c.action.lo, c.action.hi}},
            {"state_range_x", {c.state_x.lo, c.state_x.hi}},
            {"state_range_y", {c.state_y.lo, c.state_y.hi}},
            {"action_marker", c.action_marker},
            {"state_marker", c.state_marker}};
}

CodecConfig codec_config_from_json(const nlohmann::json& j) {
    CodecConfig c;
    auto range = [&](const char* key, Range& r) {
        if (j.contains(key)) {
            r = {j.at(key).at(0).get<double>(), j.at(key).at(1).get<double>()};
        }
    };
    c.resolution = j.value("resolution", c.resolution);
    range("action_range", c.action);
    range("state_range_x", c.state_x);
    range("state_range_y", c.state_y);
    c.action_marker = j.value("action_marker", c.action_marker);
    c.state_marker = j.value("state_marker", c.state_marker);
    c.validate();
    return c;
}

std::string codec_hash(const CodecConfig& c) { return json_hash(to_json(c)); }

int bin_index(double value, Range range, int bins) {
    const double clipped = std::clamp(value, range.lo, range.hi);
    const double scaled = std::floor((clipped - range.lo) / range.width() * bins);
    return std::clamp(static_cast<int>(scaled), 0, bins - 1);
}

double bin_center(int index, Range range, int bins) {
    if (index < 0 || index >= bins) {
        throw Error(ErrorCode::index_out_of_range, "bin index " + std::to_string(index) + " outside [0, " +
                                                       std::to_string(bins) + ")");
    }
    return range.lo + (index + 0.5) * range.width() / bins;
}

std::string action_token(int bin) { return "a" + std::to_string(bin); }
std::string state_token(int bin) { return "s" + std::to_string(bin); }

std::vector<std::string> tokenize_action(ActionVec a, const CodecConfig& cfg) {
    const int n = cfg.resolution;
    return {cfg.action_marker, action_token(bin_index(a.dx, cfg.action, n)),
            action_token(bin_index(a.dy, cfg.action, n)), cfg.action_marker};
}

std::vector<std::string> tokenize_state(StateVec s, const CodecConfig& cfg) {
    const int n = cfg.resolution;
    return {cfg.state_marker, state_token(bin_index(s.x, cfg.state_x, n)), state_token(bin_index(s.y, cfg.state_y, n)),
            cfg.state_marker};
}

namespace {

std::optional<int> parse_bin(std::string_view token, char prefix, int bins) {
    if (token.size() < 2 || token.front() != prefix) {
        return std::nullopt;
    }
    const auto digits = token.substr(1);
    if (!std::all_of(digits.begin(), digits.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }) ||
        (digits.size() > 1 && digits.front() == '0') || digits.size() > 6) {
        return std::nullopt;
    }
    const int v = std::stoi(std::string(digits));
    return v < bins ? std::optional<int>(v) : std::nullopt;
}

} // namespace

std::optional<ActionBlock> find_action_block(std::span<const std::string> tokens, const CodecConfig& cfg) {
    for (std::size_t i = 0; i + ActionBlock::kLength <= tokens.size(); ++i) {
        if (tokens[i] != cfg.action_marker || tokens[i + 3] != cfg.action_marker) {
            continue;
        }
        const auto bx = parse_bin(tokens[i + 1], 'a', cfg.resolution);
        const auto by = parse_bin(tokens[i + 2], 'a', cfg.resolution);
        if (bx && by) {
            return ActionBlock{i, *bx, *by};
        }
    }
    return std::nullopt;
}

ActionVec detokenize_action(std::span<const std::string> tokens, const CodecConfig& cfg) {
    const auto block = find_action_block(tokens, cfg);
    if (!block) {
        throw Error(ErrorCode::malformed_action, "no well-formed action block in token sequence");
    }
    return {bin_center(block->bin_x, cfg.action, cfg.resolution), bin_center(block->bin_y, cfg.action, cfg.resolution)};
}

// ---------------------------------------------------------------------------

std::string_view to_string(OutputKind k) {
    switch (k) {
    case OutputKind::action_only: return "action_only";
    case OutputKind::full: return "full";
    case OutputKind::language_only: return "language_only";
    }
    return "?";
}

OutputKind output_kind_from_string(std::string_view s) {
    if (s == "action_only" || s == "action") {
        return OutputKind::action_only;
    }
    if (s == "full") {
        return OutputKind::full;
    }
    if (s == "language_only" || s == "language") {
        return OutputKind::language_only;
    }
    throw Error(ErrorCode::config_error, "unknown output kind '" + std::string(s) + "'", {{"key", "kind"}});
}

void PromptSpec::validate() const {
    if (actions_first && kind != OutputKind::full) {
        throw Error(ErrorCode::config_error, "actions_first requires kind=full", {{"key", "actions_first"}});
    }
}

std::string PromptSpec::label() const {
    std::string s(to_string(kind));
    if (include_state) {
        s += "+state";
    }
    if (actions_first) {
        s += "+actions_first";
    }
    return s;
}

nlohmann::json to_json(const PromptSpec& s) {
    return {{"kind", std::string(to_string(s.kind))}, {"include_state", s.include_state}, {"actions_first", s.actions_first}};
}

PromptSpec prompt_spec_from_label(std::string_view label) {
    PromptSpec s;
    std::size_t start = 0;
    bool first = true;
    while (start <= label.size()) {
        const std::size_t end = std::min(label.find('+', start), label.size());
        const std::string_view part = label.substr(start, end - start);
        if (first) {
            s.kind = output_kind_from_string(part);
            first = false;
        } else if (part == "state" && !s.include_state) {
            s.include_state = true;
        } else if (part == "actions_first" && !s.actions_first) {
            s.actions_first = true;
        } else {
            throw Error(ErrorCode::config_error, "unknown prompt spec modifier '" + std::string(part) + "'",
                        {{"key", "spec"}, {"spec", label}});
        }
        start = end + 1;
    }
    s.validate();
    return s;
}

PromptSpec prompt_spec_from_json(const nlohmann::json& j) {
    PromptSpec s;
    s.kind = output_kind_from_string(j.value("kind", std::string("full")));
    s.include_state = j.value("include_state", false);
    s.actions_first = j.value("actions_first", false);
    s.validate();
    return s;
}

std::vector<PromptSpec> all_prompt_specs() {
    std::vector<PromptSpec> specs;
    for (auto kind : {OutputKind::action_only, OutputKind::full, OutputKind::language_only}) {
        for (bool state : {false, true}) {
            for (bool first : {false, true}) {
                PromptSpec s{kind, state, first};
                if (!first || kind == OutputKind::full) {
                    specs.push_back(s);
                }
            }
        }
    }
    return specs;
}

std::string_view prompt_question(OutputKind kind) {
    switch (kind) {
    case OutputKind::action_only: return "Next action?";
    case OutputKind::full: return "Immediate next step and action?";
    case OutputKind::language_only: return "Immediate next step?";
    }
    return "";
}

std::string build_prompt(std::string_view instruction, const PromptSpec& spec, std::optional<StateVec> state,
                         const CodecConfig& cfg) {
    spec.validate();
    std::string out;
    if (spec.include_state) {
        if (!state) {
            throw Error(ErrorCode::missing_state, "prompt spec includes state but no state was given");
        }
        out += "Given ";
        const auto toks = tokenize_state(*state, cfg);
        for (std::size_t i = 0; i < toks.size(); ++i) {
            out += (i ? " " : "") + toks[i];
        }
        out += ". ";
    }
    out += "Current task is: ";
    out += instruction;
    out += ". ";
    out += prompt_question(spec.kind);
    return out;
}

std::vector<std::string> build_target(std::string_view caption, ActionVec action, const PromptSpec& spec,
                                      const CodecConfig& cfg) {
    spec.validate();
    std::vector<std::string> out;
    const auto words = split_text(caption);
    if (spec.wants_statement() && words.empty()) {
        throw Error(ErrorCode::empty_caption, "caption must be nonempty for output kind " +
                                                  std::string(to_string(spec.kind)));
    }
    const auto block = tokenize_action(action, cfg);
    switch (spec.kind) {
    case OutputKind::action_only:
        out = block;
        break;
    case OutputKind::language_only:
        out = words;
        break;
    case OutputKind::full:
        if (spec.actions_first) {
            out = block;
            out.insert(out.end(), words.begin(), words.end());
        } else {
            out = words;
            out.insert(out.end(), block.begin(), block.end());
        }
        break;
    }
    out.emplace_back(kEos);
    return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> split_text(std::string_view text) {
    std::vector<std::string> out;
    for (auto& piece : grammar::split_words(text)) {
        std::vector<std::string> trailing;
        while (piece.size() > 1 && std::string_view(".:?,").find(piece.back()) != std::string_view::npos &&
               piece.back() != ']') {
            trailing.emplace_back(1, piece.back());
            piece.pop_back();
        }
        if (!(piece.front() == '[' || piece.front() == '<')) {
            std::transform(piece.begin(), piece.end(), piece.begin(),
                           [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        }
        out.push_back(std::move(piece));
        out.insert(out.end(), trailing.rbegin(), trailing.rend());
    }
    return out;
}

namespace {

const std::vector<std::string>& prompt_words() {
    static const std::vector<std::string> kWords = [] {
        std::set<std::string> words;
        const PromptSpec specs[] = {{OutputKind::action_only, true, false},
                                    {OutputKind::full, true, false},
                                    {OutputKind::language_only, true, false}};
        CodecConfig cfg;
        for (const auto& s : specs) {
            for (auto& w : split_text(build_prompt("x", s, StateVec{}, cfg))) {
                words.insert(w);
            }
        }
        for (const auto& w : tokenize_state({}, cfg)) {
            words.erase(w);
        }
        words.erase("x");
        return std::vector<std::string>(words.begin(), words.end());
    }();
    return kWords;
}

} // namespace

TokenVocab TokenVocab::build(const CodecConfig& cfg) {
    cfg.validate();
    TokenVocab v;
    v.resolution_ = cfg.resolution;
    v.tokens_ = {std::string(kPad), std::string(kBos), std::string(kEos), std::string(kSep), std::string(kUnk)};
    std::set<std::string> text;
    for (const auto& w : grammar::words()) {
        text.insert(w);
    }
    for (const auto& w : prompt_words()) {
        text.insert(w);
    }
    v.tokens_.insert(v.tokens_.end(), text.begin(), text.end());
    v.first_special_ = static_cast<int>(v.tokens_.size());
    v.tokens_.push_back(cfg.action_marker);
    v.tokens_.push_back(cfg.state_marker);
    v.first_action_ = static_cast<int>(v.tokens_.size());
    for (int i = 0; i < cfg.resolution; ++i) {
        v.tokens_.push_back(action_token(i));
    }
    for (int i = 0; i < cfg.resolution; ++i) {
        v.tokens_.push_back(state_token(i));
    }
    v.reindex();
    return v;
}

void TokenVocab::reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
            throw Error(ErrorCode::data_error, "duplicate vocabulary token '" + tokens_[i] + "'");
        }
    }
}

nlohmann::json TokenVocab::to_json() const {
    return {{"version", kFormatVersion},
            {"resolution", resolution_},
            {"first_special", first_special_},
            {"first_action", first_action_},
            {"tokens", tokens_}};
}

TokenVocab TokenVocab::from_json(const nlohmann::json& j) {
    try {
        if (j.at("version").get<int>() != kFormatVersion) {
            throw Error(ErrorCode::incompatible_artifacts, "unsupported vocabulary format version");
        }
        TokenVocab v;
        v.resolution_ = j.at("resolution").get<int>();
        v.first_special_ = j.at("first_special").get<int>();
        v.first_action_ = j.at("first_action").get<int>();
        v.tokens_ = j.at("tokens").get<std::vector<std::string>>();
        v.reindex();
        return v;
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::data_error, std::string("malformed vocabulary: ") + ex.what());
    }
}

std::string TokenVocab::hash() const { return json_hash(to_json()); }

int TokenVocab::id(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    return it == index_.end() ? unk_id() : it->second;
}

bool TokenVocab::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

const std::string& TokenVocab::token(int id) const {
    if (id < 0 || id >= size()) {
        throw Error(ErrorCode::vocab_overflow, "token id " + std::to_string(id) + " outside vocabulary");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::optional<int> TokenVocab::action_bin(int id) const {
    if (id >= first_action_ && id < first_action_ + resolution_) {
        return id - first_action_;
    }
    return std::nullopt;
}

bool TokenVocab::is_special(int id) const { return id < 5 || id >= first_special_; }

std::vector<int> TokenVocab::encode(std::span<const std::string> tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) {
        ids.push_back(id(t));
    }
    return ids;
}

std::vector<std::string> TokenVocab::decode(std::span<const int> ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) {
        out.push_back(token(i));
    }
    return out;
}

} // namespace tvla
