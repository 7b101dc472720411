// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tvla/env.hpp"

namespace tvla {

struct Range {
    double lo = 0.0;
    double hi = 1.0;

    double width() const { return hi - lo; }
    friend bool operator==(const Range&, const Range&) = default;
};

struct CodecConfig {
    int resolution = 50;
    Range action{-0.05, 0.05};
    Range state_x{-0.3, 0.35};
    Range state_y{0.2, 0.6};
    std::string action_marker = "[action]";
    std::string state_marker = "[state]";

    void validate() const;
    friend bool operator==(const CodecConfig&, const CodecConfig&) = default;
};

nlohmann::json to_json(const CodecConfig& c);
CodecConfig codec_config_from_json(const nlohmann::json& j);
std::string codec_hash(const CodecConfig& c);

/// Uniform bin of `value` after clipping it into `range`; total.
int bin_index(double value, Range range, int bins);

/// Midpoint of bin `index`; throws index_out_of_range.
double bin_center(int index, Range range, int bins);

std::string action_token(int bin);
std::string state_token(int bin);

/// [action] a<ix> a<iy> [action]
std::vector<std::string> tokenize_action(ActionVec a, const CodecConfig& cfg);
/// [state] s<ix> s<iy> [state]
std::vector<std::string> tokenize_state(StateVec s, const CodecConfig& cfg);

/// Location of the first well-formed action block in a token sequence.
struct ActionBlock {
    std::size_t begin = 0; // index of the opening marker
    int bin_x = 0;
    int bin_y = 0;
    static constexpr std::size_t kLength = 4;
};

std::optional<ActionBlock> find_action_block(std::span<const std::string> tokens, const CodecConfig& cfg);

/// Bin midpoints of the first well-formed action block; throws
/// malformed_action when none exists.
ActionVec detokenize_action(std::span<const std::string> tokens, const CodecConfig& cfg);

// ---------------------------------------------------------------------------
// Prompts and targets

enum class OutputKind { action_only, full, language_only };

std::string_view to_string(OutputKind k);
OutputKind output_kind_from_string(std::string_view s);

struct PromptSpec {
    OutputKind kind = OutputKind::full;
    bool include_state = false;
    bool actions_first = false;

    void validate() const;
    bool wants_action() const { return kind != OutputKind::language_only; }
    bool wants_statement() const { return kind != OutputKind::action_only; }
    /// e.g. "full+state+actions_first"
    std::string label() const;
    friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

nlohmann::json to_json(const PromptSpec& s);
PromptSpec prompt_spec_from_json(const nlohmann::json& j);
/// Inverse of PromptSpec::label(); the kind also accepts "action" and
/// "language". Throws config_error.
PromptSpec prompt_spec_from_label(std::string_view label);

/// Every valid (kind, include_state, actions_first) combination.
std::vector<PromptSpec> all_prompt_specs();

std::string_view prompt_question(OutputKind kind);

std::string build_prompt(std::string_view instruction, const PromptSpec& spec, std::optional<StateVec> state,
                         const CodecConfig& cfg);

inline constexpr std::string_view kBos = "<bos>";
inline constexpr std::string_view kEos = "<eos>";
inline constexpr std::string_view kSep = "<sep>";
inline constexpr std::string_view kPad = "<pad>";
inline constexpr std::string_view kUnk = "<unk>";

/// Target token strings, terminated by <eos>.
std::vector<std::string> build_target(std::string_view caption, ActionVec action, const PromptSpec& spec,
                                      const CodecConfig& cfg);

// ---------------------------------------------------------------------------
// Vocabulary

/// Word-level text tokenization: lowercases plain words and splits trailing
/// '.', ':', '?', ',' off into their own tokens. Special tokens are kept.
std::vector<std::string> split_text(std::string_view text);

class TokenVocab {
  public:
    static constexpr int kFormatVersion = 1;

    /// Deterministic vocabulary for the closed grammar at `cfg`'s resolution.
    static TokenVocab build(const CodecConfig& cfg);
    static TokenVocab from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    std::string hash() const;

    int size() const { return static_cast<int>(tokens_.size()); }
    int id(std::string_view token) const;
    bool contains(std::string_view token) const;
    const std::string& token(int id) const;

    int pad_id() const { return 0; }
    int bos_id() const { return 1; }
    int eos_id() const { return 2; }
    int sep_id() const { return 3; }
    int unk_id() const { return 4; }

    int resolution() const { return resolution_; }
    std::optional<int> action_bin(int id) const;
    bool is_action_token(int id) const { return action_bin(id).has_value(); }
    bool is_special(int id) const;

    std::vector<int> encode(std::span<const std::string> tokens) const;
    std::vector<std::string> decode(std::span<const int> ids) const;

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    int resolution_ = 0;
    int first_action_ = 0;
    int first_special_ = 0;

    void reindex();
};

} // namespace tvla
