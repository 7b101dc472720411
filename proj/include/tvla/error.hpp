// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace tvla {

enum class ErrorCode {
    generation_failed,
    index_out_of_range,
    malformed_action,
    missing_state,
    empty_caption,
    no_action,
    empty_split,
    shape_mismatch,
    vocab_overflow,
    non_finite_loss,
    empty_corpus,
    length_mismatch,
    missing_cell,
    config_error,
    data_error,
    incompatible_artifacts,
    io_error,
};

std::string_view to_string(ErrorCode code);

/// Process exit code for a failure of this kind: 2 config, 3 data,
/// 4 incompatible artifacts, 5 runtime.
int exit_code(ErrorCode code);

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& message, nlohmann::json detail = nlohmann::json::object());

    ErrorCode code() const noexcept { return code_; }
    const nlohmann::json& detail() const noexcept { return detail_; }

    /// Machine-readable form written to stderr by the CLI.
    nlohmann::json to_json() const;

  private:
    ErrorCode code_;
    nlohmann::json detail_;
};

} // namespace tvla
