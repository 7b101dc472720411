// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvla/error.hpp"

namespace tvla {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::generation_failed: return "generation_failed";
    case ErrorCode::index_out_of_range: return "index_out_of_range";
    case ErrorCode::malformed_action: return "malformed_action";
    case ErrorCode::missing_state: return "missing_state";
    case ErrorCode::empty_caption: return "empty_caption";
    case ErrorCode::no_action: return "no_action";
    case ErrorCode::empty_split: return "empty_split";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::vocab_overflow: return "vocab_overflow";
    case ErrorCode::non_finite_loss: return "non_finite_loss";
    case ErrorCode::empty_corpus: return "empty_corpus";
    case ErrorCode::length_mismatch: return "length_mismatch";
    case ErrorCode::missing_cell: return "missing_cell";
    case ErrorCode::config_error: return "config_error";
    case ErrorCode::data_error: return "data_error";
    case ErrorCode::incompatible_artifacts: return "incompatible_artifacts";
    case ErrorCode::io_error: return "io_error";
    }
    return "unknown";
}

int exit_code(ErrorCode code) {
    switch (code) {
    case ErrorCode::config_error:
    case ErrorCode::missing_state:
        return 2;
    case ErrorCode::data_error:
    case ErrorCode::empty_split:
    case ErrorCode::io_error:
    case ErrorCode::generation_failed:
        return 3;
    case ErrorCode::incompatible_artifacts:
    case ErrorCode::vocab_overflow:
    case ErrorCode::shape_mismatch:
        return 4;
    default:
        return 5;
    }
}

Error::Error(ErrorCode code, const std::string& message, nlohmann::json detail)
    : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

nlohmann::json Error::to_json() const {
    nlohmann::json j;
    j["error"] = {
        {"code", std::string(to_string(code_))},
        {"exit_code", exit_code(code_)},
        {"message", what()},
        {"detail", detail_},
    };
    return j;
}

} // namespace tvla
