// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

namespace tvla {

/// Writes through a sibling temporary file and renames it into place, so
/// readers never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

/// Throws io_error when the file cannot be read.
std::string read_file(const std::filesystem::path& path);

/// Throws io_error for a missing file and `malformed` for unparsable JSON.
nlohmann::json read_json_file(const std::filesystem::path& path);

} // namespace tvla
