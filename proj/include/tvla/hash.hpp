// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

namespace tvla {

std::uint64_t fnv1a64(std::string_view bytes);

/// 16 hex digits of FNV-1a over the input.
std::string hash_hex(std::string_view bytes);

/// Hash of the canonical (sorted-key, compact) dump of a JSON value.
std::string json_hash(const nlohmann::json& value);

} // namespace tvla
