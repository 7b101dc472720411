// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "tvla/geometry.hpp"

// Closed template grammar for instructions and captions. Slots:
//   <verb>     push | move
//   <object>   <color> <shape>
//   <location> one of the named board locations below

namespace tvla::grammar {

struct Location {
    std::string_view phrase;
    Vec2 point;
};

const std::vector<Location>& locations();

const std::vector<std::string>& instruction_patterns();
const std::vector<std::string>& caption_patterns();

/// Every word an instruction or caption can contain.
std::vector<std::string> words();

/// Whitespace tokenization.
std::vector<std::string> split_words(std::string_view text);

/// True when `text` is produced by one of `patterns`.
bool matches(std::string_view text, const std::vector<std::string>& patterns);

} // namespace tvla::grammar
