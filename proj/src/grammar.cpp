// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvla/grammar.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "tvla/env.hpp"

namespace tvla::grammar {

namespace {

constexpr double kInset = 0.08;
constexpr double kMidX = 0.5 * (kBoardMinX + kBoardMaxX);
constexpr double kMidY = 0.5 * (kBoardMinY + kBoardMaxY);

bool match_from(const std::vector<std::string>& words, std::size_t wi, const std::vector<std::string>& pattern,
                std::size_t pi);

bool is_color(std::string_view w) {
    return std::any_of(kColors.begin(), kColors.end(), [&](Color c) { return to_string(c) == w; });
}
bool is_shape(std::string_view w) {
    return std::any_of(kShapes.begin(), kShapes.end(), [&](Shape s) { return to_string(s) == w; });
}

bool match_location(const std::vector<std::string>& words, std::size_t wi, const std::vector<std::string>& pattern,
                    std::size_t pi) {
    for (const auto& loc : locations()) {
        const auto parts = split_words(loc.phrase);
        if (wi + parts.size() > words.size()) {
            continue;
        }
        if (std::equal(parts.begin(), parts.end(), words.begin() + static_cast<std::ptrdiff_t>(wi)) &&
            match_from(words, wi + parts.size(), pattern, pi + 1)) {
            return true;
        }
    }
    return false;
}

bool match_from(const std::vector<std::string>& words, std::size_t wi, const std::vector<std::string>& pattern,
                std::size_t pi) {
    if (pi == pattern.size()) {
        return wi == words.size();
    }
    const std::string& slot = pattern[pi];
    if (slot == "<location>") {
        return match_location(words, wi, pattern, pi);
    }
    if (wi >= words.size()) {
        return false;
    }
    if (slot == "<object>") {
        return wi + 1 < words.size() && is_color(words[wi]) && is_shape(words[wi + 1]) &&
               match_from(words, wi + 2, pattern, pi + 1);
    }
    if (slot == "<verb>") {
        return (words[wi] == "push" || words[wi] == "move") && match_from(words, wi + 1, pattern, pi + 1);
    }
    return words[wi] == slot && match_from(words, wi + 1, pattern, pi + 1);
}

} // namespace

const std::vector<Location>& locations() {
    static const std::vector<Location> kLocations = {
        {"top left corner", {kBoardMinX + kInset, kBoardMaxY - kInset}},
        {"top right corner", {kBoardMaxX - kInset, kBoardMaxY - kInset}},
        {"bottom left corner", {kBoardMinX + kInset, kBoardMinY + kInset}},
        {"bottom right corner", {kBoardMaxX - kInset, kBoardMinY + kInset}},
        {"center", {kMidX, kMidY}},
        {"left side", {kBoardMinX + kInset, kMidY}},
        {"right side", {kBoardMaxX - kInset, kMidY}},
        {"top side", {kMidX, kBoardMaxY - kInset}},
        {"bottom side", {kMidX, kBoardMinY + kInset}},
    };
    return kLocations;
}

const std::vector<std::string>& instruction_patterns() {
    static const std::vector<std::string> kPatterns = {
        "push the <object> to the <location>",
        "put the <object> next to the <object>",
        "separate the <object> from the group",
        "touch the <object>",
        "push the <object> away from the <object>",
    };
    return kPatterns;
}

const std::vector<std::string>& caption_patterns() {
    static const std::vector<std::string> kPatterns = {
        "move the arm behind the <object>",
        "move the arm to the <object>",
        "<verb> the <object> towards the <location>",
        "<verb> the <object> towards the <object>",
        "<verb> the <object> away from the group",
        "<verb> the <object> away from the <object>",
    };
    return kPatterns;
}

std::vector<std::string> words() {
    std::set<std::string> all;
    auto add_text = [&](std::string_view text) {
        for (auto& w : split_words(text)) {
            if (w.front() != '<') {
                all.insert(w);
            }
        }
    };
    for (const auto& p : instruction_patterns()) {
        add_text(p);
    }
    for (const auto& p : caption_patterns()) {
        add_text(p);
    }
    for (const auto& loc : locations()) {
        add_text(loc.phrase);
    }
    for (Color c : kColors) {
        all.insert(std::string(to_string(c)));
    }
    for (Shape s : kShapes) {
        all.insert(std::string(to_string(s)));
    }
    all.insert("push");
    all.insert("move");
    return {all.begin(), all.end()};
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream is{std::string(text)};
    std::string w;
    while (is >> w) {
        out.push_back(w);
    }
    return out;
}

bool matches(std::string_view text, const std::vector<std::string>& patterns) {
    const auto ws = split_words(text);
    return std::any_of(patterns.begin(), patterns.end(),
                       [&](const std::string& p) { return match_from(ws, 0, split_words(p), 0); });
}

} // namespace tvla::grammar
