// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvla/env.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "tvla/error.hpp"

namespace tvla {

StateVec clip_state(StateVec s) {
    return {std::clamp(s.x, kBoardMinX, kBoardMaxX), std::clamp(s.y, kBoardMinY, kBoardMaxY)};
}

ActionVec clip_action(ActionVec a) {
    return {std::clamp(a.dx, -kActionLimit, kActionLimit), std::clamp(a.dy, -kActionLimit, kActionLimit)};
}

namespace {

Vec2 clip_to_board(Vec2 p) {
    return {std::clamp(p.x, kBoardMinX, kBoardMaxX), std::clamp(p.y, kBoardMinY, kBoardMaxY)};
}

bool inside_board(Vec2 p) {
    return p.x >= kBoardMinX && p.x <= kBoardMaxX && p.y >= kBoardMinY && p.y <= kBoardMaxY;
}

} // namespace

std::string_view to_string(Color c) {
    switch (c) {
    case Color::red: return "red";
    case Color::blue: return "blue";
    case Color::green: return "green";
    case Color::yellow: return "yellow";
    }
    return "?";
}

std::string_view to_string(Shape s) {
    switch (s) {
    case Shape::cube: return "cube";
    case Shape::star: return "star";
    case Shape::moon: return "moon";
    case Shape::pentagon: return "pentagon";
    }
    return "?";
}

Color color_from_string(std::string_view s) {
    for (Color c : kColors) {
        if (to_string(c) == s) {
            return c;
        }
    }
    throw Error(ErrorCode::data_error, "unknown color '" + std::string(s) + "'");
}

Shape shape_from_string(std::string_view s) {
    for (Shape sh : kShapes) {
        if (to_string(sh) == s) {
            return sh;
        }
    }
    throw Error(ErrorCode::data_error, "unknown shape '" + std::string(s) + "'");
}

std::string Block::name() const {
    return std::string(to_string(color)) + " " + std::string(to_string(shape));
}

void Board::validate() const {
    if (blocks.size() < 2 || blocks.size() > 6) {
        throw Error(ErrorCode::data_error, "board must hold between 2 and 6 blocks");
    }
    if (!inside_board(pointer.vec())) {
        throw Error(ErrorCode::data_error, "pointer outside the board");
    }
    std::set<std::pair<Color, Shape>> seen;
    for (const auto& b : blocks) {
        if (!(b.radius > 0.0)) {
            throw Error(ErrorCode::data_error, "block radius must be positive");
        }
        if (!inside_board(b.position)) {
            throw Error(ErrorCode::data_error, "block " + b.name() + " outside the board");
        }
        if (!seen.insert({b.color, b.shape}).second) {
            throw Error(ErrorCode::data_error, "duplicate block " + b.name());
        }
    }
}

Board step(const Board& board, ActionVec action) {
    if (!std::isfinite(action.dx) || !std::isfinite(action.dy)) {
        action = {};
    }
    Board out = board;
    const Vec2 start = board.pointer.vec();
    const StateVec moved = clip_state({start.x + action.dx, start.y + action.dy});
    out.pointer = moved;
    const Vec2 end = moved.vec();
    const Vec2 travel = end - start;
    const double length = norm(travel);
    if (length <= 0.0) {
        return out;
    }
    const Vec2 dir = (1.0 / length) * travel;
    for (auto& block : out.blocks) {
        const double contact = block.radius + kPointerRadius;
        const Vec2 c = block.position;
        if (dot(c - start, dir) <= 0.0 || segment_distance(c, start, end) >= contact) {
            continue;
        }
        const Vec2 rel = c - end;
        const double offset = std::abs(cross(dir, rel));
        const double ahead = std::sqrt(contact * contact - offset * offset);
        const double shift = ahead - dot(rel, dir);
        if (shift > 0.0) {
            block.position = clip_to_board(c + shift * dir);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Episodes

std::string_view to_string(TaskTemplate t) {
    switch (t) {
    case TaskTemplate::push_to_location: return "push_to_location";
    case TaskTemplate::put_next_to: return "put_next_to";
    case TaskTemplate::separate_from_group: return "separate_from_group";
    case TaskTemplate::touch: return "touch";
    case TaskTemplate::push_away_from: return "push_away_from";
    }
    return "?";
}

TaskTemplate task_template_from_string(std::string_view s) {
    for (auto t : {TaskTemplate::push_to_location, TaskTemplate::put_next_to, TaskTemplate::separate_from_group,
                   TaskTemplate::touch, TaskTemplate::push_away_from}) {
        if (to_string(t) == s) {
            return t;
        }
    }
    throw Error(ErrorCode::data_error, "unknown task template '" + std::string(s) + "'");
}

Board Episode::board_at(const Frame& frame) const {
    Board b;
    b.pointer = frame.pointer;
    b.blocks.reserve(blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        b.blocks.push_back({blocks[i].color, blocks[i].shape, frame.block_positions.at(i), blocks[i].radius});
    }
    return b;
}

std::size_t Episode::total_actions() const {
    std::size_t n = 0;
    for (const auto& s : sub_episodes) {
        n += s.actions.size();
    }
    return n;
}

void ExpertConfig::validate() const {
    if (!(speed > 0.0 && speed <= kActionLimit)) {
        throw Error(ErrorCode::config_error, "expert speed must lie in (0, 0.05]");
    }
    if (!(noise_sigma >= 0.0)) {
        throw Error(ErrorCode::config_error, "noise_sigma must be non-negative");
    }
    if (step_cap < 1) {
        throw Error(ErrorCode::config_error, "step_cap must be at least 1");
    }
    if (!(synonym_prob >= 0.0 && synonym_prob <= 1.0)) {
        throw Error(ErrorCode::config_error, "synonym_prob must lie in [0, 1]");
    }
    if (min_blocks < 2 || max_blocks > 6 || min_blocks > max_blocks) {
        throw Error(ErrorCode::config_error, "block counts must satisfy 2 <= min_blocks <= max_blocks <= 6");
    }
}

nlohmann::json to_json(const ExpertConfig& c) {
    return {{"speed", c.speed},         {"noise_sigma", c.noise_sigma}, {"step_cap", c.step_cap},
            {"synonym_prob", c.synonym_prob}, {"min_blocks", c.min_blocks},   {"max_blocks", c.max_blocks}};
}

ExpertConfig expert_config_from_json(const nlohmann::json& j) {
    ExpertConfig c;
    c.speed = j.value("speed", c.speed);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.step_cap = j.value("step_cap", c.step_cap);
    c.synonym_prob = j.value("synonym_prob", c.synonym_prob);
    c.min_blocks = j.value("min_blocks", c.min_blocks);
    c.max_blocks = j.value("max_blocks", c.max_blocks);
    return c;
}

nlohmann::json to_json(const Episode& e) {
    nlohmann::json j;
    j["version"] = kEpisodeFormatVersion;
    j["id"] = e.id;
    j["seed"] = e.seed;
    j["task"] = std::string(to_string(e.task));
    j["instruction"] = e.instruction;
    auto& blocks = j["blocks"] = nlohmann::json::array();
    for (const auto& b : e.blocks) {
        blocks.push_back({{"color", std::string(to_string(b.color))},
                          {"shape", std::string(to_string(b.shape))},
                          {"radius", b.radius}});
    }
    auto& subs = j["sub_episodes"] = nlohmann::json::array();
    for (const auto& s : e.sub_episodes) {
        nlohmann::json sj;
        sj["caption"] = s.caption;
        auto& frames = sj["frames"] = nlohmann::json::array();
        for (const auto& f : s.frames) {
            nlohmann::json positions = nlohmann::json::array();
            for (const auto& p : f.block_positions) {
                positions.push_back({p.x, p.y});
            }
            frames.push_back({{"pointer", {f.pointer.x, f.pointer.y}}, {"blocks", positions}});
        }
        auto& actions = sj["actions"] = nlohmann::json::array();
        for (const auto& a : s.actions) {
            actions.push_back({a.dx, a.dy});
        }
        subs.push_back(std::move(sj));
    }
    return j;
}

Episode episode_from_json(const nlohmann::json& j) {
    try {
        if (j.at("version").get<int>() != kEpisodeFormatVersion) {
            throw Error(ErrorCode::data_error, "unsupported episode format version");
        }
        Episode e;
        e.id = j.at("id").get<std::uint64_t>();
        e.seed = j.at("seed").get<std::uint64_t>();
        e.task = task_template_from_string(j.at("task").get<std::string>());
        e.instruction = j.at("instruction").get<std::string>();
        for (const auto& b : j.at("blocks")) {
            e.blocks.push_back({color_from_string(b.at("color").get<std::string>()),
                                shape_from_string(b.at("shape").get<std::string>()), b.at("radius").get<double>()});
        }
        for (const auto& sj : j.at("sub_episodes")) {
            SubEpisode s;
            s.caption = sj.at("caption").get<std::string>();
            for (const auto& fj : sj.at("frames")) {
                Frame f;
                f.pointer = {fj.at("pointer").at(0).get<double>(), fj.at("pointer").at(1).get<double>()};
                for (const auto& p : fj.at("blocks")) {
                    f.block_positions.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
                }
                if (f.block_positions.size() != e.blocks.size()) {
                    throw Error(ErrorCode::data_error, "frame block count does not match episode blocks");
                }
                s.frames.push_back(std::move(f));
            }
            for (const auto& a : sj.at("actions")) {
                s.actions.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
            }
            if (s.frames.size() < 2 || s.actions.size() + 1 != s.frames.size()) {
                throw Error(ErrorCode::data_error, "sub-episode needs >= 2 frames and frames - 1 actions");
            }
            e.sub_episodes.push_back(std::move(s));
        }
        if (e.sub_episodes.empty()) {
            throw Error(ErrorCode::data_error, "episode without sub-episodes");
        }
        return e;
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::data_error, std::string("malformed episode record: ") + ex.what());
    }
}

} // namespace tvla
