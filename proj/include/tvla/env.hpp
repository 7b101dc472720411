// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tvla/geometry.hpp"

namespace tvla {

// Board extents coincide with the state tokenization range.
inline constexpr double kBoardMinX = -0.3;
inline constexpr double kBoardMaxX = 0.35;
inline constexpr double kBoardMinY = 0.2;
inline constexpr double kBoardMaxY = 0.6;
inline constexpr double kActionLimit = 0.05;
inline constexpr double kPointerRadius = 0.01;
inline constexpr double kDefaultBlockRadius = 0.02;

/// End-effector position.
struct StateVec {
    double x = 0.0;
    double y = 0.0;

    Vec2 vec() const { return {x, y}; }
    friend constexpr bool operator==(StateVec, StateVec) = default;
};

/// End-effector displacement for one control step.
struct ActionVec {
    double dx = 0.0;
    double dy = 0.0;

    Vec2 vec() const { return {dx, dy}; }
    friend constexpr bool operator==(ActionVec, ActionVec) = default;
};

StateVec clip_state(StateVec s);
ActionVec clip_action(ActionVec a);

enum class Color { red, blue, green, yellow };
enum class Shape { cube, star, moon, pentagon };

inline constexpr std::array<Color, 4> kColors{Color::red, Color::blue, Color::green, Color::yellow};
inline constexpr std::array<Shape, 4> kShapes{Shape::cube, Shape::star, Shape::moon, Shape::pentagon};

std::string_view to_string(Color c);
std::string_view to_string(Shape s);
Color color_from_string(std::string_view s);
Shape shape_from_string(std::string_view s);

struct Block {
    Color color = Color::red;
    Shape shape = Shape::cube;
    Vec2 position;
    double radius = kDefaultBlockRadius;

    /// "<color> <shape>"
    std::string name() const;
};

struct Board {
    std::vector<Block> blocks;
    StateVec pointer;

    /// Throws data_error when a structural invariant is broken.
    void validate() const;
};

/// One kinematic control step: the pointer moves by the clipped action and
/// pushes every block its swept segment overlaps along the motion direction
/// until the block is exactly at contact distance, then clips to the board.
Board step(const Board& board, ActionVec action);

/// Row-major H x W x 3 image with channel values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;

    float at(int row, int col, int channel) const {
        return pixels[(static_cast<std::size_t>(row) * width + col) * 3 + channel];
    }
    float& at(int row, int col, int channel) {
        return pixels[(static_cast<std::size_t>(row) * width + col) * 3 + channel];
    }
    friend bool operator==(const Image&, const Image&) = default;
};

/// Continuous (col, row) image coordinates of a board point; pixel (r, c)
/// covers [c, c+1) x [r, r+1). Larger y is higher up in the image.
Vec2 project_to_pixel(Vec2 p, int resolution);

inline constexpr int kMinRenderResolution = 16;

Image render(const Board& board, int resolution);

// ---------------------------------------------------------------------------
// Episodes

enum class TaskTemplate {
    push_to_location,
    put_next_to,
    separate_from_group,
    // Held out from joint training; only used for the language pretraining set.
    touch,
    push_away_from,
};

inline constexpr std::array<TaskTemplate, 3> kJointTemplates{
    TaskTemplate::push_to_location, TaskTemplate::put_next_to, TaskTemplate::separate_from_group};
inline constexpr std::array<TaskTemplate, 2> kPretrainTemplates{TaskTemplate::touch,
                                                                TaskTemplate::push_away_from};

std::string_view to_string(TaskTemplate t);
TaskTemplate task_template_from_string(std::string_view s);

struct BlockInfo {
    Color color = Color::red;
    Shape shape = Shape::cube;
    double radius = kDefaultBlockRadius;
};

/// Symbolic board snapshot for one frame.
struct Frame {
    StateVec pointer;
    std::vector<Vec2> block_positions;
};

struct SubEpisode {
    std::string caption;
    std::vector<Frame> frames;
    std::vector<ActionVec> actions; // frames.size() - 1 entries
};

struct Episode {
    std::uint64_t id = 0;
    std::uint64_t seed = 0;
    TaskTemplate task = TaskTemplate::push_to_location;
    std::string instruction;
    std::vector<BlockInfo> blocks;
    std::vector<SubEpisode> sub_episodes;

    Board board_at(const Frame& frame) const;
    std::size_t total_actions() const;
};

struct ExpertConfig {
    double speed = 0.015;        // max displacement per step
    double noise_sigma = 0.005;  // per-dimension Gaussian action noise
    int step_cap = 200;
    double synonym_prob = 0.25;  // chance of "move" instead of "push" in push captions
    int min_blocks = 2;
    int max_blocks = 6;

    void validate() const;
};

nlohmann::json to_json(const ExpertConfig& c);
ExpertConfig expert_config_from_json(const nlohmann::json& j);

/// Runs the scripted expert on a freshly sampled board. Throws
/// generation_failed when the step cap is hit before any phase completes.
Episode generate_episode(std::uint64_t seed, TaskTemplate task, const ExpertConfig& config = {});

// Episode JSON-lines records; see docs/format.md.
inline constexpr int kEpisodeFormatVersion = 1;
nlohmann::json to_json(const Episode& e);
Episode episode_from_json(const nlohmann::json& j);

} // namespace tvla
