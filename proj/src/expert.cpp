// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "tvla/env.hpp"
#include "tvla/error.hpp"
#include "tvla/grammar.hpp"
#include "tvla/rng.hpp"

namespace tvla {

namespace {

constexpr double kPlacementMargin = 0.07;
constexpr double kMinBlockSpacing = 0.08;
constexpr double kGoalTolerance = 0.02;
constexpr double kArrivalTolerance = 0.01;
constexpr double kStandoff = 0.015;    // approach point sits this far behind contact
constexpr double kDetourClearance = 0.035;
constexpr double kLostContactGap = 0.02;
constexpr double kLostContactCos = 0.5; // pusher must stay within 60 degrees of the push line
constexpr double kTargetMargin = 0.05;
constexpr double kNextToGap = 0.065;
constexpr double kSeparateDistance = 0.15;
constexpr int kMaxSetupAttempts = 200;

enum class Phase { approach, push, touch };

struct Setup {
    Board board;
    std::size_t subject = 0;
    std::size_t other = 0;
    Vec2 target;
    std::string instruction;
    std::string target_phrase; // caption suffix after "towards the" / "away from the"
    bool away = false;
};

Vec2 clamp_inner(Vec2 p) {
    return {std::clamp(p.x, kBoardMinX + kPlacementMargin, kBoardMaxX - kPlacementMargin),
            std::clamp(p.y, kBoardMinY + kPlacementMargin, kBoardMaxY - kPlacementMargin)};
}

std::optional<Board> sample_board(Rng& rng, const ExpertConfig& cfg) {
    const int count = cfg.min_blocks + static_cast<int>(rng.below(static_cast<std::size_t>(cfg.max_blocks - cfg.min_blocks + 1)));
    std::vector<std::pair<Color, Shape>> kinds;
    for (Color c : kColors) {
        for (Shape s : kShapes) {
            kinds.emplace_back(c, s);
        }
    }
    rng.shuffle(kinds);

    Board board;
    for (int i = 0; i < count; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            const Vec2 p{rng.uniform(kBoardMinX + kPlacementMargin, kBoardMaxX - kPlacementMargin),
                         rng.uniform(kBoardMinY + kPlacementMargin, kBoardMaxY - kPlacementMargin)};
            const bool clear = std::all_of(board.blocks.begin(), board.blocks.end(),
                                           [&](const Block& b) { return norm(b.position - p) >= kMinBlockSpacing; });
            if (clear) {
                board.blocks.push_back({kinds[static_cast<std::size_t>(i)].first,
                                        kinds[static_cast<std::size_t>(i)].second, p, kDefaultBlockRadius});
                placed = true;
            }
        }
        if (!placed) {
            return std::nullopt;
        }
    }
    for (int attempt = 0; attempt < 100; ++attempt) {
        const Vec2 p{rng.uniform(kBoardMinX + 0.02, kBoardMaxX - 0.02), rng.uniform(kBoardMinY + 0.02, kBoardMaxY - 0.02)};
        const bool clear = std::all_of(board.blocks.begin(), board.blocks.end(), [&](const Block& b) {
            return norm(b.position - p) >= b.radius + kPointerRadius + 0.02;
        });
        if (clear) {
            board.pointer = {p.x, p.y};
            return board;
        }
    }
    return std::nullopt;
}

std::optional<Setup> sample_setup(Rng& rng, TaskTemplate task, const ExpertConfig& cfg) {
    auto board = sample_board(rng, cfg);
    if (!board) {
        return std::nullopt;
    }
    Setup s;
    s.board = std::move(*board);
    const auto& blocks = s.board.blocks;
    s.subject = rng.below(blocks.size());
    s.other = (s.subject + 1 + rng.below(blocks.size() - 1)) % blocks.size();
    const Block& x = blocks[s.subject];
    const Block& y = blocks[s.other];

    switch (task) {
    case TaskTemplate::push_to_location: {
        const auto& locs = grammar::locations();
        const auto& loc = locs[rng.below(locs.size())];
        s.target = loc.point;
        s.target_phrase = std::string(loc.phrase);
        s.instruction = "push the " + x.name() + " to the " + s.target_phrase;
        if (norm(s.target - x.position) < 0.12) {
            return std::nullopt;
        }
        break;
    }
    case TaskTemplate::put_next_to:
        s.target = y.position + kNextToGap * unit(x.position - y.position);
        s.target_phrase = y.name();
        s.instruction = "put the " + x.name() + " next to the " + y.name();
        if (norm(s.target - x.position) < 0.08) {
            return std::nullopt;
        }
        break;
    case TaskTemplate::separate_from_group: {
        Vec2 centroid;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            if (i != s.subject) {
                centroid = centroid + blocks[i].position;
            }
        }
        centroid = (1.0 / static_cast<double>(blocks.size() - 1)) * centroid;
        s.target = clamp_inner(x.position + kSeparateDistance * unit(x.position - centroid));
        s.target_phrase = "group";
        s.away = true;
        s.instruction = "separate the " + x.name() + " from the group";
        if (norm(s.target - x.position) < 0.1) {
            return std::nullopt;
        }
        break;
    }
    case TaskTemplate::touch:
        s.instruction = "touch the " + x.name();
        s.target = x.position;
        break;
    case TaskTemplate::push_away_from:
        s.target = clamp_inner(x.position + kSeparateDistance * unit(x.position - y.position));
        s.target_phrase = y.name();
        s.away = true;
        s.instruction = "push the " + x.name() + " away from the " + y.name();
        if (norm(s.target - x.position) < 0.1) {
            return std::nullopt;
        }
        break;
    }
    const bool inside = s.target.x >= kBoardMinX + kTargetMargin && s.target.x <= kBoardMaxX - kTargetMargin &&
                        s.target.y >= kBoardMinY + kTargetMargin && s.target.y <= kBoardMaxY - kTargetMargin;
    if (!inside) {
        return std::nullopt;
    }
    return s;
}

Frame snapshot(const Board& b) {
    Frame f;
    f.pointer = b.pointer;
    f.block_positions.reserve(b.blocks.size());
    for (const auto& blk : b.blocks) {
        f.block_positions.push_back(blk.position);
    }
    return f;
}

} // namespace

Episode generate_episode(std::uint64_t seed, TaskTemplate task, const ExpertConfig& cfg) {
    cfg.validate();
    Rng rng(seed);
    std::optional<Setup> setup;
    for (int attempt = 0; attempt < kMaxSetupAttempts && !setup; ++attempt) {
        setup = sample_setup(rng, task, cfg);
    }
    if (!setup) {
        throw Error(ErrorCode::generation_failed, "could not sample a valid board for the task",
                    {{"seed", seed}, {"task", std::string(to_string(task))}});
    }

    Episode episode;
    episode.seed = seed;
    episode.task = task;
    episode.instruction = setup->instruction;
    for (const auto& b : setup->board.blocks) {
        episode.blocks.push_back({b.color, b.shape, b.radius});
    }

    Board board = setup->board;
    const std::size_t subject = setup->subject;
    const Vec2 target = setup->target;
    const std::string object = board.blocks[subject].name();

    auto push_caption = [&]() {
        const std::string verb = rng.uniform() < cfg.synonym_prob ? "move" : "push";
        return verb + " the " + object + (setup->away ? " away from the " : " towards the ") + setup->target_phrase;
    };
    const std::string approach_caption = "move the arm behind the " + object;

    Phase phase = task == TaskTemplate::touch ? Phase::touch : Phase::approach;
    SubEpisode current;
    current.caption = phase == Phase::touch ? "move the arm to the " + object : approach_caption;
    current.frames.push_back(snapshot(board));

    auto switch_caption = [&](std::string caption) {
        if (!current.actions.empty()) {
            episode.sub_episodes.push_back(std::move(current));
            current = SubEpisode{};
            current.frames.push_back(episode.sub_episodes.back().frames.back());
        } else if (!episode.sub_episodes.empty() && episode.sub_episodes.back().caption == caption) {
            // Nothing happened under the abandoned caption; resume the previous segment.
            current = std::move(episode.sub_episodes.back());
            episode.sub_episodes.pop_back();
            return;
        }
        current.caption = std::move(caption);
    };

    int completed = 0;
    int steps = 0;
    for (;;) {
        const Block& x = board.blocks[subject];
        const Vec2 p = board.pointer.vec();
        const double contact = x.radius + kPointerRadius;

        if (phase == Phase::touch) {
            if (norm(p - x.position) <= contact + 0.006) {
                ++completed;
                break;
            }
        } else if (norm(x.position - target) < kGoalTolerance) {
            ++completed;
            break;
        }
        if (steps >= cfg.step_cap) {
            break;
        }

        const Vec2 u = unit(target - x.position);
        if (phase == Phase::approach) {
            const Vec2 behind = x.position - (contact + kStandoff) * u;
            if (norm(p - behind) < kArrivalTolerance) {
                ++completed;
                phase = Phase::push;
                switch_caption(push_caption());
            }
        } else if (phase == Phase::push) {
            const Vec2 offset = x.position - p;
            if (norm(offset) > contact + kLostContactGap || dot(unit(offset), u) < kLostContactCos) {
                phase = Phase::approach;
                switch_caption(approach_caption);
            }
        }

        Vec2 command;
        switch (phase) {
        case Phase::approach: {
            const Vec2 behind = x.position - (contact + kStandoff) * u;
            Vec2 waypoint = behind;
            if (segment_distance(x.position, p, behind) < contact + 0.005) {
                const double side = cross(u, p - x.position) >= 0.0 ? 1.0 : -1.0;
                waypoint = x.position + (side * (contact + kDetourClearance)) * perp(u);
            }
            command = clip_norm(waypoint - p, cfg.speed);
            break;
        }
        case Phase::push:
            // A pushed block travels with the pointer, so heading straight for the goal steers it there.
            command = std::min(cfg.speed, norm(target - x.position) + std::max(0.0, norm(x.position - p) - contact)) * u;
            break;
        case Phase::touch: {
            const Vec2 waypoint = x.position + (contact + 0.002) * unit(p - x.position);
            command = clip_norm(waypoint - p, cfg.speed);
            break;
        }
        }

        ActionVec action{command.x, command.y};
        if (cfg.noise_sigma > 0.0) {
            action.dx += cfg.noise_sigma * rng.normal();
            action.dy += cfg.noise_sigma * rng.normal();
        }
        action = clip_action(action);
        board = step(board, action);
        ++steps;
        current.actions.push_back(action);
        current.frames.push_back(snapshot(board));
    }

    if (!current.actions.empty()) {
        episode.sub_episodes.push_back(std::move(current));
    }
    if (completed == 0 || episode.sub_episodes.empty()) {
        throw Error(ErrorCode::generation_failed, "step cap reached before any sub-goal completed",
                    {{"seed", seed}, {"task", std::string(to_string(task))}, {"steps", steps}});
    }
    return episode;
}

} // namespace tvla
