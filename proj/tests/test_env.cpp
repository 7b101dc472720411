// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "tvla/env.hpp"
#include "tvla/error.hpp"
#include "tvla/grammar.hpp"
#include "tvla/rng.hpp"

using namespace tvla;

namespace {

Board two_block_board() {
    Board b;
    b.pointer = {0.0, 0.4};
    b.blocks.push_back({Color::red, Shape::cube, {0.2, 0.3}, 0.02});
    b.blocks.push_back({Color::blue, Shape::moon, {-0.2, 0.5}, 0.02});
    return b;
}

// Pushes blocks out along the motion direction after each of `substeps`
// equal pointer increments.
Board substep_oracle(const Board& board, ActionVec a, int substeps) {
    Board b = board;
    const Vec2 target{std::clamp(b.pointer.x + a.dx, kBoardMinX, kBoardMaxX),
                      std::clamp(b.pointer.y + a.dy, kBoardMinY, kBoardMaxY)};
    const Vec2 start = b.pointer.vec();
    const Vec2 dir = unit(target - start);
    for (int k = 1; k <= substeps; ++k) {
        const Vec2 p = start + (static_cast<double>(k) / substeps) * (target - start);
        for (auto& blk : b.blocks) {
            const double r = blk.radius + kPointerRadius;
            const Vec2 rel = blk.position - p;
            if (norm(rel) < r && dot(blk.position - start, dir) > 0.0) {
                const double off = cross(dir, rel);
                blk.position = p + std::sqrt(r * r - off * off) * dir + off * perp(dir);
            }
        }
    }
    b.pointer = {target.x, target.y};
    return b;
}

} // namespace

TEST_CASE("step: zero action is the identity") {
    const Board b = two_block_board();
    const Board s = step(b, {0.0, 0.0});
    CHECK(s.pointer == b.pointer);
    for (std::size_t i = 0; i < b.blocks.size(); ++i) {
        CHECK(s.blocks[i].position == b.blocks[i].position);
    }
}

TEST_CASE("step: pointer clips at the board edge") {
    Board b = two_block_board();
    b.pointer = {0.34, 0.4};
    const Board s = step(b, {0.05, 0.0});
    CHECK(s.pointer.x == doctest::Approx(0.35));
    CHECK(s.pointer.y == doctest::Approx(0.4));
}

TEST_CASE("step: head-on push matches the substep integrator") {
    Board b = two_block_board();
    const double r = b.blocks[0].radius + kPointerRadius;
    b.pointer = {0.2 - r, 0.3};
    const Board fast = step(b, {0.01, 0.0});
    const Board slow = substep_oracle(b, {0.01, 0.0}, 100);
    CHECK(fast.blocks[0].position.x == doctest::Approx(slow.blocks[0].position.x).epsilon(1e-9));
    CHECK(fast.blocks[0].position.y == doctest::Approx(slow.blocks[0].position.y).epsilon(1e-9));
    CHECK(norm(fast.blocks[0].position - fast.pointer.vec()) == doctest::Approx(r).epsilon(1e-9));
    CHECK(fast.blocks[0].position.x == doctest::Approx(0.21).epsilon(1e-9));
}

TEST_CASE("step: oblique pushes match the substep integrator") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        Board b = two_block_board();
        const double r = b.blocks[0].radius + kPointerRadius;
        const double angle = rng.uniform(-1.2, 1.2);
        b.pointer = {0.2 - r * 1.2 * std::cos(angle), 0.3 - r * 1.2 * std::sin(angle)};
        const ActionVec a{rng.uniform(0.0, 0.05), rng.uniform(-0.02, 0.02)};
        const Board fast = step(b, a);
        const Board slow = substep_oracle(b, a, 100);
        // The integrator only sees the block at substep granularity, so allow
        // one substep of travel.
        CHECK(norm(fast.blocks[0].position - slow.blocks[0].position) <= norm(a.vec()) / 100 + 1e-12);
    }
}

TEST_CASE("step: unobstructed translations compose") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        Board b;
        b.pointer = {rng.uniform(-0.15, 0.2), rng.uniform(0.3, 0.5)};
        b.blocks.push_back({Color::red, Shape::cube, {-0.29, 0.21}, 0.02});
        b.blocks.push_back({Color::green, Shape::star, {0.34, 0.59}, 0.02});
        const ActionVec a1{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
        const ActionVec a2{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
        const Board two = step(step(b, a1), a2);
        const Board one = step(b, {a1.dx + a2.dx, a1.dy + a2.dy});
        CHECK(two.pointer.x == doctest::Approx(one.pointer.x).epsilon(1e-12));
        CHECK(two.pointer.y == doctest::Approx(one.pointer.y).epsilon(1e-12));
    }
}

TEST_CASE("render: empty board shows background and pointer only") {
    Board b;
    b.pointer = {0.0, 0.4};
    const Image img = render(b, 32);
    REQUIRE(img.pixels.size() == 32u * 32u * 3u);
    int lit = 0;
    for (int r = 0; r < 32; ++r) {
        for (int c = 0; c < 32; ++c) {
            const float red = img.at(r, c, 0);
            const float green = img.at(r, c, 1);
            const float blue = img.at(r, c, 2);
            CHECK(red == doctest::Approx(green));
            CHECK(green == doctest::Approx(blue));
            lit += red > 0.16f ? 1 : 0;
        }
    }
    CHECK(lit > 0);
    CHECK(lit < 16);
    for (float v : img.pixels) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("render: deterministic") {
    const Board b = two_block_board();
    CHECK(render(b, 32) == render(b, 32));
    CHECK_THROWS_AS(render(b, 8), Error);
}

TEST_CASE("render: red cube lands on its projected pixel") {
    Board b;
    b.pointer = {-0.25, 0.25};
    b.blocks.push_back({Color::red, Shape::cube, {0.1, 0.45}, 0.02});
    b.blocks.push_back({Color::blue, Shape::cube, {-0.2, 0.55}, 0.02});
    for (int res : {32, 64}) {
        const Image img = render(b, res);
        const Vec2 px = project_to_pixel(b.blocks[0].position, res);
        const int r = static_cast<int>(px.y);
        const int c = static_cast<int>(px.x);
        float red = 0, other = 0;
        for (auto [dr, dc] : {std::pair{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
            red += img.at(r + dr, c + dc, 0);
            other += img.at(r + dr, c + dc, 1) + img.at(r + dr, c + dc, 2);
        }
        CHECK(red > other);
    }
}

TEST_CASE("generate_episode: deterministic without noise") {
    ExpertConfig cfg;
    cfg.noise_sigma = 0.0;
    for (auto task : kJointTemplates) {
        const Episode a = generate_episode(42, task, cfg);
        const Episode b = generate_episode(42, task, cfg);
        CHECK(to_json(a).dump() == to_json(b).dump());
    }
}

TEST_CASE("generate_episode: pushes the red cube into the top left corner") {
    ExpertConfig cfg;
    cfg.noise_sigma = 0.0;
    const Vec2 corner = grammar::locations().front().point;
    int found = 0;
    for (std::uint64_t seed = 0; seed < 2000 && found < 3; ++seed) {
        Episode e;
        try {
            e = generate_episode(seed, TaskTemplate::push_to_location, cfg);
        } catch (const Error&) {
            continue;
        }
        if (e.instruction != "push the red cube to the top left corner") {
            continue;
        }
        ++found;
        std::size_t red = 0;
        while (e.blocks[red].color != Color::red || e.blocks[red].shape != Shape::cube) {
            ++red;
        }
        const Vec2 final_pos = e.sub_episodes.back().frames.back().block_positions[red];
        CHECK(norm(final_pos - corner) <= 0.03);
        CHECK(e.sub_episodes.back().caption.find("towards the top left corner") != std::string::npos);
    }
    CHECK(found > 0);
}

TEST_CASE("generate_episode: structural invariants hold over many seeds") {
    ExpertConfig cfg;
    int failures = 0;
    int generated = 0;
    std::set<std::size_t> block_counts;
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        const auto task = kJointTemplates[seed % kJointTemplates.size()];
        Episode e;
        try {
            e = generate_episode(seed, task, cfg);
        } catch (const Error& err) {
            CHECK(err.code() == ErrorCode::generation_failed);
            ++failures;
            continue;
        }
        ++generated;
        block_counts.insert(e.blocks.size());
        REQUIRE_FALSE(e.sub_episodes.empty());
        CHECK(grammar::matches(e.instruction, grammar::instruction_patterns()));
        std::size_t frames_minus_one = 0;
        for (std::size_t i = 0; i < e.sub_episodes.size(); ++i) {
            const auto& s = e.sub_episodes[i];
            CHECK(s.frames.size() >= 2);
            CHECK(s.actions.size() + 1 == s.frames.size());
            CHECK(grammar::matches(s.caption, grammar::caption_patterns()));
            if (i > 0) {
                CHECK(s.caption != e.sub_episodes[i - 1].caption);
                CHECK(s.frames.front().pointer == e.sub_episodes[i - 1].frames.back().pointer);
            }
            frames_minus_one += s.frames.size() - 1;
            for (const auto& a : s.actions) {
                CHECK(std::abs(a.dx) <= kActionLimit);
                CHECK(std::abs(a.dy) <= kActionLimit);
            }
            for (const auto& f : s.frames) {
                CHECK(e.board_at(f).pointer == clip_state(f.pointer));
                for (const auto& p : f.block_positions) {
                    CHECK(p.x >= kBoardMinX);
                    CHECK(p.x <= kBoardMaxX);
                    CHECK(p.y >= kBoardMinY);
                    CHECK(p.y <= kBoardMaxY);
                }
            }
            // Replaying the recorded actions reproduces the recorded frames.
            Board b = e.board_at(s.frames.front());
            for (std::size_t k = 0; k < s.actions.size(); ++k) {
                b = step(b, s.actions[k]);
                CHECK(b.pointer == s.frames[k + 1].pointer);
            }
        }
        CHECK(frames_minus_one == e.total_actions());
        e.board_at(e.sub_episodes.front().frames.front()).validate();
    }
    CHECK(generated > 270);
    CHECK(block_counts.size() >= 4);
    MESSAGE("generation failures: " << failures);
}

TEST_CASE("episode JSON round-trips exactly") {
    const Episode e = generate_episode(5, TaskTemplate::put_next_to);
    const Episode back = episode_from_json(nlohmann::json::parse(to_json(e).dump()));
    CHECK(to_json(back).dump() == to_json(e).dump());
    nlohmann::json bad = to_json(e);
    bad["version"] = 99;
    CHECK_THROWS_AS(episode_from_json(bad), Error);
}

TEST_CASE("pretraining templates produce grammatical episodes") {
    for (auto task : kPretrainTemplates) {
        const Episode e = generate_episode(3, task);
        CHECK(grammar::matches(e.instruction, grammar::instruction_patterns()));
        for (const auto& s : e.sub_episodes) {
            CHECK(grammar::matches(s.caption, grammar::caption_patterns()));
        }
    }
}
