// Copyright (C) 2026 The tvla Authors
// SPDX-License-Identifier: Apache-2.0

#include <array>
#include <cmath>
#include <numbers>

#include "tvla/env.hpp"
#include "tvla/error.hpp"

namespace tvla {

namespace {

constexpr int kSupersample = 4;
constexpr double kGlyphScale = 1.25;  // glyph half-size relative to contact radius
constexpr double kPointerGlyphRadius = 0.025;
constexpr std::array<float, 3> kBackground{0.15f, 0.15f, 0.15f};
constexpr std::array<float, 3> kPointerColor{1.0f, 1.0f, 1.0f};

std::array<float, 3> base_color(Color c) {
    switch (c) {
    case Color::red: return {0.9f, 0.1f, 0.1f};
    case Color::blue: return {0.1f, 0.2f, 0.9f};
    case Color::green: return {0.1f, 0.8f, 0.2f};
    case Color::yellow: return {0.9f, 0.85f, 0.1f};
    }
    return {0.0f, 0.0f, 0.0f};
}

// Shapes differ in outline and in brightness so that they stay separable at
// low resolution.
float shape_brightness(Shape s) {
    switch (s) {
    case Shape::cube: return 1.0f;
    case Shape::star: return 0.8f;
    case Shape::moon: return 0.65f;
    case Shape::pentagon: return 0.5f;
    }
    return 1.0f;
}

using Polygon = std::vector<Vec2>;

Polygon regular_polygon(int corners, double outer, double inner) {
    Polygon poly;
    const int n = inner > 0.0 ? 2 * corners : corners;
    for (int i = 0; i < n; ++i) {
        const double angle = std::numbers::pi / 2.0 + 2.0 * std::numbers::pi * i / n;
        const double r = (inner > 0.0 && i % 2 == 1) ? inner : outer;
        poly.push_back({r * std::cos(angle), r * std::sin(angle)});
    }
    return poly;
}

bool inside_polygon(Vec2 p, const Polygon& poly) {
    bool inside = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Vec2 a = poly[i];
        const Vec2 b = poly[j];
        if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) {
            inside = !inside;
        }
    }
    return inside;
}

/// Membership in the unit-size glyph for `shape`, local coordinates.
bool inside_glyph(Shape shape, Vec2 q) {
    static const Polygon kPentagon = regular_polygon(5, 1.0, 0.0);
    static const Polygon kStar = regular_polygon(5, 1.0, 0.45);
    switch (shape) {
    case Shape::cube: return std::abs(q.x) <= 0.85 && std::abs(q.y) <= 0.85;
    case Shape::star: return inside_polygon(q, kStar);
    case Shape::pentagon: return inside_polygon(q, kPentagon);
    case Shape::moon: {
        const Vec2 bite{q.x - 0.45, q.y};
        return dot(q, q) <= 1.0 && dot(bite, bite) > 0.75 * 0.75;
    }
    }
    return false;
}

Vec2 pixel_to_board(double col, double row, int resolution) {
    return {kBoardMinX + col / resolution * (kBoardMaxX - kBoardMinX),
            kBoardMaxY - row / resolution * (kBoardMaxY - kBoardMinY)};
}

template <typename Inside>
void draw(Image& img, Vec2 center, double half_size, std::array<float, 3> color, Inside inside) {
    const int res = img.width;
    const Vec2 lo = project_to_pixel({center.x - half_size, center.y + half_size}, res);
    const Vec2 hi = project_to_pixel({center.x + half_size, center.y - half_size}, res);
    const int c0 = std::max(0, static_cast<int>(std::floor(lo.x)));
    const int c1 = std::min(res - 1, static_cast<int>(std::floor(hi.x)));
    const int r0 = std::max(0, static_cast<int>(std::floor(lo.y)));
    const int r1 = std::min(res - 1, static_cast<int>(std::floor(hi.y)));
    constexpr double kStep = 1.0 / kSupersample;
    for (int r = r0; r <= r1; ++r) {
        for (int c = c0; c <= c1; ++c) {
            int hits = 0;
            for (int sy = 0; sy < kSupersample; ++sy) {
                for (int sx = 0; sx < kSupersample; ++sx) {
                    const Vec2 b = pixel_to_board(c + (sx + 0.5) * kStep, r + (sy + 0.5) * kStep, res);
                    hits += inside((1.0 / half_size) * (b - center)) ? 1 : 0;
                }
            }
            if (hits == 0) {
                continue;
            }
            const float alpha = static_cast<float>(hits) / (kSupersample * kSupersample);
            for (int ch = 0; ch < 3; ++ch) {
                float& px = img.at(r, c, ch);
                px = (1.0f - alpha) * px + alpha * color[static_cast<std::size_t>(ch)];
            }
        }
    }
}

} // namespace

Vec2 project_to_pixel(Vec2 p, int resolution) {
    return {(p.x - kBoardMinX) / (kBoardMaxX - kBoardMinX) * resolution,
            (kBoardMaxY - p.y) / (kBoardMaxY - kBoardMinY) * resolution};
}

Image render(const Board& board, int resolution) {
    if (resolution < kMinRenderResolution) {
        throw Error(ErrorCode::shape_mismatch, "render resolution must be at least 16");
    }
    Image img;
    img.height = resolution;
    img.width = resolution;
    img.pixels.resize(static_cast<std::size_t>(resolution) * resolution * 3);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        img.pixels[i] = kBackground[i % 3];
    }
    for (const auto& block : board.blocks) {
        auto color = base_color(block.color);
        for (auto& ch : color) {
            ch *= shape_brightness(block.shape);
        }
        const double half = kGlyphScale * block.radius;
        draw(img, block.position, half, color, [shape = block.shape](Vec2 q) { return inside_glyph(shape, q); });
    }
    draw(img, board.pointer.vec(), kPointerGlyphRadius, kPointerColor, [](Vec2 q) { return dot(q, q) <= 1.0; });
    return img;
}

} // namespace tvla
