#pragma once

#include <algorithm>
#include <vector>

#include "act/geometry.hpp"
#include "act/map.hpp"
#include "act/tensor.hpp"

namespace act {

/// False-color heatmap (blue -> cyan -> yellow -> red ramp) of a confidence
/// map, as a 3-channel image in [0,1].
inline Tensor heatmap_color(const ActionnessMap& map) {
    Tensor img(map.height, map.width, 3);
    for (int i = 0; i < map.height; ++i)
        for (int j = 0; j < map.width; ++j) {
            const float v = std::clamp(map.at(i, j), 0.0f, 1.0f);
            float r, g, b;
            if (v < 0.25f) {
                r = 0.0f;
                g = v / 0.25f;
                b = 1.0f;
            } else if (v < 0.5f) {
                r = 0.0f;
                g = 1.0f;
                b = 1.0f - (v - 0.25f) / 0.25f;
            } else if (v < 0.75f) {
                r = (v - 0.5f) / 0.25f;
                g = 1.0f;
                b = 0.0f;
            } else {
                r = 1.0f;
                g = 1.0f - (v - 0.75f) / 0.25f;
                b = 0.0f;
            }
            img.at(i, j, 0) = r;
            img.at(i, j, 1) = g;
            img.at(i, j, 2) = b;
        }
    return img;
}

/// Grayscale image of a confidence map.
inline Tensor heatmap_gray(const ActionnessMap& map) {
    Tensor img(map.height, map.width, 3);
    for (int i = 0; i < map.height; ++i)
        for (int j = 0; j < map.width; ++j) {
            const float v = std::clamp(map.at(i, j), 0.0f, 1.0f);
            for (int c = 0; c < 3; ++c) img.at(i, j, c) = v;
        }
    return img;
}

/// Draws box outlines onto a copy of the frame.
inline Tensor draw_boxes(const Tensor& frame, const std::vector<Box>& boxes,
                         float r = 1.0f, float g = 0.1f, float b = 0.1f, int thickness = 1) {
    Tensor img = frame;
    auto put = [&](int i, int j) {
        if (i < 0 || i >= img.height || j < 0 || j >= img.width) return;
        img.at(i, j, 0) = r;
        img.at(i, j, 1) = g;
        img.at(i, j, 2) = b;
    };
    for (const Box& raw : boxes) {
        const Box box = raw.clamped(img.width, img.height);
        if (box.empty()) continue;
        for (int t = 0; t < thickness; ++t) {
            for (int j = box.x1; j < box.x2; ++j) {
                put(box.y1 + t, j);
                put(box.y2 - 1 - t, j);
            }
            for (int i = box.y1; i < box.y2; ++i) {
                put(i, box.x1 + t);
                put(i, box.x2 - 1 - t);
            }
        }
    }
    return img;
}

} // namespace act
