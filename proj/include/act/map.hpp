#pragma once

#include <stdexcept>
#include <vector>

#include "act/geometry.hpp"
#include "act/tensor.hpp"

namespace act {

/// Height x width grid of confidences in [0,1]. Values are stored row-major.
struct ActionnessMap {
    int height = 0;
    int width = 0;
    std::vector<float> values;

    ActionnessMap() = default;
    ActionnessMap(int h, int w, float fill = 0.0f)
        : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {
        if (h <= 0 || w <= 0)
            throw std::invalid_argument("ActionnessMap dims must be positive");
    }

    float& at(int i, int j) { return values[static_cast<std::size_t>(i) * width + j]; }
    float at(int i, int j) const { return values[static_cast<std::size_t>(i) * width + j]; }

    bool in_unit_range() const {
        for (float v : values)
            if (!(v >= 0.0f && v <= 1.0f)) return false;
        return true;
    }

    bool is_binary() const {
        for (float v : values)
            if (v != 0.0f && v != 1.0f) return false;
        return true;
    }

    Tensor to_tensor() const {
        Tensor t(height, width, 1);
        t.data.assign(values.begin(), values.end());
        return t;
    }

    static ActionnessMap from_tensor_channel(const Tensor& t, int channel) {
        if (channel < 0 || channel >= t.channels)
            throw std::invalid_argument("from_tensor_channel: channel out of range");
        ActionnessMap m(t.height, t.width);
        for (int i = 0; i < t.height; ++i)
            for (int j = 0; j < t.width; ++j) m.at(i, j) = t.at(i, j, channel);
        return m;
    }
};

inline ActionnessMap resize_map(const ActionnessMap& m, int new_height, int new_width) {
    return ActionnessMap::from_tensor_channel(
        bilinear_resize(m.to_tensor(), new_height, new_width), 0);
}

inline ActionnessMap nearest_resize_map(const ActionnessMap& m, int new_height,
                                        int new_width) {
    return ActionnessMap::from_tensor_channel(
        nearest_resize(m.to_tensor(), new_height, new_width), 0);
}

/// Weak supervision: boxes are painted as 1 on a zero map. Degenerate or
/// out-of-bounds portions are clamped away.
inline ActionnessMap boxes_to_binary_map(const std::vector<Box>& boxes, int height, int width) {
    ActionnessMap m(height, width, 0.0f);
    for (const Box& raw : boxes) {
        const Box b = raw.clamped(width, height);
        for (int i = b.y1; i < b.y2; ++i)
            for (int j = b.x1; j < b.x2; ++j) m.at(i, j) = 1.0f;
    }
    return m;
}

} // namespace act
