#pragma once

#include <algorithm>
#include <cstdint>

namespace act {

/// Axis-aligned pixel box, half-open on both axes: covers columns [x1, x2)
/// and rows [y1, y2). Empty when x2 <= x1 or y2 <= y1.
struct Box {
    int x1 = 0;
    int y1 = 0;
    int x2 = 0;
    int y2 = 0;

    std::int64_t area() const {
        if (x2 <= x1 || y2 <= y1) return 0;
        return static_cast<std::int64_t>(x2 - x1) * (y2 - y1);
    }

    bool empty() const { return area() == 0; }

    Box clamped(int width, int height) const {
        Box b;
        b.x1 = std::clamp(x1, 0, width);
        b.x2 = std::clamp(x2, 0, width);
        b.y1 = std::clamp(y1, 0, height);
        b.y2 = std::clamp(y2, 0, height);
        return b;
    }

    bool operator==(const Box& o) const {
        return x1 == o.x1 && y1 == o.y1 && x2 == o.x2 && y2 == o.y2;
    }
};

inline std::int64_t area_of(const Box& b) { return b.area(); }

inline std::int64_t intersection_area(const Box& a, const Box& b) {
    const int ix1 = std::max(a.x1, b.x1);
    const int iy1 = std::max(a.y1, b.y1);
    const int ix2 = std::min(a.x2, b.x2);
    const int iy2 = std::min(a.y2, b.y2);
    if (ix2 <= ix1 || iy2 <= iy1) return 0;
    return static_cast<std::int64_t>(ix2 - ix1) * (iy2 - iy1);
}

/// Intersection over union under the half-open pixel convention.
/// Disjoint or degenerate pairs score 0.
inline double iou(const Box& a, const Box& b) {
    const std::int64_t inter = intersection_area(a, b);
    if (inter == 0) return 0.0;
    const std::int64_t uni = a.area() + b.area() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

} // namespace act
