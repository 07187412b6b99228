#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "act/geometry.hpp"
#include "act/map.hpp"

namespace act {

inline constexpr int kLatticeSize = 32;

/// Box on the proposal lattice: inclusive cell ranges on both axes, so a
/// single cell is x1 == x2, y1 == y2.
struct LatticeBox {
    int x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    std::int64_t cell_area() const {
        return static_cast<std::int64_t>(x2 - x1 + 1) * (y2 - y1 + 1);
    }

    bool operator==(const LatticeBox& o) const {
        return x1 == o.x1 && y1 == o.y1 && x2 == o.x2 && y2 == o.y2;
    }
};

inline std::int64_t area_of(const LatticeBox& b) { return b.cell_area(); }

inline double lattice_iou(const LatticeBox& a, const LatticeBox& b) {
    const int ix1 = std::max(a.x1, b.x1);
    const int iy1 = std::max(a.y1, b.y1);
    const int ix2 = std::min(a.x2, b.x2);
    const int iy2 = std::min(a.y2, b.y2);
    if (ix2 < ix1 || iy2 < iy1) return 0.0;
    const std::int64_t inter = static_cast<std::int64_t>(ix2 - ix1 + 1) * (iy2 - iy1 + 1);
    return static_cast<double>(inter) /
           static_cast<double>(a.cell_area() + b.cell_area() - inter);
}

struct ScoredBox {
    LatticeBox box;
    float score = 0.0f; // mean actionness inside the box
};

inline ActionnessMap resize_map_to_lattice(const ActionnessMap& map) {
    return resize_map(map, kLatticeSize, kLatticeSize);
}

/// Summed-area table with a zero-padded first row and column: entry (i,j)
/// holds the sum of all map values in rows < i and columns < j.
struct IntegralImage {
    int height = 0; // underlying map height
    int width = 0;
    std::vector<double> table; // (height+1) x (width+1)

    double at(int i, int j) const {
        return table[static_cast<std::size_t>(i) * (width + 1) + j];
    }
};

inline IntegralImage integral_image(const ActionnessMap& map) {
    IntegralImage ii;
    ii.height = map.height;
    ii.width = map.width;
    ii.table.assign(static_cast<std::size_t>(map.height + 1) * (map.width + 1), 0.0);
    for (int i = 0; i < map.height; ++i) {
        double row = 0.0;
        for (int j = 0; j < map.width; ++j) {
            row += map.at(i, j);
            ii.table[static_cast<std::size_t>(i + 1) * (map.width + 1) + (j + 1)] =
                ii.at(i, j + 1) + row;
        }
    }
    return ii;
}

inline double box_sum(const IntegralImage& ii, const LatticeBox& b) {
    return ii.at(b.y2 + 1, b.x2 + 1) - ii.at(b.y1, b.x2 + 1) - ii.at(b.y2 + 1, b.x1) +
           ii.at(b.y1, b.x1);
}

/// Mean map value inside an inclusive lattice box, in four table lookups.
inline double box_mean_score(const IntegralImage& ii, const LatticeBox& b) {
    if (b.x1 < 0 || b.y1 < 0 || b.x2 >= ii.width || b.y2 >= ii.height || b.x1 > b.x2 ||
        b.y1 > b.y2)
        throw std::invalid_argument("box_mean_score: box outside lattice");
    return box_sum(ii, b) / static_cast<double>(b.cell_area());
}

/// Scores every ordered-corner box on the lattice. On the 32x32 lattice that
/// is (32*33/2)^2 = 278784 boxes.
inline std::vector<ScoredBox> enumerate_scored_boxes(const IntegralImage& ii) {
    std::vector<ScoredBox> boxes;
    const std::size_t per_axis =
        static_cast<std::size_t>(ii.height) * (ii.height + 1) / 2;
    boxes.reserve(per_axis * static_cast<std::size_t>(ii.width) * (ii.width + 1) / 2);
    for (int y1 = 0; y1 < ii.height; ++y1)
        for (int y2 = y1; y2 < ii.height; ++y2)
            for (int x1 = 0; x1 < ii.width; ++x1)
                for (int x2 = x1; x2 < ii.width; ++x2) {
                    ScoredBox sb;
                    sb.box = {x1, y1, x2, y2};
                    sb.score = static_cast<float>(box_mean_score(ii, sb.box));
                    boxes.push_back(sb);
                }
    return boxes;
}

namespace detail {

// Score-descending order with a deterministic tie-break: larger boxes first
// (so a tied top-1 on a binary region is the region itself, not a sub-cell),
// then (y1,x1,y2,x2).
template <typename Scored>
bool nms_order(const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    const auto aa = area_of(a.box), ab = area_of(b.box);
    if (aa != ab) return aa > ab;
    return std::tie(a.box.y1, a.box.x1, a.box.y2, a.box.x2) <
           std::tie(b.box.y1, b.box.x1, b.box.y2, b.box.x2);
}

template <typename Scored, typename IouFn>
std::vector<Scored> greedy_nms(std::vector<Scored> boxes, int n, double suppress_iou,
                               IouFn overlap) {
    if (boxes.empty()) throw std::invalid_argument("nms: no candidate boxes");
    if (n <= 0) throw std::invalid_argument("nms: n must be positive");
    if (!(suppress_iou > 0.0 && suppress_iou <= 1.0))
        throw std::invalid_argument("nms: suppress_iou must be in (0,1]");
    std::sort(boxes.begin(), boxes.end(), nms_order<Scored>);
    std::vector<Scored> kept;
    for (const Scored& cand : boxes) {
        bool suppressed = false;
        for (const Scored& k : kept)
            if (overlap(cand.box, k.box) > suppress_iou) {
                suppressed = true;
                break;
            }
        if (!suppressed) {
            kept.push_back(cand);
            if (static_cast<int>(kept.size()) == n) break;
        }
    }
    return kept;
}

} // namespace detail

/// Greedy NMS sampling: walk candidates by descending score (ties broken by
/// (y1,x1,y2,x2)), keep a box unless it overlaps an already kept box above
/// `suppress_iou`, stop after `n` keeps. May return fewer than n.
inline std::vector<ScoredBox> nms_sample(std::vector<ScoredBox> boxes, int n,
                                         double suppress_iou) {
    return detail::greedy_nms(std::move(boxes), n, suppress_iou,
                              [](const LatticeBox& a, const LatticeBox& b) {
                                  return lattice_iou(a, b);
                              });
}

/// Projects an inclusive lattice box to a half-open pixel box by linear
/// scaling of the cell boundaries. The full lattice maps to the full image.
inline Box project_box(const LatticeBox& b, int image_height, int image_width) {
    auto px = [](int boundary, int extent) {
        return static_cast<int>(
            std::lround(static_cast<double>(boundary) * extent / kLatticeSize));
    };
    Box out;
    out.x1 = px(b.x1, image_width);
    out.x2 = px(b.x2 + 1, image_width);
    out.y1 = px(b.y1, image_height);
    out.y2 = px(b.y2 + 1, image_height);
    return out;
}

/// Inverse of project_box; exact for images at least 32 pixels on each axis.
inline LatticeBox lattice_from_pixel(const Box& b, int image_height, int image_width) {
    auto cell = [](int px, int extent) {
        return static_cast<int>(std::lround(static_cast<double>(px) * kLatticeSize / extent));
    };
    LatticeBox out;
    out.x1 = cell(b.x1, image_width);
    out.x2 = cell(b.x2, image_width) - 1;
    out.y1 = cell(b.y1, image_height);
    out.y2 = cell(b.y2, image_height) - 1;
    return out;
}

struct Proposal {
    Box box; // pixel space
    float score = 0.0f;
};

/// Full per-frame proposal pipeline: 32x32 resize, integral image, exhaustive
/// scoring, NMS sampling, projection back to pixel coordinates.
inline std::vector<Proposal> generate_proposals(const ActionnessMap& map, int n,
                                                double suppress_iou, int image_height,
                                                int image_width) {
    const IntegralImage ii = integral_image(resize_map_to_lattice(map));
    const auto sampled = nms_sample(enumerate_scored_boxes(ii), n, suppress_iou);
    std::vector<Proposal> out;
    out.reserve(sampled.size());
    for (const ScoredBox& sb : sampled)
        out.push_back({project_box(sb.box, image_height, image_width), sb.score});
    return out;
}

} // namespace act
