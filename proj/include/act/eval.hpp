#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "act/detector.hpp"
#include "act/geometry.hpp"
#include "act/map.hpp"

namespace act {

/// Precision-recall points, one per rank of the score-sorted predictions.
struct PRCurve {
    std::vector<std::pair<double, double>> points; // (recall, precision)
    int positive_count = 0;
};

namespace detail {

// Curve from labels already ordered by descending score. `positive_count` is
// the recall denominator, which for detection tasks exceeds the number of
// true labels whenever some ground truth is never predicted.
inline PRCurve curve_from_ordered(const std::vector<bool>& ordered_labels, int positive_count) {
    if (positive_count <= 0)
        throw std::invalid_argument("pr_curve: needs at least one positive");
    PRCurve c;
    c.positive_count = positive_count;
    int tp = 0;
    for (std::size_t r = 0; r < ordered_labels.size(); ++r) {
        if (ordered_labels[r]) ++tp;
        c.points.emplace_back(static_cast<double>(tp) / positive_count,
                              static_cast<double>(tp) / static_cast<double>(r + 1));
    }
    return c;
}

} // namespace detail

/// Stable sort by descending score (ties keep insertion order), then walk the
/// ranks. Recall denominators come from the labels themselves.
inline PRCurve pr_curve(const std::vector<double>& scores, const std::vector<bool>& labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("pr_curve: scores/labels size mismatch");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<bool> ordered(labels.size());
    int positives = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        ordered[r] = labels[order[r]];
        if (ordered[r]) ++positives;
    }
    return detail::curve_from_ordered(ordered, positives);
}

/// Non-interpolated average precision: mean of the precision values at the
/// ranks where recall increases.
inline double average_precision(const PRCurve& curve) {
    if (curve.positive_count <= 0)
        throw std::invalid_argument("average_precision: undefined without positives");
    double ap = 0.0;
    double last_recall = 0.0;
    for (const auto& [recall, precision] : curve.points) {
        if (recall > last_recall) ap += precision;
        last_recall = recall;
    }
    return ap / curve.positive_count;
}

// ---------------------------------------------------------------------------
// Grid-based actionness mAP
// ---------------------------------------------------------------------------

struct GridProtocolConfig {
    int grid_x = 16;
    int grid_y = 16;
    int temporal_bins = 4; // videos only
    double positive_threshold = 0.5;
    enum class Criterion { Coverage, LiteralIoU } criterion = Criterion::Coverage;
};

namespace detail {

// Equal partition; the remainder is absorbed into the last row/column.
inline std::vector<std::pair<int, int>> partition_axis(int extent, int parts) {
    if (extent < parts)
        throw std::invalid_argument("grid protocol: extent smaller than grid");
    std::vector<std::pair<int, int>> spans;
    const int base = extent / parts;
    for (int p = 0; p < parts; ++p)
        spans.emplace_back(p * base, p + 1 == parts ? extent : (p + 1) * base);
    return spans;
}

inline double cell_mean(const ActionnessMap& m, const Box& cell) {
    double s = 0.0;
    for (int i = cell.y1; i < cell.y2; ++i)
        for (int j = cell.x1; j < cell.x2; ++j) s += m.at(i, j);
    return s / static_cast<double>(cell.area());
}

inline std::int64_t covered_area(const Box& cell, const std::vector<Box>& gt) {
    // Union of gt boxes inside the cell, counted pixel-wise. Cells are small
    // (1/256 of the map), so the direct scan is cheap.
    std::int64_t covered = 0;
    for (int i = cell.y1; i < cell.y2; ++i)
        for (int j = cell.x1; j < cell.x2; ++j)
            for (const Box& g : gt)
                if (j >= g.x1 && j < g.x2 && i >= g.y1 && i < g.y2) {
                    ++covered;
                    break;
                }
    return covered;
}

} // namespace detail

/// Image protocol: 16x16 grid cells scored by mean actionness; a cell is
/// positive under the coverage criterion when more than `positive_threshold`
/// of it lies inside ground truth, or under the literal criterion when its
/// IoU with some ground-truth box exceeds the threshold.
inline double grid_actionness_ap(const ActionnessMap& map, const std::vector<Box>& gt_boxes,
                                 const GridProtocolConfig& config = {}) {
    if (gt_boxes.empty()) throw std::invalid_argument("grid_actionness_ap: no ground truth");
    const auto rows = detail::partition_axis(map.height, config.grid_y);
    const auto cols = detail::partition_axis(map.width, config.grid_x);
    std::vector<double> scores;
    std::vector<bool> labels;
    for (const auto& [y1, y2] : rows)
        for (const auto& [x1, x2] : cols) {
            const Box cell{x1, y1, x2, y2};
            scores.push_back(detail::cell_mean(map, cell));
            bool pos = false;
            if (config.criterion == GridProtocolConfig::Criterion::Coverage) {
                const double frac = static_cast<double>(detail::covered_area(cell, gt_boxes)) /
                                    static_cast<double>(cell.area());
                pos = frac > config.positive_threshold;
            } else {
                for (const Box& g : gt_boxes)
                    if (iou(cell, g) > config.positive_threshold) pos = true;
            }
            labels.push_back(pos);
        }
    return average_precision(pr_curve(scores, labels));
}

/// Video protocol: 16x16 cells by `temporal_bins` bins of frames (remainder
/// frames fall into the last bin). A cuboid is scored by its mean actionness
/// across cell and bin; labels follow the configured criterion aggregated
/// over the bin's frames.
inline double grid_actionness_ap(const std::vector<ActionnessMap>& maps,
                                 const std::vector<std::vector<Box>>& gt_per_frame,
                                 const GridProtocolConfig& config = {}) {
    if (maps.empty()) throw std::invalid_argument("grid_actionness_ap: no frames");
    if (maps.size() != gt_per_frame.size())
        throw std::invalid_argument("grid_actionness_ap: maps/gt length mismatch");
    bool any_gt = false;
    for (const auto& g : gt_per_frame)
        if (!g.empty()) any_gt = true;
    if (!any_gt) throw std::invalid_argument("grid_actionness_ap: no ground truth");

    const int frames = static_cast<int>(maps.size());
    const auto bins = detail::partition_axis(frames, config.temporal_bins);
    const auto rows = detail::partition_axis(maps[0].height, config.grid_y);
    const auto cols = detail::partition_axis(maps[0].width, config.grid_x);

    std::vector<double> scores;
    std::vector<bool> labels;
    for (const auto& [t1, t2] : bins)
        for (const auto& [y1, y2] : rows)
            for (const auto& [x1, x2] : cols) {
                const Box cell{x1, y1, x2, y2};
                double score = 0.0;
                double covered = 0.0;
                double literal = 0.0;
                for (int t = t1; t < t2; ++t) {
                    score += detail::cell_mean(maps[t], cell);
                    covered += static_cast<double>(detail::covered_area(cell, gt_per_frame[t]));
                    double best = 0.0;
                    for (const Box& g : gt_per_frame[t]) best = std::max(best, iou(cell, g));
                    literal += best;
                }
                const int span = t2 - t1;
                scores.push_back(score / span);
                if (config.criterion == GridProtocolConfig::Criterion::Coverage)
                    labels.push_back(covered / (static_cast<double>(cell.area()) * span) >
                                     config.positive_threshold);
                else
                    labels.push_back(literal / span > config.positive_threshold);
            }
    return average_precision(pr_curve(scores, labels));
}

// ---------------------------------------------------------------------------
// Proposal recall
// ---------------------------------------------------------------------------

/// Fraction of ground-truth boxes covered (IoU >= threshold) by any of the
/// proposals supplied for their image. Callers truncate the proposal lists to
/// evaluate "first n".
inline double proposal_recall(const std::vector<std::vector<Box>>& proposals_per_image,
                              const std::vector<std::vector<Box>>& gt_per_image,
                              double iou_threshold) {
    if (proposals_per_image.size() != gt_per_image.size())
        throw std::invalid_argument("proposal_recall: per-image list length mismatch");
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
        throw std::invalid_argument("proposal_recall: threshold must be in (0,1]");
    std::int64_t total = 0, covered = 0;
    for (std::size_t img = 0; img < gt_per_image.size(); ++img)
        for (const Box& g : gt_per_image[img]) {
            ++total;
            for (const Box& p : proposals_per_image[img])
                if (iou(p, g) >= iou_threshold) {
                    ++covered;
                    break;
                }
        }
    if (total == 0) throw std::invalid_argument("proposal_recall: empty ground-truth set");
    return static_cast<double>(covered) / static_cast<double>(total);
}

namespace detail {

inline std::vector<std::vector<Box>> truncated(const std::vector<std::vector<Box>>& lists,
                                               int n) {
    std::vector<std::vector<Box>> out(lists.size());
    for (std::size_t i = 0; i < lists.size(); ++i) {
        const auto count = std::min<std::size_t>(lists[i].size(), static_cast<std::size_t>(n));
        out[i].assign(lists[i].begin(), lists[i].begin() + static_cast<long>(count));
    }
    return out;
}

} // namespace detail

/// Recall as a function of the number of proposals kept, at a fixed IoU.
inline std::vector<std::pair<double, double>>
recall_vs_count(const std::vector<std::vector<Box>>& proposals_per_image,
                const std::vector<std::vector<Box>>& gt_per_image, double iou_threshold,
                int max_count) {
    std::vector<std::pair<double, double>> curve;
    for (int n = 1; n <= max_count; ++n)
        curve.emplace_back(n, proposal_recall(detail::truncated(proposals_per_image, n),
                                              gt_per_image, iou_threshold));
    return curve;
}

/// Recall as a function of the IoU threshold, at a fixed proposal count.
inline std::vector<std::pair<double, double>>
recall_vs_iou(const std::vector<std::vector<Box>>& proposals_per_image,
              const std::vector<std::vector<Box>>& gt_per_image, int count,
              const std::vector<double>& thresholds) {
    std::vector<std::pair<double, double>> curve;
    const auto lists = detail::truncated(proposals_per_image, count);
    for (double t : thresholds)
        curve.emplace_back(t, proposal_recall(lists, gt_per_image, t));
    return curve;
}

// ---------------------------------------------------------------------------
// Frame-AP / video-AP
// ---------------------------------------------------------------------------

namespace detail {

// PASCAL-style matching over a score-sorted prediction list. Each key (frame
// or tube index) consumes at most one ground truth; duplicates become false
// positives. Strictly-greater-than-threshold matching.
template <typename Pred, typename Gt, typename OverlapFn>
double matched_ap(std::vector<Pred> preds, const std::vector<Gt>& gts, double threshold,
                  OverlapFn overlap) {
    std::stable_sort(preds.begin(), preds.end(),
                     [](const Pred& a, const Pred& b) { return a.score > b.score; });
    std::vector<bool> used(gts.size(), false);
    std::vector<bool> ordered;
    ordered.reserve(preds.size());
    for (const auto& p : preds) {
        double best = 0.0;
        int best_g = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (used[g]) continue;
            const double ov = overlap(p, gts[g]);
            if (ov > best) {
                best = ov;
                best_g = static_cast<int>(g);
            }
        }
        if (best_g >= 0 && best > threshold) {
            used[best_g] = true;
            ordered.push_back(true);
        } else {
            ordered.push_back(false);
        }
    }
    return average_precision(curve_from_ordered(ordered, static_cast<int>(gts.size())));
}

} // namespace detail

/// Per-class frame-level AP: a detection is correct when its IoU with an
/// unmatched ground truth in the same frame exceeds `iou_threshold` and the
/// label matches. Classes without ground truth are skipped.
inline std::map<int, double> frame_ap(const std::vector<Detection>& detections,
                                      const std::vector<LabeledBox>& gt,
                                      double iou_threshold = 0.5) {
    std::map<int, double> ap;
    std::map<int, std::vector<LabeledBox>> gt_by_class;
    for (const auto& g : gt) gt_by_class[g.label].push_back(g);
    for (const auto& [cls, class_gt] : gt_by_class) {
        std::vector<Detection> class_dets;
        for (const auto& d : detections)
            if (d.class_label == cls) class_dets.push_back(d);
        ap[cls] = detail::matched_ap(std::move(class_dets), class_gt, iou_threshold,
                                     [](const Detection& d, const LabeledBox& g) {
                                         return d.frame == g.frame ? iou(d.box, g.box) : 0.0;
                                     });
    }
    return ap;
}

/// Mean per-frame IoU of two tubes over the union of their frame ranges;
/// frames covered by only one side contribute zero.
inline double tube_overlap(const Tube& a, const Tube& b) {
    const int start = std::min(a.start_frame, b.start_frame);
    const int end = std::max(a.end_frame(), b.end_frame());
    if (end <= start) return 0.0;
    double sum = 0.0;
    for (int f = start; f < end; ++f) {
        const Box* ba = a.box_at(f);
        const Box* bb = b.box_at(f);
        if (ba && bb) sum += iou(*ba, *bb);
    }
    return sum / static_cast<double>(end - start);
}

/// Per-class video-level AP with tube overlap = mean per-frame IoU,
/// matched strictly above `threshold`.
inline std::map<int, double> video_ap(const std::vector<Tube>& tubes,
                                      const std::vector<Tube>& gt_tubes,
                                      double threshold = 0.5) {
    std::map<int, double> ap;
    std::map<int, std::vector<Tube>> gt_by_class;
    for (const auto& g : gt_tubes) gt_by_class[g.class_label].push_back(g);
    for (const auto& [cls, class_gt] : gt_by_class) {
        struct ScoredTube {
            const Tube* tube;
            double score;
        };
        std::vector<ScoredTube> class_tubes;
        for (const auto& t : tubes)
            if (t.class_label == cls) class_tubes.push_back({&t, t.tube_score});
        ap[cls] = detail::matched_ap(std::move(class_tubes), class_gt, threshold,
                                     [](const ScoredTube& t, const Tube& g) {
                                         return tube_overlap(*t.tube, g);
                                     });
    }
    return ap;
}

inline double mean_ap(const std::map<int, double>& per_class) {
    if (per_class.empty()) throw std::invalid_argument("mean_ap: no classes");
    double sum = 0.0;
    for (const auto& [cls, ap] : per_class) sum += ap;
    return sum / static_cast<double>(per_class.size());
}

} // namespace act
