#pragma once

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "act/geometry.hpp"
#include "act/network.hpp"
#include "act/proposals.hpp"
#include "act/tensor.hpp"

namespace act {

/// One per-frame, per-class detection. Class labels run 0..classCount-1;
/// the background class (index classCount) is never emitted as a detection.
struct Detection {
    int frame = 0;
    Box box;
    int class_label = 0;
    float score = 0.0f;
};

/// Ground-truth annotation record.
struct LabeledBox {
    int frame = 0;
    Box box;
    int label = 0;
};

/// Spatio-temporal detection: one box per frame over a contiguous range.
struct Tube {
    int class_label = 0;
    int start_frame = 0;
    std::vector<Box> boxes;
    double tube_score = 0.0;

    int end_frame() const { return start_frame + static_cast<int>(boxes.size()); }

    const Box* box_at(int frame) const {
        if (frame < start_frame || frame >= end_frame()) return nullptr;
        return &boxes[frame - start_frame];
    }
};

struct LinkConfig {
    double lambda = 1.0; // weight on consecutive-frame overlap
    enum class ScoreMode { Mean, Sum } score_mode = ScoreMode::Mean;
};

/// Clamped crop of a frame, bilinearly resampled to the classifier input
/// size.
inline Tensor crop_and_resize(const Tensor& frame, const Box& box, int out_height,
                              int out_width) {
    const Box b = box.clamped(frame.width, frame.height);
    if (b.empty())
        throw std::invalid_argument("crop_and_resize: box does not intersect the frame");
    Tensor crop(b.y2 - b.y1, b.x2 - b.x1, frame.channels);
    for (int i = 0; i < crop.height; ++i)
        for (int j = 0; j < crop.width; ++j)
            for (int c = 0; c < frame.channels; ++c)
                crop.at(i, j, c) = frame.at(b.y1 + i, b.x1 + j, c);
    return bilinear_resize(crop, out_height, out_width);
}

struct TrainingExamples {
    std::vector<Box> positives; // the ground-truth boxes themselves
    std::vector<Box> negatives; // proposals overlapping all gt below the threshold
};

/// Positives are the ground-truth boxes; negatives are proposals whose best
/// IoU against any ground truth is strictly below `negative_iou`.
inline TrainingExamples select_training_examples(const std::vector<Box>& proposals,
                                                 const std::vector<Box>& gt_boxes,
                                                 double negative_iou = 0.25) {
    TrainingExamples ex;
    ex.positives = gt_boxes;
    for (const Box& p : proposals) {
        double best = 0.0;
        for (const Box& g : gt_boxes) best = std::max(best, iou(p, g));
        if (best < negative_iou) ex.negatives.push_back(p);
    }
    return ex;
}

/// Softmax probability vector per crop: the network output map is averaged
/// spatially, so any crop size the classifier geometry accepts works.
inline std::vector<std::vector<float>> classify_proposals(const Network& classifier,
                                                          const std::vector<Tensor>& crops) {
    std::vector<std::vector<float>> out;
    out.reserve(crops.size());
    for (const Tensor& crop : crops) {
        const Tensor probs = channel_softmax(forward_logits(classifier, crop));
        std::vector<float> score(probs.channels, 0.0f);
        for (int i = 0; i < probs.height; ++i)
            for (int j = 0; j < probs.width; ++j)
                for (int c = 0; c < probs.channels; ++c) score[c] += probs.at(i, j, c);
        const float inv = 1.0f / static_cast<float>(probs.height * probs.width);
        for (float& s : score) s *= inv;
        out.push_back(std::move(score));
    }
    return out;
}

struct CropSample {
    Tensor crop;
    int label = 0; // 0..|A|-1 actions, |A| background
};

/// Mini-batch SGD training of a proposal classifier over labeled crops.
/// Same determinism contract as fine_tune.
inline FineTuneResult train_classifier(const Network& start,
                                       const std::vector<CropSample>& samples, int iterations,
                                       int batch_size, double learning_rate, double momentum,
                                       std::uint64_t seed, int worker_threads = 1) {
    if (samples.empty()) throw std::invalid_argument("train_classifier: empty dataset");
    if (iterations < 0 || batch_size <= 0)
        throw std::invalid_argument("train_classifier: bad schedule");
    for (const auto& s : samples)
        if (s.label < 0 || s.label >= start.spec.head_channels())
            throw std::invalid_argument("train_classifier: label outside head range");

    FineTuneResult result;
    result.net = start;
    Network& net = result.net;
    Rng rng(seed);
    std::vector<std::size_t> indices(batch_size);
    std::vector<std::vector<LayerGrads>> grads(batch_size);
    std::vector<double> losses(batch_size);

    for (int iter = 0; iter < iterations; ++iter) {
        for (int b = 0; b < batch_size; ++b) indices[b] = rng.uniform_index(samples.size());
        auto run = [&](int b) {
            const CropSample& s = samples[indices[b]];
            ForwardCache cache;
            const Tensor logits = forward_logits_cached(net, s.crop, cache);
            auto loss = class_cross_entropy(channel_softmax(logits), s.label);
            losses[b] = loss.loss;
            grads[b] = backward(net, cache, loss.gradient);
        };
        const int threads = std::max(1, worker_threads);
        if (threads == 1 || batch_size == 1) {
            for (int b = 0; b < batch_size; ++b) run(b);
        } else {
            std::vector<std::thread> pool;
            std::atomic<int> cursor{0};
            for (int t = 0; t < std::min(threads, batch_size); ++t)
                pool.emplace_back([&]() {
                    for (int b = cursor.fetch_add(1); b < batch_size; b = cursor.fetch_add(1))
                        run(b);
                });
            for (auto& th : pool) th.join();
        }

        double mean_loss = 0.0;
        const float inv = 1.0f / static_cast<float>(batch_size);
        for (std::size_t layer = 0; layer < net.kernels.size(); ++layer) {
            auto& w = grads[0][layer].weights;
            auto& bi = grads[0][layer].bias;
            for (int b = 1; b < batch_size; ++b) {
                for (std::size_t i = 0; i < w.size(); ++i) w[i] += grads[b][layer].weights[i];
                for (std::size_t i = 0; i < bi.size(); ++i) bi[i] += grads[b][layer].bias[i];
            }
            for (auto& v : w) v *= inv;
            for (auto& v : bi) v *= inv;
        }
        for (int b = 0; b < batch_size; ++b) mean_loss += losses[b];
        mean_loss /= batch_size;
        if (!std::isfinite(mean_loss))
            throw NumericalError("train_classifier: non-finite loss at iteration " +
                                     std::to_string(iter));
        result.loss_history.push_back(mean_loss);

        for (std::size_t layer = 0; layer < net.kernels.size(); ++layer) {
            auto w = sgd_momentum_step(net.kernels[layer].weights, grads[0][layer].weights,
                                       net.velocities[layer].weights, learning_rate, momentum);
            net.kernels[layer].weights = std::move(w.params);
            net.velocities[layer].weights = std::move(w.velocity);
            auto bi = sgd_momentum_step(net.kernels[layer].bias, grads[0][layer].bias,
                                        net.velocities[layer].bias, learning_rate, momentum);
            net.kernels[layer].bias = std::move(bi.params);
            net.velocities[layer].bias = std::move(bi.velocity);
        }
    }
    return result;
}

/// Elementwise mean of the spatial- and temporal-stream probability vectors.
inline std::vector<float> fuse_streams(const std::vector<float>& spatial,
                                       const std::vector<float>& temporal) {
    if (spatial.size() != temporal.size())
        throw std::invalid_argument("fuse_streams: length mismatch");
    std::vector<float> out(spatial.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5f * (spatial[i] + temporal[i]);
    return out;
}

namespace detail {

struct ScoredPixelBox {
    Box box;
    float score = 0.0f;
    int payload = 0; // original index
};

} // namespace detail

/// Turns per-proposal fused score vectors into detections: one per proposal
/// and non-background class, scored by that class component. When nms_iou is
/// in (0,1], per-class greedy NMS is applied with the proposal-gen routine.
inline std::vector<Detection> detect_frame(const std::vector<Box>& proposals,
                                           const std::vector<std::vector<float>>& fused_scores,
                                           int class_count, int frame = 0,
                                           double nms_iou = 0.0) {
    if (proposals.size() != fused_scores.size())
        throw std::invalid_argument("detect_frame: proposals and scores misaligned");
    std::vector<Detection> detections;
    for (int k = 0; k < class_count; ++k) {
        std::vector<detail::ScoredPixelBox> cand;
        for (std::size_t i = 0; i < proposals.size(); ++i) {
            if (static_cast<int>(fused_scores[i].size()) < class_count + 1)
                throw std::invalid_argument("detect_frame: score vector shorter than |A|+1");
            cand.push_back({proposals[i], fused_scores[i][k], static_cast<int>(i)});
        }
        if (cand.empty()) continue;
        if (nms_iou > 0.0)
            cand = detail::greedy_nms(std::move(cand), static_cast<int>(cand.size()), nms_iou,
                                      [](const Box& a, const Box& b) { return iou(a, b); });
        for (const auto& c : cand) detections.push_back({frame, c.box, k, c.score});
    }
    return detections;
}

/// Maximum temporal path over per-frame candidates of one class: maximizes
/// sum of detection scores plus lambda times the overlap between consecutive
/// boxes, by forward dynamic programming with backtracking. Ties prefer the
/// lower candidate index, which makes the path unique and testable.
inline Tube link_tube(const std::vector<std::vector<Detection>>& detections_per_frame,
                      const LinkConfig& config = {}) {
    if (config.lambda < 0.0) throw std::invalid_argument("link_tube: lambda must be >= 0");
    if (detections_per_frame.empty()) throw std::invalid_argument("link_tube: no frames");
    for (std::size_t t = 0; t < detections_per_frame.size(); ++t)
        if (detections_per_frame[t].empty())
            throw std::invalid_argument("link_tube: frame " + std::to_string(t) +
                                        " has no candidates");

    const std::size_t frames = detections_per_frame.size();
    std::vector<std::vector<double>> dp(frames);
    std::vector<std::vector<int>> prev(frames);
    dp[0].resize(detections_per_frame[0].size());
    prev[0].assign(detections_per_frame[0].size(), -1);
    for (std::size_t i = 0; i < detections_per_frame[0].size(); ++i)
        dp[0][i] = detections_per_frame[0][i].score;

    for (std::size_t t = 1; t < frames; ++t) {
        const auto& cur = detections_per_frame[t];
        const auto& before = detections_per_frame[t - 1];
        dp[t].resize(cur.size());
        prev[t].resize(cur.size());
        for (std::size_t i = 0; i < cur.size(); ++i) {
            double best = -std::numeric_limits<double>::infinity();
            int best_j = -1;
            for (std::size_t j = 0; j < before.size(); ++j) {
                const double v =
                    dp[t - 1][j] + config.lambda * iou(before[j].box, cur[i].box);
                if (v > best) {
                    best = v;
                    best_j = static_cast<int>(j);
                }
            }
            dp[t][i] = best + cur[i].score;
            prev[t][i] = best_j;
        }
    }

    int best_i = 0;
    for (std::size_t i = 1; i < dp[frames - 1].size(); ++i)
        if (dp[frames - 1][i] > dp[frames - 1][best_i]) best_i = static_cast<int>(i);

    Tube tube;
    tube.class_label = detections_per_frame[0][0].class_label;
    tube.start_frame = detections_per_frame[0][0].frame;
    tube.boxes.resize(frames);
    double score_sum = 0.0;
    int i = best_i;
    for (std::size_t t = frames; t-- > 0;) {
        const Detection& d = detections_per_frame[t][i];
        tube.boxes[t] = d.box;
        score_sum += d.score;
        i = prev[t][i];
    }
    tube.tube_score = config.score_mode == LinkConfig::ScoreMode::Mean
                          ? score_sum / static_cast<double>(frames)
                          : score_sum;
    return tube;
}

/// Repeatedly extracts the best path, removes its boxes, and links again
/// until the tube score drops below `min_score`, a frame runs dry, or
/// `max_tubes` is reached.
inline std::vector<Tube> link_tubes(std::vector<std::vector<Detection>> detections_per_frame,
                                    const LinkConfig& config, int max_tubes, double min_score) {
    std::vector<Tube> tubes;
    while (static_cast<int>(tubes.size()) < max_tubes) {
        bool any_empty = false;
        for (const auto& f : detections_per_frame)
            if (f.empty()) any_empty = true;
        if (any_empty || detections_per_frame.empty()) break;
        Tube t = link_tube(detections_per_frame, config);
        if (t.tube_score < min_score) break;
        for (std::size_t f = 0; f < detections_per_frame.size(); ++f) {
            auto& list = detections_per_frame[f];
            for (std::size_t i = 0; i < list.size(); ++i)
                if (list[i].box == t.boxes[f]) {
                    list.erase(list.begin() + static_cast<long>(i));
                    break;
                }
        }
        tubes.push_back(std::move(t));
    }
    return tubes;
}

} // namespace act
