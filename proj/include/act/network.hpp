#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "act/geometry.hpp"
#include "act/layers.hpp"
#include "act/map.hpp"
#include "act/rng.hpp"
#include "act/tensor.hpp"

namespace act {

enum class LayerKind { Conv, MaxPool, Relu, SoftmaxHead };

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    int kernel_size = 0;   // conv, maxpool
    int stride = 1;        // conv, maxpool
    int padding = 0;       // conv, maxpool
    int out_channels = 0;  // conv
    bool trainable = true; // conv
    double lr_multiplier = 1.0;
};

/// Declarative layer list for an FCN. Convolution input channels are chained
/// automatically from the previous layer; the softmax head must close the
/// network.
struct NetworkSpec {
    int input_channels = 0;
    int declared_output_stride = 0; // 0 = not declared
    std::vector<LayerSpec> layers;

    int output_stride() const {
        int s = 1;
        for (const auto& l : layers)
            if (l.kind == LayerKind::Conv || l.kind == LayerKind::MaxPool) s *= l.stride;
        return s;
    }

    /// Channel count entering layer `index`.
    int channels_before(std::size_t index) const {
        int c = input_channels;
        for (std::size_t i = 0; i < index && i < layers.size(); ++i)
            if (layers[i].kind == LayerKind::Conv) c = layers[i].out_channels;
        return c;
    }

    int head_channels() const { return channels_before(layers.size()); }

    int conv_count() const {
        int n = 0;
        for (const auto& l : layers)
            if (l.kind == LayerKind::Conv) ++n;
        return n;
    }

    void validate() const {
        if (input_channels <= 0)
            throw std::invalid_argument("NetworkSpec: input_channels must be positive");
        if (layers.empty()) throw std::invalid_argument("NetworkSpec: no layers");
        int softmax_count = 0;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            switch (l.kind) {
            case LayerKind::Conv:
                if (l.kernel_size <= 0 || l.stride <= 0 || l.padding < 0)
                    throw std::invalid_argument("NetworkSpec: bad conv geometry at layer " +
                                                std::to_string(i));
                if (l.out_channels <= 0)
                    throw std::invalid_argument("NetworkSpec: zero-channel conv at layer " +
                                                std::to_string(i));
                break;
            case LayerKind::MaxPool:
                if (l.kernel_size <= 0 || l.stride <= 0 || l.padding < 0)
                    throw std::invalid_argument("NetworkSpec: bad pool geometry at layer " +
                                                std::to_string(i));
                break;
            case LayerKind::Relu:
                break;
            case LayerKind::SoftmaxHead:
                ++softmax_count;
                if (i + 1 != layers.size())
                    throw std::invalid_argument("NetworkSpec: softmax head must be last");
                break;
            }
        }
        if (softmax_count != 1)
            throw std::invalid_argument("NetworkSpec: exactly one softmax head required");
        if (head_channels() < 2)
            throw std::invalid_argument("NetworkSpec: softmax head needs >= 2 channels");
        if (declared_output_stride != 0 && declared_output_stride != output_stride())
            throw std::invalid_argument(
                "NetworkSpec: declared output_stride " + std::to_string(declared_output_stride) +
                " != product of layer strides " + std::to_string(output_stride()));
    }

    /// Spatial output size for a given input size, via the per-layer floor
    /// formulas. Throws if any intermediate dimension collapses.
    std::pair<int, int> output_size(int in_height, int in_width) const {
        int h = in_height, w = in_width;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            if (l.kind == LayerKind::Conv || l.kind == LayerKind::MaxPool) {
                h = conv_output_dim(h, l.kernel_size, l.stride, l.padding);
                w = conv_output_dim(w, l.kernel_size, l.stride, l.padding);
                if (h <= 0 || w <= 0)
                    throw std::invalid_argument("NetworkSpec: input too small at layer " +
                                                std::to_string(i));
            }
        }
        return {h, w};
    }
};

// ---------------------------------------------------------------------------
// Spec file grammar (one layer per line):
//   input_channels <n>
//   output_stride <n>                      optional, validated
//   conv <k> <stride> <pad> <out_ch> [frozen] [lr_mult <f>]
//   maxpool <k> <stride> [<pad>]
//   relu
//   softmax
// '#' starts a comment; blank lines are ignored.
// ---------------------------------------------------------------------------

inline NetworkSpec parse_network_spec(const std::string& text) {
    NetworkSpec spec;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    bool have_input = false;
    auto fail = [&](const std::string& msg) {
        throw std::runtime_error("spec line " + std::to_string(line_no) + ": " + msg);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string tok;
        if (!(ls >> tok)) continue;
        if (tok == "input_channels") {
            if (!(ls >> spec.input_channels)) fail("expected channel count");
            have_input = true;
        } else if (tok == "output_stride") {
            if (!(ls >> spec.declared_output_stride)) fail("expected stride");
        } else if (tok == "conv") {
            LayerSpec l;
            l.kind = LayerKind::Conv;
            if (!(ls >> l.kernel_size >> l.stride >> l.padding >> l.out_channels))
                fail("conv needs <k> <stride> <pad> <out_channels>");
            std::string attr;
            while (ls >> attr) {
                if (attr == "frozen") {
                    l.trainable = false;
                } else if (attr == "lr_mult") {
                    if (!(ls >> l.lr_multiplier)) fail("lr_mult needs a value");
                } else {
                    fail("unknown conv attribute '" + attr + "'");
                }
            }
            spec.layers.push_back(l);
        } else if (tok == "maxpool") {
            LayerSpec l;
            l.kind = LayerKind::MaxPool;
            if (!(ls >> l.kernel_size >> l.stride)) fail("maxpool needs <k> <stride>");
            ls >> l.padding; // optional, defaults to 0
            spec.layers.push_back(l);
        } else if (tok == "relu") {
            spec.layers.push_back({LayerKind::Relu});
        } else if (tok == "softmax") {
            spec.layers.push_back({LayerKind::SoftmaxHead});
        } else {
            fail("unknown directive '" + tok + "'");
        }
    }
    if (!have_input) throw std::runtime_error("spec: missing input_channels");
    spec.validate();
    return spec;
}

/// Canonical text form; parse(serialize(s)) == s. Also the hashing input for
/// the weight container, so formatting here is load-bearing.
inline std::string serialize_network_spec(const NetworkSpec& spec) {
    std::ostringstream out;
    out << "input_channels " << spec.input_channels << "\n";
    if (spec.declared_output_stride != 0)
        out << "output_stride " << spec.declared_output_stride << "\n";
    for (const auto& l : spec.layers) {
        switch (l.kind) {
        case LayerKind::Conv:
            out << "conv " << l.kernel_size << " " << l.stride << " " << l.padding << " "
                << l.out_channels;
            if (!l.trainable) out << " frozen";
            if (l.lr_multiplier != 1.0) out << " lr_mult " << l.lr_multiplier;
            out << "\n";
            break;
        case LayerKind::MaxPool:
            out << "maxpool " << l.kernel_size << " " << l.stride << " " << l.padding << "\n";
            break;
        case LayerKind::Relu:
            out << "relu\n";
            break;
        case LayerKind::SoftmaxHead:
            out << "softmax\n";
            break;
        }
    }
    return out.str();
}

inline std::uint64_t fnv1a_hash(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t spec_hash(const NetworkSpec& spec) {
    return fnv1a_hash(serialize_network_spec(spec));
}

/// The ClarifaiNet-lineage actionness geometry: overall stride 16, so a
/// 224x224 input yields a 14x14 map. The former fully connected stages are
/// 1x1 convolutions and the pool after conv5 has stride 1.
inline NetworkSpec clarifai_actionness_spec(int input_channels) {
    NetworkSpec s;
    s.input_channels = input_channels;
    s.declared_output_stride = 16;
    auto conv = [](int k, int st, int p, int out) {
        LayerSpec l;
        l.kind = LayerKind::Conv;
        l.kernel_size = k;
        l.stride = st;
        l.padding = p;
        l.out_channels = out;
        return l;
    };
    auto pool = [](int k, int st, int p) {
        LayerSpec l;
        l.kind = LayerKind::MaxPool;
        l.kernel_size = k;
        l.stride = st;
        l.padding = p;
        return l;
    };
    s.layers = {
        conv(7, 2, 3, 96),  {LayerKind::Relu}, pool(3, 2, 1),
        conv(5, 2, 2, 256), {LayerKind::Relu}, pool(3, 2, 1),
        conv(3, 1, 1, 384), {LayerKind::Relu},
        conv(3, 1, 1, 384), {LayerKind::Relu},
        conv(3, 1, 1, 256), {LayerKind::Relu}, pool(3, 1, 1),
        conv(1, 1, 0, 4096), {LayerKind::Relu},
        conv(1, 1, 0, 4096), {LayerKind::Relu},
        conv(1, 1, 0, 2),
        {LayerKind::SoftmaxHead},
    };
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------

struct LayerVelocity {
    std::vector<float> weights;
    std::vector<float> bias;
};

/// A parameterized FCN: one ConvKernel (and momentum buffer) per conv layer.
struct Network {
    NetworkSpec spec;
    std::vector<ConvKernel> kernels;
    std::vector<LayerVelocity> velocities;
};

/// Gaussian fan-in initialization (std = sqrt(2 / fan_in)), zero biases.
/// Bitwise deterministic for a given seed.
inline Network build_network(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    Network net;
    net.spec = spec;
    Rng rng(seed);
    int in_c = spec.input_channels;
    for (const auto& l : spec.layers) {
        if (l.kind != LayerKind::Conv) continue;
        ConvKernel k(l.kernel_size, l.stride, in_c, l.out_channels);
        const double std_dev =
            std::sqrt(2.0 / (static_cast<double>(l.kernel_size) * l.kernel_size * in_c));
        for (auto& w : k.weights) w = static_cast<float>(rng.normal(0.0, std_dev));
        net.kernels.push_back(std::move(k));
        net.velocities.push_back(
            {std::vector<float>(net.kernels.back().weights.size(), 0.0f),
             std::vector<float>(net.kernels.back().bias.size(), 0.0f)});
        in_c = l.out_channels;
    }
    return net;
}

/// Per-layer activations captured by a forward pass, consumed by backward().
struct ForwardCache {
    struct Entry {
        Tensor input;            // conv, relu
        std::vector<int> argmax; // maxpool
        int in_height = 0, in_width = 0, in_channels = 0;
    };
    std::vector<Entry> entries;
    bool valid = false;
};

namespace detail {

inline Tensor forward_logits_impl(const Network& net, const Tensor& input,
                                  ForwardCache* cache) {
    if (input.channels != net.spec.input_channels)
        throw std::invalid_argument("forward: input has " + std::to_string(input.channels) +
                                    " channels, network expects " +
                                    std::to_string(net.spec.input_channels));
    Tensor x = input;
    std::size_t conv_i = 0;
    for (const auto& l : net.spec.layers) {
        switch (l.kind) {
        case LayerKind::Conv: {
            if (cache) {
                ForwardCache::Entry e;
                e.input = x;
                cache->entries.push_back(std::move(e));
            }
            x = conv2d(x, net.kernels[conv_i], l.padding);
            ++conv_i;
            break;
        }
        case LayerKind::MaxPool: {
            auto r = maxpool_with_argmax(x, l.kernel_size, l.stride, l.padding);
            if (cache) {
                ForwardCache::Entry e;
                e.argmax = std::move(r.argmax);
                e.in_height = x.height;
                e.in_width = x.width;
                e.in_channels = x.channels;
                cache->entries.push_back(std::move(e));
            }
            x = std::move(r.output);
            break;
        }
        case LayerKind::Relu: {
            if (cache) {
                ForwardCache::Entry e;
                e.input = x;
                cache->entries.push_back(std::move(e));
            }
            x = relu(x);
            break;
        }
        case LayerKind::SoftmaxHead:
            if (cache) cache->entries.push_back({}); // placeholder, handled by fused loss
            if (cache) cache->valid = true;
            return x;
        }
    }
    throw std::logic_error("forward: spec without softmax head"); // validate() precludes this
}

} // namespace detail

/// Logits entering the softmax head.
inline Tensor forward_logits(const Network& net, const Tensor& input) {
    return detail::forward_logits_impl(net, input, nullptr);
}

inline Tensor forward_logits_cached(const Network& net, const Tensor& input,
                                    ForwardCache& cache) {
    cache.entries.clear();
    cache.valid = false;
    return detail::forward_logits_impl(net, input, &cache);
}

/// Foreground-channel probability map (channel 1 of the softmax head).
inline ActionnessMap forward_actionness(const Network& net, const Tensor& input) {
    if (net.spec.head_channels() != 2)
        throw std::invalid_argument("forward_actionness: head must have 2 channels, has " +
                                    std::to_string(net.spec.head_channels()));
    const Tensor probs = channel_softmax(forward_logits(net, input));
    return ActionnessMap::from_tensor_channel(probs, 1);
}

struct LayerGrads {
    std::vector<float> weights;
    std::vector<float> bias;
};

/// Backpropagates a gradient at the logits through the cached layers,
/// producing per-conv-layer parameter gradients.
inline std::vector<LayerGrads> backward(const Network& net, const ForwardCache& cache,
                                        const Tensor& logit_grad) {
    if (!cache.valid || cache.entries.size() != net.spec.layers.size())
        throw std::runtime_error("backward: no cached forward pass for this network");
    std::vector<LayerGrads> grads(net.kernels.size());
    Tensor g = logit_grad;
    int conv_i = static_cast<int>(net.kernels.size());
    for (std::size_t li = net.spec.layers.size(); li-- > 0;) {
        const auto& l = net.spec.layers[li];
        const auto& e = cache.entries[li];
        switch (l.kind) {
        case LayerKind::SoftmaxHead:
            break; // gradient is already with respect to the logits
        case LayerKind::Relu:
            g = relu_backward(e.input, g);
            break;
        case LayerKind::MaxPool:
            g = maxpool_backward(e.argmax, e.in_height, e.in_width, e.in_channels, g);
            break;
        case LayerKind::Conv: {
            --conv_i;
            auto cg = conv2d_backward(e.input, net.kernels[conv_i], l.padding, g);
            grads[conv_i].weights = std::move(cg.weight_grad);
            grads[conv_i].bias = std::move(cg.bias_grad);
            g = std::move(cg.input_grad);
            break;
        }
        }
    }
    return grads;
}

/// Elementwise mean of the appearance and motion maps.
inline ActionnessMap hybrid_fuse(const ActionnessMap& appearance, const ActionnessMap& motion) {
    if (appearance.height != motion.height || appearance.width != motion.width)
        throw std::invalid_argument("hybrid_fuse: dimension mismatch");
    ActionnessMap out(appearance.height, appearance.width);
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = 0.5f * (appearance.values[i] + motion.values[i]);
    return out;
}

inline const std::vector<double>& default_pyramid_scales() {
    static const std::vector<double> scales = {0.7071, 1.0, 1.4142, 2.0};
    return scales;
}

/// Pyramid inference: run the network at each scale, resize every map back to
/// the input's spatial size, and average with equal weights.
inline ActionnessMap multiscale_estimate(const Network& net, const Tensor& input,
                                         const std::vector<double>& scales) {
    if (scales.empty()) throw std::invalid_argument("multiscale_estimate: no scales");
    ActionnessMap acc(input.height, input.width, 0.0f);
    for (double s : scales) {
        if (s <= 0.0) throw std::invalid_argument("multiscale_estimate: non-positive scale");
        const int sh = std::max(1, static_cast<int>(std::lround(input.height * s)));
        const int sw = std::max(1, static_cast<int>(std::lround(input.width * s)));
        const Tensor scaled = bilinear_resize(input, sh, sw);
        const ActionnessMap m = forward_actionness(net, scaled);
        const ActionnessMap up = resize_map(m, input.height, input.width);
        for (std::size_t i = 0; i < acc.values.size(); ++i) acc.values[i] += up.values[i];
    }
    const float inv = 1.0f / static_cast<float>(scales.size());
    for (float& v : acc.values) v *= inv;
    return acc;
}

// ---------------------------------------------------------------------------
// Fine-tuning
// ---------------------------------------------------------------------------

struct TrainSchedule {
    int batch_size = 100;
    double momentum = 0.9;
    std::vector<std::pair<int, double>> lr_milestones = {{0, 1e-2}, {1000, 1e-3}, {2000, 1e-4}};
    int total_iterations = 3000;
    int frozen_layer_count = 0;      // first N conv layers stay fixed
    double reduced_lr_multiplier = 1.0; // applied to remaining k>1 convs
    int input_height = 224, input_width = 224;
    int target_height = 14, target_width = 14;

    void validate() const {
        if (batch_size <= 0) throw std::invalid_argument("TrainSchedule: batch_size");
        if (!(momentum >= 0.0 && momentum < 1.0))
            throw std::invalid_argument("TrainSchedule: momentum must be in [0,1)");
        if (lr_milestones.empty()) throw std::invalid_argument("TrainSchedule: no milestones");
        for (std::size_t i = 1; i < lr_milestones.size(); ++i)
            if (lr_milestones[i].first <= lr_milestones[i - 1].first)
                throw std::invalid_argument("TrainSchedule: milestones must strictly increase");
        if (total_iterations < 0) throw std::invalid_argument("TrainSchedule: total_iterations");
    }

    double learning_rate_at(int iteration) const {
        double rate = lr_milestones.front().second;
        for (const auto& [it, r] : lr_milestones)
            if (iteration >= it) rate = r;
        return rate;
    }

    /// The published fine-tuning recipe: lr 1e-2 dropping to 1e-3 at 1000 and
    /// 1e-4 at 2000 iterations, stop at 3000; first three convs frozen; the
    /// remaining backbone convs at a tenth of the network rate.
    static TrainSchedule paper_defaults() {
        TrainSchedule s;
        s.frozen_layer_count = 3;
        s.reduced_lr_multiplier = 0.1;
        return s;
    }
};

struct TrainSample {
    Tensor input;
    ActionnessMap target; // binary, full resolution
};

struct FineTuneResult {
    Network net;
    std::vector<double> loss_history; // mean batch loss per iteration
};

namespace detail {

// Effective learning-rate multiplier for conv layer `conv_index`. Frozen
// layers (spec flag or schedule count) get 0; non-head (k>1) convs after the
// frozen block get the schedule's reduced multiplier.
inline double effective_lr_multiplier(const LayerSpec& l, int conv_index,
                                      const TrainSchedule& schedule) {
    if (!l.trainable || conv_index < schedule.frozen_layer_count) return 0.0;
    double m = l.lr_multiplier;
    if (l.kernel_size > 1) m *= schedule.reduced_lr_multiplier;
    return m;
}

} // namespace detail

/// Mini-batch SGD with momentum over (input, binary map) pairs, following the
/// schedule's milestones and layer policy. Batches are drawn with replacement
/// from a generator seeded by `seed`; given a fixed dataset order and seed,
/// the result is bitwise reproducible for any worker-thread count.
inline FineTuneResult fine_tune(const Network& start, const std::vector<TrainSample>& dataset,
                                const TrainSchedule& schedule, std::uint64_t seed,
                                int worker_threads = 1) {
    schedule.validate();
    if (dataset.empty()) throw std::invalid_argument("fine_tune: empty dataset");

    FineTuneResult result;
    result.net = start;
    Network& net = result.net;

    const auto [out_h, out_w] =
        net.spec.output_size(schedule.input_height, schedule.input_width);
    if (out_h != schedule.target_height || out_w != schedule.target_width)
        throw std::invalid_argument(
            "fine_tune: network output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
            " does not match target size " + std::to_string(schedule.target_height) + "x" +
            std::to_string(schedule.target_width));

    // Resize once up front; nearest-neighbor keeps the targets binary.
    std::vector<TrainSample> prepared(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        prepared[i].input =
            bilinear_resize(dataset[i].input, schedule.input_height, schedule.input_width);
        prepared[i].target =
            nearest_resize_map(dataset[i].target, schedule.target_height, schedule.target_width);
        if (!prepared[i].target.is_binary())
            throw std::invalid_argument("fine_tune: non-binary target in sample " +
                                        std::to_string(i));
    }

    // Which conv layers can learn at all under this schedule.
    std::vector<double> multipliers;
    {
        int conv_i = 0;
        for (const auto& l : net.spec.layers) {
            if (l.kind != LayerKind::Conv) continue;
            multipliers.push_back(detail::effective_lr_multiplier(l, conv_i, schedule));
            ++conv_i;
        }
    }

    Rng rng(seed);
    const int batch = schedule.batch_size;
    std::vector<std::size_t> indices(batch);
    std::vector<std::vector<LayerGrads>> sample_grads(batch);
    std::vector<double> sample_losses(batch);

    for (int iter = 0; iter < schedule.total_iterations; ++iter) {
        for (int b = 0; b < batch; ++b) indices[b] = rng.uniform_index(dataset.size());

        auto run_sample = [&](int b) {
            const TrainSample& s = prepared[indices[b]];
            ForwardCache cache;
            const Tensor logits = forward_logits_cached(net, s.input, cache);
            const Tensor probs = channel_softmax(logits);
            auto loss = pixel_cross_entropy(probs, s.target);
            sample_losses[b] = loss.loss;
            sample_grads[b] = backward(net, cache, loss.gradient);
        };

        const int threads = std::max(1, worker_threads);
        if (threads == 1 || batch == 1) {
            for (int b = 0; b < batch; ++b) run_sample(b);
        } else {
            std::vector<std::thread> pool;
            const int n = std::min(threads, batch);
            std::atomic<int> cursor{0};
            for (int t = 0; t < n; ++t)
                pool.emplace_back([&]() {
                    for (int b = cursor.fetch_add(1); b < batch; b = cursor.fetch_add(1))
                        run_sample(b);
                });
            for (auto& th : pool) th.join();
        }

        // Reduce in sample order so thread count cannot change the bits.
        double mean_loss = 0.0;
        const float inv_batch = 1.0f / static_cast<float>(batch);
        for (std::size_t layer = 0; layer < net.kernels.size(); ++layer) {
            if (multipliers[layer] == 0.0) continue;
            auto& wsum = sample_grads[0][layer].weights;
            auto& bsum = sample_grads[0][layer].bias;
            for (int b = 1; b < batch; ++b) {
                const auto& g = sample_grads[b][layer];
                for (std::size_t i = 0; i < wsum.size(); ++i) wsum[i] += g.weights[i];
                for (std::size_t i = 0; i < bsum.size(); ++i) bsum[i] += g.bias[i];
            }
            for (auto& v : wsum) v *= inv_batch;
            for (auto& v : bsum) v *= inv_batch;
        }
        for (int b = 0; b < batch; ++b) mean_loss += sample_losses[b];
        mean_loss /= batch;
        if (!std::isfinite(mean_loss))
            throw NumericalError("fine_tune: non-finite loss at iteration " +
                                     std::to_string(iter));
        result.loss_history.push_back(mean_loss);

        const double rate = schedule.learning_rate_at(iter);
        for (std::size_t layer = 0; layer < net.kernels.size(); ++layer) {
            const double lr = rate * multipliers[layer];
            if (lr == 0.0) continue;
            auto w = sgd_momentum_step(net.kernels[layer].weights, sample_grads[0][layer].weights,
                                       net.velocities[layer].weights, lr, schedule.momentum);
            net.kernels[layer].weights = std::move(w.params);
            net.velocities[layer].weights = std::move(w.velocity);
            auto bi = sgd_momentum_step(net.kernels[layer].bias, sample_grads[0][layer].bias,
                                        net.velocities[layer].bias, lr, schedule.momentum);
            net.kernels[layer].bias = std::move(bi.params);
            net.velocities[layer].bias = std::move(bi.velocity);
        }
    }
    return result;
}

} // namespace act
