#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "act/map.hpp"
#include "act/tensor.hpp"

namespace act {

/// Square convolution kernel. Weights are stored (ky, kx, inChannel,
/// outChannel) row-major so the innermost output-channel loop is contiguous.
template <typename T>
struct ConvKernelT {
    int kernel_size = 0;
    int stride = 1;
    int in_channels = 0;
    int out_channels = 0;
    std::vector<T> weights; // kernel_size^2 * in_channels * out_channels
    std::vector<T> bias;    // out_channels

    ConvKernelT() = default;
    ConvKernelT(int k, int s, int in_c, int out_c)
        : kernel_size(k), stride(s), in_channels(in_c), out_channels(out_c),
          weights(static_cast<std::size_t>(k) * k * in_c * out_c, T(0)),
          bias(static_cast<std::size_t>(out_c), T(0)) {
        if (k <= 0 || s <= 0 || in_c <= 0 || out_c <= 0)
            throw std::invalid_argument("ConvKernel fields must be positive");
    }

    T& w(int ky, int kx, int ci, int co) {
        return weights[((static_cast<std::size_t>(ky) * kernel_size + kx) * in_channels + ci) *
                           out_channels +
                       co];
    }
    const T& w(int ky, int kx, int ci, int co) const {
        return weights[((static_cast<std::size_t>(ky) * kernel_size + kx) * in_channels + ci) *
                           out_channels +
                       co];
    }
};

using ConvKernel = ConvKernelT<float>;

inline int conv_output_dim(int dim, int k, int s, int padding) {
    return (dim + 2 * padding - k) / s + 1;
}

/// 2D convolution with zero padding. Output dims follow the floor formula
/// floor((dim + 2*padding - k)/s) + 1.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const ConvKernelT<T>& kernel, int padding) {
    if (padding < 0) throw std::invalid_argument("conv2d: negative padding");
    if (input.channels != kernel.in_channels)
        throw std::invalid_argument("conv2d: input has " + std::to_string(input.channels) +
                                    " channels, kernel expects " +
                                    std::to_string(kernel.in_channels));
    const int k = kernel.kernel_size;
    const int s = kernel.stride;
    const int out_h = conv_output_dim(input.height, k, s, padding);
    const int out_w = conv_output_dim(input.width, k, s, padding);
    if (out_h <= 0 || out_w <= 0)
        throw std::invalid_argument("conv2d: non-positive output size for input " +
                                    input.shape_str());

    const int ci_n = kernel.in_channels;
    const int co_n = kernel.out_channels;
    TensorT<T> out(out_h, out_w, co_n);
    std::vector<T> acc(co_n);
    for (int oi = 0; oi < out_h; ++oi) {
        for (int oj = 0; oj < out_w; ++oj) {
            std::copy(kernel.bias.begin(), kernel.bias.end(), acc.begin());
            for (int ky = 0; ky < k; ++ky) {
                const int iy = oi * s - padding + ky;
                if (iy < 0 || iy >= input.height) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = oj * s - padding + kx;
                    if (ix < 0 || ix >= input.width) continue;
                    const T* in_px = &input.data[(static_cast<std::size_t>(iy) * input.width + ix) * ci_n];
                    const T* w_px = &kernel.weights[(static_cast<std::size_t>(ky) * k + kx) * ci_n * co_n];
                    for (int ci = 0; ci < ci_n; ++ci) {
                        const T a = in_px[ci];
                        const T* w_row = w_px + static_cast<std::size_t>(ci) * co_n;
                        for (int co = 0; co < co_n; ++co) acc[co] += a * w_row[co];
                    }
                }
            }
            T* out_px = &out.data[(static_cast<std::size_t>(oi) * out_w + oj) * co_n];
            std::copy(acc.begin(), acc.end(), out_px);
        }
    }
    return out;
}

template <typename T>
struct ConvGradsT {
    TensorT<T> input_grad;
    std::vector<T> weight_grad;
    std::vector<T> bias_grad;
};

/// Chain-rule gradients of conv2d with respect to its input, weights, and
/// bias, given the cached forward input and the upstream gradient.
template <typename T>
ConvGradsT<T> conv2d_backward(const TensorT<T>& input, const ConvKernelT<T>& kernel,
                              int padding, const TensorT<T>& upstream) {
    const int k = kernel.kernel_size;
    const int s = kernel.stride;
    const int out_h = conv_output_dim(input.height, k, s, padding);
    const int out_w = conv_output_dim(input.width, k, s, padding);
    if (upstream.height != out_h || upstream.width != out_w ||
        upstream.channels != kernel.out_channels)
        throw std::invalid_argument("conv2d_backward: upstream shape " + upstream.shape_str() +
                                    " does not match forward output");

    const int ci_n = kernel.in_channels;
    const int co_n = kernel.out_channels;
    ConvGradsT<T> g;
    g.input_grad = TensorT<T>(input.height, input.width, ci_n);
    g.weight_grad.assign(kernel.weights.size(), T(0));
    g.bias_grad.assign(kernel.bias.size(), T(0));

    for (int oi = 0; oi < out_h; ++oi) {
        for (int oj = 0; oj < out_w; ++oj) {
            const T* up_px = &upstream.data[(static_cast<std::size_t>(oi) * out_w + oj) * co_n];
            for (int co = 0; co < co_n; ++co) g.bias_grad[co] += up_px[co];
            for (int ky = 0; ky < k; ++ky) {
                const int iy = oi * s - padding + ky;
                if (iy < 0 || iy >= input.height) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = oj * s - padding + kx;
                    if (ix < 0 || ix >= input.width) continue;
                    const std::size_t in_off = (static_cast<std::size_t>(iy) * input.width + ix) * ci_n;
                    const std::size_t w_off = (static_cast<std::size_t>(ky) * k + kx) * ci_n * co_n;
                    for (int ci = 0; ci < ci_n; ++ci) {
                        const T a = input.data[in_off + ci];
                        const T* w_row = &kernel.weights[w_off + static_cast<std::size_t>(ci) * co_n];
                        T* wg_row = &g.weight_grad[w_off + static_cast<std::size_t>(ci) * co_n];
                        T ig = T(0);
                        for (int co = 0; co < co_n; ++co) {
                            const T u = up_px[co];
                            wg_row[co] += a * u;
                            ig += w_row[co] * u;
                        }
                        g.input_grad.data[in_off + ci] += ig;
                    }
                }
            }
        }
    }
    return g;
}

inline int pool_output_dim(int dim, int k, int s, int padding) {
    return (dim + 2 * padding - k) / s + 1;
}

template <typename T>
struct PoolResultT {
    TensorT<T> output;
    std::vector<int> argmax; // flat input index per output element, -1 if unset
};

/// Per-channel window maximum. Padding cells are neutral (never selected);
/// each window must cover at least one real cell.
template <typename T>
PoolResultT<T> maxpool_with_argmax(const TensorT<T>& input, int k, int s, int padding = 0) {
    if (k <= 0 || s <= 0 || padding < 0)
        throw std::invalid_argument("maxpool: k and s must be positive, padding >= 0");
    const int out_h = pool_output_dim(input.height, k, s, padding);
    const int out_w = pool_output_dim(input.width, k, s, padding);
    if (out_h <= 0 || out_w <= 0)
        throw std::invalid_argument("maxpool: window " + std::to_string(k) +
                                    " larger than padded input " + input.shape_str());

    PoolResultT<T> r;
    r.output = TensorT<T>(out_h, out_w, input.channels);
    r.argmax.assign(r.output.size(), -1);
    for (int oi = 0; oi < out_h; ++oi) {
        for (int oj = 0; oj < out_w; ++oj) {
            for (int c = 0; c < input.channels; ++c) {
                T best = -std::numeric_limits<T>::infinity();
                int best_idx = -1;
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oi * s - padding + ky;
                    if (iy < 0 || iy >= input.height) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = oj * s - padding + kx;
                        if (ix < 0 || ix >= input.width) continue;
                        const int idx =
                            static_cast<int>((static_cast<std::size_t>(iy) * input.width + ix) *
                                                 input.channels +
                                             c);
                        const T v = input.data[idx];
                        if (v > best) { // ties keep the first cell in scan order
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                if (best_idx < 0)
                    throw std::invalid_argument("maxpool: window covers no input cell");
                const std::size_t o =
                    (static_cast<std::size_t>(oi) * out_w + oj) * input.channels + c;
                r.output.data[o] = best;
                r.argmax[o] = best_idx;
            }
        }
    }
    return r;
}

template <typename T>
TensorT<T> maxpool(const TensorT<T>& input, int k, int s, int padding = 0) {
    return maxpool_with_argmax(input, k, s, padding).output;
}

/// Routes upstream gradient to the argmax positions recorded by the forward
/// pass. Total gradient mass is conserved.
template <typename T>
TensorT<T> maxpool_backward(const std::vector<int>& argmax, int in_height, int in_width,
                            int in_channels, const TensorT<T>& upstream) {
    if (argmax.size() != upstream.size())
        throw std::invalid_argument("maxpool_backward: argmax/upstream size mismatch");
    TensorT<T> g(in_height, in_width, in_channels);
    for (std::size_t i = 0; i < argmax.size(); ++i) g.data[argmax[i]] += upstream.data[i];
    return g;
}

/// Per-channel window average (no padding). Unused by the default network
/// configs; the max variant is what the models pool with.
template <typename T>
TensorT<T> avgpool(const TensorT<T>& input, int k, int s) {
    if (k <= 0 || s <= 0) throw std::invalid_argument("avgpool: k and s must be positive");
    const int out_h = pool_output_dim(input.height, k, s, 0);
    const int out_w = pool_output_dim(input.width, k, s, 0);
    if (out_h <= 0 || out_w <= 0)
        throw std::invalid_argument("avgpool: window larger than input");
    TensorT<T> out(out_h, out_w, input.channels);
    const T norm = T(1) / static_cast<T>(k * k);
    for (int oi = 0; oi < out_h; ++oi)
        for (int oj = 0; oj < out_w; ++oj)
            for (int c = 0; c < input.channels; ++c) {
                T sum = T(0);
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx)
                        sum += input.at(oi * s + ky, oj * s + kx, c);
                out.at(oi, oj, c) = sum * norm;
            }
    return out;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& input) {
    TensorT<T> out = input;
    for (T& v : out.data) v = std::max(v, T(0));
    return out;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& cached_input, const TensorT<T>& upstream) {
    if (!cached_input.same_shape(upstream))
        throw std::invalid_argument("relu_backward: shape mismatch");
    TensorT<T> g = upstream;
    for (std::size_t i = 0; i < g.data.size(); ++i)
        if (cached_input.data[i] <= T(0)) g.data[i] = T(0);
    return g;
}

/// Per-position softmax over channels, stabilized by max subtraction.
template <typename T>
TensorT<T> channel_softmax(const TensorT<T>& input) {
    if (input.channels < 2)
        throw std::invalid_argument("channel_softmax: needs >= 2 channels");
    TensorT<T> out(input.height, input.width, input.channels);
    const int cn = input.channels;
    for (std::size_t px = 0; px < input.size(); px += cn) {
        T m = input.data[px];
        for (int c = 1; c < cn; ++c) m = std::max(m, input.data[px + c]);
        double sum = 0.0;
        for (int c = 0; c < cn; ++c) {
            const double e = std::exp(static_cast<double>(input.data[px + c] - m));
            out.data[px + c] = static_cast<T>(e);
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (int c = 0; c < cn; ++c)
            out.data[px + c] = static_cast<T>(static_cast<double>(out.data[px + c]) * inv);
    }
    return out;
}

template <typename T>
struct LossResultT {
    double loss = 0.0;
    TensorT<T> gradient; // same shape as the prediction
};

using LossResult = LossResultT<float>;

inline constexpr double kProbClampEps = 1e-7;

/// Pixel-wise cross-entropy of a 2-channel probability map against a binary
/// target. Probabilities are clamped at 1e-7 before the log. The returned
/// gradient is taken with respect to the pre-softmax logits (softmax minus
/// one-hot per pixel), so the softmax head and the loss backpropagate as one
/// fused step.
template <typename T>
LossResultT<T> pixel_cross_entropy(const TensorT<T>& pred, const ActionnessMap& target) {
    if (pred.channels != 2)
        throw std::invalid_argument("pixel_cross_entropy: prediction must have 2 channels");
    if (pred.height != target.height || pred.width != target.width)
        throw std::invalid_argument("pixel_cross_entropy: prediction " + pred.shape_str() +
                                    " vs target " + std::to_string(target.height) + "x" +
                                    std::to_string(target.width));

    LossResultT<T> r;
    r.gradient = TensorT<T>(pred.height, pred.width, 2);
    double loss = 0.0;
    for (int i = 0; i < pred.height; ++i) {
        for (int j = 0; j < pred.width; ++j) {
            const float t = target.at(i, j);
            if (t != 0.0f && t != 1.0f)
                throw std::invalid_argument("pixel_cross_entropy: non-binary target value");
            const int cls = t == 1.0f ? 1 : 0;
            const double p = std::clamp(static_cast<double>(pred.at(i, j, cls)),
                                        kProbClampEps, 1.0 - kProbClampEps);
            loss -= std::log(p);
            r.gradient.at(i, j, 0) = pred.at(i, j, 0) - (cls == 0 ? T(1) : T(0));
            r.gradient.at(i, j, 1) = pred.at(i, j, 1) - (cls == 1 ? T(1) : T(0));
        }
    }
    r.loss = loss;
    return r;
}

/// Multiclass variant used by the proposal classifier: the label picks one
/// channel, loss sums -log p(label) over all spatial positions, and the
/// gradient is again softmax-minus-onehot at the logits.
template <typename T>
LossResultT<T> class_cross_entropy(const TensorT<T>& pred, int label) {
    if (label < 0 || label >= pred.channels)
        throw std::invalid_argument("class_cross_entropy: label out of range");
    LossResultT<T> r;
    r.gradient = pred;
    double loss = 0.0;
    for (int i = 0; i < pred.height; ++i)
        for (int j = 0; j < pred.width; ++j) {
            const double p = std::clamp(static_cast<double>(pred.at(i, j, label)),
                                        kProbClampEps, 1.0 - kProbClampEps);
            loss -= std::log(p);
            r.gradient.at(i, j, label) -= T(1);
        }
    r.loss = loss;
    return r;
}

template <typename T>
struct SgdStateT {
    std::vector<T> params;
    std::vector<T> velocity;
};

/// One SGD-with-momentum step: v <- momentum*v - lr*g; w <- w + v.
template <typename T>
SgdStateT<T> sgd_momentum_step(const std::vector<T>& params, const std::vector<T>& grads,
                               const std::vector<T>& velocity, double learning_rate,
                               double momentum) {
    if (params.size() != grads.size() || params.size() != velocity.size())
        throw std::invalid_argument("sgd_momentum_step: size mismatch");
    if (!(learning_rate > 0.0))
        throw std::invalid_argument("sgd_momentum_step: learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw std::invalid_argument("sgd_momentum_step: momentum must be in [0,1)");
    SgdStateT<T> out;
    out.params.resize(params.size());
    out.velocity.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const T v = static_cast<T>(momentum * velocity[i] - learning_rate * grads[i]);
        out.velocity[i] = v;
        out.params[i] = params[i] + v;
    }
    return out;
}

} // namespace act
