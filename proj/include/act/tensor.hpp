#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace act {

/// Raised when an operation produces NaN/Inf; the CLI maps it to its own
/// exit code, distinct from data/format errors.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense rank-3 array in row-major (row, column, channel) order. This is the
/// universal carrier for images, stacked flow fields, and feature maps.
///
/// Forward/training arithmetic runs on TensorT<float>; the gradient-check
/// harness instantiates TensorT<double> so finite differences stay tight.
template <typename T>
struct TensorT {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<T> data;

    TensorT() = default;

    TensorT(int h, int w, int c, T fill = T(0))
        : height(h), width(w), channels(c), data(checked_size(h, w, c), fill) {}

    static std::size_t checked_size(int h, int w, int c) {
        if (h <= 0 || w <= 0 || c <= 0)
            throw std::invalid_argument("Tensor dims must be positive");
        return static_cast<std::size_t>(h) * w * c;
    }

    std::size_t size() const { return data.size(); }

    T& at(int i, int j, int c) {
        return data[(static_cast<std::size_t>(i) * width + j) * channels + c];
    }
    const T& at(int i, int j, int c) const {
        return data[(static_cast<std::size_t>(i) * width + j) * channels + c];
    }

    bool same_shape(const TensorT& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    std::string shape_str() const {
        return std::to_string(height) + "x" + std::to_string(width) + "x" +
               std::to_string(channels);
    }
};

using Tensor = TensorT<float>;

namespace detail {

// Corner-aligned source coordinate for one resized axis. For a single output
// sample the corners coincide, so the midpoint of the source axis is used.
inline double resize_coord(int dst_index, int dst_size, int src_size) {
    if (dst_size == 1) return 0.5 * (src_size - 1);
    return static_cast<double>(dst_index) * (src_size - 1) / (dst_size - 1);
}

} // namespace detail

/// Bilinear resize with corner-aligned sampling. Resizing to the identical
/// size reproduces the input bitwise; constant inputs stay constant.
template <typename T>
TensorT<T> bilinear_resize(const TensorT<T>& in, int new_height, int new_width) {
    if (new_height <= 0 || new_width <= 0)
        throw std::invalid_argument("bilinear_resize: target dims must be positive");
    if (new_height == in.height && new_width == in.width) return in;

    TensorT<T> out(new_height, new_width, in.channels);
    for (int i = 0; i < new_height; ++i) {
        const double sy = detail::resize_coord(i, new_height, in.height);
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, in.height - 1);
        const double fy = sy - y0;
        for (int j = 0; j < new_width; ++j) {
            const double sx = detail::resize_coord(j, new_width, in.width);
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, in.width - 1);
            const double fx = sx - x0;
            for (int c = 0; c < in.channels; ++c) {
                const double top = (1.0 - fx) * in.at(y0, x0, c) + fx * in.at(y0, x1, c);
                const double bot = (1.0 - fx) * in.at(y1, x0, c) + fx * in.at(y1, x1, c);
                out.at(i, j, c) = static_cast<T>((1.0 - fy) * top + fy * bot);
            }
        }
    }
    return out;
}

/// Nearest-neighbor resize (pixel-center convention). Used to downsample
/// binary supervision masks: it preserves binarity where bilinear would not.
template <typename T>
TensorT<T> nearest_resize(const TensorT<T>& in, int new_height, int new_width) {
    if (new_height <= 0 || new_width <= 0)
        throw std::invalid_argument("nearest_resize: target dims must be positive");
    TensorT<T> out(new_height, new_width, in.channels);
    for (int i = 0; i < new_height; ++i) {
        int si = static_cast<int>((i + 0.5) * in.height / new_height);
        si = std::min(si, in.height - 1);
        for (int j = 0; j < new_width; ++j) {
            int sj = static_cast<int>((j + 0.5) * in.width / new_width);
            sj = std::min(sj, in.width - 1);
            for (int c = 0; c < in.channels; ++c) out.at(i, j, c) = in.at(si, sj, c);
        }
    }
    return out;
}

/// Single-channel luma view of a 1- or 3-channel tensor.
template <typename T>
TensorT<T> to_grayscale(const TensorT<T>& in) {
    if (in.channels == 1) return in;
    if (in.channels != 3)
        throw std::invalid_argument("to_grayscale: expected 1 or 3 channels, got " +
                                    std::to_string(in.channels));
    TensorT<T> out(in.height, in.width, 1);
    for (int i = 0; i < in.height; ++i)
        for (int j = 0; j < in.width; ++j)
            out.at(i, j, 0) = static_cast<T>(0.299 * in.at(i, j, 0) +
                                             0.587 * in.at(i, j, 1) +
                                             0.114 * in.at(i, j, 2));
    return out;
}

template <typename T>
void require_finite(const TensorT<T>& t, const char* what) {
    if (!t.all_finite())
        throw NumericalError(std::string("non-finite values in ") + what);
}

} // namespace act
