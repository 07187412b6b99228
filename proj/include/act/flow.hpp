#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "act/tensor.hpp"

namespace act {

/// Per-pixel displacement field in pixels/frame.
struct FlowField {
    int height = 0;
    int width = 0;
    std::vector<float> u, v;

    FlowField() = default;
    FlowField(int h, int w)
        : height(h), width(w), u(static_cast<std::size_t>(h) * w, 0.0f),
          v(static_cast<std::size_t>(h) * w, 0.0f) {
        if (h <= 0 || w <= 0) throw std::invalid_argument("FlowField dims must be positive");
    }

    std::size_t idx(int i, int j) const { return static_cast<std::size_t>(i) * width + j; }
};

/// Flow discretized to integers in [0,255], like the 8-bit flow images the
/// motion stream is trained from. `bound` is the symmetric clip range used by
/// the mapping.
struct QuantizedFlow {
    int height = 0;
    int width = 0;
    float bound = 20.0f;
    std::vector<std::uint8_t> u, v;
};

/// q = clamp(round(x / bound * 128 + 128), 0, 255); zero maps to 128 exactly.
inline QuantizedFlow quantize_flow(const FlowField& flow, float bound) {
    if (!(bound > 0.0f)) throw std::invalid_argument("quantize_flow: bound must be positive");
    QuantizedFlow q;
    q.height = flow.height;
    q.width = flow.width;
    q.bound = bound;
    q.u.resize(flow.u.size());
    q.v.resize(flow.v.size());
    auto map = [bound](float x) {
        const long r = std::lround(static_cast<double>(x) / bound * 128.0 + 128.0);
        return static_cast<std::uint8_t>(std::clamp(r, 0L, 255L));
    };
    for (std::size_t i = 0; i < flow.u.size(); ++i) {
        q.u[i] = map(flow.u[i]);
        q.v[i] = map(flow.v[i]);
    }
    return q;
}

inline FlowField dequantize_flow(const QuantizedFlow& q) {
    FlowField f(q.height, q.width);
    for (std::size_t i = 0; i < q.u.size(); ++i) {
        f.u[i] = (static_cast<float>(q.u[i]) - 128.0f) / 128.0f * q.bound;
        f.v[i] = (static_cast<float>(q.v[i]) - 128.0f) / 128.0f * q.bound;
    }
    return f;
}

/// Motion-stream input: the flow fields of two consecutive frames, stacked as
/// channels (u_t, v_t, u_{t+1}, v_{t+1}) and normalized to [0,1].
inline Tensor stack_flow_pair(const QuantizedFlow& flow_t, const QuantizedFlow& flow_t1) {
    if (flow_t.height != flow_t1.height || flow_t.width != flow_t1.width)
        throw std::invalid_argument("stack_flow_pair: dimension mismatch");
    Tensor out(flow_t.height, flow_t.width, 4);
    const float inv = 1.0f / 255.0f;
    for (int i = 0; i < out.height; ++i)
        for (int j = 0; j < out.width; ++j) {
            const std::size_t p = static_cast<std::size_t>(i) * out.width + j;
            out.at(i, j, 0) = flow_t.u[p] * inv;
            out.at(i, j, 1) = flow_t.v[p] * inv;
            out.at(i, j, 2) = flow_t1.u[p] * inv;
            out.at(i, j, 3) = flow_t1.v[p] * inv;
        }
    return out;
}

namespace detail {

inline float at_clamped(const std::vector<float>& img, int h, int w, int i, int j) {
    i = std::clamp(i, 0, h - 1);
    j = std::clamp(j, 0, w - 1);
    return img[static_cast<std::size_t>(i) * w + j];
}

// Weighted 8-neighbour average, the classic relaxation stencil.
inline float neighbour_avg(const std::vector<float>& f, int h, int w, int i, int j) {
    const float c1 = 1.0f / 6.0f, c2 = 1.0f / 12.0f;
    return c1 * (at_clamped(f, h, w, i - 1, j) + at_clamped(f, h, w, i + 1, j) +
                 at_clamped(f, h, w, i, j - 1) + at_clamped(f, h, w, i, j + 1)) +
           c2 * (at_clamped(f, h, w, i - 1, j - 1) + at_clamped(f, h, w, i - 1, j + 1) +
                 at_clamped(f, h, w, i + 1, j - 1) + at_clamped(f, h, w, i + 1, j + 1));
}

} // namespace detail

/// Brightness-constancy + smoothness energy of a flow field; decreases as the
/// fixed-point iteration of estimate_flow_simple converges.
inline double flow_energy(const Tensor& frame_a, const Tensor& frame_b, const FlowField& flow,
                          double smoothness) {
    const int h = frame_a.height, w = frame_a.width;
    std::vector<float> ix(flow.u.size()), iy(flow.u.size()), it(flow.u.size());
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const std::size_t p = static_cast<std::size_t>(i) * w + j;
            auto mid = [&](int y, int x) {
                y = std::clamp(y, 0, h - 1);
                x = std::clamp(x, 0, w - 1);
                return 0.5f * (frame_a.at(y, x, 0) + frame_b.at(y, x, 0));
            };
            ix[p] = 0.5f * (mid(i, j + 1) - mid(i, j - 1));
            iy[p] = 0.5f * (mid(i + 1, j) - mid(i - 1, j));
            it[p] = frame_b.at(i, j, 0) - frame_a.at(i, j, 0);
        }
    double e = 0.0;
    const double a2 = smoothness * smoothness;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const std::size_t p = static_cast<std::size_t>(i) * w + j;
            const double r = ix[p] * flow.u[p] + iy[p] * flow.v[p] + it[p];
            e += r * r;
            const double ux = detail::at_clamped(flow.u, h, w, i, j + 1) - flow.u[p];
            const double uy = detail::at_clamped(flow.u, h, w, i + 1, j) - flow.u[p];
            const double vx = detail::at_clamped(flow.v, h, w, i, j + 1) - flow.v[p];
            const double vy = detail::at_clamped(flow.v, h, w, i + 1, j) - flow.v[p];
            e += a2 * (ux * ux + uy * uy + vx * vx + vy * vy);
        }
    return e;
}

/// Horn-Schunck style estimator: fixed-point iteration on the Euler-Lagrange
/// equations of brightness constancy plus quadratic smoothness. Deterministic;
/// intended for self-contained demos, not as a competitive flow method.
/// Externally computed flow comes in through read_flow_file instead.
inline FlowField estimate_flow_simple(const Tensor& frame_a, const Tensor& frame_b,
                                      int iterations, double smoothness) {
    if (frame_a.channels != 1 || frame_b.channels != 1)
        throw std::invalid_argument("estimate_flow_simple: frames must be grayscale");
    if (frame_a.height != frame_b.height || frame_a.width != frame_b.width)
        throw std::invalid_argument("estimate_flow_simple: dimension mismatch");
    if (iterations < 1) throw std::invalid_argument("estimate_flow_simple: iterations >= 1");
    if (!(smoothness > 0.0))
        throw std::invalid_argument("estimate_flow_simple: smoothness must be positive");

    const int h = frame_a.height, w = frame_a.width;
    const std::size_t n = static_cast<std::size_t>(h) * w;
    std::vector<float> ix(n), iy(n), it(n);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const std::size_t p = static_cast<std::size_t>(i) * w + j;
            auto mid = [&](int y, int x) {
                y = std::clamp(y, 0, h - 1);
                x = std::clamp(x, 0, w - 1);
                return 0.5f * (frame_a.at(y, x, 0) + frame_b.at(y, x, 0));
            };
            ix[p] = 0.5f * (mid(i, j + 1) - mid(i, j - 1));
            iy[p] = 0.5f * (mid(i + 1, j) - mid(i - 1, j));
            it[p] = frame_b.at(i, j, 0) - frame_a.at(i, j, 0);
        }

    FlowField flow(h, w);
    std::vector<float> nu(n), nv(n);
    const float a2 = static_cast<float>(smoothness * smoothness);
    for (int iter = 0; iter < iterations; ++iter) {
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                const std::size_t p = static_cast<std::size_t>(i) * w + j;
                const float ubar = detail::neighbour_avg(flow.u, h, w, i, j);
                const float vbar = detail::neighbour_avg(flow.v, h, w, i, j);
                const float t =
                    (ix[p] * ubar + iy[p] * vbar + it[p]) / (a2 + ix[p] * ix[p] + iy[p] * iy[p]);
                nu[p] = ubar - ix[p] * t;
                nv[p] = vbar - iy[p] * t;
            }
        flow.u.swap(nu);
        flow.v.swap(nv);
    }
    return flow;
}

inline constexpr float kFlowMagic = 202021.25f;

/// Middlebury-style binary layout: magic float, int32 width, int32 height,
/// then width*height interleaved (u, v) float32, row-major, little-endian.
inline void write_flow_file(const std::string& path, const FlowField& flow) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_flow_file: cannot open " + path);
    const std::int32_t w = flow.width, h = flow.height;
    out.write(reinterpret_cast<const char*>(&kFlowMagic), 4);
    out.write(reinterpret_cast<const char*>(&w), 4);
    out.write(reinterpret_cast<const char*>(&h), 4);
    for (std::size_t p = 0; p < flow.u.size(); ++p) {
        out.write(reinterpret_cast<const char*>(&flow.u[p]), 4);
        out.write(reinterpret_cast<const char*>(&flow.v[p]), 4);
    }
    if (!out) throw std::runtime_error("write_flow_file: write failed for " + path);
}

inline FlowField read_flow_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_flow_file: cannot open " + path);
    float magic = 0.0f;
    std::int32_t w = 0, h = 0;
    in.read(reinterpret_cast<char*>(&magic), 4);
    in.read(reinterpret_cast<char*>(&w), 4);
    in.read(reinterpret_cast<char*>(&h), 4);
    if (!in || magic != kFlowMagic)
        throw std::runtime_error("read_flow_file: bad magic in " + path);
    if (w <= 0 || h <= 0) throw std::runtime_error("read_flow_file: bad dimensions in " + path);
    FlowField flow(h, w);
    for (std::size_t p = 0; p < flow.u.size(); ++p) {
        in.read(reinterpret_cast<char*>(&flow.u[p]), 4);
        in.read(reinterpret_cast<char*>(&flow.v[p]), 4);
    }
    if (!in) throw std::runtime_error("read_flow_file: truncated file " + path);
    return flow;
}

} // namespace act
