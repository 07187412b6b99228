#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "act/flow.hpp"
#include "act/geometry.hpp"
#include "act/rng.hpp"
#include "act/tensor.hpp"

namespace act {

/// Knobs for the synthetic scene generators. Classes are distinguished by
/// motion pattern only (0 = horizontal movers, 1 = vertical movers), so the
/// appearance stream cannot shortcut the motion stream's job.
struct SceneConfig {
    int image_height = 64;
    int image_width = 64;
    int frame_count = 8;
    int actor_count = 1;
    int min_actor_size = 16;
    int max_actor_size = 28;
    int motion_class = 0;
    int speed = 2;               // pixels/frame, integer so flow is exact
    float background_level = 0.35f;
};

struct ActorState {
    Box box;
    int vx = 0, vy = 0;
};

struct SyntheticVideo {
    std::vector<Tensor> frames;            // frame_count RGB frames
    std::vector<FlowField> flows;          // frame_count-1 exact fields
    std::vector<std::vector<Box>> gt;      // per-frame actor boxes
    int class_label = 0;
};

namespace detail {

struct ActorLook {
    float base[3];
    float checker_scale;
};

inline ActorLook sample_actor_look(Rng& rng) {
    ActorLook look;
    for (float& c : look.base) c = static_cast<float>(rng.uniform(0.65, 1.0));
    look.checker_scale = static_cast<float>(rng.uniform(0.75, 0.9));
    return look;
}

// Rigid texture anchored to the actor's own origin, so integer translation
// moves the pattern bitwise.
inline void paint_actor(Tensor& img, const Box& b, const ActorLook& look) {
    for (int i = b.y1; i < b.y2; ++i)
        for (int j = b.x1; j < b.x2; ++j) {
            const int ri = i - b.y1, rj = j - b.x1;
            const float mod = ((ri / 3 + rj / 3) % 2 == 0) ? 1.0f : look.checker_scale;
            for (int c = 0; c < 3; ++c) img.at(i, j, c) = look.base[c] * mod;
        }
}

inline Tensor make_background(Rng& rng, const SceneConfig& cfg) {
    Tensor img(cfg.image_height, cfg.image_width, 3);
    for (float& v : img.data)
        v = static_cast<float>(rng.uniform(0.05, cfg.background_level));
    return img;
}

inline Box sample_actor_box(Rng& rng, const SceneConfig& cfg) {
    if (cfg.min_actor_size > cfg.image_height || cfg.min_actor_size > cfg.image_width)
        throw std::invalid_argument("synth: actor larger than image");
    const int max_h = std::min(cfg.max_actor_size, cfg.image_height);
    const int max_w = std::min(cfg.max_actor_size, cfg.image_width);
    const int h = cfg.min_actor_size +
                  static_cast<int>(rng.uniform_index(max_h - cfg.min_actor_size + 1));
    const int w = cfg.min_actor_size +
                  static_cast<int>(rng.uniform_index(max_w - cfg.min_actor_size + 1));
    const int y = static_cast<int>(rng.uniform_index(cfg.image_height - h + 1));
    const int x = static_cast<int>(rng.uniform_index(cfg.image_width - w + 1));
    return Box{x, y, x + w, y + h};
}

} // namespace detail

/// Textured background plus high-contrast actor rectangles with exact ground
/// truth. Pure function of (seed, config).
inline std::pair<Tensor, std::vector<Box>> gen_action_image(std::uint64_t seed,
                                                            const SceneConfig& cfg) {
    Rng rng(seed);
    Tensor img = detail::make_background(rng, cfg);
    std::vector<Box> gt;
    for (int a = 0; a < cfg.actor_count; ++a) {
        const Box b = detail::sample_actor_box(rng, cfg);
        detail::paint_actor(img, b, detail::sample_actor_look(rng));
        gt.push_back(b);
    }
    return {std::move(img), std::move(gt)};
}

/// Video variant: actors translate with integer velocities chosen by the
/// motion class, reflecting at the borders. The emitted flow is the true
/// displacement field inside each actor and zero elsewhere, so warping frame
/// t by it reproduces the actor pixels of frame t+1 exactly.
inline SyntheticVideo gen_action_video(std::uint64_t seed, const SceneConfig& cfg) {
    if (cfg.frame_count < 1) throw std::invalid_argument("synth: frame_count must be >= 1");
    Rng rng(seed);
    SyntheticVideo video;
    video.class_label = cfg.motion_class;

    const Tensor background = detail::make_background(rng, cfg);
    std::vector<detail::ActorLook> looks;
    std::vector<ActorState> actors;
    for (int a = 0; a < cfg.actor_count; ++a) {
        ActorState s;
        s.box = detail::sample_actor_box(rng, cfg);
        looks.push_back(detail::sample_actor_look(rng));
        const int sign = rng.uniform() < 0.5 ? -1 : 1;
        if (cfg.motion_class == 0) {
            s.vx = sign * cfg.speed;
        } else {
            s.vy = sign * cfg.speed;
        }
        actors.push_back(s);
    }

    for (int t = 0; t < cfg.frame_count; ++t) {
        Tensor frame = background;
        std::vector<Box> frame_gt;
        for (std::size_t a = 0; a < actors.size(); ++a) {
            detail::paint_actor(frame, actors[a].box, looks[a]);
            frame_gt.push_back(actors[a].box);
        }
        video.frames.push_back(std::move(frame));
        video.gt.push_back(std::move(frame_gt));

        if (t + 1 == cfg.frame_count) break;

        // Advance with reflection, then record the realized displacement.
        FlowField flow(cfg.image_height, cfg.image_width);
        std::vector<ActorState> next = actors;
        for (std::size_t a = 0; a < actors.size(); ++a) {
            ActorState& s = next[a];
            const int w = s.box.x2 - s.box.x1;
            const int h = s.box.y2 - s.box.y1;
            int nx = s.box.x1 + s.vx;
            if (nx < 0 || nx + w > cfg.image_width) {
                s.vx = -s.vx;
                nx = std::clamp(s.box.x1 + s.vx, 0, cfg.image_width - w);
            }
            int ny = s.box.y1 + s.vy;
            if (ny < 0 || ny + h > cfg.image_height) {
                s.vy = -s.vy;
                ny = std::clamp(s.box.y1 + s.vy, 0, cfg.image_height - h);
            }
            const int dx = nx - s.box.x1;
            const int dy = ny - s.box.y1;
            for (int i = actors[a].box.y1; i < actors[a].box.y2; ++i)
                for (int j = actors[a].box.x1; j < actors[a].box.x2; ++j) {
                    flow.u[flow.idx(i, j)] = static_cast<float>(dx);
                    flow.v[flow.idx(i, j)] = static_cast<float>(dy);
                }
            s.box = Box{nx, ny, nx + w, ny + h};
        }
        actors = std::move(next);
        video.flows.push_back(std::move(flow));
    }
    return video;
}

} // namespace act
