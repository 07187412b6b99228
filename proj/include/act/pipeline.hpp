#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "act/detector.hpp"
#include "act/eval.hpp"
#include "act/flow.hpp"
#include "act/io.hpp"
#include "act/network.hpp"
#include "act/proposals.hpp"
#include "act/render.hpp"
#include "act/synth.hpp"

namespace act::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct PipelineConfig {
    std::uint64_t seed = 7;
    std::string data_dir = "out/data";
    std::string weights_dir = "out/weights";
    std::string results_dir = "out/results";

    // Network spec files; empty string means the built-in toy spec.
    std::string afcn_spec_path;
    std::string mfcn_spec_path;
    std::string spatial_classifier_spec_path;
    std::string temporal_classifier_spec_path;

    int train_scene_count = 20;
    int test_scene_count = 10;
    int class_count = 2;
    SceneConfig scene;

    TrainSchedule fcn_schedule;
    int frames_per_scene = 2; // training frames sampled per scene
    int worker_threads = 1;

    int classifier_iterations = 1200;
    int classifier_batch = 8;
    double classifier_lr = 0.01;
    double classifier_momentum = 0.9;
    int crop_size = 32;
    int classifier_proposals_per_frame = 12;
    int max_negatives_per_frame = 5;

    int proposals_per_frame = 5;
    double suppress_iou = 0.7;
    // Binarize maps at this confidence before proposal scoring; mean scores
    // then plateau over the detected region and the NMS tie-break recovers
    // region-sized boxes instead of single peak cells. 0 disables.
    double proposal_map_threshold = 0.5;
    float flow_bound = 2.0f;
    bool multiscale = false;
    std::vector<double> scales = default_pyramid_scales();

    double detect_nms_iou = 0.4;
    LinkConfig link;
    int max_tubes_per_class = 1;
    double min_tube_score = 0.0;

    GridProtocolConfig grid;
    double eval_iou = 0.5;

    PipelineConfig() {
        fcn_schedule.batch_size = 8;
        fcn_schedule.total_iterations = 300;
        fcn_schedule.lr_milestones = {{0, 2e-4}, {250, 4e-5}};
        fcn_schedule.frozen_layer_count = 0;
        fcn_schedule.reduced_lr_multiplier = 1.0;
        fcn_schedule.input_height = 64;
        fcn_schedule.input_width = 64;
        fcn_schedule.target_height = 16;
        fcn_schedule.target_width = 16;
    }
};

inline json config_to_json(const PipelineConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["data_dir"] = c.data_dir;
    j["weights_dir"] = c.weights_dir;
    j["results_dir"] = c.results_dir;
    j["afcn_spec"] = c.afcn_spec_path;
    j["mfcn_spec"] = c.mfcn_spec_path;
    j["spatial_classifier_spec"] = c.spatial_classifier_spec_path;
    j["temporal_classifier_spec"] = c.temporal_classifier_spec_path;
    j["synth"] = {{"train_scenes", c.train_scene_count},
                  {"test_scenes", c.test_scene_count},
                  {"classes", c.class_count},
                  {"height", c.scene.image_height},
                  {"width", c.scene.image_width},
                  {"frames", c.scene.frame_count},
                  {"actors", c.scene.actor_count},
                  {"min_actor", c.scene.min_actor_size},
                  {"max_actor", c.scene.max_actor_size},
                  {"speed", c.scene.speed}};
    json milestones = json::array();
    for (const auto& [it, rate] : c.fcn_schedule.lr_milestones)
        milestones.push_back({it, rate});
    j["train"] = {{"batch_size", c.fcn_schedule.batch_size},
                  {"momentum", c.fcn_schedule.momentum},
                  {"milestones", milestones},
                  {"iterations", c.fcn_schedule.total_iterations},
                  {"frozen_layers", c.fcn_schedule.frozen_layer_count},
                  {"reduced_lr_multiplier", c.fcn_schedule.reduced_lr_multiplier},
                  {"input_height", c.fcn_schedule.input_height},
                  {"input_width", c.fcn_schedule.input_width},
                  {"target_height", c.fcn_schedule.target_height},
                  {"target_width", c.fcn_schedule.target_width},
                  {"frames_per_scene", c.frames_per_scene},
                  {"worker_threads", c.worker_threads}};
    j["classifier"] = {{"iterations", c.classifier_iterations},
                       {"batch_size", c.classifier_batch},
                       {"learning_rate", c.classifier_lr},
                       {"momentum", c.classifier_momentum},
                       {"crop_size", c.crop_size},
                       {"proposals_per_frame", c.classifier_proposals_per_frame},
                       {"max_negatives_per_frame", c.max_negatives_per_frame}};
    j["proposals"] = {{"per_frame", c.proposals_per_frame},
                      {"suppress_iou", c.suppress_iou},
                      {"map_threshold", c.proposal_map_threshold}};
    j["flow_bound"] = c.flow_bound;
    j["multiscale"] = c.multiscale;
    j["scales"] = c.scales;
    j["detect"] = {{"nms_iou", c.detect_nms_iou}};
    j["link"] = {{"lambda", c.link.lambda},
                 {"score_mode",
                  c.link.score_mode == LinkConfig::ScoreMode::Mean ? "mean" : "sum"},
                 {"max_tubes", c.max_tubes_per_class},
                 {"min_score", c.min_tube_score}};
    j["eval"] = {{"grid_criterion", c.grid.criterion == GridProtocolConfig::Criterion::Coverage
                                        ? "coverage"
                                        : "literal-iou"},
                 {"grid_threshold", c.grid.positive_threshold},
                 {"temporal_bins", c.grid.temporal_bins},
                 {"iou", c.eval_iou}};
    return j;
}

inline PipelineConfig config_from_json(const json& j) {
    PipelineConfig c;
    c.seed = j.value("seed", c.seed);
    c.data_dir = j.value("data_dir", c.data_dir);
    c.weights_dir = j.value("weights_dir", c.weights_dir);
    c.results_dir = j.value("results_dir", c.results_dir);
    c.afcn_spec_path = j.value("afcn_spec", c.afcn_spec_path);
    c.mfcn_spec_path = j.value("mfcn_spec", c.mfcn_spec_path);
    c.spatial_classifier_spec_path =
        j.value("spatial_classifier_spec", c.spatial_classifier_spec_path);
    c.temporal_classifier_spec_path =
        j.value("temporal_classifier_spec", c.temporal_classifier_spec_path);
    if (j.contains("synth")) {
        const json& s = j["synth"];
        c.train_scene_count = s.value("train_scenes", c.train_scene_count);
        c.test_scene_count = s.value("test_scenes", c.test_scene_count);
        c.class_count = s.value("classes", c.class_count);
        c.scene.image_height = s.value("height", c.scene.image_height);
        c.scene.image_width = s.value("width", c.scene.image_width);
        c.scene.frame_count = s.value("frames", c.scene.frame_count);
        c.scene.actor_count = s.value("actors", c.scene.actor_count);
        c.scene.min_actor_size = s.value("min_actor", c.scene.min_actor_size);
        c.scene.max_actor_size = s.value("max_actor", c.scene.max_actor_size);
        c.scene.speed = s.value("speed", c.scene.speed);
    }
    if (j.contains("train")) {
        const json& t = j["train"];
        c.fcn_schedule.batch_size = t.value("batch_size", c.fcn_schedule.batch_size);
        c.fcn_schedule.momentum = t.value("momentum", c.fcn_schedule.momentum);
        if (t.contains("milestones")) {
            c.fcn_schedule.lr_milestones.clear();
            for (const auto& m : t["milestones"])
                c.fcn_schedule.lr_milestones.emplace_back(m.at(0).get<int>(),
                                                          m.at(1).get<double>());
        }
        c.fcn_schedule.total_iterations = t.value("iterations", c.fcn_schedule.total_iterations);
        c.fcn_schedule.frozen_layer_count =
            t.value("frozen_layers", c.fcn_schedule.frozen_layer_count);
        c.fcn_schedule.reduced_lr_multiplier =
            t.value("reduced_lr_multiplier", c.fcn_schedule.reduced_lr_multiplier);
        c.fcn_schedule.input_height = t.value("input_height", c.fcn_schedule.input_height);
        c.fcn_schedule.input_width = t.value("input_width", c.fcn_schedule.input_width);
        c.fcn_schedule.target_height = t.value("target_height", c.fcn_schedule.target_height);
        c.fcn_schedule.target_width = t.value("target_width", c.fcn_schedule.target_width);
        c.frames_per_scene = t.value("frames_per_scene", c.frames_per_scene);
        c.worker_threads = t.value("worker_threads", c.worker_threads);
    }
    if (j.contains("classifier")) {
        const json& cl = j["classifier"];
        c.classifier_iterations = cl.value("iterations", c.classifier_iterations);
        c.classifier_batch = cl.value("batch_size", c.classifier_batch);
        c.classifier_lr = cl.value("learning_rate", c.classifier_lr);
        c.classifier_momentum = cl.value("momentum", c.classifier_momentum);
        c.crop_size = cl.value("crop_size", c.crop_size);
        c.classifier_proposals_per_frame =
            cl.value("proposals_per_frame", c.classifier_proposals_per_frame);
        c.max_negatives_per_frame =
            cl.value("max_negatives_per_frame", c.max_negatives_per_frame);
    }
    if (j.contains("proposals")) {
        c.proposals_per_frame = j["proposals"].value("per_frame", c.proposals_per_frame);
        c.suppress_iou = j["proposals"].value("suppress_iou", c.suppress_iou);
        c.proposal_map_threshold =
            j["proposals"].value("map_threshold", c.proposal_map_threshold);
    }
    c.flow_bound = j.value("flow_bound", c.flow_bound);
    c.multiscale = j.value("multiscale", c.multiscale);
    if (j.contains("scales")) c.scales = j["scales"].get<std::vector<double>>();
    if (j.contains("detect")) c.detect_nms_iou = j["detect"].value("nms_iou", c.detect_nms_iou);
    if (j.contains("link")) {
        const json& l = j["link"];
        c.link.lambda = l.value("lambda", c.link.lambda);
        c.link.score_mode = l.value("score_mode", std::string("mean")) == "sum"
                                ? LinkConfig::ScoreMode::Sum
                                : LinkConfig::ScoreMode::Mean;
        c.max_tubes_per_class = l.value("max_tubes", c.max_tubes_per_class);
        c.min_tube_score = l.value("min_score", c.min_tube_score);
    }
    if (j.contains("eval")) {
        const json& e = j["eval"];
        c.grid.criterion = e.value("grid_criterion", std::string("coverage")) == "literal-iou"
                               ? GridProtocolConfig::Criterion::LiteralIoU
                               : GridProtocolConfig::Criterion::Coverage;
        c.grid.positive_threshold = e.value("grid_threshold", c.grid.positive_threshold);
        c.grid.temporal_bins = e.value("temporal_bins", c.grid.temporal_bins);
        c.eval_iou = e.value("iou", c.eval_iou);
    }
    return c;
}

/// Hash of the semantic configuration: output locations are excluded and
/// network spec files enter by content, so identically parameterized runs
/// into different directories stamp identical hashes into their artifacts.
inline std::uint64_t config_hash(const PipelineConfig& c) {
    json j = config_to_json(c);
    j.erase("data_dir");
    j.erase("weights_dir");
    j.erase("results_dir");
    for (const char* key :
         {"afcn_spec", "mfcn_spec", "spatial_classifier_spec", "temporal_classifier_spec"}) {
        const std::string path = j[key].get<std::string>();
        j[key] = path.empty() || !file_exists(path)
                     ? 0ULL
                     : fnv1a_hash(read_file_text(path));
    }
    return fnv1a_hash(j.dump());
}

/// Loads a JSON pipeline config and checks that every referenced spec file
/// exists. Reports the offending path in the error.
inline PipelineConfig load_config(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file_text(path));
    } catch (const json::exception& e) {
        throw std::runtime_error("config " + path + ": " + e.what());
    }
    PipelineConfig c = config_from_json(j);
    for (const std::string& p :
         {c.afcn_spec_path, c.mfcn_spec_path, c.spatial_classifier_spec_path,
          c.temporal_classifier_spec_path})
        if (!p.empty() && !file_exists(p))
            throw std::runtime_error("config " + path + ": referenced spec file missing: " + p);
    return c;
}

inline bool verbose() {
    const char* v = std::getenv("ACT_VERBOSE");
    return v != nullptr && v[0] != '\0' && v[0] != '0';
}

inline void progress(const std::string& msg) {
    if (verbose()) std::fprintf(stderr, "[act] %s\n", msg.c_str());
}

// ---------------------------------------------------------------------------
// Built-in toy network geometries (input 64x64 -> 16x16 map; crops 32x32).
// ---------------------------------------------------------------------------

inline NetworkSpec toy_actionness_spec(int in_channels) {
    NetworkSpec s;
    s.input_channels = in_channels;
    s.declared_output_stride = 4;
    auto conv = [](int k, int st, int p, int out) {
        LayerSpec l;
        l.kind = LayerKind::Conv;
        l.kernel_size = k;
        l.stride = st;
        l.padding = p;
        l.out_channels = out;
        return l;
    };
    s.layers = {conv(5, 2, 2, 16), {LayerKind::Relu}, conv(3, 2, 1, 32), {LayerKind::Relu},
                conv(3, 1, 1, 32), {LayerKind::Relu}, conv(1, 1, 0, 2),
                {LayerKind::SoftmaxHead}};
    s.validate();
    return s;
}

inline NetworkSpec toy_classifier_spec(int in_channels, int class_count) {
    NetworkSpec s;
    s.input_channels = in_channels;
    auto conv = [](int k, int st, int p, int out) {
        LayerSpec l;
        l.kind = LayerKind::Conv;
        l.kernel_size = k;
        l.stride = st;
        l.padding = p;
        l.out_channels = out;
        return l;
    };
    s.layers = {conv(3, 2, 1, 16), {LayerKind::Relu}, conv(3, 2, 1, 32), {LayerKind::Relu},
                conv(3, 2, 1, 32), {LayerKind::Relu}, conv(4, 1, 0, class_count + 1),
                {LayerKind::SoftmaxHead}};
    s.validate();
    return s;
}

inline NetworkSpec load_spec_or(const std::string& path, const NetworkSpec& fallback) {
    if (path.empty()) return fallback;
    return parse_network_spec(read_file_text(path));
}

inline NetworkSpec afcn_spec(const PipelineConfig& c) {
    return load_spec_or(c.afcn_spec_path, toy_actionness_spec(3));
}
inline NetworkSpec mfcn_spec(const PipelineConfig& c) {
    return load_spec_or(c.mfcn_spec_path, toy_actionness_spec(4));
}
inline NetworkSpec spatial_classifier_spec(const PipelineConfig& c) {
    return load_spec_or(c.spatial_classifier_spec_path, toy_classifier_spec(3, c.class_count));
}
inline NetworkSpec temporal_classifier_spec(const PipelineConfig& c) {
    return load_spec_or(c.temporal_classifier_spec_path, toy_classifier_spec(4, c.class_count));
}

// ---------------------------------------------------------------------------
// Scenes
// ---------------------------------------------------------------------------

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt, std::uint64_t i) {
    std::uint64_t x = seed ^ (salt * 0x9E3779B97F4A7C15ULL) ^ ((i + 1) * 0xBF58476D1CE4E5B9ULL);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

inline constexpr std::uint64_t kSaltTrain = 1, kSaltTest = 2, kSaltInit = 3, kSaltTune = 4,
                               kSaltCls = 5;

inline std::string scene_id(const std::string& split, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%04d", split.c_str(), index);
    return buf;
}

inline SyntheticVideo make_scene(const PipelineConfig& c, const std::string& split, int index) {
    SceneConfig sc = c.scene;
    sc.motion_class = index % c.class_count;
    const std::uint64_t salt = split == "train" ? kSaltTrain : kSaltTest;
    return gen_action_video(mix_seed(c.seed, salt, static_cast<std::uint64_t>(index)), sc);
}

inline std::vector<SyntheticVideo> make_scenes(const PipelineConfig& c,
                                               const std::string& split, int count) {
    std::vector<SyntheticVideo> scenes;
    scenes.reserve(count);
    for (int i = 0; i < count; ++i) scenes.push_back(make_scene(c, split, i));
    return scenes;
}

/// Motion-stream input for frame t: the quantized flow fields of t and t+1
/// (clamped at the last available pair), stacked to 4 channels.
inline Tensor motion_input(const SyntheticVideo& v, int t, float bound) {
    if (v.flows.empty())
        throw std::invalid_argument("motion_input: video has no flow (needs >= 2 frames)");
    const int last = static_cast<int>(v.flows.size()) - 1;
    const int a = std::clamp(t, 0, last);
    const int b = std::clamp(t + 1, 0, last);
    return stack_flow_pair(quantize_flow(v.flows[a], bound), quantize_flow(v.flows[b], bound));
}

inline std::vector<int> training_frame_indices(int frame_count, int per_scene) {
    std::vector<int> idx;
    const int n = std::max(1, std::min(per_scene, frame_count));
    for (int k = 0; k < n; ++k) idx.push_back(k * frame_count / n);
    return idx;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainedModels {
    Network afcn, mfcn, spatial_cls, temporal_cls;
};

inline std::vector<TrainSample> stream_samples(const PipelineConfig& c,
                                               const std::vector<SyntheticVideo>& scenes,
                                               bool motion) {
    std::vector<TrainSample> samples;
    for (const auto& v : scenes) {
        const int frames = static_cast<int>(v.frames.size());
        for (int t : training_frame_indices(frames, c.frames_per_scene)) {
            TrainSample s;
            s.input = motion ? motion_input(v, t, c.flow_bound) : v.frames[t];
            s.target = boxes_to_binary_map(v.gt[t], v.frames[t].height, v.frames[t].width);
            samples.push_back(std::move(s));
        }
    }
    return samples;
}

inline Network train_stream(const PipelineConfig& c, const std::vector<SyntheticVideo>& scenes,
                            const NetworkSpec& spec, bool motion) {
    const std::uint64_t which = motion ? 2 : 1;
    Network net = build_network(spec, mix_seed(c.seed, kSaltInit, which));
    auto samples = stream_samples(c, scenes, motion);
    progress(std::string("fine-tuning ") + (motion ? "M-FCN" : "A-FCN") + " on " +
             std::to_string(samples.size()) + " samples");
    auto result = fine_tune(net, samples, c.fcn_schedule, mix_seed(c.seed, kSaltTune, which),
                            c.worker_threads);
    return std::move(result.net);
}

enum class Stream { Appearance, Motion, Hybrid };

inline std::string stream_name(Stream s) {
    switch (s) {
    case Stream::Appearance: return "appearance";
    case Stream::Motion: return "motion";
    default: return "hybrid";
    }
}

inline Stream stream_from_name(const std::string& name) {
    if (name == "appearance") return Stream::Appearance;
    if (name == "motion") return Stream::Motion;
    if (name == "hybrid") return Stream::Hybrid;
    throw std::invalid_argument("unknown stream '" + name + "'");
}

/// Actionness map for one frame at image resolution.
inline ActionnessMap frame_map(const PipelineConfig& c, const Network& afcn,
                               const Network& mfcn, const SyntheticVideo& v, int t,
                               Stream stream) {
    const Tensor& frame = v.frames[t];
    auto run = [&](const Network& net, const Tensor& input) {
        ActionnessMap m = c.multiscale ? multiscale_estimate(net, input, c.scales)
                                       : forward_actionness(net, input);
        return m.height == frame.height && m.width == frame.width
                   ? m
                   : resize_map(m, frame.height, frame.width);
    };
    switch (stream) {
    case Stream::Appearance: return run(afcn, frame);
    case Stream::Motion: return run(mfcn, motion_input(v, t, c.flow_bound));
    default:
        return hybrid_fuse(run(afcn, frame), run(mfcn, motion_input(v, t, c.flow_bound)));
    }
}

inline std::vector<Box> proposal_boxes(const std::vector<Proposal>& props) {
    std::vector<Box> boxes;
    boxes.reserve(props.size());
    for (const auto& p : props) boxes.push_back(p.box);
    return boxes;
}

/// Proposal generation as configured: optionally binarizes the map first so
/// the plateau tie-break yields region-sized boxes on soft trained maps.
inline std::vector<Proposal> frame_proposals(const PipelineConfig& c, const ActionnessMap& map,
                                             int n, int image_height, int image_width) {
    if (c.proposal_map_threshold <= 0.0)
        return generate_proposals(map, n, c.suppress_iou, image_height, image_width);
    ActionnessMap binary(map.height, map.width);
    for (std::size_t i = 0; i < map.values.size(); ++i)
        binary.values[i] = map.values[i] > c.proposal_map_threshold ? 1.0f : 0.0f;
    return generate_proposals(binary, n, c.suppress_iou, image_height, image_width);
}

/// Builds balanced crop datasets for both classifier streams: ground-truth
/// crops as positives (replicated to roughly match the negatives), low-IoU
/// proposals as background.
inline std::pair<std::vector<CropSample>, std::vector<CropSample>>
classifier_samples(const PipelineConfig& c, const std::vector<SyntheticVideo>& scenes,
                   const Network& afcn, const Network& mfcn) {
    std::vector<CropSample> spatial_pos, temporal_pos, spatial_neg, temporal_neg;
    for (const auto& v : scenes) {
        const int frames = static_cast<int>(v.frames.size());
        for (int t : training_frame_indices(frames, c.frames_per_scene)) {
            const Tensor& frame = v.frames[t];
            const Tensor motion = motion_input(v, t, c.flow_bound);
            const ActionnessMap map = frame_map(c, afcn, mfcn, v, t, Stream::Hybrid);
            const auto props = frame_proposals(c, map, c.classifier_proposals_per_frame,
                                               frame.height, frame.width);
            const auto ex = select_training_examples(proposal_boxes(props), v.gt[t]);
            for (const Box& b : ex.positives) {
                spatial_pos.push_back(
                    {crop_and_resize(frame, b, c.crop_size, c.crop_size), v.class_label});
                temporal_pos.push_back(
                    {crop_and_resize(motion, b, c.crop_size, c.crop_size), v.class_label});
            }
            int kept = 0;
            for (const Box& b : ex.negatives) {
                if (kept++ >= c.max_negatives_per_frame) break;
                spatial_neg.push_back(
                    {crop_and_resize(frame, b, c.crop_size, c.crop_size), c.class_count});
                temporal_neg.push_back(
                    {crop_and_resize(motion, b, c.crop_size, c.crop_size), c.class_count});
            }
        }
    }
    if (spatial_pos.empty())
        throw std::runtime_error("classifier_samples: no positive examples");
    const std::size_t replicas =
        std::max<std::size_t>(1, spatial_neg.size() / spatial_pos.size());
    std::vector<CropSample> spatial, temporal;
    for (std::size_t r = 0; r < replicas; ++r) {
        spatial.insert(spatial.end(), spatial_pos.begin(), spatial_pos.end());
        temporal.insert(temporal.end(), temporal_pos.begin(), temporal_pos.end());
    }
    spatial.insert(spatial.end(), spatial_neg.begin(), spatial_neg.end());
    temporal.insert(temporal.end(), temporal_neg.begin(), temporal_neg.end());
    return {std::move(spatial), std::move(temporal)};
}

inline TrainedModels train_models(const PipelineConfig& c,
                                  const std::vector<SyntheticVideo>& scenes) {
    TrainedModels m{train_stream(c, scenes, afcn_spec(c), false),
                    train_stream(c, scenes, mfcn_spec(c), true),
                    build_network(spatial_classifier_spec(c), mix_seed(c.seed, kSaltInit, 3)),
                    build_network(temporal_classifier_spec(c), mix_seed(c.seed, kSaltInit, 4))};
    auto [spatial, temporal] = classifier_samples(c, scenes, m.afcn, m.mfcn);
    progress("training classifiers on " + std::to_string(spatial.size()) + " crops");
    m.spatial_cls = train_classifier(m.spatial_cls, spatial, c.classifier_iterations,
                                     c.classifier_batch, c.classifier_lr, c.classifier_momentum,
                                     mix_seed(c.seed, kSaltCls, 1), c.worker_threads)
                        .net;
    m.temporal_cls = train_classifier(m.temporal_cls, temporal, c.classifier_iterations,
                                      c.classifier_batch, c.classifier_lr,
                                      c.classifier_momentum, mix_seed(c.seed, kSaltCls, 2),
                                      c.worker_threads)
                         .net;
    return m;
}

// ---------------------------------------------------------------------------
// Detection and linking
// ---------------------------------------------------------------------------

/// Two-stream detection over the top proposals of one frame.
inline std::vector<Detection> detect_scene_frame(const PipelineConfig& c,
                                                 const TrainedModels& m,
                                                 const SyntheticVideo& v, int t,
                                                 const std::vector<Box>& boxes) {
    const Tensor& frame = v.frames[t];
    const Tensor motion = motion_input(v, t, c.flow_bound);
    std::vector<Tensor> spatial_crops, temporal_crops;
    for (const Box& b : boxes) {
        spatial_crops.push_back(crop_and_resize(frame, b, c.crop_size, c.crop_size));
        temporal_crops.push_back(crop_and_resize(motion, b, c.crop_size, c.crop_size));
    }
    const auto s_scores = classify_proposals(m.spatial_cls, spatial_crops);
    const auto t_scores = classify_proposals(m.temporal_cls, temporal_crops);
    std::vector<std::vector<float>> fused(boxes.size());
    for (std::size_t i = 0; i < boxes.size(); ++i)
        fused[i] = fuse_streams(s_scores[i], t_scores[i]);
    return detect_frame(boxes, fused, c.class_count, t, c.detect_nms_iou);
}

/// Per-class tubes for one video's per-frame detections. Classes missing a
/// candidate in any frame are skipped.
inline std::vector<Tube> link_scene(const PipelineConfig& c,
                                    const std::vector<std::vector<Detection>>& per_frame) {
    std::vector<Tube> tubes;
    for (int k = 0; k < c.class_count; ++k) {
        std::vector<std::vector<Detection>> lists(per_frame.size());
        bool complete = true;
        for (std::size_t t = 0; t < per_frame.size(); ++t) {
            for (const Detection& d : per_frame[t])
                if (d.class_label == k) lists[t].push_back(d);
            if (lists[t].empty()) complete = false;
        }
        if (!complete) continue;
        for (Tube& t : link_tubes(lists, c.link, c.max_tubes_per_class, c.min_tube_score))
            tubes.push_back(std::move(t));
    }
    return tubes;
}

inline std::vector<Tube> scene_gt_tubes(const SyntheticVideo& v) {
    std::vector<Tube> tubes;
    if (v.gt.empty()) return tubes;
    const std::size_t actors = v.gt[0].size();
    for (std::size_t a = 0; a < actors; ++a) {
        Tube t;
        t.class_label = v.class_label;
        t.start_frame = 0;
        t.tube_score = 1.0;
        for (const auto& frame_gt : v.gt) t.boxes.push_back(frame_gt[a]);
        tubes.push_back(std::move(t));
    }
    return tubes;
}

// ---------------------------------------------------------------------------
// File-based pipeline (the CLI surface)
// ---------------------------------------------------------------------------

inline std::string frame_file(const std::string& dir, const std::string& id, int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "/frame_%04d.ppm", t);
    return dir + "/" + id + buf;
}

inline std::string flow_file(const std::string& dir, const std::string& id, int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "/flow_%04d.flo", t);
    return dir + "/" + id + buf;
}

inline std::string map_file(const std::string& results_dir, const std::string& id,
                            const std::string& stream, int t) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "/maps/%s_%s_%04d.amap", id.c_str(), stream.c_str(), t);
    return results_dir + buf;
}

/// Writes both splits of the synthetic dataset: PPM frames, .flo flow fields,
/// and one annotations file.
inline void run_synth(const PipelineConfig& c) {
    fs::create_directories(c.data_dir);
    std::vector<VideoAnnotation> annotations;
    for (const std::string split : {"train", "test"}) {
        const int count = split == std::string("train") ? c.train_scene_count
                                                        : c.test_scene_count;
        for (int i = 0; i < count; ++i) {
            const SyntheticVideo v = make_scene(c, split, i);
            const std::string id = scene_id(split, i);
            fs::create_directories(fs::path(c.data_dir) / id);
            for (std::size_t t = 0; t < v.frames.size(); ++t)
                write_ppm(frame_file(c.data_dir, id, static_cast<int>(t)), v.frames[t]);
            for (std::size_t t = 0; t < v.flows.size(); ++t)
                write_flow_file(flow_file(c.data_dir, id, static_cast<int>(t)), v.flows[t]);
            VideoAnnotation ann;
            ann.id = id;
            ann.frames = static_cast<int>(v.frames.size());
            ann.height = c.scene.image_height;
            ann.width = c.scene.image_width;
            ann.class_label = v.class_label;
            ann.gt.resize(ann.frames);
            for (int t = 0; t < ann.frames; ++t)
                for (const Box& b : v.gt[t]) ann.gt[t].push_back({t, b, v.class_label});
            annotations.push_back(std::move(ann));
            progress("synthesized " + id);
        }
    }
    write_annotations(c.data_dir + "/annotations.txt", annotations, c.seed, config_hash(c));
}

inline std::vector<VideoAnnotation> split_annotations(const PipelineConfig& c,
                                                      const std::string& split) {
    std::vector<VideoAnnotation> out;
    for (auto& v : read_annotations(c.data_dir + "/annotations.txt"))
        if (v.id.rfind(split, 0) == 0) out.push_back(std::move(v));
    if (out.empty())
        throw std::runtime_error("no '" + split + "' videos in " + c.data_dir +
                                 "/annotations.txt");
    return out;
}

/// Loads a dataset split back from disk into the in-memory scene form.
inline std::vector<SyntheticVideo> load_scenes(const PipelineConfig& c,
                                               const std::string& split,
                                               std::vector<std::string>* ids = nullptr) {
    std::vector<SyntheticVideo> scenes;
    for (const VideoAnnotation& ann : split_annotations(c, split)) {
        SyntheticVideo v;
        v.class_label = ann.class_label;
        for (int t = 0; t < ann.frames; ++t) {
            v.frames.push_back(read_ppm(frame_file(c.data_dir, ann.id, t)));
            std::vector<Box> boxes;
            for (const LabeledBox& b : ann.gt[t]) boxes.push_back(b.box);
            v.gt.push_back(std::move(boxes));
        }
        for (int t = 0; t + 1 < ann.frames; ++t)
            v.flows.push_back(read_flow_file(flow_file(c.data_dir, ann.id, t)));
        scenes.push_back(std::move(v));
        if (ids) ids->push_back(ann.id);
    }
    return scenes;
}

inline void run_train(const PipelineConfig& c) {
    const auto scenes = load_scenes(c, "train");
    const TrainedModels m = train_models(c, scenes);
    fs::create_directories(c.weights_dir);
    save_network(c.weights_dir + "/afcn.awtc", m.afcn);
    save_network(c.weights_dir + "/mfcn.awtc", m.mfcn);
    save_network(c.weights_dir + "/cls_spatial.awtc", m.spatial_cls);
    save_network(c.weights_dir + "/cls_temporal.awtc", m.temporal_cls);
    progress("saved weights to " + c.weights_dir);
}

inline TrainedModels load_models(const PipelineConfig& c) {
    TrainedModels m{
        load_network(c.weights_dir + "/afcn.awtc", afcn_spec(c)),
        load_network(c.weights_dir + "/mfcn.awtc", mfcn_spec(c)),
        load_network(c.weights_dir + "/cls_spatial.awtc", spatial_classifier_spec(c)),
        load_network(c.weights_dir + "/cls_temporal.awtc", temporal_classifier_spec(c))};
    return m;
}

inline void run_estimate(const PipelineConfig& c, Stream stream, const std::string& split,
                         bool export_pgm = false) {
    std::vector<std::string> ids;
    const auto scenes = load_scenes(c, split, &ids);
    const TrainedModels m = load_models(c);
    fs::create_directories(fs::path(c.results_dir) / "maps");
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        for (std::size_t t = 0; t < scenes[s].frames.size(); ++t) {
            const ActionnessMap map =
                frame_map(c, m.afcn, m.mfcn, scenes[s], static_cast<int>(t), stream);
            if (!map.in_unit_range())
                throw NumericalError("estimate: map values escaped [0,1] for " + ids[s]);
            const std::string path =
                map_file(c.results_dir, ids[s], stream_name(stream), static_cast<int>(t));
            write_actionness_map(path, map);
            if (export_pgm) write_pgm(path.substr(0, path.size() - 5) + ".pgm", map);
        }
        progress("estimated " + ids[s]);
    }
}

inline void run_propose(const PipelineConfig& c, Stream stream, const std::string& split) {
    std::vector<ProposalRecord> records;
    for (const VideoAnnotation& ann : split_annotations(c, split)) {
        for (int t = 0; t < ann.frames; ++t) {
            const ActionnessMap map =
                read_actionness_map(map_file(c.results_dir, ann.id, stream_name(stream), t));
            for (const Proposal& p :
                 frame_proposals(c, map, c.proposals_per_frame, ann.height, ann.width))
                records.push_back({ann.id, t, p.box, p.score});
        }
        progress("proposed " + ann.id);
    }
    fs::create_directories(c.results_dir);
    write_proposals(c.results_dir + "/proposals.txt", records, c.seed, config_hash(c));
}

inline void run_detect(const PipelineConfig& c, const std::string& split) {
    std::vector<std::string> ids;
    const auto scenes = load_scenes(c, split, &ids);
    const TrainedModels m = load_models(c);
    std::map<std::string, std::map<int, std::vector<Box>>> proposals;
    for (const ProposalRecord& r : read_proposals(c.results_dir + "/proposals.txt"))
        proposals[r.video][r.frame].push_back(r.box);

    std::vector<DetectionRecord> records;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        auto it = proposals.find(ids[s]);
        if (it == proposals.end())
            throw std::runtime_error("run_detect: no proposals for video " + ids[s]);
        for (std::size_t t = 0; t < scenes[s].frames.size(); ++t) {
            const auto ft = it->second.find(static_cast<int>(t));
            if (ft == it->second.end()) continue;
            for (const Detection& d :
                 detect_scene_frame(c, m, scenes[s], static_cast<int>(t), ft->second))
                records.push_back({ids[s], d});
        }
        progress("detected " + ids[s]);
    }
    write_detections(c.results_dir + "/detections.txt", records, c.seed, config_hash(c));
}

inline void run_link(const PipelineConfig& c, const std::string& split) {
    const auto annotations = split_annotations(c, split);
    std::map<std::string, std::vector<DetectionRecord>> by_video;
    for (DetectionRecord& r : read_detections(c.results_dir + "/detections.txt"))
        by_video[r.video].push_back(std::move(r));

    std::vector<TubeRecord> records;
    for (const VideoAnnotation& ann : annotations) {
        auto it = by_video.find(ann.id);
        if (it == by_video.end()) continue;
        std::vector<std::vector<Detection>> per_frame(ann.frames);
        for (const DetectionRecord& r : it->second) {
            if (r.det.frame < 0 || r.det.frame >= ann.frames)
                throw std::runtime_error("run_link: detection frame out of range for " + ann.id);
            per_frame[r.det.frame].push_back(r.det);
        }
        int tube_id = 0;
        for (Tube& t : link_scene(c, per_frame)) records.push_back({ann.id, tube_id++, t});
        progress("linked " + ann.id);
    }
    write_tubes(c.results_dir + "/tubes.txt", records, c.seed, config_hash(c));
}

// Frame keys are offset per video so cross-video matches are impossible.
inline constexpr int kFrameStride = 100000;

inline void run_evaluate(const PipelineConfig& c, const std::string& protocol,
                         const std::string& split) {
    const auto annotations = split_annotations(c, split);
    std::vector<std::pair<std::string, double>> metrics;

    if (protocol == "grid") {
        for (const Stream stream : {Stream::Appearance, Stream::Motion, Stream::Hybrid}) {
            double sum = 0.0;
            int count = 0;
            bool have_maps = true;
            for (const VideoAnnotation& ann : annotations) {
                std::vector<ActionnessMap> maps;
                std::vector<std::vector<Box>> gt;
                for (int t = 0; t < ann.frames && have_maps; ++t) {
                    const std::string path =
                        map_file(c.results_dir, ann.id, stream_name(stream), t);
                    if (!file_exists(path)) {
                        have_maps = false;
                        break;
                    }
                    maps.push_back(read_actionness_map(path));
                    std::vector<Box> boxes;
                    for (const LabeledBox& b : ann.gt[t]) boxes.push_back(b.box);
                    gt.push_back(std::move(boxes));
                }
                if (!have_maps) break;
                sum += grid_actionness_ap(maps, gt, c.grid);
                ++count;
            }
            if (have_maps && count > 0)
                metrics.emplace_back("grid_map_" + stream_name(stream), sum / count);
        }
        if (metrics.empty())
            throw std::runtime_error("run_evaluate: no actionness maps found; run estimate first");
        write_metrics(c.results_dir + "/metrics_grid.txt", metrics, c.seed, config_hash(c));
    } else if (protocol == "proposal-recall") {
        std::map<std::string, std::map<int, std::vector<Box>>> proposals;
        for (const ProposalRecord& r : read_proposals(c.results_dir + "/proposals.txt"))
            proposals[r.video][r.frame].push_back(r.box);
        std::vector<std::vector<Box>> props_per_image, gt_per_image;
        for (const VideoAnnotation& ann : annotations)
            for (int t = 0; t < ann.frames; ++t) {
                props_per_image.push_back(proposals[ann.id][t]);
                std::vector<Box> gt;
                for (const LabeledBox& b : ann.gt[t]) gt.push_back(b.box);
                gt_per_image.push_back(std::move(gt));
            }
        metrics.emplace_back("recall", proposal_recall(props_per_image, gt_per_image,
                                                       c.eval_iou));
        write_metrics(c.results_dir + "/metrics_proposal_recall.txt", metrics, c.seed,
                      config_hash(c));
        write_curve(c.results_dir + "/curve_recall_vs_count.txt",
                    recall_vs_count(props_per_image, gt_per_image, c.eval_iou,
                                    c.proposals_per_frame),
                    c.seed, config_hash(c));
        std::vector<double> thresholds;
        for (double t = 0.1; t < 0.96; t += 0.05) thresholds.push_back(t);
        write_curve(c.results_dir + "/curve_recall_vs_iou.txt",
                    recall_vs_iou(props_per_image, gt_per_image, c.proposals_per_frame,
                                  thresholds),
                    c.seed, config_hash(c));
    } else if (protocol == "frame-ap") {
        std::vector<Detection> dets;
        std::vector<LabeledBox> gt;
        std::map<std::string, int> video_index;
        for (std::size_t i = 0; i < annotations.size(); ++i)
            video_index[annotations[i].id] = static_cast<int>(i);
        for (const DetectionRecord& r : read_detections(c.results_dir + "/detections.txt")) {
            auto it = video_index.find(r.video);
            if (it == video_index.end()) continue;
            Detection d = r.det;
            d.frame += it->second * kFrameStride;
            dets.push_back(d);
        }
        for (const VideoAnnotation& ann : annotations)
            for (int t = 0; t < ann.frames; ++t)
                for (LabeledBox b : ann.gt[t]) {
                    b.frame = t + video_index[ann.id] * kFrameStride;
                    gt.push_back(b);
                }
        const auto per_class = frame_ap(dets, gt, c.eval_iou);
        for (const auto& [cls, ap] : per_class)
            metrics.emplace_back("frame_ap_class_" + std::to_string(cls), ap);
        metrics.emplace_back("frame_map", mean_ap(per_class));
        write_metrics(c.results_dir + "/metrics_frame_ap.txt", metrics, c.seed,
                      config_hash(c));
    } else if (protocol == "video-ap") {
        std::map<std::string, int> video_index;
        for (std::size_t i = 0; i < annotations.size(); ++i)
            video_index[annotations[i].id] = static_cast<int>(i);
        std::vector<Tube> tubes, gt_tubes;
        for (const TubeRecord& r : read_tubes(c.results_dir + "/tubes.txt")) {
            auto it = video_index.find(r.video);
            if (it == video_index.end()) continue;
            Tube t = r.tube;
            t.start_frame += it->second * kFrameStride;
            tubes.push_back(std::move(t));
        }
        for (const VideoAnnotation& ann : annotations) {
            const std::size_t actors = ann.gt.empty() ? 0 : ann.gt[0].size();
            for (std::size_t a = 0; a < actors; ++a) {
                Tube t;
                t.class_label = ann.class_label;
                t.start_frame = video_index[ann.id] * kFrameStride;
                t.tube_score = 1.0;
                for (int f = 0; f < ann.frames; ++f) t.boxes.push_back(ann.gt[f][a].box);
                gt_tubes.push_back(std::move(t));
            }
        }
        const auto per_class = video_ap(tubes, gt_tubes, c.eval_iou);
        for (const auto& [cls, ap] : per_class)
            metrics.emplace_back("video_ap_class_" + std::to_string(cls), ap);
        metrics.emplace_back("video_map", mean_ap(per_class));
        write_metrics(c.results_dir + "/metrics_video_ap.txt", metrics, c.seed,
                      config_hash(c));
    } else {
        throw std::invalid_argument("unknown protocol '" + protocol +
                                    "' (grid, proposal-recall, frame-ap, video-ap)");
    }
}

/// Runs every stage in order. Byte-identical outputs for identical seeds.
inline void run_full(const PipelineConfig& c) {
    run_synth(c);
    run_train(c);
    for (const Stream s : {Stream::Appearance, Stream::Motion, Stream::Hybrid})
        run_estimate(c, s, "test");
    run_propose(c, Stream::Hybrid, "test");
    run_detect(c, "test");
    run_link(c, "test");
    run_evaluate(c, "grid", "test");
    run_evaluate(c, "proposal-recall", "test");
    run_evaluate(c, "frame-ap", "test");
    run_evaluate(c, "video-ap", "test");
}

} // namespace act::pipeline
