// Command-line front end for the actionness pipeline:
//   synth -> train-toy -> estimate -> propose -> detect -> link -> evaluate
// plus rendering helpers and a full-pipeline runner.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
// failure (NaN detected).

#include <cstdio>
#include <exception>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "act/io.hpp"
#include "act/pipeline.hpp"
#include "act/render.hpp"

namespace {

using act::pipeline::PipelineConfig;

PipelineConfig load_or_default(const std::string& path) {
    if (path.empty()) return PipelineConfig{};
    return act::pipeline::load_config(path);
}

void render_map(const std::string& map_path, const std::string& out_path, bool gray) {
    const act::ActionnessMap map = act::read_actionness_map(map_path);
    if (out_path.size() > 4 && out_path.substr(out_path.size() - 4) == ".pgm") {
        act::write_pgm(out_path, map);
        return;
    }
    act::write_ppm(out_path, gray ? act::heatmap_gray(map) : act::heatmap_color(map));
}

void render_boxes(const std::string& frame_path, const std::string& proposals_path,
                  const std::string& detections_path, const std::string& video, int frame_index,
                  const std::string& out_path) {
    const act::Tensor frame = act::read_ppm(frame_path);
    std::vector<act::Box> boxes;
    if (!proposals_path.empty()) {
        for (const auto& r : act::read_proposals(proposals_path))
            if (r.video == video && r.frame == frame_index) boxes.push_back(r.box);
    }
    if (!detections_path.empty()) {
        for (const auto& r : act::read_detections(detections_path))
            if (r.video == video && r.det.frame == frame_index) boxes.push_back(r.det.box);
    }
    act::write_ppm(out_path, act::draw_boxes(frame, boxes));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid fully convolutional actionness estimation pipeline"};
    app.require_subcommand(1);

    std::string config_path, split = "test", stream = "hybrid", protocol;
    bool export_pgm = false;

    auto add_config = [&](CLI::App* cmd) {
        cmd->add_option("-c,--config", config_path, "pipeline config (JSON)");
    };
    auto add_split = [&](CLI::App* cmd) {
        cmd->add_option("--split", split, "dataset split")
            ->check(CLI::IsMember({"train", "test"}));
    };
    auto add_stream = [&](CLI::App* cmd) {
        cmd->add_option("--stream", stream, "actionness stream")
            ->check(CLI::IsMember({"appearance", "motion", "hybrid"}));
    };

    CLI::App* synth = app.add_subcommand("synth", "generate the synthetic dataset");
    add_config(synth);

    CLI::App* train = app.add_subcommand("train-toy", "train FCNs and classifiers");
    add_config(train);

    CLI::App* estimate = app.add_subcommand("estimate", "write actionness maps");
    add_config(estimate);
    add_split(estimate);
    add_stream(estimate);
    estimate->add_flag("--pgm", export_pgm, "also export maps as PGM images");

    CLI::App* propose = app.add_subcommand("propose", "generate action proposals from maps");
    add_config(propose);
    add_split(propose);
    add_stream(propose);

    CLI::App* detect = app.add_subcommand("detect", "classify proposals into detections");
    add_config(detect);
    add_split(detect);

    CLI::App* link = app.add_subcommand("link", "link detections into action tubes");
    add_config(link);
    add_split(link);

    CLI::App* evaluate = app.add_subcommand("evaluate", "run an evaluation protocol");
    add_config(evaluate);
    add_split(evaluate);
    evaluate->add_option("-p,--protocol", protocol, "protocol")
        ->required()
        ->check(CLI::IsMember({"grid", "proposal-recall", "frame-ap", "video-ap"}));

    CLI::App* run = app.add_subcommand("run", "run the whole pipeline end to end");
    add_config(run);

    std::string map_path, out_path, frame_path, proposals_path, detections_path, video_id;
    int frame_index = 0;
    bool gray = false;
    CLI::App* render = app.add_subcommand("render", "render maps or box overlays");
    render->add_option("--map", map_path, "actionness map file (.amap)");
    render->add_option("--frame", frame_path, "frame image (.ppm)");
    render->add_option("--proposals", proposals_path, "proposals file to overlay");
    render->add_option("--detections", detections_path, "detections file to overlay");
    render->add_option("--video", video_id, "video id for overlays");
    render->add_option("--frame-index", frame_index, "frame index for overlays");
    render->add_option("-o,--out", out_path, "output image (.ppm or .pgm)")->required();
    render->add_flag("--gray", gray, "grayscale heatmap instead of false color");

    CLI::App* init = app.add_subcommand("init-config", "write a default toy config");
    std::string init_out = "pipeline.json";
    init->add_option("-o,--out", init_out, "output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const PipelineConfig cfg = load_or_default(config_path);
        if (synth->parsed()) {
            act::pipeline::run_synth(cfg);
        } else if (train->parsed()) {
            act::pipeline::run_train(cfg);
        } else if (estimate->parsed()) {
            act::pipeline::run_estimate(cfg, act::pipeline::stream_from_name(stream), split,
                                        export_pgm);
        } else if (propose->parsed()) {
            act::pipeline::run_propose(cfg, act::pipeline::stream_from_name(stream), split);
        } else if (detect->parsed()) {
            act::pipeline::run_detect(cfg, split);
        } else if (link->parsed()) {
            act::pipeline::run_link(cfg, split);
        } else if (evaluate->parsed()) {
            act::pipeline::run_evaluate(cfg, protocol, split);
            std::printf("wrote metrics under %s\n", cfg.results_dir.c_str());
        } else if (run->parsed()) {
            act::pipeline::run_full(cfg);
            std::printf("pipeline outputs under %s and %s\n", cfg.data_dir.c_str(),
                        cfg.results_dir.c_str());
        } else if (render->parsed()) {
            if (!map_path.empty()) {
                render_map(map_path, out_path, gray);
            } else if (!frame_path.empty()) {
                render_boxes(frame_path, proposals_path, detections_path, video_id, frame_index,
                             out_path);
            } else {
                std::fprintf(stderr, "render: need --map or --frame\n");
                return 1;
            }
        } else if (init->parsed()) {
            std::ofstream out(init_out);
            if (!out) throw std::runtime_error("cannot open " + init_out);
            out << act::pipeline::config_to_json(PipelineConfig{}).dump(2) << "\n";
            std::printf("wrote %s\n", init_out.c_str());
        }
    } catch (const act::NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
