#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "act/detector.hpp"
#include "act/map.hpp"
#include "act/network.hpp"
#include "act/proposals.hpp"
#include "act/tensor.hpp"

namespace act {

inline constexpr std::uint32_t kFormatVersion = 1;

/// Shortest float text that round-trips binary32 exactly; keeps every text
/// artifact byte-stable across runs.
inline std::string fmt_float(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline void write_text_header(std::ostream& out, const std::string& kind, std::uint64_t seed,
                              std::uint64_t config_hash) {
    out << "# " << kind << " v" << kFormatVersion << "\n";
    out << "# seed " << seed << " config " << std::hex << config_hash << std::dec << "\n";
}

inline void skip_comment_lines(std::istream& in) {
    while (in.peek() == '#') {
        std::string line;
        std::getline(in, line);
    }
}

// ---------------------------------------------------------------------------
// Actionness map container: magic "AMAP", u32 format version, i32 height,
// i32 width, then height*width float32 values, little-endian, row-major.
// ---------------------------------------------------------------------------

inline void write_actionness_map(const std::string& path, const ActionnessMap& map) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_actionness_map: cannot open " + path);
    out.write("AMAP", 4);
    const std::uint32_t version = kFormatVersion;
    const std::int32_t h = map.height, w = map.width;
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&h), 4);
    out.write(reinterpret_cast<const char*>(&w), 4);
    out.write(reinterpret_cast<const char*>(map.values.data()),
              static_cast<std::streamsize>(map.values.size() * 4));
    if (!out) throw std::runtime_error("write_actionness_map: write failed for " + path);
}

inline ActionnessMap read_actionness_map(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_actionness_map: cannot open " + path);
    char magic[4] = {};
    std::uint32_t version = 0;
    std::int32_t h = 0, w = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&h), 4);
    in.read(reinterpret_cast<char*>(&w), 4);
    if (!in || std::memcmp(magic, "AMAP", 4) != 0)
        throw std::runtime_error("read_actionness_map: bad magic in " + path);
    if (version != kFormatVersion)
        throw std::runtime_error("read_actionness_map: unsupported version in " + path);
    if (h <= 0 || w <= 0)
        throw std::runtime_error("read_actionness_map: bad dimensions in " + path);
    ActionnessMap map(h, w);
    in.read(reinterpret_cast<char*>(map.values.data()),
            static_cast<std::streamsize>(map.values.size() * 4));
    if (!in) throw std::runtime_error("read_actionness_map: truncated file " + path);
    return map;
}

// ---------------------------------------------------------------------------
// Weight container: magic "AWTC", u32 version, u64 spec hash, u32 entry
// count, then per entry (name, dims); payload is contiguous little-endian
// float32 blobs in entry order (per conv layer: weights then bias).
// ---------------------------------------------------------------------------

inline void save_network(const std::string& path, const Network& net) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_network: cannot open " + path);
    out.write("AWTC", 4);
    const std::uint32_t version = kFormatVersion;
    const std::uint64_t hash = spec_hash(net.spec);
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&hash), 8);
    const std::uint32_t entries = static_cast<std::uint32_t>(net.kernels.size() * 2);
    out.write(reinterpret_cast<const char*>(&entries), 4);

    auto write_entry = [&out](const std::string& name, const std::vector<std::uint32_t>& dims) {
        const std::uint32_t name_len = static_cast<std::uint32_t>(name.size());
        out.write(reinterpret_cast<const char*>(&name_len), 4);
        out.write(name.data(), name_len);
        const std::uint32_t nd = static_cast<std::uint32_t>(dims.size());
        out.write(reinterpret_cast<const char*>(&nd), 4);
        for (std::uint32_t d : dims) out.write(reinterpret_cast<const char*>(&d), 4);
    };
    for (std::size_t i = 0; i < net.kernels.size(); ++i) {
        const ConvKernel& k = net.kernels[i];
        const std::string base = "conv" + std::to_string(i + 1);
        write_entry(base + ".weights",
                    {static_cast<std::uint32_t>(k.kernel_size),
                     static_cast<std::uint32_t>(k.kernel_size),
                     static_cast<std::uint32_t>(k.in_channels),
                     static_cast<std::uint32_t>(k.out_channels)});
        write_entry(base + ".bias", {static_cast<std::uint32_t>(k.out_channels)});
    }
    for (const ConvKernel& k : net.kernels) {
        out.write(reinterpret_cast<const char*>(k.weights.data()),
                  static_cast<std::streamsize>(k.weights.size() * 4));
        out.write(reinterpret_cast<const char*>(k.bias.data()),
                  static_cast<std::streamsize>(k.bias.size() * 4));
    }
    if (!out) throw std::runtime_error("save_network: write failed for " + path);
}

/// Loads parameters saved by save_network into a freshly built network for
/// `spec`. The stored spec hash must match `spec`, and the payload must hold
/// exactly the declared number of values.
inline Network load_network(const std::string& path, const NetworkSpec& spec) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_network: cannot open " + path);
    char magic[4] = {};
    std::uint32_t version = 0, entries = 0;
    std::uint64_t hash = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&hash), 8);
    in.read(reinterpret_cast<char*>(&entries), 4);
    if (!in || std::memcmp(magic, "AWTC", 4) != 0)
        throw std::runtime_error("load_network: bad magic in " + path);
    if (version != kFormatVersion)
        throw std::runtime_error("load_network: unsupported version in " + path);
    if (hash != spec_hash(spec))
        throw std::runtime_error("load_network: spec hash mismatch for " + path +
                                 " (weights were saved for a different network spec)");

    std::vector<std::uint64_t> entry_sizes;
    for (std::uint32_t e = 0; e < entries; ++e) {
        std::uint32_t name_len = 0;
        in.read(reinterpret_cast<char*>(&name_len), 4);
        if (!in || name_len > 4096)
            throw std::runtime_error("load_network: corrupt header in " + path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        std::uint32_t nd = 0;
        in.read(reinterpret_cast<char*>(&nd), 4);
        if (!in || nd > 8) throw std::runtime_error("load_network: corrupt header in " + path);
        std::uint64_t total = 1;
        for (std::uint32_t d = 0; d < nd; ++d) {
            std::uint32_t dim = 0;
            in.read(reinterpret_cast<char*>(&dim), 4);
            total *= dim;
        }
        entry_sizes.push_back(total);
    }

    Network net = build_network(spec, 0);
    if (entries != net.kernels.size() * 2)
        throw std::runtime_error("load_network: entry count does not match spec in " + path);
    std::size_t e = 0;
    for (ConvKernel& k : net.kernels) {
        if (entry_sizes[e] != k.weights.size() || entry_sizes[e + 1] != k.bias.size())
            throw std::runtime_error("load_network: payload shape mismatch in " + path);
        e += 2;
    }
    for (ConvKernel& k : net.kernels) {
        in.read(reinterpret_cast<char*>(k.weights.data()),
                static_cast<std::streamsize>(k.weights.size() * 4));
        in.read(reinterpret_cast<char*>(k.bias.data()),
                static_cast<std::streamsize>(k.bias.size() * 4));
    }
    if (!in) throw std::runtime_error("load_network: truncated payload in " + path);
    char extra = 0;
    if (in.read(&extra, 1))
        throw std::runtime_error("load_network: trailing bytes in " + path);
    for (auto& v : net.velocities) {
        std::fill(v.weights.begin(), v.weights.end(), 0.0f);
        std::fill(v.bias.begin(), v.bias.end(), 0.0f);
    }
    return net;
}

// ---------------------------------------------------------------------------
// Portable pixmaps for frames and quick map viewing.
// ---------------------------------------------------------------------------

inline std::uint8_t to_byte(float v) {
    const long r = std::lround(static_cast<double>(v) * 255.0);
    return static_cast<std::uint8_t>(std::clamp(r, 0L, 255L));
}

inline void write_ppm(const std::string& path, const Tensor& image) {
    if (image.channels != 3) throw std::invalid_argument("write_ppm: needs 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width) * 3);
    for (int i = 0; i < image.height; ++i) {
        for (int j = 0; j < image.width; ++j)
            for (int c = 0; c < 3; ++c)
                row[static_cast<std::size_t>(j) * 3 + c] = to_byte(image.at(i, j, c));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw std::runtime_error("write_ppm: write failed for " + path);
}

inline Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
        throw std::runtime_error("read_ppm: unsupported header in " + path);
    in.get(); // single whitespace after maxval
    Tensor image(h, w, 3);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
    for (int i = 0; i < h; ++i) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!in) throw std::runtime_error("read_ppm: truncated file " + path);
        for (int j = 0; j < w; ++j)
            for (int c = 0; c < 3; ++c)
                image.at(i, j, c) = row[static_cast<std::size_t>(j) * 3 + c] / 255.0f;
    }
    return image;
}

inline void write_pgm(const std::string& path, const ActionnessMap& map) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_pgm: cannot open " + path);
    out << "P5\n" << map.width << " " << map.height << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<std::size_t>(map.width));
    for (int i = 0; i < map.height; ++i) {
        for (int j = 0; j < map.width; ++j) row[j] = to_byte(map.at(i, j));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw std::runtime_error("write_pgm: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Line-oriented dataset and result records.
// ---------------------------------------------------------------------------

/// Per-video annotation: frames of labeled actor boxes plus the video-level
/// action class.
struct VideoAnnotation {
    std::string id;
    int frames = 0;
    int height = 0;
    int width = 0;
    int class_label = 0;
    std::vector<std::vector<LabeledBox>> gt; // size == frames
};

inline void write_annotations(const std::string& path,
                              const std::vector<VideoAnnotation>& videos, std::uint64_t seed,
                              std::uint64_t config_hash) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_annotations: cannot open " + path);
    write_text_header(out, "annotations", seed, config_hash);
    for (const auto& v : videos) {
        out << "video " << v.id << " " << v.frames << " " << v.height << " " << v.width << " "
            << v.class_label << "\n";
        for (int t = 0; t < v.frames; ++t) {
            out << "frame " << v.id << " " << t << " " << v.gt[t].size();
            for (const LabeledBox& b : v.gt[t])
                out << " " << b.box.x1 << " " << b.box.y1 << " " << b.box.x2 << " " << b.box.y2
                    << " " << b.label;
            out << "\n";
        }
    }
    if (!out) throw std::runtime_error("write_annotations: write failed for " + path);
}

inline std::vector<VideoAnnotation> read_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_annotations: cannot open " + path);
    std::vector<VideoAnnotation> videos;
    std::map<std::string, std::size_t> index;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        auto fail = [&](const std::string& msg) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + msg);
        };
        if (tag == "video") {
            VideoAnnotation v;
            if (!(ls >> v.id >> v.frames >> v.height >> v.width >> v.class_label))
                fail("malformed video record");
            if (v.frames <= 0) fail("non-positive frame count");
            v.gt.resize(v.frames);
            index[v.id] = videos.size();
            videos.push_back(std::move(v));
        } else if (tag == "frame") {
            std::string id;
            int t = 0;
            std::size_t count = 0;
            if (!(ls >> id >> t >> count)) fail("malformed frame record");
            auto it = index.find(id);
            if (it == index.end()) fail("frame record before video record for '" + id + "'");
            VideoAnnotation& v = videos[it->second];
            if (t < 0 || t >= v.frames) fail("frame index out of range");
            for (std::size_t b = 0; b < count; ++b) {
                LabeledBox lb;
                lb.frame = t;
                if (!(ls >> lb.box.x1 >> lb.box.y1 >> lb.box.x2 >> lb.box.y2 >> lb.label))
                    fail("malformed box in frame record");
                v.gt[t].push_back(lb);
            }
        } else {
            fail("unknown record '" + tag + "'");
        }
    }
    return videos;
}

struct ProposalRecord {
    std::string video;
    int frame = 0;
    Box box;
    float score = 0.0f;
};

inline void write_proposals(const std::string& path, const std::vector<ProposalRecord>& records,
                            std::uint64_t seed, std::uint64_t config_hash) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_proposals: cannot open " + path);
    write_text_header(out, "proposals", seed, config_hash);
    for (const auto& r : records)
        out << r.video << " " << r.frame << " " << r.box.x1 << " " << r.box.y1 << " "
            << r.box.x2 << " " << r.box.y2 << " " << fmt_float(r.score) << "\n";
    if (!out) throw std::runtime_error("write_proposals: write failed for " + path);
}

inline std::vector<ProposalRecord> read_proposals(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_proposals: cannot open " + path);
    std::vector<ProposalRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        ProposalRecord r;
        if (!(ls >> r.video >> r.frame >> r.box.x1 >> r.box.y1 >> r.box.x2 >> r.box.y2 >>
              r.score))
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": malformed proposal record");
        records.push_back(std::move(r));
    }
    return records;
}

struct DetectionRecord {
    std::string video;
    Detection det;
};

inline void write_detections(const std::string& path,
                             const std::vector<DetectionRecord>& records, std::uint64_t seed,
                             std::uint64_t config_hash) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_detections: cannot open " + path);
    write_text_header(out, "detections", seed, config_hash);
    for (const auto& r : records)
        out << r.video << " " << r.det.frame << " " << r.det.class_label << " " << r.det.box.x1
            << " " << r.det.box.y1 << " " << r.det.box.x2 << " " << r.det.box.y2 << " "
            << fmt_float(r.det.score) << "\n";
    if (!out) throw std::runtime_error("write_detections: write failed for " + path);
}

inline std::vector<DetectionRecord> read_detections(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_detections: cannot open " + path);
    std::vector<DetectionRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        DetectionRecord r;
        if (!(ls >> r.video >> r.det.frame >> r.det.class_label >> r.det.box.x1 >>
              r.det.box.y1 >> r.det.box.x2 >> r.det.box.y2 >> r.det.score))
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": malformed detection record");
        records.push_back(std::move(r));
    }
    return records;
}

struct TubeRecord {
    std::string video;
    int tube_id = 0;
    Tube tube;
};

/// One line per tube frame: video, tube id, frame, class, box, tube score.
inline void write_tubes(const std::string& path, const std::vector<TubeRecord>& records,
                        std::uint64_t seed, std::uint64_t config_hash) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_tubes: cannot open " + path);
    write_text_header(out, "tubes", seed, config_hash);
    for (const auto& r : records)
        for (std::size_t i = 0; i < r.tube.boxes.size(); ++i) {
            const Box& b = r.tube.boxes[i];
            out << r.video << " " << r.tube_id << " " << r.tube.start_frame + static_cast<int>(i)
                << " " << r.tube.class_label << " " << b.x1 << " " << b.y1 << " " << b.x2 << " "
                << b.y2 << " " << fmt_float(r.tube.tube_score) << "\n";
        }
    if (!out) throw std::runtime_error("write_tubes: write failed for " + path);
}

inline std::vector<TubeRecord> read_tubes(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_tubes: cannot open " + path);
    std::map<std::pair<std::string, int>, TubeRecord> by_id;
    std::vector<std::pair<std::string, int>> order;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string video;
        int tube_id = 0, frame = 0, cls = 0;
        Box b;
        double score = 0.0;
        if (!(ls >> video >> tube_id >> frame >> cls >> b.x1 >> b.y1 >> b.x2 >> b.y2 >> score))
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": malformed tube record");
        const auto key = std::make_pair(video, tube_id);
        auto it = by_id.find(key);
        if (it == by_id.end()) {
            TubeRecord r;
            r.video = video;
            r.tube_id = tube_id;
            r.tube.class_label = cls;
            r.tube.start_frame = frame;
            r.tube.tube_score = score;
            by_id[key] = std::move(r);
            order.push_back(key);
            it = by_id.find(key);
        }
        TubeRecord& r = it->second;
        const int expected = r.tube.start_frame + static_cast<int>(r.tube.boxes.size());
        if (frame != expected)
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": non-contiguous tube frames");
        r.tube.boxes.push_back(b);
    }
    std::vector<TubeRecord> records;
    records.reserve(order.size());
    for (const auto& key : order) records.push_back(std::move(by_id[key]));
    return records;
}

inline void write_metrics(const std::string& path,
                          const std::vector<std::pair<std::string, double>>& metrics,
                          std::uint64_t seed, std::uint64_t config_hash) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_metrics: cannot open " + path);
    write_text_header(out, "metrics", seed, config_hash);
    for (const auto& [key, value] : metrics) out << key << " " << fmt_float(value) << "\n";
    if (!out) throw std::runtime_error("write_metrics: write failed for " + path);
}

/// Two-column numeric text, one (x, y) pair per line.
inline void write_curve(const std::string& path,
                        const std::vector<std::pair<double, double>>& points,
                        std::uint64_t seed, std::uint64_t config_hash) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_curve: cannot open " + path);
    write_text_header(out, "curve", seed, config_hash);
    for (const auto& [x, y] : points) out << fmt_float(x) << " " << fmt_float(y) << "\n";
    if (!out) throw std::runtime_error("write_curve: write failed for " + path);
}

inline std::string read_file_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline bool file_exists(const std::string& path) {
    std::ifstream in(path);
    return static_cast<bool>(in);
}

} // namespace act
