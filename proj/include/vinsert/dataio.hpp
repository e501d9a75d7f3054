#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "png_io.hpp"
#include "tensor.hpp"

namespace vinsert {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Scene bundle: the on-disk unit shared by the whole pipeline.
//
// Directory layout:
//   frames/%04d.png      RGB frames
//   masks/%04d.png       edit-region masks, 0/255, thresholded at 128 on load
//   ref.png              reference crop (optional, with ref_alpha.png)
//   ref_alpha.png        binary foreground mask of the crop
//   ref_keypoints.json   crop-space keypoints [[x,y],...] (optional sidecar)
//   tracks.json          [{"xy": [[x,y] x N], "vis": [0|1 x N]}, ...]
//   meta.json            {"fps": number, "source": "synthetic-video"|"image-simulated"}
//
// Track coordinates are stored with 3 decimal places. When a reference with
// K keypoints is present, tracks[0..K) correspond one-to-one with
// ref_keypoints[0..K): track i follows the object point marked by keypoint i.
// ---------------------------------------------------------------------------

enum class Source { SyntheticVideo, ImageSimulated };

inline const char* to_string(Source s) {
    return s == Source::SyntheticVideo ? "synthetic-video" : "image-simulated";
}

inline Source source_from_string(const std::string& s) {
    if (s == "synthetic-video") return Source::SyntheticVideo;
    if (s == "image-simulated") return Source::ImageSimulated;
    throw validation_error("unknown source tag '" + s + "'");
}

struct Track {
    std::vector<std::array<float, 2>> xy;  // (x, y) per frame
    std::vector<uint8_t> vis;              // visibility bit per frame
};

struct ReferenceObject {
    Tensor image;  // [3,S,S], background zeroed
    Tensor alpha;  // [1,S,S], binary
    std::vector<std::array<float, 2>> keypoints;  // crop-space coords

    int side() const { return image.shape[1]; }
};

struct SceneMeta {
    float fps = 8.0f;
    Source source = Source::SyntheticVideo;
};

struct SceneBundle {
    std::vector<Tensor> frames;  // each [3,H,W], values in [0,1]
    std::vector<Tensor> masks;   // each [1,H,W], values in {0,1}
    std::vector<Track> tracks;
    std::optional<ReferenceObject> reference;
    SceneMeta meta;

    int n_frames() const { return (int)frames.size(); }
    int height() const { return frames.empty() ? 0 : frames[0].shape[1]; }
    int width() const { return frames.empty() ? 0 : frames[0].shape[2]; }
};

inline void validate_reference(const ReferenceObject& ref) {
    VINSERT_CHECK(ref.image.ndim() == 3 && ref.image.shape[0] == 3, "reference image must be [3,S,S]");
    VINSERT_CHECK(ref.image.shape[1] == ref.image.shape[2], "reference crop must be square");
    VINSERT_CHECK(ref.alpha.shape[1] == ref.image.shape[1] && ref.alpha.shape[2] == ref.image.shape[2],
                  "reference alpha size mismatch");
    int s = ref.side();
    double cx = 0, cy = 0, area = 0;
    for (int y = 0; y < s; y++)
        for (int x = 0; x < s; x++) {
            float a = ref.alpha.at(0, y, x);
            VINSERT_CHECK(a == 0.0f || a == 1.0f, "reference alpha must be binary");
            if (a > 0) {
                cx += x;
                cy += y;
                area += 1;
            } else {
                VINSERT_CHECK(ref.image.at(0, y, x) == 0.0f && ref.image.at(1, y, x) == 0.0f &&
                                  ref.image.at(2, y, x) == 0.0f,
                              "reference background pixel (%d,%d) not zeroed", x, y);
            }
        }
    VINSERT_CHECK(area > 0, "reference crop has empty foreground");
    cx = cx / area - (s - 1) * 0.5;
    cy = cy / area - (s - 1) * 0.5;
    VINSERT_CHECK(std::sqrt(cx * cx + cy * cy) <= 0.05 * s,
                  "reference foreground centroid is %.2f px off center (limit %.2f)",
                  std::sqrt(cx * cx + cy * cy), 0.05 * s);
    for (auto& kp : ref.keypoints)
        VINSERT_CHECK(kp[0] >= 0 && kp[0] < s && kp[1] >= 0 && kp[1] < s,
                      "reference keypoint (%.1f,%.1f) outside crop", kp[0], kp[1]);
}

inline void validate_scene_bundle(const SceneBundle& b) {
    VINSERT_CHECK(b.n_frames() >= 2, "bundle needs N >= 2 frames, got %d", b.n_frames());
    VINSERT_CHECK(b.masks.size() == b.frames.size(), "frame/mask count mismatch: %zu vs %zu",
                  b.frames.size(), b.masks.size());
    int h = b.height(), w = b.width();
    for (int i = 0; i < b.n_frames(); i++) {
        VINSERT_CHECK(b.frames[i].ndim() == 3 && b.frames[i].shape[0] == 3 &&
                          b.frames[i].shape[1] == h && b.frames[i].shape[2] == w,
                      "frame %d has shape %s, expected [3,%d,%d]", i, b.frames[i].shape_str().c_str(), h, w);
        VINSERT_CHECK(b.masks[i].shape[1] == h && b.masks[i].shape[2] == w, "mask %d size mismatch", i);
        for (float v : b.masks[i].data)
            VINSERT_CHECK(v == 0.0f || v == 1.0f, "mask %d has non-binary value %f", i, v);
    }
    for (size_t t = 0; t < b.tracks.size(); t++) {
        const Track& tr = b.tracks[t];
        VINSERT_CHECK((int)tr.xy.size() == b.n_frames() && tr.vis.size() == tr.xy.size(),
                      "track %zu has %zu entries, expected %d", t, tr.xy.size(), b.n_frames());
        for (int f = 0; f < b.n_frames(); f++) {
            if (!tr.vis[f]) continue;
            VINSERT_CHECK(tr.xy[f][0] >= 0 && tr.xy[f][0] < w && tr.xy[f][1] >= 0 && tr.xy[f][1] < h,
                          "track %zu frame %d: visible point (%.2f,%.2f) outside [0,%d)x[0,%d)",
                          t, f, tr.xy[f][0], tr.xy[f][1], w, h);
        }
    }
    if (b.reference) validate_reference(*b.reference);
}

namespace detail {

inline float round3(float v) { return std::round(v * 1000.0f) / 1000.0f; }

inline std::string frame_name(int i) { return format_str("%04d.png", i); }

inline void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    VINSERT_FATAL_CHECK(out.good(), "cannot open '%s' for writing", p.string().c_str());
    out << text;
    VINSERT_FATAL_CHECK(out.good(), "write failed for '%s'", p.string().c_str());
}

inline json parse_json_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    VINSERT_FATAL_CHECK(in.good(), "missing %s", p.filename().string().c_str());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        size_t line = 1;
        for (size_t i = 0; i < std::min(e.byte, text.size()); i++)
            if (text[i] == '\n') line++;
        throw validation_error(format_str("%s: parse error at line %zu: %s",
                                          p.filename().string().c_str(), line, e.what()));
    }
}

}  // namespace detail

inline void save_scene_bundle(const SceneBundle& bundle, const fs::path& dir) {
    validate_scene_bundle(bundle);
    std::error_code ec;
    fs::create_directories(dir / "frames", ec);
    fs::create_directories(dir / "masks", ec);
    VINSERT_FATAL_CHECK(fs::is_directory(dir / "frames") && fs::is_directory(dir / "masks"),
                        "cannot create bundle directory '%s'", dir.string().c_str());

    for (int i = 0; i < bundle.n_frames(); i++) {
        write_png(dir / "frames" / detail::frame_name(i), bundle.frames[i]);
        write_png(dir / "masks" / detail::frame_name(i), bundle.masks[i]);
    }
    if (bundle.reference) {
        write_png(dir / "ref.png", bundle.reference->image);
        write_png(dir / "ref_alpha.png", bundle.reference->alpha);
        json kps = json::array();
        for (auto& kp : bundle.reference->keypoints)
            kps.push_back({detail::round3(kp[0]), detail::round3(kp[1])});
        detail::write_text(dir / "ref_keypoints.json", kps.dump(2) + "\n");
    }

    json tracks = json::array();
    for (const Track& t : bundle.tracks) {
        json xy = json::array(), vis = json::array();
        for (size_t f = 0; f < t.xy.size(); f++) {
            xy.push_back({detail::round3(t.xy[f][0]), detail::round3(t.xy[f][1])});
            vis.push_back((int)t.vis[f]);
        }
        tracks.push_back({{"xy", xy}, {"vis", vis}});
    }
    detail::write_text(dir / "tracks.json", tracks.dump(2) + "\n");

    json meta = {{"fps", bundle.meta.fps}, {"source", to_string(bundle.meta.source)}};
    detail::write_text(dir / "meta.json", meta.dump(2) + "\n");
}

inline SceneBundle load_scene_bundle(const fs::path& dir) {
    VINSERT_FATAL_CHECK(fs::is_directory(dir), "no such bundle directory '%s'", dir.string().c_str());
    SceneBundle b;

    json meta = detail::parse_json_file(dir / "meta.json");
    VINSERT_CHECK(meta.contains("fps") && meta.contains("source"), "meta.json missing fps/source");
    b.meta.fps = meta["fps"].get<float>();
    b.meta.source = source_from_string(meta["source"].get<std::string>());

    for (int i = 0;; i++) {
        fs::path fp = dir / "frames" / detail::frame_name(i);
        if (!fs::exists(fp)) break;
        b.frames.push_back(read_png(fp));
        fs::path mp = dir / "masks" / detail::frame_name(i);
        VINSERT_FATAL_CHECK(fs::exists(mp), "missing %s", (fs::path("masks") / detail::frame_name(i)).string().c_str());
        Tensor m = read_png(mp);
        for (auto& v : m.data) v = v >= 128.0f / 255.0f ? 1.0f : 0.0f;
        b.masks.push_back(std::move(m));
    }
    VINSERT_FATAL_CHECK(!b.frames.empty(), "missing frames/0000.png in '%s'", dir.string().c_str());

    json tracks = detail::parse_json_file(dir / "tracks.json");
    VINSERT_CHECK(tracks.is_array(), "tracks.json must be a list");
    for (auto& jt : tracks) {
        Track t;
        for (auto& p : jt.at("xy")) t.xy.push_back({p.at(0).get<float>(), p.at(1).get<float>()});
        for (auto& v : jt.at("vis")) t.vis.push_back((uint8_t)(v.get<int>() != 0));
        b.tracks.push_back(std::move(t));
    }

    if (fs::exists(dir / "ref.png")) {
        ReferenceObject ref;
        ref.image = read_png(dir / "ref.png");
        VINSERT_FATAL_CHECK(fs::exists(dir / "ref_alpha.png"), "missing ref_alpha.png");
        ref.alpha = read_png(dir / "ref_alpha.png");
        for (auto& v : ref.alpha.data) v = v >= 128.0f / 255.0f ? 1.0f : 0.0f;
        if (fs::exists(dir / "ref_keypoints.json")) {
            json kps = detail::parse_json_file(dir / "ref_keypoints.json");
            for (auto& p : kps) ref.keypoints.push_back({p.at(0).get<float>(), p.at(1).get<float>()});
        }
        b.reference = std::move(ref);
    }

    validate_scene_bundle(b);
    return b;
}

}  // namespace vinsert
