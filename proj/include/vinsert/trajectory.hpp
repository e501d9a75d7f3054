#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dataio.hpp"
#include "image.hpp"

namespace vinsert {

// ---------------------------------------------------------------------------
// Trajectory sampling: keypoint init -> NMS -> top-N by path length, then the
// rasterized control signals (trajectory map, keypoint image), box sequences
// and the loss-weight masks.
// ---------------------------------------------------------------------------

enum class CandidateSource { DetectedKeypoint, Grid };

struct TrajectoryCandidate {
    Track track;
    float path_length = 0.0f;      // l_i, summed over segments with both ends visible
    CandidateSource source = CandidateSource::DetectedKeypoint;
    int ref_keypoint = -1;         // index into ReferenceObject::keypoints, -1 if none
};

struct TrajectorySet {
    std::vector<TrajectoryCandidate> trajectories;
    std::vector<Rgb> colors;  // one per trajectory, pairwise distinct assignment

    int size() const { return (int)trajectories.size(); }
    bool empty() const { return trajectories.empty(); }
};

struct BoxSequence {
    std::vector<Box> boxes;  // one per frame
    float expand = 0.0f;
};

struct LossWeightSpec {
    std::vector<Tensor> traj_masks;  // A_trj^i, each [N,1,H/8,W/8], binary
    std::vector<float> coverage;     // R_i, full-resolution area fractions
    float lambda = 2.0f;

    int size() const { return (int)traj_masks.size(); }
    bool empty() const { return traj_masks.empty(); }
};

struct TrajParams {
    int n_select = 8;              // points kept for trajectory generation
    float nms_radius_frac = 1.0f / 16.0f;  // of min(H,W)
    float disk_radius = 2.0f;
    int tail_frames = 4;           // fading polyline length in the trajectory map
    float box_expand = 0.1f;
    float union_threshold = 0.1f;  // of min(H,W), on max center displacement
    float dilation_radius = 4.0f;  // loss-weight region half-width
    float lambda = 12.0f;          // balancing loss weight

    float nms_radius(int h, int w) const { return nms_radius_frac * std::min(h, w); }
};

inline float track_path_length(const Track& t) {
    double l = 0;
    for (size_t f = 1; f < t.xy.size(); f++) {
        if (!t.vis[f - 1] || !t.vis[f]) continue;
        double dx = t.xy[f][0] - t.xy[f - 1][0];
        double dy = t.xy[f][1] - t.xy[f - 1][1];
        l += std::sqrt(dx * dx + dy * dy);
    }
    return (float)l;
}

// Candidates come from the bundle's tracks (the detected keypoints). A bundle
// without tracks falls back to a static regular grid with stride H/8.
inline std::vector<TrajectoryCandidate> init_keypoints(const SceneBundle& bundle) {
    std::vector<TrajectoryCandidate> out;
    if (!bundle.tracks.empty()) {
        int n_kp = bundle.reference ? (int)bundle.reference->keypoints.size() : 0;
        for (size_t i = 0; i < bundle.tracks.size(); i++) {
            TrajectoryCandidate c;
            c.track = bundle.tracks[i];
            c.path_length = track_path_length(c.track);
            c.source = CandidateSource::DetectedKeypoint;
            c.ref_keypoint = (int)i < n_kp ? (int)i : -1;
            out.push_back(std::move(c));
        }
        return out;
    }
    bool any_mask = false;
    for (auto& m : bundle.masks)
        for (float v : m.data)
            if (v > 0) {
                any_mask = true;
                break;
            }
    VINSERT_CHECK(any_mask, "bundle has no tracks and no maskable region");
    int h = bundle.height(), w = bundle.width(), n = bundle.n_frames();
    int stride = std::max(1, h / 8);
    for (float y = stride * 0.5f; y < h; y += stride)
        for (float x = stride * 0.5f; x < w; x += stride) {
            TrajectoryCandidate c;
            c.track.xy.assign(n, {x, y});
            c.track.vis.assign(n, 1);
            c.path_length = 0.0f;
            c.source = CandidateSource::Grid;
            out.push_back(std::move(c));
        }
    return out;
}

// Greedy NMS keyed on descending path length: keep the largest-motion
// candidate, drop everything within `radius` of its first-frame position,
// repeat. Ties keep input order. Output is in keep order.
inline std::vector<TrajectoryCandidate> nms_filter(const std::vector<TrajectoryCandidate>& cands,
                                                   float radius) {
    VINSERT_CHECK(radius > 0, "NMS radius must be positive");
    std::vector<int> order(cands.size());
    for (size_t i = 0; i < order.size(); i++) order[i] = (int)i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return cands[a].path_length > cands[b].path_length; });
    std::vector<TrajectoryCandidate> kept;
    std::vector<std::array<float, 2>> kept_pos;
    for (int idx : order) {
        const auto& p = cands[idx].track.xy[0];
        bool suppressed = false;
        for (auto& q : kept_pos) {
            float dx = p[0] - q[0], dy = p[1] - q[1];
            if (std::sqrt(dx * dx + dy * dy) < radius) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) {
            kept.push_back(cands[idx]);
            kept_pos.push_back(p);
        }
    }
    return kept;
}

// Top n_sel by path length (stable), palette colors assigned in keep order.
inline TrajectorySet select_trajectories(const std::vector<TrajectoryCandidate>& cands, int n_sel) {
    std::vector<int> order(cands.size());
    for (size_t i = 0; i < order.size(); i++) order[i] = (int)i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return cands[a].path_length > cands[b].path_length; });
    if ((int)cands.size() < n_sel)
        log_warn(format_str("only %zu trajectory candidates for n_sel=%d; keeping all",
                            cands.size(), n_sel));
    TrajectorySet ts;
    for (int i = 0; i < (int)order.size() && i < n_sel; i++) {
        ts.trajectories.push_back(cands[order[i]]);
        ts.colors.push_back(color_palette()[(ts.trajectories.size() - 1) % color_palette().size()]);
    }
    return ts;
}

// c_mot: per frame, a disk at the current position plus a polyline over the
// last tail_frames frames with linearly fading intensity. Pixels not touched
// by any trajectory stay exactly zero.
inline Tensor rasterize_trajectory_map(const TrajectorySet& ts, int n_frames, int h, int w,
                                       const TrajParams& par = {}) {
    Tensor map({n_frames, 3, h, w});
    for (int f = 0; f < n_frames; f++) {
        Tensor frame({3, h, w});
        for (int j = 0; j < ts.size(); j++) {
            const Track& tr = ts.trajectories[j].track;
            VINSERT_CHECK((int)tr.xy.size() == n_frames, "trajectory %d has %zu entries for %d frames",
                          j, tr.xy.size(), n_frames);
            Rgb col = ts.colors[j];
            int lo = std::max(0, f - par.tail_frames);
            for (int g = lo; g < f; g++) {
                if (!tr.vis[g] || !tr.vis[g + 1]) continue;
                float fade = 1.0f - (float)(f - g) / (par.tail_frames + 1);
                draw_segment(frame, tr.xy[g][0], tr.xy[g][1], tr.xy[g + 1][0], tr.xy[g + 1][1],
                             par.disk_radius * 0.5f, col, fade);
            }
            if (tr.vis[f]) draw_disk(frame, tr.xy[f][0], tr.xy[f][1], par.disk_radius, col);
        }
        std::copy(frame.data.begin(), frame.data.end(), map.data.begin() + (size_t)f * 3 * h * w);
    }
    return map;
}

// c_ref-key: the reference crop with each selected trajectory's keypoint
// marked in the trajectory's color.
inline Tensor render_keypoint_image(const ReferenceObject& ref, const TrajectorySet& ts,
                                    const TrajParams& par = {}) {
    Tensor img = ref.image;
    for (int j = 0; j < ts.size(); j++) {
        int kp = ts.trajectories[j].ref_keypoint;
        VINSERT_CHECK(kp >= 0 && kp < (int)ref.keypoints.size(),
                      "trajectory %d has no reference keypoint correspondence", j);
        draw_disk(img, ref.keypoints[kp][0], ref.keypoints[kp][1], par.disk_radius, ts.colors[j]);
    }
    return img;
}

inline Box tight_mask_box(const Tensor& mask, int frame_idx_for_error) {
    int h = mask.shape[1], w = mask.shape[2];
    int x0 = w, y0 = h, x1 = -1, y1 = -1;
    for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++)
            if (mask.at(0, y, x) > 0) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    VINSERT_CHECK(x1 >= 0, "frame %d has an empty mask", frame_idx_for_error);
    return {(float)x0, (float)y0, (float)(x1 + 1), (float)(y1 + 1)};
}

// Per-frame tight boxes inflated by expand x (side) per side and clipped to
// the frame; when the boxes barely move, they are replaced by their union.
inline BoxSequence box_sequence_from_masks(const std::vector<Tensor>& masks, float expand,
                                           float union_threshold) {
    VINSERT_CHECK(!masks.empty(), "box_sequence_from_masks: no masks");
    VINSERT_CHECK(expand >= 0, "expand must be >= 0");
    int h = masks[0].shape[1], w = masks[0].shape[2];
    BoxSequence seq;
    seq.expand = expand;
    for (size_t f = 0; f < masks.size(); f++) {
        Box b = tight_mask_box(masks[f], (int)f);
        float ex = expand * b.w(), ey = expand * b.h();
        b = {clampf(b.x0 - ex, 0, (float)w), clampf(b.y0 - ey, 0, (float)h),
             clampf(b.x1 + ex, 0, (float)w), clampf(b.y1 + ey, 0, (float)h)};
        seq.boxes.push_back(b);
    }
    float max_disp = 0;
    for (size_t a = 0; a < seq.boxes.size(); a++)
        for (size_t b = a + 1; b < seq.boxes.size(); b++) {
            float dx = seq.boxes[a].cx() - seq.boxes[b].cx();
            float dy = seq.boxes[a].cy() - seq.boxes[b].cy();
            max_disp = std::max(max_disp, std::sqrt(dx * dx + dy * dy));
        }
    if (max_disp < union_threshold * std::min(h, w)) {
        Box u = seq.boxes[0];
        for (auto& b : seq.boxes) u = u.united(b);
        for (auto& b : seq.boxes) b = u;
    }
    return seq;
}

namespace detail {

// binary region: pixels within dilation_radius of the track's polyline
// (visible segments) or of any isolated visible point
inline Tensor dilated_track_region(const Track& tr, int h, int w, float radius) {
    Tensor region({1, h, w});
    auto stamp_near = [&](float ax, float ay, float bx, float by) {
        int x_lo = std::max(0, (int)std::floor(std::min(ax, bx) - radius));
        int x_hi = std::min(w - 1, (int)std::ceil(std::max(ax, bx) + radius));
        int y_lo = std::max(0, (int)std::floor(std::min(ay, by) - radius));
        int y_hi = std::min(h - 1, (int)std::ceil(std::max(ay, by) + radius));
        float dx = bx - ax, dy = by - ay;
        float len2 = dx * dx + dy * dy;
        for (int y = y_lo; y <= y_hi; y++)
            for (int x = x_lo; x <= x_hi; x++) {
                float t = len2 > 0 ? clampf(((x - ax) * dx + (y - ay) * dy) / len2, 0.f, 1.f) : 0.f;
                float px = ax + t * dx, py = ay + t * dy;
                float d2 = (x - px) * (x - px) + (y - py) * (y - py);
                if (d2 <= radius * radius) region.at(0, y, x) = 1.0f;
            }
    };
    for (size_t f = 0; f < tr.xy.size(); f++) {
        if (!tr.vis[f]) continue;
        if (f + 1 < tr.xy.size() && tr.vis[f + 1])
            stamp_near(tr.xy[f][0], tr.xy[f][1], tr.xy[f + 1][0], tr.xy[f + 1][1]);
        else
            stamp_near(tr.xy[f][0], tr.xy[f][1], tr.xy[f][0], tr.xy[f][1]);
    }
    return region;
}

}  // namespace detail

// Per trajectory: rasterize the full track polyline at full resolution,
// dilate, take the area fraction as R_i, then 8x max-pool down to the latent
// grid. The region is shared by all frames of the clip.
inline LossWeightSpec trajectory_weight_masks(const TrajectorySet& ts, int n_frames, int h, int w,
                                              float dilation_radius, float lambda) {
    VINSERT_CHECK(dilation_radius > 0, "dilation_radius must be positive");
    VINSERT_CHECK(lambda > 0, "lambda must be positive");
    LossWeightSpec spec;
    spec.lambda = lambda;
    int hl = h / 8, wl = w / 8;
    for (int i = 0; i < ts.size(); i++) {
        Tensor region = detail::dilated_track_region(ts.trajectories[i].track, h, w, dilation_radius);
        double area = 0;
        for (float v : region.data) area += v;
        spec.coverage.push_back((float)(area / ((double)h * w)));
        Tensor lat = max_pool(region, 8);
        Tensor per_frame({n_frames, 1, hl, wl});
        for (int f = 0; f < n_frames; f++)
            std::copy(lat.data.begin(), lat.data.end(), per_frame.data.begin() + (size_t)f * hl * wl);
        spec.traj_masks.push_back(std::move(per_frame));
    }
    return spec;
}

}  // namespace vinsert
