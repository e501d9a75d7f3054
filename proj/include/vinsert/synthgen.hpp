#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dataio.hpp"
#include "image.hpp"
#include "rng.hpp"
#include "trajectory.hpp"

namespace vinsert {

// ---------------------------------------------------------------------------
// Procedural sprite scenes with exact ground truth (silhouette masks, point
// tracks with occlusion bits), still-image video simulation for mixed
// training, and training-pair assembly.
// ---------------------------------------------------------------------------

struct SpriteSpec {
    enum class Shape { Ellipse, Polygon };
    enum class Texture { Stripes, Dots, Solid, TwoTone };
    enum class PathKind { Linear, Sine, Arc };

    Shape shape = Shape::Ellipse;
    int poly_k = 4;          // vertex count for Polygon, in {3..6}
    Rgb fill{0.8f, 0.2f, 0.2f};
    float size_frac = 0.25f; // bounding-circle diameter as fraction of min(H,W)
    Texture texture = Texture::Solid;
    PathKind path = PathKind::Linear;
    float x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // path endpoints (centers)
    float amplitude = 0;                    // sine / arc lateral offset
    float rot_rate = 0;                     // radians per frame
    bool occluder = false;                  // static bar crossing the path

    // shape geometry in object space
    float radius = 8;        // bounding circle radius in px
    float ellipse_b = 8;     // minor semi-axis
    std::vector<std::array<float, 2>> poly;  // polygon vertices
};

namespace detail {

inline std::array<float, 2> sprite_center(const SpriteSpec& s, float t) {
    float bx = s.x0 + (s.x1 - s.x0) * t;
    float by = s.y0 + (s.y1 - s.y0) * t;
    float dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    float len = std::sqrt(dx * dx + dy * dy);
    float nx = len > 0 ? -dy / len : 0.0f, ny = len > 0 ? dx / len : 1.0f;
    switch (s.path) {
        case SpriteSpec::PathKind::Linear: return {bx, by};
        case SpriteSpec::PathKind::Sine:
            return {bx + s.amplitude * std::sin(2 * (float)M_PI * t) * nx,
                    by + s.amplitude * std::sin(2 * (float)M_PI * t) * ny};
        case SpriteSpec::PathKind::Arc: {
            float w = 4 * t * (1 - t);  // bezier-style bulge, 0 at endpoints
            return {bx + s.amplitude * w * nx, by + s.amplitude * w * ny};
        }
    }
    return {bx, by};
}

inline bool point_in_poly(const std::vector<std::array<float, 2>>& poly, float x, float y) {
    bool in = false;
    size_t n = poly.size();
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
        if ((poly[i][1] > y) != (poly[j][1] > y) &&
            x < (poly[j][0] - poly[i][0]) * (y - poly[i][1]) / (poly[j][1] - poly[i][1]) + poly[i][0])
            in = !in;
    }
    return in;
}

inline bool sprite_inside(const SpriteSpec& s, float ox, float oy) {
    if (s.shape == SpriteSpec::Shape::Ellipse) {
        float a = s.radius, b = s.ellipse_b;
        return (ox * ox) / (a * a) + (oy * oy) / (b * b) <= 1.0f;
    }
    return point_in_poly(s.poly, ox, oy);
}

// min distance from the origin to a polygon edge; the sprite's narrowest
// half-width, used to bound motion and occluder size
inline float poly_inradius(const std::vector<std::array<float, 2>>& poly) {
    float best = 1e9f;
    size_t n = poly.size();
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
        float ax = poly[j][0], ay = poly[j][1], bx = poly[i][0], by = poly[i][1];
        float dx = bx - ax, dy = by - ay;
        float l2 = dx * dx + dy * dy;
        float t = l2 > 0 ? clampf((-ax * dx - ay * dy) / l2, 0.0f, 1.0f) : 0.0f;
        float px = ax + t * dx, py = ay + t * dy;
        best = std::min(best, std::sqrt(px * px + py * py));
    }
    return best;
}

inline float sprite_min_halfwidth(const SpriteSpec& s) {
    return s.shape == SpriteSpec::Shape::Ellipse ? s.ellipse_b : poly_inradius(s.poly);
}

inline Rgb sprite_texture(const SpriteSpec& s, float ox, float oy) {
    Rgb c = s.fill;
    auto dim = [](Rgb v, float f) { return Rgb{v.r * f, v.g * f, v.b * f}; };
    switch (s.texture) {
        case SpriteSpec::Texture::Solid: return c;
        case SpriteSpec::Texture::Stripes: {
            float period = std::max(3.0f, s.radius * 0.6f);
            int band = (int)std::floor((ox + 100 * period) / (period * 0.5f));
            return band % 2 == 0 ? c : dim(c, 0.45f);
        }
        case SpriteSpec::Texture::Dots: {
            float cell = std::max(3.0f, s.radius * 0.55f);
            float lx = ox - cell * std::round(ox / cell);
            float ly = oy - cell * std::round(oy / cell);
            return lx * lx + ly * ly < 0.1f * cell * cell ? dim(c, 0.35f) : c;
        }
        case SpriteSpec::Texture::TwoTone:
            return ox + oy * 0.3f < 0 ? c : Rgb{c.g, c.b, c.r};
    }
    return c;
}

struct OccluderBar {
    bool active = false;
    bool vertical = true;
    float lo = 0, hi = 0;  // covered coordinate range on the bar axis
    Rgb color{0.25f, 0.25f, 0.3f};

    bool covers(float x, float y) const {
        if (!active) return false;
        float v = vertical ? x : y;
        return v >= lo && v < hi;
    }
};

}  // namespace detail

// 4x4 supersampled rendering of one scene frame; returns the frame and the
// target sprite's silhouette coverage (before occlusion)
namespace detail {

inline void render_sprite(Tensor& img, const SpriteSpec& s, float cx, float cy, float theta,
                          Tensor* coverage_out) {
    int h = img.shape[1], w = img.shape[2];
    float ct = std::cos(theta), st = std::sin(theta);
    int x_lo = std::max(0, (int)std::floor(cx - s.radius - 1));
    int x_hi = std::min(w - 1, (int)std::ceil(cx + s.radius + 1));
    int y_lo = std::max(0, (int)std::floor(cy - s.radius - 1));
    int y_hi = std::min(h - 1, (int)std::ceil(cy + s.radius + 1));
    const int ss = 4;
    for (int y = y_lo; y <= y_hi; y++)
        for (int x = x_lo; x <= x_hi; x++) {
            int hits = 0;
            float cr = 0, cg = 0, cb = 0;
            for (int sy = 0; sy < ss; sy++)
                for (int sx = 0; sx < ss; sx++) {
                    float px = x + (sx + 0.5f) / ss - 0.5f - cx;
                    float py = y + (sy + 0.5f) / ss - 0.5f - cy;
                    float ox = ct * px + st * py;   // rotate into object space
                    float oy = -st * px + ct * py;
                    if (!sprite_inside(s, ox, oy)) continue;
                    hits++;
                    Rgb t = sprite_texture(s, ox, oy);
                    cr += t.r;
                    cg += t.g;
                    cb += t.b;
                }
            if (hits == 0) continue;
            float cov = (float)hits / (ss * ss);
            img.at(0, y, x) = img.at(0, y, x) * (1 - cov) + cr / hits * cov;
            img.at(1, y, x) = img.at(1, y, x) * (1 - cov) + cg / hits * cov;
            img.at(2, y, x) = img.at(2, y, x) * (1 - cov) + cb / hits * cov;
            if (coverage_out) coverage_out->at(0, y, x) = cov;
        }
}

// object-space ground-truth points: boundary vertices plus a 3x3 interior grid
inline std::vector<std::array<float, 2>> sprite_points(const SpriteSpec& s) {
    std::vector<std::array<float, 2>> pts;
    if (s.shape == SpriteSpec::Shape::Polygon) {
        for (auto& v : s.poly) pts.push_back({v[0] * 0.85f, v[1] * 0.85f});
    } else {
        for (int i = 0; i < 8; i++) {
            float a = (float)i / 8 * 2 * (float)M_PI;
            pts.push_back({0.85f * s.radius * std::cos(a), 0.85f * s.ellipse_b * std::sin(a)});
        }
    }
    float gx = s.radius * 0.45f;
    float gy = (s.shape == SpriteSpec::Shape::Ellipse ? s.ellipse_b : s.radius) * 0.45f;
    for (int iy = -1; iy <= 1; iy++)
        for (int ix = -1; ix <= 1; ix++) {
            std::array<float, 2> p = {ix * gx, iy * gy};
            while (!sprite_inside(s, p[0], p[1]) && (p[0] != 0 || p[1] != 0)) {
                p[0] *= 0.8f;
                p[1] *= 0.8f;
            }
            pts.push_back(p);
        }
    return pts;
}

}  // namespace detail

// Deterministic sprite video with full ground truth. Sprite 0 is the edit
// target: drawn on top, masks cover exactly its silhouette (minus the
// occluder when present).
inline SceneBundle generate_scene(uint64_t seed, int n_frames, int h, int w, int n_sprites) {
    VINSERT_CHECK(n_frames >= 2, "n_frames must be >= 2, got %d", n_frames);
    VINSERT_CHECK(h >= 32 && w >= 32, "scene must be at least 32x32, got %dx%d", h, w);
    VINSERT_CHECK(n_sprites >= 1 && n_sprites <= 3, "n_sprites must be in [1,3], got %d", n_sprites);
    Rng rng(mix_seed(seed, 0x5ce11e));

    float mind = (float)std::min(h, w);
    Rgb bg_top{(float)rng.uniform(0.12, 0.5), (float)rng.uniform(0.12, 0.5), (float)rng.uniform(0.12, 0.5)};
    Rgb bg_bot{(float)rng.uniform(0.12, 0.5), (float)rng.uniform(0.12, 0.5), (float)rng.uniform(0.12, 0.5)};

    auto sample_color = [&](const std::vector<Rgb>& taken) {
        for (int tries = 0; tries < 64; tries++) {
            float v[3] = {(float)rng.uniform(0.65, 1.0), (float)rng.uniform(0.0, 0.25),
                          (float)rng.uniform(0.2, 0.9)};
            int perm = rng.uniform_int(6);
            static const int P[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
            Rgb c{v[P[perm][0]], v[P[perm][1]], v[P[perm][2]]};
            bool ok = true;
            for (auto& t : taken) {
                float d = std::fabs(c.r - t.r) + std::fabs(c.g - t.g) + std::fabs(c.b - t.b);
                if (d < 0.6f) ok = false;
            }
            if (ok) return c;
        }
        return Rgb{(float)rng.uniform(0.3, 1.0), (float)rng.uniform(0.3, 1.0), (float)rng.uniform(0.3, 1.0)};
    };

    std::vector<Rgb> used_colors = {bg_top};
    std::vector<SpriteSpec> sprites;
    for (int i = 0; i < n_sprites; i++) {
        SpriteSpec s;
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; attempt++) {
            s = SpriteSpec{};
            s.shape = rng.bernoulli(0.5) ? SpriteSpec::Shape::Ellipse : SpriteSpec::Shape::Polygon;
            s.poly_k = 3 + rng.uniform_int(4);
            s.size_frac = (float)rng.uniform(0.16, 0.38);
            s.radius = s.size_frac * mind * 0.5f;
            s.ellipse_b = s.radius * (float)rng.uniform(0.55, 1.0);
            if (s.shape == SpriteSpec::Shape::Polygon) {
                for (int v = 0; v < s.poly_k; v++) {
                    float a = (v + (float)rng.uniform(-0.2, 0.2)) / s.poly_k * 2 * (float)M_PI;
                    float r = s.radius * (float)rng.uniform(0.65, 1.0);
                    s.poly.push_back({r * std::cos(a), r * std::sin(a)});
                }
                if (detail::poly_inradius(s.poly) < 0.4f * s.radius) continue;  // too thin
            }
            int tex = rng.uniform_int(4);
            s.texture = (SpriteSpec::Texture)tex;
            s.path = (SpriteSpec::PathKind)rng.uniform_int(3);
            s.rot_rate = rng.bernoulli(0.4) ? 0.0f : (float)rng.uniform(-0.05, 0.05);
            s.occluder = (i == 0) && rng.bernoulli(0.25);

            float min_axis = detail::sprite_min_halfwidth(s);
            float max_step = 0.5f * min_axis;
            float margin = s.radius + 2.0f;
            if (margin * 2 >= std::min(h, w) - 2) continue;
            s.x0 = (float)rng.uniform(margin, w - margin);
            s.y0 = (float)rng.uniform(margin, h - margin);
            float max_total = max_step * (n_frames - 1);
            float want = (float)rng.uniform(i == 0 ? 0.35 : 0.0, 1.0) * max_total;
            float ang = (float)rng.uniform(0, 2 * M_PI);
            s.x1 = s.x0 + want * std::cos(ang);
            s.y1 = s.y0 + want * std::sin(ang);
            s.amplitude = s.path == SpriteSpec::PathKind::Linear
                              ? 0.0f
                              : (float)rng.uniform(0, 0.5 * max_step * (n_frames - 1) / 4.0);

            bool ok = true;
            std::array<float, 2> prev{};
            for (int f = 0; f < n_frames && ok; f++) {
                auto c = detail::sprite_center(s, n_frames > 1 ? (float)f / (n_frames - 1) : 0.0f);
                if (c[0] < margin || c[0] > w - margin || c[1] < margin || c[1] > h - margin) ok = false;
                if (f > 0) {
                    float dx = c[0] - prev[0], dy = c[1] - prev[1];
                    if (std::sqrt(dx * dx + dy * dy) > max_step) ok = false;
                }
                prev = c;
            }
            if (!ok) continue;
            s.fill = sample_color(used_colors);
            placed = true;
        }
        VINSERT_FATAL_CHECK(placed, "could not place sprite %d after 100 attempts (seed %llu)", i,
                            (unsigned long long)seed);
        used_colors.push_back(s.fill);
        sprites.push_back(std::move(s));
    }

    // occluder crosses the target's path at its midpoint frame; narrower than
    // the sprite so the silhouette never vanishes behind it
    detail::OccluderBar bar;
    if (sprites[0].occluder) {
        auto mid = detail::sprite_center(sprites[0], (float)(n_frames / 2) / (n_frames - 1));
        bar.active = true;
        bar.vertical = rng.bernoulli(0.5);
        float width = std::min(0.15f * mind, detail::sprite_min_halfwidth(sprites[0]));
        float c = bar.vertical ? mid[0] : mid[1];
        bar.lo = c - width * 0.5f;
        bar.hi = c + width * 0.5f;
        bar.color = {(float)rng.uniform(0.05, 0.3), (float)rng.uniform(0.05, 0.3),
                     (float)rng.uniform(0.05, 0.3)};
    }

    SceneBundle bundle;
    bundle.meta.fps = 8.0f;
    bundle.meta.source = Source::SyntheticVideo;

    std::vector<std::vector<std::array<float, 2>>> obj_points;
    for (auto& s : sprites) obj_points.push_back(detail::sprite_points(s));

    int total_pts = 0;
    for (auto& p : obj_points) total_pts += (int)p.size();

    // second pass drops the occluder in the rare case it swallows the mask
    for (int render_pass = 0; render_pass < 2; render_pass++) {
    bool empty_mask = false;
    bundle.frames.clear();
    bundle.masks.clear();
    bundle.tracks.assign(total_pts, Track{});

    for (int f = 0; f < n_frames; f++) {
        float t = (float)f / (n_frames - 1);
        Tensor img({3, h, w});
        for (int y = 0; y < h; y++) {
            float a = h > 1 ? (float)y / (h - 1) : 0.0f;
            float r = bg_top.r + (bg_bot.r - bg_top.r) * a;
            float g = bg_top.g + (bg_bot.g - bg_top.g) * a;
            float b = bg_top.b + (bg_bot.b - bg_top.b) * a;
            for (int x = 0; x < w; x++) {
                img.at(0, y, x) = r;
                img.at(1, y, x) = g;
                img.at(2, y, x) = b;
            }
        }
        std::vector<std::array<float, 2>> centers(sprites.size());
        std::vector<float> thetas(sprites.size());
        Tensor target_cov({1, h, w});
        for (int i = (int)sprites.size() - 1; i >= 0; i--) {  // target (index 0) drawn last
            centers[i] = detail::sprite_center(sprites[i], t);
            thetas[i] = sprites[i].rot_rate * f;
            detail::render_sprite(img, sprites[i], centers[i][0], centers[i][1], thetas[i],
                                  i == 0 ? &target_cov : nullptr);
        }
        if (bar.active) {
            for (int y = 0; y < h; y++)
                for (int x = 0; x < w; x++)
                    if (bar.covers((float)x, (float)y)) {
                        img.at(0, y, x) = bar.color.r;
                        img.at(1, y, x) = bar.color.g;
                        img.at(2, y, x) = bar.color.b;
                    }
        }
        Tensor mask({1, h, w});
        float mask_area = 0;
        for (int y = 0; y < h; y++)
            for (int x = 0; x < w; x++) {
                float m = (target_cov.at(0, y, x) > 0.5f && !bar.covers((float)x, (float)y)) ? 1.0f : 0.0f;
                mask.at(0, y, x) = m;
                mask_area += m;
            }
        if (mask_area == 0.0f) empty_mask = true;

        // ground-truth tracks; a point is invisible when the occluder covers it
        // or a sprite drawn above hides it
        int base = 0;
        for (size_t i = 0; i < sprites.size(); i++) {
            float ct = std::cos(thetas[i]), st = std::sin(thetas[i]);
            for (size_t p = 0; p < obj_points[i].size(); p++) {
                float ox = obj_points[i][p][0], oy = obj_points[i][p][1];
                float px = centers[i][0] + ct * ox - st * oy;
                float py = centers[i][1] + st * ox + ct * oy;
                bool visible = !bar.covers(px, py);
                if (i != 0 && visible) {
                    float rx = px - centers[0][0], ry = py - centers[0][1];
                    float c0 = std::cos(thetas[0]), s0 = std::sin(thetas[0]);
                    if (detail::sprite_inside(sprites[0], c0 * rx + s0 * ry, -s0 * rx + c0 * ry))
                        visible = false;
                }
                Track& tr = bundle.tracks[base + p];
                tr.xy.push_back({clampf(px, 0.0f, w - 1.001f), clampf(py, 0.0f, h - 1.001f)});
                tr.vis.push_back(visible ? 1 : 0);
            }
            base += (int)obj_points[i].size();
        }
        bundle.frames.push_back(std::move(img));
        bundle.masks.push_back(std::move(mask));
    }
    if (!empty_mask || !bar.active) break;
    bar.active = false;
    }
    validate_scene_bundle(bundle);
    return bundle;
}

// --------------------------------------------------------- image simulation

enum class SimMode { Translate, ZoomCrop };

struct SimPlan {
    std::vector<std::array<float, 2>> origins;  // window origin per frame, image coords
    std::vector<float> scales;                  // window px per output px
    float obj_cx = 0, obj_cy = 0, obj_rx = 0, obj_ry = 0;  // object ellipse, image coords
};

inline SimPlan plan_sim_windows(int img_h, int img_w, SimMode mode, int n_frames, uint64_t seed,
                                int out_h, int out_w) {
    VINSERT_CHECK(n_frames >= 2, "a video needs at least 2 frames, got %d", n_frames);
    VINSERT_CHECK(img_h * 2 >= out_h * 3 && img_w * 2 >= out_w * 3,
                  "image %dx%d too small: need at least %dx%d (1.5x the output resolution)",
                  img_w, img_h, (out_w * 3 + 1) / 2, (out_h * 3 + 1) / 2);
    Rng rng(mix_seed(seed, 0x51a1));
    SimPlan plan;
    float mind = (float)std::min(out_h, out_w);
    if (mode == SimMode::Translate) {
        float ox_max = (float)(img_w - out_w), oy_max = (float)(img_h - out_h);
        float disp = (float)rng.uniform(0.15, 0.4) * mind;
        float ox0 = 0, oy0 = 0, dx = 0, dy = 0;
        for (int tries = 0; tries < 200; tries++) {
            float ang = (float)rng.uniform(0, 2 * M_PI);
            dx = disp * std::cos(ang);
            dy = disp * std::sin(ang);
            ox0 = (float)rng.uniform(0, ox_max);
            oy0 = (float)rng.uniform(0, oy_max);
            if (ox0 + dx >= 0 && ox0 + dx <= ox_max && oy0 + dy >= 0 && oy0 + dy <= oy_max) break;
            if (tries == 199) {  // fall back to the guaranteed diagonal fit
                dx = std::min(disp, ox_max) * 0.7f;
                dy = std::min(disp, oy_max) * 0.7f;
                ox0 = 0;
                oy0 = 0;
            }
        }
        for (int f = 0; f < n_frames; f++) {
            float a = (float)f / (n_frames - 1);  // equal per-frame intervals
            plan.origins.push_back({ox0 + dx * a, oy0 + dy * a});
            plan.scales.push_back(1.0f);
        }
        // object visible in every window
        float ix_lo = std::max(ox0, ox0 + dx), ix_hi = std::min(ox0, ox0 + dx) + out_w;
        float iy_lo = std::max(oy0, oy0 + dy), iy_hi = std::min(oy0, oy0 + dy) + out_h;
        plan.obj_rx = (float)rng.uniform(0.1, 0.16) * mind;
        plan.obj_ry = plan.obj_rx * (float)rng.uniform(0.7, 1.0);
        plan.obj_cx = (float)rng.uniform(ix_lo + plan.obj_rx + 2, ix_hi - plan.obj_rx - 2);
        plan.obj_cy = (float)rng.uniform(iy_lo + plan.obj_ry + 2, iy_hi - plan.obj_ry - 2);
    } else {
        float base = 1.5f;
        float s_end = (float)rng.uniform(0.55, 0.75);
        float cx_lo = base * out_w * 0.5f, cx_hi = img_w - base * out_w * 0.5f;
        float cy_lo = base * out_h * 0.5f, cy_hi = img_h - base * out_h * 0.5f;
        float cx = cx_lo >= cx_hi ? cx_lo : (float)rng.uniform(cx_lo, cx_hi);
        float cy = cy_lo >= cy_hi ? cy_lo : (float)rng.uniform(cy_lo, cy_hi);
        for (int f = 0; f < n_frames; f++) {
            float a = (float)f / (n_frames - 1);
            float s = base * (1.0f + (s_end - 1.0f) * a);  // linear in scale
            plan.origins.push_back({cx - s * out_w * 0.5f, cy - s * out_h * 0.5f});
            plan.scales.push_back(s);
        }
        float smallest = base * s_end;
        plan.obj_rx = (float)rng.uniform(0.08, 0.12) * mind * smallest;
        plan.obj_ry = plan.obj_rx * (float)rng.uniform(0.7, 1.0);
        float half_w = smallest * out_w * 0.5f - plan.obj_rx - 2;
        float half_h = smallest * out_h * 0.5f - plan.obj_ry - 2;
        plan.obj_cx = cx + (float)rng.uniform(-half_w * 0.8, half_w * 0.8);
        plan.obj_cy = cy + (float)rng.uniform(-half_h * 0.8, half_h * 0.8);
    }
    return plan;
}

// Simulates a clip from a still image by sliding (translate) or shrinking
// (zoom-crop) a sampling window at equal per-frame intervals. Tracks are the
// analytically known window-transform images of seed points on a synthetic
// elliptical "object" region.
inline SceneBundle simulate_video_from_image(const Tensor& image, SimMode mode, int n_frames,
                                             uint64_t seed, int out_h, int out_w) {
    int img_h = image.shape[1], img_w = image.shape[2];
    SimPlan plan = plan_sim_windows(img_h, img_w, mode, n_frames, seed, out_h, out_w);

    // seed points in image coords: center, inner diagonal ring, outer ring
    std::vector<std::array<float, 2>> seeds = {{plan.obj_cx, plan.obj_cy}};
    for (int i = 0; i < 8; i++) {
        float a = (float)i / 8 * 2 * (float)M_PI;
        seeds.push_back({plan.obj_cx + 0.65f * plan.obj_rx * std::cos(a),
                         plan.obj_cy + 0.65f * plan.obj_ry * std::sin(a)});
    }
    for (int i = 0; i < 4; i++) {
        float a = ((float)i + 0.5f) / 4 * 2 * (float)M_PI;
        seeds.push_back({plan.obj_cx + 0.35f * plan.obj_rx * std::cos(a),
                         plan.obj_cy + 0.35f * plan.obj_ry * std::sin(a)});
    }

    SceneBundle b;
    b.meta.fps = 8.0f;
    b.meta.source = Source::ImageSimulated;
    b.tracks.assign(seeds.size(), Track{});

    for (int f = 0; f < n_frames; f++) {
        float ox = plan.origins[f][0], oy = plan.origins[f][1], s = plan.scales[f];
        Tensor frame({3, out_h, out_w});
        Tensor mask({1, out_h, out_w});
        for (int y = 0; y < out_h; y++)
            for (int x = 0; x < out_w; x++) {
                float sx = ox + (x + 0.5f) * s - 0.5f;
                float sy = oy + (y + 0.5f) * s - 0.5f;
                for (int c = 0; c < 3; c++) frame.at(c, y, x) = bilinear(image, c, sx, sy);
                float ex = (sx - plan.obj_cx) / plan.obj_rx;
                float ey = (sy - plan.obj_cy) / plan.obj_ry;
                mask.at(0, y, x) = ex * ex + ey * ey <= 1.0f ? 1.0f : 0.0f;
            }
        for (size_t p = 0; p < seeds.size(); p++) {
            float px = (seeds[p][0] - ox + 0.5f) / s - 0.5f;
            float py = (seeds[p][1] - oy + 0.5f) / s - 0.5f;
            bool vis = px >= 0 && px < out_w && py >= 0 && py < out_h;
            b.tracks[p].xy.push_back({clampf(px, 0.0f, out_w - 1.001f), clampf(py, 0.0f, out_h - 1.001f)});
            b.tracks[p].vis.push_back(vis ? 1 : 0);
        }
        b.frames.push_back(std::move(frame));
        b.masks.push_back(std::move(mask));
    }
    validate_scene_bundle(b);
    return b;
}

// ---------------------------------------------------------- training pairs

struct SampleParams {
    int clip_len = 8;
    int ref_size = 64;        // reference crop resolution
    float fill_value = 0.5f;  // erased-region gray
    float crop_margin = 1.4f; // crop side over mask bbox side
    TrajParams traj;
};

struct TrainingSample {
    std::vector<Tensor> gt;     // ground-truth clip, [3,H,W] each
    std::vector<Tensor> cond;   // clip with the box region erased
    std::vector<Tensor> masks;  // [1,H,W] each
    ReferenceObject ref;
    TrajectorySet ts;
    Tensor traj_map;  // [L,3,H,W]
    Tensor kp_image;  // [3,S,S]
    BoxSequence boxes;
    LossWeightSpec weights;
    Source source = Source::SyntheticVideo;
    int clip_start = 0;
    int ref_frame = -1;
};

namespace detail {

// the frame with the largest temporal distance from the clip; ties go to the
// later frame
inline int farthest_frame(int n_frames, int clip_start, int clip_len) {
    int best = -1, best_d = -1;
    for (int j = 0; j < n_frames; j++) {
        int d = j < clip_start ? clip_start - j
                               : (j >= clip_start + clip_len ? j - (clip_start + clip_len - 1) : 0);
        if (d > 0 && d >= best_d) {
            best_d = d;
            best = j;
        }
    }
    return best;
}

inline ReferenceObject build_reference(const SceneBundle& scene, int r, int ref_size,
                                       float crop_margin, std::vector<int>& target_tracks_out) {
    const Tensor& frame = scene.frames[r];
    const Tensor& mask = scene.masks[r];
    int h = mask.shape[1], w = mask.shape[2];
    double cx = 0, cy = 0, area = 0;
    Box bbox = tight_mask_box(mask, r);
    for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++)
            if (mask.at(0, y, x) > 0) {
                cx += x;
                cy += y;
                area += 1;
            }
    cx /= area;
    cy /= area;
    float side = std::max(bbox.w(), bbox.h()) * crop_margin;
    int S = ref_size;

    ReferenceObject ref;
    ref.image = Tensor({3, S, S});
    ref.alpha = Tensor({1, S, S});
    for (int y = 0; y < S; y++)
        for (int x = 0; x < S; x++) {
            float sx_c = (float)cx + (x + 0.5f - S * 0.5f) * side / S;
            float sy_c = (float)cy + (y + 0.5f - S * 0.5f) * side / S;
            float a = bilinear(mask, 0, sx_c, sy_c) >= 0.5f ? 1.0f : 0.0f;
            ref.alpha.at(0, y, x) = a;
            for (int c = 0; c < 3; c++) ref.image.at(c, y, x) = a * bilinear(frame, c, sx_c, sy_c);
        }
    target_tracks_out.clear();
    for (size_t i = 0; i < scene.tracks.size(); i++) {
        const Track& tr = scene.tracks[i];
        float px = tr.xy[r][0], py = tr.xy[r][1];
        int ix = (int)std::lround(px), iy = (int)std::lround(py);
        bool inside = ix >= 0 && ix < w && iy >= 0 && iy < h && mask.at(0, iy, ix) > 0;
        if (!tr.vis[r] || !inside) continue;
        float kx = (px - (float)cx) * S / side + S * 0.5f - 0.5f;
        float ky = (py - (float)cy) * S / side + S * 0.5f - 0.5f;
        if (kx < 0 || kx >= S || ky < 0 || ky >= S) continue;
        ref.keypoints.push_back({kx, ky});
        target_tracks_out.push_back((int)i);
    }
    return ref;
}

}  // namespace detail

// Assembles one training pair from a scene: a clip, the farthest frame's
// object crop as reference, the trajectory conditions, boxes, erased video
// and loss weights. All of it comes from the same video.
inline TrainingSample make_training_sample(const SceneBundle& scene, int clip_len, uint64_t seed,
                                           const SampleParams& par = {}) {
    VINSERT_CHECK(scene.n_frames() >= clip_len + 1,
                  "scene has %d frames; need at least clip_len+1 = %d so a reference frame exists "
                  "outside the clip",
                  scene.n_frames(), clip_len + 1);
    Rng rng(mix_seed(seed, 0x7a1e));
    int h = scene.height(), w = scene.width();
    int start = rng.uniform_int(scene.n_frames() - clip_len + 1);
    int r = detail::farthest_frame(scene.n_frames(), start, clip_len);
    VINSERT_CHECK(r >= 0, "no frame outside the clip");

    TrainingSample s;
    s.clip_start = start;
    s.ref_frame = r;
    s.source = scene.meta.source;

    std::vector<int> target_tracks;
    s.ref = detail::build_reference(scene, r, par.ref_size, par.crop_margin, target_tracks);
    VINSERT_CHECK(!target_tracks.empty(), "no ground-truth points on the target at frame %d", r);

    std::vector<TrajectoryCandidate> cands;
    for (size_t j = 0; j < target_tracks.size(); j++) {
        const Track& full = scene.tracks[target_tracks[j]];
        TrajectoryCandidate c;
        c.track.xy.assign(full.xy.begin() + start, full.xy.begin() + start + clip_len);
        c.track.vis.assign(full.vis.begin() + start, full.vis.begin() + start + clip_len);
        c.path_length = track_path_length(c.track);
        c.source = CandidateSource::DetectedKeypoint;
        c.ref_keypoint = (int)j;
        cands.push_back(std::move(c));
    }
    auto kept = nms_filter(cands, par.traj.nms_radius(h, w));
    s.ts = select_trajectories(kept, par.traj.n_select);

    for (int f = start; f < start + clip_len; f++) {
        s.gt.push_back(scene.frames[f]);
        s.masks.push_back(scene.masks[f]);
    }
    s.boxes = box_sequence_from_masks(s.masks, par.traj.box_expand, par.traj.union_threshold);

    for (int f = 0; f < clip_len; f++) {
        Tensor cond = s.gt[f];
        const Box& b = s.boxes.boxes[f];
        int x0 = std::max(0, (int)std::floor(b.x0)), x1 = std::min(w, (int)std::ceil(b.x1));
        int y0 = std::max(0, (int)std::floor(b.y0)), y1 = std::min(h, (int)std::ceil(b.y1));
        for (int c = 0; c < 3; c++)
            for (int y = y0; y < y1; y++)
                for (int x = x0; x < x1; x++) cond.at(c, y, x) = par.fill_value;
        s.cond.push_back(std::move(cond));
    }

    s.traj_map = rasterize_trajectory_map(s.ts, clip_len, h, w, par.traj);
    s.kp_image = render_keypoint_image(s.ref, s.ts, par.traj);
    s.weights = trajectory_weight_masks(s.ts, clip_len, h, w, par.traj.dilation_radius, par.traj.lambda);
    return s;
}

}  // namespace vinsert
