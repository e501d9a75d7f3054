#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "tensor.hpp"

namespace vinsert {

struct Box {
    float x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open-ish pixel coords, x1/y1 inclusive-exclusive by convention of use
    float w() const { return x1 - x0; }
    float h() const { return y1 - y0; }
    float cx() const { return 0.5f * (x0 + x1); }
    float cy() const { return 0.5f * (y0 + y1); }
    Box united(const Box& o) const {
        return {std::min(x0, o.x0), std::min(y0, o.y0), std::max(x1, o.x1), std::max(y1, o.y1)};
    }
    bool contains(float x, float y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

struct Rgb {
    float r, g, b;
};

// 16 well-separated colors for trajectory identities
inline const std::array<Rgb, 16>& color_palette() {
    static const std::array<Rgb, 16> p = {{
        {1.00f, 0.10f, 0.10f}, {0.10f, 0.90f, 0.10f}, {0.15f, 0.30f, 1.00f}, {1.00f, 0.90f, 0.10f},
        {1.00f, 0.20f, 1.00f}, {0.10f, 0.95f, 0.95f}, {1.00f, 0.55f, 0.10f}, {0.55f, 0.15f, 0.95f},
        {0.55f, 0.95f, 0.15f}, {0.95f, 0.45f, 0.60f}, {0.20f, 0.55f, 0.50f}, {0.60f, 0.40f, 0.20f},
        {0.35f, 0.70f, 1.00f}, {0.70f, 0.05f, 0.35f}, {0.45f, 0.50f, 0.95f}, {0.90f, 0.80f, 0.55f},
    }};
    return p;
}

inline float clampf(float v, float lo, float hi) { return v < lo ? lo : (v > hi ? hi : v); }

// bilinear sample with border clamp; (x, y) in pixel-center coordinates
inline float bilinear(const Tensor& img, int c, float x, float y) {
    int h = img.shape[img.ndim() - 2], w = img.shape[img.ndim() - 1];
    x = clampf(x, 0.0f, (float)(w - 1));
    y = clampf(y, 0.0f, (float)(h - 1));
    int x0 = (int)std::floor(x), y0 = (int)std::floor(y);
    int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    float fx = x - x0, fy = y - y0;
    float v00 = img.at(c, y0, x0), v01 = img.at(c, y0, x1);
    float v10 = img.at(c, y1, x0), v11 = img.at(c, y1, x1);
    return (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy;
}

inline Tensor resize_bilinear(const Tensor& img, int oh, int ow) {
    int c = img.shape[0], h = img.shape[1], w = img.shape[2];
    Tensor out({c, oh, ow});
    float sx = (float)w / ow, sy = (float)h / oh;
    for (int ch = 0; ch < c; ch++)
        for (int y = 0; y < oh; y++)
            for (int x = 0; x < ow; x++)
                out.at(ch, y, x) = bilinear(img, ch, (x + 0.5f) * sx - 0.5f, (y + 0.5f) * sy - 0.5f);
    return out;
}

// square patch of side `size` sampled bilinearly, centered at continuous (cx, cy)
inline Tensor extract_patch(const Tensor& img, float cx, float cy, int size) {
    int c = img.shape[0];
    Tensor out({c, size, size});
    float half = (size - 1) * 0.5f;
    for (int ch = 0; ch < c; ch++)
        for (int y = 0; y < size; y++)
            for (int x = 0; x < size; x++)
                out.at(ch, y, x) = bilinear(img, ch, cx + x - half, cy + y - half);
    return out;
}

// antialiased solid disk, color scaled by intensity, max-composited onto img
inline void draw_disk(Tensor& img, float cx, float cy, float radius, Rgb color, float intensity = 1.0f) {
    int h = img.shape[1], w = img.shape[2];
    int x_lo = std::max(0, (int)std::floor(cx - radius - 1));
    int x_hi = std::min(w - 1, (int)std::ceil(cx + radius + 1));
    int y_lo = std::max(0, (int)std::floor(cy - radius - 1));
    int y_hi = std::min(h - 1, (int)std::ceil(cy + radius + 1));
    for (int y = y_lo; y <= y_hi; y++)
        for (int x = x_lo; x <= x_hi; x++) {
            float d = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy));
            float cov = clampf(radius + 0.5f - d, 0.0f, 1.0f) * intensity;
            if (cov <= 0.0f) continue;
            img.at(0, y, x) = std::max(img.at(0, y, x), color.r * cov);
            img.at(1, y, x) = std::max(img.at(1, y, x), color.g * cov);
            img.at(2, y, x) = std::max(img.at(2, y, x), color.b * cov);
        }
}

// thick antialiased segment (capsule), max-composited
inline void draw_segment(Tensor& img, float x0, float y0, float x1, float y1, float radius,
                         Rgb color, float intensity = 1.0f) {
    int h = img.shape[1], w = img.shape[2];
    float lx = std::min(x0, x1) - radius - 1, hx = std::max(x0, x1) + radius + 1;
    float ly = std::min(y0, y1) - radius - 1, hy = std::max(y0, y1) + radius + 1;
    int xa = std::max(0, (int)std::floor(lx)), xb = std::min(w - 1, (int)std::ceil(hx));
    int ya = std::max(0, (int)std::floor(ly)), yb = std::min(h - 1, (int)std::ceil(hy));
    float dx = x1 - x0, dy = y1 - y0;
    float len2 = dx * dx + dy * dy;
    for (int y = ya; y <= yb; y++)
        for (int x = xa; x <= xb; x++) {
            float t = len2 > 0 ? clampf(((x - x0) * dx + (y - y0) * dy) / len2, 0.0f, 1.0f) : 0.0f;
            float px = x0 + t * dx, py = y0 + t * dy;
            float d = std::sqrt((x - px) * (x - px) + (y - py) * (y - py));
            float cov = clampf(radius + 0.5f - d, 0.0f, 1.0f) * intensity;
            if (cov <= 0.0f) continue;
            img.at(0, y, x) = std::max(img.at(0, y, x), color.r * cov);
            img.at(1, y, x) = std::max(img.at(1, y, x), color.g * cov);
            img.at(2, y, x) = std::max(img.at(2, y, x), color.b * cov);
        }
}

// per-pixel overlap fraction of an axis-aligned rectangle with each pixel cell
// of an out_h x out_w raster; rectangle coords are in that raster's pixel units
inline Tensor rect_coverage(int out_h, int out_w, float x0, float y0, float x1, float y1) {
    Tensor out({1, out_h, out_w});
    for (int y = 0; y < out_h; y++) {
        float oy = std::max(0.0f, std::min((float)y + 1, y1) - std::max((float)y, y0));
        if (oy <= 0) continue;
        for (int x = 0; x < out_w; x++) {
            float ox = std::max(0.0f, std::min((float)x + 1, x1) - std::max((float)x, x0));
            out.at(0, y, x) = ox * oy;
        }
    }
    return out;
}

// area-average pooling by integer factor k: [C,H,W] -> [C,H/k,W/k]
inline Tensor avg_pool(const Tensor& img, int k) {
    int c = img.shape[0], h = img.shape[1], w = img.shape[2];
    Tensor out({c, h / k, w / k});
    for (int ch = 0; ch < c; ch++)
        for (int y = 0; y < h / k; y++)
            for (int x = 0; x < w / k; x++) {
                float acc = 0;
                for (int dy = 0; dy < k; dy++)
                    for (int dx = 0; dx < k; dx++) acc += img.at(ch, y * k + dy, x * k + dx);
                out.at(ch, y, x) = acc / (k * k);
            }
    return out;
}

inline Tensor max_pool(const Tensor& img, int k) {
    int c = img.shape[0], h = img.shape[1], w = img.shape[2];
    Tensor out({c, h / k, w / k});
    for (int ch = 0; ch < c; ch++)
        for (int y = 0; y < h / k; y++)
            for (int x = 0; x < w / k; x++) {
                float m = img.at(ch, y * k, x * k);
                for (int dy = 0; dy < k; dy++)
                    for (int dx = 0; dx < k; dx++) m = std::max(m, img.at(ch, y * k + dy, x * k + dx));
                out.at(ch, y, x) = m;
            }
    return out;
}

}  // namespace vinsert
