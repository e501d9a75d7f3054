#include <catch_amalgamated.hpp>

#include "vinsert/synthgen.hpp"

using namespace vinsert;

namespace {

double mask_iou(const Tensor& a, const Tensor& b) {
    double inter = 0, uni = 0;
    for (size_t i = 0; i < a.numel(); i++) {
        inter += a[i] > 0 && b[i] > 0;
        uni += a[i] > 0 || b[i] > 0;
    }
    return uni > 0 ? inter / uni : 1.0;
}

bool bundles_equal(const SceneBundle& a, const SceneBundle& b) {
    if (a.n_frames() != b.n_frames() || a.tracks.size() != b.tracks.size()) return false;
    for (int f = 0; f < a.n_frames(); f++)
        if (max_abs_diff(a.frames[f], b.frames[f]) != 0.0 || max_abs_diff(a.masks[f], b.masks[f]) != 0.0)
            return false;
    for (size_t t = 0; t < a.tracks.size(); t++)
        if (a.tracks[t].xy != b.tracks[t].xy || a.tracks[t].vis != b.tracks[t].vis) return false;
    return true;
}

}  // namespace

TEST_CASE("generate_scene is deterministic in the seed") {
    SceneBundle a = generate_scene(0, 8, 64, 64, 1);
    SceneBundle b = generate_scene(0, 8, 64, 64, 1);
    CHECK(bundles_equal(a, b));
    SceneBundle c = generate_scene(1, 8, 64, 64, 1);
    CHECK(!bundles_equal(a, c));
}

TEST_CASE("mask area positive and consecutive IoU above 0.3 over 100 seeds") {
    for (int seed = 0; seed < 100; seed++) {
        SceneBundle b = generate_scene(10000 + seed, 8, 64, 64, 1 + seed % 3);
        for (int f = 0; f < 8; f++) {
            double area = 0;
            for (float v : b.masks[f].data) area += v;
            REQUIRE(area > 0);
            if (f > 0) {
                INFO("seed " << seed << " frame " << f);
                CHECK(mask_iou(b.masks[f - 1], b.masks[f]) > 0.3);
            }
        }
    }
}

TEST_CASE("each sprite contributes at least 12 tracks with full length") {
    SceneBundle b = generate_scene(77, 8, 64, 64, 3);
    CHECK(b.tracks.size() >= 36);
    for (auto& t : b.tracks) CHECK(t.xy.size() == 8);
}

TEST_CASE("occluder produces invisible track entries") {
    bool found = false;
    for (int seed = 0; seed < 60 && !found; seed++) {
        SceneBundle b = generate_scene(seed, 8, 64, 64, 1);
        // occluders darken a full bar; detect by any invisible entry
        int invis = 0;
        for (auto& t : b.tracks)
            for (auto v : t.vis) invis += v == 0;
        if (invis > 0) found = true;
    }
    CHECK(found);
}

TEST_CASE("simulate translate: equal per-frame window intervals") {
    for (int seed = 0; seed < 20; seed++) {
        SimPlan plan = plan_sim_windows(96, 96, SimMode::Translate, 8, seed, 64, 64);
        float dx0 = plan.origins[1][0] - plan.origins[0][0];
        float dy0 = plan.origins[1][1] - plan.origins[0][1];
        for (int f = 1; f < 8; f++) {
            CHECK(std::fabs(plan.origins[f][0] - plan.origins[f - 1][0] - dx0) < 0.5f);
            CHECK(std::fabs(plan.origins[f][1] - plan.origins[f - 1][1] - dy0) < 0.5f);
        }
        CHECK(std::sqrt(dx0 * dx0 + dy0 * dy0) * 7 > 1.0f);  // never a static clip
    }
}

TEST_CASE("simulate zoom: linear scale schedule from 1.0 to the end scale") {
    SimPlan plan = plan_sim_windows(96, 96, SimMode::ZoomCrop, 5, 3, 64, 64);
    float base = plan.scales[0];
    float end = plan.scales[4] / base;
    CHECK(base == Catch::Approx(1.5f));
    CHECK(end < 1.0f);
    for (int f = 0; f < 5; f++) {
        float expect = base * (1.0f + (end - 1.0f) * f / 4.0f);
        CHECK(plan.scales[f] == Catch::Approx(expect).margin(1e-5));
    }
}

TEST_CASE("simulate rejects single-frame and too-small inputs") {
    Rng rng(5);
    Tensor img = Tensor::randn({3, 96, 96}, rng, 0.1f);
    for (auto& v : img.data) v = clampf(v + 0.5f, 0.0f, 1.0f);
    CHECK_THROWS_AS(simulate_video_from_image(img, SimMode::Translate, 1, 0, 64, 64),
                    validation_error);
    Tensor small = Tensor::randn({3, 80, 96}, rng, 0.1f);
    try {
        simulate_video_from_image(small, SimMode::Translate, 4, 0, 64, 64);
        FAIL("expected size error");
    } catch (const validation_error& e) {
        CHECK(std::string(e.what()).find("96") != std::string::npos);  // required minimum named
    }
}

TEST_CASE("simulated bundles: tracks follow the window transform, source tagged") {
    SceneBundle still = generate_scene(8, 2, 128, 128, 2);
    SceneBundle sim = simulate_video_from_image(still.frames[0], SimMode::Translate, 6, 11, 64, 64);
    CHECK(sim.meta.source == Source::ImageSimulated);
    CHECK(sim.n_frames() == 6);
    // track motion equals the (negated) window motion for translate
    SimPlan plan = plan_sim_windows(128, 128, SimMode::Translate, 6, 11, 64, 64);
    for (auto& t : sim.tracks)
        for (int f = 1; f < 6; f++) {
            if (!t.vis[f] || !t.vis[f - 1]) continue;
            float dx = t.xy[f][0] - t.xy[f - 1][0];
            float expect = -(plan.origins[f][0] - plan.origins[f - 1][0]);
            CHECK(std::fabs(dx - expect) < 1e-3f);
        }
    for (int f = 0; f < 6; f++) {
        double area = 0;
        for (float v : sim.masks[f].data) area += v;
        CHECK(area > 0);
    }
}

TEST_CASE("reference frame has the largest distance from the clip, ties to later") {
    CHECK(detail::farthest_frame(16, 0, 8) == 15);
    CHECK(detail::farthest_frame(16, 4, 8) == 15);  // 0 and 15 both at distance 4
    CHECK(detail::farthest_frame(16, 8, 8) == 0);
    CHECK(detail::farthest_frame(9, 0, 8) == 8);
}

TEST_CASE("make_training_sample: erased region, untouched outside, centered reference") {
    SceneBundle scene = generate_scene(123, 12, 64, 64, 2);
    TrainingSample s = make_training_sample(scene, 8, 77);
    REQUIRE(s.gt.size() == 8);
    REQUIRE(s.cond.size() == 8);
    CHECK_NOTHROW(validate_reference(s.ref));
    for (int f = 0; f < 8; f++) {
        const Box& b = s.boxes.boxes[f];
        int x0 = (int)std::floor(b.x0), x1 = (int)std::ceil(b.x1);
        int y0 = (int)std::floor(b.y0), y1 = (int)std::ceil(b.y1);
        for (int y = 0; y < 64; y++)
            for (int x = 0; x < 64; x++) {
                bool inside = x >= x0 && x < x1 && y >= y0 && y < y1;
                for (int c = 0; c < 3; c++) {
                    if (inside)
                        CHECK(s.cond[f].at(c, y, x) == 0.5f);
                    else
                        CHECK(s.cond[f].at(c, y, x) == s.gt[f].at(c, y, x));
                }
            }
    }
    CHECK(s.ts.size() >= 1);
    CHECK(s.traj_map.shape == std::vector<int>{8, 3, 64, 64});
    CHECK(s.kp_image.shape[1] == 64);
    CHECK(s.weights.size() == s.ts.size());

    // too-short scene: no frame outside the clip
    SceneBundle tiny = generate_scene(9, 8, 64, 64, 1);
    CHECK_THROWS_AS(make_training_sample(tiny, 8, 0), validation_error);
}

TEST_CASE("training sample from an image-simulated bundle works end to end") {
    SceneBundle still = generate_scene(31, 2, 128, 128, 1);
    SceneBundle sim = simulate_video_from_image(still.frames[0], SimMode::ZoomCrop, 10, 13, 64, 64);
    TrainingSample s = make_training_sample(sim, 8, 21);
    CHECK(s.source == Source::ImageSimulated);
    CHECK(s.ts.size() >= 1);
    // image-simulated samples always move
    float total = 0;
    for (auto& tr : s.ts.trajectories) total += tr.path_length;
    CHECK(total > 0.0f);
}
