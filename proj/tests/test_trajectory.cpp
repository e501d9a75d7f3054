#include <catch_amalgamated.hpp>

#include "vinsert/synthgen.hpp"
#include "vinsert/trajectory.hpp"

using namespace vinsert;

namespace {

TrajectoryCandidate cand_at(float x, float y, float l, int n = 4) {
    TrajectoryCandidate c;
    c.track.xy.assign(n, {x, y});
    c.track.vis.assign(n, 1);
    c.path_length = l;
    return c;
}

std::vector<TrajectoryCandidate> random_cands(Rng& rng, int n, int h, int w) {
    std::vector<TrajectoryCandidate> cands;
    for (int i = 0; i < n; i++)
        cands.push_back(cand_at((float)rng.uniform(0, w - 1), (float)rng.uniform(0, h - 1),
                                (float)rng.uniform(0, 50)));
    return cands;
}

// independent O(n^2) greedy NMS oracle
std::vector<int> nms_oracle(const std::vector<TrajectoryCandidate>& cands, float radius) {
    std::vector<int> remaining(cands.size());
    for (size_t i = 0; i < remaining.size(); i++) remaining[i] = (int)i;
    std::vector<int> kept;
    while (!remaining.empty()) {
        int best = remaining[0];
        for (int i : remaining)
            if (cands[i].path_length > cands[best].path_length) best = i;
        kept.push_back(best);
        std::vector<int> next;
        for (int i : remaining) {
            if (i == best) continue;
            float dx = cands[i].track.xy[0][0] - cands[best].track.xy[0][0];
            float dy = cands[i].track.xy[0][1] - cands[best].track.xy[0][1];
            if (std::sqrt(dx * dx + dy * dy) >= radius) next.push_back(i);
        }
        remaining = next;
    }
    return kept;
}

bool same_tracks(const TrajectoryCandidate& a, const TrajectoryCandidate& b) {
    return a.track.xy == b.track.xy && a.path_length == b.path_length;
}

}  // namespace

TEST_CASE("init_keypoints: detected tracks, grid fallback, static lengths") {
    SceneBundle b = generate_scene(7, 8, 64, 64, 1);
    auto cands = init_keypoints(b);
    CHECK(cands.size() == b.tracks.size());
    CHECK(cands.size() >= 12);
    for (auto& c : cands) CHECK(c.source == CandidateSource::DetectedKeypoint);

    SceneBundle no_tracks = b;
    no_tracks.tracks.clear();
    auto grid = init_keypoints(no_tracks);
    CHECK(grid.size() == 64);  // 8x8 grid at stride 64/8
    for (auto& c : grid) {
        CHECK(c.source == CandidateSource::Grid);
        CHECK(c.path_length == 0.0f);
    }

    SceneBundle nothing = no_tracks;
    for (auto& m : nothing.masks) m.fill(0.0f);
    CHECK_THROWS_AS(init_keypoints(nothing), validation_error);

    // static track -> l = 0
    Track still;
    still.xy.assign(8, {10.0f, 12.0f});
    still.vis.assign(8, 1);
    CHECK(track_path_length(still) == 0.0f);
}

TEST_CASE("path length sums only segments with both endpoints visible") {
    Track t;
    t.xy = {{0, 0}, {3, 4}, {6, 8}, {9, 12}};
    t.vis = {1, 1, 0, 1};
    // only segment 0->1 counts (5 px); 1->2 and 2->3 touch an invisible point
    CHECK(track_path_length(t) == Catch::Approx(5.0));
}

TEST_CASE("nms: close pair keeps larger motion; spread input comes back sorted") {
    auto a = cand_at(10, 10, 10), b = cand_at(12, 12, 4);  // ~2.8 px apart
    auto kept = nms_filter({a, b}, 5.0f);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].path_length == 10.0f);

    std::vector<TrajectoryCandidate> spread = {cand_at(0, 0, 1), cand_at(30, 0, 7), cand_at(0, 30, 4)};
    auto all = nms_filter(spread, 5.0f);
    REQUIRE(all.size() == 3);
    CHECK(all[0].path_length == 7.0f);
    CHECK(all[1].path_length == 4.0f);
    CHECK(all[2].path_length == 1.0f);
}

TEST_CASE("nms matches the brute-force greedy oracle on random sets") {
    Rng rng(1234);
    for (int trial = 0; trial < 300; trial++) {
        int n = 2 + rng.uniform_int(40);
        auto cands = random_cands(rng, n, 64, 64);
        float radius = (float)rng.uniform(2.0, 16.0);
        auto kept = nms_filter(cands, radius);
        auto oracle = nms_oracle(cands, radius);
        REQUIRE(kept.size() == oracle.size());
        for (size_t i = 0; i < kept.size(); i++) CHECK(same_tracks(kept[i], cands[oracle[i]]));
        for (size_t i = 0; i < kept.size(); i++)
            for (size_t j = i + 1; j < kept.size(); j++) {
                float dx = kept[i].track.xy[0][0] - kept[j].track.xy[0][0];
                float dy = kept[i].track.xy[0][1] - kept[j].track.xy[0][1];
                CHECK(std::sqrt(dx * dx + dy * dy) >= radius);
            }
    }
}

TEST_CASE("nms output independent of input order for distinct path lengths") {
    Rng rng(555);
    auto cands = random_cands(rng, 20, 64, 64);
    for (size_t i = 0; i < cands.size(); i++) cands[i].path_length = 2.0f * i + 1;  // distinct
    auto ref = nms_filter(cands, 8.0f);
    for (int perm = 0; perm < 10; perm++) {
        auto shuffled = cands;
        for (size_t i = shuffled.size() - 1; i > 0; i--)
            std::swap(shuffled[i], shuffled[rng.uniform_int((int)i + 1)]);
        auto kept = nms_filter(shuffled, 8.0f);
        REQUIRE(kept.size() == ref.size());
        for (size_t i = 0; i < kept.size(); i++) CHECK(same_tracks(kept[i], ref[i]));
    }
}

TEST_CASE("select_trajectories: top-n by motion with sort oracle, palette colors") {
    Rng rng(77);
    auto cands = random_cands(rng, 12, 64, 64);
    auto ts = select_trajectories(cands, 8);
    REQUIRE(ts.size() == 8);

    auto sorted = cands;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](auto& a, auto& b) { return a.path_length > b.path_length; });
    for (int i = 0; i < 8; i++) CHECK(same_tracks(ts.trajectories[i], sorted[i]));

    CHECK(select_trajectories(cands, 0).size() == 0);
    auto few = select_trajectories(random_cands(rng, 3, 64, 64), 8);
    CHECK(few.size() == 3);

    // colors pairwise distinct for n <= palette size
    for (int i = 0; i < ts.size(); i++)
        for (int j = i + 1; j < ts.size(); j++) {
            bool same = ts.colors[i].r == ts.colors[j].r && ts.colors[i].g == ts.colors[j].g &&
                        ts.colors[i].b == ts.colors[j].b;
            CHECK(!same);
        }
}

TEST_CASE("selection after nms never keeps two points within the radius") {
    Rng rng(31337);
    for (int trial = 0; trial < 50; trial++) {
        auto cands = random_cands(rng, 64, 64, 64);
        float radius = 64.0f / 16.0f;
        auto ts = select_trajectories(nms_filter(cands, radius), 8);
        for (int i = 0; i < ts.size(); i++)
            for (int j = i + 1; j < ts.size(); j++) {
                float dx = ts.trajectories[i].track.xy[0][0] - ts.trajectories[j].track.xy[0][0];
                float dy = ts.trajectories[i].track.xy[0][1] - ts.trajectories[j].track.xy[0][1];
                CHECK(std::sqrt(dx * dx + dy * dy) >= radius);
            }
    }
}

TEST_CASE("trajectory map: empty set, static disk, growing tail") {
    TrajectorySet empty;
    Tensor zero_map = rasterize_trajectory_map(empty, 4, 32, 32);
    for (float v : zero_map.data) CHECK(v == 0.0f);

    TrajectorySet single;
    single.trajectories.push_back(cand_at(16, 16, 0, 5));
    single.colors.push_back(color_palette()[0]);
    Tensor map = rasterize_trajectory_map(single, 5, 32, 32);
    size_t frame_sz = 3 * 32 * 32;
    for (int f = 1; f < 5; f++)
        for (size_t i = 0; i < frame_sz; i++)
            CHECK(map[(size_t)f * frame_sz + i] == map[i]);
    double nonzero0 = 0;
    for (size_t i = 0; i < frame_sz; i++) nonzero0 += map[i] > 0;
    CHECK(nonzero0 > 0);

    // moving point: nonzero pixel count non-decreasing over the first tail frames
    TrajectorySet moving;
    TrajectoryCandidate m;
    for (int f = 0; f < 8; f++) {
        m.track.xy.push_back({6.0f + 4 * f, 16.0f});
        m.track.vis.push_back(1);
    }
    moving.trajectories.push_back(m);
    moving.colors.push_back(color_palette()[1]);
    TrajParams par;
    Tensor mv = rasterize_trajectory_map(moving, 8, 40, 40, par);
    size_t fs = 3 * 40 * 40;
    int prev = 0;
    for (int f = 0; f <= par.tail_frames; f++) {
        int nz = 0;
        for (size_t i = 0; i < fs; i++) nz += mv[(size_t)f * fs + i] > 0;
        CHECK(nz >= prev);
        prev = nz;
    }
}

TEST_CASE("trajectory map is zero outside the dilated trajectory regions") {
    SceneBundle b = generate_scene(42, 10, 64, 64, 1);
    TrainingSample s = make_training_sample(b, 8, 3);
    TrajParams par;
    for (int f = 0; f < 8; f++) {
        Tensor region({1, 64, 64});
        for (auto& tr : s.ts.trajectories) {
            Tensor r = detail::dilated_track_region(tr.track, 64, 64, par.dilation_radius);
            for (size_t i = 0; i < r.numel(); i++) region[i] = std::max(region[i], r[i]);
        }
        for (int y = 0; y < 64; y++)
            for (int x = 0; x < 64; x++)
                if (region.at(0, y, x) == 0.0f)
                    for (int c = 0; c < 3; c++) CHECK(s.traj_map.at(0, y, x) == 0.0f);
    }
}

TEST_CASE("keypoint image: marker count, colors, missing correspondence") {
    SceneBundle b = generate_scene(50, 10, 64, 64, 1);
    TrainingSample s = make_training_sample(b, 8, 9);
    REQUIRE(s.ts.size() >= 2);
    Tensor marked = render_keypoint_image(s.ref, s.ts);
    int differing = 0;
    for (size_t i = 0; i < marked.numel(); i++) differing += marked[i] != s.ref.image[i];
    CHECK(differing > 0);

    TrajectorySet empty;
    Tensor unmarked = render_keypoint_image(s.ref, empty);
    CHECK(max_abs_diff(unmarked, s.ref.image) == 0.0);

    TrajectorySet bad = s.ts;
    bad.trajectories[1].ref_keypoint = -1;
    try {
        render_keypoint_image(s.ref, bad);
        FAIL("expected error");
    } catch (const validation_error& e) {
        CHECK(std::string(e.what()).find("1") != std::string::npos);
    }
}

TEST_CASE("box sequence: tight static box, union logic, containment, expansion nesting") {
    // static 8x8 square at (20..27)
    std::vector<Tensor> masks;
    for (int f = 0; f < 4; f++) {
        Tensor m({1, 64, 64});
        for (int y = 20; y < 28; y++)
            for (int x = 20; x < 28; x++) m.at(0, y, x) = 1.0f;
        masks.push_back(m);
    }
    BoxSequence tight = box_sequence_from_masks(masks, 0.0f, 0.1f);
    for (auto& b : tight.boxes) {
        CHECK(b.x0 == 20.0f);
        CHECK(b.x1 == 28.0f);
        CHECK(b.y0 == 20.0f);
        CHECK(b.y1 == 28.0f);
    }

    // moving square, displacement 32 = 0.5*64 -> no union at threshold 0.1
    std::vector<Tensor> moving;
    for (int f = 0; f < 4; f++) {
        Tensor m({1, 64, 64});
        int off = f * 32 / 3;
        for (int y = 10; y < 18; y++)
            for (int x = 10 + off; x < 18 + off; x++) m.at(0, y, x) = 1.0f;
        moving.push_back(m);
    }
    BoxSequence seq = box_sequence_from_masks(moving, 0.0f, 0.1f);
    CHECK(seq.boxes[0].x0 != seq.boxes[3].x0);

    // empty mask on one frame is an error naming the frame
    std::vector<Tensor> with_empty = masks;
    with_empty[2].fill(0.0f);
    try {
        box_sequence_from_masks(with_empty, 0.1f, 0.1f);
        FAIL("expected error");
    } catch (const validation_error& e) {
        CHECK(std::string(e.what()).find("2") != std::string::npos);
    }

    // expand=0.1 always contains the mask; expansion is nested
    for (int seed = 0; seed < 100; seed++) {
        SceneBundle b = generate_scene(700 + seed, 4, 64, 64, 1);
        BoxSequence s1 = box_sequence_from_masks(b.masks, 0.1f, 0.1f);
        BoxSequence s0 = box_sequence_from_masks(b.masks, 0.05f, 0.1f);
        for (int f = 0; f < 4; f++) {
            for (int y = 0; y < 64; y++)
                for (int x = 0; x < 64; x++)
                    if (b.masks[f].at(0, y, x) > 0) {
                        CHECK(s1.boxes[f].contains((float)x, (float)y));
                    }
            CHECK(s0.boxes[f].x0 >= s1.boxes[f].x0);
            CHECK(s0.boxes[f].x1 <= s1.boxes[f].x1);
            CHECK(s0.boxes[f].y0 >= s1.boxes[f].y0);
            CHECK(s0.boxes[f].y1 <= s1.boxes[f].y1);
        }
    }
}

TEST_CASE("loss weight masks: R_i ordering, empty set, pixel-count oracle") {
    TrajectorySet ts;
    TrajectoryCandidate short_t, long_t;
    for (int f = 0; f < 8; f++) {
        short_t.track.xy.push_back({10.0f + 0.5f * f, 10.0f});
        short_t.track.vis.push_back(1);
        long_t.track.xy.push_back({10.0f + 6.0f * f, 40.0f});
        long_t.track.vis.push_back(1);
    }
    ts.trajectories = {short_t, long_t};
    ts.colors = {color_palette()[0], color_palette()[1]};
    LossWeightSpec spec = trajectory_weight_masks(ts, 8, 64, 64, 4.0f, 2.0f);
    REQUIRE(spec.size() == 2);
    CHECK(spec.coverage[1] > spec.coverage[0]);  // larger motion -> larger region

    LossWeightSpec empty = trajectory_weight_masks(TrajectorySet{}, 8, 64, 64, 4.0f, 2.0f);
    CHECK(empty.empty());

    // R_i equals brute-force pixel counting (independent distance test)
    Rng rng(4242);
    for (int trial = 0; trial < 10; trial++) {
        TrajectorySet rts;
        TrajectoryCandidate c;
        for (int f = 0; f < 6; f++) {
            c.track.xy.push_back({(float)rng.uniform(5, 59), (float)rng.uniform(5, 59)});
            c.track.vis.push_back(rng.bernoulli(0.9) ? 1 : 0);
        }
        rts.trajectories = {c};
        rts.colors = {color_palette()[0]};
        float rad = (float)rng.uniform(2.0, 6.0);
        LossWeightSpec sp = trajectory_weight_masks(rts, 6, 64, 64, rad, 2.0f);
        long count = 0;
        for (int y = 0; y < 64; y++)
            for (int x = 0; x < 64; x++) {
                double best = 1e18;
                for (int f = 0; f < 6; f++) {
                    if (!c.track.vis[f]) continue;
                    bool seg = f + 1 < 6 && c.track.vis[f + 1];
                    double ax = c.track.xy[f][0], ay = c.track.xy[f][1];
                    double bx = seg ? c.track.xy[f + 1][0] : ax, by = seg ? c.track.xy[f + 1][1] : ay;
                    double dx = bx - ax, dy = by - ay, l2 = dx * dx + dy * dy;
                    double t = l2 > 0 ? std::clamp(((x - ax) * dx + (y - ay) * dy) / l2, 0.0, 1.0) : 0.0;
                    double px = ax + t * dx, py = ay + t * dy;
                    best = std::min(best, (x - px) * (x - px) + (y - py) * (y - py));
                }
                count += best <= (double)rad * rad;
            }
        double r_oracle = (double)count / (64.0 * 64.0);
        CHECK(std::fabs(sp.coverage[0] - r_oracle) < 1e-6);

        // latent mask is the 8x max-pool of the region
        CHECK(sp.traj_masks[0].shape == std::vector<int>{6, 1, 8, 8});
        for (float v : sp.traj_masks[0].data) CHECK((v == 0.0f || v == 1.0f));
    }
}
