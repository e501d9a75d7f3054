#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "vinsert/dataio.hpp"
#include "vinsert/synthgen.hpp"

using namespace vinsert;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("vinsert_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("save writes one png per frame and mask") {
    SceneBundle b = generate_scene(3, 8, 64, 64, 1);
    auto dir = temp_dir("counts");
    save_scene_bundle(b, dir);
    int frames = 0, masks = 0;
    for (auto& e : fs::directory_iterator(dir / "frames")) frames += e.is_regular_file();
    for (auto& e : fs::directory_iterator(dir / "masks")) masks += e.is_regular_file();
    CHECK(frames == 8);
    CHECK(masks == 8);
    fs::remove_all(dir);
}

TEST_CASE("out-of-range visible track coordinate is rejected") {
    SceneBundle b = generate_scene(4, 4, 64, 64, 1);
    b.tracks[0].xy[2] = {70.0f, 3.0f};
    b.tracks[0].vis[2] = 1;
    auto dir = temp_dir("range");
    CHECK_THROWS_AS(save_scene_bundle(b, dir), validation_error);
    fs::remove_all(dir);
}

TEST_CASE("save/load round-trip: frames within 1/255, sidecars byte-identical") {
    SceneBundle b = generate_scene(11, 6, 64, 48, 2);
    auto dir = temp_dir("roundtrip");
    save_scene_bundle(b, dir);
    SceneBundle r = load_scene_bundle(dir);
    REQUIRE(r.n_frames() == b.n_frames());
    for (int f = 0; f < b.n_frames(); f++) {
        CHECK(max_abs_diff(r.frames[f], b.frames[f]) <= 1.0 / 255.0 + 1e-6);
        CHECK(max_abs_diff(r.masks[f], b.masks[f]) == 0.0);
    }
    REQUIRE(r.tracks.size() == b.tracks.size());
    for (size_t t = 0; t < b.tracks.size(); t++)
        for (int f = 0; f < b.n_frames(); f++) {
            CHECK(r.tracks[t].vis[f] == b.tracks[t].vis[f]);
            CHECK(std::fabs(r.tracks[t].xy[f][0] - b.tracks[t].xy[f][0]) <= 0.0005 + 1e-6);
        }
    CHECK(r.meta.fps == b.meta.fps);
    CHECK(r.meta.source == b.meta.source);

    // save -> load -> save is byte-stable for the JSON sidecars
    std::string tracks1 = slurp(dir / "tracks.json");
    std::string meta1 = slurp(dir / "meta.json");
    auto dir2 = temp_dir("roundtrip2");
    save_scene_bundle(r, dir2);
    CHECK(slurp(dir2 / "tracks.json") == tracks1);
    CHECK(slurp(dir2 / "meta.json") == meta1);
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("reference object round-trips with keypoints") {
    SceneBundle b = generate_scene(21, 10, 64, 64, 1);
    TrainingSample s = make_training_sample(b, 8, 5);
    SceneBundle with_ref = b;
    with_ref.reference = s.ref;
    auto dir = temp_dir("ref");
    save_scene_bundle(with_ref, dir);
    SceneBundle r = load_scene_bundle(dir);
    REQUIRE(r.reference.has_value());
    CHECK(r.reference->keypoints.size() == s.ref.keypoints.size());
    CHECK(max_abs_diff(r.reference->alpha, s.ref.alpha) == 0.0);
    fs::remove_all(dir);
}

TEST_CASE("missing meta.json is fatal, naming the file") {
    SceneBundle b = generate_scene(5, 4, 64, 64, 1);
    auto dir = temp_dir("meta");
    save_scene_bundle(b, dir);
    fs::remove(dir / "meta.json");
    try {
        load_scene_bundle(dir);
        FAIL("expected fatal_error");
    } catch (const fatal_error& e) {
        CHECK(std::string(e.what()).find("meta.json") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("short track is a validation error; malformed json reports a line") {
    SceneBundle b = generate_scene(6, 4, 64, 64, 1);
    auto dir = temp_dir("badtracks");
    save_scene_bundle(b, dir);
    {
        json tracks = detail::parse_json_file(dir / "tracks.json");
        tracks[0]["xy"].erase(0);
        tracks[0]["vis"].erase(0);
        std::ofstream(dir / "tracks.json") << tracks.dump(2);
    }
    CHECK_THROWS_AS(load_scene_bundle(dir), validation_error);

    std::ofstream(dir / "tracks.json") << "[\n  {\"xy\": [[1,2}\n]";
    try {
        load_scene_bundle(dir);
        FAIL("expected parse error");
    } catch (const validation_error& e) {
        CHECK(std::string(e.what()).find("line") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("property: random invariant violations are rejected") {
    Rng rng(99);
    for (int trial = 0; trial < 20; trial++) {
        SceneBundle b = generate_scene(100 + trial, 5, 64, 64, 1);
        int kind = rng.uniform_int(4);
        switch (kind) {
            case 0:  // non-binary mask value
                b.masks[rng.uniform_int(5)][rng.uniform_int(64 * 64)] = 0.5f;
                break;
            case 1:  // frame size mismatch
                b.frames[rng.uniform_int(5)] = Tensor({3, 32, 64});
                break;
            case 2:  // track length mismatch
                b.tracks[rng.uniform_int((int)b.tracks.size())].xy.pop_back();
                b.tracks[0].vis.resize(b.tracks[0].xy.size());
                break;
            default:  // visible out-of-range coordinate
                b.tracks[0].xy[2] = {-3.0f, 1.0f};
                b.tracks[0].vis[2] = 1;
        }
        CHECK_THROWS_AS(validate_scene_bundle(b), validation_error);
    }
}

TEST_CASE("reference invariants: off-center and unzeroed background rejected") {
    ReferenceObject ref;
    ref.image = Tensor({3, 32, 32});
    ref.alpha = Tensor({1, 32, 32});
    for (int y = 12; y < 20; y++)
        for (int x = 12; x < 20; x++) {
            ref.alpha.at(0, y, x) = 1.0f;
            for (int c = 0; c < 3; c++) ref.image.at(c, y, x) = 0.5f;
        }
    CHECK_NOTHROW(validate_reference(ref));

    ReferenceObject off = ref;
    off.alpha.fill(0.0f);
    off.image.fill(0.0f);
    for (int y = 2; y < 10; y++)
        for (int x = 2; x < 10; x++) {
            off.alpha.at(0, y, x) = 1.0f;
            off.image.at(0, y, x) = 0.5f;
        }
    CHECK_THROWS_AS(validate_reference(off), validation_error);

    ReferenceObject dirty = ref;
    dirty.image.at(1, 0, 0) = 0.25f;  // background pixel not zeroed
    CHECK_THROWS_AS(validate_reference(dirty), validation_error);
}
