#include <catch2/catch_amalgamated.hpp>

#include "moma/data.hpp"

using namespace moma;

namespace {

SyntheticTask motion_task() {
    SyntheticTask t;
    t.kind = TaskKind::MotionDirection;
    t.noise = 0.0;
    t.frames = 8;
    t.height = t.width = 16;
    return t;
}

}  // namespace

TEST_CASE("reversing an up sample yields a valid down sample, bit-exact") {
    SyntheticTask task = motion_task();
    const long long span = static_cast<long long>(task.height - task.height / task.frames);

    MotionStarts st{5, 3, 9, 12};
    // up = (v: up, h: right); the reversed clip is a down = (v: down, h: left)
    // clip started where the up clip ended: v at vy0 - span, h at hx0 + span.
    VideoPixels up = render_motion(task, 0, st);
    MotionStarts rev_start{st.vy0 - span, st.vx, st.hy, st.hx0 + span};
    VideoPixels down = render_motion(task, 1, rev_start);

    VideoPixels reversed = reverse_frames(up);
    REQUIRE(reversed.pixels.size() == down.pixels.size());
    for (size_t i = 0; i < reversed.pixels.size(); ++i) CHECK(reversed.pixels[i] == down.pixels[i]);

    // left = (v: up, h: left) reversed is right = (v: down, h: right)
    VideoPixels left = render_motion(task, 2, st);
    VideoPixels right = render_motion(task, 3, {st.vy0 - span, st.vx, st.hy, st.hx0 - span});
    VideoPixels left_rev = reverse_frames(left);
    for (size_t i = 0; i < left_rev.pixels.size(); ++i) CHECK(left_rev.pixels[i] == right.pixels[i]);
}

TEST_CASE("every motion class paints the same visited-cell trail") {
    // Full wrap cycles mean each class sweeps the whole column and the whole
    // row; the per-frame positions, not the trail, carry the label.
    SyntheticTask task = motion_task();
    MotionStarts st{2, 7, 11, 4};
    auto visited = [&](size_t label) {
        VideoPixels v = render_motion(task, label, st);
        std::vector<bool> hit(v.height * v.width, false);
        for (size_t t = 0; t < v.frames; ++t)
            for (size_t y = 0; y < v.height; ++y)
                for (size_t x = 0; x < v.width; ++x)
                    if (v.at(t, y, x) > 0.0) hit[y * v.width + x] = true;
        return hit;
    };
    const auto up = visited(0);
    CHECK(visited(1) == up);
    CHECK(visited(2) == up);
    CHECK(visited(3) == up);
}

TEST_CASE("reversal-paired classes share frame multisets") {
    SyntheticTask task = motion_task();
    const long long span = static_cast<long long>(task.height - task.height / task.frames);
    MotionStarts st{2, 7, 11, 4};
    auto sorted_frames = [&](size_t label, MotionStarts s) {
        VideoPixels v = render_motion(task, label, s);
        std::vector<std::vector<double>> frames;
        const size_t fsz = v.height * v.width;
        for (size_t t = 0; t < v.frames; ++t)
            frames.emplace_back(v.pixels.begin() + static_cast<long>(t * fsz),
                                v.pixels.begin() + static_cast<long>((t + 1) * fsz));
        std::sort(frames.begin(), frames.end());
        return frames;
    };
    CHECK(sorted_frames(0, st) == sorted_frames(1, {st.vy0 - span, st.vx, st.hy, st.hx0 + span}));
    CHECK(sorted_frames(2, st) == sorted_frames(3, {st.vy0 - span, st.vx, st.hy, st.hx0 - span}));
}

TEST_CASE("static texture is frame-permutation invariant") {
    SyntheticTask task = motion_task();
    task.kind = TaskKind::StaticTexture;
    Rng rng(3);
    VideoSample s = gen_static_sample(task, 2, rng);
    VideoPixels shuffled = permute_frames(s.video, {3, 1, 7, 0, 5, 2, 6, 4});
    for (size_t i = 0; i < s.video.pixels.size(); ++i) CHECK(shuffled.pixels[i] == s.video.pixels[i]);
}

TEST_CASE("label balance is exact when N is divisible by K") {
    SyntheticTask task = motion_task();
    task.samples = 40;
    Dataset ds = gen_task(task);
    CHECK(ds.train.size() == 32);
    CHECK(ds.val.size() == 8);
    size_t counts[4] = {0, 0, 0, 0};
    for (const auto& s : ds.train) ++counts[s.label];
    for (const auto& s : ds.val) ++counts[s.label];
    for (size_t k = 0; k < 4; ++k) CHECK(counts[k] == 10);
}

TEST_CASE("generation is deterministic per seed") {
    SyntheticTask task = motion_task();
    task.noise = 0.15;
    task.samples = 12;
    task.seed = 424242;
    Dataset a = gen_task(task);
    Dataset b = gen_task(task);
    REQUIRE(a.train.size() == b.train.size());
    for (size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].label == b.train[i].label);
        CHECK(a.train[i].video.pixels == b.train[i].video.pixels);
    }
    task.seed = 424243;
    Dataset c = gen_task(task);
    CHECK(a.train[0].video.pixels != c.train[0].video.pixels);
}

TEST_CASE("noise leaves labels untouched") {
    SyntheticTask noisy = motion_task();
    noisy.noise = 0.5;
    noisy.samples = 8;
    Dataset ds = gen_task(noisy);
    for (size_t i = 0; i < ds.train.size(); ++i) CHECK(ds.train[i].label == i % 4);
}

TEST_CASE("motion task validates the wrap-cycle requirement") {
    SyntheticTask task = motion_task();
    task.height = 15;  // 8 does not divide 15
    Rng rng(1);
    CHECK_THROWS_AS(gen_motion_sample(task, 0, rng), ConfigError);
}

TEST_CASE("task names parse") {
    CHECK(task_from_string("motion-direction") == TaskKind::MotionDirection);
    CHECK(task_from_string("static-texture") == TaskKind::StaticTexture);
    CHECK_THROWS_AS(task_from_string("motion"), ConfigError);
}
