// Synthetic video tasks.
//
// motion-direction: two visually identical bright blocks, one scrolling
// vertically and one horizontally, both wrapping through a full cycle over
// the clip. The label encodes the pair of scroll directions:
//   up    = (v: up,   h: right)      down  = (v: down, h: left)
//   left  = (v: up,   h: left)       right = (v: down, h: right)
// Reversing the frames flips both components, so up <-> down and
// left <-> right. Full wrap cycles make the visited-cell trail (one full
// column plus one full row) identical for every class, and reversal-paired
// classes share whole frame multisets, so per-frame appearance gives a
// pooled frame-order-invariant model almost nothing to separate directions
// with; the signal is in consecutive-frame displacement.
//
// static-texture: a bright quadrant block, constant across frames; solvable
// from any single frame (control task).
#pragma once

#include <string>
#include <vector>

#include "moma/model.hpp"

namespace moma {

enum class TaskKind { MotionDirection, StaticTexture };

inline TaskKind task_from_string(const std::string& s) {
    if (s == "motion-direction") return TaskKind::MotionDirection;
    if (s == "static-texture") return TaskKind::StaticTexture;
    throw ConfigError("unknown task '" + s + "', expected motion-direction | static-texture");
}

inline std::string to_string(TaskKind k) {
    return k == TaskKind::MotionDirection ? "motion-direction" : "static-texture";
}

struct SyntheticTask {
    TaskKind kind = TaskKind::MotionDirection;
    double noise = 0.1;
    size_t samples = 320;
    uint64_t seed = 7;
    size_t frames = 8, height = 16, width = 16;
};

struct VideoSample {
    VideoPixels video;
    size_t label = 0;
};

struct Dataset {
    std::vector<VideoSample> train, val;
    size_t classes = 4;
};

constexpr size_t kTaskClasses = 4;

namespace detail {

inline size_t wrap(long long v, size_t extent) {
    long long e = static_cast<long long>(extent);
    long long r = v % e;
    return static_cast<size_t>(r < 0 ? r + e : r);
}

inline void paint_block(VideoPixels& vid, size_t t, long long y, long long x, size_t block) {
    for (size_t dy = 0; dy < block; ++dy)
        for (size_t dx = 0; dx < block; ++dx)
            vid.at(t, wrap(y + static_cast<long long>(dy), vid.height),
                   wrap(x + static_cast<long long>(dx), vid.width)) += 1.0;
}

// Label -> (vertical step sign, horizontal step sign); y grows downward.
inline std::pair<int, int> motion_dirs(size_t label) {
    switch (label) {
        case 0: return {-1, +1};  // up
        case 1: return {+1, -1};  // down
        case 2: return {-1, -1};  // left
        default: return {+1, +1};  // right
    }
}

}  // namespace detail

struct MotionStarts {
    long long vy0 = 0, vx = 0;  // vertical mover: start row, fixed column
    long long hy = 0, hx0 = 0;  // horizontal mover: fixed row, start column
};

// Noise-free rendering with explicit start positions.
inline VideoPixels render_motion(const SyntheticTask& task, size_t label, const MotionStarts& st) {
    if (task.height % task.frames != 0 || task.width % task.frames != 0)
        throw ConfigError("motion-direction needs frame count to divide height and width for full "
                          "wrap cycles, got " +
                          std::to_string(task.height) + "x" + std::to_string(task.width) + " over " +
                          std::to_string(task.frames) + " frames");
    const long long sy = static_cast<long long>(task.height / task.frames);
    const long long sx = static_cast<long long>(task.width / task.frames);
    const auto [vdir, hdir] = detail::motion_dirs(label);
    const size_t block = 2;

    VideoPixels vid = VideoPixels::zeros(task.frames, task.height, task.width);
    for (size_t t = 0; t < task.frames; ++t) {
        detail::paint_block(vid, t, st.vy0 + vdir * sy * static_cast<long long>(t), st.vx, block);
        detail::paint_block(vid, t, st.hy, st.hx0 + hdir * sx * static_cast<long long>(t), block);
    }
    return vid;
}

inline VideoSample gen_motion_sample(const SyntheticTask& task, size_t label, Rng& rng) {
    MotionStarts st;
    st.vx = static_cast<long long>(rng.index(task.width));
    st.vy0 = static_cast<long long>(rng.index(task.height));
    st.hy = static_cast<long long>(rng.index(task.height));
    st.hx0 = static_cast<long long>(rng.index(task.width));
    VideoSample s;
    s.label = label;
    s.video = render_motion(task, label, st);
    if (task.noise > 0.0)
        for (double& px : s.video.pixels) px += task.noise * rng.normal();
    return s;
}

inline VideoSample gen_static_sample(const SyntheticTask& task, size_t label, Rng& rng) {
    VideoSample s;
    s.label = label;
    s.video = VideoPixels::zeros(task.frames, task.height, task.width);
    const size_t qh = task.height / 2, qw = task.width / 2;
    const size_t y0 = (label / 2) * qh, x0 = (label % 2) * qw;
    for (size_t t = 0; t < task.frames; ++t)
        for (size_t y = 0; y < qh; ++y)
            for (size_t x = 0; x < qw; ++x) s.video.at(t, y0 + y, x0 + x) += 1.0;
    if (task.noise > 0.0)
        for (double& px : s.video.pixels) px += task.noise * rng.normal();
    return s;
}

// Deterministic per seed; labels interleave 0..K-1 so N divisible by K gives
// exactly N/K per class; train/val split 80/20, val never seen by training.
inline Dataset gen_task(const SyntheticTask& task) {
    Rng rng(task.seed);
    Dataset ds;
    ds.classes = kTaskClasses;
    std::vector<VideoSample> all;
    all.reserve(task.samples);
    for (size_t i = 0; i < task.samples; ++i) {
        Rng child = rng.split();
        const size_t label = i % kTaskClasses;
        all.push_back(task.kind == TaskKind::MotionDirection ? gen_motion_sample(task, label, child)
                                                             : gen_static_sample(task, label, child));
    }
    const size_t n_train = (task.samples * 4) / 5;
    ds.train.assign(all.begin(), all.begin() + static_cast<long>(n_train));
    ds.val.assign(all.begin() + static_cast<long>(n_train), all.end());
    return ds;
}

inline VideoPixels reverse_frames(const VideoPixels& v) {
    VideoPixels out = VideoPixels::zeros(v.frames, v.height, v.width);
    for (size_t t = 0; t < v.frames; ++t)
        for (size_t y = 0; y < v.height; ++y)
            for (size_t x = 0; x < v.width; ++x) out.at(t, y, x) = v.at(v.frames - 1 - t, y, x);
    return out;
}

inline VideoPixels permute_frames(const VideoPixels& v, const std::vector<size_t>& order) {
    VideoPixels out = VideoPixels::zeros(v.frames, v.height, v.width);
    for (size_t t = 0; t < v.frames; ++t)
        for (size_t y = 0; y < v.height; ++y)
            for (size_t x = 0; x < v.width; ++x) out.at(t, y, x) = v.at(order[t], y, x);
    return out;
}

}  // namespace moma
