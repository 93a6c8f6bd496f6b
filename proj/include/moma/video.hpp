// Video token grids and window partitioning for the local-attention stage.
//
// Tokens are stored flat in (t, h, w) raster order: index = (t*H + h)*W + w.
// Windows enumerate per frame block, window rows, then window columns; inside
// a window tokens keep (t, h, w) raster order. Both orders are fixed so dumps
// and window round-trips are reproducible.
#pragma once

#include <string>
#include <vector>

#include "moma/tensor.hpp"

namespace moma {

struct Grid {
    size_t t = 1, h = 1, w = 1;
    size_t tokens() const { return t * h * w; }
    size_t flat_index(size_t ti, size_t hi, size_t wi) const { return (ti * h + hi) * w + wi; }
    bool operator==(const Grid&) const = default;
};

struct VideoTensor {
    Grid grid;
    Tensor tokens;  // [T*H*W, C]

    size_t channels() const { return tokens.cols(); }

    static VideoTensor wrap(Grid g, Tensor t) {
        if (t.rank() != 2 || t.rows() != g.tokens())
            throw DimensionError("video tokens " + shape_str(t.shape()) + " do not match grid " +
                                 std::to_string(g.t) + "x" + std::to_string(g.h) + "x" +
                                 std::to_string(g.w));
        return VideoTensor{g, std::move(t)};
    }
};

// Non-overlapping attention window. 2D windows are w x w inside one frame;
// the 3D variant spans wt frames. "full" resolves at use site to one window
// covering the whole spatial-temporal grid.
struct WindowSpec {
    enum class Kind { Square2D, Cube3D, FullFrame, FullVideo };
    Kind kind = Kind::Square2D;
    size_t wt = 1, wh = 1, ww = 1;

    static WindowSpec square(size_t w) { return {Kind::Square2D, 1, w, w}; }
    static WindowSpec cube(size_t wt, size_t wh, size_t ww) { return {Kind::Cube3D, wt, wh, ww}; }
    static WindowSpec full_frame() { return {Kind::FullFrame, 0, 0, 0}; }
    static WindowSpec full_video() { return {Kind::FullVideo, 0, 0, 0}; }

    // Concrete extents for a grid.
    WindowSpec resolve(const Grid& g) const {
        switch (kind) {
            case Kind::FullFrame: return {kind, 1, g.h, g.w};
            case Kind::FullVideo: return {kind, g.t, g.h, g.w};
            default: return *this;
        }
    }

    size_t window_tokens(const Grid& g) const {
        WindowSpec r = resolve(g);
        return r.wt * r.wh * r.ww;
    }

    std::string str() const {
        switch (kind) {
            case Kind::FullFrame: return "full";
            case Kind::FullVideo: return "full3d";
            case Kind::Square2D: return std::to_string(wh) + "x" + std::to_string(ww);
            default:
                return std::to_string(wt) + "x" + std::to_string(wh) + "x" + std::to_string(ww);
        }
    }

    static WindowSpec parse(const std::string& s) {
        if (s == "full") return full_frame();
        if (s == "full3d") return full_video();
        std::vector<size_t> parts;
        size_t pos = 0;
        while (pos <= s.size()) {
            size_t next = s.find('x', pos);
            std::string tok = s.substr(pos, next == std::string::npos ? next : next - pos);
            try {
                parts.push_back(std::stoul(tok));
            } catch (...) {
                throw ConfigError("bad window spec '" + s + "', expected full | WxW | TxHxW");
            }
            if (next == std::string::npos) break;
            pos = next + 1;
        }
        if (parts.size() == 2 && parts[0] == parts[1]) return square(parts[0]);
        if (parts.size() == 2) return cube(1, parts[0], parts[1]);
        if (parts.size() == 3) return cube(parts[0], parts[1], parts[2]);
        throw ConfigError("bad window spec '" + s + "', expected full | WxW | TxHxW");
    }
};

inline void check_divisible(const Grid& g, const WindowSpec& spec) {
    WindowSpec r = spec.resolve(g);
    if (r.wt == 0 || r.wh == 0 || r.ww == 0) throw DimensionError("window extents must be positive");
    if (g.t % r.wt != 0)
        throw DimensionError("window extent " + std::to_string(r.wt) + " does not divide frame count " +
                             std::to_string(g.t));
    if (g.h % r.wh != 0)
        throw DimensionError("window extent " + std::to_string(r.wh) + " does not divide grid height " +
                             std::to_string(g.h));
    if (g.w % r.ww != 0)
        throw DimensionError("window extent " + std::to_string(r.ww) + " does not divide grid width " +
                             std::to_string(g.w));
}

inline size_t window_count(const Grid& g, const WindowSpec& spec) {
    check_divisible(g, spec);
    WindowSpec r = spec.resolve(g);
    return (g.t / r.wt) * (g.h / r.wh) * (g.w / r.ww);
}

// Token order that lists every window contiguously, windows in canonical
// order. Applying this permutation then slicing rows in blocks of
// window_tokens() yields the split; the inverse permutation merges.
inline std::vector<size_t> window_permutation(const Grid& g, const WindowSpec& spec) {
    check_divisible(g, spec);
    WindowSpec r = spec.resolve(g);
    std::vector<size_t> perm;
    perm.reserve(g.tokens());
    for (size_t tb = 0; tb < g.t / r.wt; ++tb)
        for (size_t hb = 0; hb < g.h / r.wh; ++hb)
            for (size_t wb = 0; wb < g.w / r.ww; ++wb)
                for (size_t ti = 0; ti < r.wt; ++ti)
                    for (size_t hi = 0; hi < r.wh; ++hi)
                        for (size_t wi = 0; wi < r.ww; ++wi)
                            perm.push_back(g.flat_index(tb * r.wt + ti, hb * r.wh + hi, wb * r.ww + wi));
    return perm;
}

inline std::vector<size_t> invert_permutation(const std::vector<size_t>& perm) {
    std::vector<size_t> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
    return inv;
}

// Split into N = tokens / window_tokens sequences, each [wt*wh*ww, C].
inline std::vector<Tensor> split_windows(const VideoTensor& v, const WindowSpec& spec) {
    const size_t n = window_count(v.grid, spec);
    const size_t len = spec.window_tokens(v.grid);
    Tensor reordered = gather_rows(v.tokens, window_permutation(v.grid, spec));
    std::vector<Tensor> out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) out.push_back(slice_rows(reordered, i * len, len));
    return out;
}

// Inverse of split_windows for windows given in canonical order.
inline VideoTensor merge_windows(const std::vector<Tensor>& windows, const Grid& g, const WindowSpec& spec) {
    const size_t n = window_count(g, spec);
    if (windows.size() != n)
        throw DimensionError("merge_windows: expected " + std::to_string(n) + " windows, got " +
                             std::to_string(windows.size()));
    Tensor stacked = concat_rows(windows);
    Tensor tokens = gather_rows(stacked, invert_permutation(window_permutation(g, spec)));
    return VideoTensor::wrap(g, std::move(tokens));
}

}  // namespace moma
