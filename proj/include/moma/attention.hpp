// Frozen transformer primitives and the window-split local attention stage.
#pragma once

#include <vector>

#include "moma/io.hpp"
#include "moma/video.hpp"

namespace moma {

// Multi-head self-attention projections plus the per-layer FFN. Weights are
// frozen: requires_grad stays false and training never touches them.
struct AttentionWeights {
    size_t heads = 1;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // [C,C] / [C]

    size_t channels() const { return wq.rows(); }

    static AttentionWeights init(size_t channels, size_t heads, Rng& rng) {
        if (heads == 0 || channels % heads != 0)
            throw DimensionError("head count " + std::to_string(heads) + " must divide channels " +
                                 std::to_string(channels));
        const double sd = 1.0 / std::sqrt(static_cast<double>(channels));
        AttentionWeights w;
        w.heads = heads;
        w.wq = Tensor::randn({channels, channels}, rng, sd);
        w.wk = Tensor::randn({channels, channels}, rng, sd);
        w.wv = Tensor::randn({channels, channels}, rng, sd);
        // near-uniform attention at init averages the window, shrinking the
        // signal by about 1/sqrt(window); the output gain compensates so the
        // layer stack stays roughly scale-preserving without normalization
        w.wo = Tensor::randn({channels, channels}, rng, 2.0 * sd);
        w.bq = Tensor::zeros({channels});
        w.bk = Tensor::zeros({channels});
        w.bv = Tensor::zeros({channels});
        w.bo = Tensor::zeros({channels});
        return w;
    }

    std::vector<NamedTensor> named(const std::string& prefix) const {
        return {{prefix + ".wq", "frozen", wq}, {prefix + ".bq", "frozen", bq},
                {prefix + ".wk", "frozen", wk}, {prefix + ".bk", "frozen", bk},
                {prefix + ".wv", "frozen", wv}, {prefix + ".bv", "frozen", bv},
                {prefix + ".wo", "frozen", wo}, {prefix + ".bo", "frozen", bo}};
    }
};

struct FfnWeights {
    Tensor w1, b1, w2, b2;  // C -> 4C -> C, gelu between

    static FfnWeights init(size_t channels, Rng& rng) {
        const size_t hidden = 4 * channels;
        FfnWeights f;
        f.w1 = Tensor::randn({channels, hidden}, rng, 1.0 / std::sqrt(static_cast<double>(channels)));
        f.b1 = Tensor::zeros({hidden});
        // gelu halves the rms of small zero-mean activations; gain 2 keeps
        // the FFN roughly isometric at init
        f.w2 = Tensor::randn({hidden, channels}, rng, 2.0 / std::sqrt(static_cast<double>(hidden)));
        f.b2 = Tensor::zeros({channels});
        return f;
    }

    std::vector<NamedTensor> named(const std::string& prefix) const {
        return {{prefix + ".w1", "frozen", w1},
                {prefix + ".b1", "frozen", b1},
                {prefix + ".w2", "frozen", w2},
                {prefix + ".b2", "frozen", b2}};
    }
};

inline Tensor ffn(const Tensor& x, const FfnWeights& f) {
    return linear(gelu(linear(x, f.w1, f.b1)), f.w2, f.b2);
}

// Scaled-dot-product self-attention over one window sequence [len, C]. Output
// projection applied, no FFN here.
inline Tensor window_attention(const Tensor& s, const AttentionWeights& w) {
    if (s.rank() != 2 || s.cols() != w.channels())
        throw DimensionError("window_attention: tokens " + shape_str(s.shape()) + " vs weights C=" +
                             std::to_string(w.channels()));
    const size_t c = w.channels();
    const size_t hd = c / w.heads;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(hd));

    Tensor q = linear(s, w.wq, w.bq);
    Tensor k = linear(s, w.wk, w.bk);
    Tensor v = linear(s, w.wv, w.bv);

    std::vector<Tensor> head_outputs;
    head_outputs.reserve(w.heads);
    for (size_t h = 0; h < w.heads; ++h) {
        Tensor qh = slice_cols(q, h * hd, hd);
        Tensor kh = slice_cols(k, h * hd, hd);
        Tensor vh = slice_cols(v, h * hd, hd);
        Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_d);
        Tensor probs = softmax(scores, 1);
        head_outputs.push_back(matmul(probs, vh));
    }
    Tensor merged = w.heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
    return linear(merged, w.wo, w.bo);
}

// Divide stage: split the grid into windows, attend inside each, reassemble.
// Output shape equals input shape; tokens in different windows never interact.
inline VideoTensor divide(const VideoTensor& v, const WindowSpec& spec, const AttentionWeights& w) {
    std::vector<Tensor> windows = split_windows(v, spec);
    for (Tensor& win : windows) win = window_attention(win, w);
    return merge_windows(windows, v.grid, spec);
}

// ---------------------------------------------------------------------------
// Closed-form multiply-accumulate counts for the attention stage. Per window
// of len tokens: 4*len*C^2 for the q/k/v/out projections and 2*len^2*C for
// the score and value contractions. Summed over windows this is
//   total = 4*HWT*C^2 + 2*len*HWT*C,
// so windowed attention is linear in T at fixed window size while full
// spatial-temporal attention (len = HWT) is quadratic.
struct AttentionFlops {
    unsigned long long projections = 0;
    unsigned long long scores = 0;  // QK^T plus softmax-weighted V
    unsigned long long total() const { return projections + scores; }
};

enum class AttentionRegime { Full, PerFrame, Windowed };

inline AttentionFlops count_flops(size_t h, size_t w, size_t t, size_t c, AttentionRegime regime,
                                  const WindowSpec& spec = WindowSpec::square(1)) {
    if (h == 0 || w == 0 || t == 0 || c == 0) throw DimensionError("count_flops: dims must be positive");
    const unsigned long long tokens = static_cast<unsigned long long>(h) * w * t;
    unsigned long long len = 0;
    switch (regime) {
        case AttentionRegime::Full: len = tokens; break;
        case AttentionRegime::PerFrame: len = static_cast<unsigned long long>(h) * w; break;
        case AttentionRegime::Windowed: {
            WindowSpec r = spec.resolve(Grid{t, h, w});
            len = static_cast<unsigned long long>(r.wt) * r.wh * r.ww;
            break;
        }
    }
    AttentionFlops f;
    f.projections = 4ull * tokens * c * c;
    f.scores = 2ull * tokens * len * c;
    return f;
}

inline unsigned long long ffn_flops(size_t h, size_t w, size_t t, size_t c) {
    return 8ull * h * w * t * c * c;
}

}  // namespace moma
