// SeqMod and the alternative sequence-fusion designs, behind one interface so
// the fusion ablation is a config switch.
#pragma once

#include <string>

#include "moma/ssm.hpp"

namespace moma {

enum class FusionKind { Skip, Add, Max, Concat, RawAdan, SeqMod };

inline FusionKind fusion_from_string(const std::string& s) {
    if (s == "skip") return FusionKind::Skip;
    if (s == "add") return FusionKind::Add;
    if (s == "max") return FusionKind::Max;
    if (s == "concat") return FusionKind::Concat;
    if (s == "raw_adan") return FusionKind::RawAdan;
    if (s == "seqmod") return FusionKind::SeqMod;
    throw ConfigError("unknown fusion kind '" + s +
                      "', expected skip | add | max | concat | raw_adan | seqmod");
}

inline std::string to_string(FusionKind k) {
    switch (k) {
        case FusionKind::Skip: return "skip";
        case FusionKind::Add: return "add";
        case FusionKind::Max: return "max";
        case FusionKind::Concat: return "concat";
        case FusionKind::RawAdan: return "raw_adan";
        case FusionKind::SeqMod: return "seqmod";
    }
    return "?";
}

// out = y1 (.) x + x + y2: per-token scale, bias and skip connection.
inline Tensor seqmod(const Tensor& x, const ModulationPair& m) {
    check_same_shape(x, m.scale, "seqmod scale");
    check_same_shape(x, m.bias, "seqmod bias");
    return add(add(mul(m.scale, x), x), m.bias);
}

// Learnable pieces of the fusion baselines. Every kind starts as the
// identity map so the ablation isolates the fusion design from its init:
// concat's reduction starts at [I; 0], raw-adan's pooled head starts at
// (alpha, beta, gamma) = (1, 0, 0).
struct FusionParams {
    FusionKind kind = FusionKind::SeqMod;
    double add_w1 = 1.0, add_w2 = 1.0;  // weighted-average generalization of Add
    Tensor concat_w, concat_b;          // [2C, C] / [C]
    Tensor adan_w, adan_b;              // [2C, 3] / [3] -> (alpha, beta, gamma)

    static FusionParams init(FusionKind kind, size_t channels) {
        FusionParams f;
        f.kind = kind;
        if (kind == FusionKind::Concat) {
            f.concat_w = Tensor::zeros({2 * channels, channels}).set_requires_grad();
            for (size_t i = 0; i < channels; ++i) f.concat_w.mut()[i * channels + i] = 1.0;
            f.concat_b = Tensor::zeros({channels}).set_requires_grad();
        }
        if (kind == FusionKind::RawAdan) {
            f.adan_w = Tensor::zeros({2 * channels, 3}).set_requires_grad();
            f.adan_b = Tensor::from({3}, {1.0, 0.0, 0.0}).set_requires_grad();
        }
        return f;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        if (kind == FusionKind::Concat) {
            out.push_back(concat_w);
            out.push_back(concat_b);
        }
        if (kind == FusionKind::RawAdan) {
            out.push_back(adan_w);
            out.push_back(adan_b);
        }
        return out;
    }

    std::vector<NamedTensor> named(const std::string& prefix) const {
        std::vector<NamedTensor> out;
        if (kind == FusionKind::Concat) {
            out.push_back({prefix + ".concat_w", "trainable", concat_w});
            out.push_back({prefix + ".concat_b", "trainable", concat_b});
        }
        if (kind == FusionKind::RawAdan) {
            out.push_back({prefix + ".adan_w", "trainable", adan_w});
            out.push_back({prefix + ".adan_b", "trainable", adan_b});
        }
        return out;
    }
};

// Fuse the attention stream x with the SSM output. The add/max/concat
// baselines consume the scale half (y1) of the doubled SSM output; raw-adan
// pools both halves into per-layer scalars.
inline Tensor fuse(const FusionParams& f, const Tensor& x, const ModulationPair& m) {
    switch (f.kind) {
        case FusionKind::Skip:
            return x;
        case FusionKind::Add: {
            check_same_shape(x, m.scale, "fuse add");
            if (f.add_w1 == 1.0 && f.add_w2 == 1.0) return add(x, m.scale);
            return add(scale(x, f.add_w1), scale(m.scale, f.add_w2));
        }
        case FusionKind::Max:
            check_same_shape(x, m.scale, "fuse max");
            return max_elem(x, m.scale);
        case FusionKind::Concat: {
            check_same_shape(x, m.scale, "fuse concat");
            return linear(concat_cols({x, m.scale}), f.concat_w, f.concat_b);
        }
        case FusionKind::RawAdan: {
            check_same_shape(x, m.scale, "fuse raw_adan");
            Tensor pooled = mean_axis(concat_cols({m.scale, m.bias}), 0);  // [2C]
            Tensor head = linear(reshape(pooled, {1, pooled.size()}), f.adan_w, f.adan_b);  // [1,3]
            Tensor alpha = slice_cols(head, 0, 1);
            Tensor beta = slice_cols(head, 1, 1);
            Tensor gamma = slice_cols(head, 2, 1);
            // alpha*gamma*x + alpha*beta + x
            return add_scalar_tensor(add(scale_by(x, mul(alpha, gamma)), x), mul(alpha, beta));
        }
        case FusionKind::SeqMod:
            return seqmod(x, m);
    }
    throw ConfigError("unhandled fusion kind");
}

}  // namespace moma
