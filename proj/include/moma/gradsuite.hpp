// The per-op finite-difference suite behind `gradcheck` and the acceptance
// gradient criterion: every differentiable op, the attention and SSM blocks,
// each fusion kind and a full modulated layer.
#pragma once

#include "moma/data.hpp"
#include "moma/gradcheck.hpp"
#include "moma/harness.hpp"

namespace moma {

inline std::vector<GradCheckResult> run_gradient_suite(uint64_t seed, double eps = 1e-5) {
    std::vector<GradCheckResult> results;
    Rng root(seed);

    auto uniform_tensor = [](Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
        Tensor t = Tensor::zeros(std::move(s));
        for (size_t i = 0; i < t.size(); ++i) t.mut()[i] = rng.uniform(lo, hi);
        return t;
    };

    {
        Rng rng = root.split();
        Tensor a = uniform_tensor({5, 7}, rng).set_requires_grad();
        Tensor b = uniform_tensor({7, 3}, rng).set_requires_grad();
        Tensor w = Tensor::randn({5, 3}, rng);
        results.push_back(gradcheck("matmul", [&] { return sum_all(mul(matmul(a, b), w)); }, {a, b}, eps));
    }
    {
        Rng rng = root.split();
        Tensor a = uniform_tensor({4, 5}, rng).set_requires_grad();
        Tensor b = uniform_tensor({4, 5}, rng).set_requires_grad();
        Tensor w = Tensor::randn({4, 5}, rng);
        results.push_back(gradcheck("add", [&] { return sum_all(mul(add(a, b), w)); }, {a, b}, eps));
        results.push_back(gradcheck("sub", [&] { return sum_all(mul(sub(a, b), w)); }, {a, b}, eps));
        results.push_back(gradcheck("mul", [&] { return sum_all(mul(mul(a, b), w)); }, {a, b}, eps));
    }
    {
        Rng rng = root.split();
        Tensor a = uniform_tensor({4, 5}, rng).set_requires_grad();
        Tensor b = Tensor::zeros({4, 5}).set_requires_grad();
        // keep a margin so the finite difference never crosses the max kink
        for (size_t i = 0; i < b.size(); ++i) {
            double d = rng.uniform(0.05, 0.6) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
            b.mut()[i] = a.at(i) + d;
        }
        Tensor w = Tensor::randn({4, 5}, rng);
        results.push_back(gradcheck("max_elem", [&] { return sum_all(mul(max_elem(a, b), w)); }, {a, b}, eps));
    }
    {
        Rng rng = root.split();
        Tensor a = uniform_tensor({3, 6}, rng).set_requires_grad();
        Tensor w = Tensor::randn({3, 6}, rng);
        results.push_back(gradcheck("gelu", [&] { return sum_all(mul(gelu(a), w)); }, {a}, eps));
        results.push_back(gradcheck("silu", [&] { return sum_all(mul(silu(a), w)); }, {a}, eps));
        results.push_back(gradcheck("sigmoid", [&] { return sum_all(mul(sigmoid(a), w)); }, {a}, eps));
        results.push_back(gradcheck("exp", [&] { return sum_all(mul(exp(a), w)); }, {a}, eps));
        results.push_back(gradcheck("softplus", [&] { return sum_all(mul(softplus(a), w)); }, {a}, eps));
        results.push_back(gradcheck("layer_norm", [&] { return sum_all(mul(layer_norm(a), w)); }, {a}, eps));
        results.push_back(
            gradcheck("softmax", [&] { return sum_all(mul(softmax(a, 1), w)); }, {a}, eps));
        Tensor wm = Tensor::randn({6}, rng);
        results.push_back(
            gradcheck("mean_axis", [&] { return sum_all(mul(mean_axis(a, 0), wm)); }, {a}, eps));
    }
    {
        Rng rng = root.split();
        Tensor x = uniform_tensor({4, 3}, rng).set_requires_grad();
        Tensor w = uniform_tensor({3, 5}, rng).set_requires_grad();
        Tensor b = uniform_tensor({5}, rng).set_requires_grad();
        Tensor r = Tensor::randn({4, 5}, rng);
        results.push_back(
            gradcheck("linear", [&] { return sum_all(mul(linear(x, w, b), r)); }, {x, w, b}, eps));
    }
    {
        Rng rng = root.split();
        Tensor a = uniform_tensor({4, 6}, rng).set_requires_grad();
        Tensor r = Tensor::randn({2, 12}, rng);
        results.push_back(gradcheck(
            "reshape_transpose",
            [&] { return sum_all(mul(reshape(transpose(a), {2, 12}), r)); }, {a}, eps));
        std::vector<size_t> idx = {3, 0, 2, 2, 1};
        Tensor r2 = Tensor::randn({5, 6}, rng);
        results.push_back(
            gradcheck("gather_rows", [&] { return sum_all(mul(gather_rows(a, idx), r2)); }, {a}, eps));
        Tensor r3 = Tensor::randn({4, 4}, rng);
        results.push_back(gradcheck(
            "slice_concat",
            [&] { return sum_all(mul(concat_cols({slice_cols(a, 0, 2), slice_cols(a, 4, 2)}), r3)); },
            {a}, eps));
    }
    {
        Rng rng = root.split();
        Tensor x = uniform_tensor({7, 3}, rng).set_requires_grad();
        Tensor w = uniform_tensor({3, 4}, rng).set_requires_grad();
        Tensor b = uniform_tensor({3}, rng).set_requires_grad();
        Tensor r = Tensor::randn({7, 3}, rng);
        results.push_back(gradcheck(
            "conv1d_causal",
            [&] { return sum_all(mul(conv1d_depthwise_causal(x, w, b), r)); }, {x, w, b}, eps));
    }
    {
        Rng rng = root.split();
        const size_t l = 6, e = 3, s = 2;
        Tensor u = uniform_tensor({l, e}, rng).set_requires_grad();
        Tensor dt = uniform_tensor({l, e}, rng, 0.1, 1.0).set_requires_grad();
        Tensor bm = uniform_tensor({l, s}, rng).set_requires_grad();
        Tensor cm = uniform_tensor({l, s}, rng).set_requires_grad();
        Tensor a = uniform_tensor({e, s}, rng, -2.0, -0.2).set_requires_grad();
        Tensor d = uniform_tensor({e}, rng).set_requires_grad();
        Tensor r = Tensor::randn({l, e}, rng);
        results.push_back(gradcheck(
            "selective_scan",
            [&] { return sum_all(mul(selective_scan_ref(u, dt, bm, cm, a, d), r)); },
            {u, dt, bm, cm, a, d}, eps));
    }
    {
        Rng rng = root.split();
        const size_t c = 4;
        AttentionWeights aw = AttentionWeights::init(c, 2, rng);
        for (Tensor t : {aw.wq, aw.bq, aw.wk, aw.bk, aw.wv, aw.bv, aw.wo, aw.bo}) t.set_requires_grad();
        Tensor x = uniform_tensor({4, c}, rng).set_requires_grad();
        Tensor r = Tensor::randn({4, c}, rng);
        results.push_back(gradcheck(
            "window_attention", [&] { return sum_all(mul(window_attention(x, aw), r)); },
            {x, aw.wq, aw.wk, aw.wv, aw.wo, aw.bq, aw.bo}, eps));

        Grid g{2, 2, 2};
        Tensor vx = uniform_tensor({g.tokens(), c}, rng).set_requires_grad();
        Tensor rv = Tensor::randn({g.tokens(), c}, rng);
        results.push_back(gradcheck(
            "divide",
            [&] {
                return sum_all(
                    mul(divide(VideoTensor::wrap(g, vx), WindowSpec::square(2), aw).tokens, rv));
            },
            {vx, aw.wq, aw.wo}, eps));
    }
    {
        Rng rng = root.split();
        const size_t c = 4;
        Grid g{2, 2, 2};
        ScanPlan plan = {{ScanAxis::SpatialRaster, ScanOrientation::Forward},
                         {ScanAxis::TemporalMajor, ScanOrientation::Backward}};
        SSMParams p = SSMParams::init(c, 6, 2, plan.size(), Activation::Gelu, rng);
        // randomize the zero-initialized projection so its upstream gradients are live
        Tensor out_w = p.out_w;
        for (size_t i = 0; i < out_w.size(); ++i) out_w.mut()[i] = rng.uniform(-0.5, 0.5);
        Tensor x = uniform_tensor({g.tokens(), c}, rng).set_requires_grad();
        Tensor r1 = Tensor::randn({g.tokens(), c}, rng);
        Tensor r2 = Tensor::randn({g.tokens(), c}, rng);
        std::vector<Tensor> params = p.parameters();
        params.push_back(x);
        results.push_back(gradcheck(
            "ssm_forward",
            [&] {
                ModulationPair m = ssm_forward(x, p, plan, g);
                return add(sum_all(mul(m.scale, r1)), sum_all(mul(m.bias, r2)));
            },
            params, eps));
    }
    {
        Rng rng = root.split();
        Tensor x = uniform_tensor({6, 4}, rng).set_requires_grad();
        Tensor y1 = uniform_tensor({6, 4}, rng).set_requires_grad();
        Tensor y2 = uniform_tensor({6, 4}, rng).set_requires_grad();
        Tensor r = Tensor::randn({6, 4}, rng);
        results.push_back(gradcheck(
            "seqmod", [&] { return sum_all(mul(seqmod(x, {y1, y2}), r)); }, {x, y1, y2}, eps));

        for (FusionKind kind : {FusionKind::Add, FusionKind::Concat, FusionKind::RawAdan}) {
            FusionParams f = FusionParams::init(kind, 4);
            std::vector<Tensor> params = {x, y1, y2};
            for (Tensor t : f.parameters()) params.push_back(t);
            results.push_back(gradcheck(
                "fuse_" + to_string(kind),
                [&, f] { return sum_all(mul(fuse(f, x, {y1, y2}), r)); }, params, eps));
        }
        {
            // max needs a kink margin between the two streams
            FusionParams f = FusionParams::init(FusionKind::Max, 4);
            Tensor ym = Tensor::zeros({6, 4}).set_requires_grad();
            for (size_t i = 0; i < ym.size(); ++i) {
                double d = rng.uniform(0.05, 0.6) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
                ym.mut()[i] = x.at(i) + d;
            }
            results.push_back(gradcheck(
                "fuse_max", [&, f] { return sum_all(mul(fuse(f, x, {ym, y2}), r)); }, {x, ym}, eps));
        }
    }
    {
        Rng rng = root.split();
        Tensor logits = uniform_tensor({4}, rng).set_requires_grad();
        results.push_back(
            gradcheck("cross_entropy", [&] { return cross_entropy_logits(logits, 2); }, {logits}, eps));
        Tensor a = uniform_tensor({3, 4}, rng).set_requires_grad();
        Tensor b = uniform_tensor({3, 4}, rng).set_requires_grad();
        results.push_back(gradcheck("mse", [&] { return mse(a, b); }, {a, b}, eps));
    }
    {
        // Full modulated layer: loss through divide + ssm + seqmod + ffn +
        // pooling + classifier, checked against every trainable parameter.
        Rng rng = root.split();
        ModelConfig cfg;
        cfg.frames = 2;
        cfg.pix_h = cfg.pix_w = 8;
        cfg.patch = 4;
        cfg.channels = 4;
        cfg.heads = 2;
        cfg.classes = 3;
        cfg.layers = 1;
        cfg.pattern = "[TM]1";
        cfg.window = WindowSpec::square(2);
        cfg.ssm_hidden = 6;
        cfg.ssm_state = 2;
        cfg.scan_plan = {{ScanAxis::SpatialRaster, ScanOrientation::Forward},
                         {ScanAxis::TemporalMajor, ScanOrientation::Backward}};
        cfg.distill_lambda = 0.0;
        cfg.seed = rng.next_u64();
        MoMaModel model(cfg);
        std::vector<Tensor> params = model.trainable_params();
        for (Tensor p : params)
            if (p.size() > 0 && p.at(0) == 0.0)
                for (size_t i = 0; i < p.size(); ++i) p.mut()[i] = rng.uniform(-0.3, 0.3);
        VideoPixels video = VideoPixels::zeros(2, 8, 8);
        for (double& px : video.pixels) px = rng.uniform(-1.0, 1.0);
        results.push_back(gradcheck(
            "full_layer", [&] { return model.loss(video, 1); }, params, eps));
    }
    return results;
}

}  // namespace moma
