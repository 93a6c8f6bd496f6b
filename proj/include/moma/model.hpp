// Full network assembly: patch embedding, a frozen transformer backbone
// following a layer pattern, Divide+Modulate adapters, average pooling and a
// linear classifier. Only SSM layers (plus fusion heads) and the classifier
// train; everything else is frozen and hash-checked.
#pragma once

#include <optional>
#include <unordered_map>

#include "moma/attention.hpp"
#include "moma/fusion.hpp"
#include "moma/pattern.hpp"
#include "moma/ssm.hpp"

namespace moma {

// Raw pixel clip, frames of height x width, single luminance channel.
struct VideoPixels {
    size_t frames = 0, height = 0, width = 0;
    std::vector<double> pixels;  // [frames][height][width]

    double at(size_t t, size_t y, size_t x) const { return pixels[(t * height + y) * width + x]; }
    double& at(size_t t, size_t y, size_t x) { return pixels[(t * height + y) * width + x]; }

    static VideoPixels zeros(size_t frames, size_t height, size_t width) {
        return {frames, height, width, std::vector<double>(frames * height * width, 0.0)};
    }
};

struct ModelConfig {
    size_t frames = 8, pix_h = 32, pix_w = 32, patch = 4;
    size_t channels = 32, heads = 4, classes = 4;
    size_t layers = 4;  // backbone depth L
    std::string pattern = "[TM]4";
    WindowSpec window = WindowSpec::square(4);
    FusionKind fusion = FusionKind::SeqMod;
    ScanPlan scan_plan = default_scan_plan();
    size_t ssm_hidden = 0;  // 0 -> 2C
    size_t ssm_state = 8;
    Activation gate_act = Activation::Gelu;
    size_t scan_chunk = 64;
    double max_fusion_bias = -4.0;  // out_proj bias on the scale half for kind=max
    double distill_lambda = 0.1;
    double lr = 3e-4, weight_decay = 0.05, beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    uint64_t seed = 1;

    Grid grid() const {
        if (pix_h % patch != 0 || pix_w % patch != 0)
            throw DimensionError("patch size " + std::to_string(patch) + " does not divide input " +
                                 std::to_string(pix_h) + "x" + std::to_string(pix_w));
        return Grid{frames, pix_h / patch, pix_w / patch};
    }
    size_t hidden() const { return ssm_hidden == 0 ? 2 * channels : ssm_hidden; }
};

class MoMaModel {
  public:
    explicit MoMaModel(const ModelConfig& cfg) : cfg_(cfg), pattern_(parse_pattern(cfg.pattern, cfg.layers)) {
        const Grid g = cfg_.grid();
        check_divisible(g, cfg_.window);
        Rng rng(cfg_.seed);
        Rng backbone_rng = rng.split();
        Rng ssm_rng = rng.split();
        Rng classifier_rng = rng.split();

        const size_t pdim = cfg_.patch * cfg_.patch;
        patch_w_ = Tensor::randn({pdim, cfg_.channels}, backbone_rng,
                                 1.0 / std::sqrt(static_cast<double>(pdim)));
        patch_b_ = Tensor::zeros({cfg_.channels});
        // Learned-then-frozen spatial position embeddings, shared across
        // frames (the backbone is an image model run per frame).
        pos_embed_ = Tensor::randn({g.h * g.w, cfg_.channels}, backbone_rng, 0.1);

        for (size_t i = 0; i < cfg_.layers; ++i) {
            attn_.push_back(AttentionWeights::init(cfg_.channels, cfg_.heads, backbone_rng));
            ffn_.push_back(FfnWeights::init(cfg_.channels, backbone_rng));
        }

        if (cfg_.fusion != FusionKind::Skip) {
            for (LayerKind k : pattern_.layers) {
                if (k == LayerKind::Plain) continue;
                SSMParams p = SSMParams::init(cfg_.channels, cfg_.hidden(), cfg_.ssm_state,
                                              cfg_.scan_plan.size(), cfg_.gate_act, ssm_rng);
                if (cfg_.fusion == FusionKind::Max && k == LayerKind::Modulated) {
                    // Bias the scale half low so max(x, y) starts as the
                    // identity map like the other fusion kinds.
                    for (size_t j = 0; j < cfg_.channels; ++j) p.out_b.mut()[j] = cfg_.max_fusion_bias;
                }
                ssm_.push_back(std::move(p));
                fusion_.push_back(FusionParams::init(cfg_.fusion, cfg_.channels));
            }
        }

        // Random head: gradients reach the SSM path from step 0 (a zero head
        // would gate dL/dfeatures to zero and stall adapter training).
        classifier_w_ = Tensor::randn({cfg_.channels, cfg_.classes}, classifier_rng,
                                      1.0 / std::sqrt(static_cast<double>(cfg_.channels)))
                            .set_requires_grad();
        classifier_b_ = Tensor::zeros({cfg_.classes}).set_requires_grad();
    }

    const ModelConfig& config() const { return cfg_; }
    const LayerPattern& pattern() const { return pattern_; }
    const AttentionWeights& attention_weights(size_t layer) const { return attn_.at(layer); }
    const FfnWeights& ffn_weights(size_t layer) const { return ffn_.at(layer); }
    const SSMParams& ssm_params(size_t slot) const { return ssm_.at(slot); }
    const FusionParams& fusion_params(size_t slot) const { return fusion_.at(slot); }
    Tensor classifier_w() const { return classifier_w_; }
    Tensor classifier_b() const { return classifier_b_; }

    // Patch embedding plus frozen spatial position embeddings; rows in
    // (t, h, w) raster order.
    VideoTensor embed(const VideoPixels& video) const {
        const Grid g = cfg_.grid();
        if (video.frames != cfg_.frames || video.height != cfg_.pix_h || video.width != cfg_.pix_w)
            throw DimensionError("input video " + std::to_string(video.frames) + "x" +
                                 std::to_string(video.height) + "x" + std::to_string(video.width) +
                                 " does not match configured " + std::to_string(cfg_.frames) + "x" +
                                 std::to_string(cfg_.pix_h) + "x" + std::to_string(cfg_.pix_w));
        const size_t p = cfg_.patch;
        Tensor patches = Tensor::zeros({g.tokens(), p * p});
        size_t row = 0;
        for (size_t t = 0; t < g.t; ++t)
            for (size_t h = 0; h < g.h; ++h)
                for (size_t w = 0; w < g.w; ++w, ++row)
                    for (size_t py = 0; py < p; ++py)
                        for (size_t px = 0; px < p; ++px)
                            patches.mut()[row * p * p + py * p + px] =
                                video.at(t, h * p + py, w * p + px);
        Tensor tokens = linear(patches, patch_w_, patch_b_);
        for (size_t t = 0; t < g.t; ++t)
            for (size_t i = 0; i < g.h * g.w; ++i)
                for (size_t c = 0; c < cfg_.channels; ++c)
                    tokens.mut()[(t * g.h * g.w + i) * cfg_.channels + c] += pos_embed_.at(i, c);
        return VideoTensor::wrap(g, std::move(tokens));
    }

    Tensor features(const VideoPixels& video) const {
        VideoTensor v = embed(video);
        size_t ti = 0, si = 0;
        for (LayerKind kind : pattern_.layers) {
            switch (kind) {
                case LayerKind::Plain:
                    v = VideoTensor::wrap(
                        v.grid, ffn(divide(v, WindowSpec::full_frame(), attn_[ti]).tokens, ffn_[ti]));
                    ++ti;
                    break;
                case LayerKind::Modulated: {
                    VideoTensor d = divide(v, cfg_.window, attn_[ti]);
                    Tensor fused;
                    if (cfg_.fusion == FusionKind::Skip) {
                        fused = d.tokens;
                    } else {
                        ModulationPair m =
                            ssm_forward(d.tokens, ssm_[si], cfg_.scan_plan, v.grid, cfg_.scan_chunk);
                        fused = fuse(fusion_[si], d.tokens, m);
                        ++si;
                    }
                    v = VideoTensor::wrap(v.grid, ffn(fused, ffn_[ti]));
                    ++ti;
                    break;
                }
                case LayerKind::StandaloneSsm: {
                    // Decoder form: no host attention, residual on the scale branch.
                    if (cfg_.fusion == FusionKind::Skip) break;
                    ModulationPair m =
                        ssm_forward(v.tokens, ssm_[si], cfg_.scan_plan, v.grid, cfg_.scan_chunk);
                    v = VideoTensor::wrap(v.grid, add(v.tokens, m.scale));
                    ++si;
                    break;
                }
            }
        }
        return mean_axis(v.tokens, 0);  // [C]
    }

    Tensor forward(const VideoPixels& video) const {
        Tensor pooled = features(video);
        Tensor logits = linear(reshape(pooled, {1, cfg_.channels}), classifier_w_, classifier_b_);
        return reshape(logits, {cfg_.classes});
    }

    // Frozen backbone run in its native regime: per-frame attention, no
    // adapters. Distillation reference. `windows` may be overridden to the
    // student's window spec for comparison-mode tests.
    Tensor teacher_features(const VideoPixels& video,
                            const WindowSpec& windows = WindowSpec::full_frame()) const {
        NoGradScope ng;
        VideoTensor v = embed(video);
        for (size_t i = 0; i < cfg_.layers; ++i)
            v = VideoTensor::wrap(v.grid, ffn(divide(v, windows, attn_[i]).tokens, ffn_[i]));
        return mean_axis(v.tokens, 0);
    }

    // Cross entropy plus lambda * MSE against the teacher's pooled feature.
    Tensor loss(const VideoPixels& video, size_t label, const Tensor* teacher_pooled = nullptr) const {
        if (label >= cfg_.classes)
            throw DataError("label " + std::to_string(label) + " out of range for " +
                            std::to_string(cfg_.classes) + " classes");
        Tensor pooled = features(video);
        Tensor logits = reshape(linear(reshape(pooled, {1, cfg_.channels}), classifier_w_, classifier_b_),
                                {cfg_.classes});
        Tensor total = cross_entropy_logits(logits, label);
        if (cfg_.distill_lambda != 0.0) {
            Tensor target = teacher_pooled ? *teacher_pooled : teacher_features(video);
            total = add(total, scale(mse(pooled, target), cfg_.distill_lambda));
        }
        return total;
    }

    std::vector<Tensor> trainable_params() const {
        std::vector<Tensor> out;
        for (const auto& p : ssm_)
            for (const Tensor& t : p.parameters()) out.push_back(t);
        for (const auto& f : fusion_)
            for (const Tensor& t : f.parameters()) out.push_back(t);
        out.push_back(classifier_w_);
        out.push_back(classifier_b_);
        return out;
    }

    size_t trainable_param_count() const {
        size_t n = 0;
        for (const Tensor& t : trainable_params()) n += t.size();
        return n;
    }

    std::vector<NamedTensor> named_frozen() const {
        std::vector<NamedTensor> out = {{"patch.w", "frozen", patch_w_},
                                        {"patch.b", "frozen", patch_b_},
                                        {"pos_embed", "frozen", pos_embed_}};
        for (size_t i = 0; i < attn_.size(); ++i) {
            for (auto& nt : attn_[i].named("layer" + std::to_string(i) + ".attn")) out.push_back(nt);
            for (auto& nt : ffn_[i].named("layer" + std::to_string(i) + ".ffn")) out.push_back(nt);
        }
        return out;
    }

    std::vector<NamedTensor> named_trainable() const {
        std::vector<NamedTensor> out;
        for (size_t i = 0; i < ssm_.size(); ++i)
            for (auto& nt : ssm_[i].named("ssm" + std::to_string(i))) out.push_back(nt);
        for (size_t i = 0; i < fusion_.size(); ++i)
            for (auto& nt : fusion_[i].named("fusion" + std::to_string(i))) out.push_back(nt);
        out.push_back({"classifier.w", "trainable", classifier_w_});
        out.push_back({"classifier.b", "trainable", classifier_b_});
        return out;
    }

    std::vector<NamedTensor> named_all() const {
        std::vector<NamedTensor> out = named_frozen();
        for (auto& nt : named_trainable()) out.push_back(nt);
        return out;
    }

    std::string frozen_hash() const { return hash_tensors(named_frozen()); }

    void load_state(const std::map<std::string, Tensor>& state) {
        for (auto& nt : named_all()) {
            auto it = state.find(nt.name);
            if (it == state.end()) throw IoError("checkpoint is missing tensor '" + nt.name + "'");
            if (it->second.shape() != nt.tensor.shape())
                throw IoError("checkpoint tensor '" + nt.name + "' has shape " +
                              shape_str(it->second.shape()) + ", expected " + shape_str(nt.tensor.shape()));
            Tensor dst = nt.tensor;
            std::memcpy(dst.mut(), it->second.ptr(), dst.size() * sizeof(double));
        }
    }

  private:
    ModelConfig cfg_;
    LayerPattern pattern_;
    Tensor patch_w_, patch_b_, pos_embed_;
    std::vector<AttentionWeights> attn_;
    std::vector<FfnWeights> ffn_;
    std::vector<SSMParams> ssm_;
    std::vector<FusionParams> fusion_;
    Tensor classifier_w_, classifier_b_;
};

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay.

class AdamW {
  public:
    double lr = 3e-4, weight_decay = 0.05, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    static AdamW from_config(const ModelConfig& cfg) {
        AdamW opt;
        opt.lr = cfg.lr;
        opt.weight_decay = cfg.weight_decay;
        opt.beta1 = cfg.beta1;
        opt.beta2 = cfg.beta2;
        opt.eps = cfg.adam_eps;
        return opt;
    }

    void step(const std::vector<Tensor>& params) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (const Tensor& p : params) {
            Slot& slot = slots_[p.data_ptr()];
            if (slot.m.empty()) {
                slot.m.assign(p.size(), 0.0);
                slot.v.assign(p.size(), 0.0);
            }
            Tensor param = p;
            double* w = param.mut();
            const bool has_grad = param.has_grad();
            for (size_t i = 0; i < param.size(); ++i) {
                const double g = has_grad ? param.grad()[i] : 0.0;
                slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
                slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
                const double mhat = slot.m[i] / bc1;
                const double vhat = slot.v[i] / bc2;
                w[i] -= lr * weight_decay * w[i];
                w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    size_t step_count() const { return t_; }

  private:
    struct Slot {
        std::vector<double> m, v;
    };
    std::unordered_map<TensorData*, Slot> slots_;
    size_t t_ = 0;
};

struct StepMetrics {
    double loss = 0.0;
    double grad_norm = 0.0;
};

// One optimizer step over a minibatch. Gradients flow only into the
// trainable set; a NaN loss aborts with a diagnostic dump.
template <typename SampleRange>
StepMetrics train_step(MoMaModel& model, const SampleRange& batch, AdamW& opt,
                       const std::vector<Tensor>* teacher_cache = nullptr) {
    std::vector<Tensor> params = model.trainable_params();
    for (Tensor& p : params) p.zero_grad();

    StepMetrics metrics;
    TapeScope scope;
    Tensor total;
    size_t idx = 0;
    for (const auto& sample : batch) {
        const Tensor* teacher = teacher_cache ? &(*teacher_cache)[idx] : nullptr;
        Tensor l = model.loss(sample.video, sample.label, teacher);
        total = total.defined() ? add(total, l) : l;
        ++idx;
    }
    if (idx == 0) throw DataError("train_step: empty batch");
    total = scale(total, 1.0 / static_cast<double>(idx));
    metrics.loss = total.item();
    if (!std::isfinite(metrics.loss)) {
        std::string dump = "training aborted: non-finite loss " + std::to_string(metrics.loss) +
                           " at optimizer step " + std::to_string(opt.step_count() + 1) +
                           "; batch size " + std::to_string(idx);
        throw TrainingAbort(dump);
    }
    scope.tape.backward(total);

    double sq = 0.0;
    for (const Tensor& p : params)
        if (p.has_grad())
            for (double g : p.grad()) sq += g * g;
    metrics.grad_norm = std::sqrt(sq);

    opt.step(params);
    return metrics;
}

}  // namespace moma
