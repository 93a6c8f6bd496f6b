#include <catch2/catch_amalgamated.hpp>

#include "moma/data.hpp"
#include "moma/model.hpp"

using namespace moma;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.frames = 2;
    cfg.pix_h = cfg.pix_w = 8;
    cfg.patch = 4;
    cfg.channels = 4;
    cfg.heads = 2;
    cfg.classes = 4;
    cfg.layers = 2;
    cfg.pattern = "[TM]2";
    cfg.window = WindowSpec::square(2);
    cfg.ssm_hidden = 8;
    cfg.ssm_state = 2;
    cfg.distill_lambda = 0.0;
    cfg.seed = 99;
    return cfg;
}

VideoPixels random_video(const ModelConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    VideoPixels v = VideoPixels::zeros(cfg.frames, cfg.pix_h, cfg.pix_w);
    for (double& px : v.pixels) px = rng.uniform(-1.0, 1.0);
    return v;
}

void randomize(Tensor t, Rng& rng, double scale = 0.5) {
    for (size_t i = 0; i < t.size(); ++i) t.mut()[i] = rng.uniform(-scale, scale);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.at(i) - b.at(i)));
    return worst;
}

}  // namespace

TEST_CASE("identity at init: adapters vanish and frames commute") {
    ModelConfig cfg = tiny_config();
    MoMaModel model(cfg);

    ModelConfig skip_cfg = cfg;
    skip_cfg.fusion = FusionKind::Skip;
    MoMaModel backbone(skip_cfg);  // same seed -> bit-identical frozen weights
    REQUIRE(model.frozen_hash() == backbone.frozen_hash());

    Rng rng(5);
    randomize(model.classifier_w(), rng);
    std::memcpy(backbone.classifier_w().mut(), model.classifier_w().ptr(),
                model.classifier_w().size() * sizeof(double));

    NoGradScope ng;
    VideoPixels video = random_video(cfg, 17);
    Tensor logits = model.forward(video);
    Tensor base = backbone.forward(video);
    CHECK(max_abs_diff(logits, base) < 1e-10);

    // permuting input frames leaves logits unchanged: nothing mixes time yet
    Tensor permuted = model.forward(permute_frames(video, {1, 0}));
    CHECK(max_abs_diff(logits, permuted) < 1e-10);
}

TEST_CASE("identity at init holds for every fusion kind") {
    ModelConfig cfg = tiny_config();
    VideoPixels video = random_video(cfg, 23);
    NoGradScope ng;

    ModelConfig skip_cfg = cfg;
    skip_cfg.fusion = FusionKind::Skip;
    Tensor base = MoMaModel(skip_cfg).features(video);

    for (FusionKind kind : {FusionKind::Add, FusionKind::Max, FusionKind::Concat, FusionKind::RawAdan,
                            FusionKind::SeqMod}) {
        ModelConfig c = cfg;
        c.fusion = kind;
        INFO(to_string(kind));
        CHECK(max_abs_diff(MoMaModel(c).features(video), base) < 1e-10);
    }
}

TEST_CASE("zero-initialized classifier gives zero logits") {
    ModelConfig cfg = tiny_config();
    cfg.classes = 2;
    MoMaModel model(cfg);
    for (size_t i = 0; i < model.classifier_w().size(); ++i) model.classifier_w().mut()[i] = 0.0;
    NoGradScope ng;
    Tensor logits = model.forward(random_video(cfg, 3));
    REQUIRE(logits.size() == 2);
    CHECK(logits.at(0) == 0.0);
    CHECK(logits.at(1) == 0.0);
}

TEST_CASE("forward equals the straight-line composition of the five ops") {
    ModelConfig cfg = tiny_config();
    cfg.layers = 1;
    cfg.pattern = "[TM]1";
    MoMaModel model(cfg);

    Rng rng(31);
    randomize(model.ssm_params(0).out_w, rng);
    randomize(model.ssm_params(0).out_b, rng, 0.1);
    randomize(model.classifier_w(), rng);
    randomize(model.classifier_b(), rng, 0.1);

    NoGradScope ng;
    VideoPixels video = random_video(cfg, 41);
    Tensor logits = model.forward(video);

    VideoTensor v = model.embed(video);
    VideoTensor d = divide(v, cfg.window, model.attention_weights(0));
    ModulationPair m = ssm_forward(d.tokens, model.ssm_params(0), cfg.scan_plan, v.grid, cfg.scan_chunk);
    Tensor fused = seqmod(d.tokens, m);
    Tensor final_tokens = ffn(fused, model.ffn_weights(0));
    Tensor pooled = mean_axis(final_tokens, 0);
    Tensor expected = reshape(
        linear(reshape(pooled, {1, cfg.channels}), model.classifier_w(), model.classifier_b()),
        {cfg.classes});

    double worst = 0.0;
    for (size_t i = 0; i < logits.size(); ++i)
        worst = std::max(worst,
                         std::abs(logits.at(i) - expected.at(i)) / std::max(1e-9, std::abs(expected.at(i))));
    CHECK(worst < 1e-9);
}

TEST_CASE("loss: lambda = 0 is pure cross entropy; logits [0,0] give ln 2") {
    ModelConfig cfg = tiny_config();
    cfg.classes = 2;
    MoMaModel model(cfg);
    NoGradScope ng;
    VideoPixels video = random_video(cfg, 7);

    for (size_t i = 0; i < model.classifier_w().size(); ++i) model.classifier_w().mut()[i] = 0.0;
    CHECK(model.loss(video, 0).item() == Catch::Approx(std::log(2.0)).margin(1e-12));

    Rng rng(8);
    randomize(model.classifier_w(), rng);
    Tensor logits = model.forward(video);
    CHECK(model.loss(video, 1).item() ==
          Catch::Approx(cross_entropy_logits(logits, 1).item()).margin(1e-12));
}

TEST_CASE("distillation term vanishes when the teacher is the init-state student") {
    ModelConfig cfg = tiny_config();
    cfg.distill_lambda = 0.1;
    MoMaModel model(cfg);
    NoGradScope ng;
    VideoPixels video = random_video(cfg, 9);

    // comparison mode: teacher shares the student's window regime; at init the
    // adapters are identity, so student features equal teacher features
    Tensor teacher = model.teacher_features(video, cfg.window);
    CHECK(max_abs_diff(teacher, model.features(video)) < 1e-12);

    Tensor logits = model.forward(video);
    const double ce = cross_entropy_logits(logits, 2).item();
    CHECK(model.loss(video, 2, &teacher).item() == Catch::Approx(ce).margin(1e-12));
}

TEST_CASE("label out of range is a data error") {
    ModelConfig cfg = tiny_config();
    MoMaModel model(cfg);
    CHECK_THROWS_AS(model.loss(random_video(cfg, 1), 4), DataError);
}

TEST_CASE("trainable set is exactly the SSM layers plus the classifier") {
    ModelConfig cfg = tiny_config();
    MoMaModel model(cfg);
    for (const auto& nt : model.named_trainable()) {
        INFO(nt.name);
        CHECK(nt.tensor.requires_grad());
        CHECK((nt.name.rfind("ssm", 0) == 0 || nt.name.rfind("fusion", 0) == 0 ||
               nt.name.rfind("classifier", 0) == 0));
    }
    for (const auto& nt : model.named_frozen()) {
        INFO(nt.name);
        CHECK(!nt.tensor.requires_grad());
    }
    // skip fusion trains the classifier only
    ModelConfig skip_cfg = cfg;
    skip_cfg.fusion = FusionKind::Skip;
    CHECK(MoMaModel(skip_cfg).trainable_params().size() == 2);
}

TEST_CASE("lr = 0 leaves parameters bit-unchanged") {
    ModelConfig cfg = tiny_config();
    cfg.lr = 0.0;
    MoMaModel model(cfg);
    std::vector<VideoSample> batch = {{random_video(cfg, 2), 1}};

    auto before = model.named_trainable();
    std::vector<std::vector<double>> saved;
    for (const auto& nt : before) saved.emplace_back(nt.tensor.ptr(), nt.tensor.ptr() + nt.tensor.size());

    AdamW opt = AdamW::from_config(cfg);
    train_step(model, batch, opt);

    auto after = model.named_trainable();
    for (size_t i = 0; i < after.size(); ++i)
        for (size_t j = 0; j < after[i].tensor.size(); ++j) CHECK(after[i].tensor.at(j) == saved[i][j]);
}

TEST_CASE("one step on a single sample decreases its loss for most seeds") {
    size_t decreased = 0;
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        ModelConfig cfg = tiny_config();
        cfg.seed = seed;
        cfg.lr = 1e-4;
        cfg.weight_decay = 0.0;
        MoMaModel model(cfg);
        VideoSample sample{random_video(cfg, seed * 31 + 7), seed % 4};
        double before, after;
        {
            NoGradScope ng;
            before = model.loss(sample.video, sample.label).item();
        }
        AdamW opt = AdamW::from_config(cfg);
        train_step(model, std::vector<VideoSample>{sample}, opt);
        {
            NoGradScope ng;
            after = model.loss(sample.video, sample.label).item();
        }
        if (after < before) ++decreased;
    }
    CHECK(decreased >= 18);
}

TEST_CASE("frozen hash is identical across training steps") {
    ModelConfig cfg = tiny_config();
    MoMaModel model(cfg);
    const std::string before = model.frozen_hash();
    AdamW opt = AdamW::from_config(cfg);
    Rng rng(55);
    for (int step = 0; step < 20; ++step) {
        std::vector<VideoSample> batch = {{random_video(cfg, rng.next_u64()), rng.index(4)}};
        train_step(model, batch, opt);
    }
    CHECK(model.frozen_hash() == before);
}

TEST_CASE("non-finite loss aborts training with a diagnostic") {
    ModelConfig cfg = tiny_config();
    MoMaModel model(cfg);
    model.classifier_w().mut()[0] = std::nan("");
    AdamW opt = AdamW::from_config(cfg);
    std::vector<VideoSample> batch = {{random_video(cfg, 2), 0}};
    CHECK_THROWS_AS(train_step(model, batch, opt), TrainingAbort);
}

TEST_CASE("training injects temporal sensitivity") {
    ModelConfig cfg = tiny_config();
    cfg.frames = 4;
    cfg.pix_h = cfg.pix_w = 16;
    cfg.channels = 8;
    cfg.lr = 3e-3;
    MoMaModel model(cfg);

    SyntheticTask task;
    task.kind = TaskKind::MotionDirection;
    task.noise = 0.05;
    task.samples = 16;
    task.seed = 11;
    task.frames = 4;
    task.height = task.width = 16;
    Dataset ds = gen_task(task);

    AdamW opt = AdamW::from_config(cfg);
    for (int epoch = 0; epoch < 10; ++epoch)
        for (size_t i = 0; i + 4 <= ds.train.size(); i += 4)
            train_step(model, std::vector<VideoSample>(ds.train.begin() + i, ds.train.begin() + i + 4),
                       opt);

    NoGradScope ng;
    const VideoPixels& video = ds.val[0].video;
    Tensor logits = model.forward(video);
    Tensor permuted = model.forward(permute_frames(video, {2, 0, 3, 1}));
    double linf = 0.0;
    for (size_t i = 0; i < logits.size(); ++i)
        linf = std::max(linf, std::abs(logits.at(i) - permuted.at(i)));
    CHECK(linf > 1e-3);
}

TEST_CASE("standalone SSM layers run the decoder pattern") {
    ModelConfig cfg = tiny_config();
    cfg.pattern = "[T]2[M]2";
    MoMaModel model(cfg);
    CHECK(model.pattern().ssm_count() == 2);
    NoGradScope ng;
    Tensor logits = model.forward(random_video(cfg, 4));
    CHECK(all_finite(logits));
}

TEST_CASE("input dims must match the config") {
    ModelConfig cfg = tiny_config();
    MoMaModel model(cfg);
    VideoPixels bad = VideoPixels::zeros(cfg.frames, cfg.pix_h, cfg.pix_w + 1);
    CHECK_THROWS_AS(model.forward(bad), DimensionError);
    ModelConfig bad_patch = cfg;
    bad_patch.patch = 3;
    CHECK_THROWS_AS(MoMaModel(bad_patch), DimensionError);
}
