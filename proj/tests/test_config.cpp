#include <catch2/catch_amalgamated.hpp>

#include "moma/config.hpp"

using namespace moma;

TEST_CASE("experiment config parses sections, keys and comments") {
    const std::string text = R"(# sample experiment
[model]
frames = 4
pix_h = 16
pix_w = 16
patch = 4
channels = 16
heads = 4
layers = 2
pattern = [TM]2
window = 2x2
fusion = add
scan_plan = spatial-raster:forward temporal-major:backward
gate_act = silu
lambda = 0.25   # distillation weight
seed = 9

[train]
epochs = 3
batch = 4

[data]
task = static-texture
samples = 40
noise = 0.05
)";
    ExperimentConfig cfg = parse_experiment_config(text);
    CHECK(cfg.model.frames == 4);
    CHECK(cfg.model.channels == 16);
    CHECK(cfg.model.pattern == "[TM]2");
    CHECK(cfg.model.window.str() == "2x2");
    CHECK(cfg.model.fusion == FusionKind::Add);
    REQUIRE(cfg.model.scan_plan.size() == 2);
    CHECK(cfg.model.scan_plan[0].axis == ScanAxis::SpatialRaster);
    CHECK(cfg.model.scan_plan[1].axis == ScanAxis::TemporalMajor);
    CHECK(cfg.model.scan_plan[1].orientation == ScanOrientation::Backward);
    CHECK(cfg.model.gate_act == Activation::Silu);
    CHECK(cfg.model.distill_lambda == 0.25);
    CHECK(cfg.model.seed == 9);
    CHECK(cfg.train.epochs == 3);
    CHECK(cfg.task.kind == TaskKind::StaticTexture);
    CHECK(cfg.task.noise == 0.05);
    // data grid follows the model input dims
    CHECK(cfg.task.height == 16);
    CHECK(cfg.task.frames == 4);
}

TEST_CASE("unknown keys list the valid keys for the section") {
    try {
        parse_experiment_config("[model]\nchannel = 4\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("unknown key 'channel'") != std::string::npos);
        CHECK(msg.find("channels") != std::string::npos);
        CHECK(msg.find("pattern") != std::string::npos);
        CHECK(msg.find("window") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_experiment_config("[optimizer]\nlr = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config("[model]\nchannels\n"), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config("[model]\nchannels = four\n"), ConfigError);
}

TEST_CASE("render-parse round trip preserves every field") {
    ExperimentConfig cfg;
    cfg.model.frames = 6;
    cfg.model.channels = 24;
    cfg.model.heads = 3;
    cfg.model.pattern = "[TTMM]2";
    cfg.model.layers = 4;
    cfg.model.window = WindowSpec::cube(2, 2, 2);
    cfg.model.fusion = FusionKind::RawAdan;
    cfg.model.gate_act = Activation::Silu;
    cfg.model.distill_lambda = 0.0;
    cfg.model.seed = 1234;
    cfg.train.epochs = 7;
    cfg.train.batch = 3;
    cfg.task.kind = TaskKind::StaticTexture;
    cfg.task.samples = 55;
    cfg.task.noise = 0.3;
    cfg.task.seed = 77;

    ExperimentConfig back = parse_experiment_config(render_experiment_config(cfg));
    CHECK(render_experiment_config(back) == render_experiment_config(cfg));
    CHECK(back.model.window.str() == "2x2x2");
    CHECK(back.model.fusion == FusionKind::RawAdan);
    CHECK(back.task.samples == 55);
}

TEST_CASE("window spec strings parse and render") {
    CHECK(WindowSpec::parse("full").kind == WindowSpec::Kind::FullFrame);
    CHECK(WindowSpec::parse("full3d").kind == WindowSpec::Kind::FullVideo);
    CHECK(WindowSpec::parse("4x4").str() == "4x4");
    CHECK(WindowSpec::parse("2x4x4").str() == "2x4x4");
    CHECK_THROWS_AS(WindowSpec::parse("4by4"), ConfigError);
    CHECK_THROWS_AS(WindowSpec::parse(""), ConfigError);
}

TEST_CASE("scan direction strings parse and render") {
    ScanDirection d = scan_direction_from_string("temporal-major:backward");
    CHECK(d.axis == ScanAxis::TemporalMajor);
    CHECK(to_string(d) == "temporal-major:backward");
    CHECK_THROWS_AS(scan_direction_from_string("temporal"), ConfigError);
    CHECK_THROWS_AS(scan_direction_from_string("zigzag:forward"), ConfigError);
    CHECK_THROWS_AS(scan_direction_from_string("spatial-raster:up"), ConfigError);
}
