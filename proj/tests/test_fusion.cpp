#include <catch2/catch_amalgamated.hpp>

#include "moma/fusion.hpp"

using namespace moma;

namespace {

ModulationPair zero_pair(const Shape& s) { return {Tensor::zeros(s), Tensor::zeros(s)}; }

}  // namespace

TEST_CASE("seqmod with zero sequences is exactly the skip connection") {
    Rng rng(1);
    Tensor x = Tensor::randn({6, 4}, rng);
    Tensor out = seqmod(x, zero_pair(x.shape()));
    for (size_t i = 0; i < x.size(); ++i) CHECK(out.at(i) == x.at(i));
}

TEST_CASE("seqmod direct formula evaluation") {
    Tensor x = Tensor::from({1, 2}, {1, 2});
    ModulationPair m{Tensor::from({1, 2}, {0.5, 1.0}), Tensor::from({1, 2}, {0.1, -0.2})};
    Tensor out = seqmod(x, m);
    CHECK(out.at(0) == Catch::Approx(1.6).margin(1e-15));
    CHECK(out.at(1) == Catch::Approx(3.8).margin(1e-15));
}

TEST_CASE("seqmod gradient wrt x is diag(1 + y1)") {
    Rng rng(2);
    Tensor x = Tensor::randn({3, 4}, rng).set_requires_grad();
    ModulationPair m{Tensor::randn({3, 4}, rng), Tensor::randn({3, 4}, rng)};
    TapeScope scope;
    scope.tape.backward(sum_all(seqmod(x, m)));
    for (size_t i = 0; i < x.size(); ++i)
        CHECK(x.grad()[i] == Catch::Approx(1.0 + m.scale.at(i)).margin(1e-12));

    // finite differences agree
    auto loss = [&] {
        NoGradScope ng;
        return sum_all(seqmod(x, m)).item();
    };
    const double eps = 1e-6;
    for (size_t i = 0; i < 4; ++i) {
        const double saved = x.at(i);
        x.mut()[i] = saved + eps;
        const double lp = loss();
        x.mut()[i] = saved - eps;
        const double lm = loss();
        x.mut()[i] = saved;
        const double numeric = (lp - lm) / (2 * eps);
        CHECK(std::abs(x.grad()[i] - numeric) / std::max(1.0, std::abs(numeric)) < 1e-6);
    }
}

TEST_CASE("seqmod perturbation decomposes as y1*x + y2") {
    Rng rng(3);
    Tensor x = Tensor::randn({5, 3}, rng);
    ModulationPair m{Tensor::randn({5, 3}, rng), Tensor::randn({5, 3}, rng)};
    Tensor out = seqmod(x, m);
    for (size_t i = 0; i < x.size(); ++i)
        CHECK(out.at(i) - x.at(i) ==
              Catch::Approx(m.scale.at(i) * x.at(i) + m.bias.at(i)).margin(1e-12));
}

TEST_CASE("fuse skip returns x untouched for any modulation") {
    Rng rng(4);
    Tensor x = Tensor::randn({4, 4}, rng);
    ModulationPair m{Tensor::randn({4, 4}, rng), Tensor::randn({4, 4}, rng)};
    FusionParams f = FusionParams::init(FusionKind::Skip, 4);
    Tensor out = fuse(f, x, m);
    for (size_t i = 0; i < x.size(); ++i) CHECK(out.at(i) == x.at(i));
}

TEST_CASE("fuse max elementwise example") {
    Tensor x = Tensor::from({1, 2}, {1, -2});
    ModulationPair m{Tensor::from({1, 2}, {0, 3}), Tensor::zeros({1, 2})};
    FusionParams f = FusionParams::init(FusionKind::Max, 2);
    Tensor out = fuse(f, x, m);
    CHECK(out.at(0) == 1.0);
    CHECK(out.at(1) == 3.0);
}

TEST_CASE("raw_adan with alpha=1, beta=gamma=0 is the skip path") {
    Rng rng(5);
    Tensor x = Tensor::randn({6, 4}, rng);
    ModulationPair m{Tensor::randn({6, 4}, rng), Tensor::randn({6, 4}, rng)};
    FusionParams f = FusionParams::init(FusionKind::RawAdan, 4);  // head init -> (1, 0, 0)
    Tensor out = fuse(f, x, m);
    for (size_t i = 0; i < x.size(); ++i) CHECK(out.at(i) == Catch::Approx(x.at(i)).margin(1e-15));
}

TEST_CASE("every fusion kind starts as the identity on the attention stream") {
    Rng rng(6);
    Tensor x = Tensor::randn({8, 4}, rng);
    // out_proj zero-init makes both SSM sequences zero at step 0; max's scale
    // half is biased low instead (see model init)
    for (FusionKind kind :
         {FusionKind::Skip, FusionKind::Add, FusionKind::Concat, FusionKind::RawAdan, FusionKind::SeqMod}) {
        FusionParams f = FusionParams::init(kind, 4);
        Tensor out = fuse(f, x, zero_pair(x.shape()));
        INFO(to_string(kind));
        for (size_t i = 0; i < x.size(); ++i) CHECK(out.at(i) == Catch::Approx(x.at(i)).margin(1e-12));
    }
    {
        FusionParams f = FusionParams::init(FusionKind::Max, 4);
        ModulationPair low{Tensor::full({8, 4}, -4.0), Tensor::zeros({8, 4})};
        Tensor out = fuse(f, x, low);
        for (size_t i = 0; i < x.size(); ++i) CHECK(out.at(i) == x.at(i));
    }
}

TEST_CASE("weighted average generalizes add; 1:1 weights reproduce it") {
    Rng rng(7);
    Tensor x = Tensor::randn({4, 3}, rng);
    ModulationPair m{Tensor::randn({4, 3}, rng), Tensor::zeros({4, 3})};
    FusionParams f = FusionParams::init(FusionKind::Add, 3);
    Tensor plain = fuse(f, x, m);
    for (size_t i = 0; i < x.size(); ++i)
        CHECK(plain.at(i) == Catch::Approx(x.at(i) + m.scale.at(i)).margin(1e-15));

    f.add_w1 = 0.25;
    f.add_w2 = 2.0;
    Tensor weighted = fuse(f, x, m);
    for (size_t i = 0; i < x.size(); ++i)
        CHECK(weighted.at(i) == Catch::Approx(0.25 * x.at(i) + 2.0 * m.scale.at(i)).margin(1e-15));
}

TEST_CASE("raw_adan equals seqmod for a single token when the head is identity") {
    // HWT = 1, C = 1: pooling is the identity, so wiring the head to
    // (alpha, beta, gamma) = (1, y2, y1) reproduces y1*x + x + y2.
    Rng rng(8);
    Tensor x = Tensor::randn({1, 1}, rng);
    ModulationPair m{Tensor::randn({1, 1}, rng), Tensor::randn({1, 1}, rng)};
    FusionParams f = FusionParams::init(FusionKind::RawAdan, 1);
    // pooled = [y1, y2]; alpha = 1, beta = y2, gamma = y1
    f.adan_w.mut()[0 * 3 + 2] = 1.0;  // gamma <- y1
    f.adan_w.mut()[1 * 3 + 1] = 1.0;  // beta  <- y2
    f.adan_b.mut()[1] = 0.0;
    Tensor adan = fuse(f, x, m);
    Tensor sm = seqmod(x, m);
    CHECK(adan.at(0) == Catch::Approx(sm.at(0)).margin(1e-12));
}

TEST_CASE("unknown fusion kind string is a config error") {
    CHECK_THROWS_AS(fusion_from_string("blend"), ConfigError);
    CHECK(fusion_from_string("seqmod") == FusionKind::SeqMod);
}

TEST_CASE("shape mismatch is a dimension error") {
    Tensor x = Tensor::zeros({2, 3});
    ModulationPair m{Tensor::zeros({3, 2}), Tensor::zeros({3, 2})};
    CHECK_THROWS_AS(seqmod(x, m), DimensionError);
}
