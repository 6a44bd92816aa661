#include "ssdd/corpus.hpp"
#include "ssdd/error.hpp"
#include "ssdd/trainer.hpp"

#include "../helpers.hpp"

#include <doctest.h>

using namespace ssdd;

namespace {

TrainSpec tiny_spec() {
    TrainSpec s;
    s.target_resolution = 16;
    s.resize_min        = 16;
    s.resize_max        = 24;
    s.batch_size        = 2;
    s.ema_start_step    = 2;
    s.seed              = 5;
    return s;
}

struct Rig {
    ToyExtractor<float> extractor{1234};
    std::unique_ptr<Autoencoder> model;
    std::unique_ptr<Trainer> trainer;

    explicit Rig(const TrainSpec& spec, std::uint64_t seed = 3) {
        model   = std::make_unique<Autoencoder>(testing::tiny_model(), EncoderSpec::parse("f8c4"), 16, seed,
                                                repa_feature_dim(extractor, 16));
        trainer = std::make_unique<Trainer>(*model, extractor, spec);
    }
};

const std::vector<Tensor<float>>& images() {
    static const auto imgs = toy_images(4, 24, 2);
    return imgs;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("loss composition") {
    const LossWeights w{0.5, 0.25, 1e-6};
    const auto l = compose_losses(1.0, 2.0, 3.0, 4.0, w);
    CHECK(l.total == 1.0 + 0.5 * 2.0 + 0.25 * 3.0 + 1e-6 * 4.0);
    const auto doubled = compose_losses(1.0, 2.0, 3.0, 4.0, {0.5, 0.5, 1e-6});
    CHECK(doubled.total - compose_losses(1.0, 2.0, 0.0, 4.0, {0.5, 0.5, 1e-6}).total ==
          doctest::Approx(2 * (l.total - compose_losses(1.0, 2.0, 0.0, 4.0, w).total)).epsilon(1e-15));
    CHECK(compose_losses(0.7, 2.0, 3.0, 4.0, {0, 0, 0}).total == 0.7);
    CHECK_FALSE(finite(compose_losses(std::nan(""), 0, 0, 0, w)));
}

TEST_CASE("EMA closed forms") {
    nn::ParamStore<float> live;
    Tensor<float> w({3}, 2.0f);
    live.create("w", w);
    auto state = ema_init(live, 0.9, 0);
    state.shadow["w"].fill(5.0f);
    for (int k = 1; k <= 20; ++k) {
        ema_update(state, live);
        const double expect = 2.0 + std::pow(0.9, k) * 3.0;
        CHECK(state.shadow["w"][0] == doctest::Approx(expect).epsilon(1e-6));
    }
    auto zero = ema_init(live, 0.0, 0);
    zero.shadow["w"].fill(-1.0f);
    ema_update(zero, live);
    CHECK(zero.shadow["w"][0] == 2.0f);
    auto one = ema_init(live, 1.0, 0);
    one.shadow["w"].fill(-1.0f);
    for (int i = 0; i < 5; ++i) ema_update(one, live);
    CHECK(one.shadow["w"][0] == -1.0f);

    // Before start_step the shadow copies the live weights.
    auto late = ema_init(live, 0.5, 10);
    late.shadow["w"].fill(7.0f);
    ema_track(late, live, 3);
    CHECK(late.shadow["w"][0] == 2.0f);
    nn::ParamStore<float> other;
    other.create("v", w);
    CHECK_THROWS_AS(ema_update(late, other), Error);
}

TEST_CASE("zero weights leave only flow matching") {
    auto spec         = tiny_spec();
    spec.lambda_lpips = spec.lambda_repa = spec.lambda_kl = 0;
    Rig rig(spec);
    for (int i = 0; i < 2; ++i) {
        const auto l = rig.trainer->step(images());
        CHECK(l.total == l.fm);
        CHECK(finite(l));
    }
}

TEST_CASE("identical seeds give identical runs") {
    Rig a(tiny_spec()), b(tiny_spec());
    for (int i = 0; i < 10; ++i) {
        const auto la = a.trainer->step(images()), lb = b.trainer->step(images());
        CHECK(la.fm == lb.fm);
        CHECK(la.lpips == lb.lpips);
        CHECK(la.repa == lb.repa);
        CHECK(la.kl == lb.kl);
        CHECK(la.total == lb.total);
    }
    CHECK(a.model->hash() == b.model->hash());
    CHECK(a.trainer->step_count() == 10);
    auto other = tiny_spec();
    other.seed = 6;
    Rig c(other);
    for (int i = 0; i < 3; ++i) c.trainer->step(images());
    CHECK(c.model->hash() != a.model->hash());
}

TEST_CASE("resume reproduces an uninterrupted run") {
    const auto dir = testing::temp_dir("resume");
    Rig full(tiny_spec());
    for (int i = 0; i < 6; ++i) full.trainer->step(images());

    Rig first(tiny_spec());
    for (int i = 0; i < 3; ++i) first.trainer->step(images());
    first.trainer->save(dir);
    Rig second(tiny_spec(), 99);
    second.trainer->restore(dir);
    CHECK(second.trainer->step_count() == 3);
    CHECK(second.model->hash() == first.model->hash());
    for (int i = 0; i < 3; ++i) second.trainer->step(images());
    CHECK(second.model->hash() == full.model->hash());
    const auto& ea = second.trainer->ema("decoder").shadow;
    const auto& eb = full.trainer->ema("decoder").shadow;
    for (const auto& [name, t] : ea) CHECK(max_abs_diff(t, eb.at(name)) == 0);
}

TEST_CASE("a frozen encoder never changes") {
    auto spec          = tiny_spec();
    spec.joint_encoder = false;
    spec.stage         = Stage::finetune_fixed;
    Rig rig(spec);
    CHECK(rig.model->encoder.frozen());
    const auto enc = rig.model->encoder.params().hash();
    const auto dec = rig.model->decoder.params().hash();
    for (int i = 0; i < 100; ++i) rig.trainer->step(images());
    CHECK(rig.model->encoder.params().hash() == enc);
    CHECK(rig.model->decoder.params().hash() != dec);

    auto joint = tiny_spec();
    rig.model->encoder.freeze();
    CHECK_THROWS_AS(Trainer(*rig.model, rig.extractor, joint), Error);
}

TEST_CASE("evaluation does not touch state") {
    Rig rig(tiny_spec());
    const auto before = rig.model->hash();
    Rng r1(4), r2(4);
    const auto batch = draw_batch(images(), 2, tiny_spec(), r1);
    Rng e1(8), e2(8);
    const auto a = rig.trainer->evaluate(batch, e1), b = rig.trainer->evaluate(batch, e2);
    CHECK(a.total == b.total);
    CHECK(rig.model->hash() == before);
    CHECK(rig.trainer->step_count() == 0);
    CHECK(max_abs_diff(batch, draw_batch(images(), 2, tiny_spec(), r2)) == 0);
    CHECK(batch.shape() == Shape{2, 3, 16, 16});
}

TEST_CASE("encoder import") {
    Rig src(tiny_spec(), 1), dst(tiny_spec(), 2);
    WeightMap archive;
    for (const auto& [name, t] : src.model->weights())
        if (name.rfind("encoder/", 0) == 0) archive["pretrained/" + name.substr(8)] = t;
    archive["unrelated"] = Tensor<float>({1});
    CHECK(import_encoder(dst.model->encoder, archive, "pretrained/") == src.model->encoder.params().entries().size());
    CHECK(dst.model->encoder.params().hash() == src.model->encoder.params().hash());
    archive.erase(archive.begin());
    CHECK_THROWS_AS(import_encoder(dst.model->encoder, archive, "pretrained/"), Error);
}

TEST_CASE("weights round trip through the autoencoder") {
    Rig a(tiny_spec(), 1), b(tiny_spec(), 2);
    CHECK(a.model->hash() != b.model->hash());
    b.model->load(a.model->weights());
    CHECK(a.model->hash() == b.model->hash());
    WeightMap partial;
    partial["decoder/conv_out/bias"] = Tensor<float>({3});
    CHECK_THROWS_AS(b.model->load(partial), Error);
    CHECK_NOTHROW(b.model->load(partial, true));
    partial["decoder/conv_out/bias"] = Tensor<float>({4});
    CHECK_THROWS_AS(b.model->load(partial, true), Error);
}

}
