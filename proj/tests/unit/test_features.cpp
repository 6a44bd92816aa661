#include "ssdd/error.hpp"
#include "ssdd/features.hpp"

#include "../helpers.hpp"

#include <doctest.h>

using namespace ssdd;
using ssdd::testing::random_tensor;

TEST_SUITE("features") {

TEST_CASE("toy extractor is deterministic and seed dependent") {
    ToyExtractor<double> a(1234), b(1234), c(99);
    CHECK(a.identity() == b.identity());
    CHECK(a.identity() != c.identity());
    const auto img = ag::constant(random_tensor<double>({1, 3, 32, 32}, 1));
    const auto fa = a.features(img), fb = b.features(img), fc = c.features(img);
    REQUIRE(fa.size() == fb.size());
    double diff = 0;
    for (std::size_t i = 0; i < fa.size(); ++i) {
        CHECK(max_abs_diff(fa[i].value(), fb[i].value()) == 0);
        diff = std::max(diff, max_abs_diff(fa[i].value(), fc[i].value()));
    }
    CHECK(diff > 0);
}

TEST_CASE("declared output shapes match") {
    ToyExtractor<float> ex(1);
    for (int res : {32, 64}) {
        const auto shapes = ex.output_shapes(res, res);
        const auto feats  = ex.features(ag::constant(random_tensor<float>({2, 3, res, res}, 2)));
        REQUIRE(shapes.size() == feats.size());
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            const Shape& s = shapes[i];
            CHECK(feats[i].shape() == Shape{2, s[0], s[1], s[2]});
        }
        CHECK(ex.pooled(random_tensor<float>({2, 3, res, res}, 3)).shape() == Shape{2, ex.pooled_dim(res, res)});
    }
}

TEST_CASE("perceptual loss is a premetric") {
    ToyExtractor<double> ex(1234);
    const auto x = random_tensor<double>({2, 3, 16, 16}, 1, 0.5), y = random_tensor<double>({2, 3, 16, 16}, 2, 0.5);
    CHECK(perceptual_distance(x, x, ex) == 0.0);
    CHECK(perceptual_distance(x, y, ex) == doctest::Approx(perceptual_distance(y, x, ex)).epsilon(1e-12));
    auto bumped = x;
    bumped.at(0, 1, 7, 9) += 0.1;
    CHECK(perceptual_distance(x, bumped, ex) > 0);
    CHECK(perceptual_loss(ag::constant(x), ag::constant(y), ex).item() == doctest::Approx(perceptual_distance(x, y, ex)));
}

TEST_CASE("perceptual gradient reaches the image only") {
    ToyExtractor<double> ex(5);
    ag::Var<double> img(random_tensor<double>({1, 3, 8, 8}, 1, 0.5), true);
    const auto ref = ag::constant(random_tensor<double>({1, 3, 8, 8}, 2, 0.5));
    CHECK(testing::gradient_check(img, [&] { return perceptual_loss(img, ref, ex); }) < 1e-5);
}

TEST_CASE("alignment loss values") {
    const auto r = random_tensor<double>({2, 4, 8}, 1);
    CHECK(alignment_loss(ag::constant(r), ag::constant(r)).item() == doctest::Approx(0).scale(1));
    auto neg = r;
    for (auto& v : neg) v = -v;
    CHECK(alignment_loss(ag::constant(neg), ag::constant(r)).item() == doctest::Approx(2.0));
    auto twice = r;
    for (auto& v : twice) v *= 2;
    const auto h = random_tensor<double>({2, 4, 8}, 2);
    CHECK(std::abs(alignment_loss(ag::constant(h), ag::constant(r)).item() -
                   alignment_loss(ag::constant(h), ag::constant(twice)).item()) < 1e-7);

    double total = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto a = random_tensor<double>({1, 1, 512}, 10 + 2 * trial), b = random_tensor<double>({1, 1, 512}, 11 + 2 * trial);
        total += alignment_loss(ag::constant(a), ag::constant(b)).item();
    }
    CHECK(std::abs(total / 1000 - 1.0) < 0.1);
}

TEST_CASE("REPA pooling and head") {
    AlignmentHead<double> head(16, 12, 3);
    CHECK(head.feature_dim() == 12);
    const auto tokens = ag::constant(random_tensor<double>({2, 4, 16}, 1));
    CHECK(head(tokens).shape() == Shape{2, 4, 12});

    const auto feats  = random_tensor<double>({1, 2, 4, 4}, 2);
    const auto pooled = pool_to_tokens(ag::constant(feats), 2, 2).value();
    REQUIRE(pooled.shape() == Shape{1, 4, 2});
    for (int gy = 0; gy < 2; ++gy)
        for (int gx = 0; gx < 2; ++gx)
            for (int c = 0; c < 2; ++c) {
                double s = 0;
                for (int y = 0; y < 2; ++y)
                    for (int x = 0; x < 2; ++x) s += feats.at(0, c, gy * 2 + y, gx * 2 + x);
                CHECK(pooled[(gy * 2 + gx) * 2 + c] == doctest::Approx(s / 4));
            }
    CHECK_THROWS_AS(pool_to_tokens(ag::constant(feats), 3, 3), Error);
    const auto ref = ag::constant(random_tensor<double>({2, 12, 4, 4}, 4));
    const double l = repa_loss(tokens, ref, head, 2, 2).item();
    CHECK(l >= 0);
    CHECK(l <= 2);
}

}
