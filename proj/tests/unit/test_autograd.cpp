#include "ssdd/autograd.hpp"

#include "../helpers.hpp"

#include <doctest.h>

using namespace ssdd;
using ssdd::testing::gradient_check;
using ssdd::testing::random_tensor;
using V = ag::Var<double>;

namespace {

// Projects an output onto a fixed random direction so every entry matters.
V probe(const V& y, std::uint64_t seed) {
    return ag::sum(ag::mul(y, ag::constant(random_tensor<double>(y.shape(), seed))));
}

void expect_grad(V& param, const std::function<V()>& loss, double tol = 1e-6) {
    const double err = gradient_check(param, loss, 8);
    CHECK(err < tol);
}

}  // namespace

TEST_SUITE("autograd") {

TEST_CASE("elementwise ops") {
    V a(random_tensor<double>({2, 3, 4}, 1), true);
    V b(random_tensor<double>({2, 3, 4}, 2), true);
    expect_grad(a, [&] { return probe(ag::add(a, b), 9); });
    expect_grad(b, [&] { return probe(ag::sub(a, b), 9); });
    expect_grad(a, [&] { return probe(ag::mul(a, b), 9); });
    expect_grad(a, [&] { return probe(ag::scale(a, 2.5), 9); });
    expect_grad(a, [&] { return probe(ag::exp(a), 9); });
    expect_grad(a, [&] { return probe(ag::silu(a), 9); });
    expect_grad(a, [&] { return ag::mean(ag::mul(a, a)); });
    expect_grad(a, [&] { return ag::mse(a, b); });
    const std::vector<double> s = {0.5, -2.0};
    expect_grad(a, [&] { return probe(ag::scale_per_sample(a, std::span<const double>(s)), 9); });
}

TEST_CASE("clamp passes gradient only inside the interval") {
    Tensor<double> t({4});
    t[0] = -2;
    t[1] = -0.5;
    t[2] = 0.5;
    t[3] = 2;
    V a(t, true);
    ag::sum(ag::clamp(a, -1.0, 1.0)).backward();
    CHECK(a.grad()[0] == 0);
    CHECK(a.grad()[1] == 1);
    CHECK(a.grad()[2] == 1);
    CHECK(a.grad()[3] == 0);
}

TEST_CASE("shape ops") {
    V a(random_tensor<double>({2, 4, 6, 6}, 3), true);
    V b(random_tensor<double>({2, 2, 6, 6}, 4), true);
    expect_grad(a, [&] { return probe(ag::reshape(a, {2, 4, 36}), 5); });
    expect_grad(b, [&] { return probe(ag::concat_channels(a, b), 5); });
    expect_grad(a, [&] { return probe(ag::slice_channels(a, 1, 2), 5); });
    expect_grad(a, [&] { return probe(ag::upsample_nearest(a, 2), 5); });
    expect_grad(a, [&] { return probe(ag::avg_pool(a, 3), 5); });
    expect_grad(a, [&] { return probe(ag::mean_spatial(a), 5); });
    expect_grad(a, [&] { return probe(ag::tokens_to_nchw(ag::nchw_to_tokens(a), 6, 6), 5); });
    auto tokens = ag::nchw_to_tokens(a);
    CHECK(tokens.shape() == Shape{2, 36, 4});
    CHECK(tokens.value()[(1 * 36 + 7) * 4 + 2] == a.value().at(1, 2, 1, 1));
}

TEST_CASE("linear and convolution") {
    V x(random_tensor<double>({3, 5, 7}, 1), true);
    V w(random_tensor<double>({4, 7}, 2), true);
    V bias(random_tensor<double>({4}, 3), true);
    expect_grad(x, [&] { return probe(ag::linear(x, w, bias), 4); });
    expect_grad(w, [&] { return probe(ag::linear(x, w, bias), 4); });
    expect_grad(bias, [&] { return probe(ag::linear(x, w, bias), 4); });

    V img(random_tensor<double>({2, 3, 7, 7}, 5), true);
    V k(random_tensor<double>({4, 3, 3, 3}, 6), true);
    V kb(random_tensor<double>({4}, 7), true);
    for (int stride : {1, 2}) {
        expect_grad(img, [&] { return probe(ag::conv2d(img, k, kb, stride, 1), 8); });
        expect_grad(k, [&] { return probe(ag::conv2d(img, k, kb, stride, 1), 8); });
        expect_grad(kb, [&] { return probe(ag::conv2d(img, k, kb, stride, 1), 8); });
    }
    V k1(random_tensor<double>({4, 3, 1, 1}, 9), true);
    expect_grad(k1, [&] { return probe(ag::conv2d(img, k1, V{}, 1, 0), 8); });
}

TEST_CASE("convolution matches a direct sum") {
    const auto x = random_tensor<double>({1, 2, 5, 5}, 1);
    const auto w = random_tensor<double>({3, 2, 3, 3}, 2);
    auto y       = ag::conv2d(ag::constant(x), ag::constant(w), V{}, 2, 1).value();
    REQUIRE(y.shape() == Shape{1, 3, 3, 3});
    for (int o = 0; o < 3; ++o)
        for (int oy = 0; oy < 3; ++oy)
            for (int ox = 0; ox < 3; ++ox) {
                double s = 0;
                for (int c = 0; c < 2; ++c)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const int iy = oy * 2 + ky - 1, ix = ox * 2 + kx - 1;
                            if (iy < 0 || ix < 0 || iy >= 5 || ix >= 5) continue;
                            s += x.at(0, c, iy, ix) * w.at(o, c, ky, kx);
                        }
                CHECK(y.at(0, o, oy, ox) == doctest::Approx(s).epsilon(1e-12));
            }
}

TEST_CASE("normalization and modulation") {
    V x(random_tensor<double>({2, 6, 4, 4}, 1, 2.0), true);
    expect_grad(x, [&] { return probe(ag::group_norm(x, 3), 2); });
    V t(random_tensor<double>({2, 5, 8}, 3), true);
    expect_grad(t, [&] { return probe(ag::layer_norm(t), 2); });
    V gamma(random_tensor<double>({6}, 4), true), beta(random_tensor<double>({6}, 5), true);
    expect_grad(gamma, [&] { return probe(ag::affine(x, gamma, beta, false), 2); });
    expect_grad(beta, [&] { return probe(ag::affine(x, gamma, beta, false), 2); });
    V ss(random_tensor<double>({2, 12}, 6), true);
    expect_grad(ss, [&] { return probe(ag::modulate(x, ss, false), 2); });
    expect_grad(x, [&] { return probe(ag::modulate(x, ss, false), 2); });
    V ss8(random_tensor<double>({2, 16}, 7), true);
    expect_grad(ss8, [&] { return probe(ag::modulate(t, ss8, true), 2); });

    // Normalized groups have zero mean and unit variance.
    auto y = ag::group_norm(ag::constant(x.value()), 3, 0.0).value();
    for (int b = 0; b < 2; ++b)
        for (int g = 0; g < 3; ++g) {
            double m = 0, v = 0;
            for (int c = 2 * g; c < 2 * g + 2; ++c)
                for (int i = 0; i < 16; ++i) m += y[(b * 6 + c) * 16 + i];
            m /= 32;
            for (int c = 2 * g; c < 2 * g + 2; ++c)
                for (int i = 0; i < 16; ++i) v += (y[(b * 6 + c) * 16 + i] - m) * (y[(b * 6 + c) * 16 + i] - m);
            CHECK(m == doctest::Approx(0).scale(1));
            CHECK(v / 32 == doctest::Approx(1));
        }
}

TEST_CASE("geglu, attention and misc heads") {
    V g(random_tensor<double>({5, 8}, 1), true);
    expect_grad(g, [&] { return probe(ag::geglu(g), 2); });

    const int heads = 2, gh = 3, gw = 4, width = 8, dist = 1;
    V qkv(random_tensor<double>({2, gh * gw, 3 * width}, 3), true);
    V rel(random_tensor<double>({heads, (2 * dist + 1) * (2 * dist + 1)}, 4), true);
    expect_grad(qkv, [&] { return probe(ag::window_attention(qkv, rel, heads, gh, gw, dist), 5); });
    expect_grad(rel, [&] { return probe(ag::window_attention(qkv, rel, heads, gh, gw, dist), 5); });

    // Rows of the attention weights sum to one and respect the window.
    auto wts = ag::window_attention_weights(qkv.value(), rel.value(), heads, gh, gw, dist);
    for (int b = 0; b < 2; ++b)
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < gh * gw; ++i) {
                double s = 0;
                for (int j = 0; j < gh * gw; ++j) {
                    const double w = wts.at(b, h, i, j);
                    s += w;
                    if (std::abs(i / gw - j / gw) > dist || std::abs(i % gw - j % gw) > dist) CHECK(w == 0);
                }
                CHECK(s == doctest::Approx(1));
            }

    V mu(random_tensor<double>({2, 3, 2, 2}, 6), true), lv(random_tensor<double>({2, 3, 2, 2}, 7), true);
    expect_grad(mu, [&] { return ag::kl_normal(mu, lv); });
    expect_grad(lv, [&] { return ag::kl_normal(mu, lv); });
    V f(random_tensor<double>({2, 5, 3, 3}, 8), true);
    expect_grad(f, [&] { return probe(ag::channel_unit_normalize(f), 9); });
    V ra(random_tensor<double>({4, 6}, 10), true), rb(random_tensor<double>({4, 6}, 11), true);
    expect_grad(ra, [&] { return probe(ag::cosine_rows(ra, rb), 12); });
}

TEST_CASE("shared subexpressions accumulate gradient") {
    V a(random_tensor<double>({3}, 1), true);
    auto y = ag::add(ag::mul(a, a), a);
    ag::sum(y).backward();
    for (int i = 0; i < 3; ++i) CHECK(a.grad()[i] == doctest::Approx(2 * a.value()[i] + 1));
}

TEST_CASE("no-grad guard builds no graph") {
    V a(random_tensor<double>({3}, 1), true);
    {
        ag::NoGradGuard guard;
        CHECK_FALSE(ag::grad_enabled());
        auto y = ag::mul(a, a);
        CHECK_FALSE(y.requires_grad());
    }
    CHECK(ag::grad_enabled());
}

}
