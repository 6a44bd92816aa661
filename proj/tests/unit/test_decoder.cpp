#include "ssdd/decoder.hpp"
#include "ssdd/error.hpp"

#include "../helpers.hpp"

#include <doctest.h>

#include <set>

using namespace ssdd;
using ssdd::testing::random_tensor;

namespace {

// Replaces the zero-initialized tensors with small random values so that
// every parameter influences the output.
template <class T>
void randomize_zero_params(Decoder<T>& dec, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& [name, var] : dec.params().entries()) {
        auto& v         = const_cast<ag::Var<T>&>(var).mutable_value();
        const bool zero = std::all_of(v.begin(), v.end(), [](T x) { return x == T(0); });
        if (!zero) continue;
        for (auto& x : v) x = static_cast<T>(rng.uniform(-0.1, 0.1));
    }
}

// Family of a parameter: its name with level and block indices removed.
std::string family(const std::string& name) {
    std::string out;
    for (char ch : name)
        if (!std::isdigit(static_cast<unsigned char>(ch))) out.push_back(ch);
    return out;
}

}  // namespace

TEST_SUITE("decoder") {

TEST_CASE("layout follows the presets") {
    const auto m = decoder_layout(resolve_model_size("M"), EncoderSpec::parse("f8c4"), 32);
    CHECK(m.token_grid == 4);
    CHECK(m.widths == std::array<int, 4>{96, 192, 288, 288});
    CHECK(m.num_blocks == 12);
    const auto s = decoder_layout(resolve_model_size("S"), EncoderSpec::parse("f8c4"), 64);
    CHECK(s.num_blocks == 8);
    CHECK(s.token_grid == 8);
    CHECK(s.widths == std::array<int, 4>{48, 96, 144, 144});
    CHECK(s.token_width % s.heads == 0);
    CHECK_THROWS_AS(decoder_layout(resolve_model_size("S"), EncoderSpec::parse("f8c4"), 20), Error);
    CHECK_THROWS_AS(decoder_layout(resolve_model_size("S"), EncoderSpec::parse("f32c64"), 48), Error);
}

TEST_CASE("window mask") {
    const auto small = window_mask(4, 4, 8);
    CHECK(std::all_of(small.allowed.begin(), small.allowed.end(), [](std::uint8_t v) { return v == 1; }));
    CHECK(small.allowed.size() == 256);
    const auto tall = window_mask(10, 1, 8);
    CHECK_FALSE(tall.allows(0, 9));
    CHECK(tall.allows(0, 8));
    CHECK(tall.table_size() == 289);
    const auto grid = window_mask(12, 11, 3);
    for (int p = 0; p < grid.tokens(); ++p)
        for (int q = 0; q < grid.tokens(); ++q) {
            const bool expect = std::abs(p / 11 - q / 11) <= 3 && std::abs(p % 11 - q % 11) <= 3;
            CHECK(grid.allows(p, q) == expect);
        }
}

TEST_CASE("latent upsampling replicates blocks") {
    const auto z  = random_tensor<double>({1, 4, 2, 2}, 1);
    const auto up = upsample_latent(z, 16, 16);
    REQUIRE(up.shape() == Shape{1, 4, 16, 16});
    for (int c = 0; c < 4; ++c)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) CHECK(up.at(0, c, y, x) == z.at(0, c, y / 8, x / 8));
    const auto back = ag::avg_pool(ag::constant(up), 8).value();
    CHECK(max_abs_diff(back, z) < 1e-14);
    CHECK_THROWS_AS(upsample_latent(random_tensor<double>({1, 4, 3, 3}, 2), 16, 16), Error);
}

TEST_CASE("adaptive group norm") {
    Rng rng(3);
    nn::ParamStore<double> store;
    auto proj = nn::Linear<double>::make(store, "p", 5, 12, rng);
    const auto x = random_tensor<double>({2, 6, 4, 4}, 4);
    ag::Var<double> cond(random_tensor<double>({2, 5}, 5));

    // Zero projection: identity modulation.
    auto zero = nn::Linear<double>::make(store, "z", 5, 12, rng, true);
    auto plain = ag::group_norm(ag::constant(x), nn::group_count(6)).value();
    CHECK(max_abs_diff(adaptive_group_norm(ag::constant(x), cond, zero).value(), plain) == 0);

    // Constant maps normalize to zero, leaving the shift.
    Tensor<double> flat({2, 6, 4, 4});
    flat.fill(3.5);
    const auto ss  = proj(ag::silu(cond)).value();
    const auto out = adaptive_group_norm(ag::constant(flat), cond, proj).value();
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 6; ++c)
            for (int i = 0; i < 16; ++i) CHECK(out[(b * 6 + c) * 16 + i] == doctest::Approx(ss[b * 12 + 6 + c]));

    // Different conditioning vectors give different outputs.
    ag::Var<double> other(random_tensor<double>({2, 5}, 6));
    CHECK(max_abs_diff(adaptive_group_norm(ag::constant(x), cond, proj).value(),
                       adaptive_group_norm(ag::constant(x), other, proj).value()) > 0);

    // Layer-norm variant.
    const auto tok = random_tensor<double>({2, 3, 6}, 7);
    CHECK(max_abs_diff(adaptive_layer_norm(ag::constant(tok), cond, zero).value(), ag::layer_norm(ag::constant(tok)).value()) ==
          0);
}

TEST_CASE("time embedding is injective on a grid") {
    const std::vector<double> ts = {0, 0.25, 0.5, 0.75, 1};
    const auto sin = sinusoidal_embedding<double>(ts, 16);
    Decoder<double> dec(testing::tiny_model(), EncoderSpec::parse("f8c4"), 16, 1);
    const auto emb = dec.time_embedding(ts);
    for (int a = 0; a < 5; ++a)
        for (int b = a + 1; b < 5; ++b) {
            double ds = 0, de = 0;
            for (int i = 0; i < 16; ++i) ds = std::max(ds, std::abs(sin[a * 16 + i] - sin[b * 16 + i]));
            for (int i = 0; i < emb.dim(1); ++i)
                de = std::max(de, std::abs(emb[a * emb.dim(1) + i] - emb[b * emb.dim(1) + i]));
            CHECK(ds > 0);
            CHECK(de > 0);
        }
}

TEST_CASE("forward shape law and zero output at initialization") {
    for (const char* preset : {"S", "M"}) {
        for (int res : {32, 64}) {
            Decoder<float> dec(resolve_model_size(preset), EncoderSpec::parse("f8c4"), res, 1);
            const auto xt = random_tensor<float>({1, 3, res, res}, 2);
            const std::vector<float> t = {0.5f};
            const auto out = dec.forward(xt, t, ag::constant(random_tensor<float>({1, 4, res / 8, res / 8}, 3)));
            CHECK(out.velocity.shape() == xt.shape());
            CHECK(out.hidden_tokens.shape() == Shape{1, (res / 8) * (res / 8), dec.layout().token_width});
            for (float v : out.velocity.value()) CHECK(v == 0.0f);
        }
    }
    // Non-square inputs at a size the decoder was not built for.
    Decoder<float> dec(testing::tiny_model(), EncoderSpec::parse("f8c4"), 32, 1);
    const auto out = dec.velocity(random_tensor<float>({2, 3, 16, 24}, 4), 0.3f, random_tensor<float>({2, 4, 2, 3}, 5));
    CHECK(out.shape() == Shape{2, 3, 16, 24});
    CHECK_THROWS_AS(dec.velocity(random_tensor<float>({1, 3, 16, 16}, 4), 0.3f, random_tensor<float>({1, 4, 4, 4}, 5)),
                    Error);
}

TEST_CASE("batch equivariance and conditioning sensitivity") {
    Decoder<double> dec(testing::tiny_model(), EncoderSpec::parse("f8c4"), 16, 7);
    randomize_zero_params(dec, 8);
    const auto x0 = random_tensor<double>({1, 3, 16, 16}, 1), x1 = random_tensor<double>({1, 3, 16, 16}, 2);
    const auto z0 = random_tensor<double>({1, 4, 2, 2}, 3), z1 = random_tensor<double>({1, 4, 2, 2}, 4);
    const std::vector<double> t01 = {0.2, 0.7}, t10 = {0.7, 0.2};
    const auto a = dec.forward(stack_batch<double>({x0, x1}), t01, ag::constant(stack_batch<double>({z0, z1}))).velocity.value();
    const auto b = dec.forward(stack_batch<double>({x1, x0}), t10, ag::constant(stack_batch<double>({z1, z0}))).velocity.value();
    CHECK(max_abs_diff(a.batch_slice(0, 1), b.batch_slice(1, 1)) < 1e-12);
    CHECK(max_abs_diff(a.batch_slice(1, 1), b.batch_slice(0, 1)) < 1e-12);

    Rng rng(11);
    for (int trial = 0; trial < 3; ++trial) {
        auto zp = z0;
        for (auto& v : zp) v += 0.1 * rng.normal();
        CHECK(max_abs_diff(dec.velocity(x0, 0.5, z0), dec.velocity(x0, 0.5, zp)) > 0);
    }
    CHECK(max_abs_diff(dec.velocity(x0, 0.5, z0), dec.velocity(x0, 0.25, z0)) > 0);
}

TEST_CASE("clone is independent") {
    Decoder<float> dec(testing::tiny_model(), EncoderSpec::parse("f8c4"), 16, 1);
    auto copy = dec.clone();
    CHECK(copy.params().hash() == dec.params().hash());
    auto& v = const_cast<ag::Var<float>&>(copy.params().get("decoder/conv_out/weight")).mutable_value();
    v[0] = 1.0f;
    CHECK(copy.params().hash() != dec.params().hash());
}

TEST_CASE("gradients of every layer family in double precision") {
    Decoder<double> dec(testing::tiny_model(), EncoderSpec::parse("f8c4"), 16, 5);
    randomize_zero_params(dec, 6);
    const auto xt  = random_tensor<double>({2, 3, 16, 16}, 1);
    const auto zt  = random_tensor<double>({2, 4, 2, 2}, 2);
    const auto dir = random_tensor<double>({2, 3, 16, 16}, 3);
    const std::vector<double> t = {0.3, 0.8};
    ag::Var<double> z(zt, true);
    auto loss = [&] {
        const auto out = dec.forward(xt, t, z);
        return ag::add(ag::sum(ag::mul(out.velocity, ag::constant(dir))), ag::mean(ag::mul(out.hidden_tokens, out.hidden_tokens)));
    };
    std::set<std::string> seen;
    for (const auto& [name, var] : dec.params().entries()) {
        if (!seen.insert(family(name)).second) continue;
        auto p = var;
        INFO(name);
        CHECK(testing::gradient_check(p, loss, 3, 1e-5, 1e-5) < 1e-3);
    }
    CHECK(seen.size() >= 10);
    INFO("latent input");
    CHECK(testing::gradient_check(z, loss, 4, 1e-5, 1e-5) < 1e-3);
}

}
