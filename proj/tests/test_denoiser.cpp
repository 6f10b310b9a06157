#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "viis/denoiser.hpp"

using namespace viis;

namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.image_size = 16;
  c.scales = 2;
  c.channels = {8, 16};
  c.heads = 2;
  c.points = 2;
  c.T = 10;
  c.time_embed_dim = 8;
  return c;
}

Tensor<float> randn(const std::vector<int>& shape, Rng& rng, double scale = 1.0) {
  Tensor<float> t(shape);
  for (auto& v : t.data) v = static_cast<float>(scale * rng.normal());
  return t;
}

}  // namespace

TEST_CASE("config validation rejects inconsistent settings") {
  CHECK_NOTHROW(tiny_config().validate());

  DenoiserConfig c = tiny_config();
  c.channels = {8};
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = tiny_config();
  c.image_size = 10;  // not divisible by 2^(scales-1)... 10/2 = 5 is fine; use scales 3
  c.scales = 3;
  c.channels = {8, 8, 8};
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = tiny_config();
  c.time_embed_dim = 7;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = tiny_config();
  c.T = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = tiny_config();
  c.channels = {6, 16};  // 6 % heads(2) == 0, ok; 9 is not
  CHECK_NOTHROW(c.validate());
  c.channels = {9, 16};
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = tiny_config();
  c.conditioning_mode = "telekinesis";
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = tiny_config();
  c.latent_mode = "vae";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.latent_mode = "avgpool";
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("time embedding raw sinusoid closed forms") {
  Tensor<double> e2 = time_embed_raw<double>(3, 2);
  CHECK(e2[0] == doctest::Approx(std::sin(3.0)));
  CHECK(e2[1] == doctest::Approx(std::cos(3.0)));

  Tensor<double> e4 = time_embed_raw<double>(7, 4);
  CHECK(e4[0] == doctest::Approx(std::sin(7.0)));
  CHECK(e4[1] == doctest::Approx(std::sin(7.0 * 1e-4)));
  CHECK(e4[2] == doctest::Approx(std::cos(7.0)));
  CHECK(e4[3] == doctest::Approx(std::cos(7.0 * 1e-4)));

  CHECK_THROWS_AS(time_embed_raw<double>(1, 3), ConfigError);
}

TEST_CASE("output has the shape of the noisy input") {
  DenoiserConfig c = tiny_config();
  Denoiser<float> m(c, 1);
  Rng rng(2);
  const int N = 2, px = c.image_size;
  Tensor<float> z = randn({N, 3, px, px}, rng);
  Tensor<float> vis = randn({N, 3, px, px}, rng, 0.3);
  Tensor<float> ir = randn({N, 1, px, px}, rng, 0.3);
  Tensor<float> out = m.predict(z, {3, 7}, vis, ir);
  CHECK(out.shape == z.shape);
  CHECK(out.all_finite());
}

TEST_CASE("freshly initialized model predicts exactly zero") {
  // the output head is zero-initialized, so before any training the predicted
  // noise is identically zero and the first training loss equals mean(eps^2)
  Denoiser<float> m(tiny_config(), 7);
  Rng rng(3);
  const int px = m.cfg.image_size;
  Tensor<float> out = m.predict(randn({1, 3, px, px}, rng), {5}, randn({1, 3, px, px}, rng),
                                randn({1, 1, px, px}, rng));
  for (float v : out.data) CHECK(v == 0.0f);
}

TEST_CASE("offset nets and residual gates start at zero, other weights at fan-in scale") {
  Denoiser<float> m(tiny_config(), 11);
  int zero_groups = 0;
  for (const auto& [name, t] : m.params.items) {
    const bool expect_zero = name.find(".off.") != std::string::npos || name.find(".out.") != std::string::npos ||
                             name.rfind("head.conv.", 0) == 0;
    if (expect_zero) {
      ++zero_groups;
      for (float v : t.data) CHECK(v == 0.0f);
    }
  }
  CHECK(zero_groups > 4);

  // fan-in uniform init: std approx bound/sqrt(3) with bound = 1/sqrt(fan_in)
  const Tensor<float>& w = m.params.get("in_conv.w");  // fan_in = 7*3*3 = 63
  double s1 = 0, s2 = 0;
  for (float v : w.data) {
    s1 += v;
    s2 += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(w.size());
  const double std_emp = std::sqrt(s2 / n - (s1 / n) * (s1 / n));
  const double std_want = 1.0 / std::sqrt(63.0) / std::sqrt(3.0);
  CHECK(std_emp == doctest::Approx(std_want).epsilon(0.15));
  for (float v : w.data) CHECK(std::abs(v) <= 1.0f / std::sqrt(63.0f) + 1e-7f);
}

TEST_CASE("initialization is seed-deterministic with a stable parameter layout") {
  Denoiser<float> a(tiny_config(), 5), b(tiny_config(), 5), c(tiny_config(), 6);
  REQUIRE(a.params.items.size() == b.params.items.size());
  REQUIRE(a.params.items.size() == c.params.items.size());
  CHECK(a.params.total_count() == c.params.total_count());
  bool all_equal = true, any_differ = false;
  for (size_t i = 0; i < a.params.items.size(); ++i) {
    CHECK(a.params.items[i].first == b.params.items[i].first);
    CHECK(a.params.items[i].first == c.params.items[i].first);
    if (a.params.items[i].second.data != b.params.items[i].second.data) all_equal = false;
    if (a.params.items[i].second.data != c.params.items[i].second.data) any_differ = true;
  }
  CHECK(all_equal);
  CHECK(any_differ);
}

TEST_CASE("condition encoders emit one feature map per scale at halved extents") {
  DenoiserConfig c = tiny_config();
  c.scales = 2;
  Denoiser<float> m(c, 9);
  Tape<float> t;
  auto b = m.bind(t);
  Rng rng(4);
  auto vis = t.leaf(randn({2, 3, 16, 16}, rng));
  auto feats = m.encode_conditions_one(t, b, vis, "v");
  REQUIRE(feats.size() == 2);
  CHECK(t.val(feats[0]).shape == std::vector<int>{2, 8, 16, 16});
  CHECK(t.val(feats[1]).shape == std::vector<int>{2, 16, 8, 8});
}

TEST_CASE("step indices are validated per sample") {
  Denoiser<float> m(tiny_config(), 1);
  Rng rng(5);
  const int px = m.cfg.image_size;
  Tensor<float> z = randn({2, 3, px, px}, rng);
  Tensor<float> vis = randn({2, 3, px, px}, rng);
  Tensor<float> ir = randn({2, 1, px, px}, rng);
  CHECK_THROWS_AS(m.predict(z, {3}, vis, ir), DimError);           // one t per sample
  CHECK_THROWS_AS(m.predict(z, {3, 0}, vis, ir), ParamError);      // below range
  CHECK_THROWS_AS(m.predict(z, {3, 11}, vis, ir), ParamError);     // above T
  CHECK_NOTHROW(m.predict(z, {1, 10}, vis, ir));                   // bounds inclusive
}

TEST_CASE("every conditioning mode builds and runs forward") {
  for (const char* mode : {"scam", "addition", "concatenation", "global_attention", "concat_only", "no_visible",
                           "no_infrared"}) {
    DenoiserConfig c = tiny_config();
    c.conditioning_mode = mode;
    Denoiser<float> m(c, 3);
    Rng rng(6);
    const int px = c.image_size;
    Tensor<float> out = m.predict(randn({1, 3, px, px}, rng), {2}, randn({1, 3, px, px}, rng),
                                  randn({1, 1, px, px}, rng));
    CHECK(out.shape == std::vector<int>{1, 3, px, px});
    CHECK(out.all_finite());
  }
}

TEST_CASE("a trained-away-from-zero model responds to every input") {
  DenoiserConfig c = tiny_config();
  Denoiser<float> m(c, 13);
  Rng prng(14);
  for (auto& [name, t] : m.params.items)
    for (auto& v : t.data) v += static_cast<float>(0.02 * prng.normal());

  Rng rng(15);
  const int px = c.image_size;
  Tensor<float> z = randn({1, 3, px, px}, rng);
  Tensor<float> vis = randn({1, 3, px, px}, rng, 0.3);
  Tensor<float> ir = randn({1, 1, px, px}, rng, 0.3);
  Tensor<float> base = m.predict(z, {4}, vis, ir);

  auto differs = [&](const Tensor<float>& other) {
    double acc = 0;
    for (int64_t i = 0; i < base.size(); ++i) acc += std::abs(base[i] - other[i]);
    return acc / static_cast<double>(base.size()) > 1e-7;
  };
  Tensor<float> vis2 = vis;
  vis2[0] += 0.5f;
  CHECK(differs(m.predict(z, {4}, vis2, ir)));
  Tensor<float> ir2 = ir;
  ir2[0] += 0.5f;
  CHECK(differs(m.predict(z, {4}, vis, ir2)));
  Tensor<float> z2 = z;
  z2[0] += 0.5f;
  CHECK(differs(m.predict(z2, {4}, vis, ir)));
  CHECK(differs(m.predict(z, {9}, vis, ir)));  // step index matters too
}
