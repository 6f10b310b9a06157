#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "viis/metrics.hpp"
#include "viis/rng.hpp"

using namespace viis;

namespace {
Image gray_levels(const std::vector<int>& levels, int w) {
  // one row per level value (0-255), w columns
  Image img({static_cast<int>(levels.size()), w, 1});
  for (size_t y = 0; y < levels.size(); ++y)
    for (int x = 0; x < w; ++x) img[static_cast<int64_t>(y) * w + x] = static_cast<float>(levels[y]) / 255.0f;
  return img;
}
Image constant3(int h, int w, float v) {
  Image img({h, w, 3});
  for (auto& x : img.data) x = v;
  return img;
}
}  // namespace

TEST_CASE("luminance conversion coefficients") {
  Image white = constant3(1, 1, 1.0f);
  CHECK(to_gray(white)[0] == doctest::Approx(1.0));
  Image red({1, 1, 3});
  red[0] = 1.0f;
  CHECK(to_gray(red)[0] == doctest::Approx(0.299));
  Image gray = constant3(1, 1, 0.42f);
  CHECK(to_gray(gray)[0] == doctest::Approx(0.42));
  Image bad({1, 1, 1});
  CHECK_THROWS_AS(to_gray(bad), DimError);
}

TEST_CASE("standard deviation on closed-form distributions") {
  CHECK(sd(constant3(4, 4, 0.5f)) == doctest::Approx(0.0));

  std::vector<int> two;
  for (int i = 0; i < 8; ++i) two.push_back(i < 4 ? 0 : 255);
  CHECK(sd(gray_levels(two, 4)) == doctest::Approx(127.5));

  std::vector<int> ramp(256);
  for (int i = 0; i < 256; ++i) ramp[i] = i;
  CHECK(sd(gray_levels(ramp, 2)) == doctest::Approx(std::sqrt(65535.0 / 12.0)).epsilon(1e-9));
  CHECK(sd(gray_levels(ramp, 2)) == doctest::Approx(73.9).epsilon(2e-3));
}

TEST_CASE("histogram entropy on closed-form distributions") {
  CHECK(en(constant3(4, 4, 0.5f)) == doctest::Approx(0.0));

  std::vector<int> ramp(256);
  for (int i = 0; i < 256; ++i) ramp[i] = i;
  CHECK(en(gray_levels(ramp, 3)) == doctest::Approx(8.0));

  std::vector<int> two = {0, 255};
  CHECK(en(gray_levels(two, 5)) == doctest::Approx(1.0));
}

TEST_CASE("sd and en are invariant under pixel permutation") {
  Rng rng(6);
  Image img({12, 12, 1});
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  Image shuffled = img;
  for (int64_t i = shuffled.size() - 1; i > 0; --i)
    std::swap(shuffled[i], shuffled[static_cast<int64_t>(rng.below(static_cast<uint64_t>(i + 1)))]);
  CHECK(sd(img) == doctest::Approx(sd(shuffled)).epsilon(1e-12));
  CHECK(en(img) == doctest::Approx(en(shuffled)).epsilon(1e-12));
}

TEST_CASE("psnr closed forms and sentinel") {
  Image a = constant3(8, 8, 0.25f);
  CHECK(std::isinf(psnr(a, a)));

  Image zero = constant3(8, 8, 0.0f), one = constant3(8, 8, 1.0f);
  CHECK(psnr(zero, one) == doctest::Approx(0.0));

  // MSE exactly 1: images differing by one quantization level everywhere
  std::vector<int> la(16, 100), lb(16, 101);
  CHECK(psnr(gray_levels(la, 4), gray_levels(lb, 4)) == doctest::Approx(20 * std::log10(255.0)).epsilon(1e-9));
  CHECK(std::abs(psnr(gray_levels(la, 4), gray_levels(lb, 4)) - 48.13) < 0.01);

  Image small({2, 2, 3});
  CHECK_THROWS_AS(psnr(a, small), DimError);
}

TEST_CASE("psnr never improves as noise grows") {
  Rng srng(15);
  Image img({24, 24, 1});
  for (auto& v : img.data) v = static_cast<float>(srng.uniform(0.3, 0.7));
  double prev = std::numeric_limits<double>::infinity();
  for (double sigma : {0.01, 0.03, 0.08, 0.2}) {
    double acc = 0;
    const int reps = 20;
    for (int r = 0; r < reps; ++r) {
      Image noisy = img;
      for (auto& v : noisy.data)
        v = std::clamp(v + static_cast<float>(sigma * srng.normal()), 0.0f, 1.0f);
      acc += psnr(noisy, img);
    }
    acc /= reps;
    CHECK(acc < prev);
    prev = acc;
  }
}

TEST_CASE("ssim identity, symmetry, and the constant-image closed form") {
  Rng rng(8);
  Image a({16, 16, 1}), b({16, 16, 1});
  for (auto& v : a.data) v = static_cast<float>(rng.uniform());
  for (auto& v : b.data) v = static_cast<float>(rng.uniform());
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-9));

  // constant vs constant+k saturates contrast/structure terms
  const double m1 = 80, m2 = 140;
  Image ca = gray_levels(std::vector<int>(16, static_cast<int>(m1)), 16);
  Image cb = gray_levels(std::vector<int>(16, static_cast<int>(m2)), 16);
  const double C1 = 0.01 * 255 * 0.01 * 255;
  const double want = (2 * m1 * m2 + C1) / (m1 * m1 + m2 * m2 + C1);
  CHECK(ssim(ca, cb) == doctest::Approx(want).epsilon(1e-6));

  Image tiny({8, 8, 1});
  CHECK_THROWS_AS(ssim(tiny, tiny), DimError);
}

TEST_CASE("ssim of a checkerboard against its negative is negative") {
  const int n = 16;
  Image a({n, n, 1}), b({n, n, 1});
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const float v = ((x + y) % 2 == 0) ? 1.0f : 0.0f;
      a[static_cast<int64_t>(y) * n + x] = v;
      b[static_cast<int64_t>(y) * n + x] = 1.0f - v;
    }
  CHECK(ssim(a, b) < 0.0);
}

TEST_CASE("metric report emits the CSV contract") {
  MetricReport r;
  r.add("img_b", {{"sd", 12.34567}, {"en", 7.0}, {"psnr", std::numeric_limits<double>::infinity()}, {"ssim", 1.0}});
  r.add("img_a", {{"sd", 1.0}, {"en", 2.0}, {"psnr", 30.5}, {"ssim", 0.75}});
  const std::string csv = r.to_csv();
  CHECK(csv.rfind("image,sd,en,psnr,ssim\n", 0) == 0);
  CHECK(csv.find("img_b,12.3457,7.0000,inf,1.0000\n") != std::string::npos);
  CHECK(csv.find("img_a,1.0000,2.0000,30.5000,0.7500\n") != std::string::npos);
  auto mu = r.means();
  CHECK(mu["en"] == doctest::Approx(4.5));
}

TEST_CASE("metric ranges hold on arbitrary images") {
  Rng rng(31);
  for (int rep = 0; rep < 5; ++rep) {
    Image a({16, 16, 3}), b({16, 16, 3});
    for (auto& v : a.data) v = static_cast<float>(rng.uniform());
    for (auto& v : b.data) v = static_cast<float>(rng.uniform());
    CHECK(sd(a) >= 0.0);
    CHECK(en(a) >= 0.0);
    CHECK(en(a) <= 8.0);
    CHECK(psnr(a, b) >= 0.0);
    const double s = ssim(a, b);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }
}
