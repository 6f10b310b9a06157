#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "viis/data.hpp"
#include "viis/metrics.hpp"

using namespace viis;
namespace fs = std::filesystem;

namespace {
struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("viis_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(reinterpret_cast<uintptr_t>(this) & 0xffff));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}
}  // namespace

TEST_CASE("image write/read round-trips 8-bit data exactly") {
  TempDir td;
  Rng rng(1);
  Image img({7, 5, 3});
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  const std::string path = (td.path / "rt.ppm").string();
  write_image(img, path);
  Image back = read_image(path);
  REQUIRE(back.shape == img.shape);
  for (int64_t i = 0; i < img.size(); ++i)
    CHECK(back[i] == doctest::Approx(std::lround(img[i] * 255.0) / 255.0).epsilon(1e-6));
  // idempotence: writing the decoded image reproduces the file bit-exactly
  const std::string path2 = (td.path / "rt2.ppm").string();
  write_image(back, path2);
  CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("single-channel graymap round-trip") {
  TempDir td;
  Image img({4, 6, 1});
  for (int64_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i) / 23.0f;
  const std::string path = (td.path / "rt.pgm").string();
  write_image(img, path);
  Image back = read_image(path);
  CHECK(back.shape == std::vector<int>{4, 6, 1});
  for (int64_t i = 0; i < img.size(); ++i)
    CHECK(back[i] == doctest::Approx(std::lround(img[i] * 255.0) / 255.0).epsilon(1e-6));
}

TEST_CASE("2x2 color header is exactly the canonical bytes") {
  TempDir td;
  Image img({2, 2, 3});
  const std::string path = (td.path / "hdr.ppm").string();
  write_image(img, path);
  const std::string bytes = slurp(path);
  const std::string header = "P6\n2 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 12);
  CHECK(bytes.compare(0, header.size(), header) == 0);
}

TEST_CASE("malformed and truncated files fail loudly") {
  TempDir td;
  auto write_bytes = [&](const std::string& name, const std::string& bytes) {
    std::ofstream out(td.path / name, std::ios::binary);
    out << bytes;
    return (td.path / name).string();
  };
  CHECK_THROWS_AS(read_image(write_bytes("bad_magic.ppm", "P3\n2 2\n255\n")), IoError);
  CHECK_THROWS_AS(read_image(write_bytes("bad_maxval.ppm", "P6\n2 2\n65535\n")), IoError);
  CHECK_THROWS_AS(read_image(write_bytes("trunc_hdr.ppm", "P6\n2 ")), IoError);
  CHECK_THROWS_AS(read_image(write_bytes("trunc_body.ppm", "P6\n2 2\n255\nabc")), IoError);
  CHECK_THROWS_AS(read_image(write_bytes("garbage.ppm", "P6\nxx yy\n255\n")), IoError);
  CHECK_THROWS_AS(read_image((td.path / "missing.ppm").string()), IoError);
  // comments in headers are legal
  std::string body(12, '\x40');
  Image ok = read_image(write_bytes("comment.ppm", "P6\n# a comment\n2 2\n255\n" + body));
  CHECK(ok.shape == std::vector<int>{2, 2, 3});
}

TEST_CASE("scene generation is deterministic and spatially aligned") {
  Rng a(9), b(9), c(10);
  ScenePair pa = synth_scene(a, 32);
  ScenePair pb = synth_scene(b, 32);
  ScenePair pc = synth_scene(c, 32);
  CHECK(pa.visible.data == pb.visible.data);
  CHECK(pa.infrared.data == pb.infrared.data);
  CHECK(pa.visible.data != pc.visible.data);
  CHECK_THROWS_AS(synth_scene(a, 4), ParamError);
}

TEST_CASE("hot-object contract: interiors warm, clear background cold") {
  for (uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    Rng rng(seed);
    detail::SceneLayout layout;
    ScenePair p = synth_scene_with_layout(rng, 32, &layout);
    const int n = 32;
    auto covered = [&](int y, int x) {
      if (y < 0 || y >= n || x < 0 || x >= n) return false;
      return layout.mask[static_cast<size_t>(y) * n + x] != 0;
    };
    int interior = 0, clear_bg = 0;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        bool all = true, none = true;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const bool c = covered(y + dy, x + dx);
            all = all && c;
            none = none && !c;
          }
        const float ir = p.infrared[static_cast<int64_t>(y) * n + x];
        if (all) {
          CHECK(ir >= 0.5f);
          ++interior;
        }
        if (none) {
          CHECK(ir <= 0.2f);
          ++clear_bg;
        }
      }
    CHECK(interior > 0);
    CHECK(clear_bg > 0);
  }
}

TEST_CASE("generated scenes have daytime-like brightness") {
  double acc = 0;
  for (int i = 0; i < 100; ++i) {
    Rng rng(1000 + static_cast<uint64_t>(i));
    ScenePair p = synth_scene(rng, 32);
    Image g = to_gray(p.visible);
    double m = 0;
    for (auto v : g.data) m += v;
    acc += m / g.size();
  }
  acc /= 100;
  CHECK(acc >= 0.3);
  CHECK(acc <= 0.7);
}

TEST_CASE("dataset scan is lexicographic and validates pairing") {
  TempDir td;
  fs::create_directories(td.path / "vis");
  fs::create_directories(td.path / "ir");
  Rng rng(3);
  for (const char* id : {"b_scene", "a_scene", "c_scene"}) {
    ScenePair p = synth_scene(rng, 16);
    write_image(p.visible, (td.path / "vis" / (std::string(id) + ".ppm")).string());
    write_image(p.infrared, (td.path / "ir" / (std::string(id) + ".pgm")).string());
  }
  DatasetManifest m = scan_dataset(td.path.string());
  REQUIRE(m.pairs.size() == 3);
  CHECK(m.pairs[0].first.find("a_scene") != std::string::npos);
  CHECK(m.pairs[1].first.find("b_scene") != std::string::npos);
  CHECK(m.pairs[2].first.find("c_scene") != std::string::npos);

  std::vector<ScenePair> loaded = load_dataset(m);
  REQUIRE(loaded.size() == 3);
  CHECK(loaded[0].id == "a_scene");
  CHECK(loaded[0].visible.dim(0) == 16);
  CHECK(loaded[0].infrared.dim(2) == 1);

  fs::remove(td.path / "ir" / "b_scene.pgm");
  CHECK_THROWS_AS(scan_dataset(td.path.string()), IoError);
}

TEST_CASE("training batches carry degraded, infrared, and clean tensors") {
  Rng srng(5);
  std::vector<ScenePair> scenes;
  for (int i = 0; i < 4; ++i) scenes.push_back(synth_scene(srng, 16));
  std::vector<const ScenePair*> batch{&scenes[0], &scenes[1], &scenes[2]};

  // identity-collapsed ranges: degraded equals clean
  ParamRanges identity;
  identity.gamma_min = identity.gamma_max = 1;
  identity.contrast_min = identity.contrast_max = 1;
  identity.noise_mode = NoiseMode::none;
  Rng rng(6);
  TrainingBatch tb = build_training_batch(batch, identity, rng);
  CHECK(tb.degraded.shape == std::vector<int>{3, 3, 16, 16});
  CHECK(tb.infrared.shape == std::vector<int>{3, 1, 16, 16});
  CHECK(tb.clean.shape == std::vector<int>{3, 3, 16, 16});
  CHECK(tb.degraded.data == tb.clean.data);
  // clean tensor matches the source images through the layout conversion
  for (int n = 0; n < 3; ++n) {
    Image back = nchw_to_image(tb.clean, n);
    CHECK(back.data == batch[static_cast<size_t>(n)]->visible.data);
  }

  // non-degenerate ranges corrupt each image differently
  ParamRanges defaults;
  Rng rng2(6);
  TrainingBatch tb2 = build_training_batch(batch, defaults, rng2);
  CHECK(tb2.degraded.data != tb2.clean.data);
  std::vector<float> s0(tb2.degraded.ptr(), tb2.degraded.ptr() + 16 * 16 * 3);
  std::vector<float> s1(tb2.degraded.ptr() + 16 * 16 * 3, tb2.degraded.ptr() + 2 * 16 * 16 * 3);
  CHECK(s0 != s1);  // distinct per-image parameters and noise streams

  CHECK_THROWS_AS(build_training_batch({}, defaults, rng2), ParamError);
}
