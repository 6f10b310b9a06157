#pragma once

#include <algorithm>
#include <filesystem>
#include <vector>

#include "viis/image_io.hpp"
#include "viis/ispt.hpp"

namespace viis {

/// Aligned visible/infrared pair.
struct ScenePair {
  Image visible;   // [H,W,3]
  Image infrared;  // [H,W,1]
  std::string id;
};

namespace detail {

struct SceneObject {
  bool is_disk = false;
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // bounding box, inclusive
  float albedo[3] = {0, 0, 0};
  float temperature = 0;

  bool contains(int y, int x) const {
    if (!is_disk) return y >= y0 && y <= y1 && x >= x0 && x <= x1;
    const double cy = 0.5 * (y0 + y1), cx = 0.5 * (x0 + x1);
    const double ry = 0.5 * (y1 - y0), rx = 0.5 * (x1 - x0);
    const double dy = (y - cy) / ry, dx = (x - cx) / rx;
    return dy * dy + dx * dx <= 1.0;
  }
};

struct SceneLayout {
  std::vector<SceneObject> objects;
  /// 1 where any object covers the pixel, 0 elsewhere; identical for the
  /// visible and infrared renderings by construction.
  std::vector<uint8_t> mask;
};

}  // namespace detail

/// Procedural daytime scene: bright rectangles/disks over a textured
/// background; infrared renders per-object temperature with a 3x3 Gaussian
/// blur. Deterministic given the rng state. The layout output (object list
/// and coverage mask) backs the alignment and hot-object checks.
inline ScenePair synth_scene_with_layout(Rng& rng, int size, detail::SceneLayout* layout_out) {
  if (size < 8) throw ParamError("synth_scene: size must be >= 8");
  const int n_objects = 3 + static_cast<int>(rng.below(6));  // 3..8
  detail::SceneLayout layout;
  for (int i = 0; i < n_objects; ++i) {
    detail::SceneObject o;
    o.is_disk = rng.uniform() < 0.5;
    const int min_side = 4;
    const int max_side = std::max(min_side + 1, size / 2);
    const int hgt = min_side + static_cast<int>(rng.below(static_cast<uint64_t>(max_side - min_side)));
    const int wid = min_side + static_cast<int>(rng.below(static_cast<uint64_t>(max_side - min_side)));
    o.y0 = static_cast<int>(rng.below(static_cast<uint64_t>(size - hgt)));
    o.x0 = static_cast<int>(rng.below(static_cast<uint64_t>(size - wid)));
    o.y1 = o.y0 + hgt - 1;
    o.x1 = o.x0 + wid - 1;
    // bright albedo: resample channel means until the mean clears 0.4
    do {
      for (auto& a : o.albedo) a = static_cast<float>(rng.uniform(0.25, 1.0));
    } while ((o.albedo[0] + o.albedo[1] + o.albedo[2]) / 3.0f < 0.4f);
    o.temperature = static_cast<float>(rng.uniform(0.5, 1.0));
    layout.objects.push_back(o);
  }
  const float bg_temp = static_cast<float>(rng.uniform(0.0, 0.15));

  ScenePair pair;
  pair.visible = Image({size, size, 3});
  pair.infrared = Image({size, size, 1});
  layout.mask.assign(static_cast<size_t>(size) * size, 0);

  std::vector<float> temp(static_cast<size_t>(size) * size, 0.0f);
  const double half = (size - 1) / 2.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const size_t i = static_cast<size_t>(y) * size + x;
      // textured background
      float base = static_cast<float>(rng.uniform(0.30, 0.60));
      float rgb[3];
      for (int c = 0; c < 3; ++c) rgb[c] = std::clamp(base + static_cast<float>(rng.uniform(-0.06, 0.06)), 0.0f, 1.0f);
      float tv = std::clamp(bg_temp + static_cast<float>(rng.uniform(0.0, 0.05)), 0.0f, 0.2f);
      for (const auto& o : layout.objects)
        if (o.contains(y, x)) {
          layout.mask[i] = 1;
          for (int c = 0; c < 3; ++c) rgb[c] = o.albedo[c];
          tv = o.temperature;
        }
      // mild vignette on the visible rendering
      const double dy = (y - half) / half, dx = (x - half) / half;
      const float vig = static_cast<float>(1.0 - 0.25 * (dy * dy + dx * dx) / 2.0);
      for (int c = 0; c < 3; ++c) pair.visible[i * 3 + c] = std::clamp(rgb[c] * vig, 0.0f, 1.0f);
      temp[i] = tv;
    }
  // 3x3 Gaussian blur of the temperature field
  const double k[3] = {0.25, 0.5, 0.25};
  std::vector<float> tmp(temp.size());
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double s = 0, wsum = 0;
      for (int j = -1; j <= 1; ++j) {
        const int xx = x + j;
        if (xx < 0 || xx >= size) continue;
        s += k[j + 1] * temp[static_cast<size_t>(y) * size + xx];
        wsum += k[j + 1];
      }
      tmp[static_cast<size_t>(y) * size + x] = static_cast<float>(s / wsum);
    }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double s = 0, wsum = 0;
      for (int j = -1; j <= 1; ++j) {
        const int yy = y + j;
        if (yy < 0 || yy >= size) continue;
        s += k[j + 1] * tmp[static_cast<size_t>(yy) * size + x];
        wsum += k[j + 1];
      }
      pair.infrared[static_cast<size_t>(y) * size + x] = static_cast<float>(s / wsum);
    }
  if (layout_out) *layout_out = std::move(layout);
  return pair;
}

inline ScenePair synth_scene(Rng& rng, int size) { return synth_scene_with_layout(rng, size, nullptr); }

/// Directory layout: ROOT/vis/<id>.ppm + ROOT/ir/<id>.pgm, matched by stem,
/// lexicographic order so runs are reproducible.
struct DatasetManifest {
  std::string root;
  std::vector<std::pair<std::string, std::string>> pairs;  // (visible, infrared) paths
};

inline DatasetManifest scan_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  DatasetManifest m;
  m.root = root;
  const fs::path vis_dir = fs::path(root) / "vis";
  const fs::path ir_dir = fs::path(root) / "ir";
  if (!fs::is_directory(vis_dir) || !fs::is_directory(ir_dir))
    throw IoError(root + ": expected vis/ and ir/ subdirectories");
  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(vis_dir))
    if (e.path().extension() == ".ppm") stems.push_back(e.path().stem().string());
  std::sort(stems.begin(), stems.end());
  for (const auto& s : stems) {
    const fs::path ir = ir_dir / (s + ".pgm");
    if (!fs::exists(ir)) throw IoError(ir.string() + ": missing infrared pair for " + s);
    m.pairs.emplace_back((vis_dir / (s + ".ppm")).string(), ir.string());
  }
  if (m.pairs.empty()) throw IoError(root + ": no image pairs found");
  return m;
}

inline std::vector<ScenePair> load_dataset(const DatasetManifest& m) {
  std::vector<ScenePair> out;
  out.reserve(m.pairs.size());
  for (const auto& [vp, ip] : m.pairs) {
    ScenePair p;
    p.visible = read_image(vp);
    p.infrared = read_image(ip);
    p.id = std::filesystem::path(vp).stem().string();
    if (p.visible.dim(0) != p.infrared.dim(0) || p.visible.dim(1) != p.infrared.dim(1))
      throw IoError(vp + ": visible/infrared extents differ");
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// layout conversions and batch assembly
// ---------------------------------------------------------------------------

/// [H,W,C] image -> one NCHW sample written at batch slot n.
template <typename S>
void image_to_nchw(const Image& img, Tensor<S>& batch, int n) {
  const int H = img.dim(0), W = img.dim(1), C = img.dim(2);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        batch.at4(n, c, y, x) = static_cast<S>(img[(static_cast<int64_t>(y) * W + x) * C + c]);
}

template <typename S>
Image nchw_to_image(const Tensor<S>& batch, int n) {
  const int C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  Image img({H, W, C});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        img[(static_cast<int64_t>(y) * W + x) * C + c] = static_cast<float>(batch.at4(n, c, y, x));
  return img;
}

/// One training batch: per-image corruption parameters sampled fresh, clean
/// visible kept as the regression target. Per-image noise streams derive
/// from (seed, image index) so batches parallelize deterministically.
struct TrainingBatch {
  Tensor<float> degraded;  // [N,3,H,W]
  Tensor<float> infrared;  // [N,1,H,W]
  Tensor<float> clean;     // [N,3,H,W]
};

inline TrainingBatch build_training_batch(const std::vector<const ScenePair*>& pairs, const ParamRanges& ranges,
                                          Rng& rng) {
  if (pairs.empty()) throw ParamError("build_training_batch: empty batch");
  const int N = static_cast<int>(pairs.size());
  const int H = pairs[0]->visible.dim(0), W = pairs[0]->visible.dim(1);
  TrainingBatch b{Tensor<float>({N, 3, H, W}), Tensor<float>({N, 1, H, W}), Tensor<float>({N, 3, H, W})};
  for (int n = 0; n < N; ++n) {
    const ScenePair& p = *pairs[static_cast<size_t>(n)];
    AugmentParams ap = sample_params(ranges, rng);
    Rng noise_rng = Rng::derive(rng.next_u64(), static_cast<uint64_t>(n));
    Image degraded = augment(p.visible, ap, noise_rng);
    image_to_nchw(degraded, b.degraded, n);
    image_to_nchw(p.infrared, b.infrared, n);
    image_to_nchw(p.visible, b.clean, n);
  }
  return b;
}

}  // namespace viis
