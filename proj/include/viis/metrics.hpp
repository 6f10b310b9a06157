#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "viis/ispt.hpp"

namespace viis {

/// Luminance from an [H,W,3] image.
inline Image to_gray(const Image& img) {
  if (img.rank() != 3 || img.dim(2) != 3) throw DimError("to_gray: expected 3-channel image");
  Image out({img.dim(0), img.dim(1), 1});
  for (int i = 0; i < img.dim(0) * img.dim(1); ++i)
    out[i] = 0.299f * img[i * 3] + 0.587f * img[i * 3 + 1] + 0.114f * img[i * 3 + 2];
  return out;
}

namespace detail {
inline Image gray_of(const Image& img) {
  if (img.rank() == 3 && img.dim(2) == 3) return to_gray(img);
  if (img.rank() == 3 && img.dim(2) == 1) return img;
  throw DimError("metrics: expected [H,W,1] or [H,W,3] image");
}
// Metrics run on 0-255 quantized luminance for comparability with the usual
// reporting scale.
inline std::vector<int> quantize255(const Image& gray) {
  std::vector<int> q(gray.data.size());
  for (size_t i = 0; i < gray.data.size(); ++i)
    q[i] = std::clamp(static_cast<int>(std::lround(gray.data[i] * 255.0)), 0, 255);
  return q;
}
}  // namespace detail

/// Population standard deviation of grayscale intensities (0-255 scale).
inline double sd(const Image& img) {
  auto q = detail::quantize255(detail::gray_of(img));
  if (q.empty()) throw DimError("sd: empty image");
  double mu = 0;
  for (int v : q) mu += v;
  mu /= q.size();
  double var = 0;
  for (int v : q) var += (v - mu) * (v - mu);
  return std::sqrt(var / q.size());
}

/// Shannon entropy (bits) of the 256-bin grayscale histogram.
inline double en(const Image& img) {
  auto q = detail::quantize255(detail::gray_of(img));
  if (q.empty()) throw DimError("en: empty image");
  std::vector<int64_t> hist(256, 0);
  for (int v : q) ++hist[static_cast<size_t>(v)];
  double h = 0;
  for (int64_t c : hist)
    if (c > 0) {
      const double p = static_cast<double>(c) / q.size();
      h -= p * std::log2(p);
    }
  return h;
}

/// Peak signal-to-noise ratio (dB) on 0-255 quantized values; identical
/// inputs return the +infinity sentinel.
inline double psnr(const Image& a, const Image& b) {
  require_same_shape(a, b, "psnr");
  auto qa = detail::quantize255(detail::gray_of(a));
  auto qb = detail::quantize255(detail::gray_of(b));
  double mse = 0;
  for (size_t i = 0; i < qa.size(); ++i) {
    const double d = qa[i] - qb[i];
    mse += d * d;
  }
  mse /= qa.size();
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), C1=(0.01*255)^2,
/// C2=(0.03*255)^2, on the 0-255 scale; windows are fully interior (valid).
inline double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b, "ssim");
  const Image ga = detail::gray_of(a), gb = detail::gray_of(b);
  const int H = ga.dim(0), W = ga.dim(1);
  constexpr int win = 11, half = 5;
  if (H < win || W < win) throw DimError("ssim: image smaller than 11x11 window");
  auto qa = detail::quantize255(ga);
  auto qb = detail::quantize255(gb);

  double kernel[win];
  double ksum = 0;
  for (int i = 0; i < win; ++i) {
    const double d = i - half;
    kernel[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    ksum += kernel[i];
  }
  for (auto& k : kernel) k /= ksum;

  const double C1 = 0.01 * 255 * 0.01 * 255;
  const double C2 = 0.03 * 255 * 0.03 * 255;

  // separable weighted moments
  auto blur = [&](const std::vector<double>& src) {
    std::vector<double> tmp(src.size()), out(src.size());
    for (int y = 0; y < H; ++y)
      for (int x = half; x < W - half; ++x) {
        double s = 0;
        for (int k = 0; k < win; ++k) s += kernel[k] * src[static_cast<size_t>(y) * W + x - half + k];
        tmp[static_cast<size_t>(y) * W + x] = s;
      }
    for (int y = half; y < H - half; ++y)
      for (int x = half; x < W - half; ++x) {
        double s = 0;
        for (int k = 0; k < win; ++k) s += kernel[k] * tmp[static_cast<size_t>(y - half + k) * W + x];
        out[static_cast<size_t>(y) * W + x] = s;
      }
    return out;
  };
  const size_t npx = static_cast<size_t>(H) * W;
  std::vector<double> fa(npx), fb(npx), faa(npx), fbb(npx), fab(npx);
  for (size_t i = 0; i < npx; ++i) {
    fa[i] = qa[i];
    fb[i] = qb[i];
    faa[i] = fa[i] * fa[i];
    fbb[i] = fb[i] * fb[i];
    fab[i] = fa[i] * fb[i];
  }
  auto mu_a = blur(fa), mu_b = blur(fb), s_aa = blur(faa), s_bb = blur(fbb), s_ab = blur(fab);
  double acc = 0;
  int64_t count = 0;
  for (int y = half; y < H - half; ++y)
    for (int x = half; x < W - half; ++x) {
      const size_t i = static_cast<size_t>(y) * W + x;
      const double ma = mu_a[i], mb = mu_b[i];
      const double va = s_aa[i] - ma * ma, vb = s_bb[i] - mb * mb, cov = s_ab[i] - ma * mb;
      acc += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
      ++count;
    }
  return acc / count;
}

/// Per-image metric rows plus aggregate means. NIQE/BRISQUE columns are
/// reserved so externally computed scores can be merged.
struct MetricReport {
  std::vector<std::string> columns = {"sd", "en", "psnr", "ssim"};
  std::vector<std::pair<std::string, std::map<std::string, double>>> rows;

  void add(const std::string& image, std::map<std::string, double> values) {
    rows.emplace_back(image, std::move(values));
  }
  std::map<std::string, double> means() const {
    std::map<std::string, double> acc;
    std::map<std::string, int> n;
    for (auto& [img, vals] : rows)
      for (auto& [k, v] : vals) {
        acc[k] += v;
        ++n[k];
      }
    for (auto& [k, v] : acc) v /= n[k];
    return acc;
  }
  /// CSV with header `image,<columns>`, 4 decimals, `inf` for the PSNR
  /// sentinel.
  std::string to_csv() const {
    std::string out = "image";
    for (auto& c : columns) out += "," + c;
    out += "\n";
    char buf[64];
    for (auto& [img, vals] : rows) {
      out += img;
      for (auto& c : columns) {
        auto it = vals.find(c);
        if (it == vals.end()) {
          out += ",";
          continue;
        }
        if (std::isinf(it->second))
          out += ",inf";
        else {
          std::snprintf(buf, sizeof buf, ",%.4f", it->second);
          out += buf;
        }
      }
      out += "\n";
    }
    return out;
  }
};

}  // namespace viis
