#pragma once

#include <algorithm>
#include <cmath>

#include "viis/rng.hpp"
#include "viis/tensor.hpp"

namespace viis {

/// Images are Tensor<float> of shape [H,W,C] with unit-interval intensities.
using Image = Tensor<float>;

enum class NoiseMode { gauss_poisson, impulse, none };

/// One corruption instance: gamma darkening, contrast reduction, then noise.
/// gauss_sigma and poisson_lambda are on the 0-255 intensity scale.
struct AugmentParams {
  double gamma = 1.0;
  double contrast = 1.0;
  double gauss_sigma = 0.0;
  double poisson_lambda = 0.0;
  NoiseMode noise_mode = NoiseMode::gauss_poisson;
  double impulse_density = 0.0;

  void validate() const {
    if (gamma <= 0) throw ParamError("augment: gamma must be > 0");
    if (contrast < 0 || contrast > 1) throw ParamError("augment: contrast must be in [0,1]");
    if (gauss_sigma < 0) throw ParamError("augment: gauss_sigma must be >= 0");
    if (poisson_lambda < 0) throw ParamError("augment: poisson_lambda must be >= 0");
    if (impulse_density < 0 || impulse_density > 0.2) throw ParamError("augment: impulse density must be in [0,0.2]");
  }
};

/// Sampling intervals for AugmentParams; also carries the noise mode so all
/// ablation pipelines are expressible from one config.
struct ParamRanges {
  double gamma_min = 3, gamma_max = 10;
  double contrast_min = 0.1, contrast_max = 1;
  double sigma_min = 0, sigma_max = 10;
  double lambda_min = 0, lambda_max = 20;
  NoiseMode noise_mode = NoiseMode::gauss_poisson;
  double impulse_density_min = 0, impulse_density_max = 0.2;

  void validate() const {
    auto ord = [](double lo, double hi, const char* what) {
      if (lo > hi) throw ParamError(std::string("ranges: min > max for ") + what);
    };
    ord(gamma_min, gamma_max, "gamma");
    ord(contrast_min, contrast_max, "contrast");
    ord(sigma_min, sigma_max, "sigma");
    ord(lambda_min, lambda_max, "lambda");
    ord(impulse_density_min, impulse_density_max, "impulse_density");
    if (gamma_min <= 0) throw ParamError("ranges: gamma must be > 0");
  }
};

inline Image gamma_transform(const Image& img, double gamma) {
  if (gamma <= 0) throw ParamError("gamma_transform: gamma must be > 0");
  Image out = img;
  for (auto& v : out.data) v = static_cast<float>(std::pow(static_cast<double>(v), gamma));
  return out;
}

inline Image contrast_adjust(const Image& img, double alpha) {
  if (alpha < 0 || alpha > 1) throw ParamError("contrast_adjust: alpha must be in [0,1]");
  Image out = img;
  for (auto& v : out.data) v = static_cast<float>(alpha * v);
  return out;
}

/// Gaussian noise per channel, Poisson (centered) and impulse noise per
/// pixel shared across channels; output clamped to [0,1].
inline Image add_noise(const Image& img, const AugmentParams& p, Rng& rng) {
  p.validate();
  if (img.rank() != 3) throw DimError("add_noise: image must be [H,W,C]");
  const int H = img.dim(0), W = img.dim(1), C = img.dim(2);
  Image out = img;
  if (p.noise_mode == NoiseMode::none) return out;
  if (p.noise_mode == NoiseMode::impulse) {
    for (int i = 0; i < H * W; ++i) {
      const double u = rng.uniform();
      if (u < p.impulse_density) {
        const float v = (u < p.impulse_density / 2) ? 0.0f : 1.0f;
        for (int c = 0; c < C; ++c) out[i * C + c] = v;
      }
    }
    return out;
  }
  // gauss_poisson: the Poisson term is centered so the noise is zero-mean
  // while its variance still equals lambda on the 0-255 scale.
  for (int i = 0; i < H * W; ++i) {
    const double pshot = static_cast<double>(rng.poisson(p.poisson_lambda)) - p.poisson_lambda;
    for (int c = 0; c < C; ++c) {
      const double g = p.gauss_sigma * rng.normal();
      double v = out[i * C + c] + (g + pshot) / 255.0;
      out[i * C + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

/// Full corruption pipeline: darken, reduce contrast, add noise.
inline Image augment(const Image& img, const AugmentParams& p, Rng& rng) {
  p.validate();
  return add_noise(contrast_adjust(gamma_transform(img, p.gamma), p.contrast), p, rng);
}

inline AugmentParams sample_params(const ParamRanges& r, Rng& rng) {
  r.validate();
  AugmentParams p;
  p.gamma = rng.uniform(r.gamma_min, r.gamma_max);
  p.contrast = rng.uniform(r.contrast_min, r.contrast_max);
  p.gauss_sigma = rng.uniform(r.sigma_min, r.sigma_max);
  p.poisson_lambda = rng.uniform(r.lambda_min, r.lambda_max);
  p.noise_mode = r.noise_mode;
  if (r.noise_mode == NoiseMode::impulse)
    p.impulse_density = rng.uniform(r.impulse_density_min, r.impulse_density_max);
  return p;
}

// Preset ranges for the corruption ablations: reduced intervals, removed
// transforms, impulse noise, no noise.
inline ParamRanges ranges_reduced_gamma() {
  ParamRanges r;
  r.gamma_min = 1;
  r.gamma_max = 5;
  return r;
}
inline ParamRanges ranges_reduced_contrast() {
  ParamRanges r;
  r.contrast_min = 0.55;
  r.contrast_max = 1;
  return r;
}
inline ParamRanges ranges_no_gamma() {
  ParamRanges r;
  r.gamma_min = r.gamma_max = 1;
  return r;
}
inline ParamRanges ranges_no_contrast() {
  ParamRanges r;
  r.contrast_min = r.contrast_max = 1;
  return r;
}
inline ParamRanges ranges_impulse() {
  ParamRanges r;
  r.noise_mode = NoiseMode::impulse;
  return r;
}
inline ParamRanges ranges_no_noise() {
  ParamRanges r;
  r.noise_mode = NoiseMode::none;
  return r;
}

}  // namespace viis
