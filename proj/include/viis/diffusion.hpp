#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "viis/rng.hpp"
#include "viis/tensor.hpp"

namespace viis {

/// Variance schedule in alpha notation: per-step alpha_t in (0,1) and the
/// cumulative products alpha_bar_t, t = 1..T (index 0 = t=1).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  double a(int t) const { return alpha[static_cast<size_t>(t - 1)]; }
  double abar(int t) const { return t == 0 ? 1.0 : alpha_bar[static_cast<size_t>(t - 1)]; }

  void check_step(int t) const {
    if (t < 1 || t > T) throw ParamError("schedule: step " + std::to_string(t) + " outside 1.." + std::to_string(T));
  }
};

/// Linear beta schedule; alpha_t = 1 - beta_t.
inline NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw ParamError("make_schedule: T must be >= 1");
  if (!(beta_start > 0) || !(beta_start <= beta_end) || !(beta_end < 1))
    throw ParamError("make_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.alpha.resize(static_cast<size_t>(T));
  s.alpha_bar.resize(static_cast<size_t>(T));
  double prod = 1;
  for (int t = 0; t < T; ++t) {
    const double beta = (T == 1) ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1);
    s.alpha[static_cast<size_t>(t)] = 1.0 - beta;
    prod *= s.alpha[static_cast<size_t>(t)];
    s.alpha_bar[static_cast<size_t>(t)] = prod;
  }
  return s;
}

/// Defaults chosen so the cumulative signal fraction at the final step is
/// negligible for any T (the endpoints scale inversely with T).
inline NoiseSchedule default_schedule(int T) {
  const double f = 200.0 / T;
  return make_schedule(T, std::min(0.5, 5e-4 * f), std::min(0.999, 0.1 * f));
}

/// Schedule with equal increments of sqrt(1-abar_t): concentrates steps
/// where the posterior tightens, which minimizes the variance deficit the
/// fixed-variance ancestral sampler accumulates on Gaussian data. Used by
/// the distributional sampler checks.
inline NoiseSchedule make_sqrt_schedule(int T, double abar_T) {
  if (T < 1) throw ParamError("make_sqrt_schedule: T must be >= 1");
  if (!(abar_T > 0) || !(abar_T < 1)) throw ParamError("make_sqrt_schedule: abar_T must be in (0,1)");
  NoiseSchedule s;
  s.T = T;
  s.alpha.resize(static_cast<size_t>(T));
  s.alpha_bar.resize(static_cast<size_t>(T));
  const double uT = std::sqrt(1.0 - abar_T);
  double prev = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double u = uT * t / T;
    const double ab = 1.0 - u * u;
    s.alpha[static_cast<size_t>(t - 1)] = ab / prev;
    s.alpha_bar[static_cast<size_t>(t - 1)] = ab;
    prev = ab;
  }
  return s;
}

/// Closed form of the forward process: sqrt(abar_t) z0 + sqrt(1-abar_t) eps.
template <typename S>
Tensor<S> forward_diffuse(const Tensor<S>& z0, int t, const Tensor<S>& eps, const NoiseSchedule& sched) {
  sched.check_step(t);
  require_same_shape(z0, eps, "forward_diffuse");
  const double ab = sched.abar(t);
  const double cs = std::sqrt(ab), cn = std::sqrt(1.0 - ab);
  Tensor<S> out = z0;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = static_cast<S>(cs * z0[i] + cn * eps[i]);
  return out;
}

/// Mean squared denoising objective.
template <typename S>
double diffusion_loss(const Tensor<S>& eps_hat, const Tensor<S>& eps) {
  require_same_shape(eps_hat, eps, "loss");
  double acc = 0;
  for (int64_t i = 0; i < eps.size(); ++i) {
    const double d = static_cast<double>(eps_hat[i]) - eps[i];
    acc += d * d;
  }
  return acc / eps.size();
}

inline double posterior_sigma(const NoiseSchedule& sched, int t) {
  if (t == 1) return 0.0;  // final step is deterministic
  const double ab_t = sched.abar(t), ab_prev = sched.abar(t - 1);
  return std::sqrt((1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - sched.a(t)));
}

/// One ancestral step z_t -> z_{t-1}; xi is the injected standard normal
/// (ignored at t=1).
template <typename S>
Tensor<S> ddpm_step(const Tensor<S>& z_t, int t, const Tensor<S>& eps_hat, const NoiseSchedule& sched,
                    const Tensor<S>& xi) {
  sched.check_step(t);
  require_same_shape(z_t, eps_hat, "ddpm_step");
  const double a_t = sched.a(t), ab_t = sched.abar(t);
  const double inv_sqrt_a = 1.0 / std::sqrt(a_t);
  const double coef = (1.0 - a_t) / std::sqrt(1.0 - ab_t);
  const double sigma = posterior_sigma(sched, t);
  Tensor<S> out = z_t;
  for (int64_t i = 0; i < out.size(); ++i) {
    double v = inv_sqrt_a * (static_cast<double>(z_t[i]) - coef * eps_hat[i]);
    if (sigma > 0) v += sigma * xi[i];
    out[i] = static_cast<S>(v);
  }
  return out;
}

/// Full ancestral sampler from pure noise; predictor(z_t, t) -> eps_hat.
template <typename S>
Tensor<S> sample(const std::function<Tensor<S>(const Tensor<S>&, int)>& predictor, const NoiseSchedule& sched,
                 Rng& rng, const std::vector<int>& shape) {
  Tensor<S> z(shape);
  for (auto& v : z.data) v = static_cast<S>(rng.normal());
  for (int t = sched.T; t >= 1; --t) {
    Tensor<S> eps_hat = predictor(z, t);
    if (!eps_hat.all_finite())
      throw NumericError("sample: predictor returned non-finite values at step " + std::to_string(t));
    Tensor<S> xi(shape);
    if (t > 1)
      for (auto& v : xi.data) v = static_cast<S>(rng.normal());
    z = ddpm_step(z, t, eps_hat, sched, xi);
  }
  return z;
}

/// Optimal noise predictor for z0 ~ N(0, s2 I) under the mean-squared
/// objective; joint-Gaussian conditioning gives
/// E[eps | z_t] = sqrt(1-abar_t) z_t / (abar_t s2 + 1 - abar_t).
template <typename S>
Tensor<S> analytic_gaussian_predictor(const Tensor<S>& z_t, int t, double s2, const NoiseSchedule& sched) {
  if (!(s2 > 0)) throw ParamError("analytic_gaussian_predictor: s2 must be > 0");
  sched.check_step(t);
  const double ab = sched.abar(t);
  const double c = std::sqrt(1.0 - ab) / (ab * s2 + 1.0 - ab);
  Tensor<S> out = z_t;
  for (auto& v : out.data) v = static_cast<S>(c * v);
  return out;
}

}  // namespace viis
