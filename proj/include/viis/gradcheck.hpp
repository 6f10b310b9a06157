#pragma once

#include <functional>
#include <string>
#include <vector>

#include "viis/ops.hpp"
#include "viis/rng.hpp"

namespace viis {

/// Central finite-difference check of one differentiable computation.
/// `build` receives a fresh tape plus leaf vars for each input tensor and
/// returns a scalar loss var. Analytic leaf gradients are compared against
/// (f(x+h)-f(x-h))/2h at 64-bit. Returns the max relative error.
struct GradCheckResult {
  double max_rel_err = 0;
  std::string worst;  // "input/index" of the worst element
};

inline GradCheckResult finite_diff_check(
    std::vector<Tensor<double>> inputs,
    const std::function<Tape<double>::Var(Tape<double>&, const std::vector<Tape<double>::Var>&)>& build,
    double h = 1e-5) {
  // analytic
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Tape<double>::Var> vars;
    for (auto& in : inputs) vars.push_back(tape.leaf(in));
    auto loss = build(tape, vars);
    tape.backward(loss);
    for (auto v : vars) analytic.push_back(tape.grad(v));
  }
  auto eval = [&](const std::vector<Tensor<double>>& ins) {
    Tape<double> tape;
    std::vector<Tape<double>::Var> vars;
    for (auto& in : ins) vars.push_back(tape.leaf(in));
    return tape.val(build(tape, vars))[0];
  };
  GradCheckResult res;
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (int64_t j = 0; j < inputs[i].size(); ++j) {
      const double orig = inputs[i][j];
      inputs[i][j] = orig + h;
      const double fp = eval(inputs);
      inputs[i][j] = orig - h;
      const double fm = eval(inputs);
      inputs[i][j] = orig;
      const double num = (fp - fm) / (2 * h);
      const double ana = analytic[i][j];
      const double rel = std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1.0});
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = "input " + std::to_string(i) + " elem " + std::to_string(j);
      }
    }
  }
  return res;
}

/// Like finite_diff_check but only perturbs the listed (input, element) pairs;
/// used for the end-to-end denoiser check where full enumeration is too slow.
inline GradCheckResult finite_diff_check_sparse(
    std::vector<Tensor<double>> inputs,
    const std::function<Tape<double>::Var(Tape<double>&, const std::vector<Tape<double>::Var>&)>& build,
    const std::vector<std::pair<size_t, int64_t>>& picks, double h = 1e-5) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Tape<double>::Var> vars;
    for (auto& in : inputs) vars.push_back(tape.leaf(in));
    auto loss = build(tape, vars);
    tape.backward(loss);
    for (auto v : vars) analytic.push_back(tape.grad(v));
  }
  auto eval = [&](const std::vector<Tensor<double>>& ins) {
    Tape<double> tape;
    std::vector<Tape<double>::Var> vars;
    for (auto& in : ins) vars.push_back(tape.leaf(in));
    return tape.val(build(tape, vars))[0];
  };
  GradCheckResult res;
  for (auto [i, j] : picks) {
    const double orig = inputs[i][j];
    inputs[i][j] = orig + h;
    const double fp = eval(inputs);
    inputs[i][j] = orig - h;
    const double fm = eval(inputs);
    inputs[i][j] = orig;
    const double num = (fp - fm) / (2 * h);
    const double ana = analytic[i][j];
    const double rel = std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1.0});
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst = "input " + std::to_string(i) + " elem " + std::to_string(j);
    }
  }
  return res;
}

inline Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double scl = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = scl * rng.normal();
  return t;
}

}  // namespace viis
