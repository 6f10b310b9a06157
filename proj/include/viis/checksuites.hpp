#pragma once

#include "viis/attention.hpp"
#include "viis/denoiser.hpp"
#include "viis/diffusion.hpp"
#include "viis/gradcheck.hpp"

namespace viis {

/// One line of a verification suite: a measured error or deviation plus the
/// bound it must stay under.
struct CheckRow {
  std::string name;
  double value = 0;
  double tol = 0;
  bool pass() const { return std::isfinite(value) && value <= tol; }
};

namespace detail {
/// Reduces any tensor-valued output to a scalar via mean squared distance to
/// a fixed random target, which keeps every output element in the gradient.
inline Tape<double>::Var scalarize(Tape<double>& t, Tape<double>::Var x, Rng& rng) {
  Tensor<double> target(t.val(x).shape);
  for (auto& v : target.data) v = rng.normal();
  return mse_const(t, x, target);
}
}  // namespace detail

/// Finite-difference verification of every differentiable op and the
/// end-to-end tiny denoiser, across `seeds` random draws.
inline std::vector<CheckRow> gradient_suite(int seeds = 5) {
  using Var = Tape<double>::Var;
  std::vector<CheckRow> rows;
  auto run = [&](const std::string& name, double tol,
                 const std::function<double(Rng&)>& one) {
    double worst = 0;
    for (int s = 0; s < seeds; ++s) {
      Rng rng(100 + static_cast<uint64_t>(s));
      worst = std::max(worst, one(rng));
    }
    rows.push_back({name, worst, tol});
  };

  run("silu", 1e-6, [](Rng& rng) {
    auto x = random_tensor({3, 4}, rng);
    Rng r2 = rng;
    return finite_diff_check({x}, [&](Tape<double>& t, auto& v) {
             Rng r = r2;
             return detail::scalarize(t, silu(t, v[0]), r);
           }).max_rel_err;
  });
  run("softmax", 1e-6, [](Rng& rng) {
    auto x = random_tensor({2, 3, 5}, rng);
    Rng r2 = rng;
    return finite_diff_check({x}, [&](Tape<double>& t, auto& v) {
             Rng r = r2;
             return detail::scalarize(t, softmax(t, v[0]), r);
           }).max_rel_err;
  });
  run("linear", 1e-6, [](Rng& rng) {
    auto x = random_tensor({2, 3, 4}, rng);
    auto w = random_tensor({4, 5}, rng);
    auto b = random_tensor({5}, rng);
    Rng r2 = rng;
    return finite_diff_check({x, w, b}, [&](Tape<double>& t, auto& v) {
             Rng r = r2;
             return detail::scalarize(t, linear(t, v[0], v[1], v[2]), r);
           }).max_rel_err;
  });
  run("conv2d", 1e-6, [](Rng& rng) {
    auto x = random_tensor({2, 3, 5, 5}, rng);
    auto w = random_tensor({4, 3, 3, 3}, rng);
    auto b = random_tensor({4}, rng);
    Rng r2 = rng;
    return finite_diff_check({x, w, b}, [&](Tape<double>& t, auto& v) {
             Rng r = r2;
             return detail::scalarize(t, conv2d(t, v[0], v[1], v[2], 1, 1), r);
           }).max_rel_err;
  });
  run("group_norm", 1e-5, [](Rng& rng) {
    auto x = random_tensor({2, 4, 3, 3}, rng);
    auto g = random_tensor({4}, rng);
    auto b = random_tensor({4}, rng);
    Rng r2 = rng;
    return finite_diff_check({x, g, b}, [&](Tape<double>& t, auto& v) {
             Rng r = r2;
             return detail::scalarize(t, group_norm(t, v[0], 2, v[1], v[2]), r);
           }).max_rel_err;
  });
  run("resample", 1e-6, [](Rng& rng) {
    auto x = random_tensor({2, 3, 4, 4}, rng);
    Rng r2 = rng;
    return finite_diff_check({x}, [&](Tape<double>& t, auto& v) {
             Rng r = r2;
             auto d = resample(t, v[0], Resample::down2_avg);
             return detail::scalarize(t, resample(t, d, Resample::up2_nearest), r);
           }).max_rel_err;
  });
  run("add_nc", 1e-6, [](Rng& rng) {
    auto x = random_tensor({2, 3, 4, 4}, rng);
    auto b = random_tensor({2, 3}, rng);
    Rng r2 = rng;
    return finite_diff_check({x, b}, [&](Tape<double>& t, auto& v) {
             Rng r = r2;
             return detail::scalarize(t, add_nc(t, v[0], v[1]), r);
           }).max_rel_err;
  });
  run("bilinear_sample", 1e-6, [](Rng& rng) {
    auto m = random_tensor({2, 5, 5}, rng);
    Tensor<double> coords({6, 2});
    for (auto& c : coords.data) c = rng.uniform(-0.6, 4.6);
    // keep FD perturbations clear of the integer lattice kinks
    for (auto& c : coords.data)
      if (std::abs(c - std::round(c)) < 0.05) c += 0.1;
    Rng r2 = rng;
    return finite_diff_check({m, coords}, [&](Tape<double>& t, auto& v) {
             Rng r = r2;
             return detail::scalarize(t, bilinear_sample(t, v[0], v[1]), r);
           }).max_rel_err;
  });
  run("deform_attention", 1e-4, [](Rng& rng) {
    const int N = 1, C = 4, H = 5, W = 5;
    DeformAttnVars<double> p;
    p.M = 2;
    p.K = 3;
    p.d = C / p.M;
    auto F = random_tensor({N, C, H, W}, rng, 0.5);
    auto Fc = random_tensor({N, C, H, W}, rng, 0.5);
    auto wq = random_tensor({C, p.M * p.d}, rng, 0.4), bq = random_tensor({p.M * p.d}, rng, 0.2);
    auto wv = random_tensor({C, p.M * p.d}, rng, 0.4), bv = random_tensor({p.M * p.d}, rng, 0.2);
    auto ow = random_tensor({p.M, p.d, 2 * p.K}, rng, 0.3), ob = random_tensor({p.M, 2 * p.K}, rng, 0.3);
    auto aw = random_tensor({p.M, p.d, p.K}, rng, 0.4), ab = random_tensor({p.M, p.K}, rng, 0.2);
    auto wm = random_tensor({p.M, p.d, C}, rng, 0.4);
    Rng r2 = rng;
    return finite_diff_check(
               {F, Fc, wq, bq, wv, bv, ow, ob, aw, ab, wm},
               [&](Tape<double>& t, auto& v) {
                 DeformAttnVars<double> q = p;
                 q.wq = v[2]; q.bq = v[3]; q.wv = v[4]; q.bv = v[5];
                 q.off_w = v[6]; q.off_b = v[7]; q.att_w = v[8]; q.att_b = v[9]; q.wm = v[10];
                 Rng r = r2;
                 return detail::scalarize(t, scam(t, v[0], v[1], q), r);
               },
               1e-6)
        .max_rel_err;
  });
  run("global_attention", 1e-5, [](Rng& rng) {
    const int N = 1, C = 4, H = 3, W = 3;
    DeformAttnVars<double> p;
    p.M = 2;
    p.K = 1;
    p.d = C / p.M;
    auto F = random_tensor({N, C, H, W}, rng, 0.5);
    auto Fc = random_tensor({N, C, H, W}, rng, 0.5);
    auto wq = random_tensor({C, p.M * p.d}, rng, 0.4), bq = random_tensor({p.M * p.d}, rng, 0.2);
    auto wk = random_tensor({C, p.M * p.d}, rng, 0.4), bk = random_tensor({p.M * p.d}, rng, 0.2);
    auto wv = random_tensor({C, p.M * p.d}, rng, 0.4), bv = random_tensor({p.M * p.d}, rng, 0.2);
    auto wm = random_tensor({p.M, p.d, C}, rng, 0.4);
    Rng r2 = rng;
    return finite_diff_check(
               {F, Fc, wq, bq, wk, bk, wv, bv, wm},
               [&](Tape<double>& t, auto& v) {
                 DeformAttnVars<double> q = p;
                 q.wq = v[2]; q.bq = v[3]; q.wk = v[4]; q.bk = v[5]; q.wv = v[6]; q.bv = v[7]; q.wm = v[8];
                 Rng r = r2;
                 return detail::scalarize(t, global_attention(t, v[0], v[1], q), r);
               },
               1e-6)
        .max_rel_err;
  });
  run("denoiser_end_to_end", 1e-3, [](Rng& rng) {
    DenoiserConfig mc;
    mc.image_size = 8;
    mc.scales = 2;
    mc.channels = {4, 8};
    mc.heads = 2;
    mc.points = 2;
    mc.T = 10;
    mc.time_embed_dim = 8;
    Denoiser<double> model(mc, rng.next_u64());
    // move off exact zero so the zero-init layers also get exercised
    for (auto& [name, t] : model.params.items)
      for (auto& v : t.data) v += 0.02 * rng.normal();
    std::vector<Tensor<double>> inputs;
    std::vector<std::string> names;
    for (auto& [name, t] : model.params.items) {
      inputs.push_back(t);
      names.push_back(name);
    }
    const size_t np = inputs.size();
    Tensor<double> z = random_tensor({1, 3, 8, 8}, rng, 0.5);
    Tensor<double> vis = random_tensor({1, 3, 8, 8}, rng, 0.3);
    Tensor<double> ir = random_tensor({1, 1, 8, 8}, rng, 0.3);
    inputs.push_back(z);
    Tensor<double> target = random_tensor({1, 3, 8, 8}, rng);
    auto build = [&](Tape<double>& t, const std::vector<Tape<double>::Var>& v) {
      ParamStore<double> ps;  // structural clone bound to the tape leaves
      typename Denoiser<double>::Bind b;
      b.tape = &t;
      for (size_t i = 0; i < np; ++i) {
        ps.add(names[i], Tensor<double>({1}));
        b.vars.push_back(v[i]);
      }
      Denoiser<double> m2(mc, std::move(ps));
      b.store = &m2.params;
      auto vis_v = t.leaf(vis);
      auto ir_v = t.leaf(ir);
      auto out = m2.forward(t, b, v[np], {3}, vis_v, ir_v);
      return mse_const(t, out, target);
    };
    std::vector<std::pair<size_t, int64_t>> picks;
    for (int i = 0; i < 20; ++i) {
      const size_t pi = rng.below(np + 1);
      picks.emplace_back(pi, static_cast<int64_t>(rng.below(static_cast<uint64_t>(inputs[pi].size()))));
    }
    return finite_diff_check_sparse(inputs, build, picks, 1e-5).max_rel_err;
  });
  return rows;
}

/// Distributional verification of the forward noising process and the
/// ancestral sampler against closed-form Gaussian references.
inline std::vector<CheckRow> diffusion_suite() {
  std::vector<CheckRow> rows;
  const NoiseSchedule sched = default_schedule(200);

  // Noising a constant scalar: empirical mean/variance over 1e5 draws vs
  // sqrt(abar)*z0 and 1-abar. Mean deviation bounded on the unit data scale;
  // variance relatively.
  {
    Rng rng(42);
    const double z0 = 0.8;
    for (int t : {1, 100, 200}) {
      const int n = 100000;
      double s1 = 0, s2 = 0;
      Tensor<double> z({1}), e({1});
      z[0] = z0;
      for (int i = 0; i < n; ++i) {
        e[0] = rng.normal();
        const double zt = forward_diffuse(z, t, e, sched)[0];
        s1 += zt;
        s2 += zt * zt;
      }
      const double mean = s1 / n, var = s2 / n - mean * mean;
      const double want_mean = std::sqrt(sched.abar(t)) * z0, want_var = 1 - sched.abar(t);
      rows.push_back({"noising_mean_t" + std::to_string(t), std::abs(mean - want_mean), 0.01});
      rows.push_back({"noising_var_t" + std::to_string(t), std::abs(var - want_var) / want_var, 0.01});
    }
  }

  // Full ancestral sampling with the optimal Gaussian noise predictor must
  // recover N(0, s2) data statistics. The fixed posterior variance always
  // under-disperses by a discretization deficit that shrinks like 1/T (about
  // 3.8/T for unit-variance data, for any valid schedule), so the T=200
  // cases use the deficit-minimizing sqrt-spaced schedule and the T=50 case
  // carries a correspondingly wider bound.
  auto sampler_case = [&rows](int T, double s2, double var_tol, uint64_t seed) {
    const NoiseSchedule s = make_sqrt_schedule(T, 0.01);
    Rng rng(seed);
    auto pred = [&](const Tensor<double>& z, int t) { return analytic_gaussian_predictor(z, t, s2, s); };
    Tensor<double> out = sample<double>(pred, s, rng, {10000});
    double s1 = 0, sq = 0;
    for (double v : out.data) {
      s1 += v;
      sq += v * v;
    }
    const double mean = s1 / out.size(), var = sq / out.size() - mean * mean;
    const std::string tag = "T" + std::to_string(T) + "_s2_" + std::to_string(s2).substr(0, 4);
    rows.push_back({"sampler_mean_" + tag, std::abs(mean), 0.02});
    rows.push_back({"sampler_var_" + tag, std::abs(var - s2) / s2, var_tol});
  };
  sampler_case(200, 0.25, 0.05, 7);
  sampler_case(200, 1.0, 0.05, 8);
  sampler_case(200, 4.0, 0.05, 9);
  sampler_case(50, 1.0, 0.12, 10);
  return rows;
}

}  // namespace viis
