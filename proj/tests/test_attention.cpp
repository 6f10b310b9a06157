#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "viis/attention.hpp"
#include "viis/rng.hpp"

using namespace viis;

namespace {

using TapeD = Tape<double>;
using Var = TapeD::Var;

Var leaf_rand(TapeD& t, const std::vector<int>& shape, Rng& rng, double scale = 1.0) {
  Tensor<double> x(shape);
  for (auto& v : x.data) v = scale * rng.normal();
  return t.leaf(std::move(x));
}

Var leaf_zero(TapeD& t, const std::vector<int>& shape) { return t.leaf(Tensor<double>(shape)); }

/// Fully-bound branch with random weights (offset/attention nets included).
DeformAttnVars<double> random_branch(TapeD& t, int C, int C_cond, int M, int K, int d, Rng& rng) {
  DeformAttnVars<double> p;
  p.M = M;
  p.K = K;
  p.d = d;
  p.wq = leaf_rand(t, {C, M * d}, rng, 0.3);
  p.bq = leaf_rand(t, {M * d}, rng, 0.1);
  p.wv = leaf_rand(t, {C_cond, M * d}, rng, 0.3);
  p.bv = leaf_rand(t, {M * d}, rng, 0.1);
  p.wk = leaf_rand(t, {C_cond, M * d}, rng, 0.3);
  p.bk = leaf_rand(t, {M * d}, rng, 0.1);
  p.off_w = leaf_rand(t, {M, d, 2 * K}, rng, 0.1);
  p.off_b = leaf_rand(t, {M, 2 * K}, rng, 0.1);
  p.att_w = leaf_rand(t, {M, d, K}, rng, 0.3);
  p.att_b = leaf_rand(t, {M, K}, rng, 0.1);
  p.wm = leaf_rand(t, {M, d, C}, rng, 0.3);
  p.out_w = leaf_rand(t, {C, C}, rng, 0.3);
  p.out_b = leaf_rand(t, {C}, rng, 0.1);
  return p;
}

}  // namespace

TEST_CASE("injection mode names round-trip and unknown names fail") {
  CHECK(injection_mode_from_string("scam") == InjectionMode::scam);
  CHECK(injection_mode_from_string("addition") == InjectionMode::addition);
  CHECK(injection_mode_from_string("concatenation") == InjectionMode::concatenation);
  CHECK(injection_mode_from_string("global_attention") == InjectionMode::global_attention);
  CHECK(injection_mode_from_string("none") == InjectionMode::none);
  CHECK(injection_mode_from_string("concat_only") == InjectionMode::none);
  CHECK_THROWS_AS(injection_mode_from_string("telepathy"), ConfigError);
}

TEST_CASE("query/value projection produces head-split tensors and checks extents") {
  TapeD t;
  Rng rng(1);
  const int C = 5, Cc = 3, M = 2, d = 4;
  DeformAttnVars<double> p = random_branch(t, C, Cc, M, 3, d, rng);
  Var F = leaf_rand(t, {2, C, 4, 6}, rng);
  Var Fc = leaf_rand(t, {2, Cc, 4, 6}, rng);
  auto [q, v] = project_qv(t, F, Fc, p);
  CHECK(t.val(q).shape == std::vector<int>{2, 4, 6, M, d});
  CHECK(t.val(v).shape == std::vector<int>{2, 4, 6, M, d});

  Var bad = leaf_rand(t, {2, Cc, 4, 5}, rng);
  CHECK_THROWS_AS(project_qv(t, F, bad, p), DimError);
  Var bad3 = leaf_rand(t, {Cc, 4, 6}, rng);
  CHECK_THROWS_AS(project_qv(t, F, bad3, p), DimError);
}

TEST_CASE("a silent condition map contributes nothing") {
  // wv = 0, bv = 0: every sampled value is zero, so the branch output is zero
  // no matter what the offsets and attention weights do.
  TapeD t;
  Rng rng(2);
  const int C = 4, Cc = 3, M = 2, K = 4, d = 3;
  DeformAttnVars<double> p = random_branch(t, C, Cc, M, K, d, rng);
  p.wv = leaf_zero(t, {Cc, M * d});
  p.bv = leaf_zero(t, {M * d});
  Var F = leaf_rand(t, {1, C, 5, 5}, rng);
  Var Fc = leaf_rand(t, {1, Cc, 5, 5}, rng);
  Var out = scam(t, F, Fc, p);
  for (double v : t.val(out).data) CHECK(v == 0.0);
}

TEST_CASE("zero offsets with a single point reduce to a per-pixel projection") {
  // off ≡ 0 and K = 1: each query samples exactly its own grid position, and
  // the softmax over one point is identically 1, so the output is the value
  // projection of the condition map followed by the head merge.
  TapeD t;
  Rng rng(3);
  const int C = 4, Cc = 2, M = 1, K = 1, d = 2, H = 3, W = 4;
  DeformAttnVars<double> p = random_branch(t, C, Cc, M, K, d, rng);
  p.off_w = leaf_zero(t, {M, d, 2 * K});
  p.off_b = leaf_zero(t, {M, 2 * K});
  Var F = leaf_rand(t, {1, C, H, W}, rng);
  Var Fc = leaf_rand(t, {1, Cc, H, W}, rng);
  Var out = scam(t, F, Fc, p);
  const Tensor<double>& o = t.val(out);
  REQUIRE(o.shape == std::vector<int>{1, C, H, W});
  const Tensor<double>& fc = t.val(Fc);
  const Tensor<double>& wv = t.val(p.wv);
  const Tensor<double>& bv = t.val(p.bv);
  const Tensor<double>& wm = t.val(p.wm);
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      double val[d];
      for (int e = 0; e < d; ++e) {
        val[e] = bv[e];
        for (int c = 0; c < Cc; ++c) val[e] += fc[(static_cast<int64_t>(c) * H + h) * W + w] * wv[c * (M * d) + e];
      }
      for (int c = 0; c < C; ++c) {
        double want = 0;
        for (int e = 0; e < d; ++e) want += val[e] * wm[static_cast<int64_t>(e) * C + c];
        CHECK(o[(static_cast<int64_t>(c) * H + h) * W + w] == doctest::Approx(want).epsilon(1e-10));
      }
    }
}

TEST_CASE("sparse attention covering the whole grid matches dense attention") {
  // On a 3x3 map with K = 9 points, pin the sampling locations to the nine
  // grid centers by encoding the negated query position in two feature
  // channels and letting the offset net's bias enumerate the grid. With the
  // point-score weights set to the (fixed) key vectors over sqrt(d), the
  // sparse branch computes exactly the dense softmax attention.
  TapeD t;
  Rng rng(4);
  const int H = 3, W = 3, C = 4, Cc = 2, M = 1, K = H * W, d = 4, Cout = 3;

  Tensor<double> f({1, C, H, W});
  for (auto& v : f.data) v = rng.normal();
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      f[(2 * static_cast<int64_t>(H) + h) * W + w] = -static_cast<double>(h);
      f[(3 * static_cast<int64_t>(H) + h) * W + w] = -static_cast<double>(w);
    }
  Var F = t.leaf(std::move(f));
  Var Fc = leaf_rand(t, {1, Cc, H, W}, rng);

  DeformAttnVars<double> p;
  p.M = M;
  p.K = K;
  p.d = d;
  // identity query projection keeps the position channels visible downstream
  Tensor<double> wq({C, d});
  for (int i = 0; i < C; ++i) wq[static_cast<int64_t>(i) * d + i] = 1.0;
  p.wq = t.leaf(std::move(wq));
  p.bq = leaf_zero(t, {d});
  p.wv = leaf_rand(t, {Cc, d}, rng, 0.5);
  p.bv = leaf_rand(t, {d}, rng, 0.2);
  // keys must ignore the position dims of the query: zero those output rows
  Tensor<double> wk({Cc, d});
  for (int c = 0; c < Cc; ++c)
    for (int e = 0; e < 2; ++e) wk[static_cast<int64_t>(c) * d + e] = 0.5 * rng.normal();
  p.wk = t.leaf(wk);
  p.bk = leaf_zero(t, {d});

  // offset net: off_{2k} = -h + h_k, off_{2k+1} = -w + w_k
  Tensor<double> off_w({M, d, 2 * K}), off_b({M, 2 * K});
  for (int k = 0; k < K; ++k) {
    off_w[2 * static_cast<int64_t>(2 * K) + 2 * k] = 1.0;      // reads Q dim 2 = -h
    off_w[3 * static_cast<int64_t>(2 * K) + 2 * k + 1] = 1.0;  // reads Q dim 3 = -w
    off_b[2 * k] = static_cast<double>(k / W);
    off_b[2 * k + 1] = static_cast<double>(k % W);
  }
  p.off_w = t.leaf(std::move(off_w));
  p.off_b = t.leaf(std::move(off_b));

  // point scores: column k is the key vector at grid position k over sqrt(d)
  const Tensor<double>& fcv = t.val(Fc);
  Tensor<double> att_w({M, d, K});
  for (int k = 0; k < K; ++k) {
    const int h = k / W, w = k % W;
    for (int e = 0; e < d; ++e) {
      double key = 0;
      for (int c = 0; c < Cc; ++c) key += fcv[(static_cast<int64_t>(c) * H + h) * W + w] * wk[static_cast<int64_t>(c) * d + e];
      att_w[static_cast<int64_t>(e) * K + k] = key / std::sqrt(static_cast<double>(d));
    }
  }
  p.att_w = t.leaf(std::move(att_w));
  p.att_b = leaf_zero(t, {M, K});
  p.wm = leaf_rand(t, {M, d, Cout}, rng, 0.5);

  Var sparse = scam(t, F, Fc, p);
  Var dense = global_attention(t, F, Fc, p);
  const Tensor<double>& a = t.val(sparse);
  const Tensor<double>& b = t.val(dense);
  REQUIRE(a.shape == b.shape);
  double max_diff = 0;
  for (int64_t i = 0; i < a.size(); ++i) max_diff = std::max(max_diff, std::abs(a[i] - b[i]));
  CHECK(max_diff < 1e-10);
}

TEST_CASE("batch samples are independent: permuting inputs permutes outputs") {
  TapeD t;
  Rng rng(5);
  const int C = 3, Cc = 2, M = 2, K = 3, d = 2, H = 4, W = 4;
  DeformAttnVars<double> p = random_branch(t, C, Cc, M, K, d, rng);

  Tensor<double> f({2, C, H, W}), fc({2, Cc, H, W});
  for (auto& v : f.data) v = rng.normal();
  for (auto& v : fc.data) v = rng.normal();
  Tensor<double> fr = f, fcr = fc;  // swapped sample order
  const int64_t sf = static_cast<int64_t>(C) * H * W, sc = static_cast<int64_t>(Cc) * H * W;
  for (int64_t i = 0; i < sf; ++i) std::swap(fr[i], fr[sf + i]);
  for (int64_t i = 0; i < sc; ++i) std::swap(fcr[i], fcr[sc + i]);

  Var out = scam(t, t.leaf(std::move(f)), t.leaf(std::move(fc)), p);
  Var out_swapped = scam(t, t.leaf(std::move(fr)), t.leaf(std::move(fcr)), p);
  const Tensor<double>& a = t.val(out);
  const Tensor<double>& b = t.val(out_swapped);
  const int64_t so = a.size() / 2;
  for (int64_t i = 0; i < so; ++i) {
    CHECK(a[i] == doctest::Approx(b[so + i]).epsilon(1e-12));
    CHECK(a[so + i] == doctest::Approx(b[i]).epsilon(1e-12));
  }
}

TEST_CASE("injection: none is the identity, a zero residual gate is too") {
  TapeD t;
  Rng rng(6);
  const int C = 4, Cc = 3, H = 5, W = 5;
  Var F = leaf_rand(t, {1, C, H, W}, rng);
  Var Fv = leaf_rand(t, {1, Cc, H, W}, rng);
  Var Fi = leaf_rand(t, {1, 1, H, W}, rng);

  InjectSiteVars<double> off_site;
  off_site.mode = InjectionMode::none;
  CHECK(sadmr_inject(t, F, Fv, Fi, off_site) == F);

  InjectSiteVars<double> site;
  site.mode = InjectionMode::scam;
  site.vis = random_branch(t, C, Cc, 2, 3, 2, rng);
  site.ir = random_branch(t, C, 1, 2, 3, 2, rng);
  site.vis.out_w = leaf_zero(t, {C, C});
  site.vis.out_b = leaf_zero(t, {C});
  site.ir.out_w = leaf_zero(t, {C, C});
  site.ir.out_b = leaf_zero(t, {C});
  Var out = sadmr_inject(t, F, Fv, Fi, site);
  const Tensor<double>& o = t.val(out);
  const Tensor<double>& fv = t.val(F);
  for (int64_t i = 0; i < o.size(); ++i) CHECK(o[i] == fv[i]);
}

TEST_CASE("injection: addition and concatenation modes") {
  TapeD t;
  Rng rng(7);
  const int C = 3, Cc = 2, H = 4, W = 4;
  Var F = leaf_rand(t, {1, C, H, W}, rng);
  Var Fv = leaf_rand(t, {1, Cc, H, W}, rng);
  Var Fi = leaf_rand(t, {1, 1, H, W}, rng);

  InjectSiteVars<double> add_site;
  add_site.mode = InjectionMode::addition;
  add_site.vis_proj_w = leaf_zero(t, {Cc, C});
  add_site.vis_proj_b = leaf_zero(t, {C});
  add_site.ir_proj_w = leaf_zero(t, {1, C});
  add_site.ir_proj_b = leaf_zero(t, {C});
  Var asum = sadmr_inject(t, F, Fv, Fi, add_site);
  const Tensor<double>& av = t.val(asum);
  for (int64_t i = 0; i < av.size(); ++i) CHECK(av[i] == t.val(F)[i]);  // zero projections add nothing

  InjectSiteVars<double> cat_site;
  cat_site.mode = InjectionMode::concatenation;
  cat_site.cat_w = leaf_rand(t, {C + Cc + 1, C}, rng, 0.3);
  cat_site.cat_b = leaf_rand(t, {C}, rng, 0.1);
  Var cat = sadmr_inject(t, F, Fv, Fi, cat_site);
  CHECK(t.val(cat).shape == std::vector<int>{1, C, H, W});

  // missing modality: the infrared branch is simply skipped
  InjectSiteVars<double> vis_only = add_site;
  vis_only.has_infrared = false;
  Var vo = sadmr_inject(t, F, Fv, -1, vis_only);
  CHECK(t.val(vo).shape == std::vector<int>{1, C, H, W});
}

TEST_CASE("gradients flow into both condition modalities") {
  TapeD t;
  Rng rng(8);
  const int C = 3, Cc = 2, H = 4, W = 4;
  Var F = leaf_rand(t, {1, C, H, W}, rng);
  Var Fv = leaf_rand(t, {1, Cc, H, W}, rng);
  Var Fi = leaf_rand(t, {1, 1, H, W}, rng);

  InjectSiteVars<double> site;
  site.mode = InjectionMode::scam;
  site.vis = random_branch(t, C, Cc, 2, 3, 2, rng);
  site.ir = random_branch(t, C, 1, 2, 3, 2, rng);
  Var out = sadmr_inject(t, F, Fv, Fi, site);
  Tensor<double> target(t.val(out).shape);
  for (auto& v : target.data) v = rng.normal();
  Var loss = mse_const(t, out, target);
  t.backward(loss);

  auto gnorm = [&](Var v) {
    double acc = 0;
    for (double g : t.grad(v).data) acc += g * g;
    return std::sqrt(acc);
  };
  CHECK(gnorm(Fv) > 1e-8);
  CHECK(gnorm(Fi) > 1e-8);
  CHECK(gnorm(F) > 1e-8);
  CHECK(gnorm(site.vis.wq) > 1e-10);
  CHECK(gnorm(site.ir.wv) > 1e-10);
  CHECK(gnorm(site.vis.off_w) > 1e-12);  // offsets receive gradient through sampling
}
