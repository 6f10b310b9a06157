#pragma once

#include "viis/ops.hpp"

namespace viis {

/// How condition features are combined with UNet intermediate features.
enum class InjectionMode { scam, addition, concatenation, global_attention, none };

inline InjectionMode injection_mode_from_string(const std::string& s) {
  if (s == "scam") return InjectionMode::scam;
  if (s == "addition") return InjectionMode::addition;
  if (s == "concatenation") return InjectionMode::concatenation;
  if (s == "global_attention") return InjectionMode::global_attention;
  if (s == "none" || s == "concat_only") return InjectionMode::none;
  throw ConfigError("unknown injection mode: " + s);
}

/// Tape handles for one sparse cross-attention branch. Weights live in the
/// model's parameter store; these are the per-forward bindings.
template <typename S>
struct DeformAttnVars {
  int M = 4;  // heads
  int K = 4;  // sampling points
  int d = 8;  // head width
  using Var = typename Tape<S>::Var;
  Var wq = -1, bq = -1;      // [C, M*d], [M*d]
  Var wv = -1, bv = -1;      // [C_cond, M*d], [M*d]
  Var wk = -1, bk = -1;      // [C_cond, M*d]; global-attention mode only
  Var off_w = -1, off_b = -1;  // [M, d, 2K], [M, 2K]; zero-initialized
  Var att_w = -1, att_b = -1;  // [M, d, K], [M, K]
  Var wm = -1;                 // [M, d, C]
  Var out_w = -1, out_b = -1;  // [C, C], [C]; zero-initialized residual gate
};

/// Multi-head query/value projections; F, F_cond are NCHW with matching
/// spatial extents. Returns [N,H,W,M,d] pairs.
template <typename S>
std::pair<typename Tape<S>::Var, typename Tape<S>::Var> project_qv(Tape<S>& t, typename Tape<S>::Var F,
                                                                   typename Tape<S>::Var F_cond,
                                                                   const DeformAttnVars<S>& p) {
  const Tensor<S>& vf = t.val(F);
  const Tensor<S>& vc = t.val(F_cond);
  if (vf.rank() != 4 || vc.rank() != 4 || vf.dim(2) != vc.dim(2) || vf.dim(3) != vc.dim(3))
    throw DimError("project_qv: spatial extents differ: " + shape_str(vf.shape) + " vs " + shape_str(vc.shape));
  const int N = vf.dim(0), H = vf.dim(2), W = vf.dim(3);
  auto q = reshape(t, linear(t, nchw_to_nhwc(t, F), p.wq, p.bq), {N, H, W, p.M, p.d});
  auto v = reshape(t, linear(t, nchw_to_nhwc(t, F_cond), p.wv, p.bv), {N, H, W, p.M, p.d});
  return {q, v};
}

namespace detail {
/// Reference grid replicated per (n, p, m, k): coords (h, w) of position p.
template <typename S>
Tensor<S> reference_grid(int N, int H, int W, int M, int K) {
  Tensor<S> g({N, H * W, M, K, 2});
  int64_t i = 0;
  for (int n = 0; n < N; ++n)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        for (int m = 0; m < M; ++m)
          for (int k = 0; k < K; ++k) {
            g[i++] = static_cast<S>(h);
            g[i++] = static_cast<S>(w);
          }
  return g;
}
}  // namespace detail

/// Deformable attention per the sparse cross-attention module: each query
/// element samples K offset locations of V around its own grid position,
/// softmax-weights them, and projects per head. Q, V are [N,H,W,M,d]; the
/// result is [N,C,H,W] with C = wm's output width.
template <typename S>
typename Tape<S>::Var deform_attend(Tape<S>& t, typename Tape<S>::Var Q, typename Tape<S>::Var V,
                                    const DeformAttnVars<S>& p) {
  const Tensor<S>& vq = t.val(Q);
  if (vq.rank() != 5) throw DimError("deform_attend: Q must be [N,H,W,M,d]");
  const int N = vq.dim(0), H = vq.dim(1), W = vq.dim(2);
  auto offsets = per_head_linear(t, Q, p.off_w, p.off_b);              // [N,H,W,M,2K]
  auto off5 = reshape(t, offsets, {N, H * W, p.M, p.K, 2});
  auto coords = add_const(t, off5, detail::reference_grid<S>(N, H, W, p.M, p.K));
  auto weights = softmax(t, per_head_linear(t, Q, p.att_w, p.att_b));  // [N,H,W,M,K]
  auto sampled = bilinear_gather(t, V, coords);                        // [N,HW,M,K,d]
  auto attn = weighted_sum_k(t, sampled, reshape(t, weights, {N, H * W, p.M, p.K}));
  auto heads = reshape(t, attn, {N, H, W, p.M, p.d});
  return nhwc_to_nchw(t, head_project(t, heads, p.wm));
}

/// Sparse cross-attention branch output (before the residual projection).
template <typename S>
typename Tape<S>::Var scam(Tape<S>& t, typename Tape<S>::Var F, typename Tape<S>::Var F_cond,
                           const DeformAttnVars<S>& p) {
  auto [q, v] = project_qv(t, F, F_cond, p);
  return deform_attend(t, q, v, p);
}

/// Dense cross-attention branch used by the global_attention ablation: every
/// element of F attends to all positions of F_cond.
template <typename S>
typename Tape<S>::Var global_attention(Tape<S>& t, typename Tape<S>::Var F, typename Tape<S>::Var F_cond,
                                       const DeformAttnVars<S>& p) {
  const Tensor<S>& vf = t.val(F);
  const Tensor<S>& vc = t.val(F_cond);
  const int N = vf.dim(0), H = vf.dim(2), W = vf.dim(3);
  const int Hc = vc.dim(2), Wc = vc.dim(3);
  auto q = reshape(t, linear(t, nchw_to_nhwc(t, F), p.wq, p.bq), {N, H, W, p.M, p.d});
  auto k = reshape(t, linear(t, nchw_to_nhwc(t, F_cond), p.wk, p.bk), {N, Hc, Wc, p.M, p.d});
  auto v = reshape(t, linear(t, nchw_to_nhwc(t, F_cond), p.wv, p.bv), {N, Hc, Wc, p.M, p.d});
  return nhwc_to_nchw(t, head_project(t, attend_full(t, q, k, v), p.wm));
}

/// Residual projection applied to an attention branch output ([N,C,H,W]).
template <typename S>
typename Tape<S>::Var attn_out_proj(Tape<S>& t, typename Tape<S>::Var x, const DeformAttnVars<S>& p) {
  return nhwc_to_nchw(t, linear(t, nchw_to_nhwc(t, x), p.out_w, p.out_b));
}

/// Bindings for one injection site; which members are used depends on mode.
template <typename S>
struct InjectSiteVars {
  InjectionMode mode = InjectionMode::none;
  bool has_visible = true, has_infrared = true;
  DeformAttnVars<S> vis, ir;
  using Var = typename Tape<S>::Var;
  Var vis_proj_w = -1, vis_proj_b = -1;  // addition mode 1x1 projections
  Var ir_proj_w = -1, ir_proj_b = -1;
  Var cat_w = -1, cat_b = -1;  // concatenation mode joint projection
};

/// Dual-modality residual injection: visible and infrared branches are
/// independent and their residuals sum onto F.
template <typename S>
typename Tape<S>::Var sadmr_inject(Tape<S>& t, typename Tape<S>::Var F, typename Tape<S>::Var F_v,
                                   typename Tape<S>::Var F_i, const InjectSiteVars<S>& site) {
  const bool use_v = site.has_visible && F_v >= 0;
  const bool use_i = site.has_infrared && F_i >= 0;
  switch (site.mode) {
    case InjectionMode::none:
      return F;
    case InjectionMode::scam: {
      auto r = F;
      if (use_v) r = add(t, r, attn_out_proj(t, scam(t, F, F_v, site.vis), site.vis));
      if (use_i) r = add(t, r, attn_out_proj(t, scam(t, F, F_i, site.ir), site.ir));
      return r;
    }
    case InjectionMode::global_attention: {
      auto r = F;
      if (use_v) r = add(t, r, attn_out_proj(t, global_attention(t, F, F_v, site.vis), site.vis));
      if (use_i) r = add(t, r, attn_out_proj(t, global_attention(t, F, F_i, site.ir), site.ir));
      return r;
    }
    case InjectionMode::addition: {
      auto r = F;
      if (use_v) r = add(t, r, nhwc_to_nchw(t, linear(t, nchw_to_nhwc(t, F_v), site.vis_proj_w, site.vis_proj_b)));
      if (use_i) r = add(t, r, nhwc_to_nchw(t, linear(t, nchw_to_nhwc(t, F_i), site.ir_proj_w, site.ir_proj_b)));
      return r;
    }
    case InjectionMode::concatenation: {
      auto cat = F;
      if (use_v) cat = concat_ch(t, cat, F_v);
      if (use_i) cat = concat_ch(t, cat, F_i);
      return nhwc_to_nchw(t, linear(t, nchw_to_nhwc(t, cat), site.cat_w, site.cat_b));
    }
  }
  throw ConfigError("sadmr_inject: unhandled mode");
}

}  // namespace viis
