#pragma once

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "viis/tape.hpp"

namespace viis {

template <typename S>
using MatR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapM = Eigen::Map<MatR<S>>;
template <typename S>
using CMapM = Eigen::Map<const MatR<S>>;
using OStride = Eigen::OuterStride<>;

// ---------------------------------------------------------------------------
// elementwise / structural ops
// ---------------------------------------------------------------------------

template <typename S>
typename Tape<S>::Var add(Tape<S>& t, typename Tape<S>::Var a, typename Tape<S>::Var b) {
  require_same_shape(t.val(a), t.val(b), "add");
  Tensor<S> y = t.val(a);
  const Tensor<S>& vb = t.val(b);
  for (int64_t i = 0; i < y.size(); ++i) y[i] += vb[i];
  auto out = t.leaf(std::move(y));
  t.record([&t, a, b, out] {
    const Tensor<S>& g = t.grad(out);
    Tensor<S>& ga = t.grad(a);
    Tensor<S>& gb = t.grad(b);
    for (int64_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
  return out;
}

template <typename S>
typename Tape<S>::Var scale(Tape<S>& t, typename Tape<S>::Var a, double c) {
  Tensor<S> y = t.val(a);
  for (auto& v : y.data) v = static_cast<S>(v * c);
  auto out = t.leaf(std::move(y));
  t.record([&t, a, out, c] {
    const Tensor<S>& g = t.grad(out);
    Tensor<S>& ga = t.grad(a);
    for (int64_t i = 0; i < g.size(); ++i) ga[i] += static_cast<S>(g[i] * c);
  });
  return out;
}

template <typename S>
typename Tape<S>::Var add_const(Tape<S>& t, typename Tape<S>::Var a, const Tensor<S>& c) {
  require_same_shape(t.val(a), c, "add_const");
  Tensor<S> y = t.val(a);
  for (int64_t i = 0; i < y.size(); ++i) y[i] += c[i];
  auto out = t.leaf(std::move(y));
  t.record([&t, a, out] {
    const Tensor<S>& g = t.grad(out);
    Tensor<S>& ga = t.grad(a);
    for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return out;
}

/// Copy with a new shape of identical element count.
template <typename S>
typename Tape<S>::Var reshape(Tape<S>& t, typename Tape<S>::Var a, std::vector<int> shape) {
  if (numel(shape) != t.val(a).size())
    throw DimError("reshape: element count mismatch " + shape_str(t.val(a).shape) + " -> " + shape_str(shape));
  Tensor<S> y(std::move(shape), t.val(a).data);
  auto out = t.leaf(std::move(y));
  t.record([&t, a, out] {
    const Tensor<S>& g = t.grad(out);
    Tensor<S>& ga = t.grad(a);
    for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return out;
}

/// Channel concatenation of NCHW tensors.
template <typename S>
typename Tape<S>::Var concat_ch(Tape<S>& t, typename Tape<S>::Var a, typename Tape<S>::Var b) {
  const Tensor<S>& va = t.val(a);
  const Tensor<S>& vb = t.val(b);
  if (va.rank() != 4 || vb.rank() != 4 || va.dim(0) != vb.dim(0) || va.dim(2) != vb.dim(2) || va.dim(3) != vb.dim(3))
    throw DimError("concat_ch: incompatible shapes " + shape_str(va.shape) + " vs " + shape_str(vb.shape));
  const int N = va.dim(0), Ca = va.dim(1), Cb = vb.dim(1), H = va.dim(2), W = va.dim(3);
  const int64_t plane = static_cast<int64_t>(H) * W;
  Tensor<S> y({N, Ca + Cb, H, W});
  for (int n = 0; n < N; ++n) {
    std::copy(va.ptr() + n * Ca * plane, va.ptr() + (n + 1) * Ca * plane, y.ptr() + n * (Ca + Cb) * plane);
    std::copy(vb.ptr() + n * Cb * plane, vb.ptr() + (n + 1) * Cb * plane, y.ptr() + (n * (Ca + Cb) + Ca) * plane);
  }
  auto out = t.leaf(std::move(y));
  t.record([&t, a, b, out, N, Ca, Cb, plane] {
    const Tensor<S>& g = t.grad(out);
    Tensor<S>& ga = t.grad(a);
    Tensor<S>& gb = t.grad(b);
    for (int n = 0; n < N; ++n) {
      const S* gn = g.ptr() + n * (Ca + Cb) * plane;
      S* pa = ga.ptr() + n * Ca * plane;
      S* pb = gb.ptr() + n * Cb * plane;
      for (int64_t i = 0; i < Ca * plane; ++i) pa[i] += gn[i];
      for (int64_t i = 0; i < Cb * plane; ++i) pb[i] += gn[Ca * plane + i];
    }
  });
  return out;
}

template <typename S>
typename Tape<S>::Var silu(Tape<S>& t, typename Tape<S>::Var a) {
  Tensor<S> y = t.val(a);
  for (auto& v : y.data) {
    double x = static_cast<double>(v);
    v = static_cast<S>(x / (1.0 + std::exp(-x)));
  }
  auto out = t.leaf(std::move(y));
  t.record([&t, a, out] {
    const Tensor<S>& g = t.grad(out);
    const Tensor<S>& x = t.val(a);
    Tensor<S>& ga = t.grad(a);
    for (int64_t i = 0; i < g.size(); ++i) {
      double xv = static_cast<double>(x[i]);
      double s = 1.0 / (1.0 + std::exp(-xv));
      ga[i] += static_cast<S>(g[i] * (s * (1.0 + xv * (1.0 - s))));
    }
  });
  return out;
}

/// Softmax along the trailing extent, with max-subtraction.
template <typename S>
typename Tape<S>::Var softmax(Tape<S>& t, typename Tape<S>::Var a) {
  const Tensor<S>& x = t.val(a);
  if (x.rank() < 1) throw DimError("softmax: rank-0 input");
  const int K = x.shape.back();
  const int64_t rows = x.size() / K;
  Tensor<S> y = x;
  for (int64_t r = 0; r < rows; ++r) {
    S* p = y.ptr() + r * K;
    S mx = p[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, p[k]);
    double sum = 0;
    for (int k = 0; k < K; ++k) {
      double e = std::exp(static_cast<double>(p[k] - mx));
      p[k] = static_cast<S>(e);
      sum += e;
    }
    for (int k = 0; k < K; ++k) p[k] = static_cast<S>(p[k] / sum);
  }
  auto out = t.leaf(std::move(y));
  t.record([&t, a, out, K, rows] {
    const Tensor<S>& g = t.grad(out);
    const Tensor<S>& yv = t.val(out);
    Tensor<S>& ga = t.grad(a);
    for (int64_t r = 0; r < rows; ++r) {
      const S* gp = g.ptr() + r * K;
      const S* yp = yv.ptr() + r * K;
      double dot = 0;
      for (int k = 0; k < K; ++k) dot += static_cast<double>(gp[k]) * yp[k];
      for (int k = 0; k < K; ++k) ga[r * K + k] += static_cast<S>(yp[k] * (gp[k] - dot));
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// linear / conv / norm
// ---------------------------------------------------------------------------

/// x[...,Din] * W[Din,Dout] + b[Dout], broadcast over leading extents.
/// Pass b = -1 for no bias.
template <typename S>
typename Tape<S>::Var linear(Tape<S>& t, typename Tape<S>::Var x, typename Tape<S>::Var W,
                             typename Tape<S>::Var b = -1) {
  const Tensor<S>& vx = t.val(x);
  const Tensor<S>& vw = t.val(W);
  if (vw.rank() != 2) throw DimError("linear: weight must be rank 2, got " + shape_str(vw.shape));
  const int Din = vw.dim(0), Dout = vw.dim(1);
  if (vx.shape.empty() || vx.shape.back() != Din)
    throw DimError("linear: trailing extent of x " + shape_str(vx.shape) + " != Din " + std::to_string(Din));
  const int64_t rows = vx.size() / Din;
  std::vector<int> oshape = vx.shape;
  oshape.back() = Dout;
  Tensor<S> y(oshape);
  CMapM<S> X(vx.ptr(), rows, Din);
  CMapM<S> Wm(vw.ptr(), Din, Dout);
  MapM<S> Y(y.ptr(), rows, Dout);
  Y.noalias() = X * Wm;
  if (b >= 0) {
    const Tensor<S>& vb = t.val(b);
    if (vb.size() != Dout) throw DimError("linear: bias extent mismatch");
    Y.rowwise() += CMapM<S>(vb.ptr(), 1, Dout).row(0);
  }
  auto out = t.leaf(std::move(y));
  t.record([&t, x, W, b, out, rows, Din, Dout] {
    const Tensor<S>& g = t.grad(out);
    CMapM<S> G(g.ptr(), rows, Dout);
    CMapM<S> X(t.val(x).ptr(), rows, Din);
    CMapM<S> Wm(t.val(W).ptr(), Din, Dout);
    MapM<S>(t.grad(x).ptr(), rows, Din).noalias() += G * Wm.transpose();
    MapM<S>(t.grad(W).ptr(), Din, Dout).noalias() += X.transpose() * G;
    if (b >= 0) MapM<S>(t.grad(b).ptr(), 1, Dout).row(0) += G.colwise().sum();
  });
  return out;
}

namespace detail {
template <typename S>
void im2col(const S* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, S* col) {
  // col is [Ho*Wo, C*k*k]
  const int ckk = C * k * k;
  for (int oh = 0; oh < Ho; ++oh)
    for (int ow = 0; ow < Wo; ++ow) {
      S* row = col + (static_cast<int64_t>(oh) * Wo + ow) * ckk;
      int64_t idx = 0;
      for (int c = 0; c < C; ++c) {
        const S* xc = x + static_cast<int64_t>(c) * H * W;
        for (int ki = 0; ki < k; ++ki) {
          const int ih = oh * stride - pad + ki;
          for (int kj = 0; kj < k; ++kj, ++idx) {
            const int iw = ow * stride - pad + kj;
            row[idx] = (ih >= 0 && ih < H && iw >= 0 && iw < W) ? xc[ih * W + iw] : S(0);
          }
        }
      }
    }
}

template <typename S>
void col2im_add(const S* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, S* gx) {
  const int ckk = C * k * k;
  for (int oh = 0; oh < Ho; ++oh)
    for (int ow = 0; ow < Wo; ++ow) {
      const S* row = col + (static_cast<int64_t>(oh) * Wo + ow) * ckk;
      int64_t idx = 0;
      for (int c = 0; c < C; ++c) {
        S* gc = gx + static_cast<int64_t>(c) * H * W;
        for (int ki = 0; ki < k; ++ki) {
          const int ih = oh * stride - pad + ki;
          for (int kj = 0; kj < k; ++kj, ++idx) {
            const int iw = ow * stride - pad + kj;
            if (ih >= 0 && ih < H && iw >= 0 && iw < W) gc[ih * W + iw] += row[idx];
          }
        }
      }
    }
}
}  // namespace detail

/// Cross-correlation: x[N,C,H,W], w[O,C,k,k], optional b[O].
template <typename S>
typename Tape<S>::Var conv2d(Tape<S>& t, typename Tape<S>::Var x, typename Tape<S>::Var w,
                             typename Tape<S>::Var b, int stride = 1, int pad = 0) {
  const Tensor<S>& vx = t.val(x);
  const Tensor<S>& vw = t.val(w);
  if (vx.rank() != 4 || vw.rank() != 4) throw DimError("conv2d: inputs must be rank 4");
  const int N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  const int O = vw.dim(0), k = vw.dim(2);
  if (vw.dim(1) != C) throw DimError("conv2d: channel mismatch, input C=" + std::to_string(C) +
                                     " weight C=" + std::to_string(vw.dim(1)));
  if (vw.dim(3) != k || k % 2 == 0) throw DimError("conv2d: kernel must be square with odd extent");
  if (pad < 0 || stride < 1) throw ConfigError("conv2d: invalid stride/pad");
  if ((H + 2 * pad - k) % stride != 0 || (W + 2 * pad - k) % stride != 0)
    throw ConfigError("conv2d: non-integral output extent");
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  const int ckk = C * k * k;

  Tensor<S> y({N, O, Ho, Wo});
  std::vector<S> col(static_cast<size_t>(Ho) * Wo * ckk);
  CMapM<S> Wm(vw.ptr(), O, ckk);
  MatR<S> Yn(Ho * Wo, O);
  for (int n = 0; n < N; ++n) {
    detail::im2col(vx.ptr() + static_cast<int64_t>(n) * C * H * W, C, H, W, k, stride, pad, Ho, Wo, col.data());
    Yn.noalias() = CMapM<S>(col.data(), Ho * Wo, ckk) * Wm.transpose();
    S* yn = y.ptr() + static_cast<int64_t>(n) * O * Ho * Wo;
    for (int o = 0; o < O; ++o)
      for (int p = 0; p < Ho * Wo; ++p) yn[o * Ho * Wo + p] = Yn(p, o);
  }
  if (b >= 0) {
    const Tensor<S>& vb = t.val(b);
    if (vb.size() != O) throw DimError("conv2d: bias extent mismatch");
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < O; ++o) {
        S* yp = y.ptr() + (static_cast<int64_t>(n) * O + o) * Ho * Wo;
        for (int p = 0; p < Ho * Wo; ++p) yp[p] += vb[o];
      }
  }
  auto out = t.leaf(std::move(y));
  t.record([&t, x, w, b, out, N, C, H, W, O, k, stride, pad, Ho, Wo, ckk] {
    const Tensor<S>& g = t.grad(out);
    const Tensor<S>& vx = t.val(x);
    CMapM<S> Wm(t.val(w).ptr(), O, ckk);
    MapM<S> GW(t.grad(w).ptr(), O, ckk);
    std::vector<S> col(static_cast<size_t>(Ho) * Wo * ckk);
    MatR<S> Gn(Ho * Wo, O), Gcol(Ho * Wo, ckk);
    for (int n = 0; n < N; ++n) {
      const S* gn = g.ptr() + static_cast<int64_t>(n) * O * Ho * Wo;
      for (int o = 0; o < O; ++o)
        for (int p = 0; p < Ho * Wo; ++p) Gn(p, o) = gn[o * Ho * Wo + p];
      detail::im2col(vx.ptr() + static_cast<int64_t>(n) * C * H * W, C, H, W, k, stride, pad, Ho, Wo, col.data());
      GW.noalias() += Gn.transpose() * CMapM<S>(col.data(), Ho * Wo, ckk);
      Gcol.noalias() = Gn * Wm;
      detail::col2im_add(Gcol.data(), C, H, W, k, stride, pad, Ho, Wo,
                         t.grad(x).ptr() + static_cast<int64_t>(n) * C * H * W);
      if (b >= 0) {
        Tensor<S>& gb = t.grad(b);
        for (int o = 0; o < O; ++o) gb[o] += Gn.col(o).sum();
      }
    }
  });
  return out;
}

/// Group normalization over NCHW with affine scale/shift per channel.
template <typename S>
typename Tape<S>::Var group_norm(Tape<S>& t, typename Tape<S>::Var x, int groups,
                                 typename Tape<S>::Var gamma, typename Tape<S>::Var beta) {
  const Tensor<S>& vx = t.val(x);
  if (vx.rank() != 4) throw DimError("group_norm: input must be rank 4");
  const int N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  if (groups < 1 || C % groups != 0) throw ConfigError("group_norm: C not divisible by groups");
  if (t.val(gamma).size() != C || t.val(beta).size() != C) throw DimError("group_norm: affine extent mismatch");
  const int cpg = C / groups;
  const int64_t m = static_cast<int64_t>(cpg) * H * W;
  const double eps = 1e-5;

  Tensor<S> y(vx.shape);
  std::vector<double> mean(static_cast<size_t>(N) * groups), invstd(static_cast<size_t>(N) * groups);
  const Tensor<S>& vg = t.val(gamma);
  const Tensor<S>& vb = t.val(beta);
  for (int n = 0; n < N; ++n)
    for (int g = 0; g < groups; ++g) {
      const S* xp = vx.ptr() + (static_cast<int64_t>(n) * C + g * cpg) * H * W;
      double mu = 0;
      for (int64_t i = 0; i < m; ++i) mu += xp[i];
      mu /= m;
      double var = 0;
      for (int64_t i = 0; i < m; ++i) {
        double d = xp[i] - mu;
        var += d * d;
      }
      var /= m;
      double inv = 1.0 / std::sqrt(var + eps);
      mean[n * groups + g] = mu;
      invstd[n * groups + g] = inv;
      S* yp = y.ptr() + (static_cast<int64_t>(n) * C + g * cpg) * H * W;
      for (int c = 0; c < cpg; ++c) {
        const double gc = vg[g * cpg + c], bc = vb[g * cpg + c];
        for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
          double xhat = (xp[c * H * W + i] - mu) * inv;
          yp[c * H * W + i] = static_cast<S>(gc * xhat + bc);
        }
      }
    }
  auto out = t.leaf(std::move(y));
  t.record([&t, x, gamma, beta, out, N, C, H, W, groups, cpg, m, mean, invstd] {
    const Tensor<S>& g = t.grad(out);
    const Tensor<S>& vx = t.val(x);
    const Tensor<S>& vg = t.val(gamma);
    Tensor<S>& gx = t.grad(x);
    Tensor<S>& gg = t.grad(gamma);
    Tensor<S>& gb = t.grad(beta);
    const int64_t hw = static_cast<int64_t>(H) * W;
    for (int n = 0; n < N; ++n)
      for (int gi = 0; gi < groups; ++gi) {
        const double mu = mean[n * groups + gi], inv = invstd[n * groups + gi];
        const int64_t base = (static_cast<int64_t>(n) * C + gi * cpg) * hw;
        double sum_gxh = 0, sum_gxh_xh = 0;
        for (int c = 0; c < cpg; ++c) {
          const double gc = vg[gi * cpg + c];
          for (int64_t i = 0; i < hw; ++i) {
            const int64_t idx = base + c * hw + i;
            double xhat = (vx[idx] - mu) * inv;
            double gxh = g[idx] * gc;
            sum_gxh += gxh;
            sum_gxh_xh += gxh * xhat;
            gg[gi * cpg + c] += static_cast<S>(g[idx] * xhat);
            gb[gi * cpg + c] += g[idx];
          }
        }
        const double mg = sum_gxh / m, mgx = sum_gxh_xh / m;
        for (int c = 0; c < cpg; ++c) {
          const double gc = vg[gi * cpg + c];
          for (int64_t i = 0; i < hw; ++i) {
            const int64_t idx = base + c * hw + i;
            double xhat = (vx[idx] - mu) * inv;
            gx[idx] += static_cast<S>(inv * (g[idx] * gc - mg - xhat * mgx));
          }
        }
      }
  });
  return out;
}

// ---------------------------------------------------------------------------
// resampling
// ---------------------------------------------------------------------------

enum class Resample { down2_avg, up2_nearest };

template <typename S>
typename Tape<S>::Var resample(Tape<S>& t, typename Tape<S>::Var x, Resample mode) {
  const Tensor<S>& vx = t.val(x);
  if (vx.rank() != 4) throw DimError("resample: input must be rank 4");
  const int N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  if (mode == Resample::down2_avg) {
    if (H % 2 != 0 || W % 2 != 0) throw ConfigError("resample: down2 requires even extents");
    Tensor<S> y({N, C, H / 2, W / 2});
    for (int nc = 0; nc < N * C; ++nc) {
      const S* xp = vx.ptr() + static_cast<int64_t>(nc) * H * W;
      S* yp = y.ptr() + static_cast<int64_t>(nc) * (H / 2) * (W / 2);
      for (int i = 0; i < H / 2; ++i)
        for (int j = 0; j < W / 2; ++j)
          yp[i * (W / 2) + j] = static_cast<S>(
              0.25 * (xp[2 * i * W + 2 * j] + xp[2 * i * W + 2 * j + 1] + xp[(2 * i + 1) * W + 2 * j] +
                      xp[(2 * i + 1) * W + 2 * j + 1]));
    }
    auto out = t.leaf(std::move(y));
    t.record([&t, x, out, N, C, H, W] {
      const Tensor<S>& g = t.grad(out);
      Tensor<S>& gx = t.grad(x);
      for (int nc = 0; nc < N * C; ++nc) {
        const S* gp = g.ptr() + static_cast<int64_t>(nc) * (H / 2) * (W / 2);
        S* xp = gx.ptr() + static_cast<int64_t>(nc) * H * W;
        for (int i = 0; i < H / 2; ++i)
          for (int j = 0; j < W / 2; ++j) {
            const S v = static_cast<S>(0.25 * gp[i * (W / 2) + j]);
            xp[2 * i * W + 2 * j] += v;
            xp[2 * i * W + 2 * j + 1] += v;
            xp[(2 * i + 1) * W + 2 * j] += v;
            xp[(2 * i + 1) * W + 2 * j + 1] += v;
          }
      }
    });
    return out;
  }
  // up2_nearest
  Tensor<S> y({N, C, H * 2, W * 2});
  for (int nc = 0; nc < N * C; ++nc) {
    const S* xp = vx.ptr() + static_cast<int64_t>(nc) * H * W;
    S* yp = y.ptr() + static_cast<int64_t>(nc) * 4 * H * W;
    for (int i = 0; i < 2 * H; ++i)
      for (int j = 0; j < 2 * W; ++j) yp[i * 2 * W + j] = xp[(i / 2) * W + j / 2];
  }
  auto out = t.leaf(std::move(y));
  t.record([&t, x, out, N, C, H, W] {
    const Tensor<S>& g = t.grad(out);
    Tensor<S>& gx = t.grad(x);
    for (int nc = 0; nc < N * C; ++nc) {
      const S* gp = g.ptr() + static_cast<int64_t>(nc) * 4 * H * W;
      S* xp = gx.ptr() + static_cast<int64_t>(nc) * H * W;
      for (int i = 0; i < 2 * H; ++i)
        for (int j = 0; j < 2 * W; ++j) xp[(i / 2) * W + j / 2] += gp[i * 2 * W + j];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// layout transposes and broadcasts
// ---------------------------------------------------------------------------

template <typename S>
typename Tape<S>::Var nchw_to_nhwc(Tape<S>& t, typename Tape<S>::Var x) {
  const Tensor<S>& vx = t.val(x);
  if (vx.rank() != 4) throw DimError("nchw_to_nhwc: input must be rank 4");
  const int N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  Tensor<S> y({N, H, W, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) y.data[((static_cast<int64_t>(n) * H + h) * W + w) * C + c] = vx.at4(n, c, h, w);
  auto out = t.leaf(std::move(y));
  t.record([&t, x, out, N, C, H, W] {
    const Tensor<S>& g = t.grad(out);
    Tensor<S>& gx = t.grad(x);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w)
            gx.at4(n, c, h, w) += g.data[((static_cast<int64_t>(n) * H + h) * W + w) * C + c];
  });
  return out;
}

template <typename S>
typename Tape<S>::Var nhwc_to_nchw(Tape<S>& t, typename Tape<S>::Var x) {
  const Tensor<S>& vx = t.val(x);
  if (vx.rank() != 4) throw DimError("nhwc_to_nchw: input must be rank 4");
  const int N = vx.dim(0), H = vx.dim(1), W = vx.dim(2), C = vx.dim(3);
  Tensor<S> y({N, C, H, W});
  for (int n = 0; n < N; ++n)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        for (int c = 0; c < C; ++c) y.at4(n, c, h, w) = vx.data[((static_cast<int64_t>(n) * H + h) * W + w) * C + c];
  auto out = t.leaf(std::move(y));
  t.record([&t, x, out, N, C, H, W] {
    const Tensor<S>& g = t.grad(out);
    Tensor<S>& gx = t.grad(x);
    for (int n = 0; n < N; ++n)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          for (int c = 0; c < C; ++c)
            gx.data[((static_cast<int64_t>(n) * H + h) * W + w) * C + c] += g.at4(n, c, h, w);
  });
  return out;
}

/// x[N,C,H,W] + b[N,C] broadcast over the spatial extents.
template <typename S>
typename Tape<S>::Var add_nc(Tape<S>& t, typename Tape<S>::Var x, typename Tape<S>::Var b) {
  const Tensor<S>& vx = t.val(x);
  const Tensor<S>& vb = t.val(b);
  if (vx.rank() != 4 || vb.rank() != 2 || vb.dim(0) != vx.dim(0) || vb.dim(1) != vx.dim(1))
    throw DimError("add_nc: incompatible shapes " + shape_str(vx.shape) + " vs " + shape_str(vb.shape));
  const int N = vx.dim(0), C = vx.dim(1);
  const int64_t hw = static_cast<int64_t>(vx.dim(2)) * vx.dim(3);
  Tensor<S> y = vx;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      S* p = y.ptr() + (static_cast<int64_t>(n) * C + c) * hw;
      const S v = vb.at2(n, c);
      for (int64_t i = 0; i < hw; ++i) p[i] += v;
    }
  auto out = t.leaf(std::move(y));
  t.record([&t, x, b, out, N, C, hw] {
    const Tensor<S>& g = t.grad(out);
    Tensor<S>& gx = t.grad(x);
    Tensor<S>& gb = t.grad(b);
    for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const S* p = g.ptr() + (static_cast<int64_t>(n) * C + c) * hw;
        S acc = 0;
        for (int64_t i = 0; i < hw; ++i) acc += p[i];
        gb.at2(n, c) += acc;
      }
  });
  return out;
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

/// Mean squared error against a constant target.
template <typename S>
typename Tape<S>::Var mse_const(Tape<S>& t, typename Tape<S>::Var a, const Tensor<S>& target) {
  require_same_shape(t.val(a), target, "mse");
  const Tensor<S>& va = t.val(a);
  const int64_t n = va.size();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    double d = static_cast<double>(va[i]) - target[i];
    acc += d * d;
  }
  auto out = t.leaf(Tensor<S>::scalar(static_cast<S>(acc / n)));
  Tensor<S> tgt = target;
  t.record([&t, a, out, n, tgt = std::move(tgt)] {
    const S g0 = t.grad(out)[0];
    const Tensor<S>& va = t.val(a);
    Tensor<S>& ga = t.grad(a);
    for (int64_t i = 0; i < n; ++i) ga[i] += static_cast<S>(g0 * 2.0 * (va[i] - tgt[i]) / n);
  });
  return out;
}

// ---------------------------------------------------------------------------
// bilinear sampling
// ---------------------------------------------------------------------------

namespace detail {
// One bilinear lookup with zero padding outside [0,H-1]x[0,W-1]; fn receives
// (flat spatial index, weight, dw/dy, dw/dx) for each in-range corner.
template <typename S, typename F>
inline void bilinear_taps(double y, double x, int H, int W, F&& fn) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0, fx = x - x0;
  const int ys[2] = {y0, y0 + 1};
  const int xs[2] = {x0, x0 + 1};
  const double wy[2] = {1.0 - fy, fy};
  const double wx[2] = {1.0 - fx, fx};
  const double dy[2] = {-1.0, 1.0};
  const double dx[2] = {-1.0, 1.0};
  for (int a = 0; a < 2; ++a) {
    if (ys[a] < 0 || ys[a] >= H) continue;
    for (int b = 0; b < 2; ++b) {
      if (xs[b] < 0 || xs[b] >= W) continue;
      fn(ys[a] * W + xs[b], static_cast<S>(wy[a] * wx[b]), static_cast<S>(dy[a] * wx[b]),
         static_cast<S>(wy[a] * dx[b]));
    }
  }
}
}  // namespace detail

/// map[C,H,W] sampled at coords[P,2] (y,x) -> [P,C]; zero padding outside the
/// grid; gradient flows to both the map and the coordinates.
template <typename S>
typename Tape<S>::Var bilinear_sample(Tape<S>& t, typename Tape<S>::Var map, typename Tape<S>::Var coords) {
  const Tensor<S>& vm = t.val(map);
  const Tensor<S>& vc = t.val(coords);
  if (vm.rank() != 3) throw DimError("bilinear_sample: map must be rank 3");
  if (vc.rank() != 2 || vc.dim(1) != 2) throw DimError("bilinear_sample: coords must be [P,2]");
  if (!vc.all_finite()) throw NumericError("bilinear_sample: non-finite coordinate");
  const int C = vm.dim(0), H = vm.dim(1), W = vm.dim(2), P = vc.dim(0);
  Tensor<S> y({P, C});
  for (int p = 0; p < P; ++p)
    detail::bilinear_taps<S>(vc.at2(p, 0), vc.at2(p, 1), H, W, [&](int idx, S w, S, S) {
      for (int c = 0; c < C; ++c) y.at2(p, c) += w * vm.data[static_cast<int64_t>(c) * H * W + idx];
    });
  auto out = t.leaf(std::move(y));
  t.record([&t, map, coords, out, C, H, W, P] {
    const Tensor<S>& g = t.grad(out);
    const Tensor<S>& vm = t.val(map);
    const Tensor<S>& vc = t.val(coords);
    Tensor<S>& gm = t.grad(map);
    Tensor<S>& gc = t.grad(coords);
    for (int p = 0; p < P; ++p)
      detail::bilinear_taps<S>(vc.at2(p, 0), vc.at2(p, 1), H, W, [&](int idx, S w, S dwy, S dwx) {
        for (int c = 0; c < C; ++c) {
          const S gv = g.at2(p, c);
          const S mv = vm.data[static_cast<int64_t>(c) * H * W + idx];
          gm.data[static_cast<int64_t>(c) * H * W + idx] += w * gv;
          gc.at2(p, 0) += dwy * mv * gv;
          gc.at2(p, 1) += dwx * mv * gv;
        }
      });
  });
  return out;
}

/// Batched multi-head gather: v[N,H,W,M,d], coords[N,P,M,K,2] -> [N,P,M,K,d].
template <typename S>
typename Tape<S>::Var bilinear_gather(Tape<S>& t, typename Tape<S>::Var v, typename Tape<S>::Var coords) {
  const Tensor<S>& vv = t.val(v);
  const Tensor<S>& vc = t.val(coords);
  if (vv.rank() != 5) throw DimError("bilinear_gather: value map must be [N,H,W,M,d]");
  if (vc.rank() != 5 || vc.shape.back() != 2) throw DimError("bilinear_gather: coords must be [N,P,M,K,2]");
  if (vc.dim(0) != vv.dim(0) || vc.dim(2) != vv.dim(3)) throw DimError("bilinear_gather: N or M mismatch");
  if (!vc.all_finite()) throw NumericError("bilinear_gather: non-finite coordinate");
  const int N = vv.dim(0), H = vv.dim(1), W = vv.dim(2), M = vv.dim(3), d = vv.dim(4);
  const int P = vc.dim(1), K = vc.dim(3);
  Tensor<S> y({N, P, M, K, d});
  const int64_t vrow = static_cast<int64_t>(M) * d;  // stride between spatial sites of v
  for (int n = 0; n < N; ++n)
    for (int p = 0; p < P; ++p)
      for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) {
          const int64_t cbase = ((((static_cast<int64_t>(n) * P + p) * M + m) * K + k)) * 2;
          S* yp = y.ptr() + ((((static_cast<int64_t>(n) * P + p) * M + m) * K + k)) * d;
          detail::bilinear_taps<S>(vc[cbase], vc[cbase + 1], H, W, [&](int idx, S w, S, S) {
            const S* vp = vv.ptr() + (static_cast<int64_t>(n) * H * W + idx) * vrow + m * static_cast<int64_t>(d);
            for (int c = 0; c < d; ++c) yp[c] += w * vp[c];
          });
        }
  auto out = t.leaf(std::move(y));
  t.record([&t, v, coords, out, N, H, W, M, d, P, K, vrow] {
    const Tensor<S>& g = t.grad(out);
    const Tensor<S>& vv = t.val(v);
    const Tensor<S>& vc = t.val(coords);
    Tensor<S>& gv = t.grad(v);
    Tensor<S>& gc = t.grad(coords);
    for (int n = 0; n < N; ++n)
      for (int p = 0; p < P; ++p)
        for (int m = 0; m < M; ++m)
          for (int k = 0; k < K; ++k) {
            const int64_t cbase = ((((static_cast<int64_t>(n) * P + p) * M + m) * K + k)) * 2;
            const S* gp = g.ptr() + ((((static_cast<int64_t>(n) * P + p) * M + m) * K + k)) * d;
            detail::bilinear_taps<S>(vc[cbase], vc[cbase + 1], H, W, [&](int idx, S w, S dwy, S dwx) {
              const int64_t vbase = (static_cast<int64_t>(n) * H * W + idx) * vrow + m * static_cast<int64_t>(d);
              S accy = 0, accx = 0;
              for (int c = 0; c < d; ++c) {
                gv.data[vbase + c] += w * gp[c];
                accy += vv.data[vbase + c] * gp[c];
                accx += vv.data[vbase + c] * gp[c];
              }
              gc[cbase] += dwy * accy;
              gc[cbase + 1] += dwx * accx;
            });
          }
  });
  return out;
}

// ---------------------------------------------------------------------------
// attention helpers
// ---------------------------------------------------------------------------

/// sampled[...,K,d] weighted by weights[...,K], summed over K -> [...,d].
template <typename S>
typename Tape<S>::Var weighted_sum_k(Tape<S>& t, typename Tape<S>::Var sampled, typename Tape<S>::Var weights) {
  const Tensor<S>& vs = t.val(sampled);
  const Tensor<S>& vw = t.val(weights);
  if (vs.rank() < 2) throw DimError("weighted_sum_k: sampled must end in [K,d]");
  const int d = vs.shape.back();
  const int K = vs.shape[vs.shape.size() - 2];
  if (vw.shape.empty() || vw.shape.back() != K || vw.size() != vs.size() / d)
    throw DimError("weighted_sum_k: weight shape mismatch");
  const int64_t R = vw.size() / K;
  std::vector<int> oshape(vs.shape.begin(), vs.shape.end() - 2);
  oshape.push_back(d);
  Tensor<S> y(oshape);
  for (int64_t r = 0; r < R; ++r) {
    const S* sp = vs.ptr() + r * K * d;
    const S* wp = vw.ptr() + r * K;
    S* yp = y.ptr() + r * d;
    for (int k = 0; k < K; ++k)
      for (int c = 0; c < d; ++c) yp[c] += wp[k] * sp[k * d + c];
  }
  auto out = t.leaf(std::move(y));
  t.record([&t, sampled, weights, out, R, K, d] {
    const Tensor<S>& g = t.grad(out);
    const Tensor<S>& vs = t.val(sampled);
    const Tensor<S>& vw = t.val(weights);
    Tensor<S>& gs = t.grad(sampled);
    Tensor<S>& gw = t.grad(weights);
    for (int64_t r = 0; r < R; ++r) {
      const S* gp = g.ptr() + r * d;
      for (int k = 0; k < K; ++k) {
        S acc = 0;
        for (int c = 0; c < d; ++c) {
          gs[r * K * d + k * d + c] += vw[r * K + k] * gp[c];
          acc += vs[r * K * d + k * d + c] * gp[c];
        }
        gw[r * K + k] += acc;
      }
    }
  });
  return out;
}

/// Per-head output projection: x[N,H,W,M,d] with wm[M,d,C], summed over heads
/// -> [N,H,W,C].
template <typename S>
typename Tape<S>::Var head_project(Tape<S>& t, typename Tape<S>::Var x, typename Tape<S>::Var wm) {
  const Tensor<S>& vx = t.val(x);
  const Tensor<S>& vw = t.val(wm);
  if (vx.rank() != 5 || vw.rank() != 3 || vx.dim(3) != vw.dim(0) || vx.dim(4) != vw.dim(1))
    throw DimError("head_project: shape mismatch " + shape_str(vx.shape) + " vs " + shape_str(vw.shape));
  const int N = vx.dim(0), H = vx.dim(1), W = vx.dim(2), M = vx.dim(3), d = vx.dim(4), C = vw.dim(2);
  const int64_t R = static_cast<int64_t>(N) * H * W;
  Tensor<S> y({N, H, W, C});
  MapM<S> Y(y.ptr(), R, C);
  for (int m = 0; m < M; ++m) {
    Eigen::Map<const MatR<S>, 0, OStride> Xm(vx.ptr() + m * static_cast<int64_t>(d), R, d, OStride(M * d));
    CMapM<S> Wm(vw.ptr() + static_cast<int64_t>(m) * d * C, d, C);
    Y.noalias() += Xm * Wm;
  }
  auto out = t.leaf(std::move(y));
  t.record([&t, x, wm, out, R, M, d, C] {
    const Tensor<S>& g = t.grad(out);
    CMapM<S> G(g.ptr(), R, C);
    for (int m = 0; m < M; ++m) {
      Eigen::Map<const MatR<S>, 0, OStride> Xm(t.val(x).ptr() + m * static_cast<int64_t>(d), R, d, OStride(M * d));
      CMapM<S> Wm(t.val(wm).ptr() + static_cast<int64_t>(m) * d * C, d, C);
      Eigen::Map<MatR<S>, 0, OStride> GX(t.grad(x).ptr() + m * static_cast<int64_t>(d), R, d, OStride(M * d));
      MapM<S> GW(t.grad(wm).ptr() + static_cast<int64_t>(m) * d * C, d, C);
      GX.noalias() += G * Wm.transpose();
      GW.noalias() += Xm.transpose() * G;
    }
  });
  return out;
}

/// Head-wise linear: x[N,H,W,M,d] with w[M,d,E], b[M,E] -> [N,H,W,M,E]
/// (each head keeps its own projection; no summation over heads).
template <typename S>
typename Tape<S>::Var per_head_linear(Tape<S>& t, typename Tape<S>::Var x, typename Tape<S>::Var w,
                                      typename Tape<S>::Var b = -1) {
  const Tensor<S>& vx = t.val(x);
  const Tensor<S>& vw = t.val(w);
  if (vx.rank() != 5 || vw.rank() != 3 || vx.dim(3) != vw.dim(0) || vx.dim(4) != vw.dim(1))
    throw DimError("per_head_linear: shape mismatch " + shape_str(vx.shape) + " vs " + shape_str(vw.shape));
  const int N = vx.dim(0), H = vx.dim(1), W = vx.dim(2), M = vx.dim(3), d = vx.dim(4), E = vw.dim(2);
  const int64_t R = static_cast<int64_t>(N) * H * W;
  Tensor<S> y({N, H, W, M, E});
  for (int m = 0; m < M; ++m) {
    Eigen::Map<const MatR<S>, 0, OStride> Xm(vx.ptr() + m * static_cast<int64_t>(d), R, d, OStride(M * d));
    CMapM<S> Wm(vw.ptr() + static_cast<int64_t>(m) * d * E, d, E);
    Eigen::Map<MatR<S>, 0, OStride> Ym(y.ptr() + m * static_cast<int64_t>(E), R, E, OStride(M * E));
    Ym.noalias() = Xm * Wm;
    if (b >= 0) {
      const Tensor<S>& vb = t.val(b);
      if (vb.size() != static_cast<int64_t>(M) * E) throw DimError("per_head_linear: bias extent mismatch");
      Ym.rowwise() += CMapM<S>(vb.ptr() + static_cast<int64_t>(m) * E, 1, E).row(0);
    }
  }
  auto out = t.leaf(std::move(y));
  t.record([&t, x, w, b, out, R, M, d, E] {
    const Tensor<S>& g = t.grad(out);
    for (int m = 0; m < M; ++m) {
      Eigen::Map<const MatR<S>, 0, OStride> Gm(g.ptr() + m * static_cast<int64_t>(E), R, E, OStride(M * E));
      Eigen::Map<const MatR<S>, 0, OStride> Xm(t.val(x).ptr() + m * static_cast<int64_t>(d), R, d, OStride(M * d));
      CMapM<S> Wm(t.val(w).ptr() + static_cast<int64_t>(m) * d * E, d, E);
      Eigen::Map<MatR<S>, 0, OStride> GX(t.grad(x).ptr() + m * static_cast<int64_t>(d), R, d, OStride(M * d));
      MapM<S> GW(t.grad(w).ptr() + static_cast<int64_t>(m) * d * E, d, E);
      GX.noalias() += Gm * Wm.transpose();
      GW.noalias() += Xm.transpose() * Gm;
      if (b >= 0) MapM<S>(t.grad(b).ptr() + static_cast<int64_t>(m) * E, 1, E).row(0) += Gm.colwise().sum();
    }
  });
  return out;
}

/// Dense cross-attention: q,k,v as [N,H,W,M,d]; every query position attends
/// to all H*W positions of k/v per head. Returns [N,H,W,M,d].
template <typename S>
typename Tape<S>::Var attend_full(Tape<S>& t, typename Tape<S>::Var q, typename Tape<S>::Var k,
                                  typename Tape<S>::Var v) {
  const Tensor<S>& vq = t.val(q);
  const Tensor<S>& vk = t.val(k);
  const Tensor<S>& vv = t.val(v);
  if (vq.rank() != 5 || !vk.same_shape(vv)) throw DimError("attend_full: bad shapes");
  if (vq.dim(0) != vk.dim(0) || vq.dim(3) != vk.dim(3) || vq.dim(4) != vk.dim(4))
    throw DimError("attend_full: head layout mismatch");
  const int N = vq.dim(0), Hq = vq.dim(1), Wq = vq.dim(2), M = vq.dim(3), d = vq.dim(4);
  const int Pq = Hq * Wq, Pk = vk.dim(1) * vk.dim(2);
  const double scl = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor<S> y(vq.shape);
  const int64_t hstride = static_cast<int64_t>(M) * d;
  auto softmax_rows = [](MatR<S>& A) {
    for (int i = 0; i < A.rows(); ++i) {
      S mx = A.row(i).maxCoeff();
      A.row(i) = (A.row(i).array() - mx).exp();
      A.row(i) /= A.row(i).sum();
    }
  };
  for (int n = 0; n < N; ++n)
    for (int m = 0; m < M; ++m) {
      Eigen::Map<const MatR<S>, 0, OStride> Qm(vq.ptr() + (static_cast<int64_t>(n) * Pq) * hstride + m * d, Pq, d,
                                               OStride(hstride));
      Eigen::Map<const MatR<S>, 0, OStride> Km(vk.ptr() + (static_cast<int64_t>(n) * Pk) * hstride + m * d, Pk, d,
                                               OStride(hstride));
      Eigen::Map<const MatR<S>, 0, OStride> Vm(vv.ptr() + (static_cast<int64_t>(n) * Pk) * hstride + m * d, Pk, d,
                                               OStride(hstride));
      MatR<S> A = (Qm * Km.transpose() * static_cast<S>(scl)).eval();
      softmax_rows(A);
      Eigen::Map<MatR<S>, 0, OStride> Ym(y.ptr() + (static_cast<int64_t>(n) * Pq) * hstride + m * d, Pq, d,
                                         OStride(hstride));
      Ym.noalias() = A * Vm;
    }
  auto out = t.leaf(std::move(y));
  t.record([&t, q, k, v, out, N, M, d, Pq, Pk, scl, hstride, softmax_rows] {
    for (int n = 0; n < N; ++n)
      for (int m = 0; m < M; ++m) {
        Eigen::Map<const MatR<S>, 0, OStride> Qm(t.val(q).ptr() + (static_cast<int64_t>(n) * Pq) * hstride + m * d,
                                                 Pq, d, OStride(hstride));
        Eigen::Map<const MatR<S>, 0, OStride> Km(t.val(k).ptr() + (static_cast<int64_t>(n) * Pk) * hstride + m * d,
                                                 Pk, d, OStride(hstride));
        Eigen::Map<const MatR<S>, 0, OStride> Vm(t.val(v).ptr() + (static_cast<int64_t>(n) * Pk) * hstride + m * d,
                                                 Pk, d, OStride(hstride));
        Eigen::Map<const MatR<S>, 0, OStride> Gy(t.grad(out).ptr() + (static_cast<int64_t>(n) * Pq) * hstride + m * d,
                                                 Pq, d, OStride(hstride));
        MatR<S> A = (Qm * Km.transpose() * static_cast<S>(scl)).eval();
        softmax_rows(A);
        Eigen::Map<MatR<S>, 0, OStride> Gv(t.grad(v).ptr() + (static_cast<int64_t>(n) * Pk) * hstride + m * d, Pk, d,
                                           OStride(hstride));
        Gv.noalias() += A.transpose() * Gy;
        MatR<S> GA = Gy * Vm.transpose();  // [Pq,Pk]
        // softmax backward per row
        for (int i = 0; i < Pq; ++i) {
          S dot = GA.row(i).dot(A.row(i));
          GA.row(i) = A.row(i).array() * (GA.row(i).array() - dot);
        }
        Eigen::Map<MatR<S>, 0, OStride> Gq(t.grad(q).ptr() + (static_cast<int64_t>(n) * Pq) * hstride + m * d, Pq, d,
                                           OStride(hstride));
        Eigen::Map<MatR<S>, 0, OStride> Gk(t.grad(k).ptr() + (static_cast<int64_t>(n) * Pk) * hstride + m * d, Pk, d,
                                           OStride(hstride));
        Gq.noalias() += GA * Km * static_cast<S>(scl);
        Gk.noalias() += GA.transpose() * Qm * static_cast<S>(scl);
      }
  });
  return out;
}

}  // namespace viis
