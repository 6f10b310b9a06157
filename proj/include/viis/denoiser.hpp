#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "viis/attention.hpp"
#include "viis/ops.hpp"
#include "viis/rng.hpp"

namespace viis {

/// Named parameter tensors in a stable order (checkpoint and Adam state are
/// keyed by these names).
template <typename S>
struct ParamStore {
  std::vector<std::pair<std::string, Tensor<S>>> items;
  std::unordered_map<std::string, size_t> index;

  Tensor<S>& add(const std::string& name, Tensor<S> t) {
    if (index.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index[name] = items.size();
    items.emplace_back(name, std::move(t));
    return items.back().second;
  }
  bool has(const std::string& name) const { return index.count(name) > 0; }
  Tensor<S>& get(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ConfigError("unknown parameter: " + name);
    return items[it->second].second;
  }
  const Tensor<S>& get(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ConfigError("unknown parameter: " + name);
    return items[it->second].second;
  }
  int64_t total_count() const {
    int64_t n = 0;
    for (auto& [k, v] : items) n += v.size();
    return n;
  }
  template <typename T2>
  ParamStore<T2> cast() const {
    ParamStore<T2> out;
    for (auto& [k, v] : items) out.add(k, v.template cast<T2>());
    return out;
  }
};

struct DenoiserConfig {
  int image_size = 32;
  int scales = 3;
  std::vector<int> channels = {32, 64, 128};
  std::string conditioning_mode = "scam";  // scam | addition | concatenation |
                                           // global_attention | concat_only |
                                           // no_visible | no_infrared
  std::string latent_mode = "pixel";       // pixel | avgpool
  int pool_factor = 4;
  int T = 200;
  int time_embed_dim = 64;
  int heads = 4;
  int points = 4;

  InjectionMode inject_mode() const {
    if (conditioning_mode == "no_visible" || conditioning_mode == "no_infrared") return InjectionMode::scam;
    return injection_mode_from_string(conditioning_mode);
  }
  bool has_visible() const { return conditioning_mode != "no_visible"; }
  bool has_infrared() const { return conditioning_mode != "no_infrared"; }

  void validate() const {
    if (scales < 1) throw ConfigError("model: scales must be >= 1");
    if (static_cast<int>(channels.size()) != scales) throw ConfigError("model: channels length must equal scales");
    if (image_size % (1 << (scales - 1)) != 0)
      throw ConfigError("model: image_size must be divisible by 2^(scales-1)");
    if (time_embed_dim % 2 != 0) throw ConfigError("model: time_embed_dim must be even");
    if (T < 1) throw ConfigError("model: T must be >= 1");
    for (int c : channels)
      if (c % heads != 0) throw ConfigError("model: every channel width must be divisible by heads");
    inject_mode();  // throws on unknown mode string
    if (latent_mode != "pixel" && latent_mode != "avgpool") throw ConfigError("model: unknown latent_mode");
  }
};

/// Raw sinusoidal step embedding: half sines, half cosines with geometric
/// frequencies from 1 down to 1/10000.
template <typename S>
Tensor<S> time_embed_raw(int t, int dim) {
  if (dim % 2 != 0) throw ConfigError("time_embed: dim must be even");
  const int half = dim / 2;
  Tensor<S> e({dim});
  for (int j = 0; j < half; ++j) {
    const double f = (half == 1) ? 1.0 : std::exp(-std::log(10000.0) * j / (half - 1));
    e[j] = static_cast<S>(std::sin(t * f));
    e[half + j] = static_cast<S>(std::cos(t * f));
  }
  return e;
}

namespace detail {
inline int norm_groups(int C) {
  if (C % 8 == 0) return 8;
  if (C % 4 == 0) return 4;
  return 1;
}
}  // namespace detail

/// The conditioned UNet noise predictor.
template <typename S>
class Denoiser {
 public:
  using Var = typename Tape<S>::Var;
  DenoiserConfig cfg;
  ParamStore<S> params;

  Denoiser() = default;
  Denoiser(DenoiserConfig c, uint64_t seed) : cfg(std::move(c)) {
    cfg.validate();
    Rng rng(seed);
    init_params(rng);
  }
  Denoiser(DenoiserConfig c, ParamStore<S> p) : cfg(std::move(c)), params(std::move(p)) { cfg.validate(); }

  /// Per-forward binding of every parameter to a tape leaf, in store order.
  struct Bind {
    Tape<S>* tape = nullptr;
    std::vector<Var> vars;
    const ParamStore<S>* store = nullptr;
    Var operator()(const std::string& name) const {
      auto it = store->index.find(name);
      if (it == store->index.end()) throw ConfigError("unbound parameter: " + name);
      return vars[it->second];
    }
  };

  Bind bind(Tape<S>& t) const {
    Bind b;
    b.tape = &t;
    b.store = &params;
    b.vars.reserve(params.items.size());
    for (auto& [name, tensor] : params.items) b.vars.push_back(t.leaf(tensor));
    return b;
  }

  /// Multi-scale condition features for one modality ("v" or "i").
  std::vector<Var> encode_conditions_one(Tape<S>& t, const Bind& b, Var input, const std::string& mod) const {
    std::vector<Var> feats;
    Var x = input;
    for (int l = 0; l < cfg.scales; ++l) {
      if (l > 0) x = resample(t, x, Resample::down2_avg);
      const std::string p = "enc_" + mod + ".l" + std::to_string(l);
      x = silu(t, conv2d(t, x, b(p + ".w"), b(p + ".b"), 1, 1));
      feats.push_back(x);
    }
    return feats;
  }

  /// eps_hat for a batch: z_t[N,3,H,W], per-sample steps ts, visible [N,3,H,W]
  /// and infrared [N,1,H,W] conditions as tape vars.
  Var forward(Tape<S>& t, const Bind& b, Var z_t, const std::vector<int>& ts, Var vis, Var ir) const {
    const int N = t.val(z_t).dim(0);
    if (static_cast<int>(ts.size()) != N) throw DimError("forward: one step index per sample required");
    for (int ti : ts)
      if (ti < 1 || ti > cfg.T) throw ParamError("forward: step index out of range");
    const int L = cfg.scales;
    const auto& ch = cfg.channels;
    const InjectionMode mode = cfg.inject_mode();
    const bool use_v = cfg.has_visible(), use_i = cfg.has_infrared();

    // Absent modalities enter as zeros everywhere.
    Var vis_in = use_v ? vis : t.leaf(Tensor<S>(t.val(vis).shape));
    Var ir_in = use_i ? ir : t.leaf(Tensor<S>(t.val(ir).shape));

    // time embedding MLP on the raw sinusoid, one row per sample
    Tensor<S> sins({N, cfg.time_embed_dim});
    for (int n = 0; n < N; ++n) {
      Tensor<S> e = time_embed_raw<S>(ts[static_cast<size_t>(n)], cfg.time_embed_dim);
      std::copy(e.data.begin(), e.data.end(), sins.ptr() + static_cast<int64_t>(n) * cfg.time_embed_dim);
    }
    Var temb = linear(t, silu(t, linear(t, t.leaf(std::move(sins)), b("temb.mlp1.w"), b("temb.mlp1.b"))),
                      b("temb.mlp2.w"), b("temb.mlp2.b"));

    std::vector<Var> fv, fi;
    if (use_v) fv = encode_conditions_one(t, b, vis_in, "v");
    if (use_i) fi = encode_conditions_one(t, b, ir_in, "i");
    auto cond = [&](const std::vector<Var>& f, int l) -> Var { return f.empty() ? -1 : f[static_cast<size_t>(l)]; };

    auto resblock = [&](Var x, const std::string& p, int cin, int cout, Var temb_nc) -> Var {
      Var h = conv2d(t, silu(t, group_norm(t, x, detail::norm_groups(cin), b(p + ".gn.g"), b(p + ".gn.b"))),
                     b(p + ".conv.w"), b(p + ".conv.b"), 1, 1);
      if (temb_nc >= 0) h = add_nc(t, h, temb_nc);
      Var skip = x;
      if (cin != cout) skip = nhwc_to_nchw(t, linear(t, nchw_to_nhwc(t, x), b(p + ".skip.w"), -1));
      return add(t, skip, h);
    };
    auto scale_group = [&](Var x, const std::string& p, int cin, int cout) -> Var {
      Var tnc = linear(t, temb, b(p + ".temb.w"), b(p + ".temb.b"));  // [N, cout]
      x = resblock(x, p + ".b0", cin, cout, tnc);
      return resblock(x, p + ".b1", cout, cout, -1);
    };
    auto inject = [&](Var x, const std::string& site, int l) -> Var {
      if (mode == InjectionMode::none) return x;
      InjectSiteVars<S> sv = bind_site(b, site, mode);
      return sadmr_inject(t, x, cond(fv, l), cond(fi, l), sv);
    };

    Var x = conv2d(t, concat_ch(t, concat_ch(t, z_t, vis_in), ir_in), b("in_conv.w"), b("in_conv.b"), 1, 1);
    std::vector<Var> skips;
    for (int l = 0; l < L - 1; ++l) {
      x = scale_group(x, "enc.s" + std::to_string(l), l == 0 ? ch[0] : ch[l - 1], ch[l]);
      x = inject(x, "inj.e" + std::to_string(l), l);
      skips.push_back(x);
      x = resample(t, x, Resample::down2_avg);
    }
    x = scale_group(x, "bn", L == 1 ? ch[0] : ch[L - 2], ch[L - 1]);
    x = inject(x, "inj.bn", L - 1);
    for (int l = L - 2; l >= 0; --l) {
      x = resample(t, x, Resample::up2_nearest);
      x = concat_ch(t, x, skips[static_cast<size_t>(l)]);
      x = inject(x, "inj.d" + std::to_string(l), l);
      x = scale_group(x, "dec.s" + std::to_string(l), ch[l + 1] + ch[l], ch[l]);
    }
    x = conv2d(t, silu(t, group_norm(t, x, detail::norm_groups(ch[0]), b("head.gn.g"), b("head.gn.b"))),
               b("head.conv.w"), b("head.conv.b"), 1, 1);
    return x;
  }

  /// Convenience single-call forward on a private tape (no gradients kept).
  Tensor<S> predict(const Tensor<S>& z_t, const std::vector<int>& ts, const Tensor<S>& vis,
                    const Tensor<S>& ir) const {
    Tape<S> t;
    Bind b = bind(t);
    Var out = forward(t, b, t.leaf(z_t), ts, t.leaf(vis), t.leaf(ir));
    return t.val(out);
  }

 private:
  /// Channel width of the UNet feature at an injection site.
  int site_channels(const std::string& site) const {
    const auto& ch = cfg.channels;
    if (site == "inj.bn") return ch[static_cast<size_t>(cfg.scales - 1)];
    const int l = site[5] - '0';
    if (site[4] == 'e') return ch[static_cast<size_t>(l)];
    return ch[static_cast<size_t>(l + 1)] + ch[static_cast<size_t>(l)];  // decoder: post-concat width
  }

  InjectSiteVars<S> bind_site(const Bind& b, const std::string& site, InjectionMode mode) const {
    InjectSiteVars<S> sv;
    sv.mode = mode;
    sv.has_visible = cfg.has_visible();
    sv.has_infrared = cfg.has_infrared();
    auto bind_branch = [&](DeformAttnVars<S>& a, const std::string& br) {
      const std::string p = site + "." + br;
      const int C = site_channels(site);
      a.M = cfg.heads;
      a.K = cfg.points;
      a.d = C / cfg.heads;
      a.wq = b(p + ".wq.w");
      a.bq = b(p + ".wq.b");
      a.wv = b(p + ".wv.w");
      a.bv = b(p + ".wv.b");
      if (mode == InjectionMode::global_attention) {
        a.wk = b(p + ".wk.w");
        a.bk = b(p + ".wk.b");
      } else {
        a.off_w = b(p + ".off.w");
        a.off_b = b(p + ".off.b");
        a.att_w = b(p + ".att.w");
        a.att_b = b(p + ".att.b");
      }
      a.wm = b(p + ".wm");
      a.out_w = b(p + ".out.w");
      a.out_b = b(p + ".out.b");
    };
    switch (mode) {
      case InjectionMode::scam:
      case InjectionMode::global_attention:
        if (sv.has_visible) bind_branch(sv.vis, "vis");
        if (sv.has_infrared) bind_branch(sv.ir, "ir");
        break;
      case InjectionMode::addition:
        if (sv.has_visible) {
          sv.vis_proj_w = b(site + ".vis.proj.w");
          sv.vis_proj_b = b(site + ".vis.proj.b");
        }
        if (sv.has_infrared) {
          sv.ir_proj_w = b(site + ".ir.proj.w");
          sv.ir_proj_b = b(site + ".ir.proj.b");
        }
        break;
      case InjectionMode::concatenation:
        sv.cat_w = b(site + ".cat.w");
        sv.cat_b = b(site + ".cat.b");
        break;
      case InjectionMode::none:
        break;
    }
    return sv;
  }

  void init_params(Rng& rng) {
    auto uniform_fan_in = [&](std::vector<int> shape, int fan_in) {
      Tensor<S> t(std::move(shape));
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : t.data) v = static_cast<S>(rng.uniform(-bound, bound));
      return t;
    };
    auto add_conv = [&](const std::string& p, int cout, int cin, int k, bool zero = false) {
      params.add(p + ".w", zero ? Tensor<S>({cout, cin, k, k}) : uniform_fan_in({cout, cin, k, k}, cin * k * k));
      params.add(p + ".b", zero ? Tensor<S>({cout}) : uniform_fan_in({cout}, cin * k * k));
    };
    auto add_linear = [&](const std::string& p, int din, int dout, bool zero = false) {
      params.add(p + ".w", zero ? Tensor<S>({din, dout}) : uniform_fan_in({din, dout}, din));
      params.add(p + ".b", zero ? Tensor<S>({dout}) : uniform_fan_in({dout}, din));
    };
    auto add_per_head = [&](const std::string& p, int M, int d, int E, bool zero = false) {
      params.add(p + ".w", zero ? Tensor<S>({M, d, E}) : uniform_fan_in({M, d, E}, d));
      params.add(p + ".b", zero ? Tensor<S>({M, E}) : uniform_fan_in({M, E}, d));
    };
    auto add_gn = [&](const std::string& p, int C) {
      params.add(p + ".g", Tensor<S>::full({C}, S(1)));
      params.add(p + ".b", Tensor<S>({C}));
    };

    const int L = cfg.scales, D = cfg.time_embed_dim;
    const auto& ch = cfg.channels;
    const InjectionMode mode = cfg.inject_mode();

    add_linear("temb.mlp1", D, D);
    add_linear("temb.mlp2", D, D);
    if (cfg.has_visible())
      for (int l = 0; l < L; ++l) add_conv("enc_v.l" + std::to_string(l), ch[l], l == 0 ? 3 : ch[l - 1], 3);
    if (cfg.has_infrared())
      for (int l = 0; l < L; ++l) add_conv("enc_i.l" + std::to_string(l), ch[l], l == 0 ? 1 : ch[l - 1], 3);
    add_conv("in_conv", ch[0], 7, 3);

    auto add_block = [&](const std::string& p, int cin, int cout) {
      add_gn(p + ".gn", cin);
      add_conv(p + ".conv", cout, cin, 3);
      if (cin != cout) params.add(p + ".skip.w", uniform_fan_in({cin, cout}, cin));
    };
    auto add_scale_group = [&](const std::string& p, int cin, int cout) {
      add_block(p + ".b0", cin, cout);
      add_block(p + ".b1", cout, cout);
      add_linear(p + ".temb", D, cout);
    };
    auto add_site = [&](const std::string& site) {
      if (mode == InjectionMode::none) return;
      const int C = site_channels(site);
      const int d = C / cfg.heads, M = cfg.heads, K = cfg.points;
      auto add_branch = [&](const std::string& br, int c_cond) {
        const std::string p = site + "." + br;
        add_linear(p + ".wq", C, M * d);
        add_linear(p + ".wv", c_cond, M * d);
        if (mode == InjectionMode::global_attention) {
          add_linear(p + ".wk", c_cond, M * d);
        } else {
          add_per_head(p + ".off", M, d, 2 * K, /*zero=*/true);
          add_per_head(p + ".att", M, d, K);
        }
        params.add(p + ".wm", uniform_fan_in({M, d, C}, d));
        add_linear(p + ".out", C, C, /*zero=*/true);
      };
      const int site_l = (site == "inj.bn") ? L - 1 : site[5] - '0';
      const int cv = ch[static_cast<size_t>(site_l)], ci = ch[static_cast<size_t>(site_l)];
      switch (mode) {
        case InjectionMode::scam:
        case InjectionMode::global_attention:
          if (cfg.has_visible()) add_branch("vis", cv);
          if (cfg.has_infrared()) add_branch("ir", ci);
          break;
        case InjectionMode::addition:
          if (cfg.has_visible()) add_linear(site + ".vis.proj", cv, C);
          if (cfg.has_infrared()) add_linear(site + ".ir.proj", ci, C);
          break;
        case InjectionMode::concatenation: {
          int cin = C + (cfg.has_visible() ? cv : 0) + (cfg.has_infrared() ? ci : 0);
          add_linear(site + ".cat", cin, C);
          break;
        }
        case InjectionMode::none:
          break;
      }
    };

    for (int l = 0; l < L - 1; ++l) {
      add_scale_group("enc.s" + std::to_string(l), l == 0 ? ch[0] : ch[l - 1], ch[l]);
      add_site("inj.e" + std::to_string(l));
    }
    add_scale_group("bn", L == 1 ? ch[0] : ch[L - 2], ch[L - 1]);
    add_site("inj.bn");
    for (int l = L - 2; l >= 0; --l) {
      add_site("inj.d" + std::to_string(l));
      add_scale_group("dec.s" + std::to_string(l), ch[l + 1] + ch[l], ch[l]);
    }
    add_gn("head.gn", ch[0]);
    add_conv("head.conv", 3, ch[0], 3, /*zero=*/true);
  }
};

}  // namespace viis
