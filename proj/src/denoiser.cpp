#include "agddad/denoiser.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "agddad/core/parallel.hpp"
#include "agddad/nn/checkpoint.hpp"

namespace agddad {

using nn::CMapRM;
using nn::CVecMap;
using nn::Grad;
using nn::MapRM;
using nn::MatRM;
using nn::ParamStore;
using nn::VecMap;

std::vector<double> sinusoidal_embedding(int t, int dim) {
  if (dim % 2 != 0) throw std::invalid_argument("sinusoidal_embedding: dim must be even");
  const int half = dim / 2;
  std::vector<double> e(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e[i] = std::sin(t * freq);
    e[half + i] = std::cos(t * freq);
  }
  return e;
}

void DenoiserConfig::validate() const {
  const bool pow2 = image_size >= 32 && (image_size & (image_size - 1)) == 0;
  if (!pow2) throw std::invalid_argument("DenoiserConfig: image_size must be a power of two >= 32");
  if (channels <= 0 || base_width <= 0 || depth_levels <= 0 || time_dim <= 0 ||
      batch_size <= 0 || training_steps < 0 || learning_rate <= 0.0) {
    throw std::invalid_argument("DenoiserConfig: counts must be positive");
  }
  if (base_width % norm_groups != 0) {
    throw std::invalid_argument("DenoiserConfig: base_width must be divisible by norm_groups");
  }
}

namespace {

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

struct Conv2d {
  int ci = 0, co = 0, k = 3, stride = 1, pad = 1;
  size_t w_off = 0, b_off = 0;

  void init(ParamStore& store, const std::string& name, Rng& rng, bool zero_init = false) {
    w_off = store.add(name + ".w", static_cast<size_t>(co) * ci * k * k);
    b_off = store.add(name + ".b", static_cast<size_t>(co));
    if (!zero_init) nn::init_uniform_fan(store, w_off, static_cast<size_t>(co) * ci * k * k, ci * k * k, rng);
  }

  int out_h(int h) const { return (h + 2 * pad - k) / stride + 1; }
  int out_w(int w) const { return (w + 2 * pad - k) / stride + 1; }

  MatRM im2col(const Image& x) const {
    const int oh = out_h(x.h), ow = out_w(x.w);
    MatRM col(ci * k * k, oh * ow);
    for (int c = 0; c < ci; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          double* row = col.data() + static_cast<size_t>((c * k + ky) * k + kx) * (oh * ow);
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ky;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kx;
              row[oy * ow + ox] = (iy >= 0 && iy < x.h && ix >= 0 && ix < x.w)
                                      ? x.at(c, iy, ix)
                                      : 0.0;
            }
          }
        }
      }
    }
    return col;
  }

  Image forward(const ParamStore& store, const Image& x) const {
    const int oh = out_h(x.h), ow = out_w(x.w);
    MatRM col = im2col(x);
    Image y(co, oh, ow);
    MapRM Y(y.v.data(), co, oh * ow);
    CMapRM W(store.p(w_off), co, ci * k * k);
    Y.noalias() = W * col;
    for (int c = 0; c < co; ++c) Y.row(c).array() += store.w[b_off + c];
    return y;
  }

  Image backward(const ParamStore& store, Grad& g, const Image& x, const Image& dy) const {
    const int oh = dy.h, ow = dy.w;
    MatRM col = im2col(x);
    CMapRM DY(dy.v.data(), co, oh * ow);
    MapRM dW(g.data() + w_off, co, ci * k * k);
    dW.noalias() += DY * col.transpose();
    VecMap db(g.data() + b_off, co);
    db.noalias() += DY.rowwise().sum();

    CMapRM W(store.p(w_off), co, ci * k * k);
    MatRM dcol(ci * k * k, oh * ow);
    dcol.noalias() = W.transpose() * DY;

    Image dx(x.c, x.h, x.w);
    for (int c = 0; c < ci; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const double* row = dcol.data() + static_cast<size_t>((c * k + ky) * k + kx) * (oh * ow);
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= x.h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= x.w) continue;
              dx.at(c, iy, ix) += row[oy * ow + ox];
            }
          }
        }
      }
    }
    return dx;
  }
};

struct GroupNorm {
  int ch = 0, groups = 1;
  size_t g_off = 0, b_off = 0;
  static constexpr double kEps = 1e-5;

  struct Cache {
    std::vector<double> xhat;
    std::vector<double> inv;  // per group
  };

  void init(ParamStore& store, const std::string& name) {
    g_off = store.add(name + ".gamma", ch);
    b_off = store.add(name + ".beta", ch);
    for (int c = 0; c < ch; ++c) store.w[g_off + c] = 1.0;
  }

  Image forward(const ParamStore& store, const Image& x, Cache* cache) const {
    const int chpg = ch / groups;
    const size_t plane = static_cast<size_t>(x.h) * x.w;
    const size_t gsize = chpg * plane;
    Image y(x.c, x.h, x.w);
    if (cache) {
      cache->xhat.resize(x.v.size());
      cache->inv.resize(groups);
    }
    for (int gi = 0; gi < groups; ++gi) {
      const size_t base = static_cast<size_t>(gi) * gsize;
      double mu = 0.0;
      for (size_t i = 0; i < gsize; ++i) mu += x.v[base + i];
      mu /= static_cast<double>(gsize);
      double var = 0.0;
      for (size_t i = 0; i < gsize; ++i) {
        const double d = x.v[base + i] - mu;
        var += d * d;
      }
      var /= static_cast<double>(gsize);
      const double inv = 1.0 / std::sqrt(var + kEps);
      if (cache) cache->inv[gi] = inv;
      for (int cc = 0; cc < chpg; ++cc) {
        const int c = gi * chpg + cc;
        const double gamma = store.w[g_off + c];
        const double beta = store.w[b_off + c];
        const size_t coff = static_cast<size_t>(c) * plane;
        for (size_t i = 0; i < plane; ++i) {
          const double xh = (x.v[coff + i] - mu) * inv;
          if (cache) cache->xhat[coff + i] = xh;
          y.v[coff + i] = gamma * xh + beta;
        }
      }
    }
    return y;
  }

  Image backward(const ParamStore& store, Grad& g, const Cache& cache, const Image& dy) const {
    const int chpg = ch / groups;
    const size_t plane = static_cast<size_t>(dy.h) * dy.w;
    const size_t gsize = chpg * plane;
    Image dx(dy.c, dy.h, dy.w);
    for (int gi = 0; gi < groups; ++gi) {
      // dxhat plus group statistics, then the normalization backward rule.
      double m1 = 0.0, m2 = 0.0;
      for (int cc = 0; cc < chpg; ++cc) {
        const int c = gi * chpg + cc;
        const double gamma = store.w[g_off + c];
        const size_t coff = static_cast<size_t>(c) * plane;
        double dgam = 0.0, dbet = 0.0;
        for (size_t i = 0; i < plane; ++i) {
          const double d = dy.v[coff + i];
          const double xh = cache.xhat[coff + i];
          dgam += d * xh;
          dbet += d;
          const double dxh = d * gamma;
          m1 += dxh;
          m2 += dxh * xh;
        }
        g[g_off + c] += dgam;
        g[b_off + c] += dbet;
      }
      m1 /= static_cast<double>(gsize);
      m2 /= static_cast<double>(gsize);
      const double inv = cache.inv[gi];
      for (int cc = 0; cc < chpg; ++cc) {
        const int c = gi * chpg + cc;
        const double gamma = store.w[g_off + c];
        const size_t coff = static_cast<size_t>(c) * plane;
        for (size_t i = 0; i < plane; ++i) {
          const double dxh = dy.v[coff + i] * gamma;
          dx.v[coff + i] = inv * (dxh - m1 - cache.xhat[coff + i] * m2);
        }
      }
    }
    return dx;
  }
};

struct Linear {
  int in = 0, out = 0;
  size_t w_off = 0, b_off = 0;

  void init(ParamStore& store, const std::string& name, Rng& rng) {
    w_off = store.add(name + ".w", static_cast<size_t>(out) * in);
    b_off = store.add(name + ".b", static_cast<size_t>(out));
    nn::init_uniform_fan(store, w_off, static_cast<size_t>(out) * in, in, rng);
  }

  Eigen::VectorXd forward(const ParamStore& store, const Eigen::VectorXd& x) const {
    CMapRM W(store.p(w_off), out, in);
    CVecMap b(store.p(b_off), out);
    return W * x + b;
  }

  Eigen::VectorXd backward(const ParamStore& store, Grad& g, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& dy) const {
    MapRM dW(g.data() + w_off, out, in);
    dW.noalias() += dy * x.transpose();
    VecMap db(g.data() + b_off, out);
    db.noalias() += dy;
    CMapRM W(store.p(w_off), out, in);
    return W.transpose() * dy;
  }
};

Image silu_image(const Image& x) {
  Image y = x;
  for (double& v : y.v) v = nn::silu(v);
  return y;
}

Image nearest_up2(const Image& x) {
  Image y(x.c, x.h * 2, x.w * 2);
  for (int c = 0; c < x.c; ++c) {
    for (int i = 0; i < x.h; ++i) {
      for (int j = 0; j < x.w; ++j) {
        const double v = x.at(c, i, j);
        y.at(c, 2 * i, 2 * j) = v;
        y.at(c, 2 * i, 2 * j + 1) = v;
        y.at(c, 2 * i + 1, 2 * j) = v;
        y.at(c, 2 * i + 1, 2 * j + 1) = v;
      }
    }
  }
  return y;
}

Image nearest_up2_backward(const Image& dy) {
  Image dx(dy.c, dy.h / 2, dy.w / 2);
  for (int c = 0; c < dx.c; ++c) {
    for (int i = 0; i < dx.h; ++i) {
      for (int j = 0; j < dx.w; ++j) {
        dx.at(c, i, j) = dy.at(c, 2 * i, 2 * j) + dy.at(c, 2 * i, 2 * j + 1) +
                         dy.at(c, 2 * i + 1, 2 * j) + dy.at(c, 2 * i + 1, 2 * j + 1);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// residual block: x + conv2(silu(gn2(conv1(silu(gn1(x))) + proj(temb))))
// ---------------------------------------------------------------------------

struct ResBlock {
  GroupNorm gn1, gn2;
  Conv2d conv1, conv2;
  Linear tproj;

  struct Cache {
    GroupNorm::Cache gn1c, gn2c;
    Image a1;      // gn1 output (silu input)
    Image b1;      // conv1 input
    Image d;       // gn2 input
    Image a2;      // gn2 output (silu input)
    Image b2;      // conv2 input
  };

  void init(ParamStore& store, const std::string& name, int ch, int time_dim, int groups,
            Rng& rng) {
    gn1.ch = ch;
    gn1.groups = groups;
    gn1.init(store, name + ".gn1");
    conv1.ci = ch;
    conv1.co = ch;
    conv1.init(store, name + ".conv1", rng);
    tproj.in = time_dim;
    tproj.out = ch;
    tproj.init(store, name + ".tproj", rng);
    gn2.ch = ch;
    gn2.groups = groups;
    gn2.init(store, name + ".gn2");
    conv2.ci = ch;
    conv2.co = ch;
    conv2.init(store, name + ".conv2", rng, /*zero_init=*/true);
  }

  Image forward(const ParamStore& store, const Image& x, const Eigen::VectorXd& temb,
                Cache* c) const {
    GroupNorm::Cache tmp1, tmp2;
    Image a1 = gn1.forward(store, x, c ? &c->gn1c : nullptr);
    Image b1 = silu_image(a1);
    Image d = conv1.forward(store, b1);
    const Eigen::VectorXd tb = tproj.forward(store, temb);
    const size_t plane = static_cast<size_t>(d.h) * d.w;
    for (int ch = 0; ch < d.c; ++ch) {
      const double add = tb[ch];
      for (size_t i = 0; i < plane; ++i) d.v[static_cast<size_t>(ch) * plane + i] += add;
    }
    Image a2 = gn2.forward(store, d, c ? &c->gn2c : nullptr);
    Image b2 = silu_image(a2);
    Image y = conv2.forward(store, b2);
    for (size_t i = 0; i < y.v.size(); ++i) y.v[i] += x.v[i];
    if (c) {
      c->a1 = std::move(a1);
      c->b1 = std::move(b1);
      c->d = std::move(d);
      c->a2 = std::move(a2);
      c->b2 = std::move(b2);
    }
    return y;
  }

  // Returns dx; accumulates the block's time-embedding gradient into dtemb.
  Image backward(const ParamStore& store, Grad& g, const Cache& c, const Eigen::VectorXd& temb,
                 const Image& dy, Eigen::VectorXd& dtemb) const {
    Image db2 = conv2.backward(store, g, c.b2, dy);
    for (size_t i = 0; i < db2.v.size(); ++i) db2.v[i] *= nn::silu_grad(c.a2.v[i]);
    Image dd = gn2.backward(store, g, c.gn2c, db2);

    const size_t plane = static_cast<size_t>(dd.h) * dd.w;
    Eigen::VectorXd dtb(dd.c);
    for (int ch = 0; ch < dd.c; ++ch) {
      double s = 0.0;
      for (size_t i = 0; i < plane; ++i) s += dd.v[static_cast<size_t>(ch) * plane + i];
      dtb[ch] = s;
    }
    dtemb += tproj.backward(store, g, temb, dtb);

    Image db1 = conv1.backward(store, g, c.b1, dd);
    for (size_t i = 0; i < db1.v.size(); ++i) db1.v[i] *= nn::silu_grad(c.a1.v[i]);
    Image dx = gn1.backward(store, g, c.gn1c, db1);
    for (size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dy.v[i];  // residual path
    return dx;
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// UNet
// ---------------------------------------------------------------------------

struct UNetDenoiser::Impl {
  DenoiserConfig cfg;
  ParamStore store;
  int64_t trained_steps = 0;

  Linear tlin1, tlin2;
  Conv2d stem;
  std::vector<ResBlock> enc;   // depth_levels
  std::vector<Conv2d> down;    // depth_levels - 1, stride 2
  ResBlock mid;
  std::vector<Conv2d> up;      // depth_levels - 1, after nearest x2
  std::vector<ResBlock> dec;   // depth_levels - 1 (level L-1 handled by mid)
  GroupNorm head_gn;
  Conv2d head;

  struct Workspace {
    Eigen::VectorXd temb_raw, th1, th1s, temb;
    Image x_in;
    std::vector<ResBlock::Cache> enc_c;
    std::vector<Image> down_in;   // inputs to down convs
    ResBlock::Cache mid_c;
    std::vector<Image> up_in;     // upsampled inputs to up convs
    std::vector<Image> skip_sum;  // not needed; kept for clarity of shapes
    std::vector<ResBlock::Cache> dec_c;
    GroupNorm::Cache head_gnc;
    Image head_a;  // head gn output (silu input)
    Image head_b;  // head conv input
  };

  explicit Impl(const DenoiserConfig& c, uint64_t seed) : cfg(c) {
    Rng rng(seed);
    const int L = cfg.depth_levels;
    auto width = [&](int i) { return cfg.base_width << i; };

    tlin1.in = cfg.time_dim;
    tlin1.out = cfg.time_dim;
    tlin1.init(store, "time.lin1", rng);
    tlin2.in = cfg.time_dim;
    tlin2.out = cfg.time_dim;
    tlin2.init(store, "time.lin2", rng);

    stem.ci = cfg.channels;
    stem.co = width(0);
    stem.init(store, "stem", rng);

    enc.resize(L);
    for (int i = 0; i < L; ++i) {
      enc[i].init(store, "enc" + std::to_string(i), width(i), cfg.time_dim, cfg.norm_groups, rng);
    }
    down.resize(L - 1);
    for (int i = 0; i + 1 < L; ++i) {
      down[i].ci = width(i);
      down[i].co = width(i + 1);
      down[i].stride = 2;
      down[i].init(store, "down" + std::to_string(i), rng);
    }
    mid.init(store, "mid", width(L - 1), cfg.time_dim, cfg.norm_groups, rng);
    up.resize(L - 1);
    dec.resize(L - 1);
    for (int i = 0; i + 1 < L; ++i) {
      up[i].ci = width(i + 1);
      up[i].co = width(i);
      up[i].init(store, "up" + std::to_string(i), rng);
      dec[i].init(store, "dec" + std::to_string(i), width(i), cfg.time_dim, cfg.norm_groups, rng);
    }
    head_gn.ch = width(0);
    head_gn.groups = cfg.norm_groups;
    head_gn.init(store, "head.gn");
    head.ci = width(0);
    head.co = cfg.channels;
    head.init(store, "head.conv", rng, /*zero_init=*/true);
  }

  Image forward(const Image& x, int t, Workspace* ws) const {
    const int L = cfg.depth_levels;
    if (x.c != cfg.channels) {
      throw std::invalid_argument("denoiser: channel mismatch, got " + x.shape_str());
    }
    const int div = 1 << (L - 1);
    if (x.h % div != 0 || x.w % div != 0) {
      throw std::invalid_argument("denoiser: spatial dims must divide 2^(levels-1)");
    }

    Eigen::VectorXd temb_raw =
        Eigen::Map<const Eigen::VectorXd>(sinusoidal_embedding(t, cfg.time_dim).data(),
                                          cfg.time_dim);
    Eigen::VectorXd th1 = tlin1.forward(store, temb_raw);
    Eigen::VectorXd th1s = th1.unaryExpr([](double v) { return nn::silu(v); });
    Eigen::VectorXd temb = tlin2.forward(store, th1s);

    Image h = stem.forward(store, x);
    std::vector<Image> skips;
    skips.reserve(L - 1);
    if (ws) {
      ws->temb_raw = temb_raw;
      ws->th1 = th1;
      ws->th1s = th1s;
      ws->temb = temb;
      ws->x_in = x;
      ws->enc_c.resize(L);
      ws->down_in.resize(L - 1);
      ws->up_in.resize(L - 1);
      ws->dec_c.resize(L - 1);
    }
    for (int i = 0; i < L; ++i) {
      h = enc[i].forward(store, h, temb, ws ? &ws->enc_c[i] : nullptr);
      if (i + 1 < L) {
        skips.push_back(h);
        if (ws) ws->down_in[i] = h;
        h = down[i].forward(store, h);
      }
    }
    h = mid.forward(store, h, temb, ws ? &ws->mid_c : nullptr);
    for (int i = L - 2; i >= 0; --i) {
      Image u = nearest_up2(h);
      if (ws) ws->up_in[i] = u;
      h = up[i].forward(store, u);
      for (size_t j = 0; j < h.v.size(); ++j) h.v[j] += skips[i].v[j];
      h = dec[i].forward(store, h, temb, ws ? &ws->dec_c[i] : nullptr);
    }
    Image a = head_gn.forward(store, h, ws ? &ws->head_gnc : nullptr);
    Image b = silu_image(a);
    Image y = head.forward(store, b);
    if (ws) {
      ws->head_a = std::move(a);
      ws->head_b = std::move(b);
    }
    return y;
  }

  // dpred -> parameter gradients (accumulated into g).
  void backward(const Workspace& ws, const Image& dpred, Grad& g) const {
    const int L = cfg.depth_levels;
    Eigen::VectorXd dtemb = Eigen::VectorXd::Zero(cfg.time_dim);

    Image db = head.backward(store, g, ws.head_b, dpred);
    for (size_t i = 0; i < db.v.size(); ++i) db.v[i] *= nn::silu_grad(ws.head_a.v[i]);
    Image dh = head_gn.backward(store, g, ws.head_gnc, db);

    std::vector<Image> dskips(L - 1);
    for (int i = 0; i <= L - 2; ++i) {
      dh = dec[i].backward(store, g, ws.dec_c[i], ws.temb, dh, dtemb);
      dskips[i] = dh;  // skip addition fans gradient out unchanged
      Image du = up[i].backward(store, g, ws.up_in[i], dh);
      dh = nearest_up2_backward(du);
    }
    dh = mid.backward(store, g, ws.mid_c, ws.temb, dh, dtemb);
    for (int i = L - 1; i >= 0; --i) {
      if (i + 1 < L) {
        Image dd = down[i].backward(store, g, ws.down_in[i], dh);
        for (size_t j = 0; j < dd.v.size(); ++j) dd.v[j] += dskips[i].v[j];
        dh = std::move(dd);
      }
      dh = enc[i].backward(store, g, ws.enc_c[i], ws.temb, dh, dtemb);
    }
    stem.backward(store, g, ws.x_in, dh);

    Eigen::VectorXd dth1s = tlin2.backward(store, g, ws.th1s, dtemb);
    Eigen::VectorXd dth1(cfg.time_dim);
    for (int i = 0; i < cfg.time_dim; ++i) dth1[i] = dth1s[i] * nn::silu_grad(ws.th1[i]);
    tlin1.backward(store, g, ws.temb_raw, dth1);
  }
};

UNetDenoiser::UNetDenoiser(const DenoiserConfig& config, uint64_t init_seed)
    : impl_(std::make_unique<Impl>(config, init_seed)) {}
UNetDenoiser::~UNetDenoiser() = default;
UNetDenoiser::UNetDenoiser(UNetDenoiser&&) noexcept = default;
UNetDenoiser& UNetDenoiser::operator=(UNetDenoiser&&) noexcept = default;

Image UNetDenoiser::predict(const Image& x_t, int t) const {
  return impl_->forward(x_t, t, nullptr);
}

int UNetDenoiser::channels() const { return impl_->cfg.channels; }
const DenoiserConfig& UNetDenoiser::config() const { return impl_->cfg; }
size_t UNetDenoiser::param_count() const { return impl_->store.size(); }
std::vector<double>& UNetDenoiser::params() { return impl_->store.w; }
const std::vector<double>& UNetDenoiser::params() const { return impl_->store.w; }
int64_t UNetDenoiser::trained_steps() const { return impl_->trained_steps; }
void UNetDenoiser::set_trained_steps(int64_t n) { impl_->trained_steps = n; }

double UNetDenoiser::loss_and_grad(const std::vector<Image>& x0, const std::vector<int>& ts,
                                   const std::vector<Image>& eps, Grad& grad,
                                   int threads) const {
  const size_t B = x0.size();
  if (B == 0) throw std::invalid_argument("loss_and_grad: empty batch");
  if (ts.size() != B || eps.size() != B) {
    throw std::invalid_argument("loss_and_grad: draw count mismatch");
  }
  grad.assign(impl_->store.size(), 0.0);
  std::vector<Grad> per_example(B);
  std::vector<double> losses(B, 0.0);
  parallel_for(B, threads, [&](size_t j) {
    per_example[j].assign(impl_->store.size(), 0.0);
    Impl::Workspace ws;
    // x_t is reconstructed from (x0, t, eps); x0 here is already the noised
    // input when the caller pre-mixes, so mix happens at the call site.
    Image pred = impl_->forward(x0[j], ts[j], &ws);
    require_same_shape(pred, eps[j], "loss_and_grad");
    const double npix = static_cast<double>(pred.v.size());
    Image dpred = Image::zeros_like(pred);
    double l = 0.0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
      const double d = pred.v[i] - eps[j].v[i];
      l += d * d;
      dpred.v[i] = 2.0 * d / (npix * static_cast<double>(B));
    }
    losses[j] = l / npix;
    impl_->backward(ws, dpred, per_example[j]);
  });
  double loss = 0.0;
  for (size_t j = 0; j < B; ++j) {
    loss += losses[j];
    for (size_t i = 0; i < grad.size(); ++i) grad[i] += per_example[j][i];
  }
  return loss / static_cast<double>(B);
}

double UNetDenoiser::loss_only(const std::vector<Image>& x0, const std::vector<int>& ts,
                               const std::vector<Image>& eps) const {
  double loss = 0.0;
  for (size_t j = 0; j < x0.size(); ++j) {
    Image pred = impl_->forward(x0[j], ts[j], nullptr);
    loss += mse(pred, eps[j]);
  }
  return loss / static_cast<double>(x0.size());
}

// ---------------------------------------------------------------------------
// training objective
// ---------------------------------------------------------------------------

NoiseDraws sample_noise_draws(const std::vector<Image>& x0, const NoiseSchedule& schedule,
                              Rng& rng) {
  NoiseDraws d;
  d.ts.reserve(x0.size());
  d.eps.reserve(x0.size());
  for (const Image& img : x0) {
    d.ts.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(schedule.T))));
    d.eps.push_back(gaussian_like(img, rng));
  }
  return d;
}

double training_loss_fixed(const Denoiser& net, const std::vector<Image>& x0,
                           const NoiseSchedule& schedule, const NoiseDraws& draws) {
  if (x0.empty()) throw std::invalid_argument("training_loss: empty batch");
  double loss = 0.0;
  for (size_t j = 0; j < x0.size(); ++j) {
    ForwardSample fs = q_sample(x0[j], draws.ts[j], draws.eps[j], schedule);
    Image pred = net.predict(fs.x_t, fs.t);
    loss += mse(pred, draws.eps[j]);
  }
  loss /= static_cast<double>(x0.size());
  if (!std::isfinite(loss)) {
    throw std::runtime_error("training_loss: non-finite loss (training exploded)");
  }
  return loss;
}

double training_loss(const Denoiser& net, const std::vector<Image>& x0,
                     const NoiseSchedule& schedule, Rng& rng) {
  if (x0.empty()) throw std::invalid_argument("training_loss: empty batch");
  NoiseDraws draws = sample_noise_draws(x0, schedule, rng);
  return training_loss_fixed(net, x0, schedule, draws);
}

TrainState train(UNetDenoiser& net, const std::vector<Image>& corpus,
                 const NoiseSchedule& schedule, const DenoiserConfig& config, Rng& rng,
                 const std::filesystem::path& checkpoint_path) {
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  for (const Image& img : corpus) {
    if (!img.same_shape(corpus.front())) {
      throw std::invalid_argument("train: corpus images have mismatched sizes");
    }
  }
  TrainState state;
  state.rng_seed = 0;
  state.checkpoint_path = checkpoint_path;
  if (config.training_steps == 0) return state;

  nn::Adam opt(config.learning_rate);
  Grad grad;
  const int B = config.batch_size;
  double ema = -1.0;
  state.ema_trace.reserve(config.training_steps);

  std::vector<Image> batch_xt(B);
  std::vector<int> batch_t(B);
  std::vector<Image> batch_eps(B);
  for (int step = 0; step < config.training_steps; ++step) {
    for (int j = 0; j < B; ++j) {
      const Image& x0 = corpus[rng.below(corpus.size())];
      const int t = static_cast<int>(rng.below(static_cast<uint64_t>(schedule.T)));
      Image eps = gaussian_like(x0, rng);
      ForwardSample fs = q_sample(x0, t, eps, schedule);
      batch_xt[j] = std::move(fs.x_t);
      batch_t[j] = t;
      batch_eps[j] = std::move(eps);
    }
    const double loss = net.loss_and_grad(batch_xt, batch_t, batch_eps, grad, config.threads);
    if (!std::isfinite(loss)) {
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
    }
    opt.step(net.params(), grad);
    ema = ema < 0.0 ? loss : 0.99 * ema + 0.01 * loss;
    state.ema_trace.push_back(ema);
    state.step = step + 1;
    state.loss_ema = ema;
    net.set_trained_steps(net.trained_steps() + 1);
    if (!checkpoint_path.empty() && config.checkpoint_every > 0 &&
        (step + 1) % config.checkpoint_every == 0) {
      save_denoiser(checkpoint_path, net, schedule, ema);
    }
  }
  if (!checkpoint_path.empty()) save_denoiser(checkpoint_path, net, schedule, ema);
  return state;
}

double gradient_check(UNetDenoiser& net, const std::vector<Image>& x0,
                      const NoiseSchedule& schedule, Rng& rng) {
  if (net.param_count() > 10000) {
    throw std::invalid_argument("gradient_check: network too large (> 1e4 parameters)");
  }
  NoiseDraws draws = sample_noise_draws(x0, schedule, rng);
  std::vector<Image> xt(x0.size());
  for (size_t j = 0; j < x0.size(); ++j) {
    xt[j] = q_sample(x0[j], draws.ts[j], draws.eps[j], schedule).x_t;
  }
  Grad analytic;
  net.loss_and_grad(xt, draws.ts, draws.eps, analytic, /*threads=*/1);

  double worst = 0.0;
  std::vector<double>& w = net.params();
  for (size_t i = 0; i < w.size(); ++i) {
    const double keep = w[i];
    const double h = 1e-3 * std::max(1.0, std::abs(keep));
    w[i] = keep + h;
    const double lp = net.loss_only(xt, draws.ts, draws.eps);
    w[i] = keep - h;
    const double lm = net.loss_only(xt, draws.ts, draws.eps);
    w[i] = keep;
    const double fd = (lp - lm) / (2.0 * h);
    const double err = std::abs(analytic[i] - fd) /
                       std::max({1.0, std::abs(analytic[i]), std::abs(fd)});
    worst = std::max(worst, err);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

namespace {
nlohmann::json config_to_json(const DenoiserConfig& c) {
  return {{"image_size", c.image_size},     {"channels", c.channels},
          {"base_width", c.base_width},     {"depth_levels", c.depth_levels},
          {"time_dim", c.time_dim},         {"norm_groups", c.norm_groups},
          {"training_steps", c.training_steps}, {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},     {"checkpoint_every", c.checkpoint_every},
          {"threads", c.threads}};
}

DenoiserConfig config_from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.image_size = j.at("image_size");
  c.channels = j.at("channels");
  c.base_width = j.at("base_width");
  c.depth_levels = j.at("depth_levels");
  c.time_dim = j.at("time_dim");
  c.norm_groups = j.at("norm_groups");
  c.training_steps = j.at("training_steps");
  c.learning_rate = j.at("learning_rate");
  c.batch_size = j.at("batch_size");
  c.checkpoint_every = j.at("checkpoint_every");
  c.threads = j.at("threads");
  return c;
}
}  // namespace

void save_denoiser(const std::filesystem::path& path, const UNetDenoiser& net,
                   const NoiseSchedule& schedule, double loss_ema) {
  nn::Checkpoint ckpt;
  ckpt.meta = {{"kind", "denoiser"},
               {"version", 1},
               {"config", config_to_json(net.config())},
               {"schedule_fingerprint", schedule.fingerprint()},
               {"trained_steps", net.trained_steps()},
               {"loss_ema", loss_ema}};
  ckpt.arrays.emplace_back("params", net.params());
  save_checkpoint(path, ckpt);
}

DenoiserConfig load_denoiser_config(const std::filesystem::path& path) {
  nn::Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.meta.at("kind") != "denoiser") {
    throw std::runtime_error("load_denoiser: not a denoiser checkpoint");
  }
  return config_from_json(ckpt.meta.at("config"));
}

std::unique_ptr<UNetDenoiser> load_denoiser(const std::filesystem::path& path,
                                            const NoiseSchedule& schedule) {
  nn::Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.meta.at("kind") != "denoiser") {
    throw std::runtime_error("load_denoiser: not a denoiser checkpoint");
  }
  const uint32_t fp = ckpt.meta.at("schedule_fingerprint").get<uint32_t>();
  if (fp != schedule.fingerprint()) {
    throw std::runtime_error(
        "load_denoiser: schedule fingerprint mismatch (checkpoint was trained on a different "
        "variance schedule)");
  }
  DenoiserConfig cfg = config_from_json(ckpt.meta.at("config"));
  auto net = std::make_unique<UNetDenoiser>(cfg, /*init_seed=*/0);
  const auto& p = ckpt.array("params");
  if (p.size() != net->param_count()) {
    throw std::runtime_error("load_denoiser: parameter count mismatch");
  }
  net->params() = p;
  net->set_trained_steps(ckpt.meta.at("trained_steps").get<int64_t>());
  return net;
}

}  // namespace agddad
