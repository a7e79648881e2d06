#include "affdesk/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace aff {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kK = 5;  // heatmap channels / contact means
constexpr int kC1 = 8, kC2 = 16, kC3 = 32;
constexpr int kHidden = 64;
constexpr int kTrajOut = 10;

struct Tensor3 {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor3() = default;
  Tensor3(int c_, int h_, int w_)
      : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, 0.0) {}
  double& at(int ci, int yi, int xi) {
    return v[(static_cast<size_t>(ci) * h + yi) * w + xi];
  }
  double at(int ci, int yi, int xi) const {
    return v[(static_cast<size_t>(ci) * h + yi) * w + xi];
  }
};

}  // namespace

void ModelConfig::validate() const {
  if (crop_size < 8 || crop_size % 8 != 0)
    throw ConfigError("crop_size must be a positive multiple of 8");
  if (fixed_std_frac <= 0.0)
    throw ConfigError("fixed_std_frac must be positive");
}

std::vector<LayerInfo> layer_layout(const ModelConfig& cfg) {
  cfg.validate();
  const int latent = cfg.crop_size / 8;
  const int flat = kC3 * latent * latent;

  std::vector<LayerInfo> out;
  size_t offset = 0;
  auto add = [&](const std::string& name, std::vector<int> shape) {
    size_t sz = 1;
    for (int d : shape) sz *= static_cast<size_t>(d);
    out.push_back({name, std::move(shape), offset, sz});
    offset += sz;
  };

  add("conv1.w", {kC1, 1, 3, 3});
  add("conv1.b", {kC1});
  add("conv2.w", {kC2, kC1, 3, 3});
  add("conv2.b", {kC2});
  add("conv3.w", {kC3, kC2, 3, 3});
  add("conv3.b", {kC3});
  if (cfg.attention) {
    add("att.wq", {kC3, kC3});
    add("att.bq", {kC3});
    add("att.wk", {kC3, kC3});
    add("att.bk", {kC3});
    add("att.wv", {kC3, kC3});
    add("att.bv", {kC3});
    add("att.wo", {kC3, kC3});
    add("att.bo", {kC3});
  }
  add("deconv1.w", {kC3, kC2, 2, 2});
  add("deconv1.b", {kC2});
  add("deconv2.w", {kC2, kC1, 2, 2});
  add("deconv2.b", {kC1});
  add("deconv3.w", {kC1, kK, 2, 2});
  add("deconv3.b", {kK});
  add("fc1.w", {kHidden, flat});
  add("fc1.b", {kHidden});
  add("fc2.w", {kHidden, kHidden});
  add("fc2.b", {kHidden});
  add("fc3.w", {kTrajOut, kHidden});
  add("fc3.b", {kTrajOut});
  return out;
}

namespace {

struct Offsets {
  size_t conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b;
  size_t att_wq, att_bq, att_wk, att_bk, att_wv, att_bv, att_wo, att_bo;
  size_t deconv1_w, deconv1_b, deconv2_w, deconv2_b, deconv3_w, deconv3_b;
  size_t fc1_w, fc1_b, fc2_w, fc2_b, fc3_w, fc3_b;
  size_t total;
  bool attention;
};

Offsets resolve(const ModelConfig& cfg) {
  Offsets o{};
  o.attention = cfg.attention;
  const auto layout = layer_layout(cfg);
  for (const auto& l : layout) {
    if (l.name == "conv1.w") o.conv1_w = l.offset;
    else if (l.name == "conv1.b") o.conv1_b = l.offset;
    else if (l.name == "conv2.w") o.conv2_w = l.offset;
    else if (l.name == "conv2.b") o.conv2_b = l.offset;
    else if (l.name == "conv3.w") o.conv3_w = l.offset;
    else if (l.name == "conv3.b") o.conv3_b = l.offset;
    else if (l.name == "att.wq") o.att_wq = l.offset;
    else if (l.name == "att.bq") o.att_bq = l.offset;
    else if (l.name == "att.wk") o.att_wk = l.offset;
    else if (l.name == "att.bk") o.att_bk = l.offset;
    else if (l.name == "att.wv") o.att_wv = l.offset;
    else if (l.name == "att.bv") o.att_bv = l.offset;
    else if (l.name == "att.wo") o.att_wo = l.offset;
    else if (l.name == "att.bo") o.att_bo = l.offset;
    else if (l.name == "deconv1.w") o.deconv1_w = l.offset;
    else if (l.name == "deconv1.b") o.deconv1_b = l.offset;
    else if (l.name == "deconv2.w") o.deconv2_w = l.offset;
    else if (l.name == "deconv2.b") o.deconv2_b = l.offset;
    else if (l.name == "deconv3.w") o.deconv3_w = l.offset;
    else if (l.name == "deconv3.b") o.deconv3_b = l.offset;
    else if (l.name == "fc1.w") o.fc1_w = l.offset;
    else if (l.name == "fc1.b") o.fc1_b = l.offset;
    else if (l.name == "fc2.w") o.fc2_w = l.offset;
    else if (l.name == "fc2.b") o.fc2_b = l.offset;
    else if (l.name == "fc3.w") o.fc3_w = l.offset;
    else if (l.name == "fc3.b") o.fc3_b = l.offset;
  }
  const auto& last = layout.back();
  o.total = last.offset + last.size;
  return o;
}

// stride-2 pad-1 3x3 convolution
void conv_forward(const Tensor3& in, const double* w, const double* b,
                  Tensor3& out) {
  for (int oc = 0; oc < out.c; ++oc)
    for (int oy = 0; oy < out.h; ++oy)
      for (int ox = 0; ox < out.w; ++ox) {
        double s = b[oc];
        for (int ic = 0; ic < in.c; ++ic)
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = 2 * oy + ky - 1;
            if (iy < 0 || iy >= in.h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = 2 * ox + kx - 1;
              if (ix < 0 || ix >= in.w) continue;
              s += in.at(ic, iy, ix) * w[((oc * in.c + ic) * 3 + ky) * 3 + kx];
            }
          }
        out.at(oc, oy, ox) = s;
      }
}

void conv_backward(const Tensor3& in, const double* w, const Tensor3& dout,
                   Tensor3& din, double* dw, double* db) {
  for (int oc = 0; oc < dout.c; ++oc)
    for (int oy = 0; oy < dout.h; ++oy)
      for (int ox = 0; ox < dout.w; ++ox) {
        const double g = dout.at(oc, oy, ox);
        if (g == 0.0) continue;
        db[oc] += g;
        for (int ic = 0; ic < in.c; ++ic)
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = 2 * oy + ky - 1;
            if (iy < 0 || iy >= in.h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = 2 * ox + kx - 1;
              if (ix < 0 || ix >= in.w) continue;
              const size_t wi = ((oc * in.c + ic) * 3 + ky) * 3 + kx;
              dw[wi] += g * in.at(ic, iy, ix);
              din.at(ic, iy, ix) += g * w[wi];
            }
          }
      }
}

// 2x2 stride-2 transposed convolution: exact x2 upsampling
void deconv_forward(const Tensor3& in, const double* w, const double* b,
                    Tensor3& out) {
  for (int oc = 0; oc < out.c; ++oc)
    for (size_t i = 0; i < out.v.size() / out.c; ++i)
      out.v[oc * (out.v.size() / out.c) + i] = b[oc];
  for (int ic = 0; ic < in.c; ++ic)
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        const double v = in.at(ic, y, x);
        for (int oc = 0; oc < out.c; ++oc)
          for (int a = 0; a < 2; ++a)
            for (int bb = 0; bb < 2; ++bb)
              out.at(oc, 2 * y + a, 2 * x + bb) +=
                  v * w[((ic * out.c + oc) * 2 + a) * 2 + bb];
      }
}

void deconv_backward(const Tensor3& in, const double* w, const Tensor3& dout,
                     Tensor3& din, double* dw, double* db) {
  for (int oc = 0; oc < dout.c; ++oc)
    for (int y = 0; y < dout.h; ++y)
      for (int x = 0; x < dout.w; ++x) db[oc] += dout.at(oc, y, x);
  for (int ic = 0; ic < in.c; ++ic)
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        double acc = 0.0;
        for (int oc = 0; oc < dout.c; ++oc)
          for (int a = 0; a < 2; ++a)
            for (int bb = 0; bb < 2; ++bb) {
              const size_t wi = ((ic * dout.c + oc) * 2 + a) * 2 + bb;
              const double g = dout.at(oc, 2 * y + a, 2 * x + bb);
              acc += g * w[wi];
              dw[wi] += g * in.at(ic, y, x);
            }
        din.at(ic, y, x) += acc;
      }
}

void relu_forward(const Tensor3& in, Tensor3& out) {
  out = in;
  for (double& x : out.v) x = std::max(0.0, x);
}

void relu_backward(const Tensor3& pre, Tensor3& grad) {
  for (size_t i = 0; i < grad.v.size(); ++i)
    if (pre.v[i] <= 0.0) grad.v[i] = 0.0;
}

void dense_forward(const double* w, const double* b, const double* in,
                   int n_in, int n_out, double* out) {
  for (int o = 0; o < n_out; ++o) {
    double s = b[o];
    for (int i = 0; i < n_in; ++i) s += w[o * n_in + i] * in[i];
    out[o] = s;
  }
}

void dense_backward(const double* w, const double* in, const double* dout,
                    int n_in, int n_out, double* din, double* dw, double* db) {
  for (int o = 0; o < n_out; ++o) {
    const double g = dout[o];
    db[o] += g;
    for (int i = 0; i < n_in; ++i) {
      dw[o * n_in + i] += g * in[i];
      if (din) din[i] += g * w[o * n_in + i];
    }
  }
}

struct AttentionCache {
  std::vector<double> q, k, vv, att, o;  // q/k/v/o: T x C; att: T x T
};

// single-head self-attention over latent tokens with a residual connection
void attention_forward(const Offsets& off, const std::vector<double>& p,
                       const Tensor3& z, Tensor3& out, AttentionCache& cache) {
  const int C = z.c;
  const int T = z.h * z.w;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(C));
  cache.q.assign(static_cast<size_t>(T) * C, 0.0);
  cache.k = cache.q;
  cache.vv = cache.q;
  cache.o = cache.q;
  cache.att.assign(static_cast<size_t>(T) * T, 0.0);

  auto token = [&](int t, int c) { return z.v[c * static_cast<size_t>(T) + t]; };

  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c) {
      double sq = p[off.att_bq + c], sk = p[off.att_bk + c],
             sv = p[off.att_bv + c];
      for (int i = 0; i < C; ++i) {
        const double zi = token(t, i);
        sq += p[off.att_wq + c * C + i] * zi;
        sk += p[off.att_wk + c * C + i] * zi;
        sv += p[off.att_wv + c * C + i] * zi;
      }
      cache.q[static_cast<size_t>(t) * C + c] = sq;
      cache.k[static_cast<size_t>(t) * C + c] = sk;
      cache.vv[static_cast<size_t>(t) * C + c] = sv;
    }

  for (int t = 0; t < T; ++t) {
    double maxs = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < T; ++s) {
      double d = 0.0;
      for (int c = 0; c < C; ++c)
        d += cache.q[static_cast<size_t>(t) * C + c] *
             cache.k[static_cast<size_t>(s) * C + c];
      cache.att[static_cast<size_t>(t) * T + s] = d * inv_sqrt;
      maxs = std::max(maxs, cache.att[static_cast<size_t>(t) * T + s]);
    }
    double z_sum = 0.0;
    for (int s = 0; s < T; ++s) {
      double& a = cache.att[static_cast<size_t>(t) * T + s];
      a = std::exp(a - maxs);
      z_sum += a;
    }
    for (int s = 0; s < T; ++s)
      cache.att[static_cast<size_t>(t) * T + s] /= z_sum;
    for (int c = 0; c < C; ++c) {
      double s_o = 0.0;
      for (int s = 0; s < T; ++s)
        s_o += cache.att[static_cast<size_t>(t) * T + s] *
               cache.vv[static_cast<size_t>(s) * C + c];
      cache.o[static_cast<size_t>(t) * C + c] = s_o;
    }
  }

  out = z;
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c) {
      double s = p[off.att_bo + c];
      for (int i = 0; i < C; ++i)
        s += p[off.att_wo + c * C + i] * cache.o[static_cast<size_t>(t) * C + i];
      out.v[c * static_cast<size_t>(T) + t] += s;
    }
}

void attention_backward(const Offsets& off, const std::vector<double>& p,
                        const Tensor3& z, const AttentionCache& cache,
                        const Tensor3& dout, Tensor3& dz,
                        std::vector<double>& dp) {
  const int C = z.c;
  const int T = z.h * z.w;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(C));

  dz = dout;  // residual path

  std::vector<double> dO(static_cast<size_t>(T) * C, 0.0);
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c) {
      const double g = dout.v[c * static_cast<size_t>(T) + t];
      dp[off.att_bo + c] += g;
      for (int i = 0; i < C; ++i) {
        dp[off.att_wo + c * C + i] +=
            g * cache.o[static_cast<size_t>(t) * C + i];
        dO[static_cast<size_t>(t) * C + i] += g * p[off.att_wo + c * C + i];
      }
    }

  std::vector<double> dQ(static_cast<size_t>(T) * C, 0.0), dKv = dQ, dV = dQ;
  std::vector<double> datt(static_cast<size_t>(T) * T, 0.0);
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < T; ++s) {
      double d = 0.0;
      for (int c = 0; c < C; ++c)
        d += dO[static_cast<size_t>(t) * C + c] *
             cache.vv[static_cast<size_t>(s) * C + c];
      datt[static_cast<size_t>(t) * T + s] = d;
      for (int c = 0; c < C; ++c)
        dV[static_cast<size_t>(s) * C + c] +=
            cache.att[static_cast<size_t>(t) * T + s] *
            dO[static_cast<size_t>(t) * C + c];
    }
    // softmax row backward
    double dot_av = 0.0;
    for (int s = 0; s < T; ++s)
      dot_av += cache.att[static_cast<size_t>(t) * T + s] *
                datt[static_cast<size_t>(t) * T + s];
    for (int s = 0; s < T; ++s) {
      const double ds = cache.att[static_cast<size_t>(t) * T + s] *
                        (datt[static_cast<size_t>(t) * T + s] - dot_av) *
                        inv_sqrt;
      for (int c = 0; c < C; ++c) {
        dQ[static_cast<size_t>(t) * C + c] +=
            ds * cache.k[static_cast<size_t>(s) * C + c];
        dKv[static_cast<size_t>(s) * C + c] +=
            ds * cache.q[static_cast<size_t>(t) * C + c];
      }
    }
  }

  auto token = [&](int t, int c) { return z.v[c * static_cast<size_t>(T) + t]; };
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c) {
      const double gq = dQ[static_cast<size_t>(t) * C + c];
      const double gk = dKv[static_cast<size_t>(t) * C + c];
      const double gv = dV[static_cast<size_t>(t) * C + c];
      dp[off.att_bq + c] += gq;
      dp[off.att_bk + c] += gk;
      dp[off.att_bv + c] += gv;
      for (int i = 0; i < C; ++i) {
        const double zi = token(t, i);
        dp[off.att_wq + c * C + i] += gq * zi;
        dp[off.att_wk + c * C + i] += gk * zi;
        dp[off.att_wv + c * C + i] += gv * zi;
        dz.v[i * static_cast<size_t>(T) + t] +=
            gq * p[off.att_wq + c * C + i] + gk * p[off.att_wk + c * C + i] +
            gv * p[off.att_wv + c * C + i];
      }
    }
}

struct ForwardCache {
  Tensor3 x, a1, z1, a2, z2, a3, z3, zf;
  AttentionCache att;
  Tensor3 d1, e1, d2, e2, logits;
  std::vector<double> probs;  // K x S x S
  std::vector<Point2> means;
  std::vector<double> flat, h1, r1, h2, r2, traj_out;
};

void run_forward(const ModelParams& params, const Image& crop,
                 ForwardCache& fc) {
  const ModelConfig& cfg = params.config;
  const int S = cfg.crop_size;
  if (crop.width != S || crop.height != S)
    throw ShapeMismatch("forward: crop does not match configured size");
  const Offsets off = resolve(cfg);
  if (params.values.size() != off.total)
    throw ShapeMismatch("forward: parameter vector has wrong length");
  const double* p = params.values.data();
  const int L = S / 8;

  fc.x = Tensor3(1, S, S);
  fc.x.v.assign(crop.data.begin(), crop.data.end());

  fc.a1 = Tensor3(kC1, S / 2, S / 2);
  conv_forward(fc.x, p + off.conv1_w, p + off.conv1_b, fc.a1);
  relu_forward(fc.a1, fc.z1);
  fc.a2 = Tensor3(kC2, S / 4, S / 4);
  conv_forward(fc.z1, p + off.conv2_w, p + off.conv2_b, fc.a2);
  relu_forward(fc.a2, fc.z2);
  fc.a3 = Tensor3(kC3, L, L);
  conv_forward(fc.z2, p + off.conv3_w, p + off.conv3_b, fc.a3);
  relu_forward(fc.a3, fc.z3);

  if (cfg.attention)
    attention_forward(off, params.values, fc.z3, fc.zf, fc.att);
  else
    fc.zf = fc.z3;

  fc.d1 = Tensor3(kC2, S / 4, S / 4);
  deconv_forward(fc.zf, p + off.deconv1_w, p + off.deconv1_b, fc.d1);
  relu_forward(fc.d1, fc.e1);
  fc.d2 = Tensor3(kC1, S / 2, S / 2);
  deconv_forward(fc.e1, p + off.deconv2_w, p + off.deconv2_b, fc.d2);
  relu_forward(fc.d2, fc.e2);
  fc.logits = Tensor3(kK, S, S);
  deconv_forward(fc.e2, p + off.deconv3_w, p + off.deconv3_b, fc.logits);

  fc.probs.assign(static_cast<size_t>(kK) * S * S, 0.0);
  fc.means.assign(kK, Point2{});
  for (int c = 0; c < kK; ++c) {
    double maxv = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < S * S; ++i)
      maxv = std::max(maxv, fc.logits.v[c * static_cast<size_t>(S) * S + i]);
    double z_sum = 0.0;
    for (int i = 0; i < S * S; ++i) {
      const double e =
          std::exp(fc.logits.v[c * static_cast<size_t>(S) * S + i] - maxv);
      fc.probs[c * static_cast<size_t>(S) * S + i] = e;
      z_sum += e;
    }
    Point2 mean{0, 0};
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        double& pr = fc.probs[(c * static_cast<size_t>(S) + y) * S + x];
        pr /= z_sum;
        mean.x += pr * x;
        mean.y += pr * y;
      }
    fc.means[c] = mean;
  }

  const int flat_n = kC3 * L * L;
  fc.flat.assign(fc.zf.v.begin(), fc.zf.v.end());
  fc.h1.assign(kHidden, 0.0);
  dense_forward(p + off.fc1_w, p + off.fc1_b, fc.flat.data(), flat_n, kHidden,
                fc.h1.data());
  fc.r1 = fc.h1;
  for (double& x : fc.r1) x = std::max(0.0, x);
  fc.h2.assign(kHidden, 0.0);
  dense_forward(p + off.fc2_w, p + off.fc2_b, fc.r1.data(), kHidden, kHidden,
                fc.h2.data());
  fc.r2 = fc.h2;
  for (double& x : fc.r2) x = std::max(0.0, x);
  fc.traj_out.assign(kTrajOut, 0.0);
  dense_forward(p + off.fc3_w, p + off.fc3_b, fc.r2.data(), kHidden, kTrajOut,
                fc.traj_out.data());
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  const auto layout = layer_layout(cfg);
  const auto& last = layout.back();
  ModelParams params;
  params.config = cfg;
  params.values.assign(last.offset + last.size, 0.0);
  Rng rng(seed);
  for (const auto& l : layout) {
    if (l.name.ends_with(".b")) continue;  // biases start at zero
    size_t fan_in = 1;
    if (l.shape.size() == 4 && l.name.starts_with("conv"))
      fan_in = static_cast<size_t>(l.shape[1]) * l.shape[2] * l.shape[3];
    else if (l.shape.size() == 4)  // deconv: each output gets C_in taps
      fan_in = static_cast<size_t>(l.shape[0]);
    else if (l.shape.size() == 2)
      fan_in = static_cast<size_t>(l.shape[1]);
    const double lim = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (size_t i = 0; i < l.size; ++i)
      params.values[l.offset + i] = rng.uniform(-lim, lim);
  }
  return params;
}

AffordancePrediction forward(const ModelParams& params, const Image& crop) {
  ForwardCache fc;
  run_forward(params, crop, fc);
  const int S = params.config.crop_size;
  AffordancePrediction pred;
  pred.means = fc.means;
  pred.heatmaps = HeatmapStack(kK, S, S);
  pred.heatmaps.v = fc.probs;
  pred.waypoints.resize(kK);
  for (int i = 0; i < kK; ++i)
    pred.waypoints[i] = {fc.traj_out[2 * i], fc.traj_out[2 * i + 1]};
  return pred;
}

std::vector<int> min_cost_assignment(
    const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  if (n == 0) return {};
  const int m = static_cast<int>(cost[0].size());
  if (m < n) throw ShapeMismatch("assignment needs cols >= rows");

  // potentials-based Hungarian, 1-indexed internals
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> match(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }

  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j)
    if (match[j] > 0) row_to_col[match[j] - 1] = j - 1;
  return row_to_col;
}

namespace {

std::vector<int> contact_matching(const std::vector<Point2>& pred,
                                  const std::vector<Point2>& target) {
  std::vector<std::vector<double>> cost(target.size(),
                                        std::vector<double>(pred.size()));
  for (size_t t = 0; t < target.size(); ++t)
    for (size_t p = 0; p < pred.size(); ++p) {
      const double d = dist(target[t], pred[p]);
      cost[t][p] = d * d;
    }
  return min_cost_assignment(cost);
}

}  // namespace

double loss_contact(const std::vector<Point2>& pred_means,
                    const std::vector<Point2>& target_means) {
  if (pred_means.size() != kK)
    throw ShapeMismatch("loss_contact: need 5 predicted means");
  if (target_means.empty() || target_means.size() > kK)
    throw ShapeMismatch("loss_contact: need 1..5 target means");
  const auto match = contact_matching(pred_means, target_means);
  double total = 0.0;
  for (size_t t = 0; t < target_means.size(); ++t)
    total += dist(target_means[t], pred_means[match[t]]);
  return total / static_cast<double>(target_means.size());
}

double loss_traj(const std::vector<Point2>& pred_waypoints,
                 const std::vector<Point2>& target_waypoints) {
  if (pred_waypoints.size() != 5 || target_waypoints.size() != 5)
    throw ShapeMismatch("loss_traj: both sequences must have 5 waypoints");
  double s = 0.0;
  for (int i = 0; i < 5; ++i) {
    const Point2 r = pred_waypoints[i] - target_waypoints[i];
    s += r.x * r.x + r.y * r.y;
  }
  return std::sqrt(s);
}

BatchGradient backward(const ModelParams& params,
                       const std::vector<TrainingSample>& batch,
                       double lambda_traj) {
  if (batch.empty()) throw EmptyDataset("backward: empty batch");
  const ModelConfig& cfg = params.config;
  const int S = cfg.crop_size;
  const int L = S / 8;
  const int flat_n = kC3 * L * L;
  const Offsets off = resolve(cfg);
  const double* p = params.values.data();

  BatchGradient out;
  out.grad.assign(params.values.size(), 0.0);
  double* g = out.grad.data();
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  ForwardCache fc;
  for (const TrainingSample& sample : batch) {
    run_forward(params, sample.crop, fc);

    // ----- losses -----
    std::vector<Point2> pred_wps(kK);
    for (int i = 0; i < kK; ++i)
      pred_wps[i] = {fc.traj_out[2 * i], fc.traj_out[2 * i + 1]};
    const auto match = contact_matching(fc.means, sample.target_means);
    const size_t n_t = sample.target_means.size();
    double lc = 0.0;
    std::vector<Point2> d_means(kK, Point2{0, 0});
    for (size_t t = 0; t < n_t; ++t) {
      const Point2 diff = fc.means[match[t]] - sample.target_means[t];
      const double d = norm(diff);
      lc += d;
      if (d > 1e-12) {
        d_means[match[t]].x += diff.x / (d * n_t);
        d_means[match[t]].y += diff.y / (d * n_t);
      }
    }
    lc /= static_cast<double>(n_t);
    out.contact_loss += lc * inv_b;

    double lt = 0.0;
    std::vector<double> d_traj(kTrajOut, 0.0);
    {
      std::vector<double> r(kTrajOut);
      for (int i = 0; i < 5; ++i) {
        r[2 * i] = pred_wps[i].x - sample.target_waypoints[i].x;
        r[2 * i + 1] = pred_wps[i].y - sample.target_waypoints[i].y;
        lt += r[2 * i] * r[2 * i] + r[2 * i + 1] * r[2 * i + 1];
      }
      lt = std::sqrt(lt);
      if (lt > 1e-12)
        for (int i = 0; i < kTrajOut; ++i)
          d_traj[i] = lambda_traj * r[i] / lt;
    }
    out.traj_loss += lt * inv_b;

    // ----- heatmap path backward -----
    Tensor3 dlogits(kK, S, S);
    for (int c = 0; c < kK; ++c) {
      const double gx = d_means[c].x * inv_b;
      const double gy = d_means[c].y * inv_b;
      if (gx == 0.0 && gy == 0.0) continue;
      const Point2 mean = fc.means[c];
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          const double pr = fc.probs[(c * static_cast<size_t>(S) + y) * S + x];
          dlogits.at(c, y, x) =
              pr * ((x - mean.x) * gx + (y - mean.y) * gy);
        }
    }

    Tensor3 de2(kC1, S / 2, S / 2);
    deconv_backward(fc.e2, p + off.deconv3_w, dlogits, de2, g + off.deconv3_w,
                    g + off.deconv3_b);
    relu_backward(fc.d2, de2);
    Tensor3 de1(kC2, S / 4, S / 4);
    deconv_backward(fc.e1, p + off.deconv2_w, de2, de1, g + off.deconv2_w,
                    g + off.deconv2_b);
    relu_backward(fc.d1, de1);
    Tensor3 dzf(kC3, L, L);
    deconv_backward(fc.zf, p + off.deconv1_w, de1, dzf, g + off.deconv1_w,
                    g + off.deconv1_b);

    // ----- trajectory head backward -----
    std::vector<double> d_out(kTrajOut);
    for (int i = 0; i < kTrajOut; ++i) d_out[i] = d_traj[i] * inv_b;
    std::vector<double> dr2(kHidden, 0.0);
    dense_backward(p + off.fc3_w, fc.r2.data(), d_out.data(), kHidden,
                   kTrajOut, dr2.data(), g + off.fc3_w, g + off.fc3_b);
    for (int i = 0; i < kHidden; ++i)
      if (fc.h2[i] <= 0.0) dr2[i] = 0.0;
    std::vector<double> dr1(kHidden, 0.0);
    dense_backward(p + off.fc2_w, fc.r1.data(), dr2.data(), kHidden, kHidden,
                   dr1.data(), g + off.fc2_w, g + off.fc2_b);
    for (int i = 0; i < kHidden; ++i)
      if (fc.h1[i] <= 0.0) dr1[i] = 0.0;
    std::vector<double> dflat(flat_n, 0.0);
    dense_backward(p + off.fc1_w, fc.flat.data(), dr1.data(), flat_n, kHidden,
                   dflat.data(), g + off.fc1_w, g + off.fc1_b);
    for (int i = 0; i < flat_n; ++i) dzf.v[i] += dflat[i];

    // ----- encoder backward -----
    Tensor3 dz3;
    if (cfg.attention) {
      attention_backward(off, params.values, fc.z3, fc.att, dzf, dz3,
                         out.grad);
    } else {
      dz3 = dzf;
    }
    relu_backward(fc.a3, dz3);
    Tensor3 dz2(kC2, S / 4, S / 4);
    conv_backward(fc.z2, p + off.conv3_w, dz3, dz2, g + off.conv3_w,
                  g + off.conv3_b);
    relu_backward(fc.a2, dz2);
    Tensor3 dz1(kC1, S / 2, S / 2);
    conv_backward(fc.z1, p + off.conv2_w, dz2, dz1, g + off.conv2_w,
                  g + off.conv2_b);
    relu_backward(fc.a1, dz1);
    Tensor3 dx(1, S, S);
    conv_backward(fc.x, p + off.conv1_w, dz1, dx, g + off.conv1_w,
                  g + off.conv1_b);
  }
  return out;
}

TrainResult train(const std::vector<TrainingSample>& samples,
                  const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
  if (samples.empty()) throw EmptyDataset("train: no samples");
  if (train_cfg.learning_rate < 0.0)
    throw ConfigError("learning_rate must be nonnegative");
  if (train_cfg.epochs < 1) throw ConfigError("epochs must be >= 1");

  TrainResult result;
  result.params = init_params(model_cfg, train_cfg.seed);
  Rng rng(train_cfg.seed ^ 0x5bf03635ULL);

  const int n = static_cast<int>(samples.size());
  const int bs = std::max(1, std::min(train_cfg.batch_size, n));
  const int steps_per_epoch = (n + bs - 1) / bs;
  const long total_steps =
      static_cast<long>(steps_per_epoch) * train_cfg.epochs;

  std::vector<double> m(result.params.values.size(), 0.0);
  std::vector<double> v(result.params.values.size(), 0.0);
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  long step = 0;

  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.uniform_int(i + 1));
      std::swap(order[i], order[j]);
    }
    double ep_contact = 0.0, ep_traj = 0.0;
    for (int b = 0; b < steps_per_epoch; ++b) {
      std::vector<TrainingSample> batch;
      for (int i = b * bs; i < std::min(n, (b + 1) * bs); ++i)
        batch.push_back(samples[order[i]]);
      const BatchGradient bg =
          backward(result.params, batch, train_cfg.lambda_traj);
      ep_contact += bg.contact_loss;
      ep_traj += bg.traj_loss;

      const double lr =
          train_cfg.learning_rate * 0.5 *
          (1.0 + std::cos(kPi * static_cast<double>(step) / total_steps));
      ++step;
      const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
      for (size_t i = 0; i < result.params.values.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * bg.grad[i];
        v[i] = b2 * v[i] + (1.0 - b2) * bg.grad[i] * bg.grad[i];
        result.params.values[i] -=
            lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
      }
    }
    result.curve.push_back(
        {epoch, ep_contact / steps_per_epoch, ep_traj / steps_per_epoch});
  }
  return result;
}

std::vector<double> encode_latent(const ModelParams& params,
                                  const Image& image) {
  if (image.width % 8 != 0 || image.height % 8 != 0)
    throw ShapeMismatch("encode_latent: image sides must be divisible by 8");
  const Offsets off = resolve(params.config);
  const double* p = params.values.data();

  Tensor3 x(1, image.height, image.width);
  x.v.assign(image.data.begin(), image.data.end());
  Tensor3 a1(kC1, image.height / 2, image.width / 2), z1;
  conv_forward(x, p + off.conv1_w, p + off.conv1_b, a1);
  relu_forward(a1, z1);
  Tensor3 a2(kC2, image.height / 4, image.width / 4), z2;
  conv_forward(z1, p + off.conv2_w, p + off.conv2_b, a2);
  relu_forward(a2, z2);
  Tensor3 a3(kC3, image.height / 8, image.width / 8), z3;
  conv_forward(z2, p + off.conv3_w, p + off.conv3_b, a3);
  relu_forward(a3, z3);
  return z3.v;
}

InferResult infer_full(const ModelParams& params, const Image& image,
                       int n_queries, Rng& rng) {
  if (n_queries < 1) throw EmptyInput("infer_full: n_queries must be >= 1");
  const int S = params.config.crop_size;
  if (image.width < S || image.height < S)
    throw ShapeMismatch("infer_full: image smaller than crop size");

  std::vector<Point2> all_means;
  std::vector<Point2> wp_sum(5, Point2{0, 0});
  for (int qi = 0; qi < n_queries; ++qi) {
    const int ox = static_cast<int>(rng.uniform_int(image.width - S + 1));
    const int oy = static_cast<int>(rng.uniform_int(image.height - S + 1));
    Image crop(S, S);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) crop.at(x, y) = image.at(ox + x, oy + y);
    const AffordancePrediction pred = forward(params, crop);
    for (const Point2& mu : pred.means)
      all_means.push_back({mu.x + ox, mu.y + oy});
    for (int i = 0; i < 5; ++i)
      wp_sum[i] = wp_sum[i] + pred.waypoints[i];
  }

  InferResult result;
  const int k = std::min<int>(5, static_cast<int>(all_means.size()));
  const double fixed_std = params.config.fixed_std_frac * image.width;
  const std::uint64_t seed = rng.uniform_int(UINT64_MAX >> 1);
  result.contact =
      fit_gmm_em(all_means, k, fixed_std, 100, 1e-8, seed).gmm;
  for (int i = 0; i < 5; ++i)
    result.waypoints.push_back((1.0 / n_queries) * wp_sum[i]);
  return result;
}

void save_checkpoint(const std::filesystem::path& path,
                     const ModelParams& params) {
  nlohmann::json header;
  header["config"] = {{"attention", params.config.attention},
                      {"crop_size", params.config.crop_size},
                      {"fixed_std_frac", params.config.fixed_std_frac}};
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layer_layout(params.config)) {
    layers.push_back({{"name", l.name},
                      {"offset", l.offset},
                      {"shape", l.shape},
                      {"size", l.size}});
  }
  header["layers"] = layers;
  header["total"] = params.values.size();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f << header.dump() << "\n";
  std::vector<float> buf(params.values.size());
  for (size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<float>(params.values[i]);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw IoError("write failed: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  std::string header_line;
  if (!std::getline(f, header_line))
    throw IoError("missing checkpoint header: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("bad checkpoint header: " + std::string(e.what()));
  }

  ModelParams params;
  try {
    params.config.attention = header.at("config").at("attention").get<bool>();
    params.config.crop_size = header.at("config").at("crop_size").get<int>();
    params.config.fixed_std_frac =
        header.at("config").at("fixed_std_frac").get<double>();
    const size_t total = header.at("total").get<size_t>();
    const auto layout = layer_layout(params.config);
    if (total != layout.back().offset + layout.back().size)
      throw SchemaError("checkpoint total does not match config layout");
    std::vector<float> buf(total);
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(total * sizeof(float)));
    if (f.gcount() != static_cast<std::streamsize>(total * sizeof(float)))
      throw IoError("truncated checkpoint: " + path.string());
    params.values.assign(buf.begin(), buf.end());
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("bad checkpoint schema: " + std::string(e.what()));
  }
  return params;
}

}  // namespace aff
