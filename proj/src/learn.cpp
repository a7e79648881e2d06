#include "affdesk/learn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace aff {

namespace {

// -------- tiny fully-connected net (ReLU hidden, linear output) --------

struct Mlp {
  std::vector<int> dims;
  std::vector<double> w;

  static Mlp make(std::vector<int> dims, Rng& rng) {
    Mlp net;
    net.dims = std::move(dims);
    size_t total = 0;
    for (size_t l = 0; l + 1 < net.dims.size(); ++l)
      total += static_cast<size_t>(net.dims[l + 1]) * net.dims[l] +
               net.dims[l + 1];
    net.w.assign(total, 0.0);
    size_t off = 0;
    for (size_t l = 0; l + 1 < net.dims.size(); ++l) {
      const double lim = std::sqrt(6.0 / net.dims[l]);
      const size_t n_w = static_cast<size_t>(net.dims[l + 1]) * net.dims[l];
      for (size_t i = 0; i < n_w; ++i) net.w[off + i] = rng.uniform(-lim, lim);
      off += n_w + net.dims[l + 1];  // biases stay zero
    }
    return net;
  }

  struct Cache {
    std::vector<std::vector<double>> act;  // act[0] = input
    std::vector<std::vector<double>> pre;  // pre-activations per layer
  };

  std::vector<double> forward(const std::vector<double>& x,
                              Cache* cache = nullptr) const {
    std::vector<double> cur = x;
    if (cache) {
      cache->act.clear();
      cache->pre.clear();
      cache->act.push_back(cur);
    }
    size_t off = 0;
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
      const int n_in = dims[l], n_out = dims[l + 1];
      std::vector<double> next(n_out);
      for (int o = 0; o < n_out; ++o) {
        double s = w[off + static_cast<size_t>(n_out) * n_in + o];
        for (int i = 0; i < n_in; ++i)
          s += w[off + static_cast<size_t>(o) * n_in + i] * cur[i];
        next[o] = s;
      }
      if (cache) cache->pre.push_back(next);
      const bool last = l + 2 == dims.size();
      if (!last)
        for (double& v : next) v = std::max(0.0, v);
      if (cache) cache->act.push_back(next);
      cur = std::move(next);
      off += static_cast<size_t>(n_out) * n_in + n_out;
    }
    return cur;
  }

  // accumulates parameter gradients into grad; returns dLoss/dinput
  std::vector<double> backward(const Cache& cache,
                               const std::vector<double>& dout,
                               std::vector<double>& grad) const {
    std::vector<double> delta = dout;
    size_t off_end = w.size();
    for (size_t l = dims.size() - 1; l-- > 0;) {
      const int n_in = dims[l], n_out = dims[l + 1];
      const size_t off = off_end - (static_cast<size_t>(n_out) * n_in + n_out);
      const bool last = l + 2 == dims.size();
      if (!last)
        for (int o = 0; o < n_out; ++o)
          if (cache.pre[l][o] <= 0.0) delta[o] = 0.0;
      std::vector<double> din(n_in, 0.0);
      for (int o = 0; o < n_out; ++o) {
        const double g = delta[o];
        grad[off + static_cast<size_t>(n_out) * n_in + o] += g;
        for (int i = 0; i < n_in; ++i) {
          grad[off + static_cast<size_t>(o) * n_in + i] += g * cache.act[l][i];
          din[i] += g * w[off + static_cast<size_t>(o) * n_in + i];
        }
      }
      delta = std::move(din);
      off_end = off;
    }
    return delta;
  }
};

struct Adam {
  std::vector<double> m, v;
  long step = 0;

  void apply(std::vector<double>& w, const std::vector<double>& grad,
             double lr) {
    if (m.empty()) {
      m.assign(w.size(), 0.0);
      v.assign(w.size(), 0.0);
    }
    ++step;
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  }
};

std::vector<double> gaussian_kernel(double sigma) {
  const int half = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  std::vector<double> k(2 * half + 1);
  double sum = 0.0;
  for (int i = -half; i <= half; ++i) {
    k[i + half] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + half];
  }
  for (double& v : k) v /= sum;
  return k;
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const auto k = gaussian_kernel(sigma);
  const int half = static_cast<int>(k.size()) / 2;
  Image tmp(img.width, img.height), out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double s = 0.0;
      for (int i = -half; i <= half; ++i)
        s += k[i + half] * img.at(std::clamp(x + i, 0, img.width - 1), y);
      tmp.at(x, y) = s;
    }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double s = 0.0;
      for (int i = -half; i <= half; ++i)
        s += k[i + half] * tmp.at(x, std::clamp(y + i, 0, img.height - 1));
      out.at(x, y) = s;
    }
  return out;
}

Point2 clamp_to_frame(Point2 p, int size) {
  return {std::clamp(p.x, 0.0, size - 1.0), std::clamp(p.y, 0.0, size - 1.0)};
}

std::vector<double> flatten_action(Point2 c, const std::vector<Point2>& tau) {
  std::vector<double> y{c.x, c.y};
  for (const Point2& p : tau) {
    y.push_back(p.x);
    y.push_back(p.y);
  }
  return y;
}

}  // namespace

// -------- feature embedding --------

FeatureEmbedding FeatureEmbedding::pixel() {
  FeatureEmbedding psi;
  psi.mode_ = FeatureMode::Pixel;
  return psi;
}

FeatureEmbedding FeatureEmbedding::encoder(ModelParams params) {
  FeatureEmbedding psi;
  psi.mode_ = FeatureMode::EncoderLatent;
  psi.params_ = std::move(params);
  return psi;
}

std::vector<double> FeatureEmbedding::embed(const Image& image) const {
  if (mode_ == FeatureMode::EncoderLatent) return encode_latent(*params_, image);
  // 8x8 average pooling
  if (image.width % 8 != 0 || image.height % 8 != 0)
    throw ShapeMismatch("pixel embedding needs sides divisible by 8");
  const int bx = image.width / 8, by = image.height / 8;
  std::vector<double> out(64, 0.0);
  for (int cy = 0; cy < 8; ++cy)
    for (int cx = 0; cx < 8; ++cx) {
      double s = 0.0;
      for (int y = cy * by; y < (cy + 1) * by; ++y)
        for (int x = cx * bx; x < (cx + 1) * bx; ++x) s += image.at(x, y);
      out[cy * 8 + cx] = s / (bx * by);
    }
  return out;
}

double feature_distance(const FeatureEmbedding& psi, const Image& a,
                        const Image& b) {
  const auto va = psi.embed(a), vb = psi.embed(b);
  double s = 0.0;
  for (size_t i = 0; i < va.size(); ++i) s += (va[i] - vb[i]) * (va[i] - vb[i]);
  return std::sqrt(s);
}

// -------- environment change --------

double env_change(const EnvChangeModel& model, const Image& img_i,
                  const Image& img_j, const Image& mask_i,
                  const Image& mask_j) {
  if (!same_shape(img_i, img_j) || !same_shape(img_i, mask_i) ||
      !same_shape(img_i, mask_j))
    throw ShapeMismatch("env_change: image/mask shapes differ");
  if (model.pixel_threshold <= 0.0 || model.pixel_threshold >= 1.0)
    throw ConfigError("env_change threshold must lie in (0, 1)");

  // remove the robot first so nothing under the mask can leak through the
  // blur into the comparison
  Image a = img_i, b = img_j;
  for (size_t i = 0; i < a.size(); ++i)
    if (mask_i.data[i] > 0.5 || mask_j.data[i] > 0.5) {
      a.data[i] = 0.0;
      b.data[i] = 0.0;
    }
  const Image ab = gaussian_blur(a, model.blur_radius);
  const Image bb = gaussian_blur(b, model.blur_radius);

  double sq = 0.0;
  for (size_t i = 0; i < ab.size(); ++i) {
    const double d = std::abs(ab.data[i] - bb.data[i]);
    if (d >= model.pixel_threshold) sq += d * d;
  }
  double result = std::sqrt(sq);
  if (model.feature_weight > 0.0) {
    const auto va = model.psi.embed(a), vb = model.psi.embed(b);
    double fs = 0.0;
    for (size_t i = 0; i < va.size(); ++i)
      fs += (va[i] - vb[i]) * (va[i] - vb[i]);
    result += model.feature_weight * std::sqrt(fs);
  }
  return result;
}

// -------- task environment --------

Image TaskEnv::goal_image(const GoalSpec& goal) const {
  Scene g = scene;
  auto& obj = g.object_by_name(goal.object);
  obj.set_q(obj.q_min + goal.fraction * (obj.q_max - obj.q_min));
  return render(g, camera, {});
}

// -------- sources and collection --------

PolicySource PolicySource::from_model(const ModelParams& m, int n_queries) {
  PolicySource s;
  s.kind = Kind::Model;
  s.model = &m;
  s.n_queries = n_queries;
  return s;
}

PolicySource PolicySource::from_elite(const EliteDistribution& e,
                                      const ModelParams* m, int n_queries) {
  PolicySource s;
  s.kind = Kind::Elite;
  s.elite = e;
  s.model = m;
  s.n_queries = n_queries;
  return s;
}

PolicySource PolicySource::random() {
  PolicySource s;
  s.kind = Kind::Random;
  return s;
}

EliteDistribution fit_elites(const std::vector<RolloutRecord>& top_k,
                             double std_c, double std_tau) {
  if (top_k.empty()) throw EmptyDataset("fit_elites: no rollouts");
  EliteDistribution e;
  e.std_c = std_c;
  e.std_tau = std_tau;
  e.mean_tau.assign(5, Point2{0, 0});
  std::map<int, int> rot_count;
  for (const auto& r : top_k) {
    e.mean_c = e.mean_c + r.contact;
    for (int i = 0; i < 5; ++i) e.mean_tau[i] = e.mean_tau[i] + r.waypoints[i];
    rot_count[r.rotation_choice]++;
  }
  const double inv = 1.0 / top_k.size();
  e.mean_c = inv * e.mean_c;
  for (auto& w : e.mean_tau) w = inv * w;
  int best_n = -1;
  for (const auto& [rot, n] : rot_count)
    if (n > best_n) {
      best_n = n;
      e.rotation_mode = rot;
    }
  return e;
}

namespace {

// wrist roll is not part of the affordance: it is resolved from local scene
// geometry, as the roll bucket of the handle nearest the contact point
int nearest_rotation(const Scene& scene, const CameraPose& camera, Point2 c) {
  int best = 0;
  double best_d = std::numeric_limits<double>::max();
  for (const auto& obj : scene.objects) {
    const double d = dist(camera.world_to_image(obj.handle_world()), c);
    if (d < best_d) {
      best_d = d;
      best = obj.rotation_class;
    }
  }
  return best;
}

struct ActionDraw {
  Point2 c;
  std::vector<Point2> tau;
  int rotation = 0;
};

ActionDraw draw_action(const TaskEnv& env, const PolicySource& source,
                       double p, Rng& rng) {
  const int size = env.scene.image_size;
  ActionDraw a;
  auto from_model = [&]() {
    const Image obs = env.observe();
    const InferResult inf =
        infer_full(*source.model, obs, source.n_queries, rng);
    a.c = clamp_to_frame(sample_gmm(inf.contact, rng), size);
    a.tau = inf.waypoints;
    a.rotation = nearest_rotation(env.scene, env.camera, a.c);
  };
  switch (source.kind) {
    case PolicySource::Kind::Model:
      from_model();
      break;
    case PolicySource::Kind::Elite: {
      if (source.model && rng.uniform() < p) {
        from_model();
      } else {
        const EliteDistribution& e = source.elite;
        a.c = clamp_to_frame({e.mean_c.x + rng.normal(0.0, e.std_c),
                              e.mean_c.y + rng.normal(0.0, e.std_c)},
                             size);
        for (const Point2& w : e.mean_tau)
          a.tau.push_back({w.x + rng.normal(0.0, e.std_tau),
                           w.y + rng.normal(0.0, e.std_tau)});
        a.rotation = e.rotation_mode;
      }
      break;
    }
    case PolicySource::Kind::Random: {
      a.c = {rng.uniform(0.0, size - 1.0), rng.uniform(0.0, size - 1.0)};
      Point2 acc{0, 0};
      for (int i = 0; i < 5; ++i) {
        acc = acc + Point2{rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0)};
        a.tau.push_back(acc);
      }
      a.rotation = nearest_rotation(env.scene, env.camera, a.c);
      break;
    }
  }
  return a;
}

}  // namespace

std::vector<RolloutRecord> collect(const TaskEnv& env,
                                   const PolicySource& source, int n, double p,
                                   Rng& rng) {
  if (n < 1) throw EmptyInput("collect: n must be >= 1");
  if (p < 0.0 || p > 1.0) throw ConfigError("collect: p must lie in [0, 1]");
  std::vector<RolloutRecord> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const ActionDraw a = draw_action(env, source, p, rng);
    RolloutResult res =
        execute_affordance(env.scene, env.camera, a.c, a.tau, a.rotation,
                           env.goals, env.grasp_radius_px, rng);
    res.record.id = i;
    out.push_back(std::move(res.record));
  }
  return out;
}

// -------- ranking --------

namespace {

std::vector<RolloutRecord> sort_by_key(const std::vector<RolloutRecord>& data,
                                       const std::vector<double>& key,
                                       bool ascending) {
  std::vector<size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    if (key[a] != key[b]) return ascending ? key[a] < key[b] : key[a] > key[b];
    return data[a].id < data[b].id;
  });
  std::vector<RolloutRecord> out;
  out.reserve(data.size());
  for (size_t i : idx) out.push_back(data[i]);
  return out;
}

}  // namespace

std::vector<RolloutRecord> rank_by_goal(const std::vector<RolloutRecord>& data,
                                        const Image& goal_image,
                                        const FeatureEmbedding& psi) {
  if (data.empty()) throw EmptyDataset("rank_by_goal: empty dataset");
  const auto vg = psi.embed(goal_image);
  std::vector<double> key(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const Image& obs : data[i].observations) {
      const auto vo = psi.embed(obs);
      double s = 0.0;
      for (size_t j = 0; j < vo.size(); ++j)
        s += (vg[j] - vo[j]) * (vg[j] - vo[j]);
      best = std::min(best, s);
    }
    key[i] = best;
  }
  return sort_by_key(data, key, /*ascending=*/true);
}

std::vector<RolloutRecord> rank_by_exploration(
    const std::vector<RolloutRecord>& data, const EnvChangeModel& ec) {
  if (data.empty()) throw EmptyDataset("rank_by_exploration: empty dataset");
  std::vector<double> key(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    const auto& r = data[i];
    key[i] = env_change(ec, r.observations.front(), r.observations.back(),
                        r.observation_masks.front(), r.observation_masks.back());
  }
  return sort_by_key(data, key, /*ascending=*/false);
}

// -------- offline imitation --------

double knn_execute(const std::vector<RolloutRecord>& data,
                   const Image& goal_image, const GoalSpec& goal, int k,
                   const TaskEnv& env, const FeatureEmbedding& psi, Rng& rng) {
  if (static_cast<int>(data.size()) < k)
    throw InsufficientData("knn_execute: dataset smaller than K");
  const auto ranked = rank_by_goal(data, goal_image, psi);
  int successes = 0;
  for (int i = 0; i < k; ++i) {
    RolloutResult res = execute_affordance(
        env.scene, env.camera, ranked[i].contact, ranked[i].waypoints,
        ranked[i].rotation_choice, env.goals, env.grasp_radius_px, rng);
    if (goal_predicate(res.scene_after, goal)) ++successes;
  }
  return static_cast<double>(successes) / k;
}

namespace {

constexpr int kActionDim = 12;  // (c, tau) flattened

}  // namespace

BcPolicy bc_train(const std::vector<RolloutRecord>& top_k,
                  const FeatureEmbedding& psi, const BcConfig& cfg) {
  if (top_k.empty()) throw InsufficientData("bc_train: no rollouts");
  Rng rng(cfg.seed);

  const double scale = top_k.front().initial_image.width;
  std::vector<std::vector<double>> ctx, target;
  std::map<int, int> rot_count;
  for (const auto& r : top_k) {
    ctx.push_back(psi.embed(r.initial_image));
    auto y = flatten_action(r.contact, r.waypoints);
    for (double& v : y) v /= scale;
    target.push_back(std::move(y));
    rot_count[r.rotation_choice]++;
  }
  const int d_ctx = static_cast<int>(ctx.front().size());
  const int zd = cfg.latent_dim;

  BcPolicy policy;
  policy.psi = psi;
  policy.latent_dim = zd;
  policy.dims_enc = {d_ctx + kActionDim, 64, 64, 2 * zd};
  policy.dims_dec = {d_ctx + zd, 64, 64, kActionDim};
  int best_n = -1;
  for (const auto& [rot, n] : rot_count)
    if (n > best_n) {
      best_n = n;
      policy.rotation_choice = rot;
    }

  Mlp enc = Mlp::make(policy.dims_enc, rng);
  Mlp dec = Mlp::make(policy.dims_dec, rng);
  Adam enc_adam, dec_adam;
  const size_t nb = top_k.size();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<double> enc_grad(enc.w.size(), 0.0);
    std::vector<double> dec_grad(dec.w.size(), 0.0);
    for (size_t i = 0; i < nb; ++i) {
      std::vector<double> enc_in = ctx[i];
      enc_in.insert(enc_in.end(), target[i].begin(), target[i].end());
      Mlp::Cache ec_cache;
      const auto enc_out = enc.forward(enc_in, &ec_cache);

      std::vector<double> eps_z(zd), z(zd);
      for (int j = 0; j < zd; ++j) {
        eps_z[j] = rng.normal();
        z[j] = enc_out[j] + std::exp(0.5 * enc_out[zd + j]) * eps_z[j];
      }
      std::vector<double> dec_in = ctx[i];
      dec_in.insert(dec_in.end(), z.begin(), z.end());
      Mlp::Cache dc_cache;
      const auto y_hat = dec.forward(dec_in, &dc_cache);

      // reconstruction: ||y_hat - y||^2, KL vs standard normal
      std::vector<double> d_yhat(kActionDim);
      for (int j = 0; j < kActionDim; ++j)
        d_yhat[j] = 2.0 * (y_hat[j] - target[i][j]) / nb;
      const auto d_dec_in = dec.backward(dc_cache, d_yhat, dec_grad);

      std::vector<double> d_enc_out(2 * zd, 0.0);
      for (int j = 0; j < zd; ++j) {
        const double dz = d_dec_in[d_ctx + j];
        d_enc_out[j] = dz + cfg.beta * enc_out[j] / nb;
        d_enc_out[zd + j] =
            dz * 0.5 * std::exp(0.5 * enc_out[zd + j]) * eps_z[j] +
            cfg.beta * 0.5 * (std::exp(enc_out[zd + j]) - 1.0) / nb;
      }
      enc.backward(ec_cache, d_enc_out, enc_grad);
    }
    enc_adam.apply(enc.w, enc_grad, cfg.learning_rate);
    dec_adam.apply(dec.w, dec_grad, cfg.learning_rate);
  }

  policy.enc_w = std::move(enc.w);
  policy.dec_w = std::move(dec.w);
  return policy;
}

std::pair<Point2, std::vector<Point2>> BcPolicy::act(const Image& initial,
                                                     Rng& rng) const {
  Mlp dec;
  dec.dims = dims_dec;
  dec.w = dec_w;
  std::vector<double> in = psi.embed(initial);
  for (int j = 0; j < latent_dim; ++j) in.push_back(rng.normal());
  auto y = dec.forward(in);
  const double scale = initial.width;
  for (double& v : y) v *= scale;
  Point2 c{y[0], y[1]};
  std::vector<Point2> tau;
  for (int i = 0; i < 5; ++i) tau.push_back({y[2 + 2 * i], y[3 + 2 * i]});
  return {c, tau};
}

double bc_execute(const BcPolicy& policy, const TaskEnv& env,
                  const GoalSpec& goal, int runs, Rng& rng) {
  if (runs < 1) throw EmptyInput("bc_execute: runs must be >= 1");
  const Image initial = env.observe();
  int successes = 0;
  for (int i = 0; i < runs; ++i) {
    auto [c, tau] = policy.act(initial, rng);
    c = clamp_to_frame(c, env.scene.image_size);
    RolloutResult res =
        execute_affordance(env.scene, env.camera, c, tau,
                           policy.rotation_choice, env.goals,
                           env.grasp_radius_px, rng);
    if (goal_predicate(res.scene_after, goal)) ++successes;
  }
  return static_cast<double>(successes) / runs;
}

// -------- exploration / goal-conditioned loop --------

ParadigmResult run_paradigm_loop(const TaskEnv& env, const ModelParams* model,
                                 ParadigmMode mode,
                                 const std::optional<GoalSpec>& goal,
                                 const ParadigmConfig& cfg,
                                 const FeatureEmbedding& psi,
                                 const EnvChangeModel& ec, Rng& rng) {
  if (cfg.n_initial < cfg.top_k || cfg.n_per_iter < cfg.top_k)
    throw ConfigError("paradigm loop needs N_0, N_s >= K");
  if (mode == ParadigmMode::Goal && !goal)
    throw ConfigError("goal mode needs a goal spec");

  std::optional<Image> gi;
  int goal_index = -1;
  if (mode == ParadigmMode::Goal) {
    gi = env.goal_image(*goal);
    for (size_t i = 0; i < env.goals.size(); ++i)
      if (env.goals[i].object == goal->object) goal_index = static_cast<int>(i);
  }

  auto batch_rate = [&](const std::vector<RolloutRecord>& batch) {
    int hits = 0;
    for (const auto& r : batch) {
      bool ok = false;
      if (mode == ParadigmMode::Explore) {
        for (bool s : r.success) ok = ok || s;
      } else if (goal_index >= 0) {
        ok = r.success[goal_index];
      }
      if (ok) ++hits;
    }
    return static_cast<double>(hits) / batch.size();
  };

  ParadigmResult result;
  const PolicySource initial_source = model
                                          ? PolicySource::from_model(
                                                *model, cfg.n_queries)
                                          : PolicySource::random();
  std::vector<RolloutRecord> batch =
      collect(env, initial_source, cfg.n_initial, 1.0, rng);
  result.stats.push_back({0, batch_rate(batch)});
  for (auto& r : batch) {
    r.id = static_cast<int>(result.dataset.size());
    result.dataset.push_back(std::move(r));
  }

  for (int j = 1; j <= cfg.iterations; ++j) {
    const std::vector<RolloutRecord> ranked =
        mode == ParadigmMode::Explore
            ? rank_by_exploration(result.dataset, ec)
            : rank_by_goal(result.dataset, *gi, psi);
    const std::vector<RolloutRecord> top(
        ranked.begin(), ranked.begin() + cfg.top_k);
    const EliteDistribution elite =
        fit_elites(top, cfg.noise_c, cfg.noise_tau);
    batch = collect(env,
                    PolicySource::from_elite(elite, model, cfg.n_queries),
                    cfg.n_per_iter, cfg.p_model, rng);
    result.stats.push_back({j, batch_rate(batch)});
    for (auto& r : batch) {
      r.id = static_cast<int>(result.dataset.size());
      result.dataset.push_back(std::move(r));
    }
  }
  return result;
}

// -------- discrete action space + DQN --------

std::vector<std::vector<double>> kmeans(
    const std::vector<std::vector<double>>& points, int k, int iters,
    std::uint64_t seed) {
  if (points.empty()) throw EmptyInput("kmeans: no points");
  k = std::min<int>(k, static_cast<int>(points.size()));
  Rng rng(seed);
  const size_t dim = points.front().size();

  auto d2 = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < dim; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
  };

  // farthest-point seeding
  std::vector<std::vector<double>> centers;
  centers.push_back(points[rng.uniform_int(points.size())]);
  std::vector<double> mind(points.size(),
                           std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < k) {
    size_t far = 0;
    double far_d = -1.0;
    for (size_t i = 0; i < points.size(); ++i) {
      mind[i] = std::min(mind[i], d2(points[i], centers.back()));
      if (mind[i] > far_d) {
        far_d = mind[i];
        far = i;
      }
    }
    centers.push_back(points[far]);
  }

  std::vector<int> assign(points.size(), 0);
  for (int it = 0; it < iters; ++it) {
    bool changed = false;
    for (size_t i = 0; i < points.size(); ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = d2(points[i], centers[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    for (int c = 0; c < k; ++c) {
      std::vector<double> mean(dim, 0.0);
      int n = 0;
      for (size_t i = 0; i < points.size(); ++i)
        if (assign[i] == c) {
          for (size_t j = 0; j < dim; ++j) mean[j] += points[i][j];
          ++n;
        }
      if (n > 0) {
        for (double& v : mean) v /= n;
        centers[c] = std::move(mean);
      }
    }
    if (!changed) break;
  }
  return centers;
}

std::pair<Point2, std::vector<Point2>> DiscreteActionMap::action(
    int index) const {
  const int nt = static_cast<int>(traj_centers.size());
  if (index < 0 || index >= size())
    throw EmptyInput("action index out of range");
  return {contact_centers[index / nt], traj_centers[index % nt]};
}

DiscreteActionMap build_action_space(const ModelParams& model,
                                     const Image& scene_image, int q, int n_c,
                                     int n_tau, std::uint64_t seed) {
  if (q < n_c || q < n_tau)
    throw InsufficientData("build_action_space: q must be >= N_c and N_tau");
  Rng rng(seed);

  std::vector<Point2> contact_samples;
  std::vector<std::vector<double>> taus;
  const int S = model.config.crop_size;
  for (int i = 0; i < q; ++i) {
    const int ox = static_cast<int>(rng.uniform_int(scene_image.width - S + 1));
    const int oy =
        static_cast<int>(rng.uniform_int(scene_image.height - S + 1));
    Image crop(S, S);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) crop.at(x, y) = scene_image.at(ox + x, oy + y);
    const AffordancePrediction pred = forward(model, crop);
    for (const Point2& mu : pred.means)
      contact_samples.push_back({mu.x + ox, mu.y + oy});
    std::vector<double> t;
    for (const Point2& w : pred.waypoints) {
      t.push_back(w.x);
      t.push_back(w.y);
    }
    taus.push_back(std::move(t));
  }

  DiscreteActionMap map;
  const double fixed_std = model.config.fixed_std_frac * scene_image.width;
  map.contact_centers =
      fit_gmm_em(contact_samples, n_c, fixed_std, 100, 1e-8,
                 rng.uniform_int(UINT64_MAX >> 1))
          .gmm.means;
  const auto centers =
      kmeans(taus, n_tau, 50, rng.uniform_int(UINT64_MAX >> 1));
  for (const auto& c : centers) {
    std::vector<Point2> tau;
    for (int i = 0; i < 5; ++i) tau.push_back({c[2 * i], c[2 * i + 1]});
    map.traj_centers.push_back(std::move(tau));
  }
  return map;
}

std::vector<double> QNetwork::values(const std::vector<double>& state) const {
  Mlp net;
  net.dims = dims;
  net.w = w;
  return net.forward(state);
}

int QNetwork::greedy(const std::vector<double>& state) const {
  const auto v = values(state);
  int best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

DqnResult dqn_train(const TaskEnv& env, const DiscreteActionMap& actions,
                    const Image& goal_image, const GoalSpec& goal,
                    const FeatureEmbedding& psi, const DqnConfig& cfg) {
  if (cfg.steps < 1) throw EmptyInput("dqn_train: steps must be >= 1");
  Rng rng(cfg.seed);
  const int n_actions = actions.size();
  if (n_actions < 1) throw EmptyDataset("dqn_train: empty action map");

  const Image initial = env.observe();
  const std::vector<double> state = psi.embed(initial);
  const std::vector<double> goal_feat = psi.embed(goal_image);
  const int d = static_cast<int>(state.size());

  Mlp qnet = Mlp::make({d, 64, 64, n_actions}, rng);
  Mlp target = qnet;
  Adam adam;

  struct Transition {
    int action;
    double reward;
    std::vector<double> next_state;
  };
  std::vector<Transition> replay;
  size_t replay_head = 0;

  DqnResult result;
  result.action_counts.assign(n_actions, 0);
  std::vector<char> window;

  for (int t = 0; t < cfg.steps; ++t) {
    const double half = std::max(1.0, cfg.steps / 2.0);
    const double eps =
        t < cfg.steps / 2
            ? cfg.eps_hi + (cfg.eps_lo - cfg.eps_hi) * (t / half)
            : cfg.eps_lo;

    int a;
    if (rng.uniform() < eps) {
      a = static_cast<int>(rng.uniform_int(n_actions));
    } else {
      Mlp qv;
      qv.dims = qnet.dims;
      qv.w = qnet.w;
      const auto v = qv.forward(state);
      a = 0;
      for (int i = 1; i < n_actions; ++i)
        if (v[i] > v[a]) a = i;
    }
    result.action_counts[a]++;

    auto [c, tau] = actions.action(a);
    c = clamp_to_frame(c, env.scene.image_size);
    RolloutResult res = execute_affordance(
        env.scene, env.camera, c, tau,
        nearest_rotation(env.scene, env.camera, c), env.goals,
        env.grasp_radius_px, rng);
    const auto term_feat = psi.embed(res.record.terminal_image);
    double dist_g = 0.0;
    for (int i = 0; i < d; ++i)
      dist_g += (term_feat[i] - goal_feat[i]) * (term_feat[i] - goal_feat[i]);
    dist_g = std::sqrt(dist_g);
    const double reward = cfg.negate_reward ? -dist_g : dist_g;

    Transition tr{a, reward, term_feat};
    if (static_cast<int>(replay.size()) < cfg.replay_capacity) {
      replay.push_back(std::move(tr));
    } else {
      replay[replay_head] = std::move(tr);
      replay_head = (replay_head + 1) % replay.size();
    }

    window.push_back(goal_predicate(res.scene_after, goal) ? 1 : 0);
    if (window.size() > 50) window.erase(window.begin());
    double rate = 0.0;
    for (char s : window) rate += s;
    result.success_curve.push_back(rate / window.size());

    // one regression step on a replayed batch
    std::vector<double> grad(qnet.w.size(), 0.0);
    const int bs = std::min<int>(cfg.batch, static_cast<int>(replay.size()));
    for (int b = 0; b < bs; ++b) {
      const Transition& s =
          replay[rng.uniform_int(replay.size())];
      double y = s.reward;
      if (cfg.gamma > 0.0) {
        Mlp tv;
        tv.dims = target.dims;
        tv.w = target.w;
        const auto tvals = tv.forward(s.next_state);
        y += cfg.gamma * *std::max_element(tvals.begin(), tvals.end());
      }
      Mlp::Cache cache;
      const auto qv = qnet.forward(state, &cache);
      std::vector<double> dq(n_actions, 0.0);
      dq[s.action] = 2.0 * (qv[s.action] - y) / bs;
      qnet.backward(cache, dq, grad);
    }
    adam.apply(qnet.w, grad, cfg.learning_rate);
    if ((t + 1) % std::max(1, cfg.target_sync) == 0) target = qnet;
  }

  result.qnet.dims = qnet.dims;
  result.qnet.w = qnet.w;
  return result;
}

// -------- analysis --------

std::vector<double> feature_distance_curve(const RolloutRecord& rollout,
                                           const Image& goal_image,
                                           const FeatureEmbedding& psi) {
  if (rollout.observations.size() < 2)
    throw EmptyInput("feature_distance_curve: need >= 2 observations");
  const auto vg = psi.embed(goal_image);
  std::vector<double> out;
  for (const Image& obs : rollout.observations) {
    const auto vo = psi.embed(obs);
    double s = 0.0;
    for (size_t i = 0; i < vo.size(); ++i)
      s += (vg[i] - vo[i]) * (vg[i] - vo[i]);
    out.push_back(std::sqrt(s));
  }
  return out;
}

Outcome classify_outcome(const RolloutRecord& rollout, const GoalSpec& goal,
                         const Scene& reset_scene) {
  int idx = -1;
  for (size_t i = 0; i < reset_scene.objects.size(); ++i)
    if (reset_scene.objects[i].name == goal.object) idx = static_cast<int>(i);
  if (idx < 0) throw UnknownObject("classify_outcome: " + goal.object);
  const ArticulatedObject& obj = reset_scene.objects[idx];
  const double disp = rollout.joint_displacement[idx];

  Scene after = reset_scene;
  after.objects[idx].set_q(obj.q + disp);
  if (goal_predicate(after, goal)) return Outcome::Success;
  const double range = obj.q_max - obj.q_min;
  if (range > 0.0 && std::abs(disp) >= 0.1 * range)
    return Outcome::PartialSuccess;
  return Outcome::Failure;
}

}  // namespace aff
