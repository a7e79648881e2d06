#pragma once

#include <optional>
#include <vector>

#include "affdesk/common.hpp"
#include "affdesk/geometry.hpp"
#include "affdesk/model.hpp"
#include "affdesk/world.hpp"

namespace aff {

enum class FeatureMode { Pixel, EncoderLatent };

// fixed image-to-vector map used for goal distances and learner inputs
class FeatureEmbedding {
 public:
  static FeatureEmbedding pixel();
  static FeatureEmbedding encoder(ModelParams params);

  std::vector<double> embed(const Image& image) const;
  FeatureMode mode() const { return mode_; }

 private:
  FeatureMode mode_ = FeatureMode::Pixel;
  std::optional<ModelParams> params_;
};

double feature_distance(const FeatureEmbedding& psi, const Image& a,
                        const Image& b);

struct EnvChangeModel {
  double blur_radius = 1.0;
  double pixel_threshold = 0.08;
  double feature_weight = 0.25;
  FeatureEmbedding psi = FeatureEmbedding::pixel();
};

double env_change(const EnvChangeModel& model, const Image& img_i,
                  const Image& img_j, const Image& mask_i,
                  const Image& mask_j);

// the fixed task setup the robot-side paradigms operate in: a reset scene,
// a static camera, and the configured goals
struct TaskEnv {
  Scene scene;
  CameraPose camera;
  std::vector<GoalSpec> goals;
  double grasp_radius_px = 3.0;

  Image observe() const { return render(scene, camera, {}); }
  Image goal_image(const GoalSpec& goal) const;
};

struct EliteDistribution {
  Point2 mean_c;
  std::vector<Point2> mean_tau;  // 5 displacements
  double std_c = 2.0;
  double std_tau = 1.0;
  int rotation_mode = 0;
};

EliteDistribution fit_elites(const std::vector<RolloutRecord>& top_k,
                             double std_c, double std_tau);

struct PolicySource {
  enum class Kind { Model, Elite, Random } kind = Kind::Random;
  const ModelParams* model = nullptr;
  int n_queries = 10;
  EliteDistribution elite;

  static PolicySource from_model(const ModelParams& m, int n_queries = 10);
  static PolicySource from_elite(const EliteDistribution& e,
                                 const ModelParams* m, int n_queries = 10);
  static PolicySource random();
};

// n rollouts from reset scenes; for an elite source each rollout uses the
// model with probability p and the elite distribution otherwise
std::vector<RolloutRecord> collect(const TaskEnv& env,
                                   const PolicySource& source, int n, double p,
                                   Rng& rng);

std::vector<RolloutRecord> rank_by_goal(const std::vector<RolloutRecord>& data,
                                        const Image& goal_image,
                                        const FeatureEmbedding& psi);
std::vector<RolloutRecord> rank_by_exploration(
    const std::vector<RolloutRecord>& data, const EnvChangeModel& ec);

double knn_execute(const std::vector<RolloutRecord>& data,
                   const Image& goal_image, const GoalSpec& goal, int k,
                   const TaskEnv& env, const FeatureEmbedding& psi, Rng& rng);

struct BcPolicy {
  FeatureEmbedding psi;
  std::vector<int> dims_enc;  // encoder MLP layer widths
  std::vector<int> dims_dec;
  std::vector<double> enc_w;
  std::vector<double> dec_w;
  int latent_dim = 4;
  int rotation_choice = 0;

  // decode (c, tau) from a context vector and a latent draw
  std::pair<Point2, std::vector<Point2>> act(const Image& initial,
                                             Rng& rng) const;
};

struct BcConfig {
  int epochs = 1000;
  double learning_rate = 5e-3;
  double beta = 1e-2;  // KL weight; keeps posteriors near the prior so
                       // decoding fresh latent draws stays on-distribution
  int latent_dim = 4;
  std::uint64_t seed = 0;
};

BcPolicy bc_train(const std::vector<RolloutRecord>& top_k,
                  const FeatureEmbedding& psi, const BcConfig& cfg);
double bc_execute(const BcPolicy& policy, const TaskEnv& env,
                  const GoalSpec& goal, int runs, Rng& rng);

enum class ParadigmMode { Explore, Goal };

struct ParadigmConfig {
  int iterations = 2;  // J
  int n_initial = 30;  // N_0
  int n_per_iter = 30;  // N_s
  int top_k = 10;
  double p_model = 0.35;
  double noise_c = 2.0;
  double noise_tau = 1.0;
  int n_queries = 10;
};

struct IterationStats {
  int iteration = 0;
  double success_rate = 0.0;
};

struct ParadigmResult {
  std::vector<RolloutRecord> dataset;
  std::vector<IterationStats> stats;
};

// Explore mode ranks by environment change and reports coincidental goal
// success; Goal mode ranks by feature distance to goal_image and reports
// that goal's success rate.
ParadigmResult run_paradigm_loop(const TaskEnv& env, const ModelParams* model,
                                 ParadigmMode mode,
                                 const std::optional<GoalSpec>& goal,
                                 const ParadigmConfig& cfg,
                                 const FeatureEmbedding& psi,
                                 const EnvChangeModel& ec, Rng& rng);

struct DiscreteActionMap {
  std::vector<Point2> contact_centers;               // N_c
  std::vector<std::vector<Point2>> traj_centers;     // N_tau sequences of 5
  int size() const {
    return static_cast<int>(contact_centers.size() * traj_centers.size());
  }
  std::pair<Point2, std::vector<Point2>> action(int index) const;
};

DiscreteActionMap build_action_space(const ModelParams& model,
                                     const Image& scene_image, int q, int n_c,
                                     int n_tau, std::uint64_t seed);

struct QNetwork {
  std::vector<int> dims;
  std::vector<double> w;

  std::vector<double> values(const std::vector<double>& state) const;
  int greedy(const std::vector<double>& state) const;
};

struct DqnConfig {
  int steps = 1500;
  int batch = 32;
  int replay_capacity = 512;
  int target_sync = 50;
  double learning_rate = 1e-3;
  double gamma = 0.0;  // single-action episodes
  double eps_hi = 1.0;
  double eps_lo = 0.1;
  bool negate_reward = true;  // r = -distance; false keeps the literal sign
  std::uint64_t seed = 0;
};

struct DqnResult {
  QNetwork qnet;
  std::vector<double> success_curve;  // rolling goal-success rate
  std::vector<int> action_counts;
};

DqnResult dqn_train(const TaskEnv& env, const DiscreteActionMap& actions,
                    const Image& goal_image, const GoalSpec& goal,
                    const FeatureEmbedding& psi, const DqnConfig& cfg);

std::vector<double> feature_distance_curve(const RolloutRecord& rollout,
                                           const Image& goal_image,
                                           const FeatureEmbedding& psi);

enum class Outcome { Failure, PartialSuccess, Success };

Outcome classify_outcome(const RolloutRecord& rollout, const GoalSpec& goal,
                         const Scene& reset_scene);

// k-means over fixed-length vectors (used for trajectory clustering)
std::vector<std::vector<double>> kmeans(
    const std::vector<std::vector<double>>& points, int k, int iters,
    std::uint64_t seed);

}  // namespace aff
