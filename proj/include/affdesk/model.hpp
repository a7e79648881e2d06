#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "affdesk/common.hpp"
#include "affdesk/extract.hpp"
#include "affdesk/geometry.hpp"

namespace aff {

struct ModelConfig {
  int crop_size = 40;  // must be divisible by 8 (three stride-2 stages)
  bool attention = false;
  double fixed_std_frac = 0.02;  // of full-image width, for inference GMMs

  void validate() const;
};

struct LayerInfo {
  std::string name;
  std::vector<int> shape;
  size_t offset = 0;
  size_t size = 0;
};

struct ModelParams {
  ModelConfig config;
  std::vector<double> values;
};

std::vector<LayerInfo> layer_layout(const ModelConfig& cfg);
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

struct AffordancePrediction {
  std::vector<Point2> means;  // 5, crop coordinates
  HeatmapStack heatmaps;      // 5 channels, each sums to 1
  std::vector<Point2> waypoints;  // 5 relative displacements
};

AffordancePrediction forward(const ModelParams& params, const Image& crop);

double loss_contact(const std::vector<Point2>& pred_means,
                    const std::vector<Point2>& target_means);
double loss_traj(const std::vector<Point2>& pred_waypoints,
                 const std::vector<Point2>& target_waypoints);

// min-cost assignment of rows to distinct columns (rows <= cols), cost
// matrix in row-major vectors
std::vector<int> min_cost_assignment(
    const std::vector<std::vector<double>>& cost);

struct BatchGradient {
  std::vector<double> grad;  // d(mean total loss)/d params
  double contact_loss = 0.0;
  double traj_loss = 0.0;
};

BatchGradient backward(const ModelParams& params,
                       const std::vector<TrainingSample>& batch,
                       double lambda_traj);

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 40;
  int batch_size = 16;
  std::uint64_t seed = 0;
  double lambda_traj = 1.0;
};

struct LossRow {
  int epoch = 0;
  double contact_loss = 0.0;
  double traj_loss = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<LossRow> curve;
};

TrainResult train(const std::vector<TrainingSample>& samples,
                  const ModelConfig& model_cfg, const TrainConfig& train_cfg);

// conv-encoder latent (flattened, ReLU-activated) for an image of any size
// divisible by 8; used as a feature embedding
std::vector<double> encode_latent(const ModelParams& params, const Image& image);

struct InferResult {
  Gmm2D contact;
  std::vector<Point2> waypoints;
};

// queries the model on random crops of the full image and aggregates the
// mapped means into a GMM; waypoints are averaged over queries
InferResult infer_full(const ModelParams& params, const Image& image,
                       int n_queries, Rng& rng);

void save_checkpoint(const std::filesystem::path& path,
                     const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace aff
