#pragma once

#include <filesystem>
#include <string>

#include "affdesk/extract.hpp"
#include "affdesk/learn.hpp"
#include "affdesk/model.hpp"
#include "affdesk/world.hpp"

namespace aff {

// everything a CLI run needs, parsed from a flat INI file; unknown sections
// or keys are rejected and parse(serialize(c)) == c holds exactly
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  WorldConfig world;
  ExtractConfig extract;
  double crop_fraction = 0.625;
  int samples_per_label = 4;

  int crop_size = 40;
  bool attention = false;

  TrainConfig train;
  ParadigmConfig paradigm;

  int knn_k = 10;
  int imitation_rollouts = 100;
  int bc_top_k = 20;
  BcConfig bc;

  DqnConfig dqn;
  int action_q = 2000;
  int action_nc = 4;
  int action_ntau = 4;

  ModelConfig model_config() const;
  void validate() const;  // throws ConfigError
};

RunConfig parse_run_config(const std::string& text);
std::string serialize_run_config(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace aff
