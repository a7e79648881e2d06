#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "affdesk/config.hpp"
#include "affdesk/extract.hpp"
#include "affdesk/world.hpp"

namespace aff {

// ---- dataset serialization (JSONL index + PGM images) ----

void save_episode_dataset(const std::filesystem::path& dir,
                          const std::vector<Episode>& episodes,
                          const RunConfig& cfg);
// ground truth stays unread unless with_ground_truth is set; only tests set it
std::vector<Episode> load_episode_dataset(const std::filesystem::path& dir,
                                          bool with_ground_truth = false);

void save_labels(const std::filesystem::path& path,
                 const std::vector<AffordanceLabel>& labels);
std::vector<AffordanceLabel> load_labels(const std::filesystem::path& path,
                                         double fixed_std = 0.0);

void save_training_samples(const std::filesystem::path& dir,
                           const std::vector<TrainingSample>& samples);
std::vector<TrainingSample> load_training_samples(
    const std::filesystem::path& dir);

void save_rollouts(const std::filesystem::path& dir,
                   const std::vector<RolloutRecord>& rollouts);
std::vector<RolloutRecord> load_rollouts(const std::filesystem::path& dir);

// ---- CLI commands; all are deterministic functions of (config, inputs) ----

void cmd_gen_data(const RunConfig& cfg);

struct ExtractCounts {
  int extracted = 0;
  int no_contact = 0;
  int out_of_frame = 0;
};

ExtractCounts cmd_extract(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_paradigm(const RunConfig& cfg, const std::string& mode,
                  const std::optional<GoalSpec>& goal_override);
void cmd_report(const RunConfig& cfg);

}  // namespace aff
