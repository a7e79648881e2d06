#pragma once

#include <utility>
#include <vector>

#include "affdesk/common.hpp"
#include "affdesk/geometry.hpp"
#include "affdesk/world.hpp"

namespace aff {

struct AffordanceLabel {
  int episode_id = 0;
  int reference_frame = 0;
  Gmm2D contact_gmm;              // means in reference-frame pixels
  std::vector<Point2> waypoints;  // 5 cumulative displacements, w_0 == 0
};

struct TrainingSample {
  Image crop;
  Point2 crop_offset;
  std::vector<Point2> target_means;  // crop coordinates
  std::vector<double> target_weights;
  std::vector<Point2> target_waypoints;
};

enum class CropPolicy { None, MaskHand };

struct ReferenceFrame {
  int index = 0;
  CropPolicy policy = CropPolicy::None;
};

enum class HomographyMode { Estimated, ExactPose };

struct ExtractConfig {
  int window = 7;
  int polyorder = 3;
  double threshold = 0.75;
  int gmm_k = 5;
  double fixed_std_frac = 0.02;  // of image width
  HomographyMode homography = HomographyMode::Estimated;
  int gmm_max_iters = 100;
  double gmm_tol = 1e-8;
  std::uint64_t gmm_seed = 1;
};

// Savitzky-Golay gate (any index must reach the threshold) followed by a
// step-fit refinement on the raw flags near the first crossing.
int detect_contact_time(const std::vector<int>& flags, int window = 7,
                        int polyorder = 3, double threshold = 0.75);

// boundary pixels (8-connectivity) of hand_mask that fall inside the
// bounding box of object_mask
std::vector<Point2> extract_contact_points(const Frame& frame,
                                           const Image& hand_mask,
                                           const Image& object_mask);

// maps each (frame index, point) through that frame's homography into
// reference coordinates; homographies[i] maps frame i -> reference
std::vector<Point2> compensate_egomotion(
    const std::vector<std::pair<int, Point2>>& points_per_frame,
    const std::vector<Homography>& homographies);

ReferenceFrame select_reference_frame(const Episode& episode);

// reference image with the crop policy applied (hand box filled with the
// surrounding median when policy is MaskHand)
Image reference_image(const Episode& episode, const ReferenceFrame& ref);

// per-frame homographies into the reference frame, estimated from landmark
// correspondences or exact from stored camera poses
std::vector<Homography> episode_homographies(const Episode& episode,
                                             int reference, HomographyMode mode);

AffordanceLabel extract_label(const Episode& episode, const ExtractConfig& cfg);

struct LabeledImage {
  Image reference;
  AffordanceLabel label;
};

std::vector<TrainingSample> make_training_samples(
    const std::vector<LabeledImage>& labeled, double crop_fraction,
    int samples_per_label, Rng& rng);

// rasterized axis-aligned box mask (used for hand boxes and handle bboxes)
Image box_mask(int width, int height, Point2 center, double half);

}  // namespace aff
