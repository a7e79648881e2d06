#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "affdesk/common.hpp"
#include "affdesk/geometry.hpp"

namespace aff {

enum class JointKind { Prismatic, Revolute };

// One-DOF object: handle position is a deterministic function of q.
// Prismatic: handle = anchor + offset + q * normalize(offset).
// Revolute:  handle = anchor + R(q) * offset.
struct ArticulatedObject {
  JointKind kind = JointKind::Prismatic;
  std::string name;
  Point2 anchor;
  Point2 handle_offset;  // world units, at q = 0
  double q = 0.0;
  double q_min = 0.0;
  double q_max = 1.0;
  int rotation_class = 0;  // gripper roll bucket required to grasp, in {0,1,2}

  Point2 handle_world() const;
  // unit tangent of the handle path at the current q
  Point2 handle_axis() const;
  void set_q(double value);  // clamps to [q_min, q_max]
};

// World-to-image similarity transform.
struct CameraPose {
  Point2 t;
  double angle = 0.0;
  double scale = 1.0;

  Point2 world_to_image(Point2 w) const;
  Point2 image_to_world(Point2 i) const;
  Homography to_homography() const;  // world coords -> image coords
};

// image coords of `from` -> image coords of `to`
Homography homography_between(const CameraPose& from, const CameraPose& to);

struct Scene {
  std::vector<ArticulatedObject> objects;
  std::uint64_t background_seed = 0;
  int image_size = 64;
  double workspace_margin = 8.0;  // world bounds: [-margin, size+margin]^2

  const ArticulatedObject& object_by_name(const std::string& name) const;
  ArticulatedObject& object_by_name(const std::string& name);
  bool in_workspace(Point2 w) const;
  // 8 fixed world landmarks used as feature correspondences between frames
  std::vector<Point2> landmarks() const;
};

struct HandOverlay {
  Point2 center_world;
  double half_size_world = 2.5;
};

struct GripperOverlay {
  Point2 center_world;
  double half_size_world = 2.0;
  int rotation_class = 0;
};

struct Overlays {
  const HandOverlay* hand = nullptr;
  const GripperOverlay* gripper = nullptr;
};

Image render(const Scene& scene, const CameraPose& camera,
             const Overlays& overlays = {});
Image gripper_mask(const Scene& scene, const CameraPose& camera,
                   const GripperOverlay& gripper);

struct HandObs {
  Point2 center;     // image coords
  double half_size;  // image px
  int contact_flag = 0;
};

// per-frame object annotation (stand-in for an object detector): axis-aligned
// bounding box of the handle footprint in image coords
struct ObjectObs {
  std::string name;
  Point2 handle_center;
  double handle_half = 1.5;
};

struct Frame {
  Image image;
  std::optional<HandObs> hand;
  CameraPose camera;
  std::vector<Point2> landmarks;  // scene landmarks in this frame's coords
  std::vector<ObjectObs> objects;
};

struct EpisodeGroundTruth {
  int t_contact = -1;
  std::vector<Point2> contact_points;      // frame-0 coords
  std::vector<Point2> post_contact_track;  // frame-0 coords, t_contact..+5
  int target_object = -1;
};

struct Episode {
  int id = 0;
  std::vector<Frame> frames;
  EpisodeGroundTruth ground_truth;
};

struct EpisodeNoise {
  double contact_flip_rate = 0.0;  // spurious 1s on pre-contact hand frames
  double hand_jitter_px = 0.0;     // gaussian noise on the reported hand box
  double egomotion_amplitude = 1.0;
};

Episode script_human_episode(const Scene& scene, int target_object,
                             const EpisodeNoise& noise, Rng& rng);

struct GoalSpec {
  std::string object;
  double fraction = 0.5;  // threshold as fraction of q_max - q_min
  bool opening = true;
};

bool goal_predicate(const Scene& scene, const GoalSpec& goal);

struct RolloutRecord {
  int id = 0;
  Image initial_image;
  std::vector<Image> observations;  // k >= 2, gripper visible
  std::vector<Image> observation_masks;
  Point2 contact;                 // executed c, image coords
  std::vector<Point2> waypoints;  // executed tau, 5 relative displacements
  int rotation_choice = 0;
  Image terminal_image;  // == observations.back()
  std::vector<double> joint_displacement;  // signed delta q per object
  std::vector<bool> success;               // per configured goal
};

struct RolloutResult {
  RolloutRecord record;
  Scene scene_after;
};

RolloutResult execute_affordance(const Scene& scene, const CameraPose& camera,
                                 Point2 c, const std::vector<Point2>& tau,
                                 int rotation_choice,
                                 const std::vector<GoalSpec>& goals,
                                 double grasp_radius_px, Rng& rng);

struct WorldConfig {
  int image_size = 64;
  std::vector<std::string> objects = {"drawer", "door"};
  double layout_jitter = 2.0;
  double egomotion_amplitude = 1.0;
  double hand_jitter_px = 0.0;
  double contact_flip_rate = 0.0;
  int n_episodes = 100;
  double grasp_radius_px = 3.0;
  std::vector<GoalSpec> goals = {{"drawer0", 0.5, true}, {"door0", 0.5, true}};
};

// deterministic scene construction: fixed template per object kind with
// seeded anchor jitter
Scene make_scene(const WorldConfig& cfg, Rng& rng);

}  // namespace aff
