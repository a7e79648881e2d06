#include "affdesk/world.hpp"

#include <algorithm>
#include <cmath>

namespace aff {

namespace {

constexpr double kPi = 3.14159265358979323846;

Point2 perp(Point2 a) { return {-a.y, a.x}; }

Point2 normalize(Point2 a) {
  const double n = norm(a);
  if (n < 1e-12) throw DegenerateConfiguration("zero-length direction");
  return {a.x / n, a.y / n};
}

Point2 rotate(Point2 p, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * p.x - s * p.y, s * p.x + c * p.y};
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double cell_noise(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
  std::uint64_t h = mix64(seed ^ mix64(static_cast<std::uint64_t>(ix) * 2654435761ULL +
                                       static_cast<std::uint64_t>(iy) * 40503ULL));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// smooth value-noise background in [0.25, 0.45]
double background_value(Point2 w, std::uint64_t seed) {
  const double cell = 8.0;
  const double fx = w.x / cell, fy = w.y / cell;
  const std::int64_t ix = static_cast<std::int64_t>(std::floor(fx));
  const std::int64_t iy = static_cast<std::int64_t>(std::floor(fy));
  const double tx = fx - ix, ty = fy - iy;
  const double v00 = cell_noise(ix, iy, seed);
  const double v10 = cell_noise(ix + 1, iy, seed);
  const double v01 = cell_noise(ix, iy + 1, seed);
  const double v11 = cell_noise(ix + 1, iy + 1, seed);
  const double v = (1 - tx) * (1 - ty) * v00 + tx * (1 - ty) * v10 +
                   (1 - tx) * ty * v01 + tx * ty * v11;
  return 0.25 + 0.2 * v;
}

constexpr double kHandleHalf = 1.5;  // world units
constexpr double kHandleValue = 0.9;
constexpr double kHandValue = 0.75;
constexpr double kGripperValue = 0.95;
constexpr double kGripperStripe = 0.3;

bool in_handle(const ArticulatedObject& obj, Point2 w) {
  if (obj.kind == JointKind::Prismatic) {
    const Point2 h = obj.handle_world();
    return std::max(std::abs(w.x - h.x), std::abs(w.y - h.y)) <= kHandleHalf;
  }
  // revolute: square rotates with the joint
  const double theta0 =
      std::atan2(obj.handle_offset.y, obj.handle_offset.x);
  const Point2 v = rotate(w - obj.anchor, -(theta0 + obj.q));
  const double len = norm(obj.handle_offset);
  return std::max(std::abs(v.x - len), std::abs(v.y)) <= kHandleHalf;
}

bool in_body(const ArticulatedObject& obj, Point2 w) {
  if (obj.kind == JointKind::Prismatic) {
    const Point2 axis = normalize(obj.handle_offset);
    const Point2 center = obj.anchor + obj.q * axis;
    const Point2 u = w - center;
    const double along = dot(u, axis);
    const double across = dot(u, perp(axis));
    return std::abs(along) <= 3.0 && std::abs(across) <= 6.0;
  }
  const double theta0 =
      std::atan2(obj.handle_offset.y, obj.handle_offset.x);
  const Point2 v = rotate(w - obj.anchor, -(theta0 + obj.q));
  const double len = norm(obj.handle_offset);
  return v.x >= 0.0 && v.x <= len + kHandleHalf && std::abs(v.y) <= 1.8;
}

double scene_value(const Scene& scene, Point2 w) {
  double v = background_value(w, scene.background_seed);
  for (const Point2& lm : scene.landmarks())
    if (dist(w, lm) <= 0.9) v = 0.12;
  for (const auto& obj : scene.objects) {
    if (in_body(obj, w))
      v = obj.kind == JointKind::Prismatic ? 0.55 : 0.5;
    if (in_handle(obj, w)) v = kHandleValue;
  }
  return v;
}

bool in_image_square(const CameraPose& cam, Point2 center_world,
                     double half_world, int px, int py) {
  const Point2 c = cam.world_to_image(center_world);
  const double half = half_world * cam.scale;
  return std::max(std::abs(px - c.x), std::abs(py - c.y)) <= half;
}

}  // namespace

Point2 ArticulatedObject::handle_world() const {
  if (kind == JointKind::Prismatic)
    return anchor + handle_offset + q * normalize(handle_offset);
  return anchor + rotate(handle_offset, q);
}

Point2 ArticulatedObject::handle_axis() const {
  if (kind == JointKind::Prismatic) return normalize(handle_offset);
  return normalize(perp(handle_world() - anchor));
}

void ArticulatedObject::set_q(double value) {
  q = std::clamp(value, q_min, q_max);
}

Point2 CameraPose::world_to_image(Point2 w) const {
  return scale * rotate(w, angle) + t;
}

Point2 CameraPose::image_to_world(Point2 i) const {
  return rotate((1.0 / scale) * (i - t), -angle);
}

Homography CameraPose::to_homography() const {
  return Homography::similarity(scale, angle, t);
}

Homography homography_between(const CameraPose& from, const CameraPose& to) {
  return compose(to.to_homography(), from.to_homography().inverse());
}

const ArticulatedObject& Scene::object_by_name(const std::string& n) const {
  for (const auto& o : objects)
    if (o.name == n) return o;
  throw UnknownObject("no object named '" + n + "'");
}

ArticulatedObject& Scene::object_by_name(const std::string& n) {
  for (auto& o : objects)
    if (o.name == n) return o;
  throw UnknownObject("no object named '" + n + "'");
}

bool Scene::in_workspace(Point2 w) const {
  const double lo = -workspace_margin;
  const double hi = image_size + workspace_margin;
  return w.x >= lo && w.x <= hi && w.y >= lo && w.y <= hi;
}

std::vector<Point2> Scene::landmarks() const {
  const double s = image_size;
  return {{0.125 * s, 0.125 * s}, {0.875 * s, 0.125 * s},
          {0.125 * s, 0.875 * s}, {0.875 * s, 0.875 * s},
          {0.5 * s, 0.09 * s},    {0.5 * s, 0.91 * s},
          {0.09 * s, 0.5 * s},    {0.91 * s, 0.5 * s}};
}

Image render(const Scene& scene, const CameraPose& camera,
             const Overlays& overlays) {
  Image img(scene.image_size, scene.image_size);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const Point2 w =
          camera.image_to_world({static_cast<double>(x), static_cast<double>(y)});
      double v = scene_value(scene, w);
      if (overlays.hand &&
          in_image_square(camera, overlays.hand->center_world,
                          overlays.hand->half_size_world, x, y))
        v = kHandValue;
      if (overlays.gripper &&
          in_image_square(camera, overlays.gripper->center_world,
                          overlays.gripper->half_size_world, x, y)) {
        // orientation stripe encodes the rotation class
        const Point2 c = camera.world_to_image(overlays.gripper->center_world);
        const double phi = overlays.gripper->rotation_class * kPi / 4.0;
        const double d =
            (x - c.x) * std::cos(phi) + (y - c.y) * std::sin(phi);
        v = std::abs(d) <= 0.7 ? kGripperStripe : kGripperValue;
      }
      img.at(x, y) = v;
    }
  return img;
}

Image gripper_mask(const Scene& scene, const CameraPose& camera,
                   const GripperOverlay& gripper) {
  Image mask(scene.image_size, scene.image_size);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      mask.at(x, y) = in_image_square(camera, gripper.center_world,
                                      gripper.half_size_world, x, y)
                          ? 1.0
                          : 0.0;
  return mask;
}

bool goal_predicate(const Scene& scene, const GoalSpec& goal) {
  const auto& obj = scene.object_by_name(goal.object);
  const double thr = obj.q_min + goal.fraction * (obj.q_max - obj.q_min);
  return goal.opening ? obj.q >= thr : obj.q <= thr;
}

namespace {

// camera drift that is exactly the identity at t=0, so frame-0 coordinates
// are shared across different drift seeds
struct CameraDrift {
  double amp;
  double f[4];
  double phase[4];

  CameraDrift(double amplitude, Rng& rng) : amp(amplitude) {
    for (int i = 0; i < 4; ++i) {
      f[i] = 0.2 + 0.15 * rng.uniform();
      phase[i] = rng.uniform(0.0, 2.0 * kPi);
    }
  }

  CameraPose pose(int t) const {
    auto osc = [&](int i) {
      return std::sin(f[i] * t + phase[i]) - std::sin(phase[i]);
    };
    CameraPose p;
    p.t = {amp * osc(0), amp * osc(1)};
    p.angle = 0.01 * amp * osc(2);
    p.scale = 1.0 + 0.005 * amp * osc(3);
    return p;
  }
};

Point2 round_to_axis(Point2 v) {
  if (std::abs(v.x) >= std::abs(v.y)) return {v.x >= 0 ? 1.0 : -1.0, 0.0};
  return {0.0, v.y >= 0 ? 1.0 : -1.0};
}

// where the hand sits relative to the handle while grasping: box edge
// passes through the handle so boundary pixels intersect its footprint
Point2 grasp_offset(const ArticulatedObject& obj) {
  const Point2 dir = obj.kind == JointKind::Prismatic
                         ? perp(normalize(obj.handle_offset))
                         : normalize(obj.handle_offset);
  return 2.5 * round_to_axis(dir);
}

ObjectObs observe_object(const ArticulatedObject& obj, const CameraPose& cam) {
  // image-space AABB of the handle square (which may be rotated for
  // revolute joints and by the camera)
  std::vector<Point2> corners;
  if (obj.kind == JointKind::Prismatic) {
    const Point2 h = obj.handle_world();
    for (double sx : {-1.0, 1.0})
      for (double sy : {-1.0, 1.0})
        corners.push_back({h.x + sx * kHandleHalf, h.y + sy * kHandleHalf});
  } else {
    const double theta0 = std::atan2(obj.handle_offset.y, obj.handle_offset.x);
    const double len = norm(obj.handle_offset);
    for (double sx : {-1.0, 1.0})
      for (double sy : {-1.0, 1.0})
        corners.push_back(obj.anchor +
                          rotate({len + sx * kHandleHalf, sy * kHandleHalf},
                                 theta0 + obj.q));
  }
  Point2 lo = cam.world_to_image(corners[0]), hi = lo;
  for (const Point2& c : corners) {
    const Point2 p = cam.world_to_image(c);
    lo.x = std::min(lo.x, p.x);
    lo.y = std::min(lo.y, p.y);
    hi.x = std::max(hi.x, p.x);
    hi.y = std::max(hi.y, p.y);
  }
  ObjectObs obs;
  obs.name = obj.name;
  obs.handle_center = 0.5 * (lo + hi);
  obs.handle_half = 0.5 * std::max(hi.x - lo.x, hi.y - lo.y);
  return obs;
}

std::vector<Point2> box_boundary_pixels(Point2 center, double half, int size) {
  std::vector<Point2> out;
  const int x0 = std::max(0, static_cast<int>(std::ceil(center.x - half)));
  const int x1 = std::min(size - 1, static_cast<int>(std::floor(center.x + half)));
  const int y0 = std::max(0, static_cast<int>(std::ceil(center.y - half)));
  const int y1 = std::min(size - 1, static_cast<int>(std::floor(center.y + half)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const bool interior = x > x0 && x < x1 && y > y0 && y < y1;
      if (!interior)
        out.push_back({static_cast<double>(x), static_cast<double>(y)});
    }
  return out;
}

}  // namespace

Episode script_human_episode(const Scene& scene_in, int target_object,
                             const EpisodeNoise& noise, Rng& rng) {
  if (target_object < 0 ||
      target_object >= static_cast<int>(scene_in.objects.size()))
    throw UnknownObject("episode target object out of range");

  Rng act_rng = rng.split(0);
  Rng cam_rng = rng.split(1);
  Rng noise_rng = rng.split(2);

  const int n_pre = 2 + static_cast<int>(act_rng.uniform_int(3));
  const int n_app = 4 + static_cast<int>(act_rng.uniform_int(4));
  const int n_drag = 6 + static_cast<int>(act_rng.uniform_int(3));
  const double q_frac = 0.6 + 0.35 * act_rng.uniform();
  const int t_contact = n_pre + n_app;
  const int total = t_contact + n_drag + 1;

  CameraDrift drift(noise.egomotion_amplitude, cam_rng);

  Scene scene = scene_in;
  ArticulatedObject& target = scene.objects[target_object];
  const double q_start = target.q;
  const double q_end = q_start + q_frac * (target.q_max - q_start);
  const Point2 d = grasp_offset(target);
  const Point2 grasp_pos = target.handle_world() + d;
  const double half_size = scene_in.image_size / 2.0;
  const Point2 toward_center =
      normalize(Point2{half_size, half_size} - grasp_pos);
  Point2 entry = grasp_pos + 16.0 * toward_center +
                 Point2{act_rng.uniform(-3.0, 3.0), act_rng.uniform(-3.0, 3.0)};
  entry.x = std::clamp(entry.x, 4.0, scene_in.image_size - 4.0);
  entry.y = std::clamp(entry.y, 4.0, scene_in.image_size - 4.0);

  Episode ep;
  ep.ground_truth.t_contact = t_contact;
  ep.ground_truth.target_object = target_object;

  std::vector<Point2> clean_centers_world(total);
  const CameraPose cam0 = drift.pose(0);

  for (int t = 0; t < total; ++t) {
    const CameraPose cam = drift.pose(t);
    Frame frame;
    frame.camera = cam;

    bool hand_present = t >= n_pre;
    Point2 hand_world;
    if (hand_present) {
      if (t < t_contact) {
        const double s = static_cast<double>(t - n_pre + 1) / (n_app + 1);
        const double ease = s * s * (3.0 - 2.0 * s);
        hand_world = entry + ease * (grasp_pos - entry);
      } else {
        const double frac = static_cast<double>(t - t_contact) / n_drag;
        target.set_q(q_start + frac * (q_end - q_start));
        hand_world = target.handle_world() + d;
      }
      clean_centers_world[t] = hand_world;
    }

    HandOverlay hand{hand_world, 2.5};
    Overlays ov;
    if (hand_present) ov.hand = &hand;
    frame.image = render(scene, cam, ov);

    if (hand_present) {
      HandObs obs;
      obs.center = cam.world_to_image(hand_world);
      if (noise.hand_jitter_px > 0.0) {
        obs.center.x += noise_rng.normal(0.0, noise.hand_jitter_px);
        obs.center.y += noise_rng.normal(0.0, noise.hand_jitter_px);
      }
      obs.half_size = 2.5 * cam.scale;
      int flag = t >= t_contact ? 1 : 0;
      if (flag == 0 && noise.contact_flip_rate > 0.0 &&
          noise_rng.uniform() < noise.contact_flip_rate)
        flag = 1;
      obs.contact_flag = flag;
      frame.hand = obs;
    }

    frame.landmarks.reserve(8);
    for (const Point2& lm : scene.landmarks())
      frame.landmarks.push_back(cam.world_to_image(lm));
    for (const auto& obj : scene.objects)
      frame.objects.push_back(observe_object(obj, cam));

    ep.frames.push_back(std::move(frame));
  }

  // ground truth in frame-0 coordinates, from clean (pre-noise) geometry
  {
    const CameraPose cam_tc = drift.pose(t_contact);
    // target handle footprint at the contact instant
    Scene contact_scene = scene_in;
    contact_scene.objects[target_object].set_q(q_start);
    const ArticulatedObject& tobj = contact_scene.objects[target_object];
    const Point2 box_center = cam_tc.world_to_image(clean_centers_world[t_contact]);
    const double box_half = 2.5 * cam_tc.scale;
    for (const Point2& p :
         box_boundary_pixels(box_center, box_half, scene.image_size)) {
      if (in_handle(tobj, cam_tc.image_to_world(p)))
        ep.ground_truth.contact_points.push_back(
            cam0.world_to_image(cam_tc.image_to_world(p)));
    }
    for (int i = 0; i <= 5; ++i)
      ep.ground_truth.post_contact_track.push_back(
          cam0.world_to_image(clean_centers_world[t_contact + i]));
  }
  return ep;
}

RolloutResult execute_affordance(const Scene& scene_in,
                                 const CameraPose& camera, Point2 c,
                                 const std::vector<Point2>& tau,
                                 int rotation_choice,
                                 const std::vector<GoalSpec>& goals,
                                 double grasp_radius_px, Rng& rng) {
  (void)rng;  // execution itself is noise-free; kept for interface stability
  if (tau.size() != 5)
    throw ShapeMismatch("execute_affordance: tau must have 5 waypoints");
  if (c.x < 0 || c.y < 0 || c.x >= scene_in.image_size ||
      c.y >= scene_in.image_size)
    throw OutOfFrame("execute_affordance: contact point outside frame");
  const Point2 w_c = camera.image_to_world(c);
  Scene scene = scene_in;
  if (!scene.in_workspace(w_c))
    throw OutOfWorkspace("execute_affordance: contact outside workspace");

  RolloutRecord rec;
  rec.contact = c;
  rec.waypoints = tau;
  rec.rotation_choice = rotation_choice;
  rec.initial_image = render(scene, camera, {});

  // grasp test: image-space proximity to a handle plus matching rotation
  int grasped = -1;
  double best = grasp_radius_px;
  for (size_t i = 0; i < scene.objects.size(); ++i) {
    const double d =
        dist(camera.world_to_image(scene.objects[i].handle_world()), c);
    if (d <= best && scene.objects[i].rotation_class == rotation_choice) {
      best = d;
      grasped = static_cast<int>(i);
    }
  }

  std::vector<double> q_before;
  for (const auto& o : scene.objects) q_before.push_back(o.q);

  Point2 grip_offset{0, 0};
  double q_grasp = 0.0;
  Point2 h_grasp{0, 0};
  if (grasped >= 0) {
    h_grasp = scene.objects[grasped].handle_world();
    grip_offset = w_c - h_grasp;
    q_grasp = scene.objects[grasped].q;
  }

  auto observe = [&](Point2 gripper_world) {
    GripperOverlay g{gripper_world, 2.0, rotation_choice};
    Overlays ov;
    ov.gripper = &g;
    rec.observations.push_back(render(scene, camera, ov));
    rec.observation_masks.push_back(gripper_mask(scene, camera, g));
  };

  observe(w_c);
  for (int i = 0; i < 5; ++i) {
    const Point2 target_world = camera.image_to_world(c + tau[i]);
    if (grasped >= 0) {
      ArticulatedObject& obj = scene.objects[grasped];
      const Point2 h_star = h_grasp + (target_world - w_c);
      if (obj.kind == JointKind::Prismatic) {
        const Point2 axis = normalize(obj.handle_offset);
        obj.set_q(q_grasp + dot(h_star - h_grasp, axis));
      } else {
        const Point2 r = h_star - obj.anchor;
        if (norm(r) > 1e-9) {
          const double theta0 =
              std::atan2(obj.handle_offset.y, obj.handle_offset.x);
          double ang = std::atan2(r.y, r.x) - theta0;
          while (ang > kPi) ang -= 2.0 * kPi;
          while (ang <= -kPi) ang += 2.0 * kPi;
          obj.set_q(ang);
        }
      }
      observe(obj.handle_world() + grip_offset);
    } else {
      observe(target_world);
    }
  }

  rec.terminal_image = rec.observations.back();
  for (size_t i = 0; i < scene.objects.size(); ++i)
    rec.joint_displacement.push_back(scene.objects[i].q - q_before[i]);
  for (const auto& g : goals) rec.success.push_back(goal_predicate(scene, g));
  return {std::move(rec), std::move(scene)};
}

Scene make_scene(const WorldConfig& cfg, Rng& rng) {
  Scene scene;
  scene.image_size = cfg.image_size;
  scene.background_seed = rng.split(0).uniform_int(UINT64_MAX >> 1);
  Rng jit = rng.split(1);

  int drawer_n = 0, door_n = 0, slider_n = 0, lid_n = 0;
  for (const auto& kind : cfg.objects) {
    ArticulatedObject obj;
    const double jx = jit.uniform(-cfg.layout_jitter, cfg.layout_jitter);
    const double jy = jit.uniform(-cfg.layout_jitter, cfg.layout_jitter);
    if (kind == "drawer") {
      obj.kind = JointKind::Prismatic;
      obj.name = "drawer" + std::to_string(drawer_n++);
      obj.anchor = {18.0 + jx, 46.0 + jy};
      obj.handle_offset = {0.0, -8.0};
      obj.q_min = 0.0;
      obj.q_max = 10.0;
      obj.rotation_class = 0;
    } else if (kind == "door") {
      obj.kind = JointKind::Revolute;
      obj.name = "door" + std::to_string(door_n++);
      obj.anchor = {40.0 + jx, 18.0 + jy};
      obj.handle_offset = {10.0, 0.0};
      obj.q_min = 0.0;
      obj.q_max = 0.9;
      obj.rotation_class = 1;
    } else if (kind == "slider") {
      obj.kind = JointKind::Prismatic;
      obj.name = "slider" + std::to_string(slider_n++);
      obj.anchor = {46.0 + jx, 52.0 + jy};
      obj.handle_offset = {-8.0, 0.0};
      obj.q_min = 0.0;
      obj.q_max = 10.0;
      obj.rotation_class = 2;
    } else if (kind == "lid") {
      obj.kind = JointKind::Revolute;
      obj.name = "lid" + std::to_string(lid_n++);
      obj.anchor = {52.0 + jx, 42.0 + jy};
      obj.handle_offset = {0.0, -7.0};
      obj.q_min = 0.0;
      obj.q_max = 0.8;
      obj.rotation_class = 2;
    } else {
      throw ConfigError("unknown object kind: " + kind);
    }
    scene.objects.push_back(obj);
  }
  return scene;
}

}  // namespace aff
