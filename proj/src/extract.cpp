#include "affdesk/extract.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace aff {

int detect_contact_time(const std::vector<int>& flags, int window,
                        int polyorder, double threshold) {
  const int n = static_cast<int>(flags.size());
  if (n < window) throw BadWindow("detect_contact_time: need >= window flags");

  std::vector<double> signal(flags.begin(), flags.end());
  const auto smooth = savgol_smooth(signal, window, polyorder);

  int first = -1;
  for (int i = 0; i < n; ++i)
    if (smooth[i] >= threshold - 1e-9) {
      first = i;
      break;
    }
  if (first < 0) throw NoContact("contact signal never reaches threshold");

  // maximum-likelihood step position on the raw flags near the crossing:
  // cost(t) = ones before t + zeros at/after t
  int ones_total = 0;
  for (int f : flags) ones_total += f;
  const int lo = std::max(0, first - window);
  const int hi = std::min(n - 1, first + window);
  int ones_before = 0;
  for (int i = 0; i < lo; ++i) ones_before += flags[i];

  int best_t = lo, best_cost = std::numeric_limits<int>::max();
  int best_dist = 0;
  for (int t = lo; t <= hi; ++t) {
    const int zeros_after = (n - t) - (ones_total - ones_before);
    const int cost = ones_before + zeros_after;
    const int d = std::abs(t - first);
    if (cost < best_cost || (cost == best_cost && d < best_dist)) {
      best_cost = cost;
      best_dist = d;
      best_t = t;
    }
    ones_before += flags[t];
  }
  return best_t;
}

Image box_mask(int width, int height, Point2 center, double half) {
  Image mask(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      mask.at(x, y) =
          std::max(std::abs(x - center.x), std::abs(y - center.y)) <= half
              ? 1.0
              : 0.0;
  return mask;
}

std::vector<Point2> extract_contact_points(const Frame& frame,
                                           const Image& hand_mask,
                                           const Image& object_mask) {
  (void)frame;
  if (!same_shape(hand_mask, object_mask))
    throw ShapeMismatch("extract_contact_points: mask shapes differ");
  bool any = false;
  for (double v : hand_mask.data)
    if (v > 0.5) {
      any = true;
      break;
    }
  if (!any) throw EmptyInput("extract_contact_points: empty hand mask");

  // bounding box of the object mask
  int ox0 = hand_mask.width, ox1 = -1, oy0 = hand_mask.height, oy1 = -1;
  for (int y = 0; y < object_mask.height; ++y)
    for (int x = 0; x < object_mask.width; ++x)
      if (object_mask.at(x, y) > 0.5) {
        ox0 = std::min(ox0, x);
        ox1 = std::max(ox1, x);
        oy0 = std::min(oy0, y);
        oy1 = std::max(oy1, y);
      }

  std::vector<Point2> out;
  if (ox1 < 0) return out;
  for (int y = 0; y < hand_mask.height; ++y)
    for (int x = 0; x < hand_mask.width; ++x) {
      if (hand_mask.at(x, y) <= 0.5) continue;
      bool boundary = false;
      for (int dy = -1; dy <= 1 && !boundary; ++dy)
        for (int dx = -1; dx <= 1 && !boundary; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int nx = x + dx, ny = y + dy;
          if (!hand_mask.inside(nx, ny) || hand_mask.at(nx, ny) <= 0.5)
            boundary = true;
        }
      if (boundary && x >= ox0 && x <= ox1 && y >= oy0 && y <= oy1)
        out.push_back({static_cast<double>(x), static_cast<double>(y)});
    }
  return out;
}

std::vector<Point2> compensate_egomotion(
    const std::vector<std::pair<int, Point2>>& points_per_frame,
    const std::vector<Homography>& homographies) {
  std::vector<Point2> out;
  out.reserve(points_per_frame.size());
  for (const auto& [idx, p] : points_per_frame) {
    if (idx < 0 || idx >= static_cast<int>(homographies.size()))
      throw EmptyInput("compensate_egomotion: no homography for frame " +
                       std::to_string(idx));
    out.push_back(apply_homography(homographies[idx], p));
  }
  return out;
}

ReferenceFrame select_reference_frame(const Episode& episode) {
  int entry = -1;
  for (size_t i = 0; i < episode.frames.size(); ++i)
    if (episode.frames[i].hand) {
      entry = static_cast<int>(i);
      break;
    }
  if (entry > 0) return {entry - 1, CropPolicy::None};
  if (entry < 0) return {0, CropPolicy::None};  // no hand at all
  // hand present from the start
  if (episode.frames[0].hand->contact_flag)
    throw DiscardEpisode("hand already in contact at frame 0");
  return {0, CropPolicy::MaskHand};
}

Image reference_image(const Episode& episode, const ReferenceFrame& ref) {
  Image img = episode.frames[ref.index].image;
  if (ref.policy == CropPolicy::MaskHand && episode.frames[ref.index].hand) {
    const HandObs& hand = *episode.frames[ref.index].hand;
    std::vector<double> outside;
    std::vector<std::pair<int, int>> inside;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        if (std::max(std::abs(x - hand.center.x),
                     std::abs(y - hand.center.y)) <= hand.half_size)
          inside.emplace_back(x, y);
        else
          outside.push_back(img.at(x, y));
      }
    double fill = 0.5;
    if (!outside.empty()) {
      std::nth_element(outside.begin(), outside.begin() + outside.size() / 2,
                       outside.end());
      fill = outside[outside.size() / 2];
    }
    for (auto [x, y] : inside) img.at(x, y) = fill;
  }
  return img;
}

std::vector<Homography> episode_homographies(const Episode& episode,
                                             int reference,
                                             HomographyMode mode) {
  std::vector<Homography> out;
  out.reserve(episode.frames.size());
  const Frame& ref = episode.frames[reference];
  for (const Frame& f : episode.frames) {
    if (mode == HomographyMode::ExactPose) {
      out.push_back(homography_between(f.camera, ref.camera));
    } else {
      std::vector<std::pair<Point2, Point2>> corr;
      for (size_t i = 0; i < f.landmarks.size(); ++i)
        corr.emplace_back(f.landmarks[i], ref.landmarks[i]);
      out.push_back(estimate_homography(corr));
    }
  }
  return out;
}

AffordanceLabel extract_label(const Episode& episode,
                              const ExtractConfig& cfg) {
  if (episode.frames.empty()) throw EmptyInput("extract_label: no frames");
  const int n = static_cast<int>(episode.frames.size());

  std::vector<int> flags(n, 0);
  for (int i = 0; i < n; ++i)
    if (episode.frames[i].hand) flags[i] = episode.frames[i].hand->contact_flag;

  const int t_c =
      detect_contact_time(flags, cfg.window, cfg.polyorder, cfg.threshold);
  const ReferenceFrame ref = select_reference_frame(episode);
  if (t_c + 5 >= n)
    throw DiscardEpisode("fewer than 5 post-contact frames");

  const Frame& contact_frame = episode.frames[t_c];
  if (!contact_frame.hand)
    throw DiscardEpisode("no hand observation at detected contact time");
  const HandObs& hand = *contact_frame.hand;
  const int W = contact_frame.image.width;
  const int H = contact_frame.image.height;

  // pick the annotated object whose handle bbox intersects the hand box
  const ObjectObs* target = nullptr;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& obj : contact_frame.objects) {
    const double gap_x = std::abs(obj.handle_center.x - hand.center.x) -
                         (obj.handle_half + hand.half_size);
    const double gap_y = std::abs(obj.handle_center.y - hand.center.y) -
                         (obj.handle_half + hand.half_size);
    if (gap_x <= 0 && gap_y <= 0) {
      const double d = dist(obj.handle_center, hand.center);
      if (d < best_d) {
        best_d = d;
        target = &obj;
      }
    }
  }
  if (!target)
    throw DiscardEpisode("no object handle intersects the hand at contact");

  const Image hand_mask = box_mask(W, H, hand.center, hand.half_size);
  const Image object_mask =
      box_mask(W, H, target->handle_center, target->handle_half);
  const std::vector<Point2> contact_pts =
      extract_contact_points(contact_frame, hand_mask, object_mask);
  if (contact_pts.empty())
    throw DiscardEpisode("no contact points at the hand boundary");

  const auto homs = episode_homographies(episode, ref.index, cfg.homography);

  std::vector<std::pair<int, Point2>> tagged;
  tagged.reserve(contact_pts.size());
  for (const Point2& p : contact_pts) tagged.emplace_back(t_c, p);
  const std::vector<Point2> pts_ref = compensate_egomotion(tagged, homs);

  // hand-center track over the contact frame and 5 post-contact frames
  std::vector<std::pair<int, Point2>> track;
  for (int i = 0; i <= 5; ++i) {
    const Frame& f = episode.frames[t_c + i];
    if (!f.hand) throw DiscardEpisode("hand lost during post-contact track");
    track.emplace_back(t_c + i, f.hand->center);
  }
  const std::vector<Point2> track_ref = compensate_egomotion(track, homs);

  AffordanceLabel label;
  label.episode_id = episode.id;
  label.reference_frame = ref.index;
  const double fixed_std = cfg.fixed_std_frac * W;
  const std::uint64_t seed =
      cfg.gmm_seed ^ (0x9e3779b97f4a7c15ULL * (episode.id + 1));
  label.contact_gmm = fit_gmm_em(pts_ref, cfg.gmm_k, fixed_std,
                                 cfg.gmm_max_iters, cfg.gmm_tol, seed)
                          .gmm;
  for (int i = 1; i <= 5; ++i)
    label.waypoints.push_back(track_ref[i] - track_ref[0]);

  // discard anything that leaves the reference frame
  Point2 centroid{0, 0};
  for (size_t k = 0; k < label.contact_gmm.means.size(); ++k) {
    const Point2& m = label.contact_gmm.means[k];
    if (m.x < 0 || m.y < 0 || m.x > W - 1 || m.y > H - 1)
      throw OutOfFrame("contact mean outside the reference frame");
    centroid = centroid + label.contact_gmm.weights[k] * m;
  }
  for (const Point2& w : label.waypoints) {
    const Point2 abs_pt = centroid + w;
    if (abs_pt.x < 0 || abs_pt.y < 0 || abs_pt.x > W - 1 || abs_pt.y > H - 1)
      throw OutOfFrame("waypoint leaves the reference frame");
  }
  return label;
}

std::vector<TrainingSample> make_training_samples(
    const std::vector<LabeledImage>& labeled, double crop_fraction,
    int samples_per_label, Rng& rng) {
  if (crop_fraction <= 0.0 || crop_fraction > 1.0)
    throw ConfigError("crop_fraction must lie in (0, 1]");

  std::vector<TrainingSample> out;
  for (const auto& li : labeled) {
    const Image& img = li.reference;
    const int side =
        std::min(img.width, img.height) == 0
            ? 0
            : static_cast<int>(
                  std::lround(crop_fraction * std::min(img.width, img.height)));
    if (side < 1) throw ConfigError("crop side must be at least 1 px");

    Point2 lo{std::numeric_limits<double>::infinity(),
              std::numeric_limits<double>::infinity()};
    Point2 hi{-lo.x, -lo.y};
    for (const Point2& m : li.label.contact_gmm.means) {
      lo.x = std::min(lo.x, m.x);
      lo.y = std::min(lo.y, m.y);
      hi.x = std::max(hi.x, m.x);
      hi.y = std::max(hi.y, m.y);
    }
    if (hi.x - lo.x > side - 1 || hi.y - lo.y > side - 1)
      throw CropInfeasible("contact means spread wider than the crop side");

    const int ox_lo = std::max(0, static_cast<int>(std::ceil(hi.x)) - side + 1);
    const int ox_hi =
        std::min(img.width - side, static_cast<int>(std::floor(lo.x)));
    const int oy_lo = std::max(0, static_cast<int>(std::ceil(hi.y)) - side + 1);
    const int oy_hi =
        std::min(img.height - side, static_cast<int>(std::floor(lo.y)));
    if (ox_lo > ox_hi || oy_lo > oy_hi)
      throw CropInfeasible("no crop placement contains all contact means");

    for (int s = 0; s < samples_per_label; ++s) {
      const int ox =
          ox_lo + static_cast<int>(rng.uniform_int(ox_hi - ox_lo + 1));
      const int oy =
          oy_lo + static_cast<int>(rng.uniform_int(oy_hi - oy_lo + 1));
      TrainingSample sample;
      sample.crop = Image(side, side);
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
          sample.crop.at(x, y) = img.at(ox + x, oy + y);
      sample.crop_offset = {static_cast<double>(ox), static_cast<double>(oy)};
      for (const Point2& m : li.label.contact_gmm.means)
        sample.target_means.push_back(m - sample.crop_offset);
      sample.target_weights = li.label.contact_gmm.weights;
      sample.target_waypoints = li.label.waypoints;
      out.push_back(std::move(sample));
    }
  }
  return out;
}

}  // namespace aff
