#pragma once

#include <array>
#include <utility>
#include <vector>

#include "affdesk/common.hpp"

namespace aff {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

inline Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
inline Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
inline Point2 operator*(double s, Point2 p) { return {s * p.x, s * p.y}; }
inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Point2 p) { return std::sqrt(p.x * p.x + p.y * p.y); }
inline double dist(Point2 a, Point2 b) { return norm(a - b); }

// 3x3 projective transform of the plane, row-major. Always invertible;
// normalized so m[8] == 1 when that entry is nonzero, else unit Frobenius
// norm.
class Homography {
 public:
  static Homography identity();
  static Homography translation(double dx, double dy);
  // rigid-plus-scale map: p -> scale * R(angle) * p + t
  static Homography similarity(double scale, double angle, Point2 t);
  static Homography from_matrix(const std::array<double, 9>& m);

  const std::array<double, 9>& matrix() const { return m_; }
  Homography inverse() const;

 private:
  Homography() = default;
  std::array<double, 9> m_{1, 0, 0, 0, 1, 0, 0, 0, 1};
};

Point2 apply_homography(const Homography& h, Point2 p);
Homography compose(const Homography& a, const Homography& b);  // a after b

// DLT with Hartley normalization; needs >= 4 correspondences in general
// position. Pairs are (source, destination).
Homography estimate_homography(
    const std::vector<std::pair<Point2, Point2>>& correspondences);

// Isotropic-covariance Gaussian mixture over the image plane.
struct Gmm2D {
  std::vector<Point2> means;
  std::vector<double> weights;  // nonnegative, sums to 1
  double fixed_std = 1.0;
};

struct GmmFit {
  Gmm2D gmm;
  std::vector<double> log_likelihood;  // one entry per EM iteration
};

// EM with the component std held fixed: only means and weights update.
// Seeded by farthest-point initialization; k is clamped to the number of
// distinct input points.
GmmFit fit_gmm_em(const std::vector<Point2>& points, int k, double fixed_std,
                  int max_iters, double tol, std::uint64_t seed);

Point2 sample_gmm(const Gmm2D& gmm, Rng& rng);
double gmm_log_likelihood(const Gmm2D& gmm, const std::vector<Point2>& points);

// K nonnegative H×W grids (heatmap channels)
struct HeatmapStack {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> v;

  HeatmapStack() = default;
  HeatmapStack(int k, int h, int w)
      : channels(k), height(h), width(w),
        v(static_cast<size_t>(k) * h * w, 0.0) {}

  double& at(int c, int y, int x) {
    return v[(static_cast<size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return v[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

struct SoftmaxResult {
  Image probabilities;  // sums to 1
  Point2 expected;      // probability-weighted (x, y) = (col, row)
};

SoftmaxResult spatial_softmax(const Image& logits, double temperature = 1.0);

// Savitzky-Golay smoothing with odd (point-reflection) end padding, so
// constants and linear ramps pass through unchanged.
std::vector<double> savgol_smooth(const std::vector<double>& signal, int window,
                                  int polyorder);
std::vector<double> savgol_coefficients(int window, int polyorder);

}  // namespace aff
