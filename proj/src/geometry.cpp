#include "affdesk/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace aff {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::array<double, 9> normalized(std::array<double, 9> m) {
  if (std::abs(m[8]) > 1e-12) {
    for (auto& v : m) v /= m[8];
    m[8] = 1.0;
  } else {
    double fro = 0.0;
    for (double v : m) fro += v * v;
    fro = std::sqrt(fro);
    if (fro < 1e-300) throw DegenerateProjection("zero homography matrix");
    for (auto& v : m) v /= fro;
  }
  return m;
}

double det3(const std::array<double, 9>& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) -
         m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

}  // namespace

Homography Homography::identity() { return Homography(); }

Homography Homography::translation(double dx, double dy) {
  return from_matrix({1, 0, dx, 0, 1, dy, 0, 0, 1});
}

Homography Homography::similarity(double scale, double angle, Point2 t) {
  const double c = scale * std::cos(angle);
  const double s = scale * std::sin(angle);
  return from_matrix({c, -s, t.x, s, c, t.y, 0, 0, 1});
}

Homography Homography::from_matrix(const std::array<double, 9>& m) {
  Homography h;
  h.m_ = normalized(m);
  if (std::abs(det3(h.m_)) < 1e-12)
    throw DegenerateProjection("homography is not invertible");
  return h;
}

Homography Homography::inverse() const {
  const auto& m = m_;
  const double d = det3(m);
  std::array<double, 9> inv{
      m[4] * m[8] - m[5] * m[7], m[2] * m[7] - m[1] * m[8],
      m[1] * m[5] - m[2] * m[4], m[5] * m[6] - m[3] * m[8],
      m[0] * m[8] - m[2] * m[6], m[2] * m[3] - m[0] * m[5],
      m[3] * m[7] - m[4] * m[6], m[1] * m[6] - m[0] * m[7],
      m[0] * m[4] - m[1] * m[3]};
  for (auto& v : inv) v /= d;
  return from_matrix(inv);
}

Point2 apply_homography(const Homography& h, Point2 p) {
  const auto& m = h.matrix();
  const double w = m[6] * p.x + m[7] * p.y + m[8];
  if (std::abs(w) < 1e-12)
    throw DegenerateProjection("point maps to the line at infinity");
  return {(m[0] * p.x + m[1] * p.y + m[2]) / w,
          (m[3] * p.x + m[4] * p.y + m[5]) / w};
}

Homography compose(const Homography& a, const Homography& b) {
  const auto& A = a.matrix();
  const auto& B = b.matrix();
  std::array<double, 9> c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[3 * i + j] += A[3 * i + k] * B[3 * k + j];
  return Homography::from_matrix(c);
}

namespace {

struct Normalizer {
  Point2 centroid;
  double scale;  // multiplied after centering
};

Normalizer normalizer_for(const std::vector<Point2>& pts) {
  Point2 c{0, 0};
  for (const auto& p : pts) c = c + p;
  c = (1.0 / pts.size()) * c;
  double mean_d = 0.0;
  for (const auto& p : pts) mean_d += dist(p, c);
  mean_d /= pts.size();
  const double s = mean_d > 1e-12 ? std::sqrt(2.0) / mean_d : 1.0;
  return {c, s};
}

Homography to_homography(const Normalizer& n) {
  return Homography::from_matrix({n.scale, 0, -n.scale * n.centroid.x, 0,
                                  n.scale, -n.scale * n.centroid.y, 0, 0, 1});
}

}  // namespace

Homography estimate_homography(
    const std::vector<std::pair<Point2, Point2>>& correspondences) {
  const size_t n = correspondences.size();
  if (n < 4)
    throw InsufficientCorrespondences(
        "homography estimation needs at least 4 correspondences, got " +
        std::to_string(n));

  std::vector<Point2> src(n), dst(n);
  for (size_t i = 0; i < n; ++i) {
    src[i] = correspondences[i].first;
    dst[i] = correspondences[i].second;
  }
  const Normalizer ns = normalizer_for(src);
  const Normalizer nd = normalizer_for(dst);

  Eigen::MatrixXd A(2 * n, 9);
  for (size_t i = 0; i < n; ++i) {
    const double x = ns.scale * (src[i].x - ns.centroid.x);
    const double y = ns.scale * (src[i].y - ns.centroid.y);
    const double u = nd.scale * (dst[i].x - nd.centroid.x);
    const double v = nd.scale * (dst[i].y - nd.centroid.y);
    A.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    A.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // rank must be 8: a second vanishing singular value means the points do
  // not pin down a unique plane transform (e.g. all collinear)
  if (sv(sv.size() - 2) < 1e-9 * sv(0))
    throw DegenerateConfiguration(
        "correspondences do not determine a unique homography");
  Eigen::VectorXd h = svd.matrixV().col(8);

  std::array<double, 9> hn;
  for (int i = 0; i < 9; ++i) hn[i] = h(i);
  Homography Hn = Homography::from_matrix(hn);
  // undo normalization: H = Td^-1 * Hn * Ts
  return compose(to_homography(nd).inverse(), compose(Hn, to_homography(ns)));
}

// ---------------------------------------------------------------------------
// GMM with fixed isotropic std
// ---------------------------------------------------------------------------

namespace {

std::vector<Point2> distinct_points(const std::vector<Point2>& pts) {
  std::vector<Point2> out;
  for (const auto& p : pts) {
    bool dup = false;
    for (const auto& q : out)
      if (dist(p, q) < 1e-12) {
        dup = true;
        break;
      }
    if (!dup) out.push_back(p);
  }
  return out;
}

// farthest-point seeding: first center random, each next center is the point
// farthest from the chosen set
std::vector<Point2> farthest_point_seeds(const std::vector<Point2>& pts, int k,
                                         Rng& rng) {
  std::vector<Point2> seeds;
  seeds.push_back(pts[rng.uniform_int(pts.size())]);
  std::vector<double> d(pts.size(), std::numeric_limits<double>::infinity());
  while (static_cast<int>(seeds.size()) < k) {
    size_t best = 0;
    double best_d = -1.0;
    for (size_t i = 0; i < pts.size(); ++i) {
      d[i] = std::min(d[i], dist(pts[i], seeds.back()));
      if (d[i] > best_d) {
        best_d = d[i];
        best = i;
      }
    }
    seeds.push_back(pts[best]);
  }
  return seeds;
}

}  // namespace

double gmm_log_likelihood(const Gmm2D& gmm, const std::vector<Point2>& points) {
  const double var = gmm.fixed_std * gmm.fixed_std;
  const double log_norm = -std::log(2.0 * kPi * var);
  double ll = 0.0;
  for (const auto& p : points) {
    // log-sum-exp over components
    double max_term = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(gmm.means.size());
    for (size_t j = 0; j < gmm.means.size(); ++j) {
      const double d2 = dist(p, gmm.means[j]) * dist(p, gmm.means[j]);
      terms[j] = std::log(std::max(gmm.weights[j], 1e-300)) + log_norm -
                 d2 / (2.0 * var);
      max_term = std::max(max_term, terms[j]);
    }
    double s = 0.0;
    for (double t : terms) s += std::exp(t - max_term);
    ll += max_term + std::log(s);
  }
  return ll;
}

GmmFit fit_gmm_em(const std::vector<Point2>& points, int k, double fixed_std,
                  int max_iters, double tol, std::uint64_t seed) {
  if (points.empty()) throw EmptyInput("fit_gmm_em: no points");
  if (k < 1) throw EmptyInput("fit_gmm_em: k must be positive");
  if (fixed_std <= 0.0) throw EmptyInput("fit_gmm_em: fixed_std must be > 0");
  Rng rng(seed);

  const auto uniq = distinct_points(points);
  k = std::min<int>(k, static_cast<int>(uniq.size()));

  Gmm2D gmm;
  gmm.fixed_std = fixed_std;
  gmm.means = farthest_point_seeds(uniq, k, rng);
  gmm.weights.assign(k, 1.0 / k);

  GmmFit fit;
  const double var = fixed_std * fixed_std;
  const size_t n = points.size();
  std::vector<double> resp(n * k);

  for (int iter = 0; iter < max_iters; ++iter) {
    // E step
    for (size_t i = 0; i < n; ++i) {
      double max_t = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        const double d = dist(points[i], gmm.means[j]);
        resp[i * k + j] =
            std::log(std::max(gmm.weights[j], 1e-300)) - d * d / (2.0 * var);
        max_t = std::max(max_t, resp[i * k + j]);
      }
      double s = 0.0;
      for (int j = 0; j < k; ++j) {
        resp[i * k + j] = std::exp(resp[i * k + j] - max_t);
        s += resp[i * k + j];
      }
      for (int j = 0; j < k; ++j) resp[i * k + j] /= s;
    }
    // M step: means and weights only; std stays fixed
    for (int j = 0; j < k; ++j) {
      double nj = 0.0;
      Point2 mu{0, 0};
      for (size_t i = 0; i < n; ++i) {
        nj += resp[i * k + j];
        mu = mu + resp[i * k + j] * points[i];
      }
      if (nj > 1e-12) gmm.means[j] = (1.0 / nj) * mu;
      gmm.weights[j] = nj / n;
    }

    fit.log_likelihood.push_back(gmm_log_likelihood(gmm, points));
    const size_t m = fit.log_likelihood.size();
    if (m >= 2 &&
        std::abs(fit.log_likelihood[m - 1] - fit.log_likelihood[m - 2]) < tol)
      break;
  }
  fit.gmm = std::move(gmm);
  return fit;
}

Point2 sample_gmm(const Gmm2D& gmm, Rng& rng) {
  if (gmm.means.empty()) throw EmptyInput("sample_gmm: empty mixture");
  const double u = rng.uniform();
  double acc = 0.0;
  size_t j = gmm.means.size() - 1;
  for (size_t i = 0; i < gmm.weights.size(); ++i) {
    acc += gmm.weights[i];
    if (u < acc) {
      j = i;
      break;
    }
  }
  const double dx = rng.normal(0.0, gmm.fixed_std);
  const double dy = rng.normal(0.0, gmm.fixed_std);
  return {gmm.means[j].x + dx, gmm.means[j].y + dy};
}

// ---------------------------------------------------------------------------
// spatial softmax
// ---------------------------------------------------------------------------

SoftmaxResult spatial_softmax(const Image& logits, double temperature) {
  if (logits.size() == 0) throw EmptyInput("spatial_softmax: empty grid");
  if (temperature <= 0.0)
    throw EmptyInput("spatial_softmax: temperature must be > 0");

  SoftmaxResult r;
  r.probabilities = Image(logits.width, logits.height);
  const double max_v = *std::max_element(logits.data.begin(), logits.data.end());
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    r.probabilities.data[i] = std::exp((logits.data[i] - max_v) / temperature);
    sum += r.probabilities.data[i];
  }
  Point2 e{0, 0};
  for (int y = 0; y < logits.height; ++y)
    for (int x = 0; x < logits.width; ++x) {
      const double p = r.probabilities.at(x, y) / sum;
      r.probabilities.at(x, y) = p;
      e.x += p * x;
      e.y += p * y;
    }
  r.expected = e;
  return r;
}

// ---------------------------------------------------------------------------
// Savitzky-Golay
// ---------------------------------------------------------------------------

std::vector<double> savgol_coefficients(int window, int polyorder) {
  if (window < 1 || window % 2 == 0)
    throw BadWindow("savgol window must be odd and positive");
  if (polyorder < 0 || polyorder >= window)
    throw BadWindow("savgol polyorder must lie in [0, window)");

  const int half = window / 2;
  // least-squares fit of a degree-p polynomial on offsets -h..h, evaluated
  // at offset 0: coefficients are the first row of (A^T A)^-1 A^T
  Eigen::MatrixXd A(window, polyorder + 1);
  for (int i = 0; i < window; ++i) {
    double v = 1.0;
    for (int j = 0; j <= polyorder; ++j) {
      A(i, j) = v;
      v *= (i - half);
    }
  }
  Eigen::MatrixXd AtA = A.transpose() * A;
  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(polyorder + 1);
  e0(0) = 1.0;
  Eigen::VectorXd c = A * AtA.ldlt().solve(e0);
  std::vector<double> out(window);
  for (int i = 0; i < window; ++i) out[i] = c(i);
  return out;
}

std::vector<double> savgol_smooth(const std::vector<double>& signal, int window,
                                  int polyorder) {
  if (signal.empty()) throw EmptyInput("savgol_smooth: empty signal");
  if (static_cast<int>(signal.size()) < window)
    throw BadWindow("savgol_smooth: signal shorter than window");
  const auto coeff = savgol_coefficients(window, polyorder);
  const int half = window / 2;
  const int n = static_cast<int>(signal.size());

  // odd (point) reflection about each end sample; indices that run past
  // both ends after one reflection are clamped via repeated reflection
  auto sample = [&](int i) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i;
      if (i >= n) i = 2 * (n - 1) - i;
    }
    return signal[i];
  };
  auto padded = [&](int i) {
    if (i >= 0 && i < n) return signal[i];
    if (i < 0) return 2.0 * signal[0] - sample(-i);
    return 2.0 * signal[n - 1] - sample(2 * (n - 1) - i);
  };

  std::vector<double> out(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = -half; j <= half; ++j) s += coeff[j + half] * padded(i + j);
    out[i] = s;
  }
  return out;
}

}  // namespace aff
