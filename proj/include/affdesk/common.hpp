#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace aff {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define AFF_ERROR_KIND(Name)                                   \
  struct Name : Error {                                        \
    explicit Name(const std::string& msg) : Error(msg) {}      \
  }

AFF_ERROR_KIND(DegenerateProjection);
AFF_ERROR_KIND(InsufficientCorrespondences);
AFF_ERROR_KIND(DegenerateConfiguration);
AFF_ERROR_KIND(EmptyInput);
AFF_ERROR_KIND(BadWindow);
AFF_ERROR_KIND(NoContact);
AFF_ERROR_KIND(DiscardEpisode);
AFF_ERROR_KIND(OutOfFrame);
AFF_ERROR_KIND(CropInfeasible);
AFF_ERROR_KIND(ShapeMismatch);
AFF_ERROR_KIND(EmptyDataset);
AFF_ERROR_KIND(InsufficientData);
AFF_ERROR_KIND(OutOfWorkspace);
AFF_ERROR_KIND(UnknownObject);
AFF_ERROR_KIND(IoError);
AFF_ERROR_KIND(SchemaError);
AFF_ERROR_KIND(ConfigError);

#undef AFF_ERROR_KIND

// Deterministic RNG: every draw maps engine output to a value by a fixed,
// documented recipe so streams are reproducible across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // [0, 1), 53-bit resolution
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; draws exactly two uniforms per call
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // unbiased integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw EmptyInput("uniform_int: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = eng_();
    while (x >= limit) x = eng_();
    return x % n;
  }

  // independent child stream for a labelled sub-task
  Rng split(std::uint64_t stream) {
    std::uint64_t s = eng_() ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    return Rng(s);
  }

 private:
  std::mt19937_64 eng_;
};

// Grayscale image, values in [0, 1], row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

  double& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  double at(int x, int y) const {
    return data[static_cast<size_t>(y) * width + x];
  }
  bool inside(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height;
  }
  size_t size() const { return data.size(); }
};

inline bool same_shape(const Image& a, const Image& b) {
  return a.width == b.width && a.height == b.height;
}

}  // namespace aff
