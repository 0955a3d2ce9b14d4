#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mvg/core.hpp"

namespace mvg::quantile {

struct KdeConfig {
  int grid_size = 1024;
  /// Kernel bandwidth in meters; empty selects Silverman's rule.
  std::optional<double> bandwidth;
  double p_near = 0.15;
  double p_far = 0.85;

  void validate() const;
};

/// Values sampled on the uniform grid x_i = origin + i * step.
struct Curve {
  double origin = 0.0;
  double step = 1.0;
  std::vector<double> values;

  double x(std::size_t i) const { return origin + static_cast<double>(i) * step; }
};

struct Density {
  Curve curve;
  double bandwidth = 0.0;
};

/// Thrown when every sample has the same value; `value` is that depth.
class DegenerateDistribution : public DomainError {
 public:
  explicit DegenerateDistribution(double v)
      : DomainError("degenerate distribution: all samples equal"), value(v) {}
  double value;
};

/// 1.06 * sample std * n^(-1/5).
double silverman_bandwidth(std::span<const double> samples);

/// Gaussian KDE on [min - 3h, max + 3h]: linear binning onto the grid, then a
/// zero-padded FFT convolution with the sampled kernel, normalised to unit
/// trapezoid integral.
Density kde_fft(std::span<const double> samples, const KdeConfig& cfg);

/// Cumulative trapezoid integral scaled to end at 1, clamped and monotone.
Curve cdf_from_density(const Curve& density);

/// Inverse CDF by linear interpolation; flat runs resolve to their left end.
double quantile(const Curve& cdf, double p);

struct DepthSegmentation {
  Mask near_mask, mid_mask, far_mask;
  double q_near = 0.0;
  double q_far = 0.0;
  double bandwidth = 0.0;
  bool degenerate = false;
  Curve density;
  Curve cdf;
};

inline constexpr std::size_t kMaxKdeSamples = std::size_t{1} << 20;

/// Valid depths in row-major order, uniformly subsampled to at most
/// kMaxKdeSamples.
std::vector<double> depth_samples(const DepthMap& d);

DepthSegmentation segment_depth(const DepthMap& d, const KdeConfig& cfg);

}  // namespace mvg::quantile
