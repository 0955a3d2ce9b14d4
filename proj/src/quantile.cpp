#include "mvg/quantile.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <complex>
#include <mutex>
#include <numbers>

namespace mvg::quantile {

namespace {

// FFTW planning is not thread-safe; execution on distinct plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

template <typename T>
using FftwBuffer = std::unique_ptr<T[], FftwFree>;

/// Circular convolution of two equal-length real signals.
std::vector<double> circular_convolve(const std::vector<double>& a, const std::vector<double>& b) {
  const int m = static_cast<int>(a.size());
  const int bins = m / 2 + 1;
  FftwBuffer<double> real(static_cast<double*>(fftw_malloc(sizeof(double) * m)));
  FftwBuffer<fftw_complex> fa(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins)));
  FftwBuffer<fftw_complex> fb(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins)));

  fftw_plan forward_a, forward_b, backward;
  {
    std::lock_guard lock(planner_mutex());
    forward_a = fftw_plan_dft_r2c_1d(m, real.get(), fa.get(), FFTW_ESTIMATE);
    forward_b = fftw_plan_dft_r2c_1d(m, real.get(), fb.get(), FFTW_ESTIMATE);
    backward = fftw_plan_dft_c2r_1d(m, fa.get(), real.get(), FFTW_ESTIMATE);
  }
  std::copy(a.begin(), a.end(), real.get());
  fftw_execute(forward_a);
  std::copy(b.begin(), b.end(), real.get());
  fftw_execute(forward_b);
  for (int i = 0; i < bins; ++i) {
    const std::complex<double> x(fa[i][0], fa[i][1]), y(fb[i][0], fb[i][1]);
    const std::complex<double> z = x * y;
    fa[i][0] = z.real();
    fa[i][1] = z.imag();
  }
  fftw_execute(backward);  // destroys fa
  std::vector<double> out(real.get(), real.get() + m);
  for (auto& v : out) v /= m;
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(forward_a);
    fftw_destroy_plan(forward_b);
    fftw_destroy_plan(backward);
  }
  return out;
}

double trapezoid(const Curve& c) {
  double s = 0.0;
  for (std::size_t i = 1; i < c.values.size(); ++i) s += 0.5 * (c.values[i - 1] + c.values[i]);
  return s * c.step;
}

}  // namespace

void KdeConfig::validate() const {
  if (grid_size < 2 || (grid_size & (grid_size - 1)) != 0)
    throw ConfigError("kde: grid_size must be a power of two >= 2");
  if (!(p_near > 0.0 && p_near < p_far && p_far < 1.0))
    throw ConfigError("kde: need 0 < p_near < p_far < 1");
  if (bandwidth && !(*bandwidth > 0.0)) throw ConfigError("kde: bandwidth must be positive");
}

double silverman_bandwidth(std::span<const double> samples) {
  const double n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= n;
  double var = 0.0;
  for (double s : samples) var += (s - mean) * (s - mean);
  var /= std::max(1.0, n - 1.0);
  return 1.06 * std::sqrt(var) * std::pow(n, -0.2);
}

Density kde_fft(std::span<const double> samples, const KdeConfig& cfg) {
  cfg.validate();
  if (samples.size() < 2) throw DomainError("kde_fft: need at least two samples");
  for (double s : samples)
    if (!std::isfinite(s) || !(s > 0.0)) throw DomainError("kde_fft: samples must be finite and positive");
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  const double lo = *lo_it, hi = *hi_it;
  if (lo == hi) throw DegenerateDistribution(lo);

  const double h = cfg.bandwidth ? *cfg.bandwidth : silverman_bandwidth(samples);
  const int g = cfg.grid_size;
  Density out;
  out.bandwidth = h;
  Curve& c = out.curve;
  c.origin = lo - 3.0 * h;
  c.step = (hi + 3.0 * h - c.origin) / (g - 1);

  // Linear binning. Bins live in the first half of a 2g buffer; the second
  // half is zero padding so the circular product equals the linear one.
  const int m = 2 * g;
  std::vector<double> counts(m, 0.0);
  for (double s : samples) {
    const double t = (s - c.origin) / c.step;
    const int j = std::clamp(static_cast<int>(std::floor(t)), 0, g - 2);
    const double frac = std::clamp(t - j, 0.0, 1.0);
    counts[j] += 1.0 - frac;
    counts[j + 1] += frac;
  }

  // Kernel at offsets -(g-1)..(g-1); negative offsets wrap to the tail.
  std::vector<double> kernel(m, 0.0);
  const double norm = 1.0 / (h * std::sqrt(2.0 * std::numbers::pi) * static_cast<double>(samples.size()));
  for (int k = 0; k < g; ++k) {
    const double x = k * c.step / h;
    const double v = norm * std::exp(-0.5 * x * x);
    kernel[k] = v;
    if (k > 0) kernel[m - k] = v;
  }

  const std::vector<double> conv = circular_convolve(counts, kernel);
  c.values.assign(conv.begin(), conv.begin() + g);
  for (auto& v : c.values) v = std::max(0.0, v);
  const double area = trapezoid(c);
  for (auto& v : c.values) v /= area;
  return out;
}

Curve cdf_from_density(const Curve& density) {
  Curve cdf;
  cdf.origin = density.origin;
  cdf.step = density.step;
  const std::size_t n = density.values.size();
  cdf.values.assign(n, 0.0);
  for (std::size_t i = 1; i < n; ++i)
    cdf.values[i] = cdf.values[i - 1] + 0.5 * (density.values[i - 1] + density.values[i]) * density.step;
  const double total = n ? cdf.values.back() : 0.0;
  double running = 0.0;
  for (auto& v : cdf.values) {
    v = total > 0.0 ? std::clamp(v / total, 0.0, 1.0) : 0.0;
    running = std::max(running, v);
    v = running;
  }
  if (n && total > 0.0) cdf.values.back() = 1.0;
  return cdf;
}

double quantile(const Curve& cdf, double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("quantile: probability must lie in (0, 1)");
  if (cdf.values.empty()) throw DomainError("quantile: empty CDF");
  const auto it = std::lower_bound(cdf.values.begin(), cdf.values.end(), p);
  if (it == cdf.values.end()) return cdf.x(cdf.values.size() - 1);
  const auto i = static_cast<std::size_t>(it - cdf.values.begin());
  if (i == 0) return cdf.x(0);
  const double c0 = cdf.values[i - 1], c1 = cdf.values[i];
  return cdf.x(i - 1) + (p - c0) / (c1 - c0) * cdf.step;
}

std::vector<double> depth_samples(const DepthMap& d) {
  std::vector<double> all;
  all.reserve(d.valid_count());
  for (std::size_t i = 0; i < d.values.size(); ++i)
    if (d.valid.data[i]) all.push_back(d.values.data[i]);
  if (all.size() <= kMaxKdeSamples) return all;
  std::vector<double> sub(kMaxKdeSamples);
  for (std::size_t k = 0; k < kMaxKdeSamples; ++k) sub[k] = all[k * all.size() / kMaxKdeSamples];
  return sub;
}

DepthSegmentation segment_depth(const DepthMap& d, const KdeConfig& cfg) {
  cfg.validate();
  const std::vector<double> samples = depth_samples(d);
  if (samples.size() < 2) throw DomainError("segment_depth: need at least two valid pixels");

  DepthSegmentation seg;
  seg.near_mask = seg.mid_mask = seg.far_mask = Mask(d.width(), d.height(), 0);
  try {
    const Density density = kde_fft(samples, cfg);
    seg.bandwidth = density.bandwidth;
    seg.density = density.curve;
    seg.cdf = cdf_from_density(density.curve);
    seg.q_near = quantile(seg.cdf, cfg.p_near);
    seg.q_far = quantile(seg.cdf, cfg.p_far);
  } catch (const DegenerateDistribution& e) {
    seg.degenerate = true;
    seg.q_near = seg.q_far = e.value;
  }

  for (std::size_t i = 0; i < d.values.size(); ++i) {
    if (!d.valid.data[i]) continue;
    const double v = d.values.data[i];
    if (seg.degenerate) {
      seg.mid_mask.data[i] = 1;
    } else if (v <= seg.q_near) {
      seg.near_mask.data[i] = 1;
    } else if (v >= seg.q_far) {
      seg.far_mask.data[i] = 1;
    } else {
      seg.mid_mask.data[i] = 1;
    }
  }
  return seg;
}

}  // namespace mvg::quantile
