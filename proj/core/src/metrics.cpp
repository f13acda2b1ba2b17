#include "eegc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>

#include "eegc/errors.hpp"

namespace eegc {

namespace {

void check_pair(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty()) throw std::invalid_argument("metrics: empty signal");
  if (a.size() != b.size())
    throw std::invalid_argument("metrics: signal length mismatch");
}

double range_of(const std::vector<double>& x) {
  auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  return *hi - *lo;
}

}  // namespace

double rmse_missing(const std::vector<double>& real_seg,
                    const std::vector<double>& generated,
                    const std::vector<int>& missing) {
  check_pair(real_seg, generated);
  if (missing.empty())
    throw std::invalid_argument("rmse_missing: empty missing set");
  double acc = 0.0;
  for (int n : missing) {
    if (n < 0 || n >= static_cast<int>(real_seg.size()))
      throw std::invalid_argument("rmse_missing: index out of range");
    const double e = real_seg[n] - generated[n];
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(missing.size()));
}

double nrmse(const std::vector<double>& real_seg,
             const std::vector<double>& generated,
             const std::vector<int>& missing) {
  const double range = range_of(real_seg);
  if (!(range > 0.0)) throw DataError("nrmse: degenerate segment range");
  return rmse_missing(real_seg, generated, missing) / range;
}

double nrmse_all(const std::vector<double>& real_seg,
                 const std::vector<double>& generated) {
  check_pair(real_seg, generated);
  const double range = range_of(real_seg);
  if (!(range > 0.0)) throw DataError("nrmse_all: degenerate segment range");
  double acc = 0.0;
  for (size_t n = 0; n < real_seg.size(); ++n) {
    const double e = real_seg[n] - generated[n];
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(real_seg.size())) / range;
}

std::vector<double> dft_magnitude(const std::vector<double>& x, int k_bins) {
  const int n = static_cast<int>(x.size());
  if (n == 0) throw std::invalid_argument("dft_magnitude: empty signal");
  if (k_bins < 1 || k_bins > n)
    throw std::invalid_argument("dft_magnitude: K out of range");
  std::vector<double> mags(static_cast<size_t>(k_bins));
  for (int k = 0; k < k_bins; ++k) {
    // incremental rotation: one complex multiply per sample, no trig calls
    // in the inner loop
    const double ang = -2.0 * std::numbers::pi * k / n;
    const std::complex<double> w = std::polar(1.0, ang);
    std::complex<double> rot{1.0, 0.0};
    std::complex<double> acc{0.0, 0.0};
    for (double v : x) {
      acc += v * rot;
      rot *= w;
    }
    mags[static_cast<size_t>(k)] = std::abs(acc) / n;
  }
  return mags;
}

double fd_nrmse(const std::vector<double>& real_norm,
                const std::vector<double>& generated_norm, int k_bins) {
  check_pair(real_norm, generated_norm);
  const auto fr = dft_magnitude(real_norm, k_bins);
  const auto fg = dft_magnitude(generated_norm, k_bins);
  double acc = 0.0;
  for (int k = 0; k < k_bins; ++k) {
    const double d = fr[static_cast<size_t>(k)] - fg[static_cast<size_t>(k)];
    acc += d * d;
  }
  return std::sqrt(acc / k_bins);
}

AggregateReport aggregate(const std::vector<MetricsReport>& reports,
                          bool sample_std) {
  if (reports.empty()) throw std::invalid_argument("aggregate: empty report list");
  const double n = static_cast<double>(reports.size());

  auto summarize = [&](auto field) {
    MetricSummary s;
    double acc = 0.0;
    for (const auto& r : reports) acc += r.*field;
    s.mean = acc / n;
    double var = 0.0;
    for (const auto& r : reports) {
      const double d = r.*field - s.mean;
      var += d * d;
    }
    const double denom = sample_std ? n - 1.0 : n;
    s.stddev = denom > 0.0 ? std::sqrt(var / denom) : 0.0;
    return s;
  };

  AggregateReport out;
  out.rmse = summarize(&MetricsReport::rmse);
  out.rmse_raw = summarize(&MetricsReport::rmse_raw);
  out.nrmse = summarize(&MetricsReport::nrmse);
  out.fd_nrmse = summarize(&MetricsReport::fd_nrmse);
  out.trials = static_cast<int>(reports.size());
  return out;
}

}  // namespace eegc
