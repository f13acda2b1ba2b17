#pragma once

#include <vector>

namespace eegc {

// Completion quality for one trial (one masked segment).
struct MetricsReport {
  double rmse = 0.0;      // over missing indices, normalized domain
  double rmse_raw = 0.0;  // same, after undoing the recording scale
  double nrmse = 0.0;
  double fd_nrmse = 0.0;
  int n_missing = 0;
};

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;
};

struct AggregateReport {
  MetricSummary rmse, rmse_raw, nrmse, fd_nrmse;
  int trials = 0;
};

// Root mean square error over the missing indices only; indices outside the
// missing set never contribute.
double rmse_missing(const std::vector<double>& real_seg,
                    const std::vector<double>& generated,
                    const std::vector<int>& missing);

// rmse_missing divided by the real segment's amplitude range.
double nrmse(const std::vector<double>& real_seg,
             const std::vector<double>& generated,
             const std::vector<int>& missing);

// RMSE over every index divided by the real segment's range (the
// "entire segment" flavour used by the loss-weighting sweep).
double nrmse_all(const std::vector<double>& real_seg,
                 const std::vector<double>& generated);

// First k_bins magnitudes of the N-point discrete Fourier transform,
// normalized by N. k_bins must lie in [1, N]; the typical call uses N/2.
std::vector<double> dft_magnitude(const std::vector<double>& x, int k_bins);

// Root mean square difference between the two k-bin magnitude spectra.
// Callers are expected to pass range-normalized series.
double fd_nrmse(const std::vector<double>& real_norm,
                const std::vector<double>& generated_norm, int k_bins);

// Per-metric mean and standard deviation across trials. Population standard
// deviation by default; sample (n-1) variant behind the flag. A single
// report aggregates to stddev 0 either way.
AggregateReport aggregate(const std::vector<MetricsReport>& reports,
                          bool sample_std = false);

}  // namespace eegc
