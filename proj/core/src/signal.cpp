#include "eegc/signal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "eegc/errors.hpp"

namespace eegc {

double ScaleRecord::to_normalized(double raw) const {
  const double y = 2.0 * (raw - raw_min) / (raw_max - raw_min) - 1.0;
  return std::clamp(y, -1.0, 1.0);
}

double ScaleRecord::to_raw(double normalized) const {
  return raw_min + (normalized + 1.0) * 0.5 * (raw_max - raw_min);
}

bool MaskSpec::contiguous() const {
  for (size_t i = 1; i < missing_indices.size(); ++i)
    if (missing_indices[i] != missing_indices[i - 1] + 1) return false;
  return !missing_indices.empty();
}

void MaskSpec::validate(int n) const {
  if (missing_indices.empty())
    throw std::invalid_argument("mask: empty missing set");
  int prev = -1;
  for (int idx : missing_indices) {
    if (idx < 0 || idx >= n)
      throw std::invalid_argument("mask: index out of range");
    if (idx <= prev)
      throw std::invalid_argument("mask: indices not strictly increasing");
    prev = idx;
  }
  if (position != PositionMode::Explicit && !contiguous())
    throw std::invalid_argument(
        "mask: beginning/middle/ending modes require one contiguous run");
}

std::pair<std::vector<double>, ScaleRecord> normalize(
    const std::vector<double>& raw) {
  if (raw.empty()) throw DataError("normalize: empty input");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : raw) {
    if (!std::isfinite(v)) throw DataError("normalize: non-finite sample");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo))
    throw DataError("normalize: degenerate range (constant signal)");
  ScaleRecord rec{lo, hi};
  std::vector<double> out(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) out[i] = rec.to_normalized(raw[i]);
  return {std::move(out), rec};
}

std::vector<Segment> extract_segments(const std::vector<double>& channel,
                                      int segment_len, int stride,
                                      const std::string& source_id) {
  if (segment_len < 2)
    throw std::invalid_argument("extract_segments: segment_len must be >= 2");
  if (stride < 1)
    throw std::invalid_argument("extract_segments: stride must be >= 1");
  const auto len = static_cast<std::int64_t>(channel.size());
  if (len < segment_len)
    throw DataError("extract_segments: channel shorter than one segment");

  const std::int64_t count = (len - segment_len) / stride + 1;
  std::vector<Segment> out;
  out.reserve(static_cast<size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    const auto off = static_cast<size_t>(i * stride);
    Segment s;
    s.samples.assign(channel.begin() + off, channel.begin() + off + segment_len);
    s.source_id = source_id;
    s.offset = off;
    out.push_back(std::move(s));
  }
  return out;
}

MaskSpec build_mask(int n, int count, PositionMode mode,
                    std::uint64_t rng_seed, MaskMethod method) {
  if (count < 1 || count > n)
    throw std::invalid_argument("build_mask: invalid missing count");
  MaskSpec spec;
  spec.position = mode;
  spec.method = method;
  int start = 0;
  switch (mode) {
    case PositionMode::Beginning:
      start = 0;
      break;
    case PositionMode::Middle:
      start = (n - count) / 2;
      break;
    case PositionMode::Ending:
      start = n - count;
      break;
    case PositionMode::Explicit: {
      // reservoir-free partial Fisher-Yates over [0, n)
      std::vector<int> all(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
      std::mt19937_64 rng(rng_seed);
      for (int i = 0; i < count; ++i) {
        std::uniform_int_distribution<int> pick(i, n - 1);
        std::swap(all[static_cast<size_t>(i)],
                  all[static_cast<size_t>(pick(rng))]);
      }
      spec.missing_indices.assign(all.begin(), all.begin() + count);
      std::sort(spec.missing_indices.begin(), spec.missing_indices.end());
      return spec;
    }
  }
  spec.missing_indices.resize(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i)
    spec.missing_indices[static_cast<size_t>(i)] = start + i;
  return spec;
}

MaskSpec explicit_mask(int n, std::vector<int> indices, MaskMethod method) {
  MaskSpec spec;
  spec.missing_indices = std::move(indices);
  spec.position = PositionMode::Explicit;
  spec.method = method;
  spec.validate(n);
  return spec;
}

MaskedSegment apply_mask(const Segment& segment, const MaskSpec& spec,
                         std::uint64_t rng_seed) {
  const int n = segment.n();
  spec.validate(n);

  MaskedSegment out;
  out.input = segment.samples;
  out.target = segment;
  out.spec = spec;

  switch (spec.method) {
    case MaskMethod::Zero:
      for (int idx : spec.missing_indices)
        out.input[static_cast<size_t>(idx)] = 0.0;
      break;
    case MaskMethod::Random: {
      auto [lo, hi] = std::minmax_element(segment.samples.begin(),
                                          segment.samples.end());
      std::mt19937_64 rng(rng_seed);
      std::uniform_real_distribution<double> dist(*lo, *hi);
      for (int idx : spec.missing_indices)
        out.input[static_cast<size_t>(idx)] = dist(rng);
      break;
    }
    case MaskMethod::EegCopy: {
      if (!spec.contiguous())
        throw DataError("apply_mask: eeg-copy needs a contiguous missing run");
      const int start = spec.missing_indices.front();
      const int count = spec.count();
      if (start >= count) {
        for (int j = 0; j < count; ++j)
          out.input[static_cast<size_t>(start + j)] =
              segment.samples[static_cast<size_t>(start - count + j)];
      } else if (start + 2 * count <= n) {
        for (int j = 0; j < count; ++j)
          out.input[static_cast<size_t>(start + j)] =
              segment.samples[static_cast<size_t>(start + count + j)];
      } else {
        throw DataError(
            "apply_mask: eeg-copy has no adjacent run of equal length on "
            "either side (insufficient context)");
      }
      break;
    }
  }
  return out;
}

const char* to_string(PositionMode mode) {
  switch (mode) {
    case PositionMode::Beginning: return "beginning";
    case PositionMode::Middle: return "middle";
    case PositionMode::Ending: return "ending";
    case PositionMode::Explicit: return "explicit";
  }
  return "?";
}

const char* to_string(MaskMethod method) {
  switch (method) {
    case MaskMethod::Zero: return "zero";
    case MaskMethod::Random: return "random";
    case MaskMethod::EegCopy: return "eeg";
  }
  return "?";
}

PositionMode position_from_string(const std::string& s) {
  if (s == "beginning" || s == "begin") return PositionMode::Beginning;
  if (s == "middle") return PositionMode::Middle;
  if (s == "ending" || s == "end") return PositionMode::Ending;
  if (s == "explicit") return PositionMode::Explicit;
  throw DataError("unknown mask position '" + s + "'");
}

MaskMethod method_from_string(const std::string& s) {
  if (s == "zero") return MaskMethod::Zero;
  if (s == "random") return MaskMethod::Random;
  if (s == "eeg" || s == "eeg-copy") return MaskMethod::EegCopy;
  throw DataError("unknown mask method '" + s + "'");
}

}  // namespace eegc
