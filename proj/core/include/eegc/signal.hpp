#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace eegc {

// Affine record produced by normalize(); maps the raw amplitude range onto
// [-1, 1] and back without loss.
struct ScaleRecord {
  double raw_min = -1.0;
  double raw_max = 1.0;

  double to_normalized(double raw) const;
  double to_raw(double normalized) const;
};

// Fixed-length window cut from one recording channel. Samples are already
// normalized to [-1, 1].
struct Segment {
  std::vector<double> samples;
  std::string source_id;      // recording/channel provenance tag
  std::uint64_t offset = 0;   // sample offset within the source channel

  int n() const { return static_cast<int>(samples.size()); }
};

enum class PositionMode { Beginning, Middle, Ending, Explicit };
enum class MaskMethod { Zero, Random, EegCopy };

// Which indices of a segment are treated as missing and how they get filled.
struct MaskSpec {
  std::vector<int> missing_indices;  // strictly increasing, all in [0, n)
  PositionMode position = PositionMode::Explicit;
  MaskMethod method = MaskMethod::Zero;

  int count() const { return static_cast<int>(missing_indices.size()); }
  bool contiguous() const;
  // Throws std::invalid_argument when the spec is inconsistent with a
  // segment of length n.
  void validate(int n) const;
};

// Segment with the missing indices overwritten by mask values. target keeps
// the ground truth; input is what a completion model sees.
struct MaskedSegment {
  std::vector<double> input;
  Segment target;
  MaskSpec spec;
};

// Affine map sending min(raw) to -1 and max(raw) to +1. Throws DataError on
// empty, non-finite, or constant input.
std::pair<std::vector<double>, ScaleRecord> normalize(
    const std::vector<double>& raw);

// Sliding windows: floor((len - segment_len) / stride) + 1 of them, each
// tagged with its source offset. Throws DataError when the channel is
// shorter than one window.
std::vector<Segment> extract_segments(const std::vector<double>& channel,
                                      int segment_len, int stride,
                                      const std::string& source_id = "");

// Contiguous run of `count` missing indices at the named position. Explicit
// mode draws `count` distinct indices uniformly from the seed instead; the
// other modes are pure functions of (n, count, mode).
MaskSpec build_mask(int n, int count, PositionMode mode,
                    std::uint64_t rng_seed = 0,
                    MaskMethod method = MaskMethod::Zero);

// Explicit scattered mask from caller-chosen indices.
MaskSpec explicit_mask(int n, std::vector<int> indices,
                       MaskMethod method = MaskMethod::Zero);

// Fill the missing indices of `segment` according to the spec. Unmasked
// indices are copied verbatim. Random fills draw i.i.d. uniform values from
// [min(samples), max(samples)] deterministically from rng_seed. EegCopy
// copies the equal-length run immediately before the missing run, falling
// back to the run after it when there is not enough room in front.
MaskedSegment apply_mask(const Segment& segment, const MaskSpec& spec,
                         std::uint64_t rng_seed = 0);

const char* to_string(PositionMode mode);
const char* to_string(MaskMethod method);
PositionMode position_from_string(const std::string& s);
MaskMethod method_from_string(const std::string& s);

}  // namespace eegc
