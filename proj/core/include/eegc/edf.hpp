#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace eegc::edf {

struct SignalInfo {
  std::string label;
  std::string transducer;
  std::string physical_dim;
  std::string prefiltering;
  double physical_min = 0.0;
  double physical_max = 0.0;
  int digital_min = 0;
  int digital_max = 0;
  int samples_per_record = 0;

  bool is_annotation() const { return label == "EDF Annotations"; }
  double digital_to_physical(int d) const;
};

struct EdfHeader {
  std::string version;  // 8-char field, trimmed
  std::string patient_id;
  std::string recording_id;
  std::string start_date;
  std::string start_time;
  std::string reserved;
  int header_bytes = 0;
  int num_records = 0;  // -1 in the wild when the writer did not know
  double record_duration_s = 0.0;
  int num_signals = 0;
  std::vector<SignalInfo> signals;

  bool is_edf_plus_d() const { return reserved.rfind("EDF+D", 0) == 0; }
  // total 16-bit samples per data record, across all signals
  int record_size_samples() const;
};

// Decode the fixed ASCII layout: a 256-byte header followed by 256 bytes per
// signal of field blocks. Throws DataError on truncation, non-numeric
// fields, or a header-size field inconsistent with 256*(num_signals+1).
EdfHeader parse_header(std::span<const unsigned char> bytes);

struct ChannelData {
  std::vector<double> samples;
  double sample_rate_hz = 0.0;
};

// Concatenate one signal's samples across all data records, mapped to
// physical units. The label must match exactly one non-annotation signal.
// EDF+C containers are accepted (annotation signals are skipped);
// discontinuous EDF+D files are rejected.
ChannelData read_channel(const std::string& path, const std::string& label);

// Debug aid: one sample per line, full double precision.
void dump_raw(const std::string& path, const std::vector<double>& samples);

}  // namespace eegc::edf
