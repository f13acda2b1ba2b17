#include "eegc/edf.hpp"

#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "eegc/errors.hpp"

namespace eegc::edf {

namespace {

std::string trim(std::string_view raw) {
  size_t a = 0, b = raw.size();
  while (a < b && raw[a] == ' ') ++a;
  while (b > a && raw[b - 1] == ' ') --b;
  return std::string(raw.substr(a, b - a));
}

std::string_view field(std::span<const unsigned char> bytes, size_t off,
                       size_t len) {
  return {reinterpret_cast<const char*>(bytes.data()) + off, len};
}

int parse_int(std::string_view raw, const char* what) {
  const std::string t = trim(raw);
  int value = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc{} || ptr != t.data() + t.size())
    throw DataError(std::string("EDF header: non-numeric ") + what + " field '" +
                    t + "'");
  return value;
}

double parse_double(std::string_view raw, const char* what) {
  const std::string t = trim(raw);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc{} || ptr != t.data() + t.size())
    throw DataError(std::string("EDF header: non-numeric ") + what + " field '" +
                    t + "'");
  return value;
}

}  // namespace

double SignalInfo::digital_to_physical(int d) const {
  return physical_min + (d - digital_min) * (physical_max - physical_min) /
                            (digital_max - digital_min);
}

int EdfHeader::record_size_samples() const {
  return std::accumulate(signals.begin(), signals.end(), 0,
                         [](int acc, const SignalInfo& s) {
                           return acc + s.samples_per_record;
                         });
}

EdfHeader parse_header(std::span<const unsigned char> bytes) {
  if (bytes.size() < 256) throw DataError("EDF header: truncated (< 256 bytes)");

  EdfHeader h;
  h.version = trim(field(bytes, 0, 8));
  h.patient_id = trim(field(bytes, 8, 80));
  h.recording_id = trim(field(bytes, 88, 80));
  h.start_date = trim(field(bytes, 168, 8));
  h.start_time = trim(field(bytes, 176, 8));
  h.header_bytes = parse_int(field(bytes, 184, 8), "header-bytes");
  h.reserved = trim(field(bytes, 192, 44));
  h.num_records = parse_int(field(bytes, 236, 8), "record-count");
  h.record_duration_s = parse_double(field(bytes, 244, 8), "record-duration");
  h.num_signals = parse_int(field(bytes, 252, 4), "signal-count");

  if (h.num_signals < 1)
    throw DataError("EDF header: signal count must be >= 1");
  const size_t need = 256 + 256 * static_cast<size_t>(h.num_signals);
  if (h.header_bytes != static_cast<int>(need))
    throw DataError("EDF header: size field inconsistent with signal count");
  if (bytes.size() < need)
    throw DataError("EDF header: truncated signal header block");

  const size_t ns = static_cast<size_t>(h.num_signals);
  h.signals.resize(ns);
  size_t off = 256;
  for (size_t i = 0; i < ns; ++i, off += 16)
    h.signals[i].label = trim(field(bytes, off, 16));
  for (size_t i = 0; i < ns; ++i, off += 80)
    h.signals[i].transducer = trim(field(bytes, off, 80));
  for (size_t i = 0; i < ns; ++i, off += 8)
    h.signals[i].physical_dim = trim(field(bytes, off, 8));
  for (size_t i = 0; i < ns; ++i, off += 8)
    h.signals[i].physical_min = parse_double(field(bytes, off, 8), "physical-min");
  for (size_t i = 0; i < ns; ++i, off += 8)
    h.signals[i].physical_max = parse_double(field(bytes, off, 8), "physical-max");
  for (size_t i = 0; i < ns; ++i, off += 8)
    h.signals[i].digital_min = parse_int(field(bytes, off, 8), "digital-min");
  for (size_t i = 0; i < ns; ++i, off += 8)
    h.signals[i].digital_max = parse_int(field(bytes, off, 8), "digital-max");
  for (size_t i = 0; i < ns; ++i, off += 80)
    h.signals[i].prefiltering = trim(field(bytes, off, 80));
  for (size_t i = 0; i < ns; ++i, off += 8)
    h.signals[i].samples_per_record =
        parse_int(field(bytes, off, 8), "samples-per-record");
  // remaining 32*ns bytes are reserved

  for (const auto& s : h.signals) {
    if (s.samples_per_record < 1)
      throw DataError("EDF header: samples-per-record must be >= 1 ('" +
                      s.label + "')");
    if (s.digital_max <= s.digital_min)
      throw DataError("EDF header: digital range empty ('" + s.label + "')");
    if (!s.is_annotation() && s.physical_max == s.physical_min)
      throw DataError("EDF header: physical range empty ('" + s.label + "')");
  }
  return h;
}

ChannelData read_channel(const std::string& path, const std::string& label) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("EDF: cannot open '" + path + "'");

  std::vector<unsigned char> head(256);
  if (!in.read(reinterpret_cast<char*>(head.data()), 256))
    throw DataError("EDF header: truncated (< 256 bytes) in '" + path + "'");
  const int ns = parse_int(field(head, 252, 4), "signal-count");
  if (ns < 1) throw DataError("EDF header: signal count must be >= 1");
  head.resize(256 + 256 * static_cast<size_t>(ns));
  if (!in.read(reinterpret_cast<char*>(head.data()) + 256,
               256 * static_cast<std::streamsize>(ns)))
    throw DataError("EDF header: truncated signal header block in '" + path +
                    "'");
  const EdfHeader h = parse_header(head);

  if (h.is_edf_plus_d())
    throw DataError("EDF: discontinuous EDF+D files are not supported ('" +
                    path + "')");
  if (!(h.record_duration_s > 0.0))
    throw DataError("EDF: record duration must be positive ('" + path + "')");

  int match = -1;
  for (int i = 0; i < h.num_signals; ++i) {
    const auto& s = h.signals[static_cast<size_t>(i)];
    if (s.is_annotation()) continue;
    if (s.label == label) {
      if (match >= 0)
        throw DataError("EDF: channel label '" + label + "' is ambiguous in '" +
                        path + "'");
      match = i;
    }
  }
  if (match < 0) {
    std::string avail;
    for (const auto& s : h.signals) {
      if (s.is_annotation()) continue;
      if (!avail.empty()) avail += ", ";
      avail += "'" + s.label + "'";
    }
    throw DataError("EDF: channel '" + label + "' not found in '" + path +
                    "'; available: " + avail);
  }
  const auto& sig = h.signals[static_cast<size_t>(match)];

  const int record_samples = h.record_size_samples();
  const size_t record_bytes = 2 * static_cast<size_t>(record_samples);

  int num_records = h.num_records;
  if (num_records < 0) {
    // writer did not know the count; infer it from the payload size
    const auto data_start = in.tellg();
    in.seekg(0, std::ios::end);
    const auto payload = static_cast<std::uint64_t>(in.tellg() - data_start);
    in.seekg(data_start);
    if (payload % record_bytes != 0)
      throw DataError("EDF: payload size is not a whole number of records in '" +
                      path + "'");
    num_records = static_cast<int>(payload / record_bytes);
  }

  int skip_before = 0;
  for (int i = 0; i < match; ++i)
    skip_before += h.signals[static_cast<size_t>(i)].samples_per_record;

  ChannelData out;
  out.sample_rate_hz = sig.samples_per_record / h.record_duration_s;
  out.samples.reserve(static_cast<size_t>(num_records) *
                      static_cast<size_t>(sig.samples_per_record));

  std::vector<unsigned char> record(record_bytes);
  for (int r = 0; r < num_records; ++r) {
    if (!in.read(reinterpret_cast<char*>(record.data()),
                 static_cast<std::streamsize>(record_bytes)))
      throw DataError("EDF: data record " + std::to_string(r) +
                      " truncated in '" + path + "'");
    const size_t base = 2 * static_cast<size_t>(skip_before);
    for (int k = 0; k < sig.samples_per_record; ++k) {
      const size_t o = base + 2 * static_cast<size_t>(k);
      // 16-bit little-endian two's complement
      const auto d = static_cast<std::int16_t>(
          static_cast<std::uint16_t>(record[o]) |
          (static_cast<std::uint16_t>(record[o + 1]) << 8));
      out.samples.push_back(sig.digital_to_physical(d));
    }
  }
  return out;
}

void dump_raw(const std::string& path, const std::vector<double>& samples) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  char buf[40];
  for (double v : samples) {
    std::snprintf(buf, sizeof buf, "%.17g\n", v);
    out << buf;
  }
}

}  // namespace eegc::edf
