#pragma once

#include <stdexcept>
#include <string>

namespace eegc {

// Unreadable or inconsistent input: files, configs, degenerate signals.
// The CLI maps this to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Optimization produced a non-finite loss. CLI exit code 3.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace eegc
