#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace advrl {

struct InvalidParameter : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct DimensionMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InvalidAction : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Raised when an operation is invoked outside its contract (e.g. stepping a
// terminal state).
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

struct MalformedFile : std::runtime_error {
  MalformedFile(const std::string& what, std::size_t offset)
      : std::runtime_error(what), byte_offset(offset) {}
  std::size_t byte_offset;
};

struct CorruptRecord : std::runtime_error {
  CorruptRecord(const std::string& what, std::size_t index)
      : std::runtime_error(what), record_index(index) {}
  std::size_t record_index;
};

struct TrainingFailed : std::runtime_error {
  TrainingFailed(const std::string& what, double acc)
      : std::runtime_error(what), achieved_accuracy(acc) {}
  double achieved_accuracy;
};

struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace advrl
