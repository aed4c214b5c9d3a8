#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sparsectl {

// Operand shapes do not conform for an op.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller-supplied data violates a documented precondition.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A persisted artifact (corpus, stats, checkpoint) could not be parsed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t record = npos)
      : std::runtime_error(what), record_(record) {}

  std::size_t record() const { return record_; }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  std::size_t record_;
};

// Checkpoint was produced for a different model family or configuration.
class FingerprintMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sparsectl
