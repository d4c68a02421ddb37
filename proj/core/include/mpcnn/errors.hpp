#pragma once

#include <stdexcept>
#include <string>

namespace mpcnn {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class EncodeRangeError : public std::range_error {
 public:
  using std::range_error::range_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TransportError : public std::runtime_error {
 public:
  enum class Kind { kDisconnected, kTimeout, kUnknownSession, kLengthMismatch, kProtocol };

  TransportError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// Raised by the dealer or a randomness source. Covers unknown sessions,
// replayed requests, shape mismatches against a pre-dealt budget and
// exhaustion of a pre-dealt queue.
class RandomnessError : public std::runtime_error {
 public:
  enum class Kind { kUnknownSession, kReplay, kMismatch, kExhausted };

  RandomnessError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class GraphError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace mpcnn
