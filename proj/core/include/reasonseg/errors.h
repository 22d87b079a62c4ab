#pragma once

#include <stdexcept>
#include <string>

namespace reasonseg {

// Caller supplied a value that violates a documented precondition.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bytes could not be decoded into the requested value.
class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A generation backend failed after its retry budget was spent.
class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::string image_id, const std::string& what)
      : std::runtime_error(image_id.empty() ? what : image_id + ": " + what),
        image_id_(std::move(image_id)) {}
  const std::string& image_id() const noexcept { return image_id_; }

 private:
  std::string image_id_;
};

class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Conflict : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure inside the model (non-finite activations or losses).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A capacity limit is reached; the request may succeed later.
class Unavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace reasonseg
