#pragma once

#include <stdexcept>
#include <string>

namespace pyrd {

// Invalid layer/model/op configuration (bad shapes, bad presets, bad modes).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user-supplied data (annotations out of bounds, empty metric lists, ...).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File format / serialization failures (weight files, PGM, CSV, JSON).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training aborted (non-finite gradients or loss).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pyrd
