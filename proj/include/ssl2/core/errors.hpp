#pragma once

#include <stdexcept>
#include <string>

namespace ssl2 {

// Error hierarchy. Everything user-facing derives from Error so the CLI can
// map failures onto its exit-code contract in one place.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Data / volume pipeline
struct ConstantVolume : Error {
  using Error::Error;
};
struct EmptyBrain : Error {
  using Error::Error;
};
struct TooFewSubjects : Error {
  using Error::Error;
};
struct TooFewSamples : Error {
  using Error::Error;
};
struct ShapeMismatch : Error {
  using Error::Error;
};

// Augmentation / batching
struct BatchTooSmall : Error {
  using Error::Error;
};

// Model
struct BadConfig : Error {
  using Error::Error;
};
struct HeadsAbsent : Error {
  using Error::Error;
};
struct SchemaMismatch : Error {
  using Error::Error;
};
struct MissingFile : Error {
  using Error::Error;
};

// Losses / training
struct EmptyMask : Error {
  using Error::Error;
};
struct ZeroVector : Error {
  using Error::Error;
};
struct StrategyMismatch : Error {
  using Error::Error;
};

// Reporting
struct NoResults : Error {
  using Error::Error;
};
struct IOError : Error {
  using Error::Error;
};

}  // namespace ssl2
