#pragma once

#include <stdexcept>
#include <string>

namespace pathtext {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Configuration / usage errors (CLI exit code 2).
struct ConfigError : Error {
  using Error::Error;
};

// Input data errors (CLI exit code 3).
struct DataError : Error {
  using Error::Error;
};

// --- autodiff ---
struct ShapeMismatch : Error {
  using Error::Error;
};
struct NotScalar : Error {
  using Error::Error;
};
struct NoTape : Error {
  using Error::Error;
};
struct MissingGrad : Error {
  using Error::Error;
};
struct InvalidStep : Error {
  using Error::Error;
};

// --- corpus ---
struct InvalidTriple : Error {
  using Error::Error;
};

// --- fuzzy matching ---
struct EmptyCorpus : Error {
  using Error::Error;
};

// --- model ---
struct EmptyInput : Error {
  using Error::Error;
};
struct TooLong : Error {
  using Error::Error;
};
struct UnknownDecoder : Error {
  using Error::Error;
};
struct DegenerateIntermediate : Error {
  using Error::Error;
};

// --- training ---
struct NonFiniteLoss : Error {
  using Error::Error;
};

// --- evaluation ---
struct EmptyPool : Error {
  using Error::Error;
};
struct NoPairs : Error {
  using Error::Error;
};

// --- graph ---
struct TooLarge : Error {
  using Error::Error;
};
struct LengthMismatch : Error {
  using Error::Error;
};

}  // namespace pathtext
