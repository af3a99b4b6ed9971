#pragma once

#include <stdexcept>
#include <string>

namespace bfr {

// Every toolkit failure derives from Error so callers can catch one type.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct ParameterError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct TrainingError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct FitError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct PairingError : Error { using Error::Error; };

}  // namespace bfr
