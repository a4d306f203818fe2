#pragma once

#include <stdexcept>
#include <string>

namespace promptkd {

// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class IndexError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class LengthError : public Error { using Error::Error; };
class EncodingError : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };
class DependencyError : public Error { using Error::Error; };
class AggregationError : public Error { using Error::Error; };

}  // namespace promptkd
