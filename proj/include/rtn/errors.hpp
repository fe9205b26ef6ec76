#ifndef RTN_ERRORS_HPP_
#define RTN_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace rtn {

// Error taxonomy, mapped to process exit codes by the CLI:
//   UsageError / DimensionError / ConfigError -> 1
//   ParseError / DataError                    -> 2
//   NumericError                              -> 3
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

class DimensionError : public UsageError {
 public:
  explicit DimensionError(const std::string& msg) : UsageError(msg) {}
};

class ConfigError : public UsageError {
 public:
  explicit ConfigError(const std::string& msg) : UsageError(msg) {}
};

class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rtn

#endif  // RTN_ERRORS_HPP_
