#pragma once

#include <stdexcept>
#include <string>

namespace mact {

/// Error taxonomy shared by the library and the CLI exit-code mapping.
enum class ErrorKind {
  Validation,   // bad arguments, capacity violations, config/corpus mismatch
  Shape,        // tensor or record shape mismatch
  Parse,        // malformed input file
  Degenerate,   // degenerate numeric situation (empty track, all-masked softmax, ...)
  Numeric,      // non-finite values detected
  Io,           // filesystem failure
  Config,       // invalid configuration value
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error validation_error(std::string msg) { return Error(ErrorKind::Validation, std::move(msg)); }
inline Error shape_error(std::string msg) { return Error(ErrorKind::Shape, std::move(msg)); }
inline Error parse_error(std::string msg) { return Error(ErrorKind::Parse, std::move(msg)); }
inline Error degenerate_error(std::string msg) { return Error(ErrorKind::Degenerate, std::move(msg)); }
inline Error numeric_error(std::string msg) { return Error(ErrorKind::Numeric, std::move(msg)); }
inline Error io_error(std::string msg) { return Error(ErrorKind::Io, std::move(msg)); }
inline Error config_error(std::string msg) { return Error(ErrorKind::Config, std::move(msg)); }

}  // namespace mact
