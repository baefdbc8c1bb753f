#pragma once

#include <stdexcept>
#include <string>

namespace ffsm {

// Error classes carry a stable machine-readable name; the CLI maps each
// class onto an exit code.
enum class ErrorKind {
  Dimension,
  Geometry,
  Value,
  Graph,
  Numeric,
  Format,
  Parse,
  Capacity,
  Config,
  Usage,
  Io,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

#define FFSM_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& message) : Error(Kind, message) {} \
  };

FFSM_DEFINE_ERROR(DimensionError, ErrorKind::Dimension)
FFSM_DEFINE_ERROR(GeometryError, ErrorKind::Geometry)
FFSM_DEFINE_ERROR(ValueError, ErrorKind::Value)
FFSM_DEFINE_ERROR(GraphError, ErrorKind::Graph)
FFSM_DEFINE_ERROR(NumericError, ErrorKind::Numeric)
FFSM_DEFINE_ERROR(FormatError, ErrorKind::Format)
FFSM_DEFINE_ERROR(CapacityError, ErrorKind::Capacity)
FFSM_DEFINE_ERROR(ConfigError, ErrorKind::Config)
FFSM_DEFINE_ERROR(UsageError, ErrorKind::Usage)
FFSM_DEFINE_ERROR(IoError, ErrorKind::Io)

#undef FFSM_DEFINE_ERROR

// Row-numbered parse failure (inventory CSV and friends).
class ParseError : public Error {
 public:
  ParseError(std::size_t row, const std::string& message)
      : Error(ErrorKind::Parse, "row " + std::to_string(row) + ": " + message), row_(row) {}

  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

}  // namespace ffsm
