#include "ffsm/error.hpp"

namespace ffsm {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Dimension: return "DimensionError";
    case ErrorKind::Geometry: return "GeometryError";
    case ErrorKind::Value: return "ValueError";
    case ErrorKind::Graph: return "GraphError";
    case ErrorKind::Numeric: return "NumericError";
    case ErrorKind::Format: return "FormatError";
    case ErrorKind::Parse: return "ParseError";
    case ErrorKind::Capacity: return "CapacityError";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::Usage: return "UsageError";
    case ErrorKind::Io: return "IoError";
  }
  return "Error";
}

}  // namespace ffsm
