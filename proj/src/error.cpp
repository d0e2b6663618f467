#include "smm/error.hpp"

namespace smm {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::input: return "input";
    case ErrorKind::validation: return "validation";
    case ErrorKind::external: return "external";
    case ErrorKind::numeric: return "numeric";
  }
  return "unknown";
}

}  // namespace smm
