#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace smm {

// Categories map onto CLI exit codes.
enum class ErrorKind {
  usage = 2,
  input = 3,
  validation = 4,
  external = 5,
  numeric = 6,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace smm
