#pragma once

#include <stdexcept>
#include <string>

namespace tibp {

enum class ErrorKind {
  dimension,
  degenerate_variance,
  numeric,
  variant,
  precondition,
  data,
  format,
  usage,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace tibp
