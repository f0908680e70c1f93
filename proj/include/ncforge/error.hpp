#pragma once

#include <stdexcept>
#include <string>

namespace ncf {

// Base for every error raised by the library. kind() is a stable, single-word
// tag used by the CLI for machine-parsable failure lines.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define NCF_DEFINE_ERROR(Name)                                    \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  };

NCF_DEFINE_ERROR(InvalidInput)
NCF_DEFINE_ERROR(ShapeError)
NCF_DEFINE_ERROR(NumericalError)
NCF_DEFINE_ERROR(FormatError)
NCF_DEFINE_ERROR(SpecError)
NCF_DEFINE_ERROR(DegenerateGeometry)
NCF_DEFINE_ERROR(ConfigError)

#undef NCF_DEFINE_ERROR

}  // namespace ncf
