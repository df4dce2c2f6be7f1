#pragma once

#include <stdexcept>
#include <string>

namespace tcem {

// Every error carries a short machine-readable code; the CLI prints it as
// `error_code=<code>` on stderr.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define TCEM_DEFINE_ERROR(Name, code_str)                                  \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what) : Error(code_str, what) {}      \
  };

TCEM_DEFINE_ERROR(DimensionError, "dimension")
TCEM_DEFINE_ERROR(ArgumentError, "argument")
TCEM_DEFINE_ERROR(StateError, "state")
TCEM_DEFINE_ERROR(DataError, "data")
TCEM_DEFINE_ERROR(ParseError, "parse")
TCEM_DEFINE_ERROR(ConfigError, "config")
TCEM_DEFINE_ERROR(IoError, "io")
TCEM_DEFINE_ERROR(DeterminismError, "determinism")
TCEM_DEFINE_ERROR(CompatibilityError, "compatibility")
TCEM_DEFINE_ERROR(TrainingError, "training")

#undef TCEM_DEFINE_ERROR

}  // namespace tcem
