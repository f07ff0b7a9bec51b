#pragma once

#include <stdexcept>
#include <string>

namespace fairft {

// Broad failure classes; each maps to one CLI exit code.
enum class ErrorClass {
  usage,    // exit 1
  data,     // exit 2: malformed input, format, balancing, metric preconditions
  numeric,  // exit 3: non-finite values, divergence
};

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), class_(cls) {}
  ErrorClass error_class() const noexcept { return class_; }

 private:
  ErrorClass class_;
};

#define FAIRFT_DEFINE_ERROR(Name, Cls)                                       \
  class Name : public Error {                                                \
   public:                                                                   \
    explicit Name(const std::string& what) : Error(ErrorClass::Cls, what) {} \
  };

FAIRFT_DEFINE_ERROR(DimensionError, data)
FAIRFT_DEFINE_ERROR(ContractError, usage)
FAIRFT_DEFINE_ERROR(StateError, usage)
FAIRFT_DEFINE_ERROR(ConfigError, usage)
FAIRFT_DEFINE_ERROR(SpecError, usage)
FAIRFT_DEFINE_ERROR(FormatError, data)
FAIRFT_DEFINE_ERROR(ParseError, data)
FAIRFT_DEFINE_ERROR(BalancingError, data)
FAIRFT_DEFINE_ERROR(SplitError, data)
FAIRFT_DEFINE_ERROR(MetricError, data)
FAIRFT_DEFINE_ERROR(ReportError, data)
FAIRFT_DEFINE_ERROR(NumericError, numeric)
FAIRFT_DEFINE_ERROR(TrainingError, numeric)

#undef FAIRFT_DEFINE_ERROR

inline int exit_code(ErrorClass cls) {
  switch (cls) {
    case ErrorClass::usage: return 1;
    case ErrorClass::data: return 2;
    case ErrorClass::numeric: return 3;
  }
  return 1;
}

}  // namespace fairft
