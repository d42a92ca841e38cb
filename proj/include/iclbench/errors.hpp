#pragma once

#include <stdexcept>
#include <string>

namespace iclbench {

// Every failure surfaced by the library derives from Error so callers can
// catch the whole family at a boundary (the CLI maps them to exit codes).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ICLBENCH_DEFINE_ERROR(Name)      \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  };

ICLBENCH_DEFINE_ERROR(ShapeMismatchError)
ICLBENCH_DEFINE_ERROR(NonFiniteError)
ICLBENCH_DEFINE_ERROR(NotScalarError)
ICLBENCH_DEFINE_ERROR(DetachedNodeError)
ICLBENCH_DEFINE_ERROR(NonPositiveVarianceError)
ICLBENCH_DEFINE_ERROR(DivergenceError)
ICLBENCH_DEFINE_ERROR(EmptyCurveError)
ICLBENCH_DEFINE_ERROR(InsufficientSeedsError)
ICLBENCH_DEFINE_ERROR(MissingRunError)
ICLBENCH_DEFINE_ERROR(ConfigError)
ICLBENCH_DEFINE_ERROR(IoError)

#undef ICLBENCH_DEFINE_ERROR

}  // namespace iclbench
