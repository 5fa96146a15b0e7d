#pragma once

#include <stdexcept>
#include <string>

namespace glassbox {

/// Base of every error raised by the library. Each subclass corresponds to one
/// failure category so callers (and the HTTP layer) can map them to responses.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define GLASSBOX_DECLARE_ERROR(Name)       \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

GLASSBOX_DECLARE_ERROR(ShapeError);
GLASSBOX_DECLARE_ERROR(NumericError);
GLASSBOX_DECLARE_ERROR(DivergenceError);
GLASSBOX_DECLARE_ERROR(FormatError);
GLASSBOX_DECLARE_ERROR(GenerationError);
GLASSBOX_DECLARE_ERROR(StatsError);
GLASSBOX_DECLARE_ERROR(RangeError);
GLASSBOX_DECLARE_ERROR(TraceError);
GLASSBOX_DECLARE_ERROR(PhaseError);
GLASSBOX_DECLARE_ERROR(ValidationError);
GLASSBOX_DECLARE_ERROR(EditError);
GLASSBOX_DECLARE_ERROR(ParseError);
GLASSBOX_DECLARE_ERROR(MissingDataError);
GLASSBOX_DECLARE_ERROR(UniquenessError);
GLASSBOX_DECLARE_ERROR(DependencyError);
GLASSBOX_DECLARE_ERROR(NotFoundError);
GLASSBOX_DECLARE_ERROR(IoError);

#undef GLASSBOX_DECLARE_ERROR

}  // namespace glassbox
