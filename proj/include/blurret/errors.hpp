#pragma once

#include <stdexcept>
#include <string>

namespace blurret {

// Base class for all library errors. `kind()` is a stable machine-readable
// tag used by the CLI when emitting JSON error objects.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(msg), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

#define BLURRET_DEFINE_ERROR(Name)                          \
  class Name : public Error {                               \
   public:                                                  \
    explicit Name(const std::string& msg) : Error(#Name, msg) {} \
  }

BLURRET_DEFINE_ERROR(OutOfBounds);
BLURRET_DEFINE_ERROR(ShapeMismatch);
BLURRET_DEFINE_ERROR(ShapeError);
BLURRET_DEFINE_ERROR(DomainError);
BLURRET_DEFINE_ERROR(EmptyErodedMask);
BLURRET_DEFINE_ERROR(EmptyAlpha);
BLURRET_DEFINE_ERROR(RecordRejected);
BLURRET_DEFINE_ERROR(GenerationFailure);
BLURRET_DEFINE_ERROR(InsufficientObjects);
BLURRET_DEFINE_ERROR(SamplingExhausted);
BLURRET_DEFINE_ERROR(EmptyIndex);
BLURRET_DEFINE_ERROR(DegenerateDescriptor);
BLURRET_DEFINE_ERROR(IoError);
BLURRET_DEFINE_ERROR(ConfigError);
BLURRET_DEFINE_ERROR(TrainingDiverged);

#undef BLURRET_DEFINE_ERROR

}  // namespace blurret
