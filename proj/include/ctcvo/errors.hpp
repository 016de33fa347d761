#pragma once

#include <stdexcept>
#include <string>

namespace ctcvo {

/// Broad failure classes. The CLI maps these to process exit codes.
enum class ErrorCategory { Usage, Data, Numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define CTCVO_DEFINE_ERROR(Name, Category)                           \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what)                           \
        : Error(ErrorCategory::Category, #Name ": " + what) {}       \
  }

// pose algebra
CTCVO_DEFINE_ERROR(DegenerateQuaternion, Numerical);
CTCVO_DEFINE_ERROR(NotARotation, Data);

// losses and model shapes
CTCVO_DEFINE_ERROR(InvalidK, Data);
CTCVO_DEFINE_ERROR(ShapeMismatch, Data);
CTCVO_DEFINE_ERROR(EmptyBatch, Data);

// datasets and files
CTCVO_DEFINE_ERROR(MissingFile, Data);
CTCVO_DEFINE_ERROR(PoseParseError, Data);
CTCVO_DEFINE_ERROR(LengthMismatch, Data);
CTCVO_DEFINE_ERROR(SequenceTooShort, Data);
CTCVO_DEFINE_ERROR(IoError, Data);
CTCVO_DEFINE_ERROR(ConfigError, Data);

// training
CTCVO_DEFINE_ERROR(NonFiniteLoss, Numerical);
CTCVO_DEFINE_ERROR(UnknownScene, Data);
CTCVO_DEFINE_ERROR(SceneExists, Data);
CTCVO_DEFINE_ERROR(CheckpointMismatch, Data);

// command line
CTCVO_DEFINE_ERROR(UsageError, Usage);

#undef CTCVO_DEFINE_ERROR

}  // namespace ctcvo
