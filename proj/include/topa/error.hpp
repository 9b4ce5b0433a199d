#pragma once

#include <stdexcept>
#include <string>

namespace topa {

enum class ErrorCode {
    // tideo_data
    FrameCountOutOfRange,
    EmptyCaption,
    MalformedRecord,
    AnswerOutOfRange,
    DuplicateOptions,
    IdMismatch,
    // tideo_gen
    EmptySource,
    MissingTemplate,
    UnfilledPlaceholder,
    UnparseableStructure,
    SchemaViolation,
    ClientExhausted,
    // dual_encoder
    EncoderFailure,
    DimensionMismatch,
    EmptyVocabulary,
    // memory_projection
    NonPositiveTemperature,
    EmptyCaptionStream,
    // aligner
    MissingAnnotationField,
    NonFiniteLoss,
    DivergenceDetected,
    // eval_harness
    EmptyOption,
    GenerationOverrun,
    MissingMemory,
    // cli
    FingerprintMismatch,
    ConfigError,
    IoError,
};

const char* to_string(ErrorCode code);

/// Exception carrying a machine-checkable code plus human context.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail)
        : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

}  // namespace topa
