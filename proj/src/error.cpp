#include "topa/error.hpp"

namespace topa {

const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::FrameCountOutOfRange: return "FrameCountOutOfRange";
        case ErrorCode::EmptyCaption: return "EmptyCaption";
        case ErrorCode::MalformedRecord: return "MalformedRecord";
        case ErrorCode::AnswerOutOfRange: return "AnswerOutOfRange";
        case ErrorCode::DuplicateOptions: return "DuplicateOptions";
        case ErrorCode::IdMismatch: return "IdMismatch";
        case ErrorCode::EmptySource: return "EmptySource";
        case ErrorCode::MissingTemplate: return "MissingTemplate";
        case ErrorCode::UnfilledPlaceholder: return "UnfilledPlaceholder";
        case ErrorCode::UnparseableStructure: return "UnparseableStructure";
        case ErrorCode::SchemaViolation: return "SchemaViolation";
        case ErrorCode::ClientExhausted: return "ClientExhausted";
        case ErrorCode::EncoderFailure: return "EncoderFailure";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::EmptyVocabulary: return "EmptyVocabulary";
        case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
        case ErrorCode::EmptyCaptionStream: return "EmptyCaptionStream";
        case ErrorCode::MissingAnnotationField: return "MissingAnnotationField";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::DivergenceDetected: return "DivergenceDetected";
        case ErrorCode::EmptyOption: return "EmptyOption";
        case ErrorCode::GenerationOverrun: return "GenerationOverrun";
        case ErrorCode::MissingMemory: return "MissingMemory";
        case ErrorCode::FingerprintMismatch: return "FingerprintMismatch";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::IoError: return "IoError";
    }
    return "UnknownError";
}

}  // namespace topa
