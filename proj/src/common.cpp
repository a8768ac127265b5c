#include "corrhal/common.hpp"

namespace corrhal {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
        case ErrorCode::NonFiniteInput: return "NonFiniteInput";
        case ErrorCode::NonFiniteCost: return "NonFiniteCost";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::UncoveredFrustum: return "UncoveredFrustum";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
        case ErrorCode::EmptyBatch: return "EmptyBatch";
        case ErrorCode::EmptyDataset: return "EmptyDataset";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::BadFormat: return "BadFormat";
    }
    return "Unknown";
}

}  // namespace corrhal
