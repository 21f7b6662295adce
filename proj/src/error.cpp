#include "resexp/error.hpp"

namespace resexp {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::TapeConsumed: return "TapeConsumed";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::InvalidState: return "InvalidState";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InputTooLarge: return "InputTooLarge";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::NoDescentDirection: return "NoDescentDirection";
    case ErrorCode::ZeroMeanSignal: return "ZeroMeanSignal";
    case ErrorCode::InvalidCovariance: return "InvalidCovariance";
    case ErrorCode::StepTooLarge: return "StepTooLarge";
    case ErrorCode::BetaZero: return "BetaZero";
    case ErrorCode::Unsatisfiable: return "Unsatisfiable";
    case ErrorCode::DivergedTraining: return "DivergedTraining";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace resexp
