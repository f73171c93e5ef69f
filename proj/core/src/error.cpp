// SPDX-License-Identifier: Apache-2.0
#include "tbps/error.hpp"

namespace tbps {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NoPositive: return "NoPositive";
    case ErrorCode::BadPairing: return "BadPairing";
    case ErrorCode::MissingTerm: return "MissingTerm";
    case ErrorCode::BadParam: return "BadParam";
    case ErrorCode::PoolTooSmall: return "PoolTooSmall";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::BadLayerId: return "BadLayerId";
    case ErrorCode::SpecTooLarge: return "SpecTooLarge";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::FractionOutOfRange: return "FractionOutOfRange";
    case ErrorCode::StepOutOfRange: return "StepOutOfRange";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyGallery: return "EmptyGallery";
    case ErrorCode::BadModule: return "BadModule";
    case ErrorCode::XOutOfRange: return "XOutOfRange";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::TranslatorFailure: return "TranslatorFailure";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace tbps
