// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tbps {

enum class ErrorCode {
  ZeroVector,
  DimMismatch,
  ShapeMismatch,
  NonPositiveTemperature,
  NonFinite,
  LengthMismatch,
  NoPositive,
  BadPairing,
  MissingTerm,
  BadParam,
  PoolTooSmall,
  EmptyPool,
  BadConfig,
  BadLayerId,
  SpecTooLarge,
  ParseError,
  MissingField,
  FractionOutOfRange,
  StepOutOfRange,
  BatchTooSmall,
  NonFiniteLoss,
  EmptyGallery,
  BadModule,
  XOutOfRange,
  ConfigError,
  TranslatorFailure,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-checkable error code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tbps
