// Copyright 2026 The datatk Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "datatk/error.hpp"

namespace datatk {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::DuplicateLayerName: return "DuplicateLayerName";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::EmptySubset: return "EmptySubset";
    case ErrorKind::AllZeroGradients: return "AllZeroGradients";
    case ErrorKind::NonPositiveDamping: return "NonPositiveDamping";
    case ErrorKind::DimensionCapExceeded: return "DimensionCapExceeded";
    case ErrorKind::Divergence: return "Divergence";
    case ErrorKind::MissingFactoredSection: return "MissingFactoredSection";
    case ErrorKind::FactorReconstructionMismatch: return "FactorReconstructionMismatch";
    case ErrorKind::SubsetBudgetExceeded: return "SubsetBudgetExceeded";
    case ErrorKind::EmptySide: return "EmptySide";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::DegenerateVariance: return "DegenerateVariance";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::UnknownClass: return "UnknownClass";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::IoError:
      return ErrorCategory::Io;
    case ErrorKind::AllZeroGradients:
    case ErrorKind::Divergence:
    case ErrorKind::NonFiniteLoss:
    case ErrorKind::DegenerateVariance:
      return ErrorCategory::Numeric;
    default:
      return ErrorCategory::Validation;
  }
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message),
      kind_(kind),
      message_(message) {}

}  // namespace datatk
