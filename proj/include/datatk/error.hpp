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

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace datatk {

enum class ErrorKind {
  // Dump format / store validation.
  BadMagic,
  UnsupportedVersion,
  ShapeMismatch,
  NonFiniteValue,
  DuplicateLayerName,
  IoError,
  // Store queries.
  IndexOutOfRange,
  EmptySubset,
  AllZeroGradients,
  // Estimators.
  NonPositiveDamping,
  DimensionCapExceeded,
  Divergence,
  MissingFactoredSection,
  FactorReconstructionMismatch,
  SubsetBudgetExceeded,
  EmptySide,
  // Model lab.
  NonFiniteLoss,
  InvalidArgument,
  // Metrics.
  DegenerateVariance,
  SingleClass,
  UnknownClass,
};

std::string_view to_string(ErrorKind kind);

// Coarse grouping used by the CLI to pick an exit code.
enum class ErrorCategory { Validation, Numeric, Io };

ErrorCategory category_of(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }
  ErrorCategory category() const noexcept { return category_of(kind_); }
  // The message without the kind prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

}  // namespace datatk
