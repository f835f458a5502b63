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

#include <vector>

#include "datatk/model_lab.hpp"

namespace datatk::lab::detail {

struct Trace {
  std::vector<Vector> inputs;      // input activation of each layer
  std::vector<Vector> deltas;      // dℓ/dz for each layer's pre-activation
  std::vector<RowMatrix> weights;  // effective weights used in the pass
  double logit = 0.0;
  double loss = 0.0;
};

Trace backprop(const LabModel& model, const Eigen::Ref<const Vector>& x, std::uint8_t label);

// Trainable-parameter gradients, two entries per layer:
// adapters -> (up, down); no adapters -> (weight, bias as a column).
using ParamGrads = std::vector<RowMatrix>;

ParamGrads param_gradients(const LabModel& model, const Trace& t);
void apply_step(LabModel& model, const ParamGrads& grads, double step);

}  // namespace datatk::lab::detail
