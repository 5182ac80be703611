// Copyright 2026 The opfnet Authors
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef OPFNET_GRAD_CHECK_H_
#define OPFNET_GRAD_CHECK_H_

#include <functional>
#include <vector>

#include "opfnet/autodiff.h"

namespace opfnet::ad {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the relative error, so entries whose true
  // gradient is ~0 are judged on an absolute scale.
  double floor = 1e-3;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  int worst_input = -1;
  int worst_entry = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  int checked = 0;
  bool passed = false;
};

// `f` builds a scalar from tape variables holding `inputs`. Every entry of
// every input is perturbed by +-step; the error per entry is
// |analytic - numeric| / max(|analytic|, |numeric|, floor).
using ScalarFunction =
    std::function<Tensor(Tape& tape, const std::vector<Tensor>& inputs)>;
GradCheckReport CheckGradients(const ScalarFunction& f,
                               const std::vector<Matrix>& inputs,
                               const GradCheckOptions& options = {});

}  // namespace opfnet::ad

#endif  // OPFNET_GRAD_CHECK_H_
