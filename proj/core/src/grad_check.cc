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

#include "opfnet/grad_check.h"

#include <algorithm>
#include <cmath>

namespace opfnet::ad {
namespace {

double Evaluate(const ScalarFunction& f, const std::vector<Matrix>& inputs) {
  Tape tape;
  std::vector<Tensor> vars;
  for (const Matrix& m : inputs) vars.push_back(tape.Constant(m));
  return f(tape, vars).scalar();
}

}  // namespace

GradCheckReport CheckGradients(const ScalarFunction& f,
                               const std::vector<Matrix>& inputs,
                               const GradCheckOptions& options) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Tensor> vars;
    for (const Matrix& m : inputs) vars.push_back(tape.Variable(m));
    const Tensor loss = f(tape, vars);
    tape.Backward(loss);
    for (const Tensor& v : vars) analytic.push_back(v.grad());
  }

  GradCheckReport report;
  std::vector<Matrix> probe = inputs;
  for (size_t k = 0; k < inputs.size(); ++k) {
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k].data()[i];
      probe[k].data()[i] = x0 + options.step;
      const double up = Evaluate(f, probe);
      probe[k].data()[i] = x0 - options.step;
      const double down = Evaluate(f, probe);
      probe[k].data()[i] = x0;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[k].data()[i];
      const double err = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), options.floor});
      ++report.checked;
      if (err > report.max_relative_error || report.worst_input < 0) {
        report.max_relative_error = err;
        report.worst_input = static_cast<int>(k);
        report.worst_entry = static_cast<int>(i);
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  report.passed = report.max_relative_error < options.tolerance;
  return report;
}

}  // namespace opfnet::ad
