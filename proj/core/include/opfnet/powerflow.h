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

#ifndef OPFNET_POWERFLOW_H_
#define OPFNET_POWERFLOW_H_

#include <array>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "opfnet/case_model.h"

namespace opfnet {

// A candidate operating point: pg/qg per generator, vm/va per bus (p.u. and
// radians).
struct DispatchState {
  Eigen::VectorXd pg;
  Eigen::VectorXd qg;
  Eigen::VectorXd vm;
  Eigen::VectorXd va;
};

// Throws ShapeError unless the vector lengths match the network.
void CheckDispatchShape(const Network& net, const DispatchState& state);

enum class ConstraintFamily : int {
  kPg = 0,
  kQg = 1,
  kVm = 2,
  kBranchFlow = 3,
  kAngleDiff = 4,
};
inline constexpr int kNumConstraintFamilies = 5;
std::string_view ConstraintFamilyName(ConstraintFamily family);

struct FamilyTally {
  int satisfied = 0;
  int total = 0;
  // Distance past the violated bound, one entry per violated constraint.
  std::vector<double> depths;
};

struct ConstraintReport {
  std::array<FamilyTally, kNumConstraintFamilies> families;
  Eigen::VectorXd mismatch_p;
  Eigen::VectorXd mismatch_q;

  const FamilyTally& operator[](ConstraintFamily f) const {
    return families[static_cast<int>(f)];
  }
};

struct Injections {
  Eigen::VectorXd p;
  Eigen::VectorXd q;
};

// S_i = V_i conj(sum_j Y_ij V_j).
Injections NodalInjections(const Network& net, const Eigen::VectorXd& vm,
                           const Eigen::VectorXd& va);
Eigen::VectorXcd ComplexVoltages(const Eigen::VectorXd& vm,
                                 const Eigen::VectorXd& va);

struct BranchFlowSet {
  Eigen::VectorXd p_from;
  Eigen::VectorXd q_from;
  Eigen::VectorXd p_to;
  Eigen::VectorXd q_to;
};

// Pi-model flows at both ends; out-of-service branches carry zero flow.
BranchFlowSet BranchFlows(const Network& net, const Eigen::VectorXd& vm,
                          const Eigen::VectorXd& va);

struct Mismatch {
  Eigen::VectorXd p;
  Eigen::VectorXd q;
  double MaxAbs() const;
};

// r = M_gen^T pg - pd - S_inj(vm, va), split into real and imaginary parts.
Mismatch NodalMismatch(const Network& net, const DispatchState& state,
                       const Eigen::VectorXd& pd, const Eigen::VectorXd& qd);

inline constexpr double kDefaultFeasibilityTol = 1e-4;

// Checks generator limits, voltage limits, from-end apparent flow against
// s_max (unrated branches skipped), and angle-difference limits when present.
// An entry is satisfied when it is within `tol` of its interval.
ConstraintReport EvaluateConstraints(const Network& net,
                                     const DispatchState& state,
                                     const Eigen::VectorXd& pd,
                                     const Eigen::VectorXd& qd,
                                     double tol = kDefaultFeasibilityTol);

// kappa: percentage satisfied per family (100 when a family has no entries).
// delta: mean violation depth over violated entries (0 when none).
struct ViolationMetrics {
  std::array<double, kNumConstraintFamilies> kappa{};
  std::array<double, kNumConstraintFamilies> delta{};
  std::array<int, kNumConstraintFamilies> violated{};
  std::array<int, kNumConstraintFamilies> total{};

  double kappa_of(ConstraintFamily f) const {
    return kappa[static_cast<int>(f)];
  }
  double delta_of(ConstraintFamily f) const {
    return delta[static_cast<int>(f)];
  }
};

// Throws Error on an empty report list.
ViolationMetrics ComputeViolationMetrics(
    std::span<const ConstraintReport> reports);

}  // namespace opfnet

#endif  // OPFNET_POWERFLOW_H_
