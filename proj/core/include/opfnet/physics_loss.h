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

#ifndef OPFNET_PHYSICS_LOSS_H_
#define OPFNET_PHYSICS_LOSS_H_

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "opfnet/autodiff.h"
#include "opfnet/case_model.h"
#include "opfnet/dda.h"
#include "opfnet/powerflow.h"

namespace opfnet {

// Per-case constants for evaluating the physics terms of stacked batches.
class PhysicsModel {
 public:
  explicit PhysicsModel(const Network& net);

  int num_nodes() const { return num_nodes_; }
  int num_branches() const { return static_cast<int>(from_.size()); }

  struct Flows {
    ad::Tensor p_from, q_from, p_to, q_to;  // (batch * branches) x 1
  };
  struct Residuals {
    ad::Tensor p, q;  // (batch * nodes) x 1, generation - load - injection
  };

  // `prediction` is (batch * nodes) x 4 in NodeOutput column order.
  Flows BranchFlows(const ad::Tensor& prediction, int batch) const;
  Residuals NodalResiduals(const ad::Tensor& prediction, const ad::Matrix& pd,
                           const ad::Matrix& qd, int batch) const;

  // Rows of the in-service rated branches within a stacked flow vector.
  std::vector<int> RatedRows(int batch) const;
  const std::vector<double>& s_max() const { return s_max_; }

 private:
  int num_nodes_ = 0;
  std::vector<int> from_, to_;
  std::vector<double> s_max_;
  ad::Matrix gff_, bff_, gft_, bft_, gtf_, btf_, gtt_, btt_;  // m x 1
  ad::Matrix shunt_g_, shunt_b_;  // n x 1
};

// Node-level targets (pg/qg summed per node) in prediction layout.
ad::Matrix NodeTargets(const Network& net, const DispatchState& state);
// Stacks per-sample vectors into one (batch * n) x 1 column.
ad::Matrix StackColumns(std::span<const Eigen::VectorXd> parts);

// Mean of max(|r| - slack, 0) over both residual vectors; plain mean |r|
// when `slack` is null. `slack` is per node of one graph.
ad::Tensor LossEquality(const PhysicsModel::Residuals& residuals, int batch,
                        const Eigen::VectorXd* slack = nullptr);

struct InequalityParts {
  ad::Tensor pg, qg, vm;
  ad::Tensor total;  // pg + qg + vm
};
// Per family: mean over member entries of relu(x - hi) + relu(lo - x).
InequalityParts LossInequality(const ad::Tensor& prediction,
                               const BoundState& bounds, int batch);

// Mean over rated, in-service branches of relu(p_f^2 + q_f^2 - s_max^2);
// zero when no branch is rated.
ad::Tensor LossFlow(const PhysicsModel& physics, const ad::Tensor& prediction,
                    int batch);

// Mean squared error over the entries selected by `mask`.
ad::Tensor LossOpf(const ad::Tensor& prediction, const ad::Matrix& target,
                   const ad::Matrix& mask);

// l_opf + sum_l weights[l] * pinn[l]. Weights must be non-negative and sum
// to 1 within 1e-9.
ad::Tensor LossTotal(const ad::Tensor& l_opf, std::span<const ad::Tensor> pinn,
                     std::span<const double> weights);

void ValidateLayerWeights(std::span<const double> weights);
std::vector<double> UniformLayerWeights(int layers);

struct HierarchicalLossConfig {
  std::vector<double> layer_weights;
  DdaConfig dda;
  // pinn = mu_eq * l_eq + mu_ineq * (l_ineq + l_flow).
  double mu_eq = 1.0;
  double mu_ineq = 1.0;
};

struct LayerLoss {
  bool evaluated = false;
  ad::Tensor eq;
  InequalityParts ineq;
  ad::Tensor flow;
  ad::Tensor pinn;
  // Violation ratios of this layer's output against the bounds it was
  // scored with (all zero for the final layer, which drives no update).
  ViolationRatios ratios;
};

struct LossBreakdown {
  ad::Tensor opf;
  ad::Tensor total;
  std::vector<LayerLoss> layers;
};

// Scores every layer with positive weight (and always the last one). With
// DDA enabled, layer l's violation ratios relax the bounds for layer l + 1;
// the last layer always uses the original bounds. `pd`, `qd` are stacked
// (batch * nodes) x 1 columns.
LossBreakdown HierarchicalLoss(const PhysicsModel& physics,
                               const BoundState& original,
                               const HierarchicalLossConfig& config,
                               std::span<const ad::Tensor> layer_predictions,
                               const ad::Matrix& pd, const ad::Matrix& qd,
                               const ad::Matrix& target, const ad::Matrix& mask,
                               int batch);

}  // namespace opfnet

#endif  // OPFNET_PHYSICS_LOSS_H_
