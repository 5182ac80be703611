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

#ifndef OPFNET_DDA_H_
#define OPFNET_DDA_H_

#include <array>
#include <vector>

#include <Eigen/Dense>

#include "opfnet/autodiff.h"
#include "opfnet/case_model.h"

namespace opfnet {

enum class BoundFamily : int { kPg = 0, kQg = 1, kVm = 2 };
inline constexpr int kNumBoundFamilies = 3;
const char* BoundFamilyName(BoundFamily family);

// Per-node bounds of one case for the inequality families (generator
// quantities aggregated per node) plus a per-bus equality tolerance. The
// original values are kept so every forward pass can restart from them.
class BoundState {
 public:
  BoundState() = default;
  static BoundState FromNetwork(const Network& net, double eq_tolerance = 1e-3);

  int num_nodes() const { return static_cast<int>(eps_.size()); }
  // Nodes where a family applies (generator nodes for Pg/Qg, all for V).
  const std::vector<int>& members(BoundFamily f) const { return members_[Index(f)]; }
  const Eigen::VectorXd& lo(BoundFamily f) const { return lo_[Index(f)]; }
  const Eigen::VectorXd& hi(BoundFamily f) const { return hi_[Index(f)]; }
  const Eigen::VectorXd& original_lo(BoundFamily f) const { return orig_lo_[Index(f)]; }
  const Eigen::VectorXd& original_hi(BoundFamily f) const { return orig_hi_[Index(f)]; }
  const Eigen::VectorXd& eps() const { return eps_; }
  const Eigen::VectorXd& original_eps() const { return orig_eps_; }
  // eps - original eps: the equality dead zone, zero at the originals.
  Eigen::VectorXd EqualitySlack() const { return eps_ - orig_eps_; }

  void Reset();
  bool AtOriginal() const;

  Eigen::VectorXd& mutable_lo(BoundFamily f) { return lo_[Index(f)]; }
  Eigen::VectorXd& mutable_hi(BoundFamily f) { return hi_[Index(f)]; }
  Eigen::VectorXd& mutable_eps() { return eps_; }

 private:
  static int Index(BoundFamily f) { return static_cast<int>(f); }

  std::array<std::vector<int>, kNumBoundFamilies> members_;
  std::array<Eigen::VectorXd, kNumBoundFamilies> lo_, hi_, orig_lo_, orig_hi_;
  Eigen::VectorXd eps_, orig_eps_;
};

// Entry indices refer to the batch: member k of graph b is b * |members| + k.
// Equality entries index the stacked residual vector [r_p; r_q] of length
// 2 * batch * nodes.
struct ViolationSets {
  std::array<std::vector<int>, kNumBoundFamilies> above, below;
  std::array<int, kNumBoundFamilies> family_size{};
  std::vector<int> eq_positive, eq_negative;
  int eq_size = 0;
};

// `prediction` is (batch * nodes) x 4; residuals are (batch * nodes) x 1.
ViolationSets ComputeViolationSets(const ad::Matrix& prediction,
                                   const ad::Matrix& residual_p,
                                   const ad::Matrix& residual_q,
                                   const BoundState& bounds, int batch);

// |set| / n; throws Error when n is zero.
double ViolationRatio(std::size_t set_size, int n);

struct ViolationRatios {
  std::array<double, kNumBoundFamilies> above{};
  std::array<double, kNumBoundFamilies> below{};
  double eq_positive = 0.0;
  double eq_negative = 0.0;
};
// Families with no entries get ratio 0.
ViolationRatios ComputeRatios(const ViolationSets& sets);

struct DdaConfig {
  bool enabled = true;
  // Cumulative relaxation limit as a fraction of the original width (and of
  // the original eps for the equality tolerance).
  double relax_cap = 0.5;
  double eq_tolerance = 1e-3;
  // Scale by the bound's own magnitude instead of the interval width,
  // clamped so an interval never shrinks.
  bool literal_rule = false;
};

// One relaxation step: hi += rho_above * w, lo -= rho_below * w with w the
// original width, eps *= 1 + |rho_eq+ - rho_eq-|, all capped.
void AdjustBounds(BoundState& bounds, const ViolationRatios& ratios,
                  const DdaConfig& config);

}  // namespace opfnet

#endif  // OPFNET_DDA_H_
