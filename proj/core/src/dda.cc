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

#include "opfnet/dda.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "opfnet/error.h"
#include "opfnet/gnn.h"

namespace opfnet {
namespace {

constexpr std::array<BoundFamily, kNumBoundFamilies> kFamilies = {
    BoundFamily::kPg, BoundFamily::kQg, BoundFamily::kVm};

int OutputColumn(BoundFamily f) {
  switch (f) {
    case BoundFamily::kPg:
      return kOutPg;
    case BoundFamily::kQg:
      return kOutQg;
    case BoundFamily::kVm:
      return kOutVm;
  }
  return kOutVm;
}

}  // namespace

const char* BoundFamilyName(BoundFamily family) {
  switch (family) {
    case BoundFamily::kPg:
      return "pg";
    case BoundFamily::kQg:
      return "qg";
    case BoundFamily::kVm:
      return "vm";
  }
  return "unknown";
}

BoundState BoundState::FromNetwork(const Network& net, double eq_tolerance) {
  const GridCase& grid = net.grid();
  const int n = net.num_buses();
  BoundState s;
  for (BoundFamily f : kFamilies) {
    const int k = Index(f);
    s.orig_lo_[k] = Eigen::VectorXd::Zero(n);
    s.orig_hi_[k] = Eigen::VectorXd::Zero(n);
  }
  for (int i = 0; i < n; ++i) {
    const auto& gens = net.bus_generators()[i];
    if (!gens.empty()) {
      s.members_[Index(BoundFamily::kPg)].push_back(i);
      s.members_[Index(BoundFamily::kQg)].push_back(i);
    }
    s.members_[Index(BoundFamily::kVm)].push_back(i);
    for (int g : gens) {
      s.orig_lo_[Index(BoundFamily::kPg)][i] += grid.gens[g].pmin;
      s.orig_hi_[Index(BoundFamily::kPg)][i] += grid.gens[g].pmax;
      s.orig_lo_[Index(BoundFamily::kQg)][i] += grid.gens[g].qmin;
      s.orig_hi_[Index(BoundFamily::kQg)][i] += grid.gens[g].qmax;
    }
    s.orig_lo_[Index(BoundFamily::kVm)][i] = grid.buses[i].vmin;
    s.orig_hi_[Index(BoundFamily::kVm)][i] = grid.buses[i].vmax;
  }
  s.orig_eps_ = Eigen::VectorXd::Constant(n, eq_tolerance);
  s.Reset();
  return s;
}

void BoundState::Reset() {
  lo_ = orig_lo_;
  hi_ = orig_hi_;
  eps_ = orig_eps_;
}

bool BoundState::AtOriginal() const {
  return lo_ == orig_lo_ && hi_ == orig_hi_ && eps_ == orig_eps_;
}

ViolationSets ComputeViolationSets(const ad::Matrix& prediction,
                                   const ad::Matrix& residual_p,
                                   const ad::Matrix& residual_q,
                                   const BoundState& bounds, int batch) {
  const int n = bounds.num_nodes();
  if (prediction.rows() != static_cast<Eigen::Index>(n) * batch ||
      prediction.cols() != kNumNodeOutputs ||
      residual_p.rows() != prediction.rows() ||
      residual_q.rows() != prediction.rows()) {
    throw ShapeError("violation sets: prediction/residual shapes do not match");
  }
  ViolationSets sets;
  for (BoundFamily f : kFamilies) {
    const int k = static_cast<int>(f);
    const auto& members = bounds.members(f);
    const int m = static_cast<int>(members.size());
    sets.family_size[k] = m * batch;
    for (int b = 0; b < batch; ++b) {
      for (int j = 0; j < m; ++j) {
        const int node = members[j];
        const double x = prediction(b * n + node, OutputColumn(f));
        if (x > bounds.hi(f)[node]) sets.above[k].push_back(b * m + j);
        if (x < bounds.lo(f)[node]) sets.below[k].push_back(b * m + j);
      }
    }
  }
  const int rows = n * batch;
  sets.eq_size = 2 * rows;
  for (int part = 0; part < 2; ++part) {
    const ad::Matrix& r = part == 0 ? residual_p : residual_q;
    for (int i = 0; i < rows; ++i) {
      const double tol = bounds.eps()[i % n];
      if (r(i, 0) > tol) sets.eq_positive.push_back(part * rows + i);
      if (r(i, 0) < -tol) sets.eq_negative.push_back(part * rows + i);
    }
  }
  return sets;
}

double ViolationRatio(std::size_t set_size, int n) {
  if (n <= 0) throw Error("violation ratio of an empty family");
  return static_cast<double>(set_size) / static_cast<double>(n);
}

ViolationRatios ComputeRatios(const ViolationSets& sets) {
  ViolationRatios r;
  for (int k = 0; k < kNumBoundFamilies; ++k) {
    if (sets.family_size[k] == 0) continue;
    r.above[k] = ViolationRatio(sets.above[k].size(), sets.family_size[k]);
    r.below[k] = ViolationRatio(sets.below[k].size(), sets.family_size[k]);
  }
  if (sets.eq_size > 0) {
    r.eq_positive = ViolationRatio(sets.eq_positive.size(), sets.eq_size);
    r.eq_negative = ViolationRatio(sets.eq_negative.size(), sets.eq_size);
  }
  return r;
}

void AdjustBounds(BoundState& bounds, const ViolationRatios& ratios,
                  const DdaConfig& config) {
  for (BoundFamily f : kFamilies) {
    const int k = static_cast<int>(f);
    const double up = std::clamp(ratios.above[k], 0.0, 1.0);
    const double down = std::clamp(ratios.below[k], 0.0, 1.0);
    Eigen::VectorXd& hi = bounds.mutable_hi(f);
    Eigen::VectorXd& lo = bounds.mutable_lo(f);
    for (int i : bounds.members(f)) {
      const double olo = bounds.original_lo(f)[i];
      const double ohi = bounds.original_hi(f)[i];
      const double width = ohi - olo;
      if (!std::isfinite(width)) continue;
      double step_hi = up * width;
      double step_lo = down * width;
      if (config.literal_rule) {
        step_hi = std::max(0.0, up * hi[i]);
        step_lo = std::max(0.0, down * lo[i]);
      }
      hi[i] = std::min(hi[i] + step_hi, ohi + config.relax_cap * width);
      lo[i] = std::max(lo[i] - step_lo, olo - config.relax_cap * width);
    }
  }
  const double growth = 1.0 + std::abs(ratios.eq_positive - ratios.eq_negative);
  Eigen::VectorXd& eps = bounds.mutable_eps();
  const Eigen::VectorXd& orig = bounds.original_eps();
  for (Eigen::Index i = 0; i < eps.size(); ++i) {
    eps[i] = std::min(eps[i] * growth, orig[i] * (1.0 + config.relax_cap));
  }
}

}  // namespace opfnet
