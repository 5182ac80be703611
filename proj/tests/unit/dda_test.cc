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

#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "opfnet/dda.h"
#include "opfnet/error.h"
#include "opfnet/gnn.h"
#include "reference.h"

namespace opfnet {
namespace {

using ad::Matrix;
using Eigen::VectorXd;

constexpr BoundFamily kAll[] = {BoundFamily::kPg, BoundFamily::kQg, BoundFamily::kVm};

Matrix Interior(const BoundState& b, int batch) {
  const int n = b.num_nodes();
  Matrix p = Matrix::Zero(n * batch, kNumNodeOutputs);
  for (BoundFamily f : kAll) {
    const int col = f == BoundFamily::kPg ? kOutPg : f == BoundFamily::kQg ? kOutQg : kOutVm;
    for (int r = 0; r < batch; ++r)
      for (int i : b.members(f)) p(r * n + i, col) = 0.5 * (b.lo(f)[i] + b.hi(f)[i]);
  }
  return p;
}

bool SameSets(const ViolationSets& a, const ViolationSets& b) {
  return a.above == b.above && a.below == b.below && a.family_size == b.family_size &&
         a.eq_positive == b.eq_positive && a.eq_negative == b.eq_negative &&
         a.eq_size == b.eq_size;
}

TEST(ViolationSets, FeasibleIsEmpty) {
  const Network net = reference::Bundled("case9");
  const BoundState b = BoundState::FromNetwork(net);
  const Matrix zero = Matrix::Zero(18, 1);
  const ViolationSets s = ComputeViolationSets(Interior(b, 2), zero, zero, b, 2);
  for (int k = 0; k < kNumBoundFamilies; ++k) {
    EXPECT_TRUE(s.above[k].empty());
    EXPECT_TRUE(s.below[k].empty());
  }
  EXPECT_TRUE(s.eq_positive.empty());
  EXPECT_TRUE(s.eq_negative.empty());
  EXPECT_EQ(s.family_size[0], 6);
  EXPECT_EQ(s.family_size[2], 18);
  EXPECT_EQ(s.eq_size, 36);
}

TEST(ViolationSets, OneAboveOneBelowPg) {
  const Network net = reference::Bundled("case9");
  const BoundState b = BoundState::FromNetwork(net);
  Matrix p = Interior(b, 1);
  p(0, kOutPg) = b.hi(BoundFamily::kPg)[0] + 0.01;
  p(2, kOutPg) = b.lo(BoundFamily::kPg)[2] - 0.01;
  Matrix rp = Matrix::Zero(9, 1), rq = Matrix::Zero(9, 1);
  rp(4, 0) = 2e-3;
  rq(5, 0) = -2e-3;
  rq(6, 0) = 5e-4;  // inside eps
  const ViolationSets s = ComputeViolationSets(p, rp, rq, b, 1);
  EXPECT_EQ(s.above[0].size(), 1u);
  EXPECT_EQ(s.below[0].size(), 1u);
  EXPECT_TRUE(s.above[1].empty());
  EXPECT_EQ(s.eq_positive, std::vector<int>{4});
  EXPECT_EQ(s.eq_negative, std::vector<int>{9 + 5});
}

TEST(ViolationSets, MatchesBruteForceOnRandomInputs) {
  for (const char* name : {"case9", "case14", "case30", "case57"}) {
    const Network net = reference::Bundled(name);
    const BoundState b = BoundState::FromNetwork(net);
    const int n = net.num_buses();
    for (int seed = 0; seed < 20; ++seed) {
      const Matrix p = reference::RandomMatrix(3 * n, 4, seed, -1.5, 2.5);
      const Matrix rp = reference::RandomMatrix(3 * n, 1, seed + 100, -2e-3, 2e-3);
      const Matrix rq = reference::RandomMatrix(3 * n, 1, seed + 200, -2e-3, 2e-3);
      EXPECT_TRUE(SameSets(ComputeViolationSets(p, rp, rq, b, 3),
                           reference::BruteForceViolationSets(net.grid(), p, rp, rq, 3, 1e-3)))
          << name << " seed " << seed;
    }
  }
}

TEST(ViolationSets, ShapeMismatchThrows) {
  const Network net = reference::Bundled("case9");
  const BoundState b = BoundState::FromNetwork(net);
  EXPECT_THROW(ComputeViolationSets(Matrix::Zero(8, 4), Matrix::Zero(8, 1), Matrix::Zero(8, 1),
                                    b, 1),
               ShapeError);
}

TEST(ViolationRatio, Arithmetic) {
  EXPECT_EQ(ViolationRatio(0, 5), 0.0);
  EXPECT_EQ(ViolationRatio(5, 5), 1.0);
  EXPECT_EQ(ViolationRatio(3, 12), 0.25);
  EXPECT_THROW(ViolationRatio(0, 0), Error);
}

BoundState SingleWindow(double lo, double hi) {
  GridCase g = reference::TwoBusCase(0.0, 0.1, 1.0, 0.0);
  for (Bus& bus : g.buses) bus.vmin = lo, bus.vmax = hi;
  return BoundState::FromNetwork(Network(g));
}

TEST(AdjustBounds, ZeroRatiosAreAFixedPoint) {
  const Network net = reference::Bundled("case14");
  BoundState b = BoundState::FromNetwork(net);
  AdjustBounds(b, ViolationRatios{}, DdaConfig{});
  EXPECT_TRUE(b.AtOriginal());
  DdaConfig literal;
  literal.literal_rule = true;
  AdjustBounds(b, ViolationRatios{}, literal);
  EXPECT_TRUE(b.AtOriginal());
}

TEST(AdjustBounds, WidthRuleArithmetic) {
  BoundState b = SingleWindow(1.0, 2.0);
  ViolationRatios r;
  r.above[2] = 0.5;
  AdjustBounds(b, r, DdaConfig{});
  EXPECT_DOUBLE_EQ(b.hi(BoundFamily::kVm)[1], 2.5);
  EXPECT_DOUBLE_EQ(b.lo(BoundFamily::kVm)[1], 1.0);
  EXPECT_DOUBLE_EQ(b.eps()[0], 1e-3);
}

TEST(AdjustBounds, RepeatedFullViolationStopsAtCap) {
  BoundState b = SingleWindow(0.9, 1.1);
  ViolationRatios r;
  r.above = {1.0, 1.0, 1.0};
  r.below = {1.0, 1.0, 1.0};
  r.eq_positive = 1.0;
  DdaConfig cfg;
  cfg.relax_cap = 1.5;
  for (int i = 0; i < 10; ++i) AdjustBounds(b, r, cfg);
  EXPECT_NEAR(b.hi(BoundFamily::kVm)[0], 1.1 + 1.5 * 0.2, 1e-14);
  EXPECT_NEAR(b.lo(BoundFamily::kVm)[0], 0.9 - 1.5 * 0.2, 1e-14);
  EXPECT_NEAR(b.eps()[1], 1e-3 * 2.5, 1e-17);
  EXPECT_FALSE(b.AtOriginal());
}

TEST(AdjustBounds, EqualityToleranceGrowsWithImbalance) {
  BoundState b = SingleWindow(0.9, 1.1);
  ViolationRatios r;
  r.eq_positive = 0.3;
  r.eq_negative = 0.1;
  AdjustBounds(b, r, DdaConfig{});
  EXPECT_NEAR(b.eps()[0], 1.2e-3, 1e-18);
  // Balanced violations leave eps unchanged.
  b.Reset();
  r.eq_negative = 0.3;
  AdjustBounds(b, r, DdaConfig{});
  EXPECT_EQ(b.eps()[0], 1e-3);
}

TEST(AdjustBounds, LiteralRuleNeverShrinks) {
  const Network net = reference::Bundled("case9");
  BoundState b = BoundState::FromNetwork(net);
  DdaConfig cfg;
  cfg.literal_rule = true;
  ViolationRatios r;
  r.above = {0.2, 0.2, 0.2};
  r.below = {0.2, 0.2, 0.2};
  AdjustBounds(b, r, cfg);
  // Qg lower bounds are negative: the literal step would move them inward.
  for (int i : b.members(BoundFamily::kQg)) {
    EXPECT_LE(b.lo(BoundFamily::kQg)[i], b.original_lo(BoundFamily::kQg)[i]);
    EXPECT_GE(b.hi(BoundFamily::kQg)[i], b.original_hi(BoundFamily::kQg)[i]);
  }
  const double vmax = b.original_hi(BoundFamily::kVm)[0];
  EXPECT_NEAR(b.hi(BoundFamily::kVm)[0], std::min(1.2 * vmax, vmax + 0.5 * (vmax - 0.9)), 1e-14);
}

TEST(ResetBounds, RestoresOriginalsAndIsIdempotent) {
  const Network net = reference::Bundled("case14");
  BoundState b = BoundState::FromNetwork(net);
  const BoundState pristine = b;
  ViolationRatios r;
  r.above = {0.3, 0.6, 0.1};
  r.below = {0.2, 0.0, 0.9};
  r.eq_positive = 0.4;
  for (int i = 0; i < 3; ++i) AdjustBounds(b, r, DdaConfig{});
  b.Reset();
  EXPECT_TRUE(b.AtOriginal());
  b.Reset();
  EXPECT_TRUE(b.AtOriginal());
  for (BoundFamily f : kAll) {
    EXPECT_EQ(b.lo(f), pristine.lo(f));
    EXPECT_EQ(b.hi(f), pristine.hi(f));
    EXPECT_EQ(b.original_hi(f), pristine.original_hi(f));
  }
  EXPECT_EQ(b.eps(), pristine.eps());
}

// Randomized layer stacks: bounds only widen, always contain the originals
// and never cross.
TEST(DdaProperties, MonotoneAndContainingOverRandomLayers) {
  const Network net = reference::Bundled("case9");
  const BoundState fresh = BoundState::FromNetwork(net);
  const int n = net.num_buses();
  std::mt19937 rng(2026);
  std::uniform_real_distribution<double> spread(0.0, 3.0);
  int checked = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    BoundState b = fresh;
    const double scale = spread(rng);
    for (int layer = 0; layer < 4; ++layer) {
      const Matrix p = reference::RandomMatrix(2 * n, 4, trial * 8 + layer, -scale, 1.0 + scale);
      const Matrix rp = reference::RandomMatrix(2 * n, 1, trial * 8 + layer + 4, -0.01, 0.01);
      const Matrix rq = rp.reverse();
      const BoundState before = b;
      AdjustBounds(b, ComputeRatios(ComputeViolationSets(p, rp, rq, b, 2)), DdaConfig{});
      for (BoundFamily f : kAll) {
        for (int i : b.members(f)) {
          ASSERT_GE(b.hi(f)[i], before.hi(f)[i]);
          ASSERT_LE(b.lo(f)[i], before.lo(f)[i]);
          ASSERT_GE(b.hi(f)[i], b.original_hi(f)[i]);
          ASSERT_LE(b.lo(f)[i], b.original_lo(f)[i]);
          ASSERT_LE(b.lo(f)[i], b.hi(f)[i]);
        }
      }
      ASSERT_TRUE((b.eps().array() >= before.eps().array()).all());
      ++checked;
    }
  }
  EXPECT_EQ(checked, 40000);
}

TEST(DdaProperties, FeasibleLayersLeaveBoundsUnchanged) {
  const Network net = reference::Bundled("case30");
  BoundState b = BoundState::FromNetwork(net);
  const int n = net.num_buses();
  const Matrix p = Interior(b, 4);
  const Matrix r = reference::RandomMatrix(4 * n, 1, 5, -9e-4, 9e-4);
  for (int layer = 0; layer < 8; ++layer)
    AdjustBounds(b, ComputeRatios(ComputeViolationSets(p, r, r, b, 4)), DdaConfig{});
  EXPECT_TRUE(b.AtOriginal());
}

}  // namespace
}  // namespace opfnet
