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

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "json.hpp"
#include "opfnet/error.h"
#include "opfnet/gnn.h"
#include "opfnet/tmfe.h"
#include "reference.h"

namespace opfnet {
namespace {

using ad::Matrix;
using ad::Tape;

const char* const kCases[] = {"case9", "case14", "case30", "case39", "case57", "case118", "case300"};

TmfeConfig Raw(double a, double b, double c) {
  TmfeConfig cfg;
  cfg.alpha = a;
  cfg.beta = b;
  cfg.gamma = c;
  cfg.normalize = false;
  return cfg;
}

TEST(ElectricalWeights, HopCountReduction) {
  const GridCase g = reference::Bundled("case14").grid();
  for (double w : ElectricalWeights(g, Raw(0, 0, 1))) EXPECT_EQ(w, 1.0);
}

TEST(ElectricalWeights, PureReactanceUsesSentinel) {
  const GridCase g = reference::TwoBusCase(0.0, 0.1, 1.0, 0.0);
  const std::vector<double> w = ElectricalWeights(g, Raw(1.0, 0.0, 0.0));
  EXPECT_EQ(w[0], 1e6);
  EXPECT_NEAR(ElectricalWeights(g, Raw(0.0, 1.0, 0.0))[0], 1.0 / 100.0, 1e-15);
  EXPECT_NEAR(ElectricalWeights(g, Raw(0.3, 0.5, 0.2))[0], 0.3e6 + 0.005 + 0.2, 1e-9);
}

TEST(ElectricalWeights, NonNegativeOnEveryFixture) {
  for (const char* name : kCases) {
    const GridCase g = reference::Bundled(name).grid();
    for (const TmfeConfig& cfg : {TmfeConfig{}, Raw(1.0 / 3, 1.0 / 3, 1.0 / 3)}) {
      for (double w : ElectricalWeights(g, cfg)) EXPECT_GE(w, 0.0) << name;
    }
  }
}

TEST(ElectricalWeights, OutOfServiceBranchesDropOut) {
  GridCase g = reference::ToyCase();
  g.branches[4].in_service = false;
  const std::vector<double> w = ElectricalWeights(g, TmfeConfig{});
  EXPECT_TRUE(std::isinf(w[4]));
  EXPECT_EQ(WeightedEdges(g, w).size(), 4u);
}

TEST(ElectricalWeights, InvalidCoefficients) {
  const GridCase g = reference::ToyCase();
  EXPECT_THROW(ElectricalWeights(g, Raw(0, 0, 0)), ConfigError);
  EXPECT_THROW(ElectricalWeights(g, Raw(-1, 1, 1)), ConfigError);
}

TEST(Dijkstra, PathGraph) {
  const NodeOrdering o = DijkstraOrder(3, {{0, 1, 1.0}, {1, 2, 1.0}}, 0);
  EXPECT_EQ(o.order, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(o.distances, (std::vector<double>{0, 1, 2}));
  EXPECT_EQ(o.position, (std::vector<int>{0, 1, 2}));
}

TEST(Dijkstra, TiesByIndexAndUnreachableLast) {
  // 0 is isolated; 3 and 1 tie; 4 also isolated.
  const NodeOrdering o = DijkstraOrder(5, {{2, 3, 1.0}, {2, 1, 1.0}}, 2);
  EXPECT_EQ(o.order, (std::vector<int>{2, 1, 3, 0, 4}));
  EXPECT_TRUE(std::isinf(o.distances[0]));
  EXPECT_THROW(DijkstraOrder(5, {}, 5), ConfigError);
  EXPECT_THROW(DijkstraOrder(2, {{0, 1, -1.0}}, 0), ConfigError);
}

TEST(Dijkstra, ZeroWeightTieKeepsStartFirst) {
  const NodeOrdering o = DijkstraOrder(3, {{2, 0, 0.0}, {2, 1, 1.0}}, 2);
  EXPECT_EQ(o.order.front(), 2);
  EXPECT_EQ(o.order, (std::vector<int>{2, 0, 1}));
}

TEST(Dijkstra, MatchesBellmanFordOnFixtures) {
  for (const char* name : kCases) {
    const GridCase g = reference::Bundled(name).grid();
    for (const TmfeConfig& cfg : {TmfeConfig{}, Raw(0.2, 0.5, 0.3), Raw(0, 0, 1)}) {
      const auto edges = WeightedEdges(g, ElectricalWeights(g, cfg));
      const NodeOrdering o = CaseOrdering(g, cfg);
      const std::vector<double> ref = reference::BellmanFord(g.num_buses(), edges, g.SlackBus());
      ASSERT_EQ(o.start, g.SlackBus());
      EXPECT_EQ(o.order.front(), g.SlackBus());
      EXPECT_EQ(o.distances[g.SlackBus()], 0.0);
      for (int i = 0; i < g.num_buses(); ++i) {
        EXPECT_NEAR(o.distances[i], ref[i], 1e-9 * std::max(1.0, ref[i])) << name << " bus " << i;
      }
      for (int k = 1; k < g.num_buses(); ++k) {
        EXPECT_LE(o.distances[o.order[k - 1]], o.distances[o.order[k]]);
      }
    }
  }
}

TEST(Serialize, PermutationRoundTrip) {
  const GridCase g = reference::Bundled("case57").grid();
  const NodeOrdering o = CaseOrdering(g, TmfeConfig{});
  const Matrix f = reference::RandomMatrix(57, 5, 3);
  const Matrix s = SerializeFeatures(f, o);
  EXPECT_EQ(DeserializeFeatures(s, o), f);
  for (int k = 0; k < 57; ++k) EXPECT_EQ(s.row(k), f.row(o.order[k]));
  // Row multiset preserved.
  auto rows = [](const Matrix& m) {
    std::vector<std::vector<double>> out(m.rows());
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) out[r].push_back(m(r, c));
    std::sort(out.begin(), out.end());
    return out;
  };
  EXPECT_EQ(rows(s), rows(f));
  NodeOrdering identity = DijkstraOrder(3, {{0, 1, 1.0}, {1, 2, 1.0}}, 0);
  const Matrix small = reference::RandomMatrix(3, 2, 4);
  EXPECT_EQ(SerializeFeatures(small, identity), small);
  EXPECT_THROW(SerializeFeatures(f.topRows(10), o), ShapeError);
}

TEST(Serialize, OrderingJson) {
  const GridCase g = reference::ToyCase();
  const NodeOrdering o = CaseOrdering(g, TmfeConfig{});
  const auto j = nlohmann::json::parse(OrderingToJson(g, o));
  EXPECT_EQ(j["sequence"].size(), 4u);
  EXPECT_EQ(j["start_bus"], g.buses[g.SlackBus()].id);
  EXPECT_EQ(j["sequence"][0]["distance"], 0.0);
}

class ExtractorFixture : public ::testing::Test {
 protected:
  ParameterStore store;
  Rng rng{9};
  TmfeConfig cfg;
};

TEST_F(ExtractorFixture, ZeroWeightsAnnihilate) {
  TemporalExtractor ex(store, 3, cfg, rng);
  store.ZeroPrefix(TemporalExtractor::kPrefix);
  Tape t;
  const BoundParameters p(t, store, false);
  const Matrix x = reference::RandomMatrix(14, 3, 1);
  EXPECT_EQ(ex.Convolve(p, t.Constant(x), 7).value(), Matrix::Zero(14, 3));
  EXPECT_THROW(ex.Convolve(p, t.Constant(x), 0), ShapeError);
}

TEST_F(ExtractorFixture, DeltaKernelReproducesNonNegativeInput) {
  TemporalExtractor ex(store, 2, cfg, rng);
  for (int k = 0; k < cfg.conv_layers; ++k) {
    Matrix& w = store.value(store.Find("tmfe.conv" + std::to_string(k) + ".weight"));
    w.setZero();
    // Row blocks are kernel taps; centre tap is the identity.
    w.block(2, 0, 2, 2).setIdentity();
  }
  Tape t;
  const BoundParameters p(t, store, false);
  const Matrix x = reference::RandomMatrix(10, 2, 2, 0.0, 3.0);
  EXPECT_LT((ex.Convolve(p, t.Constant(x), 5).value() - x).cwiseAbs().maxCoeff(), 1e-15);
}

TEST_F(ExtractorFixture, MergeIsInversePermutedResidual) {
  const GridCase g = reference::Bundled("case14").grid();
  const NodeOrdering o = CaseOrdering(g, cfg);
  TemporalExtractor ex(store, 3, cfg, rng);
  Tape t;
  const BoundParameters p(t, store, false);
  const Matrix h0 = reference::RandomMatrix(28, 3, 5);
  const Matrix merged = ex.Forward(p, t.Constant(h0), o, 2).value();
  for (int b = 0; b < 2; ++b) {
    const Matrix sorted = SerializeFeatures(h0.middleRows(b * 14, 14), o);
    const Matrix h3 = ex.Convolve(p, t.Constant(sorted), 14).value();
    EXPECT_LT((merged.middleRows(b * 14, 14) - DeserializeFeatures(h3, o) -
               h0.middleRows(b * 14, 14)).cwiseAbs().maxCoeff(),
              1e-14);
  }
  EXPECT_THROW(ex.Forward(p, t.Constant(h0), o, 3), ShapeError);
}

TEST_F(ExtractorFixture, ShapePreservedOnFixtures) {
  TemporalExtractor ex(store, 4, cfg, rng);
  Tape t;
  const BoundParameters p(t, store, false);
  for (const char* name : kCases) {
    const GridCase g = reference::Bundled(name).grid();
    const Matrix h = reference::RandomMatrix(g.num_buses(), 4, 6);
    const Matrix out = ex.Forward(p, t.Constant(h), CaseOrdering(g, cfg), 1).value();
    EXPECT_EQ(out.rows(), h.rows());
    EXPECT_EQ(out.cols(), h.cols());
  }
}

TEST_F(ExtractorFixture, EvenKernelRejected) {
  cfg.kernel = 4;
  EXPECT_THROW(TemporalExtractor(store, 3, cfg, rng), ConfigError);
}

TEST(TmfeModel, ZeroedExtractorMatchesDisabledModelBitwise) {
  const GridCase g = reference::Bundled("case14").grid();
  const Network net(g);
  ModelConfig on;
  on.layers = 3;
  on.hidden = 8;
  on.heads = 2;
  ModelConfig off = on;
  off.tmfe = false;
  GraphTransformer with(on, g, 5);
  const GraphTransformer without(off, g, 5);
  with.parameters().ZeroPrefix(TemporalExtractor::kPrefix);
  const std::vector<Eigen::VectorXd> pd = {g.DefaultPd(), g.DefaultPd() * 1.1};
  const std::vector<Eigen::VectorXd> qd = {g.DefaultQd(), g.DefaultQd()};
  const GraphBatch batch = MakeBatch(CaseGraph::FromNetwork(net), pd, qd);
  const Matrix a = with.Predict(batch);
  const Matrix b = without.Predict(batch);
  ASSERT_EQ(a.rows(), b.rows());
  EXPECT_TRUE((a.array() == b.array()).all());
}

}  // namespace
}  // namespace opfnet
