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
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "json.hpp"
#include "opfnet/error.h"
#include "opfnet/train.h"
#include "reference.h"

namespace opfnet {
namespace {

using ad::Matrix;

class TrainTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    net_ = new Network(reference::Bundled("case9"));
    data_ = new Dataset(reference::SmallDataset(*net_, 40, 8, "train"));
  }
  static void TearDownTestSuite() {
    delete data_;
    delete net_;
  }

  static TrainConfig Small(const std::string& tag) {
    TrainConfig c;
    c.model.layers = 3;
    c.model.hidden = 8;
    c.model.heads = 2;
    c.batch_size = 8;
    c.epochs = 2;
    c.learning_rate = 1e-3;
    c.optimizer = "adam";
    c.seed = 11;
    c.output_dir = reference::ScratchDir(tag).string();
    return c;
  }

  static Network* net_;
  static Dataset* data_;
};

Network* TrainTest::net_ = nullptr;
Dataset* TrainTest::data_ = nullptr;

std::string Slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST_F(TrainTest, ZeroLearningRateLeavesParametersUnchanged) {
  for (const char* opt : {"sgd", "adam"}) {
    TrainConfig c = Small(std::string("lr0_") + opt);
    c.learning_rate = 0.0;
    c.epochs = 1;
    c.optimizer = opt;
    c.batch_size = static_cast<int>(data_->Split("train").size());
    Trainer t(c, *net_, *data_);
    const ParameterStore before = t.model().parameters();
    const auto history = t.Train();
    EXPECT_TRUE(t.model().parameters() == before) << opt;
    ASSERT_EQ(history.size(), 1u);
    EXPECT_TRUE(std::isfinite(history[0].l_total));
    const std::string csv = Slurp(std::filesystem::path(c.output_dir) / "metrics.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2) << csv;
    EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(c.output_dir) / "model.ckpt"));
  }
}

TEST_F(TrainTest, SameSeedIsBitIdentical) {
  TrainConfig a = Small("det_a");
  TrainConfig b = Small("det_b");
  Trainer ta(a, *net_, *data_);
  Trainer tb(b, *net_, *data_);
  const auto ha = ta.Train();
  const auto hb = tb.Train();
  for (size_t e = 0; e < ha.size(); ++e) {
    EXPECT_EQ(ha[e].l_total, hb[e].l_total);
    EXPECT_EQ(ha[e].rho_above, hb[e].rho_above);
  }
  EXPECT_TRUE(ta.model().parameters() == tb.model().parameters());
  EXPECT_EQ(Slurp(std::filesystem::path(a.output_dir) / "metrics.csv"),
            Slurp(std::filesystem::path(b.output_dir) / "metrics.csv"));
  // A different seed changes the trajectory.
  TrainConfig c = Small("det_c");
  c.seed = 12;
  Trainer tc(c, *net_, *data_);
  EXPECT_NE(tc.Train().back().l_total, ha.back().l_total);
}

TEST_F(TrainTest, LearningRateDecaysPerEpoch) {
  TrainConfig c = Small("decay");
  c.epochs = 3;
  c.lr_decay = 0.5;
  Trainer t(c, *net_, *data_);
  const auto h = t.Train();
  EXPECT_EQ(h[0].lr, 1e-3);
  EXPECT_EQ(h[1].lr, 5e-4);
  EXPECT_EQ(h[2].lr, 2.5e-4);
  EXPECT_EQ(h[0].rho_above.size(), 2u);
}

TEST_F(TrainTest, GradientStepReducesBatchLoss) {
  TrainConfig c = Small("descent");
  c.optimizer = "sgd";
  c.learning_rate = 1e-3;
  Trainer t(c, *net_, *data_);
  const auto train = data_->Split("train");
  ad::Tape tape;
  const auto r = t.EvaluateBatch(tape, train, true);
  const double before = r.losses.total.scalar();
  SgdOptimizer sgd;
  sgd.Step(t.mutable_model().parameters(), r.gradients, 1e-3);
  ad::Tape tape2;
  EXPECT_LT(t.EvaluateBatch(tape2, train, false).losses.total.scalar(), before);
}

TEST_F(TrainTest, NonFiniteLossWritesDiagnosticCheckpoint) {
  TrainConfig c = Small("nan");
  Trainer t(c, *net_, *data_);
  t.mutable_model().parameters().value(0)(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(t.RunEpoch(), Error);
  EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(c.output_dir) / "diagnostic.ckpt"));
}

TEST_F(TrainTest, DatasetForAnotherCaseIsRejected) {
  const Network other = reference::Bundled("case14");
  EXPECT_THROW(Trainer(Small("mismatch"), other, *data_), Error);
}

TEST_F(TrainTest, SelfEvaluationIsPerfect) {
  const auto test = data_->Split("test");
  std::vector<Matrix> preds;
  for (const LabeledSample* s : test) preds.push_back(NodeTargets(*net_, s->label));
  const EvalReport r = EvaluatePredictions(*net_, test, preds, EvalOptions{});
  for (int c = 0; c < kNumNodeOutputs; ++c) {
    EXPECT_EQ(r.mae[c], 0.0);
    EXPECT_EQ(r.accuracy[c], 100.0);
  }
  for (double k : r.feasibility.kappa) EXPECT_EQ(k, 100.0);
  EXPECT_EQ(r.total_violation_depth, 0.0);
  EXPECT_EQ(r.samples, static_cast<int>(test.size()));
  EXPECT_THROW(EvaluatePredictions(*net_, {}, {}, EvalOptions{}), Error);
}

// A constant predictor emitting the per-entry label mean scores the mean
// absolute deviation of the labels, computed here from raw generator data.
TEST_F(TrainTest, ConstantMeanPredictorScoresMeanAbsoluteDeviation) {
  const auto test = data_->Split("test");
  const int n = net_->num_buses();
  const GridCase& g = net_->grid();
  const auto node_value = [&](const LabeledSample& s, int i, int c) {
    if (c == kOutVm) return s.label.vm[i];
    if (c == kOutVa) return s.label.va[i];
    double sum = 0.0;
    for (size_t k = 0; k < g.gens.size(); ++k)
      if (g.gens[k].bus == i) sum += c == kOutPg ? s.label.pg[k] : s.label.qg[k];
    return sum;
  };
  Matrix mean = Matrix::Zero(n, 4);
  for (const LabeledSample* s : test)
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 4; ++c) mean(i, c) += node_value(*s, i, c) / test.size();
  const std::vector<bool> is_gen = {true, true, true, false, false, false, false, false, false};
  std::array<double, 4> mad{}, count{};
  for (const LabeledSample* s : test)
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 4; ++c) {
        if (c < 2 && !is_gen[i]) continue;
        mad[c] += std::abs(node_value(*s, i, c) - mean(i, c));
        count[c] += 1;
      }
  Matrix pred = mean;
  for (int i = 3; i < n; ++i) pred(i, kOutPg) = pred(i, kOutQg) = 0.0;
  const EvalReport r =
      EvaluatePredictions(*net_, test, std::vector<Matrix>(test.size(), pred), EvalOptions{});
  for (int c = 0; c < 4; ++c) {
    EXPECT_NEAR(r.mae[c], mad[c] / count[c], 1e-14) << c;
    EXPECT_GT(r.mae[c], 0.0);
  }
}

TEST_F(TrainTest, EvaluateModelAgreesWithEvaluatePredictions) {
  Trainer t(Small("evalmodel"), *net_, *data_);
  const auto test = data_->Split("test");
  EvalOptions opts;
  opts.batch_size = 3;
  const EvalReport a = EvaluateModel(t.model(), *net_, test, opts);
  std::vector<Matrix> preds;
  for (const LabeledSample* s : test) {
    std::vector<const LabeledSample*> one = {s};
    preds.push_back(t.model().Predict(MakeSampleBatch(*net_, CaseGraph::FromNetwork(*net_), one).graph));
  }
  const EvalReport b = EvaluatePredictions(*net_, test, preds, opts);
  for (int c = 0; c < 4; ++c) EXPECT_NEAR(a.mae[c], b.mae[c], 1e-14);
  EXPECT_EQ(a.feasibility.kappa, b.feasibility.kappa);
  const auto j = nlohmann::json::parse(EvalReportJson(a));
  EXPECT_EQ(j["reference_full_scale_pg_mae"], 0.0011);
  EXPECT_NE(EvalReportText(a).find("0.0011"), std::string::npos);
}

TEST(TrainConfigParse, UnknownKeysAreNamed) {
  try {
    ParseTrainConfig(R"({"model": {"hiden": 12}})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.hiden"), std::string::npos) << e.what();
  }
  EXPECT_THROW(ParseTrainConfig(R"({"epochz": 1})"), ConfigError);
  EXPECT_THROW(ParseTrainConfig(R"({"epochs": "ten"})"), ConfigError);
  EXPECT_THROW(ParseTrainConfig("{not json"), ConfigError);
}

TEST(TrainConfigParse, InvariantsEnforced) {
  // Parsing accepts anything well-typed; Validate runs after flag overrides.
  EXPECT_NO_THROW(ParseTrainConfig(R"({"batch_size": 0})"));
  EXPECT_THROW(ParseTrainConfig(R"({"batch_size": 0})").Validate(), ConfigError);
  EXPECT_THROW(ParseTrainConfig(R"({"lr_decay": 1.5})").Validate(), ConfigError);
  EXPECT_THROW(ParseTrainConfig(R"({"lr_decay": 0})").Validate(), ConfigError);
  EXPECT_THROW(ParseTrainConfig(R"({"optimizer": "rmsprop"})").Validate(), ConfigError);
  EXPECT_THROW(ParseTrainConfig(R"({"model": {"layers": 2}, "loss": {"layer_weights": [0.3, 0.3]}})").Validate(),
               ConfigError);
  EXPECT_NO_THROW(ParseTrainConfig(R"({"model": {"layers": 2}, "loss": {"layer_weights": [0.25, 0.75]}})").Validate());
}

TEST(TrainConfigParse, RoundTripAndMerge) {
  TrainConfig c = ParseTrainConfig(R"({"case": "case14", "epochs": 9, "tmfe": {"enabled": false},
                                       "dda": {"relax_cap": 0.25}, "seed": 5})");
  EXPECT_EQ(c.case_name, "case14");
  EXPECT_FALSE(c.model.tmfe);
  EXPECT_EQ(c.dda.relax_cap, 0.25);
  const std::string text = TrainConfigToJson(c);
  EXPECT_EQ(TrainConfigToJson(ParseTrainConfig(text)), text);
  MergeTrainConfig(c, R"({"epochs": 4})");
  EXPECT_EQ(c.epochs, 4);
  EXPECT_EQ(c.seed, 5u);
  c.hierarchical = false;
  const std::vector<double> w = c.EffectiveLayerWeights();
  EXPECT_EQ(w.back(), 1.0);
  for (size_t l = 0; l + 1 < w.size(); ++l) EXPECT_EQ(w[l], 0.0);
}

TEST(MetricsCsv, HeaderListsDocumentedColumns) {
  const std::string h = MetricsCsvHeader(3);
  for (const char* col : {"epoch", "lr", "l_opf", "l_eq", "l_ineq", "l_flow", "rho_above_1",
                          "rho_below_2"}) {
    EXPECT_NE(h.find(col), std::string::npos) << col << " in " << h;
  }
  EXPECT_EQ(h.find("seconds"), std::string::npos);
}

}  // namespace
}  // namespace opfnet
