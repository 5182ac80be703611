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

#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "opfnet/case_io.h"
#include "opfnet/checkpoint.h"
#include "opfnet/error.h"
#include "opfnet/train.h"
#include "reference.h"

namespace opfnet {
namespace {

using ad::Matrix;

TrainConfig TinyConfig(bool tmfe) {
  TrainConfig c;
  c.model.layers = 2;
  c.model.hidden = 8;
  c.model.heads = 2;
  c.model.tmfe = tmfe;
  c.batch_size = 8;
  c.epochs = 1;
  c.optimizer = "adam";
  c.seed = 3;
  return c;
}

class CheckpointTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    net_ = new Network(reference::Bundled("case9"));
    data_ = new Dataset(reference::SmallDataset(*net_, 20, 4, "checkpoint"));
  }
  static void TearDownTestSuite() {
    delete data_;
    delete net_;
  }

  CheckpointData Trained(bool tmfe) {
    Trainer trainer(TinyConfig(tmfe), *net_, *data_);
    trainer.RunEpoch();
    return trainer.MakeCheckpoint(R"({"note":1})");
  }

  static Network* net_;
  static Dataset* data_;
};

Network* CheckpointTest::net_ = nullptr;
Dataset* CheckpointTest::data_ = nullptr;

TEST_F(CheckpointTest, RoundTripIsBitwise) {
  const CheckpointData a = Trained(true);
  ASSERT_FALSE(a.optimizer_state.empty());
  const CheckpointData b = DecodeCheckpoint(EncodeCheckpoint(a));
  EXPECT_TRUE(b.parameters == a.parameters);
  EXPECT_EQ(b.config_json, a.config_json);
  EXPECT_EQ(b.config_hash, a.config_hash);
  EXPECT_EQ(b.epoch, 1);
  EXPECT_EQ(b.optimizer_steps, a.optimizer_steps);
  EXPECT_EQ(b.metrics_json, a.metrics_json);
  ASSERT_EQ(b.optimizer_state.size(), a.optimizer_state.size());
  for (size_t i = 0; i < a.optimizer_state.size(); ++i)
    EXPECT_EQ(b.optimizer_state[i], a.optimizer_state[i]);
  EXPECT_EQ(EncodeCheckpoint(b), EncodeCheckpoint(a));
}

TEST_F(CheckpointTest, ReloadedModelPredictsIdentically) {
  Trainer trainer(TinyConfig(true), *net_, *data_);
  trainer.RunEpoch();
  const auto path = reference::ScratchDir("ckpt_reload") / "m.ckpt";
  SaveCheckpoint(path, trainer.MakeCheckpoint("{}"));
  const GraphTransformer loaded = LoadModel(LoadCheckpoint(path), *net_);
  const auto test = data_->Split("test");
  const SampleBatch sb = MakeSampleBatch(*net_, CaseGraph::FromNetwork(*net_), test);
  const Matrix a = trainer.model().Predict(sb.graph);
  const Matrix b = loaded.Predict(sb.graph);
  EXPECT_TRUE((a.array() == b.array()).all());
}

TEST_F(CheckpointTest, TruncationIsRejected) {
  const std::string bytes = EncodeCheckpoint(Trained(false));
  for (size_t len : {size_t{0}, size_t{7}, size_t{20}, bytes.size() / 2, bytes.size() - 9,
                     bytes.size() - 1}) {
    EXPECT_THROW(DecodeCheckpoint(bytes.substr(0, len)), CheckpointError) << len;
  }
  const auto path = reference::ScratchDir("ckpt_trunc") / "t.ckpt";
  {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 100));
  }
  EXPECT_THROW(LoadCheckpoint(path), CheckpointError);
  EXPECT_THROW(LoadCheckpoint(path.parent_path() / "absent.ckpt"), CheckpointError);
}

TEST_F(CheckpointTest, CorruptionIsRejected) {
  std::string bytes = EncodeCheckpoint(Trained(false));
  bytes[bytes.size() / 2] ^= 0x10;
  try {
    DecodeCheckpoint(bytes);
    FAIL() << "corrupted checkpoint decoded";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos) << e.what();
  }
}

TEST_F(CheckpointTest, VersionMismatchNamesBothVersions) {
  std::string bytes = EncodeCheckpoint(Trained(false));
  bytes[8] = static_cast<char>(kCheckpointVersion + 1);
  try {
    DecodeCheckpoint(bytes);
    FAIL() << "future version decoded";
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("version 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("expects 1"), std::string::npos) << msg;
  }
}

TEST_F(CheckpointTest, HashGuardRejectsOtherArchitecture) {
  const CheckpointData off = Trained(false);
  const std::string case_hash = HexDigest(CaseHash(net_->grid()));
  const std::string on_hash = ArchitectureHash(TinyConfig(true), case_hash);
  EXPECT_NE(on_hash, off.config_hash);
  EXPECT_THROW(LoadModel(off, *net_, nullptr, on_hash), CheckpointError);
  EXPECT_NO_THROW(LoadModel(off, *net_, nullptr, ArchitectureHash(TinyConfig(false), case_hash)));
  // Trained on case9, loaded against case14.
  const Network other = reference::Bundled("case14");
  EXPECT_THROW(LoadModel(off, other), CheckpointError);
}

TEST_F(CheckpointTest, HashIgnoresNonArchitectureFields) {
  const std::string case_hash = HexDigest(CaseHash(net_->grid()));
  TrainConfig a = TinyConfig(true);
  TrainConfig b = a;
  b.learning_rate = 0.5;
  b.epochs = 77;
  EXPECT_EQ(ArchitectureHash(a, case_hash), ArchitectureHash(b, case_hash));
  b.model.hidden = 12;
  EXPECT_NE(ArchitectureHash(a, case_hash), ArchitectureHash(b, case_hash));
}

}  // namespace
}  // namespace opfnet
