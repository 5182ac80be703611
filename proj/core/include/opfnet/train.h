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

#ifndef OPFNET_TRAIN_H_
#define OPFNET_TRAIN_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "opfnet/checkpoint.h"
#include "opfnet/dda.h"
#include "opfnet/gnn.h"
#include "opfnet/oracle.h"
#include "opfnet/physics_loss.h"

namespace opfnet {

// Geometric penalty-weight schedule for the physics terms: after each epoch
// mu <- min(mu * beta, mu_max).
struct PenaltySchedule {
  double mu_g = 1.0;  // inequality and flow terms
  double mu_h = 1.0;  // equality term
  double beta_g = 1.0;
  double beta_h = 1.0;
  double mu_max = 1e6;
};

struct TrainConfig {
  std::string case_name = "case9";  // path or bundled name
  std::string dataset;              // JSONL written by `data generate`
  std::string output_dir = "run";
  int samples = 2000;  // used when the dataset must be generated
  int batch_size = 64;
  double learning_rate = 1e-3;
  int epochs = 300;
  double lr_decay = 1.0;  // lr = learning_rate * lr_decay^epoch
  std::string optimizer = "sgd";  // "sgd" or "adam"
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  ModelConfig model;
  DdaConfig dda;
  // Off: only the final layer's physics terms are trained (weight 1).
  bool hierarchical = true;
  std::vector<double> layer_weights;  // empty = uniform
  PenaltySchedule penalty;
  std::uint64_t seed = 0;
  double tol = 1e-3;   // feasibility tolerance for kappa/delta
  double tau = 0.01;   // probabilistic-accuracy width fraction
  int checkpoint_every = 0;  // epochs; 0 = final checkpoint only

  std::vector<double> EffectiveLayerWeights() const;
  void Validate() const;
};

// Parses a JSON config; absent keys keep their defaults, unknown keys are
// rejected (ConfigError naming the key).
TrainConfig ParseTrainConfig(std::string_view json_text);
void MergeTrainConfig(TrainConfig& config, std::string_view json_text);
std::string TrainConfigToJson(const TrainConfig& config);
// Hash over everything that shapes the parameter set, plus the case.
std::string ArchitectureHash(const TrainConfig& config, const std::string& case_hash);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void Step(ParameterStore& params, const std::vector<ad::Matrix>& grads,
                    double lr) = 0;
  virtual std::vector<ad::Matrix> State() const { return {}; }
  virtual long long steps() const { return steps_; }
  virtual void Restore(std::vector<ad::Matrix> state, long long steps);

 protected:
  long long steps_ = 0;
};

class SgdOptimizer : public Optimizer {
 public:
  void Step(ParameterStore& params, const std::vector<ad::Matrix>& grads,
            double lr) override;
};

class AdamOptimizer : public Optimizer {
 public:
  AdamOptimizer(double beta1, double beta2, double eps)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void Step(ParameterStore& params, const std::vector<ad::Matrix>& grads,
            double lr) override;
  std::vector<ad::Matrix> State() const override;
  void Restore(std::vector<ad::Matrix> state, long long steps) override;

 private:
  double beta1_, beta2_, eps_;
  std::vector<ad::Matrix> m_, v_;
};

std::unique_ptr<Optimizer> MakeOptimizer(const TrainConfig& config);

// Stacked inputs and targets of a set of samples.
struct SampleBatch {
  GraphBatch graph;
  ad::Matrix pd, qd;    // (batch * nodes) x 1
  ad::Matrix target;    // (batch * nodes) x 4
};
SampleBatch MakeSampleBatch(const Network& net, const CaseGraph& graph,
                            std::span<const LabeledSample* const> samples);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double mu_g = 0.0;
  double mu_h = 0.0;
  // Sample-weighted means over the epoch's batches; physics terms are the
  // final layer's.
  double l_total = 0.0;
  double l_opf = 0.0;
  double l_eq = 0.0;
  double l_ineq = 0.0;
  double l_flow = 0.0;
  // Per layer except the last: mean over families of the above/below
  // violation ratios that drove the next layer's bounds.
  std::vector<double> rho_above;
  std::vector<double> rho_below;
  double seconds = 0.0;  // wall time, kept out of the metrics CSV
};

std::string MetricsCsvHeader(int layers);
std::string MetricsCsvRow(const EpochMetrics& m);

class Trainer {
 public:
  Trainer(const TrainConfig& config, const Network& net, const Dataset& dataset);

  // Runs one epoch over the training split.
  EpochMetrics RunEpoch();
  // Runs all configured epochs, writing metrics.csv, timing.csv and
  // model.ckpt under the output directory.
  std::vector<EpochMetrics> Train(
      const std::function<void(const EpochMetrics&)>& on_epoch = nullptr);

  // Loss of one batch on a fresh tape with the current parameters.
  struct BatchResult {
    LossBreakdown losses;
    std::vector<ad::Matrix> gradients;
  };
  BatchResult EvaluateBatch(ad::Tape& tape, std::span<const LabeledSample* const> samples,
                            bool with_gradients) const;

  const GraphTransformer& model() const { return model_; }
  GraphTransformer& mutable_model() { return model_; }
  const TrainConfig& config() const { return config_; }
  CheckpointData MakeCheckpoint(const std::string& metrics_json) const;
  const std::string& config_hash() const { return config_hash_; }
  int epoch() const { return epoch_; }

 private:
  TrainConfig config_;
  const Network& net_;
  const Dataset& dataset_;
  std::vector<const LabeledSample*> train_;
  CaseGraph graph_;
  PhysicsModel physics_;
  BoundState bounds_;
  GraphTransformer model_;
  std::unique_ptr<Optimizer> optimizer_;
  Rng shuffle_rng_;
  std::string config_hash_;
  int epoch_ = 0;
  double mu_g_ = 1.0;
  double mu_h_ = 1.0;
};

// Restores a model from a checkpoint; throws CheckpointError when the
// stored config hash differs from `expected_hash` (if non-empty).
GraphTransformer LoadModel(const CheckpointData& checkpoint, const Network& net,
                           TrainConfig* config_out = nullptr,
                           const std::string& expected_hash = "");

struct EvalOptions {
  double tol = 1e-3;
  double tau = 0.01;
  int batch_size = 256;
};

struct EvalReport {
  int samples = 0;
  // Indexed by NodeOutput: pg, qg, vm, va.
  std::array<double, kNumNodeOutputs> mae{};
  std::array<double, kNumNodeOutputs> accuracy{};  // percent
  ViolationMetrics feasibility;
  // Sum of violation depths beyond tol over every inequality family, per
  // sample.
  double total_violation_depth = 0.0;
  double max_abs_mismatch = 0.0;
  double seconds = 0.0;
};

// Converts node-level predictions of one graph to a per-generator dispatch.
// At buses with several generators the node total is split as
// lo + (total - sum lo) * range share, equally when ranges are degenerate.
DispatchState PredictionToDispatch(const Network& net, const ad::Matrix& node_prediction);

EvalReport EvaluatePredictions(const Network& net,
                               std::span<const LabeledSample* const> samples,
                               const std::vector<ad::Matrix>& predictions,
                               const EvalOptions& options);
EvalReport EvaluateModel(const GraphTransformer& model, const Network& net,
                         std::span<const LabeledSample* const> samples,
                         const EvalOptions& options);

inline constexpr double kFullScalePgMaeReference = 0.0011;

std::string EvalReportJson(const EvalReport& report);
std::string EvalReportCsv(const EvalReport& report);
std::string EvalReportText(const EvalReport& report);

}  // namespace opfnet

#endif  // OPFNET_TRAIN_H_
