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

#ifndef OPFNET_ORACLE_H_
#define OPFNET_ORACLE_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "opfnet/case_model.h"
#include "opfnet/powerflow.h"

namespace opfnet {

enum class SolveStatus { kConverged, kDiverged, kInfeasible };
const char* SolveStatusName(SolveStatus status);

struct PowerFlowOptions {
  double tolerance = 1e-8;  // max |mismatch| in p.u.
  int max_iterations = 30;
};

struct PowerFlowResult {
  Eigen::VectorXd vm;
  Eigen::VectorXd va;
  // Number of mismatch evaluations, so an already-solved start reports 1.
  int iterations = 0;
  double residual = 0.0;
  SolveStatus status = SolveStatus::kDiverged;
};

// Polar Newton-Raphson. `pg_fixed` is per generator (the slack bus's
// generators are ignored), `vm_setpoints` is per bus and read only at the
// slack and PV buses. `initial` seeds (vm, va); flat start otherwise.
// Throws SolverError on a singular Jacobian.
PowerFlowResult SolvePowerFlowNewton(
    const Network& net, const Eigen::VectorXd& pg_fixed,
    const Eigen::VectorXd& vm_setpoints, const Eigen::VectorXd& pd,
    const Eigen::VectorXd& qd, const PowerFlowOptions& options = {},
    const std::optional<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& initial =
        std::nullopt);

// Same, with the case's default loads.
PowerFlowResult SolvePowerFlowNewton(const Network& net,
                                     const Eigen::VectorXd& pg_fixed,
                                     const Eigen::VectorXd& vm_setpoints,
                                     const PowerFlowOptions& options = {});

// Generator dispatch and bus voltage setpoints stored in the case file.
Eigen::VectorXd CasePgSetpoints(const Network& net);
Eigen::VectorXd CaseVmSetpoints(const Network& net);

// Completes a dispatch from a solved voltage profile: the slack bus's first
// generator absorbs the active imbalance and each generator bus's reactive
// injection is shared among its generators in proportion to their Q ranges.
DispatchState CompleteDispatch(const Network& net, const Eigen::VectorXd& vm,
                               const Eigen::VectorXd& va,
                               const Eigen::VectorXd& pg_fixed,
                               const Eigen::VectorXd& pd,
                               const Eigen::VectorXd& qd);

double DispatchCost(const Network& net, const Eigen::VectorXd& pg);

struct LoadScenario {
  Eigen::VectorXd pd;
  Eigen::VectorXd qd;
  int scenario_id = 0;
  std::uint64_t seed = 0;
};

struct SolverMeta {
  int iterations = 0;        // inner quasi-Newton iterations, summed
  int outer_iterations = 0;  // multiplier / penalty updates
  double residual = 0.0;     // max |nodal mismatch| of the label
  double max_violation = 0.0;
  SolveStatus status = SolveStatus::kInfeasible;
};

struct LabeledSample {
  LoadScenario scenario;
  DispatchState label;
  double objective = 0.0;
  SolverMeta meta;
};

struct OpfOptions {
  double mismatch_tol = 1e-5;
  double bounds_tol = 1e-6;
  // Bounds are tightened by this much internally so the final point lies
  // strictly inside the original limits.
  double bound_margin = 1e-7;
  int max_outer = 40;
  int max_inner = 400;
  double initial_penalty = 10.0;
  double max_penalty = 1e10;
  double gradient_tol = 1e-9;
  PowerFlowOptions powerflow{.tolerance = 1e-11, .max_iterations = 30};
};

// Cost-minimising dispatch for one load scenario. The controls are the
// active set-points of every generator except the slack generator and the
// voltage set-points of generator buses; the network state follows from a
// Newton power flow, so nodal balance holds to power-flow precision.
// Operating limits are handled with an augmented-Lagrangian penalty whose
// weights grow geometrically when violations stall.
LabeledSample SolveOpfPenalty(const Network& net, const LoadScenario& scenario,
                              const OpfOptions& options = {});

// pd_i ~ U(0.9, 1.1) * default pd_i per bus, qd independently likewise.
std::vector<LoadScenario> SampleLoads(const GridCase& grid, int n,
                                      std::uint64_t seed);

struct DatasetManifest {
  std::string case_name;
  std::string case_hash;
  std::uint64_t seed = 0;
  int requested = 0;
  int feasible = 0;
  int infeasible = 0;
  std::vector<int> infeasible_ids;
  std::vector<int> train_ids;  // scenario ids
  std::vector<int> test_ids;
  double train_fraction = 0.8;
  OpfOptions opf;
  std::string dataset_file;  // file name relative to the manifest
};

struct DatasetOptions {
  OpfOptions opf;
  double train_fraction = 0.8;
  double max_infeasible_fraction = 0.01;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<LabeledSample> samples;  // ordered by scenario_id

  std::vector<const LabeledSample*> Split(std::string_view name) const;
};

// "<dir>/<stem>.manifest.json" for "<dir>/<stem>.jsonl".
std::filesystem::path ManifestPathFor(const std::filesystem::path& dataset);

// Solves n sampled scenarios and writes one JSON record per line plus a
// manifest. Aborts (Error) when more than max_infeasible_fraction of the
// scenarios cannot be solved.
DatasetManifest GenerateDataset(
    const Network& net, int n, std::uint64_t seed,
    const std::filesystem::path& out_path, const DatasetOptions& options = {},
    const std::function<void(int done, int total)>& progress = nullptr);

std::string SampleToJsonLine(const LabeledSample& sample);
LabeledSample SampleFromJsonLine(const std::string& line, int line_number);
Dataset ReadDataset(const std::filesystem::path& dataset_path);
// Reads label records without a manifest (e.g. a solutions file).
std::vector<LabeledSample> ReadSamples(const std::filesystem::path& path);

}  // namespace opfnet

#endif  // OPFNET_ORACLE_H_
