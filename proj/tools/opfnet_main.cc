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

// Command-line front end: case conversion, dataset generation, the OPF
// oracle, training, evaluation, feasibility checks and node orderings.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "opfnet/case_io.h"
#include "opfnet/checkpoint.h"
#include "opfnet/error.h"
#include "opfnet/oracle.h"
#include "opfnet/powerflow.h"
#include "opfnet/tmfe.h"
#include "opfnet/train.h"

namespace {

using namespace opfnet;
using nlohmann::json;
namespace fs = std::filesystem;

enum class Format { kText, kJson, kCsv };

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  Format format = Format::kText;
};

std::string ReadFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void WriteFile(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

Network LoadNetwork(const std::string& name) { return Network(ToPerUnit(LoadCase(name))); }

std::string Num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string MetricsTable(const ViolationMetrics& m, Format format) {
  if (format == Format::kJson) {
    json j = json::object();
    for (int f = 0; f < kNumConstraintFamilies; ++f) {
      const std::string name(ConstraintFamilyName(static_cast<ConstraintFamily>(f)));
      j[name] = {{"kappa_pct", m.kappa[f]},
                 {"delta", m.delta[f]},
                 {"violated", m.violated[f]},
                 {"total", m.total[f]}};
    }
    return j.dump(2) + "\n";
  }
  std::string out;
  if (format == Format::kCsv) {
    out = "family,kappa_pct,delta,violated,total\n";
    for (int f = 0; f < kNumConstraintFamilies; ++f) {
      out += std::string(ConstraintFamilyName(static_cast<ConstraintFamily>(f))) + "," +
             Num(m.kappa[f]) + "," + Num(m.delta[f]) + "," + std::to_string(m.violated[f]) +
             "," + std::to_string(m.total[f]) + "\n";
    }
    return out;
  }
  char line[128];
  out = "family       kappa%        delta   violated/total\n";
  for (int f = 0; f < kNumConstraintFamilies; ++f) {
    const std::string name(ConstraintFamilyName(static_cast<ConstraintFamily>(f)));
    std::snprintf(line, sizeof(line), "%-10s %8.2f %12.6g %8d/%d\n", name.c_str(), m.kappa[f],
                  m.delta[f], m.violated[f], m.total[f]);
    out += line;
  }
  return out;
}

std::string EvalOutput(const EvalReport& r, Format format) {
  switch (format) {
    case Format::kJson:
      return EvalReportJson(r);
    case Format::kCsv:
      return EvalReportCsv(r);
    case Format::kText:
      break;
  }
  return EvalReportText(r);
}

// case convert ---------------------------------------------------------------

struct ConvertArgs {
  std::string input;
  std::string output;
};

int RunConvert(const ConvertArgs& a) {
  const GridCase grid = ParseCase(CaseDocument::FromFile(ResolveCasePath(a.input)));
  const std::string text = WriteJsonCase(grid);
  if (a.output.empty() || a.output == "-") {
    std::cout << text;
  } else {
    WriteFile(a.output, text);
    std::cerr << "wrote " << a.output << " (" << grid.num_buses() << " buses, hash "
              << HexDigest(CaseHash(grid)) << ")\n";
  }
  return 0;
}

// data generate --------------------------------------------------------------

struct GenerateArgs {
  std::string case_name = "case9";
  int n = 100;
  std::string output;
  double train_fraction = 0.8;
};

int RunGenerate(const GenerateArgs& a, const GlobalOptions& g) {
  const Network net = LoadNetwork(a.case_name);
  const std::uint64_t seed = g.seed.value_or(0);
  const fs::path out = a.output.empty()
                           ? fs::path(fs::path(a.case_name).stem().string() + "_n" +
                                      std::to_string(a.n) + "_s" + std::to_string(seed) +
                                      ".jsonl")
                           : fs::path(a.output);
  DatasetOptions options;
  options.train_fraction = a.train_fraction;
  const DatasetManifest m = GenerateDataset(net, a.n, seed, out, options);
  if (g.format == Format::kJson) {
    std::cout << ReadFile(ManifestPathFor(out));
  } else if (g.format == Format::kCsv) {
    std::cout << "dataset,manifest,requested,feasible,infeasible,train,test\n"
              << out.string() << "," << ManifestPathFor(out).string() << "," << m.requested
              << "," << m.feasible << "," << m.infeasible << "," << m.train_ids.size() << ","
              << m.test_ids.size() << "\n";
  } else {
    std::cout << "dataset:  " << out.string() << "\nmanifest: " << ManifestPathFor(out).string()
              << "\nsamples:  " << m.feasible << " feasible of " << m.requested << " ("
              << m.train_ids.size() << " train, " << m.test_ids.size() << " test)\n";
  }
  return 0;
}

// oracle solve ---------------------------------------------------------------

struct SolveArgs {
  std::string case_name = "case9";
  bool perturb = false;
};

int RunSolve(const SolveArgs& a, const GlobalOptions& g) {
  const Network net = LoadNetwork(a.case_name);
  LoadScenario scenario;
  if (a.perturb) {
    scenario = SampleLoads(net.grid(), 1, g.seed.value_or(0)).front();
  } else {
    scenario.pd = net.grid().DefaultPd();
    scenario.qd = net.grid().DefaultQd();
  }
  const LabeledSample s = SolveOpfPenalty(net, scenario);
  const double base = net.grid().base_mva;
  if (g.format == Format::kJson) {
    std::cout << SampleToJsonLine(s) << "\n";
  } else if (g.format == Format::kCsv) {
    std::cout << "gen,bus_id,pg_mw,qg_mvar\n";
    for (int k = 0; k < net.num_gens(); ++k) {
      std::cout << k << "," << net.grid().buses[net.grid().gens[k].bus].id << ","
                << Num(s.label.pg[k] * base) << "," << Num(s.label.qg[k] * base) << "\n";
    }
  } else {
    char line[160];
    std::snprintf(line, sizeof(line),
                  "status %s  objective %.6f $/h  outer %d  inner %d  residual %.3g  "
                  "max violation %.3g\n",
                  SolveStatusName(s.meta.status), s.objective, s.meta.outer_iterations,
                  s.meta.iterations, s.meta.residual, s.meta.max_violation);
    std::cout << line << "gen  bus      Pg (MW)    Qg (MVAr)\n";
    for (int k = 0; k < net.num_gens(); ++k) {
      std::snprintf(line, sizeof(line), "%3d %4d %12.4f %12.4f\n", k,
                    net.grid().buses[net.grid().gens[k].bus].id, s.label.pg[k] * base,
                    s.label.qg[k] * base);
      std::cout << line;
    }
  }
  return s.meta.status == SolveStatus::kConverged ? 0 : 2;
}

// train ----------------------------------------------------------------------

struct TrainArgs {
  std::optional<std::string> case_name, dataset, output_dir, optimizer;
  std::optional<int> samples, epochs, batch_size;
  std::optional<double> learning_rate, lr_decay;
  std::optional<bool> tmfe, dda, hierarchical;
};

TrainConfig ResolveTrainConfig(const TrainArgs& a, const GlobalOptions& g) {
  TrainConfig c;
  if (!g.config_path.empty()) MergeTrainConfig(c, ReadFile(g.config_path));
  if (a.case_name) c.case_name = *a.case_name;
  if (a.dataset) c.dataset = *a.dataset;
  if (a.output_dir) c.output_dir = *a.output_dir;
  if (a.optimizer) c.optimizer = *a.optimizer;
  if (a.samples) c.samples = *a.samples;
  if (a.epochs) c.epochs = *a.epochs;
  if (a.batch_size) c.batch_size = *a.batch_size;
  if (a.learning_rate) c.learning_rate = *a.learning_rate;
  if (a.lr_decay) c.lr_decay = *a.lr_decay;
  if (a.tmfe) c.model.tmfe = *a.tmfe;
  if (a.dda) c.dda.enabled = *a.dda;
  if (a.hierarchical) c.hierarchical = *a.hierarchical;
  if (g.seed) c.seed = *g.seed;
  c.Validate();
  return c;
}

int RunTrain(const TrainArgs& a, const GlobalOptions& g) {
  TrainConfig c = ResolveTrainConfig(a, g);
  const Network net = LoadNetwork(c.case_name);
  fs::path dataset_path =
      c.dataset.empty() ? fs::path(c.output_dir) / "dataset.jsonl" : fs::path(c.dataset);
  if (!fs::exists(dataset_path)) {
    std::cerr << "generating " << c.samples << " samples into " << dataset_path.string() << "\n";
    GenerateDataset(net, c.samples, c.seed, dataset_path, {}, [](int done, int total) {
      if (done % 500 == 0 || done == total) std::cerr << "  " << done << "/" << total << "\n";
    });
  }
  const Dataset dataset = ReadDataset(dataset_path);
  Trainer trainer(c, net, dataset);
  const bool verbose = g.format == Format::kText;
  trainer.Train([&](const EpochMetrics& m) {
    if (verbose && (m.epoch % 10 == 0 || m.epoch + 1 == c.epochs)) {
      std::fprintf(stderr, "epoch %4d  loss %.6g  opf %.6g  eq %.4g  ineq %.4g  (%.2fs)\n",
                   m.epoch, m.l_total, m.l_opf, m.l_eq, m.l_ineq, m.seconds);
    }
  });
  EvalOptions eval;
  eval.tol = c.tol;
  eval.tau = c.tau;
  const EvalReport report = EvaluateModel(trainer.model(), net, dataset.Split("test"), eval);
  const std::string text = EvalOutput(report, g.format);
  WriteFile(fs::path(c.output_dir) / "eval.json", EvalReportJson(report));
  std::cout << text;
  return 0;
}

// eval -------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string split = "test";
  std::optional<double> tol, tau;
};

int RunEval(const EvalArgs& a, const GlobalOptions& g) {
  const CheckpointData ck = LoadCheckpoint(a.checkpoint);
  const TrainConfig stored = ParseTrainConfig(ck.config_json);
  std::string expected;
  TrainConfig requested = stored;
  if (!g.config_path.empty()) {
    requested = TrainConfig{};
    MergeTrainConfig(requested, ReadFile(g.config_path));
  }
  const Network net = LoadNetwork(requested.case_name);
  if (!g.config_path.empty()) {
    expected = ArchitectureHash(requested, HexDigest(CaseHash(net.grid())));
  }
  const GraphTransformer model = LoadModel(ck, net, nullptr, expected);
  const std::string path = a.dataset.empty() ? stored.dataset : a.dataset;
  if (path.empty()) throw ConfigError("eval needs --dataset");
  const Dataset dataset = ReadDataset(path);
  EvalOptions options;
  options.tol = a.tol.value_or(requested.tol);
  options.tau = a.tau.value_or(requested.tau);
  std::cout << EvalOutput(EvaluateModel(model, net, dataset.Split(a.split), options), g.format);
  return 0;
}

// feascheck --------------------------------------------------------------------

struct FeasArgs {
  std::string case_name = "case9";
  std::string solution;
  double tol = kDefaultFeasibilityTol;
};

int RunFeascheck(const FeasArgs& a, const GlobalOptions& g) {
  const Network net = LoadNetwork(a.case_name);
  const std::vector<LabeledSample> samples = ReadSamples(a.solution);
  if (samples.empty()) throw Error(a.solution + " holds no solutions");
  std::vector<ConstraintReport> reports;
  reports.reserve(samples.size());
  double worst = 0.0;
  for (const LabeledSample& s : samples) {
    reports.push_back(EvaluateConstraints(net, s.label, s.scenario.pd, s.scenario.qd, a.tol));
    worst = std::max({worst, reports.back().mismatch_p.cwiseAbs().maxCoeff(),
                      reports.back().mismatch_q.cwiseAbs().maxCoeff()});
  }
  std::cout << MetricsTable(ComputeViolationMetrics(reports), g.format);
  if (g.format == Format::kText) {
    std::cout << samples.size() << " solutions, max |mismatch| " << Num(worst) << " p.u.\n";
  }
  return 0;
}

// order dump -------------------------------------------------------------------

struct OrderArgs {
  std::string case_name = "case9";
  TmfeConfig tmfe;
};

int RunOrder(const OrderArgs& a, const GlobalOptions& g) {
  const GridCase grid = ToPerUnit(LoadCase(a.case_name));
  const NodeOrdering ordering = CaseOrdering(grid, a.tmfe);
  if (g.format == Format::kCsv) {
    std::cout << "rank,bus_id,distance\n";
    for (size_t r = 0; r < ordering.order.size(); ++r) {
      const int b = ordering.order[r];
      std::cout << r << "," << grid.buses[b].id << "," << Num(ordering.distances[b]) << "\n";
    }
  } else if (g.format == Format::kJson) {
    std::cout << OrderingToJson(grid, ordering);
  } else {
    std::cout << "start bus " << grid.buses[ordering.start].id << "\nrank  bus    distance\n";
    char line[64];
    for (size_t r = 0; r < ordering.order.size(); ++r) {
      const int b = ordering.order[r];
      std::snprintf(line, sizeof(line), "%4zu %4d %11.6g\n", r, grid.buses[b].id,
                    ordering.distances[b]);
      std::cout << line;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"opfnet: optimal power flow oracle and physics-informed graph learning"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions global;
  std::uint64_t seed_value = 0;
  std::string format_name = "text";
  app.add_option("--config", global.config_path, "JSON config file (flags override it)")
      ->check(CLI::ExistingFile);
  CLI::Option* seed_opt = app.add_option("--seed", seed_value, "global random seed");
  app.add_option("--format", format_name, "output format")
      ->check(CLI::IsMember({"text", "json", "csv"}));

  CLI::App* case_cmd = app.add_subcommand("case", "case file utilities")->require_subcommand(1);
  ConvertArgs convert;
  CLI::App* convert_cmd =
      case_cmd->add_subcommand("convert", "convert a MATPOWER or JSON case to canonical JSON");
  convert_cmd->add_option("input", convert.input, "case path or bundled name")->required();
  convert_cmd->add_option("-o,--output", convert.output, "output file (stdout when omitted)");

  CLI::App* data_cmd = app.add_subcommand("data", "dataset utilities")->require_subcommand(1);
  GenerateArgs generate;
  CLI::App* generate_cmd = data_cmd->add_subcommand("generate", "sample loads and solve labels");
  generate_cmd->add_option("--case", generate.case_name, "case path or bundled name");
  generate_cmd->add_option("--n", generate.n, "number of scenarios")->check(CLI::PositiveNumber);
  generate_cmd->add_option("-o,--output", generate.output, "dataset JSONL path");
  generate_cmd->add_option("--train-fraction", generate.train_fraction)
      ->check(CLI::Range(0.0, 1.0));

  CLI::App* oracle_cmd = app.add_subcommand("oracle", "reference OPF solver")->require_subcommand(1);
  SolveArgs solve;
  CLI::App* solve_cmd = oracle_cmd->add_subcommand("solve", "solve the OPF for one load");
  solve_cmd->add_option("--case", solve.case_name, "case path or bundled name");
  solve_cmd->add_flag("--perturb", solve.perturb, "sample the load from --seed");

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "train the graph model");
  train_cmd->add_option("--case", train.case_name);
  train_cmd->add_option("--dataset", train.dataset, "dataset JSONL (generated when missing)");
  train_cmd->add_option("--output-dir", train.output_dir);
  train_cmd->add_option("--optimizer", train.optimizer)->check(CLI::IsMember({"sgd", "adam"}));
  train_cmd->add_option("--samples", train.samples);
  train_cmd->add_option("--epochs", train.epochs);
  train_cmd->add_option("--batch-size", train.batch_size);
  train_cmd->add_option("--lr", train.learning_rate);
  train_cmd->add_option("--lr-decay", train.lr_decay);
  train_cmd->add_option("--tmfe", train.tmfe, "enable the topology feature extractor");
  train_cmd->add_option("--dda", train.dda, "enable dynamic bound adjustment");
  train_cmd->add_option("--hierarchical", train.hierarchical, "per-layer physics losses");

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval.checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--dataset", eval.dataset);
  eval_cmd->add_option("--split", eval.split)->check(CLI::IsMember({"train", "test", "all"}));
  eval_cmd->add_option("--tol", eval.tol);
  eval_cmd->add_option("--tau", eval.tau);

  FeasArgs feas;
  CLI::App* feas_cmd = app.add_subcommand("feascheck", "constraint metrics of stored solutions");
  feas_cmd->add_option("--case", feas.case_name);
  feas_cmd->add_option("--solution", feas.solution, "solutions JSONL")->required();
  feas_cmd->add_option("--tol", feas.tol);

  CLI::App* order_cmd = app.add_subcommand("order", "topology orderings")->require_subcommand(1);
  OrderArgs order;
  CLI::App* dump_cmd = order_cmd->add_subcommand("dump", "print the Dijkstra node order");
  dump_cmd->add_option("--case", order.case_name);
  dump_cmd->add_option("--alpha", order.tmfe.alpha);
  dump_cmd->add_option("--beta", order.tmfe.beta);
  dump_cmd->add_option("--gamma", order.tmfe.gamma);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
  }
  if (*seed_opt) global.seed = seed_value;
  global.format = format_name == "json" ? Format::kJson
                  : format_name == "csv" ? Format::kCsv
                                         : Format::kText;

  try {
    if (*convert_cmd) return RunConvert(convert);
    if (*generate_cmd) return RunGenerate(generate, global);
    if (*solve_cmd) return RunSolve(solve, global);
    if (*train_cmd) return RunTrain(train, global);
    if (*eval_cmd) return RunEval(eval, global);
    if (*feas_cmd) return RunFeascheck(feas, global);
    if (*dump_cmd) return RunOrder(order, global);
  } catch (const opfnet::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
