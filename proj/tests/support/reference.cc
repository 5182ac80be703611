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

#include "reference.h"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <random>

#include "opfnet/case_io.h"
#include "opfnet/oracle.h"

namespace opfnet::reference {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> Linspace(double lo, double hi, int points) {
  std::vector<double> v(points);
  for (int k = 0; k < points; ++k) {
    v[k] = points == 1 ? lo : lo + (hi - lo) * k / (points - 1);
  }
  return v;
}

struct PiEntries {
  std::complex<double> yff, yft, ytf, ytt;
};

PiEntries BranchEntries(const Branch& br) {
  const std::complex<double> y = 1.0 / std::complex<double>(br.r, br.x);
  const std::complex<double> half_b(0.0, br.b_sh / 2.0);
  const double t = br.tap == 0.0 ? 1.0 : br.tap;
  return {(y + half_b) / (t * t), -y / t, -y / t, y + half_b};
}

void Check(FamilyTally& tally, double value, double lo, double hi, double tol) {
  ++tally.total;
  double depth = 0.0;
  if (value > hi) depth = value - hi;
  if (value < lo) depth = lo - value;
  if (depth > tol) {
    tally.depths.push_back(depth);
  } else {
    ++tally.satisfied;
  }
}

}  // namespace

Network Bundled(const std::string& name) { return Network(ToPerUnit(LoadCase(name))); }

GridCase TwoBusCase(double r, double x, double tap, double pd1) {
  GridCase g;
  g.name = "two_bus";
  g.base_mva = 100.0;
  g.units = Units::kPerUnit;
  Bus slack;
  slack.id = 1;
  slack.kind = BusKind::kSlack;
  Bus load;
  load.id = 2;
  load.pd = pd1;
  g.buses = {slack, load};
  Generator gen;
  gen.bus = 0;
  gen.pmax = 5.0;
  gen.qmin = -5.0;
  gen.qmax = 5.0;
  g.gens = {gen};
  Branch br;
  br.from = 0;
  br.to = 1;
  br.r = r;
  br.x = x;
  br.tap = tap;
  g.branches = {br};
  return g;
}

GridCase ToyCase() {
  GridCase g;
  g.name = "toy4";
  g.base_mva = 100.0;
  g.units = Units::kPerUnit;
  g.buses.resize(4);
  for (int i = 0; i < 4; ++i) {
    g.buses[i].id = 10 * (i + 1);
    g.buses[i].vmin = 0.94;
    g.buses[i].vmax = 1.06;
  }
  g.buses[0].kind = BusKind::kSlack;
  g.buses[1].kind = BusKind::kPv;
  g.buses[2].pd = 0.9;
  g.buses[2].qd = 0.3;
  g.buses[3].pd = 0.6;
  g.buses[3].qd = 0.2;
  g.buses[3].gs = 0.02;
  g.buses[3].bs = 0.05;
  Generator a;
  a.bus = 0;
  a.pmin = 0.1;
  a.pmax = 2.0;
  a.qmin = -1.0;
  a.qmax = 1.0;
  a.cost = {0.11, 5.0, 150.0};
  Generator b = a;
  b.bus = 1;
  b.pg = 0.8;
  b.pmax = 1.5;
  b.cost = {0.085, 1.2, 600.0};
  g.gens = {a, b};
  auto add = [&](int f, int t, double r, double x, double bsh, double tap, double smax) {
    Branch br;
    br.from = f;
    br.to = t;
    br.r = r;
    br.x = x;
    br.b_sh = bsh;
    br.tap = tap;
    br.s_max = smax;
    g.branches.push_back(br);
  };
  add(0, 1, 0.01, 0.085, 0.088, 1.0, 2.5);
  add(0, 2, 0.017, 0.092, 0.079, 1.0, 2.5);
  add(1, 3, 0.0, 0.0586, 0.0, 0.98, 3.0);
  add(2, 3, 0.0119, 0.1008, 0.209, 1.0, 0.0);
  add(1, 2, 0.039, 0.17, 0.358, 1.0, 1.5);
  return g;
}

GridSearchResult GridSearchOpf(const Network& net, const Eigen::VectorXd& pd,
                               const Eigen::VectorXd& qd, int points) {
  const GridCase& grid = net.grid();
  const int slack = net.slack_bus();
  std::vector<int> controlled;
  for (int k = 0; k < grid.num_gens(); ++k) {
    if (grid.gens[k].bus != slack) controlled.push_back(k);
  }
  double vlo = -kInf;
  double vhi = kInf;
  for (int b : net.generator_buses()) {
    vlo = std::max(vlo, grid.buses[b].vmin);
    vhi = std::min(vhi, grid.buses[b].vmax);
  }
  std::vector<std::vector<double>> axes;
  for (int k : controlled) axes.push_back(Linspace(grid.gens[k].pmin, grid.gens[k].pmax, points));
  axes.push_back(Linspace(vlo, vhi, points));

  GridSearchResult result;
  result.best_objective = kInf;
  std::vector<int> digit(axes.size(), 0);
  Eigen::VectorXd pg(grid.num_gens());
  for (int k = 0; k < grid.num_gens(); ++k) pg[k] = grid.gens[k].pg;
  while (true) {
    for (size_t a = 0; a < controlled.size(); ++a) pg[controlled[a]] = axes[a][digit[a]];
    const double v = axes.back()[digit.back()];
    Eigen::VectorXd vm_set = Eigen::VectorXd::Ones(grid.num_buses());
    for (int b : net.generator_buses()) vm_set[b] = v;
    ++result.evaluated_points;
    const PowerFlowResult pf = SolvePowerFlowNewton(net, pg, vm_set, pd, qd);
    if (pf.status == SolveStatus::kConverged) {
      const DispatchState s = CompleteDispatch(net, pf.vm, pf.va, pg, pd, qd);
      const ConstraintReport rep = BruteForceConstraints(grid, s, 0.0);
      bool ok = true;
      for (const FamilyTally& t : rep.families) ok = ok && t.depths.empty();
      if (ok) {
        ++result.feasible_points;
        double cost = 0.0;
        for (int k = 0; k < grid.num_gens(); ++k) {
          const double p = s.pg[k] * grid.base_mva;
          cost += grid.gens[k].cost[0] * p * p + grid.gens[k].cost[1] * p + grid.gens[k].cost[2];
        }
        result.best_objective = std::min(result.best_objective, cost);
      }
    }
    size_t a = 0;
    while (a < digit.size() && ++digit[a] == points) digit[a++] = 0;
    if (a == digit.size()) break;
  }
  return result;
}

std::vector<double> BellmanFord(int num_nodes, const std::vector<WeightedEdge>& edges,
                                int start) {
  std::vector<double> d(num_nodes, kInf);
  d[start] = 0.0;
  for (int round = 0; round < num_nodes; ++round) {
    bool changed = false;
    for (const WeightedEdge& e : edges) {
      if (d[e.from] + e.weight < d[e.to]) {
        d[e.to] = d[e.from] + e.weight;
        changed = true;
      }
      if (d[e.to] + e.weight < d[e.from]) {
        d[e.from] = d[e.to] + e.weight;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return d;
}

Injections DenseInjections(const GridCase& grid, const Eigen::VectorXd& vm,
                           const Eigen::VectorXd& va) {
  const int n = grid.num_buses();
  std::vector<std::vector<std::complex<double>>> y(n, std::vector<std::complex<double>>(n));
  for (const Branch& br : grid.branches) {
    if (!br.in_service) continue;
    const PiEntries e = BranchEntries(br);
    y[br.from][br.from] += e.yff;
    y[br.from][br.to] += e.yft;
    y[br.to][br.from] += e.ytf;
    y[br.to][br.to] += e.ytt;
  }
  for (int i = 0; i < n; ++i) y[i][i] += std::complex<double>(grid.buses[i].gs, grid.buses[i].bs);
  Injections out{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  for (int i = 0; i < n; ++i) {
    std::complex<double> current = 0.0;
    for (int j = 0; j < n; ++j) current += y[i][j] * std::polar(vm[j], va[j]);
    const std::complex<double> s = std::polar(vm[i], va[i]) * std::conj(current);
    out.p[i] = s.real();
    out.q[i] = s.imag();
  }
  return out;
}

Injections FlowSumInjections(const GridCase& grid, const Eigen::VectorXd& vm,
                             const Eigen::VectorXd& va) {
  const int n = grid.num_buses();
  Injections out{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  for (const Branch& br : grid.branches) {
    if (!br.in_service) continue;
    const PiEntries e = BranchEntries(br);
    const std::complex<double> vf = std::polar(vm[br.from], va[br.from]);
    const std::complex<double> vt = std::polar(vm[br.to], va[br.to]);
    const std::complex<double> sf = vf * std::conj(e.yff * vf + e.yft * vt);
    const std::complex<double> st = vt * std::conj(e.ytf * vf + e.ytt * vt);
    out.p[br.from] += sf.real();
    out.q[br.from] += sf.imag();
    out.p[br.to] += st.real();
    out.q[br.to] += st.imag();
  }
  for (int i = 0; i < n; ++i) {
    out.p[i] += vm[i] * vm[i] * grid.buses[i].gs;
    out.q[i] -= vm[i] * vm[i] * grid.buses[i].bs;
  }
  return out;
}

ConstraintReport BruteForceConstraints(const GridCase& grid, const DispatchState& state,
                                       double tol) {
  ConstraintReport rep;
  for (int k = 0; k < grid.num_gens(); ++k) {
    Check(rep.families[0], state.pg[k], grid.gens[k].pmin, grid.gens[k].pmax, tol);
    Check(rep.families[1], state.qg[k], grid.gens[k].qmin, grid.gens[k].qmax, tol);
  }
  for (int i = 0; i < grid.num_buses(); ++i) {
    Check(rep.families[2], state.vm[i], grid.buses[i].vmin, grid.buses[i].vmax, tol);
  }
  for (const Branch& br : grid.branches) {
    if (!br.in_service) continue;
    if (br.s_max > 0.0) {
      const PiEntries e = BranchEntries(br);
      const std::complex<double> vf = std::polar(state.vm[br.from], state.va[br.from]);
      const std::complex<double> vt = std::polar(state.vm[br.to], state.va[br.to]);
      const double sf = std::abs(vf * std::conj(e.yff * vf + e.yft * vt));
      Check(rep.families[3], sf, -kInf, br.s_max, tol);
    }
    if (br.HasAngleLimits()) {
      Check(rep.families[4], state.va[br.from] - state.va[br.to], br.angmin, br.angmax, tol);
    }
  }
  return rep;
}

ViolationSets BruteForceViolationSets(const GridCase& grid, const ad::Matrix& prediction,
                                      const ad::Matrix& residual_p,
                                      const ad::Matrix& residual_q, int batch, double eps) {
  const int n = grid.num_buses();
  std::vector<double> plo(n, 0.0), phi(n, 0.0), qlo(n, 0.0), qhi(n, 0.0);
  std::vector<bool> has_gen(n, false);
  for (const Generator& g : grid.gens) {
    has_gen[g.bus] = true;
    plo[g.bus] += g.pmin;
    phi[g.bus] += g.pmax;
    qlo[g.bus] += g.qmin;
    qhi[g.bus] += g.qmax;
  }
  ViolationSets sets;
  int gen_nodes = 0;
  for (int i = 0; i < n; ++i) gen_nodes += has_gen[i] ? 1 : 0;
  sets.family_size = {gen_nodes * batch, gen_nodes * batch, n * batch};
  for (int b = 0; b < batch; ++b) {
    int j = 0;
    for (int i = 0; i < n; ++i) {
      if (has_gen[i]) {
        const double p = prediction(b * n + i, 0);
        const double q = prediction(b * n + i, 1);
        if (p > phi[i]) sets.above[0].push_back(b * gen_nodes + j);
        if (p < plo[i]) sets.below[0].push_back(b * gen_nodes + j);
        if (q > qhi[i]) sets.above[1].push_back(b * gen_nodes + j);
        if (q < qlo[i]) sets.below[1].push_back(b * gen_nodes + j);
        ++j;
      }
      const double v = prediction(b * n + i, 2);
      if (v > grid.buses[i].vmax) sets.above[2].push_back(b * n + i);
      if (v < grid.buses[i].vmin) sets.below[2].push_back(b * n + i);
    }
  }
  const int rows = n * batch;
  sets.eq_size = 2 * rows;
  for (int i = 0; i < rows; ++i) {
    if (residual_p(i, 0) > eps) sets.eq_positive.push_back(i);
    if (residual_p(i, 0) < -eps) sets.eq_negative.push_back(i);
  }
  for (int i = 0; i < rows; ++i) {
    if (residual_q(i, 0) > eps) sets.eq_positive.push_back(rows + i);
    if (residual_q(i, 0) < -eps) sets.eq_negative.push_back(rows + i);
  }
  return sets;
}

ad::GradCheckReport CheckParameterGradients(GraphTransformer& model, const ParameterLoss& loss,
                                            const ad::GradCheckOptions& options) {
  ParameterStore& store = model.parameters();
  std::vector<ad::Matrix> analytic;
  {
    ad::Tape tape;
    const BoundParameters params(tape, store, true);
    tape.Backward(loss(tape, params));
    analytic = params.Gradients();
  }
  const auto evaluate = [&] {
    ad::Tape tape;
    const BoundParameters params(tape, store, false);
    return loss(tape, params).scalar();
  };
  ad::GradCheckReport report;
  for (int k = 0; k < store.size(); ++k) {
    ad::Matrix& value = store.value(k);
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double x0 = value.data()[i];
      value.data()[i] = x0 + options.step;
      const double up = evaluate();
      value.data()[i] = x0 - options.step;
      const double down = evaluate();
      value.data()[i] = x0;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[k].data()[i];
      const double err =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), options.floor});
      ++report.checked;
      if (err > report.max_relative_error || report.worst_input < 0) {
        report.max_relative_error = err;
        report.worst_input = k;
        report.worst_entry = static_cast<int>(i);
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  report.passed = report.max_relative_error < options.tolerance;
  return report;
}

ad::Matrix RandomMatrix(int rows, int cols, unsigned seed, double lo, double hi) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  ad::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(gen);
  return m;
}

std::filesystem::path ScratchDir(const std::string& tag) {
  const std::filesystem::path dir = std::filesystem::temp_directory_path() / ("opfnet_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

Dataset SmallDataset(const Network& net, int n, std::uint64_t seed, const std::string& tag) {
  const std::filesystem::path path = ScratchDir(tag) / "data.jsonl";
  GenerateDataset(net, n, seed, path);
  return ReadDataset(path);
}

}  // namespace opfnet::reference
