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

#include "opfnet/powerflow.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "opfnet/error.h"

namespace opfnet {
namespace {

void CheckLength(const Eigen::VectorXd& v, int expected, const char* what) {
  if (v.size() != expected) {
    throw ShapeError(std::string(what) + " has length " +
                     std::to_string(v.size()) + ", expected " +
                     std::to_string(expected));
  }
}

void Tally(FamilyTally& tally, double value, double lo, double hi,
           double tol) {
  ++tally.total;
  const double depth = std::max({0.0, value - hi, lo - value});
  if (depth <= tol) {
    ++tally.satisfied;
  } else {
    tally.depths.push_back(depth);
  }
}

}  // namespace

void CheckDispatchShape(const Network& net, const DispatchState& state) {
  CheckLength(state.pg, net.num_gens(), "pg");
  CheckLength(state.qg, net.num_gens(), "qg");
  CheckLength(state.vm, net.num_buses(), "vm");
  CheckLength(state.va, net.num_buses(), "va");
}

std::string_view ConstraintFamilyName(ConstraintFamily family) {
  switch (family) {
    case ConstraintFamily::kPg:
      return "Pg";
    case ConstraintFamily::kQg:
      return "Qg";
    case ConstraintFamily::kVm:
      return "V";
    case ConstraintFamily::kBranchFlow:
      return "S_l";
    case ConstraintFamily::kAngleDiff:
      return "theta_l";
  }
  return "?";
}

Eigen::VectorXcd ComplexVoltages(const Eigen::VectorXd& vm,
                                 const Eigen::VectorXd& va) {
  Eigen::VectorXcd v(vm.size());
  for (Eigen::Index i = 0; i < vm.size(); ++i) v[i] = std::polar(vm[i], va[i]);
  return v;
}

Injections NodalInjections(const Network& net, const Eigen::VectorXd& vm,
                           const Eigen::VectorXd& va) {
  CheckLength(vm, net.num_buses(), "vm");
  CheckLength(va, net.num_buses(), "va");
  const Eigen::VectorXcd v = ComplexVoltages(vm, va);
  const Eigen::VectorXcd current = net.ybus().y * v;
  const Eigen::VectorXcd s = v.cwiseProduct(current.conjugate());
  return {s.real(), s.imag()};
}

BranchFlowSet BranchFlows(const Network& net, const Eigen::VectorXd& vm,
                          const Eigen::VectorXd& va) {
  CheckLength(vm, net.num_buses(), "vm");
  CheckLength(va, net.num_buses(), "va");
  const int m = net.num_branches();
  BranchFlowSet flows{Eigen::VectorXd::Zero(m), Eigen::VectorXd::Zero(m),
                      Eigen::VectorXd::Zero(m), Eigen::VectorXd::Zero(m)};
  for (int e = 0; e < m; ++e) {
    const Branch& br = net.grid().branches[e];
    if (!br.in_service) continue;
    const BranchAdmittance pi = PiModel(br);
    const Complex vf = std::polar(vm[br.from], va[br.from]);
    const Complex vt = std::polar(vm[br.to], va[br.to]);
    const Complex sf = vf * std::conj(pi.yff * vf + pi.yft * vt);
    const Complex st = vt * std::conj(pi.ytf * vf + pi.ytt * vt);
    flows.p_from[e] = sf.real();
    flows.q_from[e] = sf.imag();
    flows.p_to[e] = st.real();
    flows.q_to[e] = st.imag();
  }
  return flows;
}

double Mismatch::MaxAbs() const {
  double worst = 0.0;
  if (p.size() > 0) worst = std::max(worst, p.cwiseAbs().maxCoeff());
  if (q.size() > 0) worst = std::max(worst, q.cwiseAbs().maxCoeff());
  return worst;
}

Mismatch NodalMismatch(const Network& net, const DispatchState& state,
                       const Eigen::VectorXd& pd, const Eigen::VectorXd& qd) {
  CheckDispatchShape(net, state);
  CheckLength(pd, net.num_buses(), "pd");
  CheckLength(qd, net.num_buses(), "qd");
  const Injections inj = NodalInjections(net, state.vm, state.va);
  const auto& m_gen = net.incidence().gen_to_bus;
  Mismatch r;
  r.p = m_gen.transpose() * state.pg - pd - inj.p;
  r.q = m_gen.transpose() * state.qg - qd - inj.q;
  return r;
}

ConstraintReport EvaluateConstraints(const Network& net,
                                     const DispatchState& state,
                                     const Eigen::VectorXd& pd,
                                     const Eigen::VectorXd& qd, double tol) {
  const GridCase& grid = net.grid();
  ConstraintReport report;
  const Mismatch r = NodalMismatch(net, state, pd, qd);
  report.mismatch_p = r.p;
  report.mismatch_q = r.q;

  auto& pg = report.families[static_cast<int>(ConstraintFamily::kPg)];
  auto& qg = report.families[static_cast<int>(ConstraintFamily::kQg)];
  auto& vm = report.families[static_cast<int>(ConstraintFamily::kVm)];
  auto& sl = report.families[static_cast<int>(ConstraintFamily::kBranchFlow)];
  auto& th = report.families[static_cast<int>(ConstraintFamily::kAngleDiff)];

  for (int g = 0; g < grid.num_gens(); ++g) {
    const Generator& gen = grid.gens[g];
    Tally(pg, state.pg[g], gen.pmin, gen.pmax, tol);
    Tally(qg, state.qg[g], gen.qmin, gen.qmax, tol);
  }
  for (int i = 0; i < grid.num_buses(); ++i) {
    Tally(vm, state.vm[i], grid.buses[i].vmin, grid.buses[i].vmax, tol);
  }
  const BranchFlowSet flows = BranchFlows(net, state.vm, state.va);
  for (int e = 0; e < grid.num_branches(); ++e) {
    const Branch& br = grid.branches[e];
    if (!br.in_service) continue;
    if (br.s_max > 0.0) {
      const double s = std::hypot(flows.p_from[e], flows.q_from[e]);
      Tally(sl, s, -std::numeric_limits<double>::infinity(), br.s_max, tol);
    }
    if (br.HasAngleLimits()) {
      Tally(th, state.va[br.from] - state.va[br.to], br.angmin, br.angmax,
            tol);
    }
  }
  return report;
}

ViolationMetrics ComputeViolationMetrics(
    std::span<const ConstraintReport> reports) {
  if (reports.empty()) throw Error("violation metrics need at least one report");
  ViolationMetrics metrics;
  for (int f = 0; f < kNumConstraintFamilies; ++f) {
    long satisfied = 0;
    long total = 0;
    double depth_sum = 0.0;
    long violated = 0;
    for (const ConstraintReport& r : reports) {
      satisfied += r.families[f].satisfied;
      total += r.families[f].total;
      for (double d : r.families[f].depths) depth_sum += d;
      violated += static_cast<long>(r.families[f].depths.size());
    }
    metrics.kappa[f] =
        total == 0 ? 100.0 : 100.0 * static_cast<double>(satisfied) / total;
    metrics.delta[f] = violated == 0 ? 0.0 : depth_sum / violated;
    metrics.violated[f] = static_cast<int>(violated);
    metrics.total[f] = static_cast<int>(total);
  }
  return metrics;
}

}  // namespace opfnet
