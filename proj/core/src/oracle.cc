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

#include "opfnet/oracle.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/SparseLU>

#include "json.hpp"
#include "opfnet/case_io.h"
#include "opfnet/error.h"
#include "opfnet/rng.h"

namespace opfnet {
namespace {

using Eigen::VectorXd;
using Eigen::VectorXcd;
constexpr Complex kJ(0.0, 1.0);
constexpr double kInf = std::numeric_limits<double>::infinity();

struct SbusDerivatives {
  ComplexSparse d_va;
  ComplexSparse d_vm;
};

ComplexSparse Diagonal(const VectorXcd& d) {
  ComplexSparse m(d.size(), d.size());
  m.reserve(Eigen::VectorXi::Constant(d.size(), 1));
  for (Eigen::Index i = 0; i < d.size(); ++i) m.insert(i, i) = d[i];
  m.makeCompressed();
  return m;
}

// dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
// dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
SbusDerivatives ComputeSbusDerivatives(const ComplexSparse& y,
                                       const VectorXcd& v) {
  const VectorXcd current = y * v;
  VectorXcd unit(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) unit[i] = v[i] / std::abs(v[i]);
  const ComplexSparse diag_v = Diagonal(v);
  SbusDerivatives d;
  const ComplexSparse t = Diagonal(current) - y * diag_v;
  d.d_va = kJ * (diag_v * ComplexSparse(t.conjugate()));
  const ComplexSparse yu = y * Diagonal(unit);
  d.d_vm = diag_v * ComplexSparse(yu.conjugate()) +
           Diagonal(current.conjugate().cwiseProduct(unit));
  return d;
}

// Rows: P at angle buses, Q at PQ buses. Columns: va at angle buses, vm at
// PQ buses. `angle_pos` / `pq_pos` map a bus to its position or -1.
Eigen::SparseMatrix<double> BuildJacobian(const SbusDerivatives& d,
                                          const std::vector<int>& angle_pos,
                                          const std::vector<int>& pq_pos,
                                          int na, int nq) {
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(4 * (d.d_va.nonZeros() + d.d_vm.nonZeros()));
  auto scatter = [&](const ComplexSparse& m, const std::vector<int>& col_pos,
                     int col_offset) {
    for (int c = 0; c < m.outerSize(); ++c) {
      const int col = col_pos[c];
      if (col < 0) continue;
      for (ComplexSparse::InnerIterator it(m, c); it; ++it) {
        const int r = static_cast<int>(it.row());
        if (angle_pos[r] >= 0) {
          entries.emplace_back(angle_pos[r], col_offset + col, it.value().real());
        }
        if (pq_pos[r] >= 0) {
          entries.emplace_back(na + pq_pos[r], col_offset + col, it.value().imag());
        }
      }
    }
  };
  scatter(d.d_va, angle_pos, 0);
  scatter(d.d_vm, pq_pos, na);
  Eigen::SparseMatrix<double> jac(na + nq, na + nq);
  jac.setFromTriplets(entries.begin(), entries.end());
  return jac;
}

using SparseSolver = Eigen::SparseLU<Eigen::SparseMatrix<double>>;

void Factor(SparseSolver& solver, const Eigen::SparseMatrix<double>& jac) {
  solver.compute(jac);
  if (solver.info() != Eigen::Success) {
    throw SolverError("singular power-flow Jacobian");
  }
}

std::vector<int> Positions(int n, const std::vector<int>& buses) {
  std::vector<int> pos(n, -1);
  for (size_t k = 0; k < buses.size(); ++k) pos[buses[k]] = static_cast<int>(k);
  return pos;
}

std::vector<int> NonSlackBuses(const Network& net) {
  std::vector<int> out = net.pv_buses();
  out.insert(out.end(), net.pq_buses().begin(), net.pq_buses().end());
  return out;
}

PowerFlowResult NewtonCore(const Network& net, const ComplexSparse& y,
                           const VectorXd& pg_fixed, const VectorXd& vm_set,
                           const VectorXd& pd, const VectorXd& qd,
                           const PowerFlowOptions& options, VectorXd vm,
                           VectorXd va) {
  const int n = net.num_buses();
  const std::vector<int> angle_buses = NonSlackBuses(net);
  const std::vector<int>& pq = net.pq_buses();
  const int na = static_cast<int>(angle_buses.size());
  const int nq = static_cast<int>(pq.size());
  const std::vector<int> angle_pos = Positions(n, angle_buses);
  const std::vector<int> pq_pos = Positions(n, pq);

  for (int b : net.generator_buses()) vm[b] = vm_set[b];
  va[net.slack_bus()] = 0.0;
  VectorXd p_spec = -pd;
  for (int g = 0; g < net.num_gens(); ++g) {
    p_spec[net.grid().gens[g].bus] += pg_fixed[g];
  }

  PowerFlowResult result;
  VectorXd mismatch(na + nq);
  for (;;) {
    const VectorXcd v = [&] {
      VectorXcd out(n);
      for (int i = 0; i < n; ++i) out[i] = std::polar(vm[i], va[i]);
      return out;
    }();
    const VectorXcd s = v.cwiseProduct((y * v).conjugate());
    for (int r = 0; r < na; ++r) {
      mismatch[r] = s[angle_buses[r]].real() - p_spec[angle_buses[r]];
    }
    for (int r = 0; r < nq; ++r) mismatch[na + r] = s[pq[r]].imag() + qd[pq[r]];
    ++result.iterations;
    result.residual = mismatch.size() ? mismatch.cwiseAbs().maxCoeff() : 0.0;
    if (!std::isfinite(result.residual)) break;
    if (result.residual < options.tolerance) {
      result.status = SolveStatus::kConverged;
      break;
    }
    if (result.iterations > options.max_iterations) break;
    const SbusDerivatives d = ComputeSbusDerivatives(y, v);
    SparseSolver solver;
    Factor(solver, BuildJacobian(d, angle_pos, pq_pos, na, nq));
    const VectorXd step = -solver.solve(mismatch);
    if (!step.allFinite()) throw SolverError("singular power-flow Jacobian");
    for (int r = 0; r < na; ++r) va[angle_buses[r]] += step[r];
    for (int r = 0; r < nq; ++r) vm[pq[r]] += step[na + r];
  }
  result.vm = std::move(vm);
  result.va = std::move(va);
  return result;
}

// ---- reduced-space augmented Lagrangian OPF ----

enum class Quantity {
  kSlackPg,
  kControlPg,
  kBusQ,
  kVm,
  kFlowFrom,  // |S_f|^2
  kFlowTo,    // |S_t|^2
  kAngle,
};

struct Constraint {
  Quantity quantity;
  int index;
  double bound;
  double sign;  // +1: q <= bound, -1: q >= bound
};

double Margin(double lo, double hi, double margin) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return margin;
  return std::min(margin, 0.25 * (hi - lo));
}

class ReducedOpf {
 public:
  ReducedOpf(const Network& net, const LoadScenario& scenario,
             const OpfOptions& options)
      : net_(net),
        y_(net.ybus().y),
        pd_(scenario.pd),
        qd_(scenario.qd),
        options_(options),
        angle_buses_(NonSlackBuses(net)),
        row_of_bus_(Positions(net.num_buses(), angle_buses_)),
        pq_pos_(Positions(net.num_buses(), net.pq_buses())) {
    const GridCase& grid = net.grid();
    slack_gen_ = net.bus_generators()[net.slack_bus()].front();

    pg_base_ = CasePgSetpoints(net);
    vm_base_ = CaseVmSetpoints(net);
    for (int g = 0; g < net.num_gens(); ++g) {
      const Generator& gen = grid.gens[g];
      pg_base_[g] = std::clamp(pg_base_[g], gen.pmin, gen.pmax);
      if (g == slack_gen_) continue;
      if (gen.pmin < gen.pmax) {
        pg_controls_.push_back(g);
      } else {
        pg_base_[g] = gen.pmin;
      }
    }
    for (int b : net.generator_buses()) {
      const Bus& bus = grid.buses[b];
      vm_base_[b] = std::clamp(vm_base_[b], bus.vmin, bus.vmax);
      if (bus.vmin < bus.vmax) vm_controls_.push_back(b);
    }

    auto add_interval = [&](Quantity q, int index, double lo, double hi) {
      const double m = Margin(lo, hi, options.bound_margin);
      if (std::isfinite(hi)) constraints_.push_back({q, index, hi - m, 1.0});
      if (std::isfinite(lo)) constraints_.push_back({q, index, lo + m, -1.0});
    };
    {
      const Generator& gen = grid.gens[slack_gen_];
      add_interval(Quantity::kSlackPg, slack_gen_, gen.pmin, gen.pmax);
    }
    for (int g : pg_controls_) {
      add_interval(Quantity::kControlPg, g, grid.gens[g].pmin,
                   grid.gens[g].pmax);
    }
    for (int b : net.generator_buses()) {
      double lo = 0.0;
      double hi = 0.0;
      for (int g : net.bus_generators()[b]) {
        lo += grid.gens[g].qmin;
        hi += grid.gens[g].qmax;
      }
      add_interval(Quantity::kBusQ, b, lo, hi);
    }
    for (int i = 0; i < net.num_buses(); ++i) {
      add_interval(Quantity::kVm, i, grid.buses[i].vmin, grid.buses[i].vmax);
    }
    for (int e = 0; e < net.num_branches(); ++e) {
      const Branch& br = grid.branches[e];
      if (!br.in_service) continue;
      if (br.s_max > 0.0) {
        const double s = br.s_max - Margin(0.0, br.s_max, options.bound_margin);
        constraints_.push_back({Quantity::kFlowFrom, e, s * s, 1.0});
        constraints_.push_back({Quantity::kFlowTo, e, s * s, 1.0});
      }
      if (br.HasAngleLimits()) {
        add_interval(Quantity::kAngle, e, br.angmin, br.angmax);
      }
    }
    lambda_ = VectorXd::Zero(static_cast<int>(constraints_.size()));
    rho_ = options.initial_penalty;
  }

  int num_controls() const {
    return static_cast<int>(pg_controls_.size() + vm_controls_.size());
  }

  VectorXd InitialControls() const {
    const GridCase& grid = net_.grid();
    VectorXd u(num_controls());
    int k = 0;
    for (int g : pg_controls_) {
      const double m = Margin(grid.gens[g].pmin, grid.gens[g].pmax,
                              options_.bound_margin);
      u[k++] = std::clamp(pg_base_[g], grid.gens[g].pmin + m,
                          grid.gens[g].pmax - m);
    }
    for (int b : vm_controls_) {
      const Bus& bus = grid.buses[b];
      const double m = Margin(bus.vmin, bus.vmax, options_.bound_margin);
      u[k++] = std::clamp(vm_base_[b], bus.vmin + m, bus.vmax - m);
    }
    return u;
  }

  // Solves the power flow for `u` and records the state. False when the
  // power flow does not converge.
  bool Solve(const VectorXd& u) {
    Unpack(u);
    std::optional<PowerFlowResult> pf;
    try {
      if (have_state_) {
        pf = NewtonCore(net_, y_, pg_, vm_set_, pd_, qd_, options_.powerflow,
                        vm_, va_);
      }
      if (!pf || pf->status != SolveStatus::kConverged) {
        VectorXd vm = VectorXd::Ones(net_.num_buses());
        pf = NewtonCore(net_, y_, pg_, vm_set_, pd_, qd_, options_.powerflow,
                        vm, VectorXd::Zero(net_.num_buses()));
      }
    } catch (const SolverError&) {
      return false;
    }
    if (pf->status != SolveStatus::kConverged) return false;
    vm_ = pf->vm;
    va_ = pf->va;
    have_state_ = true;
    return true;
  }

  // Augmented Lagrangian value and reduced gradient at `u`.
  bool Evaluate(const VectorXd& u, double* phi, VectorXd* grad) {
    if (!Solve(u)) return false;
    const GridCase& grid = net_.grid();
    const int n = net_.num_buses();
    const int m = net_.num_branches();
    const int s_bus = net_.slack_bus();

    VectorXcd v(n);
    for (int i = 0; i < n; ++i) v[i] = std::polar(vm_[i], va_[i]);
    const VectorXcd sbus = v.cwiseProduct((y_ * v).conjugate());
    VectorXd pg = pg_;
    pg[slack_gen_] = sbus[s_bus].real() + pd_[s_bus];
    for (int g : net_.bus_generators()[s_bus]) {
      if (g != slack_gen_) pg[slack_gen_] -= pg[g];
    }

    if (fscale_ <= 0.0) fscale_ = std::max(1.0, std::abs(DispatchCost(net_, pg)));
    double value = DispatchCost(net_, pg) / fscale_;

    // Branch flows and their partials w.r.t. the four terminal variables.
    struct FlowTerms {
      Complex sf, st;
      Complex dsf_vaf, dsf_vat, dsf_vmf, dsf_vmt;
      Complex dst_vaf, dst_vat, dst_vmf, dst_vmt;
    };
    std::vector<FlowTerms> flows(m);
    for (int e = 0; e < m; ++e) {
      const Branch& br = grid.branches[e];
      if (!br.in_service) continue;
      const BranchAdmittance pi = PiModel(br);
      const Complex vf = v[br.from];
      const Complex vt = v[br.to];
      FlowTerms& t = flows[e];
      const Complex cross_f = vf * std::conj(pi.yft * vt);
      const Complex cross_t = vt * std::conj(pi.ytf * vf);
      t.sf = vf * std::conj(pi.yff * vf) + cross_f;
      t.st = vt * std::conj(pi.ytt * vt) + cross_t;
      t.dsf_vaf = kJ * cross_f;
      t.dsf_vat = -kJ * cross_f;
      t.dsf_vmf = t.sf / vm_[br.from] + std::conj(pi.yff) * vm_[br.from];
      t.dsf_vmt = cross_f / vm_[br.to];
      t.dst_vat = kJ * cross_t;
      t.dst_vaf = -kJ * cross_t;
      t.dst_vmt = t.st / vm_[br.to] + std::conj(pi.ytt) * vm_[br.to];
      t.dst_vmf = cross_t / vm_[br.from];
    }

    VectorXd w_pg = VectorXd::Zero(net_.num_gens());
    VectorXd w_p = VectorXd::Zero(n);
    VectorXd w_q = VectorXd::Zero(n);
    VectorXd w_vm = VectorXd::Zero(n);
    VectorXd w_va = VectorXd::Zero(n);
    VectorXd w_sf = VectorXd::Zero(m);
    VectorXd w_st = VectorXd::Zero(m);
    for (int g = 0; g < net_.num_gens(); ++g) {
      w_pg[g] = GenerationCostSlope(grid.gens[g], pg[g], grid.base_mva) / fscale_;
    }

    max_violation_ = 0.0;
    for (size_t k = 0; k < constraints_.size(); ++k) {
      const Constraint& c = constraints_[k];
      const double q = QuantityValue(c, pg, sbus, flows[c.index].sf,
                                     flows[c.index].st);
      const double h = c.sign * (q - c.bound);
      max_violation_ = std::max(max_violation_, h);
      const double shifted = std::max(0.0, lambda_[k] + rho_ * h);
      value += (shifted * shifted - lambda_[k] * lambda_[k]) / (2.0 * rho_);
      const double dq = c.sign * shifted;
      if (dq == 0.0) continue;
      switch (c.quantity) {
        case Quantity::kSlackPg:
        case Quantity::kControlPg:
          w_pg[c.index] += dq;
          break;
        case Quantity::kBusQ:
          w_q[c.index] += dq;
          break;
        case Quantity::kVm:
          w_vm[c.index] += dq;
          break;
        case Quantity::kFlowFrom:
          w_sf[c.index] += dq;
          break;
        case Quantity::kFlowTo:
          w_st[c.index] += dq;
          break;
        case Quantity::kAngle:
          w_va[grid.branches[c.index].from] += dq;
          w_va[grid.branches[c.index].to] -= dq;
          break;
      }
    }
    *phi = value;
    if (!grad) return true;

    // The slack generator's output is P_inj(slack) + pd - other slack-bus
    // generators.
    const double w_slack = w_pg[slack_gen_];
    w_p[s_bus] += w_slack;
    for (int g : net_.bus_generators()[s_bus]) {
      if (g != slack_gen_) w_pg[g] -= w_slack;
    }

    const SbusDerivatives d = ComputeSbusDerivatives(y_, v);
    VectorXcd w_s(n);
    for (int i = 0; i < n; ++i) w_s[i] = Complex(w_p[i], -w_q[i]);
    VectorXd g_va = (d.d_va.transpose() * w_s).real() + w_va;
    VectorXd g_vm = (d.d_vm.transpose() * w_s).real() + w_vm;
    auto sq_grad = [](Complex s, Complex ds) {
      return 2.0 * (s.real() * ds.real() + s.imag() * ds.imag());
    };
    for (int e = 0; e < m; ++e) {
      if (w_sf[e] == 0.0 && w_st[e] == 0.0) continue;
      const Branch& br = grid.branches[e];
      const FlowTerms& t = flows[e];
      g_va[br.from] += w_sf[e] * sq_grad(t.sf, t.dsf_vaf) +
                       w_st[e] * sq_grad(t.st, t.dst_vaf);
      g_va[br.to] += w_sf[e] * sq_grad(t.sf, t.dsf_vat) +
                     w_st[e] * sq_grad(t.st, t.dst_vat);
      g_vm[br.from] += w_sf[e] * sq_grad(t.sf, t.dsf_vmf) +
                       w_st[e] * sq_grad(t.st, t.dst_vmf);
      g_vm[br.to] += w_sf[e] * sq_grad(t.sf, t.dsf_vmt) +
                     w_st[e] * sq_grad(t.st, t.dst_vmt);
    }

    // Adjoint of the power-flow equations: J^T mu = dPhi/dx.
    const std::vector<int>& pq = net_.pq_buses();
    const int na = static_cast<int>(angle_buses_.size());
    const int nq = static_cast<int>(pq.size());
    VectorXd rhs(na + nq);
    for (int r = 0; r < na; ++r) rhs[r] = g_va[angle_buses_[r]];
    for (int r = 0; r < nq; ++r) rhs[na + r] = g_vm[pq[r]];
    VectorXd mu = VectorXd::Zero(na + nq);
    if (na + nq > 0) {
      const Eigen::SparseMatrix<double> jac_t =
          BuildJacobian(d, row_of_bus_, pq_pos_, na, nq).transpose();
      SparseSolver solver;
      Factor(solver, jac_t);
      mu = solver.solve(rhs);
    }

    grad->resize(num_controls());
    int k = 0;
    for (int g : pg_controls_) {
      const int row = row_of_bus_[grid.gens[g].bus];
      (*grad)[k++] = w_pg[g] + (row >= 0 ? mu[row] : 0.0);
    }
    for (int b : vm_controls_) {
      double total = g_vm[b];
      for (ComplexSparse::InnerIterator it(d.d_vm, b); it; ++it) {
        const int r = static_cast<int>(it.row());
        if (row_of_bus_[r] >= 0) total -= mu[row_of_bus_[r]] * it.value().real();
        if (pq_pos_[r] >= 0) total -= mu[na + pq_pos_[r]] * it.value().imag();
      }
      (*grad)[k++] = total;
    }
    return true;
  }

  double max_violation() const { return max_violation_; }

  void UpdateMultipliers(const VectorXd& u, double previous_violation) {
    double phi;
    Evaluate(u, &phi, nullptr);
    const GridCase& grid = net_.grid();
    const int n = net_.num_buses();
    VectorXcd v(n);
    for (int i = 0; i < n; ++i) v[i] = std::polar(vm_[i], va_[i]);
    const VectorXcd sbus = v.cwiseProduct((y_ * v).conjugate());
    VectorXd pg = pg_;
    const int s_bus = net_.slack_bus();
    pg[slack_gen_] = sbus[s_bus].real() + pd_[s_bus];
    for (int g : net_.bus_generators()[s_bus]) {
      if (g != slack_gen_) pg[slack_gen_] -= pg[g];
    }
    const BranchFlowSet flows = BranchFlows(net_, vm_, va_);
    for (size_t k = 0; k < constraints_.size(); ++k) {
      const Constraint& c = constraints_[k];
      Complex sf, st;
      if (c.quantity == Quantity::kFlowFrom || c.quantity == Quantity::kFlowTo) {
        sf = Complex(flows.p_from[c.index], flows.q_from[c.index]);
        st = Complex(flows.p_to[c.index], flows.q_to[c.index]);
      }
      const double h = c.sign * (QuantityValue(c, pg, sbus, sf, st) - c.bound);
      lambda_[k] = std::max(0.0, lambda_[k] + rho_ * h);
    }
    (void)grid;
    if (max_violation_ > 0.25 * previous_violation) {
      rho_ = std::min(rho_ * 10.0, options_.max_penalty);
    }
  }

  const VectorXd& vm() const { return vm_; }
  const VectorXd& va() const { return va_; }
  const VectorXd& pg_fixed() const { return pg_; }

 private:
  void Unpack(const VectorXd& u) {
    pg_ = pg_base_;
    vm_set_ = vm_base_;
    int k = 0;
    for (int g : pg_controls_) pg_[g] = u[k++];
    for (int b : vm_controls_) vm_set_[b] = u[k++];
  }

  double QuantityValue(const Constraint& c, const VectorXd& pg,
                       const VectorXcd& sbus, Complex sf, Complex st) const {
    switch (c.quantity) {
      case Quantity::kSlackPg:
      case Quantity::kControlPg:
        return pg[c.index];
      case Quantity::kBusQ:
        return sbus[c.index].imag() + qd_[c.index];
      case Quantity::kVm:
        return vm_[c.index];
      case Quantity::kFlowFrom:
        return std::norm(sf);
      case Quantity::kFlowTo:
        return std::norm(st);
      case Quantity::kAngle: {
        const Branch& br = net_.grid().branches[c.index];
        return va_[br.from] - va_[br.to];
      }
    }
    return 0.0;
  }

  const Network& net_;
  ComplexSparse y_;
  VectorXd pd_;
  VectorXd qd_;
  OpfOptions options_;
  std::vector<int> angle_buses_;
  std::vector<int> row_of_bus_;
  std::vector<int> pq_pos_;
  int slack_gen_ = 0;
  std::vector<int> pg_controls_;
  std::vector<int> vm_controls_;
  VectorXd pg_base_;
  VectorXd vm_base_;
  std::vector<Constraint> constraints_;
  VectorXd lambda_;
  double rho_ = 10.0;
  double fscale_ = 0.0;
  double max_violation_ = 0.0;

  VectorXd pg_;
  VectorXd vm_set_;
  VectorXd vm_;
  VectorXd va_;
  bool have_state_ = false;
};

struct InnerResult {
  int iterations = 0;
  bool converged = false;
};

InnerResult MinimizeBfgs(ReducedOpf& problem, VectorXd& u, int max_iter,
                         double gradient_tol) {
  InnerResult result;
  const int nc = static_cast<int>(u.size());
  double phi = 0.0;
  VectorXd grad;
  if (!problem.Evaluate(u, &phi, &grad)) return result;
  if (nc == 0) {
    result.converged = true;
    return result;
  }
  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(nc, nc);
  for (; result.iterations < max_iter; ++result.iterations) {
    if (grad.cwiseAbs().maxCoeff() < gradient_tol) {
      result.converged = true;
      break;
    }
    VectorXd dir = -h_inv * grad;
    double slope = grad.dot(dir);
    if (!(slope < 0.0)) {
      h_inv.setIdentity();
      dir = -grad;
      slope = grad.dot(dir);
    }
    double step = std::min(1.0, 0.05 / dir.cwiseAbs().maxCoeff());
    bool accepted = false;
    VectorXd u_new;
    VectorXd grad_new;
    double phi_new = 0.0;
    for (int ls = 0; ls < 60; ++ls) {
      u_new = u + step * dir;
      if (problem.Evaluate(u_new, &phi_new, &grad_new) &&
          phi_new <= phi + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // Restore the solver state at u and stop; no descent is available at
      // working precision.
      problem.Evaluate(u, &phi, &grad);
      result.converged = true;
      break;
    }
    const VectorXd s = u_new - u;
    const VectorXd yv = grad_new - grad;
    const double sy = s.dot(yv);
    if (sy > 1e-16) {
      if (result.iterations == 0) h_inv *= sy / yv.squaredNorm();
      const double r = 1.0 / sy;
      const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(nc, nc);
      h_inv = (eye - r * s * yv.transpose()) * h_inv *
                  (eye - r * yv * s.transpose()) +
              r * s * s.transpose();
    }
    const bool tiny = s.cwiseAbs().maxCoeff() < 1e-14;
    u = std::move(u_new);
    grad = std::move(grad_new);
    phi = phi_new;
    if (tiny) {
      result.converged = true;
      ++result.iterations;
      break;
    }
  }
  return result;
}

}  // namespace

const char* SolveStatusName(SolveStatus status) {
  switch (status) {
    case SolveStatus::kConverged:
      return "converged";
    case SolveStatus::kDiverged:
      return "diverged";
    case SolveStatus::kInfeasible:
      return "infeasible";
  }
  return "unknown";
}

PowerFlowResult SolvePowerFlowNewton(
    const Network& net, const VectorXd& pg_fixed, const VectorXd& vm_setpoints,
    const VectorXd& pd, const VectorXd& qd, const PowerFlowOptions& options,
    const std::optional<std::pair<VectorXd, VectorXd>>& initial) {
  const int n = net.num_buses();
  if (pg_fixed.size() != net.num_gens() || vm_setpoints.size() != n ||
      pd.size() != n || qd.size() != n) {
    throw ShapeError("power flow inputs do not match the network dimensions");
  }
  VectorXd vm = VectorXd::Ones(n);
  VectorXd va = VectorXd::Zero(n);
  if (initial) {
    vm = initial->first;
    va = initial->second;
  }
  return NewtonCore(net, net.ybus().y, pg_fixed, vm_setpoints, pd, qd,
                    options, std::move(vm), std::move(va));
}

PowerFlowResult SolvePowerFlowNewton(const Network& net,
                                     const VectorXd& pg_fixed,
                                     const VectorXd& vm_setpoints,
                                     const PowerFlowOptions& options) {
  return SolvePowerFlowNewton(net, pg_fixed, vm_setpoints,
                              net.grid().DefaultPd(), net.grid().DefaultQd(),
                              options);
}

VectorXd CasePgSetpoints(const Network& net) {
  VectorXd pg(net.num_gens());
  for (int g = 0; g < net.num_gens(); ++g) pg[g] = net.grid().gens[g].pg;
  return pg;
}

VectorXd CaseVmSetpoints(const Network& net) {
  VectorXd vm(net.num_buses());
  for (int i = 0; i < net.num_buses(); ++i) vm[i] = net.grid().buses[i].vm;
  for (int b : net.generator_buses()) {
    vm[b] = net.grid().gens[net.bus_generators()[b].front()].vg;
  }
  return vm;
}

DispatchState CompleteDispatch(const Network& net, const VectorXd& vm,
                               const VectorXd& va, const VectorXd& pg_fixed,
                               const VectorXd& pd, const VectorXd& qd) {
  const GridCase& grid = net.grid();
  const Injections inj = NodalInjections(net, vm, va);
  DispatchState state;
  state.vm = vm;
  state.va = va;
  state.pg = pg_fixed;
  state.qg = VectorXd::Zero(net.num_gens());
  const int s_bus = net.slack_bus();
  const auto& slack_gens = net.bus_generators()[s_bus];
  double p_slack = inj.p[s_bus] + pd[s_bus];
  for (size_t k = 1; k < slack_gens.size(); ++k) p_slack -= pg_fixed[slack_gens[k]];
  state.pg[slack_gens.front()] = p_slack;

  for (int b : net.generator_buses()) {
    const auto& gens = net.bus_generators()[b];
    const double q_bus = inj.q[b] + qd[b];
    if (gens.size() == 1) {
      state.qg[gens.front()] = q_bus;
      continue;
    }
    double qmin_sum = 0.0;
    double range_sum = 0.0;
    bool finite = true;
    for (int g : gens) {
      qmin_sum += grid.gens[g].qmin;
      range_sum += grid.gens[g].qmax - grid.gens[g].qmin;
      finite = finite && std::isfinite(grid.gens[g].qmax - grid.gens[g].qmin);
    }
    for (int g : gens) {
      if (finite && range_sum > 0.0) {
        state.qg[g] = grid.gens[g].qmin + (q_bus - qmin_sum) *
                                              (grid.gens[g].qmax - grid.gens[g].qmin) /
                                              range_sum;
      } else {
        state.qg[g] = q_bus / static_cast<double>(gens.size());
      }
    }
  }
  return state;
}

double DispatchCost(const Network& net, const VectorXd& pg) {
  double total = 0.0;
  for (int g = 0; g < net.num_gens(); ++g) {
    total += GenerationCost(net.grid().gens[g], pg[g], net.grid().base_mva);
  }
  return total;
}

LabeledSample SolveOpfPenalty(const Network& net, const LoadScenario& scenario,
                              const OpfOptions& options) {
  if (scenario.pd.size() != net.num_buses() ||
      scenario.qd.size() != net.num_buses()) {
    throw ShapeError("scenario loads do not match the network dimensions");
  }
  LabeledSample sample;
  sample.scenario = scenario;
  ReducedOpf problem(net, scenario, options);
  VectorXd u = problem.InitialControls();
  double phi = 0.0;
  if (!problem.Evaluate(u, &phi, nullptr)) {
    sample.meta.status = SolveStatus::kDiverged;
    return sample;
  }

  double previous_violation = kInf;
  for (int outer = 0; outer < options.max_outer; ++outer) {
    const InnerResult inner =
        MinimizeBfgs(problem, u, options.max_inner, options.gradient_tol);
    sample.meta.iterations += inner.iterations;
    sample.meta.outer_iterations = outer + 1;
    problem.Evaluate(u, &phi, nullptr);
    const double violation = problem.max_violation();
    if (violation <= 0.01 * options.bound_margin && inner.converged) break;
    problem.UpdateMultipliers(u, previous_violation);
    previous_violation = violation;
  }

  if (!problem.Solve(u)) {
    sample.meta.status = SolveStatus::kDiverged;
    return sample;
  }
  sample.label = CompleteDispatch(net, problem.vm(), problem.va(),
                                  problem.pg_fixed(), scenario.pd, scenario.qd);
  sample.objective = DispatchCost(net, sample.label.pg);

  const ConstraintReport report =
      EvaluateConstraints(net, sample.label, scenario.pd, scenario.qd, 0.0);
  double worst = 0.0;
  for (const FamilyTally& tally : report.families) {
    for (double depth : tally.depths) worst = std::max(worst, depth);
  }
  const BranchFlowSet flows = BranchFlows(net, sample.label.vm, sample.label.va);
  for (int e = 0; e < net.num_branches(); ++e) {
    const Branch& br = net.grid().branches[e];
    if (!br.in_service || br.s_max <= 0.0) continue;
    worst = std::max(worst, std::hypot(flows.p_to[e], flows.q_to[e]) - br.s_max);
  }
  sample.meta.max_violation = worst;
  sample.meta.residual = std::max(report.mismatch_p.cwiseAbs().maxCoeff(),
                                  report.mismatch_q.cwiseAbs().maxCoeff());
  sample.meta.status = (sample.meta.residual < options.mismatch_tol &&
                        worst <= options.bounds_tol)
                           ? SolveStatus::kConverged
                           : SolveStatus::kInfeasible;
  return sample;
}

std::vector<LoadScenario> SampleLoads(const GridCase& grid, int n,
                                      std::uint64_t seed) {
  if (n <= 0) throw Error("sample count must be positive");
  const GridCase pu = ToPerUnit(grid);
  std::vector<LoadScenario> out;
  out.reserve(n);
  for (int id = 0; id < n; ++id) {
    LoadScenario scenario;
    scenario.scenario_id = id;
    scenario.seed = SplitMix64(seed ^ (0x632be59bd9b4e019ULL * (id + 1)));
    Rng rng(scenario.seed);
    scenario.pd.resize(pu.num_buses());
    scenario.qd.resize(pu.num_buses());
    for (int i = 0; i < pu.num_buses(); ++i) {
      scenario.pd[i] = pu.buses[i].pd * rng.Uniform(0.9, 1.1);
    }
    for (int i = 0; i < pu.num_buses(); ++i) {
      scenario.qd[i] = pu.buses[i].qd * rng.Uniform(0.9, 1.1);
    }
    out.push_back(std::move(scenario));
  }
  return out;
}

// ---- dataset files ----

namespace {

using nlohmann::json;

json VectorJson(const VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

VectorXd VectorFrom(const json& obj, const char* key, int line) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_array()) {
    throw ParseError("line " + std::to_string(line) + ": " + key,
                     "expected a numeric array");
  }
  VectorXd v(static_cast<int>(it->size()));
  for (size_t i = 0; i < it->size(); ++i) {
    if (!(*it)[i].is_number()) {
      throw ParseError("line " + std::to_string(line) + ": " + key + "[" +
                           std::to_string(i) + "]",
                       "expected a number");
    }
    v[static_cast<int>(i)] = (*it)[i].get<double>();
  }
  return v;
}

SolveStatus StatusFromName(const std::string& name) {
  if (name == "converged") return SolveStatus::kConverged;
  if (name == "diverged") return SolveStatus::kDiverged;
  return SolveStatus::kInfeasible;
}

json OpfOptionsJson(const OpfOptions& o) {
  return {{"mismatch_tol", o.mismatch_tol},
          {"bounds_tol", o.bounds_tol},
          {"bound_margin", o.bound_margin},
          {"max_outer", o.max_outer},
          {"max_inner", o.max_inner},
          {"powerflow_tol", o.powerflow.tolerance}};
}

std::vector<int> IntList(const json& j, const char* key) {
  std::vector<int> out;
  auto it = j.find(key);
  if (it == j.end()) return out;
  for (const auto& v : *it) out.push_back(v.get<int>());
  return out;
}

}  // namespace

std::vector<const LabeledSample*> Dataset::Split(std::string_view name) const {
  const std::vector<int>* ids = nullptr;
  if (name == "train") {
    ids = &manifest.train_ids;
  } else if (name == "test") {
    ids = &manifest.test_ids;
  } else if (name != "all") {
    throw Error("unknown split '" + std::string(name) + "'");
  }
  std::vector<const LabeledSample*> out;
  if (!ids) {
    for (const auto& s : samples) out.push_back(&s);
    return out;
  }
  for (int id : *ids) {
    auto it = std::lower_bound(
        samples.begin(), samples.end(), id,
        [](const LabeledSample& s, int v) { return s.scenario.scenario_id < v; });
    if (it == samples.end() || it->scenario.scenario_id != id) {
      throw Error("split references missing scenario " + std::to_string(id));
    }
    out.push_back(&*it);
  }
  return out;
}

std::filesystem::path ManifestPathFor(const std::filesystem::path& dataset) {
  std::filesystem::path p = dataset;
  p.replace_extension(".manifest.json");
  return p;
}

std::string SampleToJsonLine(const LabeledSample& s) {
  json rec = {{"scenario_id", s.scenario.scenario_id},
              {"seed", s.scenario.seed},
              {"pd", VectorJson(s.scenario.pd)},
              {"qd", VectorJson(s.scenario.qd)},
              {"pg", VectorJson(s.label.pg)},
              {"qg", VectorJson(s.label.qg)},
              {"vm", VectorJson(s.label.vm)},
              {"va", VectorJson(s.label.va)},
              {"objective", s.objective},
              {"meta",
               {{"status", SolveStatusName(s.meta.status)},
                {"iterations", s.meta.iterations},
                {"outer_iterations", s.meta.outer_iterations},
                {"residual", s.meta.residual},
                {"max_violation", s.meta.max_violation}}}};
  return rec.dump();
}

LabeledSample SampleFromJsonLine(const std::string& line, int line_number) {
  json rec;
  try {
    rec = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError("line " + std::to_string(line_number), e.what());
  }
  LabeledSample s;
  s.scenario.scenario_id = rec.value("scenario_id", line_number - 1);
  s.scenario.seed = rec.value("seed", std::uint64_t{0});
  s.scenario.pd = VectorFrom(rec, "pd", line_number);
  s.scenario.qd = VectorFrom(rec, "qd", line_number);
  s.label.pg = VectorFrom(rec, "pg", line_number);
  s.label.qg = VectorFrom(rec, "qg", line_number);
  s.label.vm = VectorFrom(rec, "vm", line_number);
  s.label.va = VectorFrom(rec, "va", line_number);
  s.objective = rec.value("objective", 0.0);
  if (auto it = rec.find("meta"); it != rec.end() && it->is_object()) {
    s.meta.status = StatusFromName(it->value("status", std::string("converged")));
    s.meta.iterations = it->value("iterations", 0);
    s.meta.outer_iterations = it->value("outer_iterations", 0);
    s.meta.residual = it->value("residual", 0.0);
    s.meta.max_violation = it->value("max_violation", 0.0);
  } else {
    s.meta.status = SolveStatus::kConverged;
  }
  return s;
}

DatasetManifest GenerateDataset(
    const Network& net, int n, std::uint64_t seed,
    const std::filesystem::path& out_path, const DatasetOptions& options,
    const std::function<void(int, int)>& progress) {
  const std::vector<LoadScenario> scenarios = SampleLoads(net.grid(), n, seed);
  std::vector<LabeledSample> solved;
  DatasetManifest manifest;
  manifest.case_name = net.grid().name;
  manifest.case_hash = HexDigest(CaseHash(net.grid()));
  manifest.seed = seed;
  manifest.requested = n;
  manifest.train_fraction = options.train_fraction;
  manifest.opf = options.opf;
  manifest.dataset_file = out_path.filename().string();
  for (const LoadScenario& scenario : scenarios) {
    LabeledSample sample = SolveOpfPenalty(net, scenario, options.opf);
    if (sample.meta.status == SolveStatus::kConverged) {
      solved.push_back(std::move(sample));
    } else {
      manifest.infeasible_ids.push_back(scenario.scenario_id);
    }
    if (progress) progress(scenario.scenario_id + 1, n);
  }
  manifest.feasible = static_cast<int>(solved.size());
  manifest.infeasible = static_cast<int>(manifest.infeasible_ids.size());
  if (manifest.infeasible > options.max_infeasible_fraction * n) {
    std::ostringstream msg;
    msg << manifest.infeasible << " of " << n
        << " scenarios could not be solved to feasibility (limit "
        << options.max_infeasible_fraction * 100.0 << "%); first failing id "
        << manifest.infeasible_ids.front();
    throw Error(msg.str());
  }

  std::vector<int> ids;
  for (const auto& s : solved) ids.push_back(s.scenario.scenario_id);
  Rng rng(seed ^ 0x5bd1e995ULL);
  rng.Shuffle(ids);
  const size_t n_train = static_cast<size_t>(
      std::llround(options.train_fraction * static_cast<double>(ids.size())));
  manifest.train_ids.assign(ids.begin(), ids.begin() + n_train);
  manifest.test_ids.assign(ids.begin() + n_train, ids.end());

  if (out_path.has_parent_path()) {
    std::filesystem::create_directories(out_path.parent_path());
  }
  {
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + out_path.string());
    for (const auto& s : solved) out << SampleToJsonLine(s) << '\n';
    if (!out) throw Error("write failed for " + out_path.string());
  }
  json m = {{"format", "opfnet-dataset"},
            {"version", 1},
            {"case_name", manifest.case_name},
            {"case_hash", manifest.case_hash},
            {"seed", manifest.seed},
            {"requested", manifest.requested},
            {"feasible", manifest.feasible},
            {"infeasible", manifest.infeasible},
            {"infeasible_ids", manifest.infeasible_ids},
            {"train_fraction", manifest.train_fraction},
            {"train_count", manifest.train_ids.size()},
            {"test_count", manifest.test_ids.size()},
            {"train_ids", manifest.train_ids},
            {"test_ids", manifest.test_ids},
            {"solver", OpfOptionsJson(options.opf)},
            {"dataset_file", manifest.dataset_file}};
  const auto manifest_path = ManifestPathFor(out_path);
  std::ofstream mout(manifest_path, std::ios::binary | std::ios::trunc);
  if (!mout) throw Error("cannot write " + manifest_path.string());
  mout << m.dump(2) << '\n';
  return manifest;
}

std::vector<LabeledSample> ReadSamples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<LabeledSample> out;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(SampleFromJsonLine(line, line_number));
  }
  return out;
}

Dataset ReadDataset(const std::filesystem::path& dataset_path) {
  Dataset ds;
  ds.samples = ReadSamples(dataset_path);
  std::sort(ds.samples.begin(), ds.samples.end(),
            [](const LabeledSample& a, const LabeledSample& b) {
              return a.scenario.scenario_id < b.scenario.scenario_id;
            });
  const auto manifest_path = ManifestPathFor(dataset_path);
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw Error("missing manifest " + manifest_path.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(manifest_path.string(), e.what());
  }
  DatasetManifest& man = ds.manifest;
  man.case_name = m.value("case_name", std::string());
  man.case_hash = m.value("case_hash", std::string());
  man.seed = m.value("seed", std::uint64_t{0});
  man.requested = m.value("requested", 0);
  man.feasible = m.value("feasible", 0);
  man.infeasible = m.value("infeasible", 0);
  man.infeasible_ids = IntList(m, "infeasible_ids");
  man.train_ids = IntList(m, "train_ids");
  man.test_ids = IntList(m, "test_ids");
  man.train_fraction = m.value("train_fraction", 0.8);
  man.dataset_file = m.value("dataset_file", std::string());
  return ds;
}

}  // namespace opfnet
