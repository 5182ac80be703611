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

#ifndef OPFNET_CASE_MODEL_H_
#define OPFNET_CASE_MODEL_H_

#include <array>
#include <complex>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace opfnet {

using Complex = std::complex<double>;
using ComplexSparse = Eigen::SparseMatrix<Complex>;
using ComplexDense = Eigen::MatrixXcd;

enum class BusKind { kSlack, kPv, kPq };

// Natural units are MW / MVAr / degrees as found in case files; kPerUnit
// means every power quantity is divided by base_mva and angles are radians.
enum class Units { kNatural, kPerUnit };

const char* BusKindName(BusKind kind);

struct Bus {
  int id = 0;  // external bus number, preserved for reporting
  BusKind kind = BusKind::kPq;
  double pd = 0.0;
  double qd = 0.0;
  double gs = 0.0;
  double bs = 0.0;
  double vm = 1.0;
  double va = 0.0;
  double vmin = 0.9;
  double vmax = 1.1;
  double base_kv = 0.0;

  bool operator==(const Bus&) const = default;
};

struct Generator {
  int bus = 0;  // internal (dense) bus index
  double pg = 0.0;
  double qg = 0.0;
  double pmin = 0.0;
  double pmax = 0.0;
  double qmin = 0.0;
  double qmax = 0.0;
  double vg = 1.0;  // voltage setpoint, p.u.
  // Quadratic cost c2*P^2 + c1*P + c0 with P in MW, currency per hour.
  std::array<double, 3> cost = {0.0, 1.0, 0.0};

  bool operator==(const Generator&) const = default;
};

struct Branch {
  int from = 0;  // internal bus indices
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double b_sh = 0.0;  // total line-charging susceptance
  double tap = 1.0;
  bool in_service = true;
  double s_max = 0.0;  // 0 means unrated
  // Angle-difference limits in the case's angle unit; infinite when absent.
  double angmin = -std::numeric_limits<double>::infinity();
  double angmax = std::numeric_limits<double>::infinity();

  bool HasAngleLimits() const;
  bool operator==(const Branch&) const = default;
};

struct GridCase {
  std::string name;
  double base_mva = 100.0;
  Units units = Units::kPerUnit;
  std::vector<Bus> buses;
  std::vector<Generator> gens;
  std::vector<Branch> branches;

  int num_buses() const { return static_cast<int>(buses.size()); }
  int num_gens() const { return static_cast<int>(gens.size()); }
  int num_branches() const { return static_cast<int>(branches.size()); }

  // Index of the unique slack bus. Requires a validated case.
  int SlackBus() const;
  std::optional<int> IndexOfBusId(int external_id) const;
  // Per-bus count of attached generators.
  std::vector<int> GeneratorsPerBus() const;
  Eigen::VectorXd DefaultPd() const;
  Eigen::VectorXd DefaultQd() const;

  bool operator==(const GridCase&) const = default;
};

// Throws ValidationError describing the first violated invariant.
void ValidateCase(const GridCase& grid);

// Converts a natural-unit case to per-unit on its own base. A case already in
// per-unit is returned unchanged.
GridCase ToPerUnit(GridCase grid);

// Generation cost in currency per hour for a per-unit active power.
double GenerationCost(const Generator& gen, double pg_pu, double base_mva);
// d cost / d pg_pu.
double GenerationCostSlope(const Generator& gen, double pg_pu,
                           double base_mva);

// Pi-model two-port admittances of one branch:
//   [I_f]   [yff yft] [V_f]
//   [I_t] = [ytf ytt] [V_t]
struct BranchAdmittance {
  Complex yff;
  Complex yft;
  Complex ytf;
  Complex ytt;
};

// Throws DegenerateImpedanceError when r = x = 0.
Complex SeriesAdmittance(const Branch& branch);
BranchAdmittance PiModel(const Branch& branch);

struct AdmittanceMatrix {
  int n = 0;
  ComplexSparse y;

  ComplexDense Dense() const { return ComplexDense(y); }
  Eigen::MatrixXd G() const { return Dense().real(); }
  Eigen::MatrixXd B() const { return Dense().imag(); }
};

AdmittanceMatrix BuildYbus(const GridCase& grid);

// 0/1 mapping matrices: gen_to_bus is |gens| x |buses|, from_to_bus and
// to_to_bus are |branches| x |buses|.
struct IncidenceMaps {
  Eigen::SparseMatrix<double> gen_to_bus;
  Eigen::SparseMatrix<double> from_to_bus;
  Eigen::SparseMatrix<double> to_to_bus;
};

IncidenceMaps BuildIncidence(const GridCase& grid);

// A validated per-unit case together with its derived network structures.
// Immutable after construction.
class Network {
 public:
  explicit Network(GridCase grid);

  const GridCase& grid() const { return grid_; }
  const AdmittanceMatrix& ybus() const { return ybus_; }
  const IncidenceMaps& incidence() const { return incidence_; }

  int num_buses() const { return grid_.num_buses(); }
  int num_gens() const { return grid_.num_gens(); }
  int num_branches() const { return grid_.num_branches(); }
  int slack_bus() const { return slack_; }
  // Buses solved as PV (have an attached generator, not the slack).
  const std::vector<int>& pv_buses() const { return pv_; }
  const std::vector<int>& pq_buses() const { return pq_; }
  // Sorted buses with at least one generator (slack included).
  const std::vector<int>& generator_buses() const { return gen_buses_; }
  // Generators attached to each bus.
  const std::vector<std::vector<int>>& bus_generators() const {
    return bus_gens_;
  }
  // Effective solve kind of each bus (may differ from the file's tag when a
  // PV-tagged bus carries no generator).
  BusKind solve_kind(int bus) const { return kinds_[bus]; }

 private:
  GridCase grid_;
  AdmittanceMatrix ybus_;
  IncidenceMaps incidence_;
  int slack_ = 0;
  std::vector<int> pv_;
  std::vector<int> pq_;
  std::vector<int> gen_buses_;
  std::vector<std::vector<int>> bus_gens_;
  std::vector<BusKind> kinds_;
};

}  // namespace opfnet

#endif  // OPFNET_CASE_MODEL_H_
