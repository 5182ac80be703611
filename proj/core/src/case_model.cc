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

#include "opfnet/case_model.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "opfnet/error.h"

namespace opfnet {

const char* BusKindName(BusKind kind) {
  switch (kind) {
    case BusKind::kSlack:
      return "slack";
    case BusKind::kPv:
      return "pv";
    case BusKind::kPq:
      return "pq";
  }
  return "pq";
}

bool Branch::HasAngleLimits() const {
  return std::isfinite(angmin) || std::isfinite(angmax);
}

int GridCase::SlackBus() const {
  for (int i = 0; i < num_buses(); ++i) {
    if (buses[i].kind == BusKind::kSlack) return i;
  }
  throw ValidationError("case '" + name + "' has no slack bus");
}

std::optional<int> GridCase::IndexOfBusId(int external_id) const {
  for (int i = 0; i < num_buses(); ++i) {
    if (buses[i].id == external_id) return i;
  }
  return std::nullopt;
}

std::vector<int> GridCase::GeneratorsPerBus() const {
  std::vector<int> counts(buses.size(), 0);
  for (const Generator& gen : gens) ++counts[gen.bus];
  return counts;
}

Eigen::VectorXd GridCase::DefaultPd() const {
  Eigen::VectorXd pd(num_buses());
  for (int i = 0; i < num_buses(); ++i) pd[i] = buses[i].pd;
  return pd;
}

Eigen::VectorXd GridCase::DefaultQd() const {
  Eigen::VectorXd qd(num_buses());
  for (int i = 0; i < num_buses(); ++i) qd[i] = buses[i].qd;
  return qd;
}

namespace {

std::string BusLabel(const GridCase& grid, int index) {
  return "bus " + std::to_string(grid.buses[index].id) + " (index " +
         std::to_string(index) + ")";
}

bool AllFinite(std::initializer_list<double> values) {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace

void ValidateCase(const GridCase& grid) {
  if (!(grid.base_mva > 0.0) || !std::isfinite(grid.base_mva)) {
    throw ValidationError("base_mva must be positive, got " +
                          std::to_string(grid.base_mva));
  }
  if (grid.buses.empty()) throw ValidationError("case has no buses");

  std::set<int> ids;
  int slack_count = 0;
  for (int i = 0; i < grid.num_buses(); ++i) {
    const Bus& bus = grid.buses[i];
    if (!ids.insert(bus.id).second) {
      throw ValidationError("duplicate bus id " + std::to_string(bus.id));
    }
    if (!AllFinite({bus.pd, bus.qd, bus.gs, bus.bs, bus.vm, bus.va})) {
      throw ValidationError(BusLabel(grid, i) + " has non-finite data");
    }
    if (!(bus.vmin < bus.vmax)) {
      throw ValidationError(BusLabel(grid, i) + " has vmin >= vmax");
    }
    if (bus.kind == BusKind::kSlack) ++slack_count;
  }
  if (slack_count != 1) {
    throw ValidationError("expected exactly one slack bus, found " +
                          std::to_string(slack_count));
  }

  for (int g = 0; g < grid.num_gens(); ++g) {
    const Generator& gen = grid.gens[g];
    const std::string label = "generator " + std::to_string(g);
    if (gen.bus < 0 || gen.bus >= grid.num_buses()) {
      throw ValidationError(label + " references a missing bus");
    }
    if (!(gen.pmin <= gen.pmax)) {
      throw ValidationError(label + " has pmin > pmax");
    }
    if (!(gen.qmin <= gen.qmax)) {
      throw ValidationError(label + " has qmin > qmax");
    }
  }

  for (int e = 0; e < grid.num_branches(); ++e) {
    const Branch& br = grid.branches[e];
    const std::string label = "branch " + std::to_string(e);
    if (br.from < 0 || br.from >= grid.num_buses() || br.to < 0 ||
        br.to >= grid.num_buses()) {
      throw ValidationError(label + " references a missing bus");
    }
    if (br.r == 0.0 && br.x == 0.0) {
      throw DegenerateImpedanceError(label + " has r = x = 0");
    }
    if (!(br.tap > 0.0)) throw ValidationError(label + " has tap <= 0");
    if (!(br.s_max >= 0.0)) throw ValidationError(label + " has s_max < 0");
    if (br.angmin > br.angmax) {
      throw ValidationError(label + " has angmin > angmax");
    }
  }
}

GridCase ToPerUnit(GridCase grid) {
  if (grid.units == Units::kPerUnit) return grid;
  if (!(grid.base_mva > 0.0)) {
    throw ValidationError("base_mva must be positive, got " +
                          std::to_string(grid.base_mva));
  }
  const double s = 1.0 / grid.base_mva;
  constexpr double kDegToRad = std::numbers::pi / 180.0;
  for (Bus& bus : grid.buses) {
    bus.pd *= s;
    bus.qd *= s;
    bus.gs *= s;
    bus.bs *= s;
    bus.va *= kDegToRad;
  }
  for (Generator& gen : grid.gens) {
    gen.pg *= s;
    gen.qg *= s;
    gen.pmin *= s;
    gen.pmax *= s;
    gen.qmin *= s;
    gen.qmax *= s;
  }
  for (Branch& br : grid.branches) {
    br.s_max *= s;
    br.angmin *= kDegToRad;
    br.angmax *= kDegToRad;
  }
  grid.units = Units::kPerUnit;
  return grid;
}

double GenerationCost(const Generator& gen, double pg_pu, double base_mva) {
  const double p = pg_pu * base_mva;
  return (gen.cost[0] * p + gen.cost[1]) * p + gen.cost[2];
}

double GenerationCostSlope(const Generator& gen, double pg_pu,
                           double base_mva) {
  const double p = pg_pu * base_mva;
  return (2.0 * gen.cost[0] * p + gen.cost[1]) * base_mva;
}

Complex SeriesAdmittance(const Branch& branch) {
  if (branch.r == 0.0 && branch.x == 0.0) {
    throw DegenerateImpedanceError("branch with r = x = 0");
  }
  return 1.0 / Complex(branch.r, branch.x);
}

BranchAdmittance PiModel(const Branch& branch) {
  const Complex y = SeriesAdmittance(branch);
  const Complex charging(0.0, branch.b_sh / 2.0);
  const double t = branch.tap;
  return {.yff = (y + charging) / (t * t),
          .yft = -y / t,
          .ytf = -y / t,
          .ytt = y + charging};
}

AdmittanceMatrix BuildYbus(const GridCase& grid) {
  const int n = grid.num_buses();
  std::vector<Eigen::Triplet<Complex>> entries;
  entries.reserve(4 * grid.branches.size() + grid.buses.size());
  for (const Branch& br : grid.branches) {
    if (!br.in_service) continue;
    const BranchAdmittance pi = PiModel(br);
    entries.emplace_back(br.from, br.from, pi.yff);
    entries.emplace_back(br.from, br.to, pi.yft);
    entries.emplace_back(br.to, br.from, pi.ytf);
    entries.emplace_back(br.to, br.to, pi.ytt);
  }
  for (int i = 0; i < n; ++i) {
    const Bus& bus = grid.buses[i];
    if (bus.gs != 0.0 || bus.bs != 0.0) {
      entries.emplace_back(i, i, Complex(bus.gs, bus.bs));
    }
  }
  AdmittanceMatrix result;
  result.n = n;
  result.y.resize(n, n);
  result.y.setFromTriplets(entries.begin(), entries.end());
  result.y.makeCompressed();
  return result;
}

IncidenceMaps BuildIncidence(const GridCase& grid) {
  const int n = grid.num_buses();
  auto one_hot = [n](int rows, auto column_of) {
    Eigen::SparseMatrix<double> m(rows, n);
    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(rows);
    for (int r = 0; r < rows; ++r) entries.emplace_back(r, column_of(r), 1.0);
    m.setFromTriplets(entries.begin(), entries.end());
    return m;
  };
  IncidenceMaps maps;
  maps.gen_to_bus =
      one_hot(grid.num_gens(), [&](int g) { return grid.gens[g].bus; });
  maps.from_to_bus = one_hot(grid.num_branches(),
                             [&](int e) { return grid.branches[e].from; });
  maps.to_to_bus = one_hot(grid.num_branches(),
                           [&](int e) { return grid.branches[e].to; });
  return maps;
}

Network::Network(GridCase grid) : grid_(ToPerUnit(std::move(grid))) {
  ValidateCase(grid_);
  ybus_ = BuildYbus(grid_);
  incidence_ = BuildIncidence(grid_);
  slack_ = grid_.SlackBus();

  const int n = grid_.num_buses();
  bus_gens_.assign(n, {});
  for (int g = 0; g < grid_.num_gens(); ++g) {
    bus_gens_[grid_.gens[g].bus].push_back(g);
  }
  if (bus_gens_[slack_].empty()) {
    throw ValidationError("slack bus " + std::to_string(grid_.buses[slack_].id) +
                          " has no generator");
  }
  kinds_.assign(n, BusKind::kPq);
  for (int i = 0; i < n; ++i) {
    if (i == slack_) {
      kinds_[i] = BusKind::kSlack;
      gen_buses_.push_back(i);
    } else if (!bus_gens_[i].empty()) {
      kinds_[i] = BusKind::kPv;
      pv_.push_back(i);
      gen_buses_.push_back(i);
    } else {
      pq_.push_back(i);
    }
  }
}

}  // namespace opfnet
