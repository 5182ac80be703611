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

#include "opfnet/physics_loss.h"

#include <cmath>
#include <string>

#include "opfnet/error.h"
#include "opfnet/gnn.h"

namespace opfnet {
namespace {

using ad::Matrix;
using ad::Tensor;

std::vector<int> Tile(const std::vector<int>& index, int stride, int batch) {
  std::vector<int> out(index.size() * batch);
  for (int b = 0; b < batch; ++b) {
    for (size_t k = 0; k < index.size(); ++k) out[b * index.size() + k] = b * stride + index[k];
  }
  return out;
}

Tensor TiledConstant(ad::Tape& tape, const Matrix& column, int batch) {
  return tape.Constant(column.replicate(batch, 1));
}

Tensor StackedConstant(ad::Tape& tape, const Eigen::VectorXd& v, int batch) {
  Matrix col = v;
  return tape.Constant(col.replicate(batch, 1));
}

void CheckPrediction(const Tensor& prediction, int nodes, int batch) {
  if (prediction.rows() != static_cast<Eigen::Index>(nodes) * batch ||
      prediction.cols() != kNumNodeOutputs) {
    throw ShapeError("physics loss: prediction shape does not match the batch");
  }
}

}  // namespace

PhysicsModel::PhysicsModel(const Network& net) : num_nodes_(net.num_buses()) {
  const GridCase& grid = net.grid();
  std::vector<BranchAdmittance> pis;
  for (const Branch& br : grid.branches) {
    if (!br.in_service) continue;
    from_.push_back(br.from);
    to_.push_back(br.to);
    s_max_.push_back(br.s_max);
    pis.push_back(PiModel(br));
  }
  const Eigen::Index m = static_cast<Eigen::Index>(pis.size());
  for (Matrix* col : {&gff_, &bff_, &gft_, &bft_, &gtf_, &btf_, &gtt_, &btt_}) {
    col->resize(m, 1);
  }
  for (Eigen::Index e = 0; e < m; ++e) {
    gff_(e, 0) = pis[e].yff.real();
    bff_(e, 0) = pis[e].yff.imag();
    gft_(e, 0) = pis[e].yft.real();
    bft_(e, 0) = pis[e].yft.imag();
    gtf_(e, 0) = pis[e].ytf.real();
    btf_(e, 0) = pis[e].ytf.imag();
    gtt_(e, 0) = pis[e].ytt.real();
    btt_(e, 0) = pis[e].ytt.imag();
  }
  shunt_g_.resize(num_nodes_, 1);
  shunt_b_.resize(num_nodes_, 1);
  for (int i = 0; i < num_nodes_; ++i) {
    shunt_g_(i, 0) = grid.buses[i].gs;
    shunt_b_(i, 0) = grid.buses[i].bs;
  }
}

PhysicsModel::Flows PhysicsModel::BranchFlows(const Tensor& prediction,
                                              int batch) const {
  CheckPrediction(prediction, num_nodes_, batch);
  ad::Tape& tape = *prediction.tape();
  const std::vector<int> from = Tile(from_, num_nodes_, batch);
  const std::vector<int> to = Tile(to_, num_nodes_, batch);
  const Tensor vm = ad::ColumnSlice(prediction, kOutVm, 1);
  const Tensor va = ad::ColumnSlice(prediction, kOutVa, 1);
  const Tensor vf = ad::GatherRows(vm, from);
  const Tensor vt = ad::GatherRows(vm, to);
  const Tensor delta = ad::Sub(ad::GatherRows(va, from), ad::GatherRows(va, to));
  const Tensor c = ad::Cos(delta);
  const Tensor s = ad::Sin(delta);
  const Tensor vv = ad::Mul(vf, vt);
  const Tensor vf2 = ad::Square(vf);
  const Tensor vt2 = ad::Square(vt);
  auto k = [&](const Matrix& m) { return TiledConstant(tape, m, batch); };
  const Tensor gff = k(gff_), bff = k(bff_), gft = k(gft_), bft = k(bft_);
  const Tensor gtf = k(gtf_), btf = k(btf_), gtt = k(gtt_), btt = k(btt_);

  // S_f = vf^2 conj(yff) + vf vt conj(yft) e^{j delta}, S_t likewise with
  // -delta.
  Flows f;
  f.p_from = ad::Add(ad::Mul(vf2, gff),
                     ad::Mul(vv, ad::Add(ad::Mul(c, gft), ad::Mul(s, bft))));
  f.q_from = ad::Sub(ad::Mul(vv, ad::Sub(ad::Mul(s, gft), ad::Mul(c, bft))),
                     ad::Mul(vf2, bff));
  f.p_to = ad::Add(ad::Mul(vt2, gtt),
                   ad::Mul(vv, ad::Sub(ad::Mul(c, gtf), ad::Mul(s, btf))));
  f.q_to = ad::Sub(ad::Scale(ad::Mul(vv, ad::Add(ad::Mul(s, gtf), ad::Mul(c, btf))), -1.0),
                   ad::Mul(vt2, btt));
  return f;
}

PhysicsModel::Residuals PhysicsModel::NodalResiduals(const Tensor& prediction,
                                                     const Matrix& pd,
                                                     const Matrix& qd,
                                                     int batch) const {
  CheckPrediction(prediction, num_nodes_, batch);
  const int rows = num_nodes_ * batch;
  if (pd.rows() != rows || qd.rows() != rows || pd.cols() != 1 || qd.cols() != 1) {
    throw ShapeError("physics loss: load columns do not match the batch");
  }
  ad::Tape& tape = *prediction.tape();
  const Flows flows = BranchFlows(prediction, batch);
  const std::vector<int> from = Tile(from_, num_nodes_, batch);
  const std::vector<int> to = Tile(to_, num_nodes_, batch);
  const Tensor vm2 = ad::Square(ad::ColumnSlice(prediction, kOutVm, 1));
  const Tensor p_inj =
      ad::Add(ad::Add(ad::ScatterAddRows(flows.p_from, from, rows),
                      ad::ScatterAddRows(flows.p_to, to, rows)),
              ad::Mul(vm2, TiledConstant(tape, shunt_g_, batch)));
  const Tensor q_inj =
      ad::Sub(ad::Add(ad::ScatterAddRows(flows.q_from, from, rows),
                      ad::ScatterAddRows(flows.q_to, to, rows)),
              ad::Mul(vm2, TiledConstant(tape, shunt_b_, batch)));
  Residuals r;
  r.p = ad::Sub(ad::Sub(ad::ColumnSlice(prediction, kOutPg, 1), tape.Constant(pd)),
                p_inj);
  r.q = ad::Sub(ad::Sub(ad::ColumnSlice(prediction, kOutQg, 1), tape.Constant(qd)),
                q_inj);
  return r;
}

std::vector<int> PhysicsModel::RatedRows(int batch) const {
  std::vector<int> rated;
  for (int e = 0; e < num_branches(); ++e) {
    if (s_max_[e] > 0.0) rated.push_back(e);
  }
  return Tile(rated, num_branches(), batch);
}

Matrix NodeTargets(const Network& net, const DispatchState& state) {
  CheckDispatchShape(net, state);
  Matrix t = Matrix::Zero(net.num_buses(), kNumNodeOutputs);
  for (int g = 0; g < net.num_gens(); ++g) {
    const int bus = net.grid().gens[g].bus;
    t(bus, kOutPg) += state.pg[g];
    t(bus, kOutQg) += state.qg[g];
  }
  t.col(kOutVm) = state.vm;
  t.col(kOutVa) = state.va;
  return t;
}

Matrix StackColumns(std::span<const Eigen::VectorXd> parts) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.size();
  Matrix out(rows, 1);
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    out.block(offset, 0, p.size(), 1) = p;
    offset += p.size();
  }
  return out;
}

Tensor LossEquality(const PhysicsModel::Residuals& residuals, int batch,
                    const Eigen::VectorXd* slack) {
  const Tensor both[] = {residuals.p, residuals.q};
  Tensor stacked = ad::Abs(ad::Concat(both));
  if (slack && slack->size() > 0 && slack->cwiseAbs().maxCoeff() > 0.0) {
    ad::Tape& tape = *stacked.tape();
    const Tensor z = StackedConstant(tape, *slack, batch);
    const Tensor zz[] = {z, z};
    stacked = ad::Relu(ad::Sub(stacked, ad::Concat(zz)));
  }
  return ad::Mean(stacked);
}

InequalityParts LossInequality(const Tensor& prediction, const BoundState& bounds,
                               int batch) {
  CheckPrediction(prediction, bounds.num_nodes(), batch);
  ad::Tape& tape = *prediction.tape();
  auto family = [&](BoundFamily f, int column) {
    const std::vector<int>& members = bounds.members(f);
    if (members.empty()) return tape.Constant(Matrix::Zero(1, 1));
    Eigen::VectorXd lo(members.size());
    Eigen::VectorXd hi(members.size());
    for (size_t k = 0; k < members.size(); ++k) {
      lo[k] = bounds.lo(f)[members[k]];
      hi[k] = bounds.hi(f)[members[k]];
    }
    const Tensor x = ad::GatherRows(ad::ColumnSlice(prediction, column, 1),
                                    Tile(members, bounds.num_nodes(), batch));
    const Tensor over = ad::Relu(ad::Sub(x, StackedConstant(tape, hi, batch)));
    const Tensor under = ad::Relu(ad::Sub(StackedConstant(tape, lo, batch), x));
    return ad::Mean(ad::Add(over, under));
  };
  InequalityParts parts;
  parts.pg = family(BoundFamily::kPg, kOutPg);
  parts.qg = family(BoundFamily::kQg, kOutQg);
  parts.vm = family(BoundFamily::kVm, kOutVm);
  parts.total = ad::Add(ad::Add(parts.pg, parts.qg), parts.vm);
  return parts;
}

Tensor LossFlow(const PhysicsModel& physics, const Tensor& prediction, int batch) {
  ad::Tape& tape = *prediction.tape();
  const std::vector<int> rows = physics.RatedRows(batch);
  if (rows.empty()) return tape.Constant(Matrix::Zero(1, 1));
  const PhysicsModel::Flows flows = physics.BranchFlows(prediction, batch);
  Eigen::VectorXd limit(rows.size() / batch);
  int k = 0;
  for (int e = 0; e < physics.num_branches(); ++e) {
    if (physics.s_max()[e] > 0.0) limit[k++] = physics.s_max()[e] * physics.s_max()[e];
  }
  const Tensor s2 = ad::Add(ad::Square(ad::GatherRows(flows.p_from, rows)),
                            ad::Square(ad::GatherRows(flows.q_from, rows)));
  return ad::Mean(ad::Relu(ad::Sub(s2, StackedConstant(tape, limit, batch))));
}

Tensor LossOpf(const Tensor& prediction, const Matrix& target, const Matrix& mask) {
  if (target.rows() != prediction.rows() || target.cols() != prediction.cols() ||
      mask.rows() != prediction.rows() || mask.cols() != prediction.cols()) {
    throw ShapeError("opf loss: target " + std::to_string(target.rows()) + "x" +
                     std::to_string(target.cols()) + " vs prediction " +
                     std::to_string(prediction.rows()) + "x" +
                     std::to_string(prediction.cols()));
  }
  ad::Tape& tape = *prediction.tape();
  const double count = mask.sum();
  if (count <= 0.0) throw ShapeError("opf loss: empty mask");
  const Tensor diff = ad::Sub(prediction, tape.Constant(target));
  return ad::Scale(ad::Sum(ad::Mul(ad::Square(diff), tape.Constant(mask))), 1.0 / count);
}

void ValidateLayerWeights(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigError("layer weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("layer weights sum to " + std::to_string(total) + ", not 1");
  }
}

std::vector<double> UniformLayerWeights(int layers) {
  return std::vector<double>(layers, 1.0 / layers);
}

Tensor LossTotal(const Tensor& l_opf, std::span<const Tensor> pinn,
                 std::span<const double> weights) {
  if (pinn.size() != weights.size()) {
    throw ConfigError("layer weight count does not match the layer losses");
  }
  ValidateLayerWeights(weights);
  Tensor total = l_opf;
  for (size_t l = 0; l < pinn.size(); ++l) {
    if (weights[l] == 0.0) continue;
    total = ad::Add(total, ad::Scale(pinn[l], weights[l]));
  }
  return total;
}

LossBreakdown HierarchicalLoss(const PhysicsModel& physics,
                               const BoundState& original,
                               const HierarchicalLossConfig& config,
                               std::span<const Tensor> layer_predictions,
                               const Matrix& pd, const Matrix& qd,
                               const Matrix& target, const Matrix& mask,
                               int batch) {
  const int layers = static_cast<int>(layer_predictions.size());
  if (layers == 0) throw ShapeError("hierarchical loss: no layer outputs");
  if (static_cast<int>(config.layer_weights.size()) != layers) {
    throw ConfigError("layer weight count does not match the layer outputs");
  }
  ValidateLayerWeights(config.layer_weights);
  BoundState bounds = original;
  bounds.Reset();
  LossBreakdown out;
  out.layers.resize(layers);
  std::vector<Tensor> pinn(layers);
  for (int l = 0; l < layers; ++l) {
    const bool last = l + 1 == layers;
    if (!last && config.layer_weights[l] == 0.0) continue;
    if (last) bounds.Reset();
    const Tensor& pred = layer_predictions[l];
    LayerLoss& layer = out.layers[l];
    layer.evaluated = true;
    const PhysicsModel::Residuals residuals =
        physics.NodalResiduals(pred, pd, qd, batch);
    const Eigen::VectorXd slack = bounds.EqualitySlack();
    layer.eq = LossEquality(residuals, batch, &slack);
    layer.ineq = LossInequality(pred, bounds, batch);
    layer.flow = LossFlow(physics, pred, batch);
    layer.pinn = ad::Add(ad::Scale(layer.eq, config.mu_eq),
                         ad::Scale(ad::Add(layer.ineq.total, layer.flow), config.mu_ineq));
    pinn[l] = layer.pinn;
    if (config.dda.enabled && !last) {
      const ViolationSets sets = ComputeViolationSets(
          pred.value(), residuals.p.value(), residuals.q.value(), bounds, batch);
      layer.ratios = ComputeRatios(sets);
      AdjustBounds(bounds, layer.ratios, config.dda);
    }
  }
  out.opf = LossOpf(layer_predictions.back(), target, mask);
  out.total = LossTotal(out.opf, pinn, config.layer_weights);
  return out;
}

}  // namespace opfnet
