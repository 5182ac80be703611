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

#include "opfnet/gnn.h"

#include <cmath>
#include <string>

#include "opfnet/error.h"

namespace opfnet {
namespace {

using ad::Matrix;
using ad::Tensor;

Tensor Affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  return ad::Add(ad::MatMul(x, w), b);
}

}  // namespace

CaseGraph CaseGraph::FromNetwork(const Network& net) {
  const GridCase& grid = net.grid();
  CaseGraph g;
  g.num_nodes = net.num_buses();
  std::vector<int> branches;
  for (int e = 0; e < net.num_branches(); ++e) {
    const Branch& br = grid.branches[e];
    if (!br.in_service) continue;
    branches.push_back(e);
    g.src.push_back(br.from);
    g.dst.push_back(br.to);
    g.edge_branch.push_back(e);
    g.src.push_back(br.to);
    g.dst.push_back(br.from);
    g.edge_branch.push_back(e);
  }

  Matrix raw(static_cast<Eigen::Index>(branches.size()), kNumEdgeInputs);
  for (size_t k = 0; k < branches.size(); ++k) {
    const Branch& br = grid.branches[branches[k]];
    raw.row(k) << br.r, br.x, br.b_sh, br.tap, br.s_max;
  }
  if (raw.rows() > 0) {
    for (Eigen::Index c = 0; c < raw.cols(); ++c) {
      const double mean = raw.col(c).mean();
      const double sd =
          std::sqrt((raw.col(c).array() - mean).square().mean());
      if (sd > 0.0) {
        raw.col(c) = ((raw.col(c).array() - mean) / sd).matrix();
      } else {
        raw.col(c).setZero();
      }
    }
  }
  g.edge_features.resize(static_cast<Eigen::Index>(g.src.size()), kNumEdgeInputs);
  for (size_t k = 0; k < branches.size(); ++k) {
    g.edge_features.row(2 * k) = raw.row(k);
    g.edge_features.row(2 * k + 1) = raw.row(k);
  }

  g.node_static = Matrix::Zero(g.num_nodes, kNumNodeInputs);
  g.is_gen = Eigen::VectorXd::Zero(g.num_nodes);
  g.is_slack = Eigen::VectorXd::Zero(g.num_nodes);
  for (int i = 0; i < g.num_nodes; ++i) {
    const Bus& bus = grid.buses[i];
    g.node_static(i, kInPd) = bus.pd;
    g.node_static(i, kInQd) = bus.qd;
    g.node_static(i, kInVmin) = bus.vmin;
    g.node_static(i, kInVmax) = bus.vmax;
    if (!net.bus_generators()[i].empty()) g.is_gen[i] = 1.0;
    for (int gi : net.bus_generators()[i]) {
      const Generator& gen = grid.gens[gi];
      g.node_static(i, kInPmin) += gen.pmin;
      g.node_static(i, kInPmax) += gen.pmax;
      g.node_static(i, kInQmin) += gen.qmin;
      g.node_static(i, kInQmax) += gen.qmax;
    }
  }
  g.is_slack[net.slack_bus()] = 1.0;
  g.node_static.col(kInIsGen) = g.is_gen;
  g.node_static.col(kInIsSlack) = g.is_slack;
  return g;
}

GraphBatch MakeBatch(const CaseGraph& graph, std::span<const Eigen::VectorXd> pd,
                     std::span<const Eigen::VectorXd> qd) {
  if (pd.size() != qd.size() || pd.empty()) {
    throw ShapeError("batch: need matching, non-empty pd and qd lists");
  }
  const int n = graph.num_nodes;
  const int e = static_cast<int>(graph.src.size());
  GraphBatch b;
  b.batch = static_cast<int>(pd.size());
  b.nodes_per_graph = n;
  b.num_nodes = n * b.batch;
  b.node_features = graph.node_static.replicate(b.batch, 1);
  b.edge_features = graph.edge_features.replicate(b.batch, 1);
  b.output_mask = Matrix::Ones(b.num_nodes, kNumNodeOutputs);
  b.src.resize(static_cast<size_t>(e) * b.batch);
  b.dst.resize(b.src.size());
  for (int k = 0; k < b.batch; ++k) {
    if (pd[k].size() != n || qd[k].size() != n) {
      throw ShapeError("batch: load vector length does not match the case");
    }
    b.node_features.block(k * n, kInPd, n, 1) = pd[k];
    b.node_features.block(k * n, kInQd, n, 1) = qd[k];
    b.output_mask.block(k * n, kOutPg, n, 1) = graph.is_gen;
    b.output_mask.block(k * n, kOutQg, n, 1) = graph.is_gen;
    b.output_mask.block(k * n, kOutVa, n, 1) =
        (1.0 - graph.is_slack.array()).matrix();
    for (int j = 0; j < e; ++j) {
      b.src[k * e + j] = k * n + graph.src[j];
      b.dst[k * e + j] = k * n + graph.dst[j];
    }
  }
  return b;
}

Eigen::MatrixXd AdjacencyMatrix(const GridCase& grid) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(grid.num_buses(), grid.num_buses());
  for (const Branch& br : grid.branches) {
    if (!br.in_service || br.from == br.to) continue;
    a(br.from, br.to) = 1.0;
    a(br.to, br.from) = 1.0;
  }
  return a;
}

Eigen::MatrixXd NormalizeAdjacency(const Eigen::MatrixXd& adjacency,
                                   AdjacencyNorm kind) {
  const Eigen::Index n = adjacency.rows();
  if (adjacency.cols() != n) throw ShapeError("adjacency must be square");
  const Eigen::VectorXd degree = adjacency.rowwise().sum();
  Eigen::VectorXd inv(n);
  Eigen::VectorXd inv_sqrt(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    inv[i] = degree[i] > 0.0 ? 1.0 / degree[i] : 0.0;
    inv_sqrt[i] = degree[i] > 0.0 ? 1.0 / std::sqrt(degree[i]) : 0.0;
  }
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  switch (kind) {
    case AdjacencyNorm::kRandomWalk:
      return inv.asDiagonal() * adjacency;
    case AdjacencyNorm::kLaplacian:
      return eye - inv_sqrt.asDiagonal() * adjacency * inv_sqrt.asDiagonal();
    case AdjacencyNorm::kSmoothing:
      return inv_sqrt.asDiagonal() * (adjacency + eye) * inv_sqrt.asDiagonal();
  }
  return adjacency;
}

Tensor ProjectEdges(const AttentionLayer& layer, const Tensor& edge_features) {
  return Affine(edge_features, layer.we, layer.be);
}

Tensor AttentionScores(const AttentionLayer& layer, const Tensor& v,
                       const Tensor& edge_proj, std::span<const int> src,
                       std::span<const int> dst, int num_nodes) {
  const Tensor q = ad::GatherRows(Affine(v, layer.wq, layer.bq), dst);
  const Tensor k = ad::GatherRows(Affine(v, layer.wk, layer.bk), src);
  const Tensor raw = ad::GroupSum(ad::Mul(q, ad::Add(k, edge_proj)), layer.head_dim);
  const Tensor scaled = ad::Scale(raw, 1.0 / std::sqrt(static_cast<double>(layer.head_dim)));
  return ad::SegmentSoftmax(scaled, dst, num_nodes);
}

Tensor MessageAggregate(const AttentionLayer& layer, const Tensor& v,
                        const Tensor& edge_proj, const Tensor& attention,
                        std::span<const int> src, std::span<const int> dst,
                        int num_nodes) {
  const Tensor h = ad::GatherRows(Affine(v, layer.wv, layer.bv), src);
  const Tensor weighted = ad::Mul(ad::RepeatColumns(attention, layer.head_dim),
                                  ad::Add(h, edge_proj));
  const Tensor agg = ad::ScatterAddRows(weighted, dst, num_nodes);
  return layer.average_heads ? ad::BlockMean(agg, layer.heads) : agg;
}

GateOutput GatedResidual(const AttentionLayer& layer, const Tensor& v_hat,
                         const Tensor& v) {
  const Tensor r = Affine(v, layer.wr, layer.br);
  const Tensor parts[] = {v_hat, r, ad::Sub(v, r)};
  const Tensor gate = ad::Sigmoid(ad::MatMul(ad::Concat(parts), layer.wg));
  const Tensor mix = ad::Add(v_hat, ad::Mul(ad::Sub(r, v_hat), gate));
  const Tensor normed =
      ad::Add(ad::Mul(ad::LayerNorm(mix), layer.ln_scale), layer.ln_shift);
  return {ad::Tanhshrink(normed), gate};
}

Tensor HeadProject(const Tensor& h, const Tensor& w, const Tensor& b,
                   const Matrix& mask) {
  const Tensor raw = Affine(h, w, b);
  if (mask.rows() != raw.rows() || mask.cols() != raw.cols()) {
    throw ShapeError("head: mask shape does not match the prediction");
  }
  return ad::Mul(raw, h.tape()->Constant(mask));
}

GraphTransformer::GraphTransformer(const ModelConfig& config, const GridCase& grid,
                                   std::uint64_t seed)
    : config_(config) {
  const int d = config.hidden;
  const int c = config.heads;
  if (config.layers < 1) throw ConfigError("model needs at least one layer");
  if (d < 1 || c < 1 || d % c != 0) {
    throw ConfigError("hidden width must be a positive multiple of the head count");
  }
  Rng rng(seed);
  embed_w_ = store_.Add("embed.weight", GlorotUniform(kNumNodeInputs, d, rng));
  embed_b_ = store_.Add("embed.bias", Matrix::Zero(1, d));
  for (int l = 0; l < config.layers; ++l) {
    const bool last = l + 1 == config.layers;
    LayerHandles h;
    h.heads = c;
    h.head_dim = last ? d : d / c;
    h.average = last;
    const int width = h.heads * h.head_dim;
    const std::string p = "layer" + std::to_string(l) + ".";
    h.wq = store_.Add(p + "query.weight", GlorotUniform(d, width, rng));
    h.bq = store_.Add(p + "query.bias", Matrix::Zero(1, width));
    h.wk = store_.Add(p + "key.weight", GlorotUniform(d, width, rng));
    h.bk = store_.Add(p + "key.bias", Matrix::Zero(1, width));
    h.wv = store_.Add(p + "value.weight", GlorotUniform(d, width, rng));
    h.bv = store_.Add(p + "value.bias", Matrix::Zero(1, width));
    h.we = store_.Add(p + "edge.weight", GlorotUniform(kNumEdgeInputs, width, rng));
    h.be = store_.Add(p + "edge.bias", Matrix::Zero(1, width));
    h.wr = store_.Add(p + "skip.weight", GlorotUniform(d, d, rng));
    h.br = store_.Add(p + "skip.bias", Matrix::Zero(1, d));
    h.wg = store_.Add(p + "gate.weight", GlorotUniform(3 * d, 1, rng));
    h.ln_scale = store_.Add(p + "norm.scale", Matrix::Ones(1, d));
    h.ln_shift = store_.Add(p + "norm.shift", Matrix::Zero(1, d));
    h.head_w = store_.Add(p + "head.weight", GlorotUniform(d, kNumNodeOutputs, rng));
    Matrix bias = Matrix::Zero(1, kNumNodeOutputs);
    bias(0, kOutVm) = 1.0;
    h.head_b = store_.Add(p + "head.bias", bias);
    layers_.push_back(h);
  }
  out1_w_ = store_.Add("output1.weight", GlorotUniform(d, d, rng));
  out1_b_ = store_.Add("output1.bias", Matrix::Zero(1, d));
  out2_w_ = store_.Add("output2.weight", GlorotUniform(d, d, rng));
  out2_b_ = store_.Add("output2.bias", Matrix::Zero(1, d));

  ordering_ = CaseOrdering(grid, config.tmfe_config);
  if (config.tmfe) {
    // Separate stream so the backbone initialisation does not depend on
    // whether the extractor exists.
    Rng tmfe_rng(seed ^ 0x7f4a7c159e3779b9ULL);
    tmfe_ = TemporalExtractor(store_, d, config.tmfe_config, tmfe_rng);
  }
}

AttentionLayer GraphTransformer::Layer(const BoundParameters& params, int l) const {
  const LayerHandles& h = layers_.at(l);
  AttentionLayer layer;
  layer.heads = h.heads;
  layer.head_dim = h.head_dim;
  layer.average_heads = h.average;
  layer.wq = params[h.wq];
  layer.bq = params[h.bq];
  layer.wk = params[h.wk];
  layer.bk = params[h.bk];
  layer.wv = params[h.wv];
  layer.bv = params[h.bv];
  layer.we = params[h.we];
  layer.be = params[h.be];
  layer.wr = params[h.wr];
  layer.br = params[h.br];
  layer.wg = params[h.wg];
  layer.ln_scale = params[h.ln_scale];
  layer.ln_shift = params[h.ln_shift];
  return layer;
}

ModelOutput GraphTransformer::Forward(const BoundParameters& params,
                                      const Tensor& node_features,
                                      const GraphBatch& batch) const {
  if (node_features.rows() != batch.num_nodes ||
      node_features.cols() != kNumNodeInputs) {
    throw ShapeError("model: node features do not match the batch");
  }
  ad::Tape& tape = *node_features.tape();
  const Tensor edges = tape.Constant(batch.edge_features);
  Tensor h = Affine(node_features, params[embed_w_], params[embed_b_]);
  if (config_.tmfe) h = tmfe_.Forward(params, h, ordering_, batch.batch);

  ModelOutput out;
  for (int l = 0; l < config_.layers; ++l) {
    const AttentionLayer layer = Layer(params, l);
    const Tensor edge_proj = ProjectEdges(layer, edges);
    const Tensor attention =
        AttentionScores(layer, h, edge_proj, batch.src, batch.dst, batch.num_nodes);
    const Tensor v_hat = MessageAggregate(layer, h, edge_proj, attention, batch.src,
                                          batch.dst, batch.num_nodes);
    const GateOutput gated = GatedResidual(layer, v_hat, h);
    h = gated.out;
    out.attention.push_back(attention);
    out.gates.push_back(gated.gate);
    Tensor readout = h;
    if (l + 1 == config_.layers) {
      readout = Affine(ad::Tanhshrink(Affine(h, params[out1_w_], params[out1_b_])),
                       params[out2_w_], params[out2_b_]);
    }
    out.layers.push_back(HeadProject(readout, params[layers_[l].head_w],
                                     params[layers_[l].head_b], batch.output_mask));
  }
  return out;
}

ModelOutput GraphTransformer::Forward(ad::Tape& tape, const BoundParameters& params,
                                      const GraphBatch& batch) const {
  return Forward(params, tape.Constant(batch.node_features), batch);
}

Matrix GraphTransformer::Predict(const GraphBatch& batch) const {
  ad::Tape tape;
  const BoundParameters params(tape, store_, false);
  return Forward(tape, params, batch).prediction().value();
}

}  // namespace opfnet
