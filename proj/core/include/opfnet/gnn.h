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

#ifndef OPFNET_GNN_H_
#define OPFNET_GNN_H_

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "opfnet/autodiff.h"
#include "opfnet/case_model.h"
#include "opfnet/params.h"
#include "opfnet/tmfe.h"

namespace opfnet {

// Column layout of node inputs and of per-node predictions.
enum NodeInput : int {
  kInPd, kInQd, kInIsGen, kInIsSlack, kInVmin, kInVmax,
  kInPmin, kInPmax, kInQmin, kInQmax, kNumNodeInputs
};
enum NodeOutput : int { kOutPg, kOutQg, kOutVm, kOutVa, kNumNodeOutputs };
constexpr int kNumEdgeInputs = 5;  // r, x, b_sh, tap, s_max

// Static graph view of one case. Every in-service branch contributes two
// directed edges (from->to at 2k, to->from at 2k+1).
struct CaseGraph {
  int num_nodes = 0;
  std::vector<int> src;
  std::vector<int> dst;
  std::vector<int> edge_branch;
  ad::Matrix edge_features;  // z-scored per column over the case's branches
  ad::Matrix node_static;  // node inputs with the case's default loads
  Eigen::VectorXd is_gen;
  Eigen::VectorXd is_slack;

  static CaseGraph FromNetwork(const Network& net);
};

// Disjoint union of `batch` copies of a case graph.
struct GraphBatch {
  int batch = 0;
  int nodes_per_graph = 0;
  int num_nodes = 0;
  ad::Matrix node_features;
  ad::Matrix edge_features;
  std::vector<int> src;
  std::vector<int> dst;
  // 1 where a prediction column is read: pg/qg at generator nodes, vm
  // everywhere, va everywhere except the slack node.
  ad::Matrix output_mask;
};

// pd[b] and qd[b] are the per-bus loads (p.u.) of graph b.
GraphBatch MakeBatch(const CaseGraph& graph,
                     std::span<const Eigen::VectorXd> pd,
                     std::span<const Eigen::VectorXd> qd);

// Adjacency normalisations for plain graph convolutions. Degrees come from
// `adjacency`; zero-degree rows get a zero inverse.
enum class AdjacencyNorm { kRandomWalk, kLaplacian, kSmoothing };
Eigen::MatrixXd AdjacencyMatrix(const GridCase& grid);
// kRandomWalk: D^-1 A. kLaplacian: I - D^-1/2 A D^-1/2.
// kSmoothing: D^-1/2 (A + I) D^-1/2.
Eigen::MatrixXd NormalizeAdjacency(const Eigen::MatrixXd& adjacency,
                                   AdjacencyNorm kind);

// Tensors of one attention layer.
struct AttentionLayer {
  int heads = 1;
  int head_dim = 1;
  bool average_heads = false;
  ad::Tensor wq, bq, wk, bk, wv, bv, we, be;
  ad::Tensor wr, br, wg;
  ad::Tensor ln_scale, ln_shift;
};

// Edge feature projection W_e e + b_e, |E| x heads*head_dim.
ad::Tensor ProjectEdges(const AttentionLayer& layer, const ad::Tensor& edge_features);
// |E| x heads attention, normalised over each destination's in-edges.
ad::Tensor AttentionScores(const AttentionLayer& layer, const ad::Tensor& v,
                           const ad::Tensor& edge_proj, std::span<const int> src,
                           std::span<const int> dst, int num_nodes);
// Aggregated messages, heads concatenated or averaged.
ad::Tensor MessageAggregate(const AttentionLayer& layer, const ad::Tensor& v,
                            const ad::Tensor& edge_proj, const ad::Tensor& attention,
                            std::span<const int> src, std::span<const int> dst,
                            int num_nodes);
struct GateOutput {
  ad::Tensor out;
  ad::Tensor gate;  // n x 1
};
GateOutput GatedResidual(const AttentionLayer& layer, const ad::Tensor& v_hat,
                         const ad::Tensor& v);
// h W + b, masked by `mask`.
ad::Tensor HeadProject(const ad::Tensor& h, const ad::Tensor& w,
                       const ad::Tensor& b, const ad::Matrix& mask);

struct ModelConfig {
  int layers = 8;
  int hidden = 24;
  int heads = 4;
  bool tmfe = true;
  TmfeConfig tmfe_config;
};

struct ModelOutput {
  std::vector<ad::Tensor> layers;  // per-layer predictions, last = final
  std::vector<ad::Tensor> attention;
  std::vector<ad::Tensor> gates;
  const ad::Tensor& prediction() const { return layers.back(); }
};

class GraphTransformer {
 public:
  GraphTransformer(const ModelConfig& config, const GridCase& grid,
                   std::uint64_t seed);

  ModelOutput Forward(const BoundParameters& params, const ad::Tensor& node_features,
                      const GraphBatch& batch) const;
  ModelOutput Forward(ad::Tape& tape, const BoundParameters& params,
                      const GraphBatch& batch) const;
  // Final predictions without gradients.
  ad::Matrix Predict(const GraphBatch& batch) const;

  const ModelConfig& config() const { return config_; }
  const NodeOrdering& ordering() const { return ordering_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  AttentionLayer Layer(const BoundParameters& params, int l) const;

 private:
  struct LayerHandles {
    int wq, bq, wk, bk, wv, bv, we, be, wr, br, wg, ln_scale, ln_shift;
    int head_w, head_b;
    int heads, head_dim;
    bool average;
  };

  ModelConfig config_;
  ParameterStore store_;
  NodeOrdering ordering_;
  TemporalExtractor tmfe_;
  int embed_w_ = -1;
  int embed_b_ = -1;
  std::vector<LayerHandles> layers_;
  int out1_w_ = -1, out1_b_ = -1, out2_w_ = -1, out2_b_ = -1;
};

}  // namespace opfnet

#endif  // OPFNET_GNN_H_
