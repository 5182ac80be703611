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

#ifndef OPFNET_TMFE_H_
#define OPFNET_TMFE_H_

#include <string>
#include <vector>

#include "opfnet/autodiff.h"
#include "opfnet/case_model.h"
#include "opfnet/params.h"

namespace opfnet {

struct TmfeConfig {
  double alpha = 1.0 / 3.0;  // weight of 1/G^2
  double beta = 1.0 / 3.0;   // weight of 1/B^2
  double gamma = 1.0 / 3.0;  // weight of the unit hop term
  // Min-max normalise the 1/G^2 and 1/B^2 terms over the case's branches
  // before mixing; raw mode mixes them as computed.
  bool normalize = true;
  // Stand-in for 1/G^2 or 1/B^2 when G or B is exactly zero.
  double zero_sentinel = 1e6;
  int kernel = 3;
  int conv_layers = 3;
};

// Per-branch weight; +inf for out-of-service branches. Throws ConfigError if
// a coefficient is negative or all are zero.
std::vector<double> ElectricalWeights(const GridCase& grid,
                                      const TmfeConfig& config);

struct WeightedEdge {
  int from;
  int to;
  double weight;
};

// Undirected edges of a case with finite weights.
std::vector<WeightedEdge> WeightedEdges(const GridCase& grid,
                                        const std::vector<double>& weights);

struct NodeOrdering {
  int start = 0;
  std::vector<int> order;         // order[k] = node at sequence position k
  std::vector<int> position;      // inverse of order
  std::vector<double> distances;  // per node, +inf when unreachable
};

// Shortest paths from `start`; nodes sorted by distance with ties broken by
// index and unreachable nodes last by index.
NodeOrdering DijkstraOrder(int num_nodes, const std::vector<WeightedEdge>& edges,
                           int start);
// Ordering of a case from its slack bus.
NodeOrdering CaseOrdering(const GridCase& grid, const TmfeConfig& config);

ad::Matrix SerializeFeatures(const ad::Matrix& features,
                             const NodeOrdering& ordering);
ad::Matrix DeserializeFeatures(const ad::Matrix& sorted,
                               const NodeOrdering& ordering);

std::string OrderingToJson(const GridCase& grid, const NodeOrdering& ordering);

// Three relu conv layers over the ordered node sequence, merged back into
// the node features as a residual.
class TemporalExtractor {
 public:
  TemporalExtractor() = default;
  TemporalExtractor(ParameterStore& store, int channels,
                    const TmfeConfig& config, Rng& rng);

  // `sorted` stacks per-graph sequences of `sequence_length` rows.
  ad::Tensor Convolve(const BoundParameters& params, const ad::Tensor& sorted,
                      int sequence_length) const;
  // h0 stacks `batch` graphs in original node order.
  ad::Tensor Forward(const BoundParameters& params, const ad::Tensor& h0,
                     const NodeOrdering& ordering, int batch) const;

  static constexpr const char* kPrefix = "tmfe.";

 private:
  int kernel_ = 3;
  std::vector<int> weights_;
  std::vector<int> biases_;
};

}  // namespace opfnet

#endif  // OPFNET_TMFE_H_
