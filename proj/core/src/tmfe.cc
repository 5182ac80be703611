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

#include "opfnet/tmfe.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

#include "json.hpp"
#include "opfnet/error.h"

namespace opfnet {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void MinMax(std::vector<double>& v, const std::vector<bool>& active) {
  double lo = kInf;
  double hi = -kInf;
  for (size_t i = 0; i < v.size(); ++i) {
    if (!active[i]) continue;
    lo = std::min(lo, v[i]);
    hi = std::max(hi, v[i]);
  }
  for (size_t i = 0; i < v.size(); ++i) {
    if (!active[i]) continue;
    v[i] = hi > lo ? (v[i] - lo) / (hi - lo) : 0.0;
  }
}

std::vector<int> BatchIndex(const std::vector<int>& per_graph, int batch) {
  const int n = static_cast<int>(per_graph.size());
  std::vector<int> out(static_cast<size_t>(n) * batch);
  for (int b = 0; b < batch; ++b) {
    for (int k = 0; k < n; ++k) out[b * n + k] = b * n + per_graph[k];
  }
  return out;
}

}  // namespace

std::vector<double> ElectricalWeights(const GridCase& grid,
                                      const TmfeConfig& config) {
  if (config.alpha < 0.0 || config.beta < 0.0 || config.gamma < 0.0) {
    throw ConfigError("electrical weight coefficients must be non-negative");
  }
  if (config.alpha == 0.0 && config.beta == 0.0 && config.gamma == 0.0) {
    throw ConfigError("electrical weight coefficients are all zero");
  }
  const int m = grid.num_branches();
  std::vector<double> inv_g(m, 0.0);
  std::vector<double> inv_b(m, 0.0);
  std::vector<bool> active(m, false);
  for (int e = 0; e < m; ++e) {
    const Branch& br = grid.branches[e];
    if (!br.in_service) continue;
    active[e] = true;
    const Complex y = SeriesAdmittance(br);
    inv_g[e] = y.real() == 0.0 ? config.zero_sentinel : 1.0 / (y.real() * y.real());
    inv_b[e] = y.imag() == 0.0 ? config.zero_sentinel : 1.0 / (y.imag() * y.imag());
  }
  if (config.normalize) {
    MinMax(inv_g, active);
    MinMax(inv_b, active);
  }
  std::vector<double> w(m, kInf);
  for (int e = 0; e < m; ++e) {
    if (active[e]) w[e] = config.alpha * inv_g[e] + config.beta * inv_b[e] + config.gamma;
  }
  return w;
}

std::vector<WeightedEdge> WeightedEdges(const GridCase& grid,
                                        const std::vector<double>& weights) {
  std::vector<WeightedEdge> out;
  for (int e = 0; e < grid.num_branches(); ++e) {
    if (!std::isfinite(weights[e])) continue;
    out.push_back({grid.branches[e].from, grid.branches[e].to, weights[e]});
  }
  return out;
}

NodeOrdering DijkstraOrder(int num_nodes, const std::vector<WeightedEdge>& edges,
                           int start) {
  if (start < 0 || start >= num_nodes) {
    throw ConfigError("start node " + std::to_string(start) + " out of range");
  }
  std::vector<std::vector<std::pair<int, double>>> adj(num_nodes);
  for (const WeightedEdge& e : edges) {
    if (e.weight < 0.0) throw ConfigError("negative edge weight");
    adj[e.from].push_back({e.to, e.weight});
    adj[e.to].push_back({e.from, e.weight});
  }
  NodeOrdering out;
  out.start = start;
  out.distances.assign(num_nodes, kInf);
  out.distances[start] = 0.0;
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  queue.push({0.0, start});
  std::vector<bool> done(num_nodes, false);
  while (!queue.empty()) {
    const auto [d, u] = queue.top();
    queue.pop();
    if (done[u]) continue;
    done[u] = true;
    for (const auto& [v, w] : adj[u]) {
      if (d + w < out.distances[v]) {
        out.distances[v] = d + w;
        queue.push({out.distances[v], v});
      }
    }
  }
  out.order.resize(num_nodes);
  std::iota(out.order.begin(), out.order.end(), 0);
  // The start node leads even when zero-weight edges tie it with others.
  std::stable_sort(out.order.begin(), out.order.end(), [&](int a, int b) {
    if ((a == start) != (b == start)) return a == start;
    return out.distances[a] < out.distances[b];
  });
  out.position.resize(num_nodes);
  for (int k = 0; k < num_nodes; ++k) out.position[out.order[k]] = k;
  return out;
}

NodeOrdering CaseOrdering(const GridCase& grid, const TmfeConfig& config) {
  const std::vector<double> w = ElectricalWeights(grid, config);
  return DijkstraOrder(grid.num_buses(), WeightedEdges(grid, w), grid.SlackBus());
}

ad::Matrix SerializeFeatures(const ad::Matrix& features,
                             const NodeOrdering& ordering) {
  if (features.rows() != static_cast<Eigen::Index>(ordering.order.size())) {
    throw ShapeError("serialize: feature rows do not match the ordering");
  }
  ad::Matrix out(features.rows(), features.cols());
  for (size_t k = 0; k < ordering.order.size(); ++k) {
    out.row(k) = features.row(ordering.order[k]);
  }
  return out;
}

ad::Matrix DeserializeFeatures(const ad::Matrix& sorted,
                               const NodeOrdering& ordering) {
  if (sorted.rows() != static_cast<Eigen::Index>(ordering.order.size())) {
    throw ShapeError("deserialize: feature rows do not match the ordering");
  }
  ad::Matrix out(sorted.rows(), sorted.cols());
  for (size_t k = 0; k < ordering.order.size(); ++k) {
    out.row(ordering.order[k]) = sorted.row(k);
  }
  return out;
}

std::string OrderingToJson(const GridCase& grid, const NodeOrdering& ordering) {
  nlohmann::json j;
  j["case"] = grid.name;
  j["start_bus"] = grid.buses[ordering.start].id;
  nlohmann::json seq = nlohmann::json::array();
  for (int node : ordering.order) {
    nlohmann::json item = {{"bus", grid.buses[node].id}, {"index", node}};
    const double d = ordering.distances[node];
    item["distance"] = std::isfinite(d) ? nlohmann::json(d) : nlohmann::json(nullptr);
    seq.push_back(item);
  }
  j["sequence"] = seq;
  return j.dump(2);
}

TemporalExtractor::TemporalExtractor(ParameterStore& store, int channels,
                                     const TmfeConfig& config, Rng& rng)
    : kernel_(config.kernel) {
  if (kernel_ <= 0 || kernel_ % 2 == 0) {
    throw ConfigError("temporal conv kernel must be a positive odd number");
  }
  for (int k = 0; k < config.conv_layers; ++k) {
    const std::string base = std::string(kPrefix) + "conv" + std::to_string(k);
    weights_.push_back(store.Add(
        base + ".weight", GlorotUniform(kernel_ * channels, channels, rng)));
    biases_.push_back(store.Add(base + ".bias", ad::Matrix::Zero(1, channels)));
  }
}

ad::Tensor TemporalExtractor::Convolve(const BoundParameters& params,
                                       const ad::Tensor& sorted,
                                       int sequence_length) const {
  if (sequence_length < 1) throw ShapeError("temporal conv: empty sequence");
  ad::Tensor h = sorted;
  for (size_t k = 0; k < weights_.size(); ++k) {
    h = ad::Relu(ad::Conv1d(h, params[weights_[k]], params[biases_[k]], kernel_,
                            sequence_length));
  }
  return h;
}

ad::Tensor TemporalExtractor::Forward(const BoundParameters& params,
                                      const ad::Tensor& h0,
                                      const NodeOrdering& ordering,
                                      int batch) const {
  const int n = static_cast<int>(ordering.order.size());
  if (h0.rows() != static_cast<Eigen::Index>(n) * batch) {
    throw ShapeError("temporal extractor: feature rows do not match batch");
  }
  const std::vector<int> to_sorted = BatchIndex(ordering.order, batch);
  const std::vector<int> to_original = BatchIndex(ordering.position, batch);
  const ad::Tensor h3 = Convolve(params, ad::GatherRows(h0, to_sorted), n);
  return ad::Add(h0, ad::GatherRows(h3, to_original));
}

}  // namespace opfnet
