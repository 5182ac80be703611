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

#include "opfnet/train.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "json.hpp"
#include "opfnet/case_io.h"
#include "opfnet/error.h"

namespace opfnet {
namespace {

using nlohmann::json;
using ad::Matrix;

constexpr std::uint64_t kInitStream = 0x2545f4914f6cdd1dULL;
constexpr std::uint64_t kShuffleStream = 0x9fb21c651e98df25ULL;

std::string Num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Reads `key` from `obj` into `out` when present, tracking consumed keys.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(Where("") + " must be an object");
  }
  ~ObjectReader() = default;

  template <typename T>
  void Get(const char* key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(Where(key) + " has the wrong type");
    }
  }
  const json* Child(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }
  std::string Where(const std::string& key) const {
    return path_.empty() ? key : (key.empty() ? path_ : path_ + "." + key);
  }
  void Finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + Where(it.key()) + "'");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

void ReadConfig(const json& j, TrainConfig& c) {
  ObjectReader r(j, "");
  r.Get("case", c.case_name);
  r.Get("dataset", c.dataset);
  r.Get("output_dir", c.output_dir);
  r.Get("samples", c.samples);
  r.Get("batch_size", c.batch_size);
  r.Get("learning_rate", c.learning_rate);
  r.Get("epochs", c.epochs);
  r.Get("lr_decay", c.lr_decay);
  r.Get("optimizer", c.optimizer);
  r.Get("seed", c.seed);
  r.Get("checkpoint_every", c.checkpoint_every);
  if (const json* a = r.Child("adam")) {
    ObjectReader s(*a, "adam");
    s.Get("beta1", c.adam_beta1);
    s.Get("beta2", c.adam_beta2);
    s.Get("eps", c.adam_eps);
    s.Finish();
  }
  if (const json* m = r.Child("model")) {
    ObjectReader s(*m, "model");
    s.Get("layers", c.model.layers);
    s.Get("hidden", c.model.hidden);
    s.Get("heads", c.model.heads);
    s.Finish();
  }
  if (const json* t = r.Child("tmfe")) {
    ObjectReader s(*t, "tmfe");
    s.Get("enabled", c.model.tmfe);
    s.Get("kernel", c.model.tmfe_config.kernel);
    s.Get("conv_layers", c.model.tmfe_config.conv_layers);
    s.Get("alpha", c.model.tmfe_config.alpha);
    s.Get("beta", c.model.tmfe_config.beta);
    s.Get("gamma", c.model.tmfe_config.gamma);
    s.Get("normalize", c.model.tmfe_config.normalize);
    s.Get("zero_sentinel", c.model.tmfe_config.zero_sentinel);
    s.Finish();
  }
  if (const json* d = r.Child("dda")) {
    ObjectReader s(*d, "dda");
    s.Get("enabled", c.dda.enabled);
    s.Get("relax_cap", c.dda.relax_cap);
    s.Get("eq_tolerance", c.dda.eq_tolerance);
    s.Get("literal_rule", c.dda.literal_rule);
    s.Finish();
  }
  if (const json* l = r.Child("loss")) {
    ObjectReader s(*l, "loss");
    s.Get("hierarchical", c.hierarchical);
    s.Get("layer_weights", c.layer_weights);
    s.Get("mu_g", c.penalty.mu_g);
    s.Get("mu_h", c.penalty.mu_h);
    s.Get("beta_g", c.penalty.beta_g);
    s.Get("beta_h", c.penalty.beta_h);
    s.Get("mu_max", c.penalty.mu_max);
    s.Finish();
  }
  if (const json* e = r.Child("eval")) {
    ObjectReader s(*e, "eval");
    s.Get("tol", c.tol);
    s.Get("tau", c.tau);
    s.Finish();
  }
  r.Finish();
}

json ConfigJson(const TrainConfig& c) {
  const TmfeConfig& t = c.model.tmfe_config;
  return {
      {"case", c.case_name},
      {"dataset", c.dataset},
      {"output_dir", c.output_dir},
      {"samples", c.samples},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"epochs", c.epochs},
      {"lr_decay", c.lr_decay},
      {"optimizer", c.optimizer},
      {"adam", {{"beta1", c.adam_beta1}, {"beta2", c.adam_beta2}, {"eps", c.adam_eps}}},
      {"model", {{"layers", c.model.layers}, {"hidden", c.model.hidden}, {"heads", c.model.heads}}},
      {"tmfe",
       {{"enabled", c.model.tmfe},
        {"kernel", t.kernel},
        {"conv_layers", t.conv_layers},
        {"alpha", t.alpha},
        {"beta", t.beta},
        {"gamma", t.gamma},
        {"normalize", t.normalize},
        {"zero_sentinel", t.zero_sentinel}}},
      {"dda",
       {{"enabled", c.dda.enabled},
        {"relax_cap", c.dda.relax_cap},
        {"eq_tolerance", c.dda.eq_tolerance},
        {"literal_rule", c.dda.literal_rule}}},
      {"loss",
       {{"hierarchical", c.hierarchical},
        {"layer_weights", c.layer_weights},
        {"mu_g", c.penalty.mu_g},
        {"mu_h", c.penalty.mu_h},
        {"beta_g", c.penalty.beta_g},
        {"beta_h", c.penalty.beta_h},
        {"mu_max", c.penalty.mu_max}}},
      {"seed", c.seed},
      {"eval", {{"tol", c.tol}, {"tau", c.tau}}},
      {"checkpoint_every", c.checkpoint_every},
  };
}

}  // namespace

std::vector<double> TrainConfig::EffectiveLayerWeights() const {
  if (!hierarchical) {
    std::vector<double> w(model.layers, 0.0);
    w.back() = 1.0;
    return w;
  }
  if (layer_weights.empty()) return UniformLayerWeights(model.layers);
  return layer_weights;
}

void TrainConfig::Validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (optimizer != "sgd" && optimizer != "adam") {
    throw ConfigError("optimizer must be 'sgd' or 'adam', got '" + optimizer + "'");
  }
  if (model.layers < 1) throw ConfigError("model.layers must be at least 1");
  if (!layer_weights.empty() &&
      static_cast<int>(layer_weights.size()) != model.layers) {
    throw ConfigError("loss.layer_weights needs one entry per layer");
  }
  ValidateLayerWeights(EffectiveLayerWeights());
  if (dda.relax_cap < 0.0) throw ConfigError("dda.relax_cap must be non-negative");
  if (tol < 0.0 || tau < 0.0) throw ConfigError("eval tolerances must be non-negative");
}

TrainConfig ParseTrainConfig(std::string_view json_text) {
  TrainConfig c;
  MergeTrainConfig(c, json_text);
  return c;
}

void MergeTrainConfig(TrainConfig& config, std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ReadConfig(j, config);
}

std::string TrainConfigToJson(const TrainConfig& config) {
  return ConfigJson(config).dump(2) + "\n";
}

std::string ArchitectureHash(const TrainConfig& config, const std::string& case_hash) {
  const json j = {{"case_hash", case_hash},
                  {"model", ConfigJson(config)["model"]},
                  {"tmfe", ConfigJson(config)["tmfe"]}};
  return HexDigest(Fnv1a64(j.dump()));
}

void Optimizer::Restore(std::vector<ad::Matrix> state, long long steps) {
  if (!state.empty()) throw CheckpointError("optimizer state does not match sgd");
  steps_ = steps;
}

void SgdOptimizer::Step(ParameterStore& params, const std::vector<Matrix>& grads,
                        double lr) {
  for (int i = 0; i < params.size(); ++i) params.value(i) -= lr * grads[i];
  ++steps_;
}

void AdamOptimizer::Step(ParameterStore& params, const std::vector<Matrix>& grads,
                         double lr) {
  if (m_.empty()) {
    for (int i = 0; i < params.size(); ++i) {
      m_.push_back(Matrix::Zero(params.value(i).rows(), params.value(i).cols()));
      v_.push_back(m_.back());
    }
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (int i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
    params.value(i).array() -=
        lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

std::vector<Matrix> AdamOptimizer::State() const {
  std::vector<Matrix> out = m_;
  out.insert(out.end(), v_.begin(), v_.end());
  return out;
}

void AdamOptimizer::Restore(std::vector<Matrix> state, long long steps) {
  if (state.size() % 2 != 0) throw CheckpointError("adam state has odd length");
  const size_t half = state.size() / 2;
  m_.assign(state.begin(), state.begin() + half);
  v_.assign(state.begin() + half, state.end());
  steps_ = steps;
}

std::unique_ptr<Optimizer> MakeOptimizer(const TrainConfig& config) {
  if (config.optimizer == "adam") {
    return std::make_unique<AdamOptimizer>(config.adam_beta1, config.adam_beta2,
                                           config.adam_eps);
  }
  return std::make_unique<SgdOptimizer>();
}

SampleBatch MakeSampleBatch(const Network& net, const CaseGraph& graph,
                            std::span<const LabeledSample* const> samples) {
  std::vector<Eigen::VectorXd> pd, qd;
  pd.reserve(samples.size());
  qd.reserve(samples.size());
  for (const LabeledSample* s : samples) {
    pd.push_back(s->scenario.pd);
    qd.push_back(s->scenario.qd);
  }
  SampleBatch b;
  b.graph = MakeBatch(graph, pd, qd);
  b.pd = StackColumns(pd);
  b.qd = StackColumns(qd);
  const int n = net.num_buses();
  b.target.resize(static_cast<Eigen::Index>(n) * samples.size(), kNumNodeOutputs);
  for (size_t k = 0; k < samples.size(); ++k) {
    b.target.middleRows(k * n, n) = NodeTargets(net, samples[k]->label);
  }
  return b;
}

std::string MetricsCsvHeader(int layers) {
  std::string h = "epoch,lr,mu_g,mu_h,l_total,l_opf,l_eq,l_ineq,l_flow";
  for (int l = 0; l + 1 < layers; ++l) {
    h += ",rho_above_" + std::to_string(l + 1) + ",rho_below_" + std::to_string(l + 1);
  }
  return h + "\n";
}

std::string MetricsCsvRow(const EpochMetrics& m) {
  std::string row = std::to_string(m.epoch) + "," + Num(m.lr) + "," + Num(m.mu_g) +
                    "," + Num(m.mu_h) + "," + Num(m.l_total) + "," + Num(m.l_opf) +
                    "," + Num(m.l_eq) + "," + Num(m.l_ineq) + "," + Num(m.l_flow);
  for (size_t l = 0; l < m.rho_above.size(); ++l) {
    row += "," + Num(m.rho_above[l]) + "," + Num(m.rho_below[l]);
  }
  return row + "\n";
}

Trainer::Trainer(const TrainConfig& config, const Network& net, const Dataset& dataset)
    : config_(config),
      net_(net),
      dataset_(dataset),
      graph_(CaseGraph::FromNetwork(net)),
      physics_(net),
      bounds_(BoundState::FromNetwork(net, config.dda.eq_tolerance)),
      model_(config.model, net.grid(), SplitMix64(config.seed ^ kInitStream)),
      optimizer_(MakeOptimizer(config)),
      shuffle_rng_(config.seed ^ kShuffleStream),
      mu_g_(config.penalty.mu_g),
      mu_h_(config.penalty.mu_h) {
  config_.Validate();
  const std::string case_hash = HexDigest(CaseHash(net.grid()));
  if (!dataset.manifest.case_hash.empty() && dataset.manifest.case_hash != case_hash) {
    throw Error("dataset was generated for a different case (hash " +
                dataset.manifest.case_hash + ", case " + case_hash + ")");
  }
  train_ = dataset.Split("train");
  if (train_.empty()) throw Error("training split is empty");
  config_hash_ = ArchitectureHash(config_, case_hash);
}

Trainer::BatchResult Trainer::EvaluateBatch(ad::Tape& tape,
                                            std::span<const LabeledSample* const> samples,
                                            bool with_gradients) const {
  const SampleBatch sb = MakeSampleBatch(net_, graph_, samples);
  const BoundParameters params(tape, model_.parameters(), with_gradients);
  const ModelOutput out = model_.Forward(tape, params, sb.graph);
  HierarchicalLossConfig loss_config;
  loss_config.layer_weights = config_.EffectiveLayerWeights();
  loss_config.dda = config_.dda;
  loss_config.mu_eq = mu_h_;
  loss_config.mu_ineq = mu_g_;
  BatchResult result;
  result.losses = HierarchicalLoss(physics_, bounds_, loss_config, out.layers, sb.pd,
                                   sb.qd, sb.target, sb.graph.output_mask,
                                   static_cast<int>(samples.size()));
  if (with_gradients) {
    tape.Backward(result.losses.total);
    result.gradients = params.Gradients();
  }
  return result;
}

EpochMetrics Trainer::RunEpoch() {
  const auto start = std::chrono::steady_clock::now();
  EpochMetrics m;
  m.epoch = epoch_;
  m.lr = config_.learning_rate * std::pow(config_.lr_decay, epoch_);
  m.mu_g = mu_g_;
  m.mu_h = mu_h_;
  const int layers = config_.model.layers;
  m.rho_above.assign(layers - 1, 0.0);
  m.rho_below.assign(layers - 1, 0.0);

  std::vector<const LabeledSample*> order = train_;
  shuffle_rng_.Shuffle(order);
  double seen = 0.0;
  for (size_t begin = 0; begin < order.size(); begin += config_.batch_size) {
    const size_t end = std::min(order.size(), begin + config_.batch_size);
    const std::span<const LabeledSample* const> chunk(order.data() + begin, end - begin);
    ad::Tape tape;
    BatchResult r = EvaluateBatch(tape, chunk, true);
    const double total = r.losses.total.scalar();
    if (!std::isfinite(total)) {
      SaveCheckpoint(std::filesystem::path(config_.output_dir) / "diagnostic.ckpt",
                     MakeCheckpoint("{}"));
      throw Error("non-finite training loss at epoch " + std::to_string(epoch_) +
                  ", batch starting at " + std::to_string(begin) +
                  "; diagnostic checkpoint written");
    }
    const double w = static_cast<double>(chunk.size());
    const LayerLoss& last = r.losses.layers.back();
    m.l_total += w * total;
    m.l_opf += w * r.losses.opf.scalar();
    m.l_eq += w * last.eq.scalar();
    m.l_ineq += w * last.ineq.total.scalar();
    m.l_flow += w * last.flow.scalar();
    for (int l = 0; l + 1 < layers; ++l) {
      const ViolationRatios& rho = r.losses.layers[l].ratios;
      double up = 0.0;
      double down = 0.0;
      for (int f = 0; f < kNumBoundFamilies; ++f) {
        up += rho.above[f];
        down += rho.below[f];
      }
      m.rho_above[l] += w * up / kNumBoundFamilies;
      m.rho_below[l] += w * down / kNumBoundFamilies;
    }
    seen += w;
    optimizer_->Step(model_.parameters(), r.gradients, m.lr);
  }
  m.l_total /= seen;
  m.l_opf /= seen;
  m.l_eq /= seen;
  m.l_ineq /= seen;
  m.l_flow /= seen;
  for (int l = 0; l + 1 < layers; ++l) {
    m.rho_above[l] /= seen;
    m.rho_below[l] /= seen;
  }
  mu_g_ = std::min(mu_g_ * config_.penalty.beta_g, config_.penalty.mu_max);
  mu_h_ = std::min(mu_h_ * config_.penalty.beta_h, config_.penalty.mu_max);
  ++epoch_;
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m;
}

CheckpointData Trainer::MakeCheckpoint(const std::string& metrics_json) const {
  CheckpointData data;
  data.config_json = TrainConfigToJson(config_);
  data.config_hash = config_hash_;
  data.epoch = epoch_;
  data.parameters = model_.parameters();
  data.optimizer_state = optimizer_->State();
  data.optimizer_steps = optimizer_->steps();
  data.metrics_json = metrics_json;
  return data;
}

std::vector<EpochMetrics> Trainer::Train(
    const std::function<void(const EpochMetrics&)>& on_epoch) {
  const std::filesystem::path dir(config_.output_dir);
  std::filesystem::create_directories(dir);
  {
    std::ofstream cfg(dir / "config.json", std::ios::binary | std::ios::trunc);
    cfg << TrainConfigToJson(config_);
  }
  std::ofstream metrics(dir / "metrics.csv", std::ios::binary | std::ios::trunc);
  std::ofstream timing(dir / "timing.csv", std::ios::binary | std::ios::trunc);
  if (!metrics || !timing) throw Error("cannot write metrics under " + dir.string());
  metrics << MetricsCsvHeader(config_.model.layers);
  timing << "epoch,seconds\n";
  std::vector<EpochMetrics> history;
  for (int e = 0; e < config_.epochs; ++e) {
    EpochMetrics m = RunEpoch();
    metrics << MetricsCsvRow(m);
    metrics.flush();
    timing << m.epoch << "," << Num(m.seconds) << "\n";
    if (on_epoch) on_epoch(m);
    history.push_back(std::move(m));
    if (config_.checkpoint_every > 0 && epoch_ % config_.checkpoint_every == 0 &&
        epoch_ < config_.epochs) {
      SaveCheckpoint(dir / ("epoch" + std::to_string(epoch_) + ".ckpt"),
                     MakeCheckpoint("{}"));
    }
  }
  json snapshot = json::object();
  if (!history.empty()) {
    const EpochMetrics& last = history.back();
    snapshot = {{"epoch", last.epoch},
                {"l_total", last.l_total},
                {"l_opf", last.l_opf},
                {"l_eq", last.l_eq},
                {"l_ineq", last.l_ineq},
                {"l_flow", last.l_flow}};
  }
  SaveCheckpoint(dir / "model.ckpt", MakeCheckpoint(snapshot.dump()));
  return history;
}

GraphTransformer LoadModel(const CheckpointData& checkpoint, const Network& net,
                           TrainConfig* config_out, const std::string& expected_hash) {
  if (!expected_hash.empty() && expected_hash != checkpoint.config_hash) {
    throw CheckpointError("checkpoint config hash " + checkpoint.config_hash +
                          " does not match the requested configuration (" +
                          expected_hash + ")");
  }
  const TrainConfig config = ParseTrainConfig(checkpoint.config_json);
  const std::string actual = ArchitectureHash(config, HexDigest(CaseHash(net.grid())));
  if (actual != checkpoint.config_hash) {
    throw CheckpointError("checkpoint was trained on a different case or architecture");
  }
  GraphTransformer model(config.model, net.grid(), SplitMix64(config.seed ^ kInitStream));
  const ParameterStore& stored = checkpoint.parameters;
  ParameterStore& params = model.parameters();
  if (stored.size() != params.size()) {
    throw CheckpointError("checkpoint parameter count does not match the model");
  }
  for (int i = 0; i < params.size(); ++i) {
    if (stored.name(i) != params.name(i) ||
        stored.value(i).rows() != params.value(i).rows() ||
        stored.value(i).cols() != params.value(i).cols()) {
      throw CheckpointError("checkpoint parameter '" + stored.name(i) +
                            "' does not match the model layout");
    }
    params.value(i) = stored.value(i);
  }
  if (config_out) *config_out = config;
  return model;
}

namespace {

// Splits a node total among generators: lo + (total - sum lo) * range share,
// equal shares when the ranges are not finite or sum to zero (the rule the
// oracle uses for reactive power).
void SplitAmongGenerators(const std::vector<int>& gens, double total,
                          const std::vector<double>& lo, const std::vector<double>& hi,
                          Eigen::VectorXd& out) {
  if (gens.size() == 1) {
    out[gens.front()] = total;
    return;
  }
  double lo_sum = 0.0;
  double range_sum = 0.0;
  bool finite = true;
  for (int g : gens) {
    lo_sum += lo[g];
    range_sum += hi[g] - lo[g];
    finite = finite && std::isfinite(hi[g] - lo[g]);
  }
  for (int g : gens) {
    out[g] = finite && range_sum > 0.0
                 ? lo[g] + (total - lo_sum) * (hi[g] - lo[g]) / range_sum
                 : total / static_cast<double>(gens.size());
  }
}

}  // namespace

DispatchState PredictionToDispatch(const Network& net, const Matrix& node_prediction) {
  const int n = net.num_buses();
  if (node_prediction.rows() != n || node_prediction.cols() != kNumNodeOutputs) {
    throw ShapeError("prediction does not match the case");
  }
  const GridCase& grid = net.grid();
  std::vector<double> pmin, pmax, qmin, qmax;
  for (const Generator& g : grid.gens) {
    pmin.push_back(g.pmin);
    pmax.push_back(g.pmax);
    qmin.push_back(g.qmin);
    qmax.push_back(g.qmax);
  }
  DispatchState s;
  s.vm = node_prediction.col(kOutVm);
  s.va = node_prediction.col(kOutVa);
  s.pg = Eigen::VectorXd::Zero(net.num_gens());
  s.qg = Eigen::VectorXd::Zero(net.num_gens());
  for (int i = 0; i < n; ++i) {
    const auto& gens = net.bus_generators()[i];
    if (gens.empty()) continue;
    SplitAmongGenerators(gens, node_prediction(i, kOutPg), pmin, pmax, s.pg);
    SplitAmongGenerators(gens, node_prediction(i, kOutQg), qmin, qmax, s.qg);
  }
  return s;
}

EvalReport EvaluatePredictions(const Network& net,
                               std::span<const LabeledSample* const> samples,
                               const std::vector<Matrix>& predictions,
                               const EvalOptions& options) {
  if (samples.empty()) throw Error("evaluation split is empty");
  if (predictions.size() != samples.size()) {
    throw ShapeError("prediction count does not match the sample count");
  }
  const int n = net.num_buses();
  const BoundState bounds = BoundState::FromNetwork(net);
  std::array<double, kNumNodeOutputs> abs_sum{};
  std::array<double, kNumNodeOutputs> hits{};
  std::array<double, kNumNodeOutputs> count{};
  std::vector<ConstraintReport> reports;
  reports.reserve(samples.size());
  EvalReport report;
  report.samples = static_cast<int>(samples.size());
  double depth = 0.0;
  for (size_t k = 0; k < samples.size(); ++k) {
    const LabeledSample& s = *samples[k];
    const Matrix target = NodeTargets(net, s.label);
    const Matrix& pred = predictions[k];
    for (int i = 0; i < n; ++i) {
      const bool gen = !net.bus_generators()[i].empty();
      for (int c = 0; c < kNumNodeOutputs; ++c) {
        if ((c == kOutPg || c == kOutQg) && !gen) continue;
        double width = 2.0 * std::numbers::pi;
        if (c == kOutPg) width = bounds.original_hi(BoundFamily::kPg)[i] - bounds.original_lo(BoundFamily::kPg)[i];
        if (c == kOutQg) width = bounds.original_hi(BoundFamily::kQg)[i] - bounds.original_lo(BoundFamily::kQg)[i];
        if (c == kOutVm) width = bounds.original_hi(BoundFamily::kVm)[i] - bounds.original_lo(BoundFamily::kVm)[i];
        const double err = std::abs(pred(i, c) - target(i, c));
        abs_sum[c] += err;
        count[c] += 1.0;
        if (err <= options.tau * width) hits[c] += 1.0;
      }
    }
    const DispatchState state = PredictionToDispatch(net, pred);
    reports.push_back(EvaluateConstraints(net, state, s.scenario.pd, s.scenario.qd, options.tol));
    const ConstraintReport& r = reports.back();
    for (const FamilyTally& family : r.families) {
      for (double d : family.depths) depth += d;
    }
    report.max_abs_mismatch = std::max(
        {report.max_abs_mismatch, r.mismatch_p.cwiseAbs().maxCoeff(),
         r.mismatch_q.cwiseAbs().maxCoeff()});
  }
  for (int c = 0; c < kNumNodeOutputs; ++c) {
    report.mae[c] = count[c] > 0.0 ? abs_sum[c] / count[c] : 0.0;
    report.accuracy[c] = count[c] > 0.0 ? 100.0 * hits[c] / count[c] : 100.0;
  }
  report.feasibility = ComputeViolationMetrics(reports);
  report.total_violation_depth = depth / static_cast<double>(samples.size());
  return report;
}

EvalReport EvaluateModel(const GraphTransformer& model, const Network& net,
                         std::span<const LabeledSample* const> samples,
                         const EvalOptions& options) {
  if (samples.empty()) throw Error("evaluation split is empty");
  const auto start = std::chrono::steady_clock::now();
  const CaseGraph graph = CaseGraph::FromNetwork(net);
  const int n = net.num_buses();
  std::vector<Matrix> predictions;
  predictions.reserve(samples.size());
  const size_t step = static_cast<size_t>(std::max(1, options.batch_size));
  for (size_t begin = 0; begin < samples.size(); begin += step) {
    const size_t end = std::min(samples.size(), begin + step);
    const SampleBatch sb = MakeSampleBatch(net, graph, samples.subspan(begin, end - begin));
    const Matrix pred = model.Predict(sb.graph);
    for (size_t k = 0; k < end - begin; ++k) predictions.push_back(pred.middleRows(k * n, n));
  }
  EvalReport report = EvaluatePredictions(net, samples, predictions, options);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::string EvalReportJson(const EvalReport& r) {
  static const char* kVars[] = {"pg", "qg", "vm", "va"};
  json j;
  j["samples"] = r.samples;
  for (int c = 0; c < kNumNodeOutputs; ++c) {
    j["mae"][kVars[c]] = r.mae[c];
    j["accuracy_pct"][kVars[c]] = r.accuracy[c];
  }
  for (int f = 0; f < kNumConstraintFamilies; ++f) {
    const std::string name(ConstraintFamilyName(static_cast<ConstraintFamily>(f)));
    j["kappa_pct"][name] = r.feasibility.kappa[f];
    j["delta"][name] = r.feasibility.delta[f];
  }
  j["total_violation_depth"] = r.total_violation_depth;
  j["max_abs_mismatch"] = r.max_abs_mismatch;
  j["seconds"] = r.seconds;
  j["reference_full_scale_pg_mae"] = kFullScalePgMaeReference;
  return j.dump(2) + "\n";
}

std::string EvalReportCsv(const EvalReport& r) {
  std::string out = "metric,variable,value\n";
  static const char* kVars[] = {"pg", "qg", "vm", "va"};
  for (int c = 0; c < kNumNodeOutputs; ++c) {
    out += std::string("mae,") + kVars[c] + "," + Num(r.mae[c]) + "\n";
  }
  for (int c = 0; c < kNumNodeOutputs; ++c) {
    out += std::string("accuracy_pct,") + kVars[c] + "," + Num(r.accuracy[c]) + "\n";
  }
  for (int f = 0; f < kNumConstraintFamilies; ++f) {
    const std::string name(ConstraintFamilyName(static_cast<ConstraintFamily>(f)));
    out += "kappa_pct," + name + "," + Num(r.feasibility.kappa[f]) + "\n";
    out += "delta," + name + "," + Num(r.feasibility.delta[f]) + "\n";
  }
  out += "total_violation_depth,all," + Num(r.total_violation_depth) + "\n";
  out += "max_abs_mismatch,all," + Num(r.max_abs_mismatch) + "\n";
  return out;
}

std::string EvalReportText(const EvalReport& r) {
  std::ostringstream os;
  char line[160];
  os << "samples: " << r.samples << "\n";
  os << "variable        MAE   accuracy%\n";
  static const char* kVars[] = {"Pg", "Qg", "V", "theta"};
  for (int c = 0; c < kNumNodeOutputs; ++c) {
    std::snprintf(line, sizeof(line), "%-8s %12.6f %10.2f\n", kVars[c], r.mae[c],
                  r.accuracy[c]);
    os << line;
  }
  os << "family       kappa%        delta   violated/total\n";
  for (int f = 0; f < kNumConstraintFamilies; ++f) {
    const std::string name(ConstraintFamilyName(static_cast<ConstraintFamily>(f)));
    std::snprintf(line, sizeof(line), "%-10s %8.2f %12.6g %8d/%d\n", name.c_str(),
                  r.feasibility.kappa[f], r.feasibility.delta[f],
                  r.feasibility.violated[f], r.feasibility.total[f]);
    os << line;
  }
  std::snprintf(line, sizeof(line), "total violation depth per sample: %.6g\n",
                r.total_violation_depth);
  os << line;
  std::snprintf(line, sizeof(line),
                "reference: full-scale IEEE-9 training reports Pg MAE %.4f\n",
                kFullScalePgMaeReference);
  os << line;
  return os.str();
}

}  // namespace opfnet
