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

#include "opfnet/autodiff.h"

#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

#include "opfnet/error.h"

namespace opfnet::ad {
namespace {

std::string ShapeString(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

[[noreturn]] void ShapeFail(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + ShapeString(a) +
                   " and " + ShapeString(b));
}

[[noreturn]] void ShapeFail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

void RequireSameTape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.valid() || !b.valid()) ShapeFail(op, "invalid tensor handle");
  if (a.tape() != b.tape()) ShapeFail(op, "operands live on different tapes");
}

enum class Broadcast { kSame, kRow, kColumn, kScalar };

Broadcast Classify(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kSame;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::kColumn;
  ShapeFail(op, a, b);
}

// Applies f elementwise to a and b broadcast to a's shape, without
// materialising the broadcast operand.
template <typename F>
Matrix Broadcasted(const Matrix& a, const Matrix& b, Broadcast mode, F f) {
  const auto x = a.array();
  switch (mode) {
    case Broadcast::kSame:
      return Matrix(f(x, b.array()));
    case Broadcast::kRow:
      return Matrix(f(x, b.array().replicate(a.rows(), 1)));
    case Broadcast::kColumn:
      return Matrix(f(x, b.array().replicate(1, a.cols())));
    case Broadcast::kScalar:
      return Matrix(f(x, Eigen::ArrayXXd::Constant(a.rows(), a.cols(), b(0, 0))));
  }
  return a;
}

constexpr auto kPlus = [](const auto& x, const auto& y) { return x + y; };
constexpr auto kMinus = [](const auto& x, const auto& y) { return x - y; };
constexpr auto kTimes = [](const auto& x, const auto& y) { return x * y; };

// dst += sign * g reduced to dst's broadcast shape.
void AccumulateReduced(Matrix* dst, const Matrix& g, Broadcast mode, double sign) {
  switch (mode) {
    case Broadcast::kSame:
      if (sign > 0) {
        *dst += g;
      } else {
        *dst -= g;
      }
      return;
    case Broadcast::kRow:
      *dst += sign * g.colwise().sum();
      return;
    case Broadcast::kColumn:
      *dst += sign * g.rowwise().sum();
      return;
    case Broadcast::kScalar:
      (*dst)(0, 0) += sign * g.sum();
      return;
  }
}

template <typename F, typename D>
Tensor Unary(const Tensor& x, const char* op, F forward, D derivative) {
  if (!x.valid()) ShapeFail(op, "invalid tensor handle");
  Matrix y = x.value().unaryExpr(forward);
  return x.tape()->Record(
      std::move(y), {x},
      [derivative](BackwardArgs& a) {
        if (!a.in_grads[0]) return;
        const Matrix& xv = *a.in_values[0];
        for (Eigen::Index i = 0; i < xv.size(); ++i) {
          a.in_grads[0]->data()[i] += a.grad_out.data()[i] *
                                      derivative(xv.data()[i], a.out_value.data()[i]);
        }
      },
      op);
}

void CheckIndex(const char* op, std::span<const int> index, Eigen::Index limit) {
  for (int i : index) {
    if (i < 0 || i >= limit) {
      ShapeFail(op, "index " + std::to_string(i) + " out of range [0, " +
                        std::to_string(limit) + ")");
    }
  }
}

}  // namespace

const Matrix& Tensor::value() const { return tape_->value(id_); }
const Matrix& Tensor::grad() const { return tape_->grad(id_); }
bool Tensor::requires_grad() const { return tape_->requires_grad(id_); }

double Tensor::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) {
    throw ShapeError("scalar: tensor has shape " + ShapeString(v));
  }
  return v(0, 0);
}

Tensor Tape::Constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false, "constant"});
  return Tensor(this, size() - 1);
}

Tensor Tape::Variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, true, "variable"});
  return Tensor(this, size() - 1);
}

Tensor Tape::Record(Matrix value, std::vector<Tensor> inputs, BackwardRule rule,
                    std::string op) {
  Node node;
  node.value = std::move(value);
  node.op = std::move(op);
  for (const Tensor& t : inputs) {
    if (t.tape() != this) {
      throw ShapeError(node.op + ": input belongs to a different tape");
    }
    node.inputs.push_back(t.id());
    node.requires_grad = node.requires_grad || nodes_[t.id()].requires_grad;
  }
  if (node.requires_grad) node.rule = std::move(rule);
  nodes_.push_back(std::move(node));
  return Tensor(this, size() - 1);
}

void Tape::Backward(const Tensor& loss) {
  if (loss.tape() != this) throw ShapeError("backward: loss is not on this tape");
  const Matrix& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + ShapeString(lv));
  }
  for (int i = 0; i <= loss.id(); ++i) {
    Node& node = nodes_[i];
    if (node.requires_grad) {
      node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
    } else {
      node.grad.resize(0, 0);
    }
  }
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad(0, 0) = 1.0;
  for (int i = loss.id(); i >= 0; --i) {
    Node& node = nodes_[i];
    if (!node.requires_grad || !node.rule) continue;
    BackwardArgs args{node.grad, node.value, {}, {}};
    for (int in : node.inputs) {
      args.in_values.push_back(&nodes_[in].value);
      args.in_grads.push_back(nodes_[in].requires_grad ? &nodes_[in].grad
                                                       : nullptr);
    }
    node.rule(args);
  }
}

Tensor Add(const Tensor& a, const Tensor& b) {
  RequireSameTape("add", a, b);
  const Broadcast mode = Classify("add", a.value(), b.value());
  Matrix y = Broadcasted(a.value(), b.value(), mode, kPlus);
  return a.tape()->Record(
      std::move(y), {a, b},
      [mode](BackwardArgs& g) {
        if (g.in_grads[0]) *g.in_grads[0] += g.grad_out;
        if (g.in_grads[1]) AccumulateReduced(g.in_grads[1], g.grad_out, mode, 1.0);
      },
      "add");
}

Tensor Sub(const Tensor& a, const Tensor& b) {
  RequireSameTape("sub", a, b);
  const Broadcast mode = Classify("sub", a.value(), b.value());
  Matrix y = Broadcasted(a.value(), b.value(), mode, kMinus);
  return a.tape()->Record(
      std::move(y), {a, b},
      [mode](BackwardArgs& g) {
        if (g.in_grads[0]) *g.in_grads[0] += g.grad_out;
        if (g.in_grads[1]) AccumulateReduced(g.in_grads[1], g.grad_out, mode, -1.0);
      },
      "sub");
}

Tensor Mul(const Tensor& a, const Tensor& b) {
  RequireSameTape("mul", a, b);
  const Broadcast mode = Classify("mul", a.value(), b.value());
  Matrix y = Broadcasted(a.value(), b.value(), mode, kTimes);
  return a.tape()->Record(
      std::move(y), {a, b},
      [mode](BackwardArgs& g) {
        const Matrix& av = *g.in_values[0];
        const Matrix& bv = *g.in_values[1];
        if (g.in_grads[0]) {
          *g.in_grads[0] += Broadcasted(g.grad_out, bv, mode, kTimes);
        }
        if (g.in_grads[1]) {
          AccumulateReduced(g.in_grads[1], g.grad_out.cwiseProduct(av), mode, 1.0);
        }
      },
      "mul");
}

Tensor MatMul(const Tensor& a, const Tensor& b) {
  RequireSameTape("matmul", a, b);
  if (a.cols() != b.rows()) ShapeFail("matmul", a.value(), b.value());
  Matrix y = a.value() * b.value();
  return a.tape()->Record(
      std::move(y), {a, b},
      [](BackwardArgs& g) {
        if (g.in_grads[0]) {
          g.in_grads[0]->noalias() += g.grad_out * g.in_values[1]->transpose();
        }
        if (g.in_grads[1]) {
          g.in_grads[1]->noalias() += g.in_values[0]->transpose() * g.grad_out;
        }
      },
      "matmul");
}

Tensor Scale(const Tensor& a, double s) {
  return Unary(
      a, "scale", [s](double x) { return s * x; },
      [s](double, double) { return s; });
}

Tensor AddScalar(const Tensor& a, double s) {
  return Unary(
      a, "add_scalar", [s](double x) { return x + s; },
      [](double, double) { return 1.0; });
}

Tensor Relu(const Tensor& x) {
  return Unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor Sigmoid(const Tensor& x) {
  return Unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor Tanh(const Tensor& x) {
  return Unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor Tanhshrink(const Tensor& x) {
  return Unary(
      x, "tanhshrink", [](double v) { return v - std::tanh(v); },
      [](double v, double) {
        const double t = std::tanh(v);
        return t * t;
      });
}

Tensor Sin(const Tensor& x) {
  return Unary(
      x, "sin", [](double v) { return std::sin(v); },
      [](double v, double) { return std::cos(v); });
}

Tensor Cos(const Tensor& x) {
  return Unary(
      x, "cos", [](double v) { return std::cos(v); },
      [](double v, double) { return -std::sin(v); });
}

Tensor Square(const Tensor& x) {
  return Unary(
      x, "square", [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Tensor Abs(const Tensor& x) {
  return Unary(
      x, "abs", [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor Sum(const Tensor& x) {
  if (!x.valid()) ShapeFail("sum", "invalid tensor handle");
  return x.tape()->Record(
      Matrix::Constant(1, 1, x.value().sum()), {x},
      [](BackwardArgs& g) {
        if (g.in_grads[0]) g.in_grads[0]->array() += g.grad_out(0, 0);
      },
      "sum");
}

Tensor Mean(const Tensor& x) {
  if (!x.valid()) ShapeFail("mean", "invalid tensor handle");
  if (x.value().size() == 0) ShapeFail("mean", "empty tensor");
  const double n = static_cast<double>(x.value().size());
  return x.tape()->Record(
      Matrix::Constant(1, 1, x.value().sum() / n), {x},
      [n](BackwardArgs& g) {
        if (g.in_grads[0]) g.in_grads[0]->array() += g.grad_out(0, 0) / n;
      },
      "mean");
}

Tensor SumColumns(const Tensor& x) {
  if (!x.valid()) ShapeFail("sum_columns", "invalid tensor handle");
  Matrix y = x.value().rowwise().sum();
  return x.tape()->Record(
      std::move(y), {x},
      [](BackwardArgs& g) {
        if (g.in_grads[0]) {
          g.in_grads[0]->colwise() += g.grad_out.col(0);
        }
      },
      "sum_columns");
}

Tensor RowSoftmax(const Tensor& x) {
  if (!x.valid()) ShapeFail("row_softmax", "invalid tensor handle");
  Matrix y = x.value();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  return x.tape()->Record(
      std::move(y), {x},
      [](BackwardArgs& g) {
        if (!g.in_grads[0]) return;
        const Matrix& yv = g.out_value;
        for (Eigen::Index r = 0; r < yv.rows(); ++r) {
          const double dot = g.grad_out.row(r).dot(yv.row(r));
          g.in_grads[0]->row(r).array() +=
              yv.row(r).array() * (g.grad_out.row(r).array() - dot);
        }
      },
      "row_softmax");
}

Tensor SegmentSoftmax(const Tensor& scores, std::span<const int> segment,
                      int num_segments) {
  if (!scores.valid()) ShapeFail("segment_softmax", "invalid tensor handle");
  const Matrix& s = scores.value();
  if (static_cast<Eigen::Index>(segment.size()) != s.rows()) {
    ShapeFail("segment_softmax", "segment ids (" +
                                     std::to_string(segment.size()) +
                                     ") do not match rows " + ShapeString(s));
  }
  CheckIndex("segment_softmax", segment, num_segments);
  const Eigen::Index cols = s.cols();
  Matrix peak = Matrix::Constant(num_segments, cols,
                                 -std::numeric_limits<double>::infinity());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    peak.row(segment[r]) = peak.row(segment[r]).cwiseMax(s.row(r));
  }
  Matrix y(s.rows(), cols);
  Matrix total = Matrix::Zero(num_segments, cols);
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    y.row(r) = (s.row(r) - peak.row(segment[r])).array().exp();
    total.row(segment[r]) += y.row(r);
  }
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    y.row(r).array() /= total.row(segment[r]).array();
  }
  std::vector<int> seg(segment.begin(), segment.end());
  return scores.tape()->Record(
      std::move(y), {scores},
      [seg = std::move(seg), num_segments](BackwardArgs& g) {
        if (!g.in_grads[0]) return;
        const Matrix& yv = g.out_value;
        Matrix dot = Matrix::Zero(num_segments, yv.cols());
        for (Eigen::Index r = 0; r < yv.rows(); ++r) {
          dot.row(seg[r]) += g.grad_out.row(r).cwiseProduct(yv.row(r));
        }
        for (Eigen::Index r = 0; r < yv.rows(); ++r) {
          g.in_grads[0]->row(r).array() +=
              yv.row(r).array() *
              (g.grad_out.row(r).array() - dot.row(seg[r]).array());
        }
      },
      "segment_softmax");
}

Tensor LayerNorm(const Tensor& x, double eps) {
  if (!x.valid()) ShapeFail("layer_norm", "invalid tensor handle");
  const Matrix& xv = x.value();
  if (xv.cols() == 0) ShapeFail("layer_norm", "no columns");
  Matrix y(xv.rows(), xv.cols());
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    y.row(r) = (xv.row(r).array() - mu) * inv_std[r];
  }
  return x.tape()->Record(
      std::move(y), {x},
      [inv_std](BackwardArgs& g) {
        if (!g.in_grads[0]) return;
        const Matrix& yv = g.out_value;
        for (Eigen::Index r = 0; r < yv.rows(); ++r) {
          const double mean_g = g.grad_out.row(r).mean();
          const double mean_gy = g.grad_out.row(r).cwiseProduct(yv.row(r)).mean();
          g.in_grads[0]->row(r).array() +=
              inv_std[r] * (g.grad_out.row(r).array() - mean_g -
                            yv.row(r).array() * mean_gy);
        }
      },
      "layer_norm");
}

Tensor Concat(std::span<const Tensor> parts) {
  if (parts.empty()) ShapeFail("concat", "no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  std::vector<Eigen::Index> widths;
  for (const Tensor& p : parts) {
    RequireSameTape("concat", parts.front(), p);
    if (p.rows() != rows) ShapeFail("concat", parts.front().value(), p.value());
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Matrix y(rows, cols);
  Eigen::Index offset = 0;
  for (const Tensor& p : parts) {
    y.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return parts.front().tape()->Record(
      std::move(y), std::vector<Tensor>(parts.begin(), parts.end()),
      [widths](BackwardArgs& g) {
        Eigen::Index off = 0;
        for (size_t k = 0; k < widths.size(); ++k) {
          if (g.in_grads[k]) *g.in_grads[k] += g.grad_out.middleCols(off, widths[k]);
          off += widths[k];
        }
      },
      "concat");
}

Tensor ColumnSlice(const Tensor& x, int start, int count) {
  if (!x.valid()) ShapeFail("column_slice", "invalid tensor handle");
  if (start < 0 || count < 0 || start + count > x.cols()) {
    ShapeFail("column_slice", "columns [" + std::to_string(start) + ", " +
                                  std::to_string(start + count) +
                                  ") out of range for " + ShapeString(x.value()));
  }
  Matrix y = x.value().middleCols(start, count);
  return x.tape()->Record(
      std::move(y), {x},
      [start, count](BackwardArgs& g) {
        if (g.in_grads[0]) g.in_grads[0]->middleCols(start, count) += g.grad_out;
      },
      "column_slice");
}

Tensor GatherRows(const Tensor& x, std::span<const int> index) {
  if (!x.valid()) ShapeFail("gather_rows", "invalid tensor handle");
  CheckIndex("gather_rows", index, x.rows());
  Matrix y(static_cast<Eigen::Index>(index.size()), x.cols());
  for (size_t k = 0; k < index.size(); ++k) y.row(k) = x.value().row(index[k]);
  std::vector<int> idx(index.begin(), index.end());
  return x.tape()->Record(
      std::move(y), {x},
      [idx = std::move(idx)](BackwardArgs& g) {
        if (!g.in_grads[0]) return;
        for (size_t k = 0; k < idx.size(); ++k) {
          g.in_grads[0]->row(idx[k]) += g.grad_out.row(k);
        }
      },
      "gather_rows");
}

Tensor ScatterAddRows(const Tensor& x, std::span<const int> index,
                      int num_rows) {
  if (!x.valid()) ShapeFail("scatter_add_rows", "invalid tensor handle");
  if (static_cast<Eigen::Index>(index.size()) != x.rows()) {
    ShapeFail("scatter_add_rows", "index length " + std::to_string(index.size()) +
                                      " does not match " + ShapeString(x.value()));
  }
  CheckIndex("scatter_add_rows", index, num_rows);
  Matrix y = Matrix::Zero(num_rows, x.cols());
  for (size_t k = 0; k < index.size(); ++k) y.row(index[k]) += x.value().row(k);
  std::vector<int> idx(index.begin(), index.end());
  return x.tape()->Record(
      std::move(y), {x},
      [idx = std::move(idx)](BackwardArgs& g) {
        if (!g.in_grads[0]) return;
        for (size_t k = 0; k < idx.size(); ++k) {
          g.in_grads[0]->row(k) += g.grad_out.row(idx[k]);
        }
      },
      "scatter_add_rows");
}

Tensor RepeatColumns(const Tensor& x, int width) {
  if (!x.valid()) ShapeFail("repeat_columns", "invalid tensor handle");
  if (width <= 0) ShapeFail("repeat_columns", "width must be positive");
  const Eigen::Index h = x.cols();
  Matrix y(x.rows(), h * width);
  for (Eigen::Index c = 0; c < h; ++c) {
    y.middleCols(c * width, width) = x.value().col(c).replicate(1, width);
  }
  return x.tape()->Record(
      std::move(y), {x},
      [width, h](BackwardArgs& g) {
        if (!g.in_grads[0]) return;
        for (Eigen::Index c = 0; c < h; ++c) {
          g.in_grads[0]->col(c) += g.grad_out.middleCols(c * width, width).rowwise().sum();
        }
      },
      "repeat_columns");
}

Tensor GroupSum(const Tensor& x, int width) {
  if (!x.valid()) ShapeFail("group_sum", "invalid tensor handle");
  if (width <= 0 || x.cols() % width != 0) {
    ShapeFail("group_sum", std::to_string(x.cols()) +
                               " columns do not split into groups of " +
                               std::to_string(width));
  }
  const Eigen::Index groups = x.cols() / width;
  Matrix y(x.rows(), groups);
  for (Eigen::Index c = 0; c < groups; ++c) {
    y.col(c) = x.value().middleCols(c * width, width).rowwise().sum();
  }
  return x.tape()->Record(
      std::move(y), {x},
      [width, groups](BackwardArgs& g) {
        if (!g.in_grads[0]) return;
        for (Eigen::Index c = 0; c < groups; ++c) {
          g.in_grads[0]->middleCols(c * width, width).colwise() += g.grad_out.col(c);
        }
      },
      "group_sum");
}

Tensor BlockMean(const Tensor& x, int blocks) {
  if (!x.valid()) ShapeFail("block_mean", "invalid tensor handle");
  if (blocks <= 0 || x.cols() % blocks != 0) {
    ShapeFail("block_mean", std::to_string(x.cols()) +
                                " columns do not split into " +
                                std::to_string(blocks) + " blocks");
  }
  const Eigen::Index width = x.cols() / blocks;
  Matrix y = Matrix::Zero(x.rows(), width);
  for (int b = 0; b < blocks; ++b) y += x.value().middleCols(b * width, width);
  y /= static_cast<double>(blocks);
  return x.tape()->Record(
      std::move(y), {x},
      [blocks, width](BackwardArgs& g) {
        if (!g.in_grads[0]) return;
        for (int b = 0; b < blocks; ++b) {
          g.in_grads[0]->middleCols(b * width, width) +=
              g.grad_out / static_cast<double>(blocks);
        }
      },
      "block_mean");
}

Tensor Conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int kernel, int sequence_length) {
  RequireSameTape("conv1d", x, weight);
  RequireSameTape("conv1d", x, bias);
  if (kernel <= 0 || kernel % 2 == 0) ShapeFail("conv1d", "kernel must be odd");
  if (sequence_length <= 0 || x.rows() % sequence_length != 0) {
    ShapeFail("conv1d", "rows " + std::to_string(x.rows()) +
                            " are not a multiple of sequence length " +
                            std::to_string(sequence_length));
  }
  const Eigen::Index cin = x.cols();
  if (weight.rows() != kernel * cin) ShapeFail("conv1d", x.value(), weight.value());
  if (bias.rows() != 1 || bias.cols() != weight.cols()) {
    ShapeFail("conv1d", weight.value(), bias.value());
  }
  const Eigen::Index rows = x.rows();
  const int half = kernel / 2;
  Matrix cols = Matrix::Zero(rows, kernel * cin);
  for (Eigen::Index t = 0; t < rows; ++t) {
    const Eigen::Index pos = t % sequence_length;
    for (int j = 0; j < kernel; ++j) {
      const Eigen::Index src = pos + j - half;
      if (src < 0 || src >= sequence_length) continue;
      cols.block(t, j * cin, 1, cin) = x.value().row(t - pos + src);
    }
  }
  Matrix y = cols * weight.value();
  y.rowwise() += bias.value().row(0);
  return x.tape()->Record(
      std::move(y), {x, weight, bias},
      [cols = std::move(cols), kernel, half, cin, sequence_length](BackwardArgs& g) {
        if (g.in_grads[1]) g.in_grads[1]->noalias() += cols.transpose() * g.grad_out;
        if (g.in_grads[2]) *g.in_grads[2] += g.grad_out.colwise().sum();
        if (!g.in_grads[0]) return;
        const Matrix gcols = g.grad_out * g.in_values[1]->transpose();
        for (Eigen::Index t = 0; t < gcols.rows(); ++t) {
          const Eigen::Index pos = t % sequence_length;
          for (int j = 0; j < kernel; ++j) {
            const Eigen::Index src = pos + j - half;
            if (src < 0 || src >= sequence_length) continue;
            g.in_grads[0]->row(t - pos + src) += gcols.block(t, j * cin, 1, cin);
          }
        }
      },
      "conv1d");
}

}  // namespace opfnet::ad
