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

#ifndef OPFNET_AUTODIFF_H_
#define OPFNET_AUTODIFF_H_

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace opfnet::ad {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives and
// has not been cleared.
class Tensor {
 public:
  Tensor() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  const Matrix& value() const;
  // Zero-sized until Backward has run.
  const Matrix& grad() const;
  bool requires_grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

 private:
  friend class Tape;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

struct BackwardArgs {
  const Matrix& grad_out;
  const Matrix& out_value;
  std::vector<const Matrix*> in_values;
  // Null for inputs that do not require gradients.
  std::vector<Matrix*> in_grads;
};
using BackwardRule = std::function<void(BackwardArgs&)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor Constant(Matrix value);
  Tensor Variable(Matrix value);
  // Appends a node computed from `inputs`; `rule` accumulates into the
  // input gradients. The node requires a gradient when any input does.
  Tensor Record(Matrix value, std::vector<Tensor> inputs, BackwardRule rule,
                std::string op = "custom");

  // Reverse sweep from a 1x1 node. Gradients of all reachable nodes are
  // reset first, so repeated calls do not accumulate.
  void Backward(const Tensor& loss);

  void Clear() { nodes_.clear(); }
  int size() const { return static_cast<int>(nodes_.size()); }

  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  const std::string& op(int id) const { return nodes_[id].op; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<int> inputs;
    BackwardRule rule;
    bool requires_grad = false;
    std::string op;
  };
  std::vector<Node> nodes_;
};

// Binary elementwise ops accept equal shapes, a 1 x c row, an r x 1 column
// or a 1 x 1 scalar on the right-hand side (broadcast).
Tensor Add(const Tensor& a, const Tensor& b);
Tensor Sub(const Tensor& a, const Tensor& b);
Tensor Mul(const Tensor& a, const Tensor& b);
Tensor MatMul(const Tensor& a, const Tensor& b);
Tensor Scale(const Tensor& a, double s);
Tensor AddScalar(const Tensor& a, double s);

Tensor Relu(const Tensor& x);  // subgradient 0 at 0
Tensor Sigmoid(const Tensor& x);
Tensor Tanh(const Tensor& x);
Tensor Tanhshrink(const Tensor& x);  // x - tanh(x)
Tensor Sin(const Tensor& x);
Tensor Cos(const Tensor& x);
Tensor Square(const Tensor& x);
Tensor Abs(const Tensor& x);  // subgradient 0 at 0

Tensor Sum(const Tensor& x);   // 1 x 1
Tensor Mean(const Tensor& x);  // 1 x 1
Tensor SumColumns(const Tensor& x);  // r x 1, sum across each row

Tensor RowSoftmax(const Tensor& x);
// Softmax over the rows sharing a segment id, independently per column.
// Empty segments are allowed.
Tensor SegmentSoftmax(const Tensor& scores, std::span<const int> segment,
                      int num_segments);
// Per-row normalisation to zero mean and unit variance (no affine part).
Tensor LayerNorm(const Tensor& x, double eps = 1e-5);

Tensor Concat(std::span<const Tensor> parts);  // along columns
Tensor ColumnSlice(const Tensor& x, int start, int count);
Tensor GatherRows(const Tensor& x, std::span<const int> index);
Tensor ScatterAddRows(const Tensor& x, std::span<const int> index,
                      int num_rows);
// x: n x h -> n x (h * width), each column repeated `width` times.
Tensor RepeatColumns(const Tensor& x, int width);
// x: n x (groups * width) -> n x groups, sum within each run of `width`
// adjacent columns.
Tensor GroupSum(const Tensor& x, int width);
// x: n x (blocks * width) -> n x width, average of the column blocks.
Tensor BlockMean(const Tensor& x, int blocks);

// 1-D convolution over row sequences. `x` stacks sequences of
// `sequence_length` rows (channels in columns); `weight` is
// (kernel * in_channels) x out_channels with tap-major rows; `bias` is
// 1 x out_channels. Zero same-padding at each sequence end; odd kernels
// only.
Tensor Conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int kernel, int sequence_length);

}  // namespace opfnet::ad

#endif  // OPFNET_AUTODIFF_H_
