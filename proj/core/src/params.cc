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

#include "opfnet/params.h"

#include <cmath>
#include <cstring>

#include "opfnet/error.h"

namespace opfnet {

int ParameterStore::Add(std::string name, ad::Matrix init) {
  if (Find(name) >= 0) throw ConfigError("duplicate parameter '" + name + "'");
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return size() - 1;
}

int ParameterStore::Find(std::string_view name) const {
  for (int i = 0; i < size(); ++i) {
    if (names_[i] == name) return i;
  }
  return -1;
}

void ParameterStore::ZeroPrefix(std::string_view prefix) {
  for (int i = 0; i < size(); ++i) {
    if (names_[i].starts_with(prefix)) values_[i].setZero();
  }
}

long long ParameterStore::num_scalars() const {
  long long total = 0;
  for (const auto& v : values_) total += v.size();
  return total;
}

bool ParameterStore::operator==(const ParameterStore& other) const {
  if (names_ != other.names_) return false;
  for (int i = 0; i < size(); ++i) {
    const ad::Matrix& a = values_[i];
    const ad::Matrix& b = other.values_[i];
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) != 0) return false;
  }
  return true;
}

BoundParameters::BoundParameters(ad::Tape& tape, const ParameterStore& store,
                                 bool trainable) {
  tensors_.reserve(store.size());
  for (int i = 0; i < store.size(); ++i) {
    tensors_.push_back(trainable ? tape.Variable(store.value(i))
                                 : tape.Constant(store.value(i)));
  }
}

std::vector<ad::Matrix> BoundParameters::Gradients() const {
  std::vector<ad::Matrix> out;
  out.reserve(tensors_.size());
  for (const ad::Tensor& t : tensors_) {
    if (t.grad().size() == t.value().size()) {
      out.push_back(t.grad());
    } else {
      out.push_back(ad::Matrix::Zero(t.rows(), t.cols()));
    }
  }
  return out;
}

ad::Matrix GlorotUniform(int rows, int cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  ad::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.Uniform(-a, a);
  return m;
}

}  // namespace opfnet
