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

#ifndef OPFNET_PARAMS_H_
#define OPFNET_PARAMS_H_

#include <string>
#include <string_view>
#include <vector>

#include "opfnet/autodiff.h"
#include "opfnet/rng.h"

namespace opfnet {

// Named trainable matrices, addressed by the integer handle returned from
// Add. Insertion order is the serialization order.
class ParameterStore {
 public:
  int Add(std::string name, ad::Matrix init);
  int size() const { return static_cast<int>(values_.size()); }
  const std::string& name(int handle) const { return names_[handle]; }
  ad::Matrix& value(int handle) { return values_[handle]; }
  const ad::Matrix& value(int handle) const { return values_[handle]; }
  // -1 when absent.
  int Find(std::string_view name) const;
  // Sets every parameter whose name starts with `prefix` to zero.
  void ZeroPrefix(std::string_view prefix);
  long long num_scalars() const;

  // Same names, shapes and bitwise-equal values.
  bool operator==(const ParameterStore& other) const;

 private:
  std::vector<std::string> names_;
  std::vector<ad::Matrix> values_;
};

// Puts every parameter of a store on a tape, as variables when trainable
// and as constants otherwise.
class BoundParameters {
 public:
  BoundParameters(ad::Tape& tape, const ParameterStore& store, bool trainable);
  ad::Tensor operator[](int handle) const { return tensors_[handle]; }
  // Gradients after tape.Backward; zero for parameters off the loss path.
  std::vector<ad::Matrix> Gradients() const;

 private:
  std::vector<ad::Tensor> tensors_;
};

// U(-a, a) with a = sqrt(6 / (rows + cols)).
ad::Matrix GlorotUniform(int rows, int cols, Rng& rng);

}  // namespace opfnet

#endif  // OPFNET_PARAMS_H_
