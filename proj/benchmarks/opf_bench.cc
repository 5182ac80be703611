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

#include <benchmark/benchmark.h>

#include "opfnet/case_io.h"
#include "opfnet/oracle.h"

namespace {

const char* const kCases[] = {"case9", "case14", "case30", "case39", "case57"};

void BM_PenaltyOpf(benchmark::State& state) {
  const opfnet::Network net(opfnet::ToPerUnit(opfnet::LoadCase(kCases[state.range(0)])));
  const auto scenarios = opfnet::SampleLoads(net.grid(), 8, 1);
  size_t k = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(opfnet::SolveOpfPenalty(net, scenarios[k++ % scenarios.size()]));
  }
  state.SetLabel(kCases[state.range(0)]);
}
BENCHMARK(BM_PenaltyOpf)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
