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

#ifndef OPFNET_CHECKPOINT_H_
#define OPFNET_CHECKPOINT_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "opfnet/autodiff.h"
#include "opfnet/params.h"

namespace opfnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  std::string config_json;
  std::string config_hash;
  int epoch = 0;
  ParameterStore parameters;
  // Optimizer moments, in parameter order (empty for plain gradient
  // descent).
  std::vector<ad::Matrix> optimizer_state;
  long long optimizer_steps = 0;
  std::string metrics_json;
};

// Layout: 8-byte magic, u32 version, u32 section count, then sections of
// (u32 name length, name, u64 payload length, payload), then a u64 FNV-1a
// checksum of all preceding bytes. Little-endian.
std::string EncodeCheckpoint(const CheckpointData& data);
// Throws CheckpointError on a bad magic, an unsupported version, a
// truncated or corrupted file.
CheckpointData DecodeCheckpoint(const std::string& bytes);

// Writes to a temporary file and renames it into place.
void SaveCheckpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData LoadCheckpoint(const std::filesystem::path& path);

}  // namespace opfnet

#endif  // OPFNET_CHECKPOINT_H_
