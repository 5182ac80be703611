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

#ifndef OPFNET_CASE_IO_H_
#define OPFNET_CASE_IO_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "opfnet/case_model.h"

namespace opfnet {

enum class CaseFormat { kMatpower, kCanonicalJson };

struct CaseDocument {
  CaseFormat format = CaseFormat::kMatpower;
  std::string raw;
  std::string source;

  // Detects the format from the extension (.m / .json), falling back to
  // sniffing the first non-blank character.
  static CaseDocument FromFile(const std::filesystem::path& path);
  static CaseDocument FromText(std::string text, std::string source = "<text>");
};

inline constexpr int kCaseSchemaVersion = 1;

// Parses the matrix-assignment subset of the MATPOWER format (mpc.baseMVA,
// mpc.bus, mpc.gen, mpc.branch, optional mpc.gencost) and returns a
// validated per-unit case.
GridCase ParseMatpower(const CaseDocument& doc);

// Canonical JSON case (see docs/case_schema.md).
GridCase ParseJsonCase(const CaseDocument& doc);
std::string WriteJsonCase(const GridCase& grid);

GridCase ParseCase(const CaseDocument& doc);

// Accepts a file path or the name of a bundled case ("case9"). Bundled cases
// are looked up in $OPFNET_DATA_DIR/cases, then in the build-time data dir.
GridCase LoadCase(std::string_view path_or_name);
std::filesystem::path ResolveCasePath(std::string_view path_or_name);

// Stable 64-bit FNV-1a digest of the canonical JSON form.
std::uint64_t CaseHash(const GridCase& grid);
std::uint64_t Fnv1a64(std::string_view bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string HexDigest(std::uint64_t digest);

}  // namespace opfnet

#endif  // OPFNET_CASE_IO_H_
