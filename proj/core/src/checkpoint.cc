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

#include "opfnet/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "opfnet/case_io.h"
#include "opfnet/error.h"

namespace opfnet {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

constexpr char kMagic[8] = {'O', 'P', 'F', 'N', 'E', 'T', 'C', 'K'};

class Writer {
 public:
  template <typename T>
  void Pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void Bytes(const std::string& s) {
    Pod<std::uint64_t>(s.size());
    out_ += s;
  }
  void Raw(const void* p, size_t n) { out_.append(static_cast<const char*>(p), n); }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& data, size_t begin, size_t end)
      : data_(data), pos_(begin), end_(end) {}
  template <typename T>
  T Pod() {
    Need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string Take(size_t n) {
    Need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string Bytes() { return Take(Pod<std::uint64_t>()); }
  bool done() const { return pos_ == end_; }
  size_t pos() const { return pos_; }

 private:
  void Need(size_t n) const {
    if (end_ < pos_ || end_ - pos_ < n) throw CheckpointError("checkpoint truncated");
  }
  const std::string& data_;
  size_t pos_;
  size_t end_;
};

void WriteMatrix(Writer& w, const ad::Matrix& m) {
  w.Pod<std::uint64_t>(m.rows());
  w.Pod<std::uint64_t>(m.cols());
  w.Raw(m.data(), sizeof(double) * m.size());
}

ad::Matrix ReadMatrix(Reader& r) {
  const auto rows = r.Pod<std::uint64_t>();
  const auto cols = r.Pod<std::uint64_t>();
  if (rows > (1u << 24) || cols > (1u << 24)) throw CheckpointError("checkpoint corrupted");
  ad::Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const std::string raw = r.Take(sizeof(double) * m.size());
  std::memcpy(m.data(), raw.data(), raw.size());
  return m;
}

std::string EncodeParameters(const ParameterStore& store) {
  Writer w;
  w.Pod<std::uint32_t>(store.size());
  for (int i = 0; i < store.size(); ++i) {
    w.Bytes(store.name(i));
    WriteMatrix(w, store.value(i));
  }
  return w.str();
}

ParameterStore DecodeParameters(const std::string& payload) {
  Reader r(payload, 0, payload.size());
  ParameterStore store;
  const auto count = r.Pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.Bytes();
    store.Add(std::move(name), ReadMatrix(r));
  }
  if (!r.done()) throw CheckpointError("checkpoint corrupted: trailing parameter bytes");
  return store;
}

std::string EncodeMatrices(const std::vector<ad::Matrix>& list) {
  Writer w;
  w.Pod<std::uint32_t>(list.size());
  for (const auto& m : list) WriteMatrix(w, m);
  return w.str();
}

std::vector<ad::Matrix> DecodeMatrices(const std::string& payload) {
  Reader r(payload, 0, payload.size());
  std::vector<ad::Matrix> out;
  const auto count = r.Pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) out.push_back(ReadMatrix(r));
  if (!r.done()) throw CheckpointError("checkpoint corrupted: trailing optimizer bytes");
  return out;
}

template <typename T>
std::string PodString(T v) {
  Writer w;
  w.Pod(v);
  return w.str();
}

template <typename T>
T PodFrom(const std::string& s) {
  Reader r(s, 0, s.size());
  T v = r.Pod<T>();
  if (!r.done()) throw CheckpointError("checkpoint corrupted: bad scalar section");
  return v;
}

}  // namespace

std::string EncodeCheckpoint(const CheckpointData& data) {
  const std::vector<std::pair<std::string, std::string>> sections = {
      {"config", data.config_json},
      {"config_hash", data.config_hash},
      {"epoch", PodString<std::int64_t>(data.epoch)},
      {"parameters", EncodeParameters(data.parameters)},
      {"optimizer", EncodeMatrices(data.optimizer_state)},
      {"optimizer_steps", PodString<std::int64_t>(data.optimizer_steps)},
      {"metrics", data.metrics_json},
  };
  Writer w;
  w.Raw(kMagic, sizeof(kMagic));
  w.Pod<std::uint32_t>(kCheckpointVersion);
  w.Pod<std::uint32_t>(sections.size());
  for (const auto& [name, payload] : sections) {
    w.Pod<std::uint32_t>(name.size());
    w.Raw(name.data(), name.size());
    w.Bytes(payload);
  }
  w.Pod<std::uint64_t>(Fnv1a64(w.str()));
  return w.str();
}

CheckpointData DecodeCheckpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) + 16 ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not an opfnet checkpoint (bad magic or truncated)");
  }
  const size_t body_end = bytes.size() - sizeof(std::uint64_t);
  Reader r(bytes, sizeof(kMagic), body_end);
  const auto version = r.Pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint schema version " + std::to_string(version) +
                          " is not supported by this build (expects " +
                          std::to_string(kCheckpointVersion) +
                          "); retrain or convert the checkpoint with a matching release");
  }
  Reader tail(bytes, body_end, bytes.size());
  const auto stored = tail.Pod<std::uint64_t>();
  if (stored != Fnv1a64(std::string_view(bytes.data(), body_end))) {
    throw CheckpointError("checkpoint checksum mismatch (truncated or corrupted)");
  }
  const auto count = r.Pod<std::uint32_t>();
  std::map<std::string, std::string> sections;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.Pod<std::uint32_t>();
    std::string name = r.Take(len);
    sections[name] = r.Bytes();
  }
  if (!r.done()) throw CheckpointError("checkpoint corrupted: trailing bytes");
  auto need = [&](const char* name) -> const std::string& {
    auto it = sections.find(name);
    if (it == sections.end()) {
      throw CheckpointError(std::string("checkpoint missing section '") + name + "'");
    }
    return it->second;
  };
  CheckpointData data;
  data.config_json = need("config");
  data.config_hash = need("config_hash");
  data.epoch = static_cast<int>(PodFrom<std::int64_t>(need("epoch")));
  data.parameters = DecodeParameters(need("parameters"));
  data.optimizer_state = DecodeMatrices(need("optimizer"));
  data.optimizer_steps = PodFrom<std::int64_t>(need("optimizer_steps"));
  data.metrics_json = need("metrics");
  return data;
}

void SaveCheckpoint(const std::filesystem::path& path, const CheckpointData& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = EncodeCheckpoint(data);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return DecodeCheckpoint(ss.str());
}

}  // namespace opfnet
