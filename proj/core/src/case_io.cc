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

#include "opfnet/case_io.h"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "opfnet/error.h"

namespace opfnet {
namespace {

using nlohmann::json;

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- MATPOWER subset scanner ----

struct Token {
  enum Kind { kIdent, kNumber, kSymbol, kString, kNewline, kOther } kind;
  std::string text;
  double number = 0.0;
  int line = 1;
  int column = 1;
};

std::string Where(int line, int column) {
  return "line " + std::to_string(line) + ", column " + std::to_string(column);
}

std::vector<Token> Tokenize(std::string_view text) {
  std::vector<Token> tokens;
  int line = 1;
  int column = 1;
  size_t i = 0;
  auto advance = [&](size_t count) {
    for (size_t k = 0; k < count && i < text.size(); ++k, ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
  };
  while (i < text.size()) {
    const char c = text[i];
    if (c == '%' || c == '#') {
      while (i < text.size() && text[i] != '\n') advance(1);
      continue;
    }
    if (c == '\n') {
      tokens.push_back({Token::kNewline, "\n", 0.0, line, column});
      advance(1);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      advance(1);
      continue;
    }
    const int tl = line;
    const int tc = column;
    if (c == '\'' || c == '"') {
      size_t j = i + 1;
      while (j < text.size() && text[j] != c && text[j] != '\n') ++j;
      tokens.push_back(
          {Token::kString, std::string(text.substr(i, j - i + 1)), 0.0, tl, tc});
      advance(j - i + 1);
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t j = i;
      while (j < text.size() &&
             (std::isalnum(static_cast<unsigned char>(text[j])) ||
              text[j] == '_' || text[j] == '.')) {
        ++j;
      }
      std::string word(text.substr(i, j - i));
      if (word == "Inf" || word == "inf") {
        tokens.push_back({Token::kNumber, word,
                          std::numeric_limits<double>::infinity(), tl, tc});
      } else {
        tokens.push_back({Token::kIdent, word, 0.0, tl, tc});
      }
      advance(j - i);
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' ||
        ((c == '-' || c == '+') && i + 1 < text.size() &&
         (std::isdigit(static_cast<unsigned char>(text[i + 1])) ||
          text[i + 1] == '.' || text[i + 1] == 'I'))) {
      if ((c == '-' || c == '+') && text.substr(i + 1, 3) == "Inf") {
        const double inf = std::numeric_limits<double>::infinity();
        tokens.push_back({Token::kNumber, std::string(text.substr(i, 4)),
                          c == '-' ? -inf : inf, tl, tc});
        advance(4);
        continue;
      }
      const std::string rest(text.substr(i, std::min<size_t>(64, text.size() - i)));
      char* end = nullptr;
      const double value = std::strtod(rest.c_str(), &end);
      size_t len = static_cast<size_t>(end - rest.c_str());
      // Glue trailing garbage (e.g. "1.2x") onto the token so it is reported.
      size_t j = i + len;
      while (j < text.size() &&
             (std::isalnum(static_cast<unsigned char>(text[j])) || text[j] == '.')) {
        ++j;
      }
      if (len == 0 || j != i + len) {
        tokens.push_back(
            {Token::kOther, std::string(text.substr(i, std::max(j, i + 1) - i)),
             0.0, tl, tc});
        advance(std::max(j, i + 1) - i);
      } else {
        tokens.push_back(
            {Token::kNumber, std::string(text.substr(i, len)), value, tl, tc});
        advance(len);
      }
      continue;
    }
    if (std::string_view("[];,={}()").find(c) != std::string_view::npos) {
      tokens.push_back({Token::kSymbol, std::string(1, c), 0.0, tl, tc});
      advance(1);
      continue;
    }
    tokens.push_back({Token::kOther, std::string(1, c), 0.0, tl, tc});
    advance(1);
  }
  return tokens;
}

struct MatrixSection {
  std::vector<std::vector<double>> rows;
  std::vector<int> row_lines;
  int line = 0;
};

struct MatpowerSections {
  std::optional<double> base_mva;
  std::map<std::string, MatrixSection> matrices;
};

bool IsSymbol(const Token& t, char c) {
  return t.kind == Token::kSymbol && t.text.size() == 1 && t.text[0] == c;
}

MatpowerSections ScanSections(const std::vector<Token>& tokens) {
  MatpowerSections out;
  size_t i = 0;
  auto skip_newlines = [&] {
    while (i < tokens.size() && tokens[i].kind == Token::kNewline) ++i;
  };
  while (i < tokens.size()) {
    const Token& t = tokens[i];
    if (t.kind != Token::kIdent || t.text.rfind("mpc.", 0) != 0 ||
        i + 1 >= tokens.size() || !IsSymbol(tokens[i + 1], '=')) {
      ++i;
      continue;
    }
    const std::string field = t.text.substr(4);
    i += 2;
    skip_newlines();
    if (i >= tokens.size()) break;
    const Token& v = tokens[i];
    if (IsSymbol(v, '[')) {
      MatrixSection section;
      section.line = v.line;
      ++i;
      std::vector<double> row;
      int row_line = 0;
      bool closed = false;
      while (i < tokens.size()) {
        const Token& e = tokens[i];
        if (IsSymbol(e, ']')) {
          closed = true;
          ++i;
          break;
        }
        if (IsSymbol(e, ';') || e.kind == Token::kNewline) {
          if (!row.empty()) {
            section.rows.push_back(std::move(row));
            section.row_lines.push_back(row_line);
            row.clear();
          }
        } else if (IsSymbol(e, ',')) {
          // element separator
        } else if (e.kind == Token::kNumber) {
          if (row.empty()) row_line = e.line;
          row.push_back(e.number);
        } else {
          throw ParseError(Where(e.line, e.column),
                           "non-numeric token '" + e.text + "' in mpc." + field);
        }
        ++i;
      }
      if (!closed) {
        throw ParseError(Where(v.line, v.column),
                         "unterminated matrix mpc." + field);
      }
      if (!row.empty()) {
        section.rows.push_back(std::move(row));
        section.row_lines.push_back(row_line);
      }
      out.matrices[field] = std::move(section);
    } else if (v.kind == Token::kNumber) {
      if (field == "baseMVA") out.base_mva = v.number;
      ++i;
    } else if (field == "baseMVA") {
      throw ParseError(Where(v.line, v.column),
                       "non-numeric token '" + v.text + "' for mpc.baseMVA");
    } else if (IsSymbol(v, '{')) {
      int depth = 0;
      while (i < tokens.size()) {
        if (IsSymbol(tokens[i], '{')) ++depth;
        if (IsSymbol(tokens[i], '}') && --depth == 0) {
          ++i;
          break;
        }
        ++i;
      }
    } else {
      ++i;
    }
  }
  return out;
}

const MatrixSection& RequireMatrix(const MatpowerSections& sections,
                                   const std::string& name, size_t min_cols) {
  auto it = sections.matrices.find(name);
  if (it == sections.matrices.end()) throw MissingSectionError(name);
  const MatrixSection& m = it->second;
  for (size_t r = 0; r < m.rows.size(); ++r) {
    if (m.rows[r].size() < min_cols) {
      throw ParseError(
          "line " + std::to_string(m.row_lines[r]),
          "mpc." + name + " row " + std::to_string(r + 1) + " has " +
              std::to_string(m.rows[r].size()) + " columns, expected at least " +
              std::to_string(min_cols));
    }
    if (m.rows[r].size() != m.rows[0].size()) {
      throw ParseError("line " + std::to_string(m.row_lines[r]),
                       "mpc." + name + " row " + std::to_string(r + 1) +
                           " has " + std::to_string(m.rows[r].size()) +
                           " columns but row 1 has " +
                           std::to_string(m.rows[0].size()));
    }
  }
  return m;
}

int AsInt(double v, const std::string& where) {
  if (!std::isfinite(v) || v != std::floor(v)) {
    throw ParseError(where, "expected an integer, got " + std::to_string(v));
  }
  return static_cast<int>(v);
}

std::string RowWhere(const MatrixSection& m, size_t r) {
  return "line " + std::to_string(m.row_lines[r]);
}

double AngleLimit(double degrees, bool lower) {
  const double inf = std::numeric_limits<double>::infinity();
  if (lower && degrees <= -360.0) return -inf;
  if (!lower && degrees >= 360.0) return inf;
  return degrees;
}

// ---- JSON helpers ----

const json& Field(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw ParseError(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(path + "." + key, "missing field");
  return *it;
}

double Number(const json& obj, const char* key, const std::string& path) {
  const json& v = Field(obj, key, path);
  if (!v.is_number()) throw ParseError(path + "." + key, "expected a number");
  return v.get<double>();
}

double OptionalLimit(const json& obj, const char* key, const std::string& path,
                     double absent) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return absent;
  if (!it->is_number()) throw ParseError(path + "." + key, "expected a number or null");
  return it->get<double>();
}

int Integer(const json& obj, const char* key, const std::string& path) {
  const json& v = Field(obj, key, path);
  if (!v.is_number_integer()) {
    throw ParseError(path + "." + key, "expected an integer");
  }
  return v.get<int>();
}

json LimitValue(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

}  // namespace

CaseDocument CaseDocument::FromFile(const std::filesystem::path& path) {
  CaseDocument doc;
  doc.raw = ReadFile(path);
  doc.source = path.string();
  const std::string ext = path.extension().string();
  if (ext == ".json") {
    doc.format = CaseFormat::kCanonicalJson;
  } else if (ext == ".m") {
    doc.format = CaseFormat::kMatpower;
  } else {
    return FromText(std::move(doc.raw), doc.source);
  }
  if (doc.raw.empty()) throw ParseError(doc.source, "empty case document");
  return doc;
}

CaseDocument CaseDocument::FromText(std::string text, std::string source) {
  CaseDocument doc;
  doc.source = std::move(source);
  const size_t first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) {
    throw ParseError(doc.source, "empty case document");
  }
  doc.format = text[first] == '{' ? CaseFormat::kCanonicalJson
                                  : CaseFormat::kMatpower;
  doc.raw = std::move(text);
  return doc;
}

GridCase ParseMatpower(const CaseDocument& doc) {
  const MatpowerSections sections = ScanSections(Tokenize(doc.raw));
  if (!sections.base_mva) throw MissingSectionError("baseMVA");
  const MatrixSection& bus_m = RequireMatrix(sections, "bus", 13);
  const MatrixSection& gen_m = RequireMatrix(sections, "gen", 10);
  const MatrixSection& branch_m = RequireMatrix(sections, "branch", 11);
  const MatrixSection* cost_m = nullptr;
  if (sections.matrices.count("gencost")) {
    cost_m = &RequireMatrix(sections, "gencost", 4);
  }

  GridCase grid;
  grid.name = std::filesystem::path(doc.source).stem().string();
  grid.base_mva = *sections.base_mva;
  grid.units = Units::kNatural;

  std::map<int, int> index_of;
  for (size_t r = 0; r < bus_m.rows.size(); ++r) {
    const auto& row = bus_m.rows[r];
    const std::string where = RowWhere(bus_m, r);
    Bus bus;
    bus.id = AsInt(row[0], where);
    switch (AsInt(row[1], where)) {
      case 1:
        bus.kind = BusKind::kPq;
        break;
      case 2:
        bus.kind = BusKind::kPv;
        break;
      case 3:
        bus.kind = BusKind::kSlack;
        break;
      default:
        throw ParseError(where, "unsupported bus type " +
                                    std::to_string(row[1]) + " for bus " +
                                    std::to_string(bus.id));
    }
    bus.pd = row[2];
    bus.qd = row[3];
    bus.gs = row[4];
    bus.bs = row[5];
    bus.vm = row[7];
    bus.va = row[8];
    bus.base_kv = row[9];
    bus.vmax = row[11];
    bus.vmin = row[12];
    if (!index_of.emplace(bus.id, static_cast<int>(grid.buses.size())).second) {
      throw ValidationError("duplicate bus id " + std::to_string(bus.id));
    }
    grid.buses.push_back(bus);
  }

  auto bus_index = [&](double id, const std::string& where) {
    auto it = index_of.find(AsInt(id, where));
    if (it == index_of.end()) {
      throw ParseError(where, "reference to unknown bus " + std::to_string(id));
    }
    return it->second;
  };

  if (cost_m && cost_m->rows.size() < gen_m.rows.size()) {
    throw ParseError("line " + std::to_string(cost_m->line),
                     "mpc.gencost has fewer rows than mpc.gen");
  }
  for (size_t r = 0; r < gen_m.rows.size(); ++r) {
    const auto& row = gen_m.rows[r];
    const std::string where = RowWhere(gen_m, r);
    if (row[7] <= 0.0) continue;  // out of service
    Generator gen;
    gen.bus = bus_index(row[0], where);
    gen.pg = row[1];
    gen.qg = row[2];
    gen.qmax = row[3];
    gen.qmin = row[4];
    gen.vg = row[5];
    gen.pmax = row[8];
    gen.pmin = row[9];
    if (cost_m) {
      const auto& c = cost_m->rows[r];
      const std::string cwhere = RowWhere(*cost_m, r);
      const int model = AsInt(c[0], cwhere);
      if (model != 2) {
        throw ParseError(cwhere, "only polynomial gencost (model 2) is supported");
      }
      const int ncost = AsInt(c[3], cwhere);
      if (ncost < 1 || c.size() < static_cast<size_t>(4 + ncost)) {
        throw ParseError(cwhere, "gencost row has " + std::to_string(c.size()) +
                                     " columns, expected " +
                                     std::to_string(4 + ncost));
      }
      std::array<double, 3> coeffs = {0.0, 0.0, 0.0};
      for (int k = 0; k < ncost; ++k) {
        const int power = ncost - 1 - k;
        const double value = c[4 + k];
        if (power > 2) {
          if (value != 0.0) {
            throw ParseError(cwhere, "cost polynomials above degree 2 are not supported");
          }
          continue;
        }
        coeffs[2 - power] = value;
      }
      gen.cost = coeffs;
    }
    grid.gens.push_back(gen);
  }

  for (size_t r = 0; r < branch_m.rows.size(); ++r) {
    const auto& row = branch_m.rows[r];
    const std::string where = RowWhere(branch_m, r);
    Branch br;
    br.from = bus_index(row[0], where);
    br.to = bus_index(row[1], where);
    br.r = row[2];
    br.x = row[3];
    br.b_sh = row[4];
    br.s_max = row[5];
    br.tap = row[8] == 0.0 ? 1.0 : row[8];
    br.in_service = row[10] > 0.0;
    if (row.size() >= 13) {
      br.angmin = AngleLimit(row[11], true);
      br.angmax = AngleLimit(row[12], false);
    }
    grid.branches.push_back(br);
  }

  GridCase pu = ToPerUnit(std::move(grid));
  ValidateCase(pu);
  return pu;
}

GridCase ParseJsonCase(const CaseDocument& doc) {
  json root;
  try {
    root = json::parse(doc.raw);
  } catch (const json::parse_error& e) {
    throw ParseError("byte " + std::to_string(e.byte), e.what());
  }
  if (!root.is_object()) throw ParseError("$", "expected a JSON object");
  const int version = Integer(root, "schema_version", "$");
  if (version != kCaseSchemaVersion) {
    throw ParseError("$.schema_version",
                     "unsupported schema version " + std::to_string(version));
  }
  GridCase grid;
  const json& name = Field(root, "name", "$");
  if (!name.is_string()) throw ParseError("$.name", "expected a string");
  grid.name = name.get<std::string>();
  grid.base_mva = Number(root, "base_mva", "$");
  grid.units = Units::kPerUnit;

  const json& buses = Field(root, "buses", "$");
  if (!buses.is_array()) throw ParseError("buses", "expected an array");
  std::map<int, int> index_of;
  for (size_t i = 0; i < buses.size(); ++i) {
    const std::string path = "buses[" + std::to_string(i) + "]";
    const json& b = buses[i];
    Bus bus;
    bus.id = Integer(b, "id", path);
    const json& kind = Field(b, "kind", path);
    const std::string k = kind.is_string() ? kind.get<std::string>() : "";
    if (k == "slack") {
      bus.kind = BusKind::kSlack;
    } else if (k == "pv") {
      bus.kind = BusKind::kPv;
    } else if (k == "pq") {
      bus.kind = BusKind::kPq;
    } else {
      throw ParseError(path + ".kind", "expected one of slack, pv, pq");
    }
    bus.pd = Number(b, "pd", path);
    bus.qd = Number(b, "qd", path);
    bus.gs = Number(b, "gs", path);
    bus.bs = Number(b, "bs", path);
    bus.vm = Number(b, "vm", path);
    bus.va = Number(b, "va", path);
    bus.vmin = Number(b, "vmin", path);
    bus.vmax = Number(b, "vmax", path);
    bus.base_kv = Number(b, "base_kv", path);
    if (!index_of.emplace(bus.id, static_cast<int>(i)).second) {
      throw ValidationError("duplicate bus id " + std::to_string(bus.id) +
                            " at " + path);
    }
    grid.buses.push_back(bus);
  }
  auto bus_ref = [&](const json& obj, const char* key, const std::string& path) {
    const int id = Integer(obj, key, path);
    auto it = index_of.find(id);
    if (it == index_of.end()) {
      throw ParseError(path + "." + key, "unknown bus id " + std::to_string(id));
    }
    return it->second;
  };

  const json& gens = Field(root, "gens", "$");
  if (!gens.is_array()) throw ParseError("gens", "expected an array");
  for (size_t i = 0; i < gens.size(); ++i) {
    const std::string path = "gens[" + std::to_string(i) + "]";
    const json& g = gens[i];
    Generator gen;
    gen.bus = bus_ref(g, "bus", path);
    gen.pg = Number(g, "pg", path);
    gen.qg = Number(g, "qg", path);
    gen.pmin = Number(g, "pmin", path);
    gen.pmax = Number(g, "pmax", path);
    gen.qmin = Number(g, "qmin", path);
    gen.qmax = Number(g, "qmax", path);
    gen.vg = Number(g, "vg", path);
    const json& cost = Field(g, "cost", path);
    if (!cost.is_array() || cost.size() != 3) {
      throw ParseError(path + ".cost", "expected [c2, c1, c0]");
    }
    for (int k = 0; k < 3; ++k) {
      if (!cost[k].is_number()) {
        throw ParseError(path + ".cost[" + std::to_string(k) + "]",
                         "expected a number");
      }
      gen.cost[k] = cost[k].get<double>();
    }
    grid.gens.push_back(gen);
  }

  const json& branches = Field(root, "branches", "$");
  if (!branches.is_array()) throw ParseError("branches", "expected an array");
  const double inf = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < branches.size(); ++i) {
    const std::string path = "branches[" + std::to_string(i) + "]";
    const json& e = branches[i];
    Branch br;
    br.from = bus_ref(e, "from", path);
    br.to = bus_ref(e, "to", path);
    br.r = Number(e, "r", path);
    br.x = Number(e, "x", path);
    br.b_sh = Number(e, "b_sh", path);
    br.tap = Number(e, "tap", path);
    const int status = Integer(e, "status", path);
    if (status != 0 && status != 1) {
      throw ParseError(path + ".status", "expected 0 or 1");
    }
    br.in_service = status == 1;
    br.s_max = Number(e, "s_max", path);
    br.angmin = OptionalLimit(e, "angmin", path, -inf);
    br.angmax = OptionalLimit(e, "angmax", path, inf);
    grid.branches.push_back(br);
  }
  ValidateCase(grid);
  return grid;
}

std::string WriteJsonCase(const GridCase& input) {
  const GridCase grid = ToPerUnit(input);
  json root = json::object();
  root["schema_version"] = kCaseSchemaVersion;
  root["name"] = grid.name;
  root["base_mva"] = grid.base_mva;
  json buses = json::array();
  for (const Bus& b : grid.buses) {
    buses.push_back({{"id", b.id},
                     {"kind", BusKindName(b.kind)},
                     {"pd", b.pd},
                     {"qd", b.qd},
                     {"gs", b.gs},
                     {"bs", b.bs},
                     {"vm", b.vm},
                     {"va", b.va},
                     {"vmin", b.vmin},
                     {"vmax", b.vmax},
                     {"base_kv", b.base_kv}});
  }
  root["buses"] = std::move(buses);
  json gens = json::array();
  for (const Generator& g : grid.gens) {
    gens.push_back({{"bus", grid.buses[g.bus].id},
                    {"pg", g.pg},
                    {"qg", g.qg},
                    {"pmin", g.pmin},
                    {"pmax", g.pmax},
                    {"qmin", g.qmin},
                    {"qmax", g.qmax},
                    {"vg", g.vg},
                    {"cost", {g.cost[0], g.cost[1], g.cost[2]}}});
  }
  root["gens"] = std::move(gens);
  json branches = json::array();
  for (const Branch& br : grid.branches) {
    branches.push_back({{"from", grid.buses[br.from].id},
                        {"to", grid.buses[br.to].id},
                        {"r", br.r},
                        {"x", br.x},
                        {"b_sh", br.b_sh},
                        {"tap", br.tap},
                        {"status", br.in_service ? 1 : 0},
                        {"s_max", br.s_max},
                        {"angmin", LimitValue(br.angmin)},
                        {"angmax", LimitValue(br.angmax)}});
  }
  root["branches"] = std::move(branches);
  return root.dump(1) + "\n";
}

GridCase ParseCase(const CaseDocument& doc) {
  return doc.format == CaseFormat::kCanonicalJson ? ParseJsonCase(doc)
                                                  : ParseMatpower(doc);
}

std::filesystem::path ResolveCasePath(std::string_view path_or_name) {
  const std::filesystem::path direct(path_or_name);
  if (std::filesystem::is_regular_file(direct)) return direct;
  std::vector<std::filesystem::path> roots;
  if (const char* env = std::getenv("OPFNET_DATA_DIR")) roots.emplace_back(env);
#ifdef OPFNET_DEFAULT_DATA_DIR
  roots.emplace_back(OPFNET_DEFAULT_DATA_DIR);
#endif
  for (const auto& root : roots) {
    for (const char* ext : {".m", ".json"}) {
      std::filesystem::path candidate =
          root / "cases" / (std::string(path_or_name) + ext);
      if (std::filesystem::is_regular_file(candidate)) return candidate;
    }
  }
  throw Error("case not found: " + std::string(path_or_name));
}

GridCase LoadCase(std::string_view path_or_name) {
  return ParseCase(CaseDocument::FromFile(ResolveCasePath(path_or_name)));
}

std::uint64_t Fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t CaseHash(const GridCase& grid) {
  return Fnv1a64(WriteJsonCase(grid));
}

std::string HexDigest(std::uint64_t digest) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = kHex[digest & 0xf];
    digest >>= 4;
  }
  return out;
}

}  // namespace opfnet
