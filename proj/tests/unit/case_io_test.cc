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

#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "opfnet/case_io.h"
#include "opfnet/error.h"
#include "reference.h"

namespace opfnet {
namespace {

constexpr const char* kTinyCase = R"(function mpc = tiny
% two buses
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0  0  0 0 1 1 0 230 1 1.1 0.9;
  7 1 50 10 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 100 -100 1 100 1 200 0;
];
mpc.branch = [
  1 7 0.01 0.1 0.02 150 150 150 0 0 1 -360 360;
];
mpc.gencost = [
  2 0 0 3 0.01 20 5;
];
)";

std::string Replace(std::string text, const std::string& from, const std::string& to) {
  const auto at = text.find(from);
  EXPECT_NE(at, std::string::npos) << from;
  return text.replace(at, from.size(), to);
}

TEST(Matpower, NineBusDimensions) {
  const GridCase g = LoadCase("case9");
  EXPECT_EQ(g.num_buses(), 9);
  EXPECT_EQ(g.num_gens(), 3);
  EXPECT_EQ(g.num_branches(), 9);
  EXPECT_EQ(g.units, Units::kPerUnit);
}

TEST(Matpower, FourteenBusGeneratorsAndLoad) {
  const GridCase g = LoadCase("case14");
  EXPECT_EQ(g.num_gens(), 5);
  EXPECT_NEAR(g.DefaultPd().sum() * g.base_mva, 259.0, 1e-9);
}

TEST(Matpower, BundledDimensions) {
  struct Dims {
    const char* name;
    int buses, gens, branches;
  };
  for (const Dims d : {Dims{"case30", 30, 6, 41}, Dims{"case39", 39, 10, 46},
                       Dims{"case57", 57, 7, 80}, Dims{"case118", 118, 54, 186},
                       Dims{"case300", 300, 69, 411}}) {
    const GridCase g = LoadCase(d.name);
    EXPECT_EQ(g.num_buses(), d.buses) << d.name;
    EXPECT_EQ(g.num_gens(), d.gens) << d.name;
    EXPECT_EQ(g.num_branches(), d.branches) << d.name;
  }
}

TEST(Matpower, TinyCaseColumnsAndScaling) {
  const GridCase g = ParseMatpower(CaseDocument::FromText(kTinyCase));
  ASSERT_EQ(g.num_buses(), 2);
  EXPECT_EQ(g.buses[1].id, 7);
  EXPECT_EQ(g.buses[0].kind, BusKind::kSlack);
  EXPECT_DOUBLE_EQ(g.buses[1].pd, 0.5);
  EXPECT_DOUBLE_EQ(g.buses[1].qd, 0.1);
  EXPECT_EQ(g.branches[0].to, 1);
  EXPECT_DOUBLE_EQ(g.branches[0].s_max, 1.5);
  // MATPOWER writes tap 0 for a plain line.
  EXPECT_DOUBLE_EQ(g.branches[0].tap, 1.0);
  EXPECT_DOUBLE_EQ(g.gens[0].pmax, 2.0);
  EXPECT_EQ(g.gens[0].cost, (std::array<double, 3>{0.01, 20, 5}));
}

TEST(Matpower, MissingGencostDefaultsToLinearUnitCost) {
  std::string text = kTinyCase;
  text = text.substr(0, text.find("mpc.gencost"));
  const GridCase g = ParseMatpower(CaseDocument::FromText(text));
  EXPECT_EQ(g.gens[0].cost, (std::array<double, 3>{0.0, 1.0, 0.0}));
}

TEST(Matpower, MissingBusSection) {
  std::string text = kTinyCase;
  const auto start = text.find("mpc.bus");
  const auto end = text.find("mpc.gen ");
  text.erase(start, end - start);
  try {
    ParseMatpower(CaseDocument::FromText(text));
    FAIL() << "expected MissingSectionError";
  } catch (const MissingSectionError& e) {
    EXPECT_EQ(e.section(), "bus");
  }
}

TEST(Matpower, WrongColumnCountNamesTheRow) {
  const std::string text = Replace(kTinyCase, "7 1 50 10 0 0 1 1 0 230 1 1.1 0.9;", "7 1 50 10;");
  try {
    ParseMatpower(CaseDocument::FromText(text));
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(e.location().find("line 6"), std::string::npos) << e.what();
  }
}

TEST(Matpower, NonNumericTokenHasPosition) {
  const std::string text = Replace(kTinyCase, "0.01 0.1 0.02", "0.01 abc 0.02");
  try {
    ParseMatpower(CaseDocument::FromText(text));
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(e.location().find("line 12, column"), std::string::npos) << e.what();
  }
}

TEST(Matpower, NonContiguousIdsMapToDenseIndices) {
  const GridCase g = ParseMatpower(CaseDocument::FromText(kTinyCase));
  EXPECT_EQ(g.IndexOfBusId(7), 1);
  EXPECT_FALSE(g.IndexOfBusId(2).has_value());
}

TEST(JsonCase, RoundTripIsIdentity) {
  for (const char* name : {"case9", "case57", "case300"}) {
    const GridCase g = LoadCase(name);
    const std::string text = WriteJsonCase(g);
    const GridCase back =
        ParseJsonCase(CaseDocument{CaseFormat::kCanonicalJson, text, name});
    EXPECT_EQ(back, g) << name;
    EXPECT_EQ(WriteJsonCase(back), text) << name;
  }
}

TEST(JsonCase, ToyRoundTripKeepsEveryField) {
  GridCase g = reference::ToyCase();
  g.branches[2].in_service = false;
  g.branches[0].angmin = -0.5;
  g.branches[0].angmax = 0.6;
  const GridCase back = ParseCase(CaseDocument::FromText(WriteJsonCase(g)));
  EXPECT_EQ(back, g);
}

TEST(JsonCase, CrossFormatAgreement) {
  const GridCase m = LoadCase("case30");
  const GridCase j = ParseCase(CaseDocument::FromText(WriteJsonCase(m)));
  EXPECT_EQ(j.num_branches(), 41);
  EXPECT_EQ(j, m);
  EXPECT_EQ(CaseHash(j), CaseHash(m));
}

TEST(JsonCase, CrossedVoltageLimitsNameTheBus) {
  GridCase g = LoadCase("case9");
  const std::string text = Replace(WriteJsonCase(g), "\"vmin\": 0.9", "\"vmin\": 1.5");
  try {
    ParseCase(CaseDocument::FromText(text));
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("bus 1"), std::string::npos) << e.what();
  }
}

TEST(JsonCase, DuplicateBusIdRejected) {
  GridCase g = reference::ToyCase();
  g.buses[3].id = 10;
  EXPECT_THROW(ParseCase(CaseDocument::FromText(WriteJsonCase(g))), ValidationError);
}

TEST(JsonCase, SchemaViolationCarriesFieldPath) {
  const std::string text =
      Replace(WriteJsonCase(reference::ToyCase()), "\"vmax\": 1.06", "\"vmax\": \"high\"");
  try {
    ParseCase(CaseDocument::FromText(text));
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.location(), "buses[0].vmax");
  }
}

TEST(JsonCase, MissingKeyCarriesFieldPath) {
  const std::string text = Replace(WriteJsonCase(reference::ToyCase()), "\"base_mva\"", "\"base\"");
  EXPECT_THROW(ParseCase(CaseDocument::FromText(text)), ParseError);
}

TEST(CaseDocument, FormatFromExtensionAndSniffing) {
  const auto dir = reference::ScratchDir("case_io");
  const auto path = dir / "tiny.m";
  std::ofstream(path) << kTinyCase;
  EXPECT_EQ(CaseDocument::FromFile(path).format, CaseFormat::kMatpower);
  EXPECT_EQ(CaseDocument::FromText("  {\"x\": 1}").format, CaseFormat::kCanonicalJson);
  EXPECT_EQ(CaseDocument::FromText(kTinyCase).format, CaseFormat::kMatpower);
  EXPECT_EQ(LoadCase(path.string()).num_buses(), 2);
}

TEST(CaseDocument, EmptyInputRejected) {
  EXPECT_THROW(CaseDocument::FromText(""), Error);
}

TEST(CaseHash, SensitiveToData) {
  GridCase g = LoadCase("case9");
  const auto before = CaseHash(g);
  g.branches[3].x *= 1.0 + 1e-12;
  EXPECT_NE(CaseHash(g), before);
  EXPECT_EQ(HexDigest(0xabcULL), "0000000000000abc");
}

}  // namespace
}  // namespace opfnet
