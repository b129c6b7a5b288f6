// Copyright 2026 The tilestream Authors
//
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

#include <string>

#include "doctest.h"
#include "tilestream/config.hpp"
#include "tilestream/error.hpp"

using namespace tilestream;

namespace {

ExperimentConfig from_text(const std::string& text, std::vector<std::string> overrides = {}) {
  auto entries = parse_config_text(text, "t.ini", "/base");
  for (const auto& o : overrides) entries.push_back(parse_override(o));
  ExperimentConfig c;
  apply_entries(c, entries);
  return c;
}

std::string error_of(const std::string& text) {
  try {
    from_text(text).validate();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("sections, comments and typed values") {
  const ExperimentConfig c = from_text(
      "# leading comment\n"
      "[experiment]\n"
      "seed = 42   ; trailing comment\n"
      "\n"
      "[session]\n"
      "grid_rows = 6\n"
      "grid_cols = 12\n"
      "ladder = 1, 2, 4\n"
      "lambda = 0.75\n"
      "[sweep]\n"
      "predictors = lr, zero\n"
      "abrs = pba\n");
  CHECK(c.seed == 42);
  CHECK(c.session.grid == TileGrid(6, 12));
  CHECK(c.session.ladder.levels() == 3);
  CHECK(c.session.ladder.rate(3) == 4.0);
  CHECK(c.session.lambda == 0.75);
  CHECK(c.predictors == std::vector<std::string>{"lr", "zero"});
  REQUIRE(c.abrs.size() == 1);
  CHECK(c.abrs[0] == AbrKind::kPba);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("later entries and overrides win") {
  const ExperimentConfig c = from_text("[session]\nsf = 2\nsf = 3\n", {"session.sf=5", "experiment.workers = 3"});
  CHECK(c.session.sf == 5.0);
  CHECK(c.workers == 3);
}

TEST_CASE("relative paths resolve against the file's directory") {
  const ExperimentConfig c = from_text("[plan]\nmeasurements = ../data/m.csv\n[bandwidth]\ntraces = a.csv, synthetic\n");
  CHECK(c.plan_measurements == std::filesystem::path("/data/m.csv"));
  CHECK(c.traces == std::vector<std::string>{"/base/a.csv", "synthetic"});
  const ExperimentConfig o = from_text("", {"plan.measurements=rel/m.csv"});
  CHECK(o.plan_measurements == std::filesystem::path("rel/m.csv"));
}

TEST_CASE("errors carry file and line") {
  CHECK(error_of("[session]\nsf = 4\nlambda = two\n") == "t.ini:3: session.lambda: expected a number, got 'two'");
  CHECK(error_of("[session]\nwat = 1\n") == "t.ini:2: unknown key 'session.wat'");
  CHECK(error_of("sf = 1\n") == "t.ini:1: key 'sf' outside any section");
  CHECK(error_of("[session\n") == "t.ini:1: unterminated section header");
  CHECK(error_of("[session]\njust words\n") == "t.ini:2: expected key = value");
  CHECK(error_of("[session]\nwindow = -3\n").rfind("t.ini:2: session.window:", 0) == 0);
  CHECK(error_of("[session]\nladder = 1, , 2\n").rfind("t.ini:2: session.ladder:", 0) == 0);
  CHECK(error_of("[session]\nladder = 3, 2\n").rfind("t.ini:2: session.ladder:", 0) == 0);
  CHECK(error_of("[sweep]\nabrs = cba, mpc\n").rfind("t.ini:2: sweep.abrs:", 0) == 0);
  CHECK_THROWS_AS(parse_override("novalue"), ConfigError);
  CHECK_THROWS_AS(parse_override("nosection=1"), ConfigError);
}

TEST_CASE("validation catches inconsistent settings") {
  CHECK(error_of("[session]\np_vp = 1\n").find("p_vp") != std::string::npos);
  CHECK(error_of("[sweep]\npredictors = lr, magic\n").find("magic") != std::string::npos);
  CHECK(error_of("[sessions]\nsource = files\n").find("heads") != std::string::npos);
  CHECK(error_of("[sessions]\nsource = files\nheads = a.csv\n").find("same length") != std::string::npos);
  CHECK(error_of("[plan]\nsf_grid = 2, 1\n").find("ascending") != std::string::npos);
  CHECK(error_of("[meta]\nframes = 10\n").find("meta.frames") != std::string::npos);
  CHECK(error_of("[session]\nratio = 3\n").find("session") != std::string::npos);
  CHECK(error_of("[experiment]\nworkers = 0\n").find("workers") != std::string::npos);
  CHECK(error_of("").empty());
}

TEST_CASE("effective config lists every key and reads back to itself") {
  ExperimentConfig c = from_text("[session]\nlambda = 0.3\nladder = 1, 3.5, 9\n[meta]\nalpha = 0.125\n");
  const std::string text = format_config(c);
  for (const auto& key : config_keys()) {
    const auto dot = key.find('.');
    CHECK(text.find("[" + key.substr(0, dot) + "]") != std::string::npos);
    CHECK(text.find("\n" + key.substr(dot + 1) + " = ") != std::string::npos);
  }
  CHECK(text.find("lambda = 0.3\n") != std::string::npos);
  ExperimentConfig back;
  apply_entries(back, parse_config_text(text, "effective", ""));
  CHECK(format_config(back) == text);
  CHECK(back.meta.alpha == 0.125);
}

TEST_CASE("defaults") {
  const ExperimentConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.session.lambda == 2.0);
  CHECK(c.session.ladder.levels() == 6);
  CHECK(c.bandwidth_scale == 1.0);
  CHECK(c.finetune_epochs == 10);
  CHECK(c.finetune_support == 5);
  const ConvLstmConfig m = c.convlstm_config();
  CHECK(m.map_height == 10);
  CHECK(m.map_width == 20);
  CHECK(m.window == c.session.window);
}
