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

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include "doctest.h"
#include "tilestream/binary_io.hpp"
#include "tilestream/commands.hpp"
#include "tilestream/error.hpp"
#include "tilestream/synthetic.hpp"

using namespace tilestream;
namespace fs = std::filesystem;

namespace {

// Fresh scratch directory per test case, removed afterwards.
struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) {
    dir = fs::temp_directory_path() / ("tilestream_cmd_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
};

ExperimentConfig small(const fs::path& out) {
  ExperimentConfig c;
  c.output_dir = out;
  c.seed = 5;
  c.synthetic_sessions = 1;
  c.synthetic_duration_s = 12;
  c.predictors = {"lr"};
  c.abrs = {AbrKind::kCba};
  return c;
}

std::vector<std::string> data_lines(const fs::path& p) {
  std::istringstream in(io::read_text_file(p));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') out.push_back(line);
  return out;  // header first
}

std::vector<std::string> fields(const std::string& line) { return io::split(line, ','); }

std::size_t column(const std::vector<std::string>& header, const std::string& name) {
  const auto h = fields(header.front());
  for (std::size_t i = 0; i < h.size(); ++i)
    if (h[i] == name) return i;
  FAIL("no column " << name);
  return 0;
}

}  // namespace

TEST_CASE("simulate: minimal config writes three files, deterministically") {
  Scratch s("sim");
  const ExperimentConfig c = small(s.dir / "a");
  const CommandResult r = cmd_simulate(c);
  CHECK(r.artifacts.size() == 3);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(c.output_dir)) files += e.is_regular_file();
  CHECK(files == 3);
  for (const auto& a : r.artifacts) CHECK(io::read_text_file(a).rfind("# schema=tilestream.", 0) == 0);

  ExperimentConfig again = c;
  again.output_dir = s.dir / "b";
  cmd_simulate(again);
  CHECK(io::read_text_file(c.output_dir / "summary.csv") == io::read_text_file(again.output_dir / "summary.csv"));
  CHECK(io::read_text_file(c.output_dir / "plot_data.csv") == io::read_text_file(again.output_dir / "plot_data.csv"));
}

TEST_CASE("simulate: sweep cardinality and worker-count independence") {
  Scratch s("sweep");
  ExperimentConfig c = small(s.dir / "one");
  c.predictors = {"lr", "oracle"};
  c.abrs = {AbrKind::kCba, AbrKind::kPba};
  c.traces = {"synthetic"};
  cmd_simulate(c);
  const auto rows = data_lines(c.output_dir / "summary.csv");
  CHECK(rows.size() == 1 + 4);
  CHECK(fields(rows[1])[2] == "lr");
  CHECK(fields(rows[1])[3] == "cba");
  CHECK(fields(rows[4])[2] == "oracle");
  CHECK(fields(rows[4])[3] == "pba");
  // metric x (predictor, abr) rows in the plot data
  CHECK(data_lines(c.output_dir / "plot_data.csv").size() == 1 + 7 * 4);

  ExperimentConfig par = c;
  par.output_dir = s.dir / "par";
  par.workers = 3;
  par.synthetic_sessions = 1;
  cmd_simulate(par);
  CHECK(io::read_text_file(c.output_dir / "summary.csv") == io::read_text_file(par.output_dir / "summary.csv"));
}

TEST_CASE("simulate: trace files and scaling") {
  Scratch s("trace");
  io::write_text_file(s.dir / "flat.csv", "t_s,mbps\n0,1000\n");
  ExperimentConfig c = small(s.dir / "out");
  c.traces = {(s.dir / "flat.csv").string()};
  c.predictors = {"oracle"};
  cmd_simulate(c);
  const auto rows = data_lines(c.output_dir / "summary.csv");
  CHECK(fields(rows[1])[1] == "flat");
  CHECK(std::stod(fields(rows[1])[column(rows, "rebuffer_total_s")]) == 0.0);

  c.traces = {(s.dir / "missing.csv").string()};
  CHECK_THROWS_AS(cmd_simulate(c), ConfigError);
  c.predictors = {"convlstm"};
  CHECK_THROWS_WITH_AS(cmd_simulate(c), doctest::Contains("convlstm.checkpoint"), ConfigError);
}

TEST_CASE("simulate: head and saliency files") {
  Scratch s("files");
  ExperimentConfig c = small(s.dir / "out");
  std::ofstream(s.dir / "u1.csv") << "t,yaw,pitch\n0,0,0\n0.5,5,0\n1,10,0\n1.5,15,0\n2,20,0\n2.5,25,0\n";
  fs::create_directories(s.dir / "sal");
  for (int i = 0; i < 3; ++i) save_saliency(s.dir / "sal" / ("c" + std::to_string(i) + ".salmap"), SaliencyMap(10, 20, 1.0));
  c.sessions_source = "files";
  c.head_traces = {s.dir / "u1.csv"};
  c.saliency_dirs = {s.dir / "sal"};
  cmd_simulate(c);
  const auto rows = data_lines(c.output_dir / "summary.csv");
  CHECK(fields(rows[1])[0] == "u1");
  CHECK(fields(rows[1])[column(rows, "chunks")] == "3");

  // Every missing input is reported at once.
  c.head_traces = {s.dir / "nope1.csv", s.dir / "nope2.csv"};
  c.saliency_dirs = {s.dir / "sal", s.dir / "nodir"};
  CHECK_THROWS_WITH_AS(cmd_simulate(c), doctest::Contains("3 input problem(s)"), ConfigError);
}

TEST_CASE("meta-train: curve rows and resume equivalence") {
  Scratch s("meta");
  ExperimentConfig c = small(s.dir / "straight");
  c.meta.meta_iterations = 8;
  c.meta_videos = 6;
  cmd_meta_train(c);
  const auto curve = data_lines(c.output_dir / "meta_curve.csv");
  CHECK(curve.front() == "iteration,support_loss,query_loss");
  CHECK(curve.size() == 1 + 8);

  ExperimentConfig first = c;
  first.output_dir = s.dir / "first";
  first.meta.meta_iterations = 3;
  cmd_meta_train(first);
  ExperimentConfig rest = c;
  rest.output_dir = s.dir / "rest";
  rest.meta_resume = first.output_dir / "meta.ckpt";
  cmd_meta_train(rest);
  CHECK(io::read_file(c.output_dir / "meta.ckpt") == io::read_file(rest.output_dir / "meta.ckpt"));
  CHECK(io::read_text_file(c.output_dir / "meta_curve.csv") == io::read_text_file(rest.output_dir / "meta_curve.csv"));

  ExperimentConfig mismatched = rest;
  mismatched.meta.alpha = 0.3;
  CHECK_THROWS_AS(cmd_meta_train(mismatched), ConfigError);
}

TEST_CASE("finetune: one curve row per epoch") {
  Scratch s("ft");
  ExperimentConfig c = small(s.dir);
  c.meta.meta_iterations = 4;
  cmd_meta_train(c);
  c.finetune_init = c.output_dir / "meta.ckpt";
  c.finetune_epochs = 10;
  c.finetune_support = 5;
  cmd_finetune(c);
  const auto rows = data_lines(c.output_dir / "finetune_curve.csv");
  CHECK(rows.front() == "epoch,train_loss,query_loss");
  CHECK(rows.size() == 1 + 10);
  CHECK(fields(rows.back())[0] == "10");

  c.meta_height = 12;  // checkpoint was written for 8 x 16
  CHECK_THROWS_AS(cmd_finetune(c), ConfigError);
}

TEST_CASE("task dataset directories feed meta-train and finetune") {
  Scratch s("tasks");
  SyntheticSaliencyVideos videos(SaliencyVideoConfig{}, 3);
  Rng rng(4);
  const auto tasks = make_saliency_tasks(videos, rng);
  save_task_dataset(s.dir / "tasks", std::span(tasks).first(3));
  ExperimentConfig c = small(s.dir / "out");
  c.meta_tasks = s.dir / "tasks";
  c.meta.meta_iterations = 2;
  cmd_meta_train(c);
  c.finetune_video = 2;
  c.finetune_support = 4;
  cmd_finetune(c);
  CHECK(data_lines(c.output_dir / "finetune_curve.csv").size() == 11);
  c.finetune_video = 3;
  CHECK_THROWS_AS(cmd_finetune(c), ConfigError);
  c.meta_height = 4;
  c.finetune_video = 0;
  CHECK_THROWS_AS(cmd_meta_train(c), DataError);
}

TEST_CASE("eval-predictor: oracle, zero, and LR vs a trained ConvLSTM") {
  Scratch s("eval");
  ExperimentConfig c = small(s.dir);
  c.synthetic_sessions = 2;
  c.synthetic_duration_s = 30;
  c.train_epochs = 8;
  cmd_train(c);
  CHECK(data_lines(c.output_dir / "train_curve.csv").size() == 1 + 8);
  c.convlstm_checkpoint = c.output_dir / "convlstm.ckpt";
  c.predictors = {"oracle", "zero", "lr", "convlstm"};
  cmd_eval_predictor(c);
  const auto rows = data_lines(c.output_dir / "metrics.csv");
  REQUIRE(rows.size() == 1 + 4 * 3);
  const std::size_t acc = column(rows, "accuracy"), recall = column(rows, "recall"), f1 = column(rows, "f1");
  double lr_f1 = -1, conv_f1 = -1;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto f = fields(rows[i]);
    if (f[0] == "oracle") CHECK(std::stod(f[acc]) == 1.0);
    if (f[0] == "zero") CHECK(std::stod(f[recall]) == 0.0);
    if (f[1] == "all" && f[0] == "lr") lr_f1 = std::stod(f[f1]);
    if (f[1] == "all" && f[0] == "convlstm") conv_f1 = std::stod(f[f1]);
  }
  CHECK(fields(rows[3])[1] == "all");
  CHECK(conv_f1 >= lr_f1);

  ExperimentConfig wrong = c;
  wrong.hidden = 5;
  CHECK_THROWS_AS(cmd_eval_predictor(wrong), ConfigError);
}

TEST_CASE("plan: fitted model drives the sampling frequency") {
  Scratch s("plan");
  ExperimentConfig c = small(s.dir);
  c.plan_measurements = s.dir / "m.csv";
  c.plan_sf_grid.clear();
  for (int sf = 1; sf <= 16; ++sf) c.plan_sf_grid.push_back(sf);

  // T(sf) = 0.05 sf + 0.1 s -> 16, with T(16) = 0.9 < 1.
  io::write_text_file(c.plan_measurements, "sf,time_ms\n1,150\n2,200\n4,300\n8,500\n");
  cmd_plan(c);
  const auto rows = data_lines(c.output_dir / "plan.csv");
  REQUIRE(rows.size() == 2);
  CHECK(std::stod(fields(rows[1])[column(rows, "sf")]) == 16.0);
  const double t = std::stod(fields(rows[1])[column(rows, "predict_time_s")]);
  CHECK(t == doctest::Approx(0.9));
  CHECK(t < c.session.chunk_length_s);

  // T(sf) = 0.2 sf + 0.9 s: even sf = 1 takes 1.1 s.
  io::write_text_file(c.plan_measurements, "sf,time_ms\n1,1100\n2,1300\n3,1500\n");
  CHECK_THROWS_WITH_AS(cmd_plan(c), doctest::Contains("1.1"), InfeasibleError);

  io::write_text_file(c.plan_measurements, "sf,time_ms\n1,oops\n");
  CHECK_THROWS_AS(cmd_plan(c), DataError);
  c.plan_measurements.clear();
  CHECK_THROWS_AS(cmd_plan(c), ConfigError);
}

TEST_CASE("convert-trace rewrites and scales") {
  Scratch s("convert");
  io::write_text_file(s.dir / "lte.csv", "t_ms,bytes,ms_since_last\n1000,1250000,1000\n2000,2500000,1000\n");
  cmd_convert_trace(s.dir / "lte.csv", s.dir / "out.csv", 2.0);
  const std::string text = io::read_text_file(s.dir / "out.csv");
  CHECK(text == std::string(kTraceSchema) + "\nt_s,mbps\n0,20\n1,40\n");
  CHECK(load_bandwidth_trace(s.dir / "out.csv").mbps_at(1.5) == 40.0);
  CHECK_THROWS_AS(cmd_convert_trace(s.dir / "none.csv", s.dir / "o.csv", 1.0), ConfigError);
  CHECK_THROWS_AS(cmd_convert_trace(s.dir / "lte.csv", s.dir / "o.csv", 0.0), ConfigError);
}

TEST_CASE("run_command dispatch") {
  CHECK(command_names().size() == 6);
  CHECK_THROWS_AS(run_command("dance", ExperimentConfig{}), ConfigError);
}
