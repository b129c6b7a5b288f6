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

#include "tilestream/commands.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <exception>
#include <map>
#include <memory>
#include <sstream>
#include <thread>

#include "tilestream/binary_io.hpp"
#include "tilestream/error.hpp"
#include "tilestream/synthetic.hpp"

namespace tilestream {

namespace fs = std::filesystem;

namespace {

// Stream tags for Rng::derive so every stochastic input has its own stream.
constexpr std::uint64_t kSessionStream = 0x5E550000;
constexpr std::uint64_t kTraceStream = 0xBA4D0000;
constexpr std::uint64_t kTrainStream = 0x7EA10000;
constexpr std::uint64_t kInitStream = 0x1A170000;
constexpr std::uint64_t kVideoStream = 0x71DE0000;
constexpr std::uint64_t kHeldOutStream = 0xF17E0000;

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_text(const fs::path& path, const std::string& text, CommandResult& result) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  try {
    io::write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  } catch (const Error& e) {
    throw ConfigError(std::string("cannot write output: ") + e.what());
  }
  result.artifacts.push_back(path);
}

/// Collects every missing input before failing, so one run reports them all.
class PathCheck {
 public:
  void file(const fs::path& p, const std::string& key) {
    if (!fs::is_regular_file(p)) missing_.push_back(key + ": no such file: " + p.string());
  }
  void dir(const fs::path& p, const std::string& key) {
    if (!fs::is_directory(p)) missing_.push_back(key + ": no such directory: " + p.string());
  }
  void done() const {
    if (missing_.empty()) return;
    std::string msg = std::to_string(missing_.size()) + " input problem(s):";
    for (const auto& m : missing_) msg += "\n  " + m;
    throw ConfigError(msg);
  }

 private:
  std::vector<std::string> missing_;
};

struct NamedSession {
  std::string name;
  std::vector<ViewportSample> head;
  std::vector<SaliencyMap> maps;
};

struct NamedTrace {
  std::string name;
  BandwidthTrace trace;
};

void check_session_inputs(const ExperimentConfig& cfg, PathCheck& check) {
  if (cfg.sessions_source != "files") return;
  for (const auto& p : cfg.head_traces) check.file(p, "sessions.heads");
  for (const auto& p : cfg.saliency_dirs) check.dir(p, "sessions.saliency");
}

void check_trace_inputs(const ExperimentConfig& cfg, PathCheck& check) {
  for (const auto& t : cfg.traces)
    if (t != "synthetic") check.file(t, "bandwidth.traces");
}

void check_convlstm_input(const ExperimentConfig& cfg, PathCheck& check) {
  if (std::find(cfg.predictors.begin(), cfg.predictors.end(), "convlstm") == cfg.predictors.end()) return;
  if (cfg.convlstm_checkpoint.empty())
    throw ConfigError("sweep.predictors includes convlstm but convlstm.checkpoint is not set (run train first)");
  check.file(cfg.convlstm_checkpoint, "convlstm.checkpoint");
}

PlantedSessionConfig planted_config(const ExperimentConfig& cfg, double duration) {
  const auto [h, w] = downsampled_shape(cfg.session.grid, cfg.session.ratio);
  PlantedSessionConfig pc;
  pc.duration_s = duration;
  pc.chunk_length_s = cfg.session.chunk_length_s;
  pc.map_height = h;
  pc.map_width = w;
  return pc;
}

std::vector<SaliencyMap> load_saliency_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".salmap" || ext == ".csv")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError(dir.string() + ": no .salmap or .csv saliency maps");
  std::vector<SaliencyMap> maps;
  for (const auto& f : files)
    maps.push_back(f.extension() == ".salmap" ? load_saliency(f) : parse_saliency_csv(io::read_text_file(f), f.string()));
  return maps;
}

std::vector<NamedSession> load_sessions(const ExperimentConfig& cfg) {
  std::vector<NamedSession> out;
  if (cfg.sessions_source == "synthetic") {
    const PlantedSessionConfig pc = planted_config(cfg, cfg.synthetic_duration_s);
    for (std::size_t i = 0; i < cfg.synthetic_sessions; ++i) {
      PlantedSession s = generate_planted_session(pc, Rng::derive(cfg.seed, kSessionStream + i).next());
      out.push_back({"synthetic-" + std::to_string(i), std::move(s.head), std::move(s.chunk_saliency)});
    }
    return out;
  }
  for (std::size_t i = 0; i < cfg.head_traces.size(); ++i)
    out.push_back({cfg.head_traces[i].stem().string(), load_head_trace(cfg.head_traces[i]),
                   load_saliency_dir(cfg.saliency_dirs[i])});
  return out;
}

std::vector<NamedTrace> load_traces(const ExperimentConfig& cfg, double session_seconds) {
  std::vector<NamedTrace> out;
  for (std::size_t i = 0; i < cfg.traces.size(); ++i) {
    if (cfg.traces[i] == "synthetic") {
      BandwidthTraceConfig bc;
      bc.duration_s = session_seconds + 60.0;
      bc.mean_mbps = cfg.synthetic_mean_mbps;
      bc.volatility = cfg.synthetic_volatility;
      BandwidthTrace t(generate_bandwidth_points(bc, Rng::derive(cfg.seed, kTraceStream + i).next()));
      out.push_back({"synthetic-" + std::to_string(i), t.scaled(cfg.bandwidth_scale)});
    } else {
      out.push_back({fs::path(cfg.traces[i]).stem().string(),
                     load_bandwidth_trace(cfg.traces[i]).scaled(cfg.bandwidth_scale)});
    }
  }
  return out;
}

CheckpointMetadata convlstm_metadata(const ConvLstmConfig& c) {
  return {{"grid_rows", double(c.grid.rows)}, {"grid_cols", double(c.grid.cols)},
          {"map_height", double(c.map_height)}, {"map_width", double(c.map_width)},
          {"cells", double(c.cells)}, {"hidden", double(c.hidden)},
          {"kernel", double(c.kernel)}, {"se_reduction", double(c.se_reduction)},
          {"window", double(c.window)}};
}

ConvLstm load_convlstm(const ExperimentConfig& cfg) {
  const ConvLstmConfig want = cfg.convlstm_config();
  CheckpointMetadata meta;
  ParameterSet params = load_checkpoint(cfg.convlstm_checkpoint, &meta);
  for (const auto& [key, value] : convlstm_metadata(want)) {
    const auto it = meta.find(key);
    if (it != meta.end() && it->second != value)
      throw ConfigError(cfg.convlstm_checkpoint.string() + ": checkpoint " + key + " = " + fmt(it->second) +
                        " but the config implies " + fmt(value));
  }
  try {
    return ConvLstm(want, std::move(params));
  } catch (const InvalidArgument& e) {
    throw ConfigError(cfg.convlstm_checkpoint.string() + ": checkpoint does not match the convlstm topology: " + e.what());
  }
}

std::unique_ptr<ViewportPredictor> make_predictor(const std::string& name, const ExperimentConfig& cfg) {
  if (name == "lr") return std::make_unique<LinearRegressionPredictor>();
  if (name == "oracle") return std::make_unique<OraclePredictor>();
  if (name == "zero") return std::make_unique<ConstantPredictor>(0.0);
  if (name == "convlstm") return std::make_unique<ConvLstmPredictor>(load_convlstm(cfg));
  throw ConfigError("unknown predictor '" + name + "'");
}

double session_seconds(const std::vector<NamedSession>& sessions, double chunk_length) {
  std::size_t chunks = 0;
  for (const auto& s : sessions) chunks = std::max(chunks, s.maps.size());
  return static_cast<double>(chunks) * chunk_length;
}

/// Runs `jobs` tasks on `workers` threads. The first failure by job index is
/// rethrown after all threads finish.
template <typename F>
void parallel_for(std::size_t jobs, std::size_t workers, F&& body) {
  std::vector<std::exception_ptr> errors(jobs);
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      try {
        body(j);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(workers, jobs));
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < n; ++i) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string safe_name(std::string s) {
  for (char& ch : s)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.')) ch = '_';
  return s;
}

}  // namespace

CommandResult cmd_simulate(const ExperimentConfig& cfg) {
  cfg.validate();
  PathCheck check;
  check_session_inputs(cfg, check);
  check_trace_inputs(cfg, check);
  check_convlstm_input(cfg, check);
  check.done();

  const auto sessions = load_sessions(cfg);
  const auto traces = load_traces(cfg, session_seconds(sessions, cfg.session.chunk_length_s));
  std::vector<std::unique_ptr<ViewportPredictor>> predictors;
  for (const auto& p : cfg.predictors) predictors.push_back(make_predictor(p, cfg));

  struct Job {
    std::size_t session, trace, predictor, abr;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < sessions.size(); ++s)
    for (std::size_t t = 0; t < traces.size(); ++t)
      for (std::size_t p = 0; p < predictors.size(); ++p)
        for (std::size_t a = 0; a < cfg.abrs.size(); ++a) jobs.push_back({s, t, p, a});

  std::vector<SessionLog> logs(jobs.size());
  parallel_for(jobs.size(), cfg.workers, [&](std::size_t j) {
    SessionConfig sc = cfg.session;
    sc.abr = cfg.abrs[jobs[j].abr];
    const NamedSession& s = sessions[jobs[j].session];
    logs[j] = simulate_session({s.head, s.maps, &traces[jobs[j].trace].trace}, *predictors[jobs[j].predictor], sc);
  });

  CommandResult result;
  const std::vector<std::string> keys = {"session", "trace", "predictor", "abr"};
  std::string summary = std::string(kSummarySchema) + "\n" + summary_csv_header(keys);
  // metric -> (predictor, abr) -> values, for the plot data.
  std::map<std::pair<std::size_t, std::size_t>, std::vector<SessionSummary>> groups;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const Job& job = jobs[j];
    const std::vector<std::string> values = {sessions[job.session].name, traces[job.trace].name,
                                             cfg.predictors[job.predictor], abr_name(cfg.abrs[job.abr])};
    const SessionSummary sum = aggregate_metrics(logs[j]);
    summary += summary_csv_row(values, sum);
    groups[{job.predictor, job.abr}].push_back(sum);
    std::string file;
    for (std::size_t i = 0; i < values.size(); ++i) file += (i ? "_" : "") + safe_name(values[i]);
    write_text(cfg.output_dir / "sessions" / (file + ".csv"), format_session_csv(logs[j]), result);
  }
  write_text(cfg.output_dir / "summary.csv", summary, result);

  struct Metric {
    const char* name;
    double SessionSummary::*field;
  };
  const Metric metrics[] = {{"avg_quality_level", &SessionSummary::avg_quality_level},
                            {"quality_level_change", &SessionSummary::quality_level_change},
                            {"rebuffer_total_s", &SessionSummary::rebuffer_total_s},
                            {"bandwidth_total_mbit", &SessionSummary::bandwidth_total_mbit},
                            {"mean_accuracy", &SessionSummary::mean_accuracy},
                            {"mean_f1", &SessionSummary::mean_f1},
                            {"mean_objective", &SessionSummary::mean_objective}};
  std::string plot = std::string(kPlotSchema) + "\nmetric,predictor,abr,runs,mean\n";
  for (const auto& m : metrics)
    for (const auto& [key, sums] : groups) {
      double total = 0.0;
      for (const auto& s : sums) total += s.*(m.field);
      plot += std::string(m.name) + "," + cfg.predictors[key.first] + "," + abr_name(cfg.abrs[key.second]) + "," +
              std::to_string(sums.size()) + "," + fmt(total / static_cast<double>(sums.size())) + "\n";
    }
  write_text(cfg.output_dir / "plot_data.csv", plot, result);

  std::ostringstream report;
  report << "simulated " << jobs.size() << " run(s): " << sessions.size() << " session(s) x " << traces.size()
         << " trace(s) x " << predictors.size() << " predictor(s) x " << cfg.abrs.size() << " abr(s)\n";
  for (const auto& [key, sums] : groups) {
    double q = 0.0, qlc = 0.0, reb = 0.0;
    for (const auto& s : sums) {
      q += s.avg_quality_level;
      qlc += s.quality_level_change;
      reb += s.rebuffer_total_s;
    }
    const double n = static_cast<double>(sums.size());
    char line[256];
    std::snprintf(line, sizeof line, "  %-9s %-4s avg_quality %.4f  quality_change %.4f  rebuffer_s %.4f\n",
                  cfg.predictors[key.first].c_str(), abr_name(cfg.abrs[key.second]).c_str(), q / n, qlc / n, reb / n);
    report << line;
  }
  result.report = report.str();
  return result;
}

CommandResult cmd_train(const ExperimentConfig& cfg) {
  cfg.validate();
  PathCheck check;
  check_session_inputs(cfg, check);
  check.done();

  // Synthetic training uses its own long planted session; file sessions are
  // used as given.
  std::vector<NamedSession> sessions;
  if (cfg.sessions_source == "synthetic") {
    PlantedSession s = generate_planted_session(planted_config(cfg, cfg.train_duration_s),
                                                Rng::derive(cfg.seed, kTrainStream).next());
    sessions.push_back({"train", std::move(s.head), std::move(s.chunk_saliency)});
  } else {
    sessions = load_sessions(cfg);
  }
  const ConvLstmConfig mc = cfg.convlstm_config();
  std::vector<TrainingExample> examples;
  for (const auto& s : sessions) {
    const auto maps = prepare_saliency(s.maps, cfg.session.grid, cfg.session.ratio);
    if (maps.size() < 2) throw DataError("session " + s.name + " has fewer than two chunks");
    const WindowSource source{s.head, maps, cfg.session.chunk_length_s};
    auto ex = make_chunk_examples(source, 1, maps.size() - 1, cfg.session.sf, mc.window, mc.grid, cfg.session.fov);
    examples.insert(examples.end(), std::make_move_iterator(ex.begin()), std::make_move_iterator(ex.end()));
  }
  const auto held = static_cast<std::size_t>(cfg.train_holdout * static_cast<double>(examples.size()));
  if (examples.size() - held == 0) throw DataError("no training examples left after the holdout split");
  const std::span<const TrainingExample> train(examples.data(), examples.size() - held);
  const std::span<const TrainingExample> holdout(examples.data() + train.size(), held);

  const ConvLstm init = ConvLstm::initialize(mc, Rng::derive(cfg.seed, kInitStream).next());
  TrainOptions opts;
  opts.epochs = cfg.train_epochs;
  opts.batch_size = cfg.train_batch;
  opts.optimizer.learning_rate = cfg.train_learning_rate;
  opts.seed = Rng::derive(cfg.seed, kTrainStream + 1).next();
  std::vector<double> held_loss;
  opts.on_epoch = [&](std::size_t, const ParameterSet& p) {
    held_loss.push_back(holdout.empty() ? 0.0 : mean_bce(ConvLstm(mc, p), holdout));
  };
  const TrainReport rep = train_convlstm(init, train, opts);

  CommandResult result;
  const fs::path ckpt = cfg.convlstm_checkpoint.empty() ? cfg.output_dir / "convlstm.ckpt" : cfg.convlstm_checkpoint;
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  CheckpointMetadata meta = convlstm_metadata(mc);
  meta["epochs"] = static_cast<double>(cfg.train_epochs);
  meta["seed"] = static_cast<double>(cfg.seed);
  save_checkpoint(ckpt, rep.params, meta);
  result.artifacts.push_back(ckpt);

  std::string curve = std::string(kCurveSchema) + "\nepoch,train_loss,query_loss\n";
  for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e)
    curve += std::to_string(e + 1) + "," + fmt(rep.epoch_loss[e]) + "," + fmt(held_loss[e]) + "\n";
  write_text(cfg.output_dir / "train_curve.csv", curve, result);

  std::ostringstream report;
  report << "trained convlstm on " << train.size() << " example(s), " << holdout.size() << " held out\n"
         << "  initial loss " << rep.initial_loss << ", final train loss " << rep.epoch_loss.back();
  if (!holdout.empty()) report << ", held-out loss " << held_loss.back();
  report << "\n  checkpoint " << ckpt.string() << "\n";
  result.report = report.str();
  return result;
}

namespace {

SaliencyNet make_saliency_net(const ExperimentConfig& cfg) {
  SaliencyNetConfig nc;
  nc.height = cfg.meta_height;
  nc.width = cfg.meta_width;
  return SaliencyNet(nc);
}

SaliencyVideoConfig video_config(const ExperimentConfig& cfg) {
  SaliencyVideoConfig vc;
  vc.videos = cfg.meta_videos;
  vc.frames = cfg.meta_frames;
  vc.height = cfg.meta_height;
  vc.width = cfg.meta_width;
  return vc;
}

void check_task_shapes(const std::vector<SaliencyTask>& tasks, const ExperimentConfig& cfg, const fs::path& dir) {
  std::vector<std::string> problems;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto check = [&](const SaliencySample& s, const char* split) {
      const auto& shape = s.features.shape();
      if (shape.size() != 3 || shape[0] != 1 || shape[1] != cfg.meta_height || shape[2] != cfg.meta_width ||
          s.target.height() != cfg.meta_height || s.target.width() != cfg.meta_width)
        problems.push_back("task " + std::to_string(t) + " " + split + ": shape does not match meta.height x meta.width");
    };
    if (tasks[t].support.empty() || tasks[t].query.empty())
      problems.push_back("task " + std::to_string(t) + ": empty support or query split");
    for (const auto& s : tasks[t].support) check(s, "support");
    for (const auto& s : tasks[t].query) check(s, "query");
  }
  if (tasks.empty()) problems.push_back("no tasks");
  if (problems.empty()) return;
  std::string msg = dir.string() + ": " + std::to_string(problems.size()) + " dataset problem(s):";
  for (std::size_t i = 0; i < problems.size() && i < 20; ++i) msg += "\n  " + problems[i];
  throw DataError(msg);
}

std::vector<MetaCurvePoint> read_meta_curve(const fs::path& path, std::size_t keep) {
  if (!fs::is_regular_file(path)) throw DataError(path.string() + ": resume needs the companion curve file");
  std::istringstream in(io::read_text_file(path));
  std::string line;
  std::vector<MetaCurvePoint> out;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    const auto f = io::split(line, ',');
    if (f.size() != 3) throw DataError(path.string() + ": malformed curve row '" + line + "'");
    MetaCurvePoint p{static_cast<std::size_t>(io::parse_int(f[0], path.string())), io::parse_double(f[1], path.string()),
                     io::parse_double(f[2], path.string())};
    if (p.iteration <= keep) out.push_back(p);
  }
  if (out.size() != keep) throw DataError(path.string() + ": curve has " + std::to_string(out.size()) +
                                          " rows, checkpoint says " + std::to_string(keep));
  return out;
}

std::string format_meta_curve(const std::vector<MetaCurvePoint>& curve) {
  std::string out = std::string(kCurveSchema) + "\niteration,support_loss,query_loss\n";
  for (const auto& p : curve) out += std::to_string(p.iteration) + "," + fmt(p.support_loss) + "," + fmt(p.query_loss) + "\n";
  return out;
}

}  // namespace

CommandResult cmd_meta_train(const ExperimentConfig& cfg) {
  cfg.validate();
  PathCheck check;
  if (!cfg.meta_tasks.empty()) check.dir(cfg.meta_tasks, "meta.tasks");
  if (!cfg.meta_resume.empty()) check.file(cfg.meta_resume, "meta.resume");
  check.done();

  const SaliencyNet net = make_saliency_net(cfg);
  std::vector<SaliencyTask> dataset;
  std::unique_ptr<SyntheticSaliencyVideos> videos;
  if (!cfg.meta_tasks.empty()) {
    dataset = load_task_dataset(cfg.meta_tasks);
    check_task_shapes(dataset, cfg, cfg.meta_tasks);
  } else {
    videos = std::make_unique<SyntheticSaliencyVideos>(video_config(cfg), Rng::derive(cfg.seed, kVideoStream).next());
  }
  const std::size_t batch = cfg.meta.task_batch;
  TaskSampler sampler = [&](std::uint64_t seed, std::size_t it) {
    Rng rng = Rng::derive(seed, it);
    std::vector<SaliencyTask> out;
    for (std::size_t i = 0; i < batch; ++i) {
      if (videos) {
        const std::size_t v = rng.index(videos->video_count());
        out.push_back(make_saliency_task(*videos, v, rng));
      } else {
        out.push_back(dataset[rng.index(dataset.size())]);
      }
    }
    return out;
  };

  ParameterSet theta;
  std::size_t start = 0;
  std::vector<MetaCurvePoint> curve;
  if (!cfg.meta_resume.empty()) {
    CheckpointMetadata meta;
    theta = load_checkpoint(cfg.meta_resume, &meta);
    const auto it = meta.find("iterations");
    if (it == meta.end()) throw DataError(cfg.meta_resume.string() + ": not a meta checkpoint (no iterations)");
    for (const char* key : {"alpha", "beta", "inner_steps", "task_batch", "seed"}) {
      const double want = key == std::string("alpha")         ? cfg.meta.alpha
                          : key == std::string("beta")        ? cfg.meta.beta
                          : key == std::string("inner_steps") ? double(cfg.meta.inner_steps)
                          : key == std::string("task_batch")  ? double(cfg.meta.task_batch)
                                                              : double(cfg.seed);
      const auto m = meta.find(key);
      if (m != meta.end() && m->second != want)
        throw ConfigError(cfg.meta_resume.string() + ": checkpoint was trained with " + key + " = " + fmt(m->second) +
                          ", config has " + fmt(want));
    }
    start = static_cast<std::size_t>(it->second);
    if (start > cfg.meta.meta_iterations)
      throw ConfigError("meta.iterations (" + std::to_string(cfg.meta.meta_iterations) +
                        ") is below the checkpoint's " + std::to_string(start));
    curve = read_meta_curve(fs::path(cfg.meta_resume.string() + ".curve.csv"), start);
  } else {
    Rng rng = Rng::derive(cfg.seed, kInitStream);
    theta = net.init_params(rng);
  }
  const MetaTrainResult res = meta_train(net, std::move(theta), sampler, cfg.meta, cfg.seed, start);
  curve.insert(curve.end(), res.curve.begin(), res.curve.end());

  CommandResult result;
  const fs::path ckpt = cfg.meta_checkpoint.empty() ? cfg.output_dir / "meta.ckpt" : cfg.meta_checkpoint;
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  CheckpointMetadata meta = meta_checkpoint_metadata(cfg.meta, res.iterations_done, cfg.seed);
  meta["height"] = static_cast<double>(cfg.meta_height);
  meta["width"] = static_cast<double>(cfg.meta_width);
  save_checkpoint(ckpt, res.params, meta);
  result.artifacts.push_back(ckpt);
  const std::string text = format_meta_curve(curve);
  write_text(fs::path(ckpt.string() + ".curve.csv"), text, result);
  write_text(cfg.output_dir / "meta_curve.csv", text, result);

  std::ostringstream report;
  report << "meta-trained iterations " << start << ".." << res.iterations_done;
  if (!curve.empty()) report << ", final query loss " << curve.back().query_loss;
  report << "\n  checkpoint " << ckpt.string() << "\n";
  result.report = report.str();
  return result;
}

CommandResult cmd_finetune(const ExperimentConfig& cfg) {
  cfg.validate();
  PathCheck check;
  if (!cfg.finetune_init.empty()) check.file(cfg.finetune_init, "finetune.init");
  if (!cfg.meta_tasks.empty()) check.dir(cfg.meta_tasks, "meta.tasks");
  check.done();

  const SaliencyNet net = make_saliency_net(cfg);
  SaliencyTask task;
  if (!cfg.meta_tasks.empty()) {
    auto tasks = load_task_dataset(cfg.meta_tasks);
    check_task_shapes(tasks, cfg, cfg.meta_tasks);
    if (cfg.finetune_video >= tasks.size())
      throw ConfigError("finetune.video = " + std::to_string(cfg.finetune_video) + " but the dataset has " +
                        std::to_string(tasks.size()) + " task(s)");
    task = std::move(tasks[cfg.finetune_video]);
    if (cfg.finetune_support > task.support.size())
      throw ConfigError("finetune.support exceeds the task's " + std::to_string(task.support.size()) + " support samples");
    task.support.resize(cfg.finetune_support);
  } else {
    // A fresh video family the meta-learner never saw.
    const SyntheticSaliencyVideos held(video_config(cfg), Rng::derive(cfg.seed, kHeldOutStream).next());
    const std::size_t v = cfg.finetune_video;
    const std::size_t want = std::min(cfg.finetune_support + kQuerySize, held.frame_count(v));
    std::vector<std::size_t> order(held.frame_count(v));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = Rng::derive(cfg.seed, kHeldOutStream + 1);
    rng.shuffle(order.begin(), order.end());
    for (std::size_t i = 0; i < want; ++i)
      (i < cfg.finetune_support ? task.support : task.query).push_back(held.frame(v, order[i]));
  }

  ParameterSet init;
  if (!cfg.finetune_init.empty()) {
    CheckpointMetadata meta;
    init = load_checkpoint(cfg.finetune_init, &meta);
    for (const auto& [key, want] : {std::pair{"height", cfg.meta_height}, std::pair{"width", cfg.meta_width}}) {
      const auto m = meta.find(key);
      if (m != meta.end() && m->second != double(want))
        throw ConfigError(cfg.finetune_init.string() + ": checkpoint " + key + " = " + fmt(m->second) +
                          ", config has " + std::to_string(want));
    }
    Rng probe(0);
    const ParameterSet shape = net.init_params(probe);
    bool ok = shape.size() == init.size();
    for (std::size_t i = 0; ok && i < shape.size(); ++i)
      ok = shape.name(i) == init.name(i) && shape[i].shape() == init[i].shape();
    if (!ok) throw ConfigError(cfg.finetune_init.string() + ": checkpoint does not match the saliency network");
  } else {
    Rng rng = Rng::derive(cfg.seed, kInitStream + 1);
    init = net.init_params(rng);
  }
  const auto ft = fine_tune<SaliencySample>(init, task.support, task.query, net.loss_fn(), cfg.finetune_learning_rate,
                                            cfg.finetune_epochs);

  CommandResult result;
  const fs::path ckpt = cfg.output_dir / "finetune.ckpt";
  fs::create_directories(cfg.output_dir);
  save_checkpoint(ckpt, ft.params,
                  {{"epochs", double(cfg.finetune_epochs)}, {"support", double(task.support.size())},
                   {"height", double(cfg.meta_height)}, {"width", double(cfg.meta_width)}});
  result.artifacts.push_back(ckpt);
  std::string curve = std::string(kCurveSchema) + "\nepoch,train_loss,query_loss\n";
  for (std::size_t e = 1; e <= cfg.finetune_epochs; ++e)
    curve += std::to_string(e) + "," + fmt(ft.support_loss[e]) + "," + fmt(ft.query_loss[e]) + "\n";
  write_text(cfg.output_dir / "finetune_curve.csv", curve, result);

  std::ostringstream report;
  report << "fine-tuned " << (cfg.finetune_init.empty() ? "random init" : cfg.finetune_init.string()) << " on "
         << task.support.size() << " support sample(s) for " << cfg.finetune_epochs << " epoch(s)\n"
         << "  query loss " << ft.query_loss.front() << " -> " << ft.query_loss.back() << "\n";
  result.report = report.str();
  return result;
}

CommandResult cmd_eval_predictor(const ExperimentConfig& cfg) {
  cfg.validate();
  PathCheck check;
  check_session_inputs(cfg, check);
  check_convlstm_input(cfg, check);
  check.done();

  const auto sessions = load_sessions(cfg);
  std::vector<std::unique_ptr<ViewportPredictor>> predictors;
  for (const auto& p : cfg.predictors) predictors.push_back(make_predictor(p, cfg));

  std::vector<std::vector<PredictionMetrics>> rows(predictors.size() * sessions.size());
  parallel_for(rows.size(), cfg.workers, [&](std::size_t j) {
    const NamedSession& s = sessions[j % sessions.size()];
    rows[j] = evaluate_prediction(s.head, s.maps, *predictors[j / sessions.size()], cfg.session);
  });

  const auto mean = [](const std::vector<PredictionMetrics>& m) {
    PredictionMetrics out;
    for (const auto& x : m) {
      out.accuracy += x.accuracy;
      out.precision += x.precision;
      out.recall += x.recall;
      out.f1 += x.f1;
    }
    const double n = static_cast<double>(m.size());
    return PredictionMetrics{out.accuracy / n, out.precision / n, out.recall / n, out.f1 / n};
  };
  const auto row = [](const std::string& p, const std::string& s, std::size_t chunks, const PredictionMetrics& m) {
    return p + "," + s + "," + std::to_string(chunks) + "," + fmt(m.accuracy) + "," + fmt(m.precision) + "," +
           fmt(m.recall) + "," + fmt(m.f1) + "\n";
  };
  std::string csv = std::string(kMetricsSchema) + "\npredictor,session,chunks,accuracy,precision,recall,f1\n";
  std::ostringstream report;
  for (std::size_t p = 0; p < predictors.size(); ++p) {
    std::vector<PredictionMetrics> all;
    for (std::size_t s = 0; s < sessions.size(); ++s) {
      const auto& r = rows[p * sessions.size() + s];
      csv += row(cfg.predictors[p], sessions[s].name, r.size(), mean(r));
      all.insert(all.end(), r.begin(), r.end());
    }
    const PredictionMetrics agg = mean(all);
    csv += row(cfg.predictors[p], "all", all.size(), agg);
    char line[200];
    std::snprintf(line, sizeof line, "  %-9s accuracy %.4f  precision %.4f  recall %.4f  f1 %.4f\n",
                  cfg.predictors[p].c_str(), agg.accuracy, agg.precision, agg.recall, agg.f1);
    report << line;
  }
  CommandResult result;
  write_text(cfg.output_dir / "metrics.csv", csv, result);
  result.report = "evaluated " + std::to_string(predictors.size()) + " predictor(s) on " +
                  std::to_string(sessions.size()) + " session(s)\n" + report.str();
  return result;
}

CommandResult cmd_plan(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.plan_measurements.empty()) throw ConfigError("plan.measurements is not set");
  PathCheck check;
  check.file(cfg.plan_measurements, "plan.measurements");
  check.done();

  const MeasurementTable table = load_measurements(cfg.plan_measurements);
  const TimeModel model = fit_time_model(table, cfg.plan_reference_sf);
  std::ostringstream report;
  report << "time model T = a*sf*(c_r + d*ratio) + b fitted on " << model.fit_points << " point(s)\n"
         << "  a " << model.a << "  c_r " << model.c_r << "  d " << model.d << "  b " << model.b << "  residual "
         << model.fit_residual << "\n";
  const OverheadPlan plan = plan_overheads(model, cfg.session.chunk_length_s, cfg.plan_sf_grid, cfg.plan_ratio);
  report << "  chunk length " << cfg.session.chunk_length_s << " s, ratio " << plan.ratio << ": sf " << plan.sf
         << " (predicted " << plan.predict_time_s << " s)\n";

  CommandResult result;
  std::string csv = std::string(kPlanSchema) + "\nsf,ratio,predict_time_s,chunk_length_s,a,c_r,d,b,fit_residual\n";
  csv += fmt(plan.sf) + "," + fmt(plan.ratio) + "," + fmt(plan.predict_time_s) + "," + fmt(cfg.session.chunk_length_s) +
         "," + fmt(model.a) + "," + fmt(model.c_r) + "," + fmt(model.d) + "," + fmt(model.b) + "," +
         fmt(model.fit_residual) + "\n";
  write_text(cfg.output_dir / "plan.csv", csv, result);
  result.report = report.str();
  return result;
}

CommandResult cmd_convert_trace(const fs::path& input, const fs::path& output, double scale) {
  if (!(scale > 0.0)) throw ConfigError("scale must be > 0");
  if (!fs::is_regular_file(input)) throw ConfigError("no such file: " + input.string());
  const BandwidthTrace trace = load_bandwidth_trace(input).scaled(scale);
  CommandResult result;
  write_text(output, std::string(kTraceSchema) + "\n" + format_bandwidth_trace(trace), result);
  result.report = "wrote " + std::to_string(trace.points().size()) + " point(s) to " + output.string() + "\n";
  return result;
}

std::vector<std::string> command_names() {
  return {"simulate", "train", "meta-train", "finetune", "eval-predictor", "plan"};
}

CommandResult run_command(const std::string& name, const ExperimentConfig& config) {
  if (name == "simulate") return cmd_simulate(config);
  if (name == "train") return cmd_train(config);
  if (name == "meta-train") return cmd_meta_train(config);
  if (name == "finetune") return cmd_finetune(config);
  if (name == "eval-predictor") return cmd_eval_predictor(config);
  if (name == "plan") return cmd_plan(config);
  throw ConfigError("unknown command '" + name + "'");
}

}  // namespace tilestream
