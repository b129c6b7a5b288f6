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

#include "tilestream/meta.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tilestream/binary_io.hpp"
#include "tilestream/error.hpp"

namespace tilestream {

void MetaConfig::validate(bool allow_degenerate) const {
  if (!(alpha > 0.0)) throw InvalidArgument("meta: alpha must be > 0");
  if (!(beta > 0.0)) throw InvalidArgument("meta: beta must be > 0");
  if (inner_steps == 0 && !allow_degenerate) throw InvalidArgument("meta: inner_steps must be >= 1");
  if (task_batch == 0) throw InvalidArgument("meta: task_batch must be >= 1");
  if (meta_iterations == 0) throw InvalidArgument("meta: meta_iterations must be >= 1");
}

double maml_second_order_reference(double theta, std::span<const QuadraticTask> tasks, double alpha,
                                   double beta, std::size_t inner_steps) {
  if (tasks.empty()) throw InvalidArgument("maml reference: empty task batch");
  double grad = 0.0;
  for (const QuadraticTask& task : tasks) {
    double th = theta;
    double dth = 1.0;  // d theta_j / d theta
    for (std::size_t j = 0; j < inner_steps; ++j) {
      th -= alpha * 2.0 * task.curvature * (th - task.center);
      dth *= 1.0 - 2.0 * alpha * task.curvature;
    }
    grad += 2.0 * task.curvature * (th - task.center) * dth;
  }
  return theta - beta * grad;
}

double fomaml_quadratic_reference(double theta, std::span<const QuadraticTask> tasks, double alpha,
                                  double beta, std::size_t inner_steps) {
  if (tasks.empty()) throw InvalidArgument("fomaml reference: empty task batch");
  double grad = 0.0;
  for (const QuadraticTask& task : tasks) {
    const double shrink = std::pow(1.0 - 2.0 * alpha * task.curvature, static_cast<double>(inner_steps));
    grad += 2.0 * task.curvature * shrink * (theta - task.center);
  }
  return theta - beta * grad;
}

LossFn<QuadraticTask> quadratic_loss() {
  return [](const ParameterSet& p, std::span<const QuadraticTask> tasks, Gradients* grad) {
    const double th = p.get("theta").item();
    double loss = 0.0, g = 0.0;
    for (const auto& t : tasks) {
      loss += t.curvature * (th - t.center) * (th - t.center);
      g += 2.0 * t.curvature * (th - t.center);
    }
    if (grad) *grad = {Tensor::scalar(g)};
    return loss;
  };
}

SaliencyTask make_saliency_task(const VideoFeatureSource& source, std::size_t video, Rng& rng) {
  const std::size_t need = kSupportSize + kQuerySize;
  const std::size_t frames = source.frame_count(video);
  if (frames < need)
    throw DataError("video " + std::to_string(video) + " has " + std::to_string(frames) +
                    " frames; tasks need " + std::to_string(need));
  std::vector<std::size_t> idx(frames);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx.begin(), idx.end());
  SaliencyTask task;
  for (std::size_t k = 0; k < need; ++k)
    (k < kSupportSize ? task.support : task.query).push_back(source.frame(video, idx[k]));
  return task;
}

std::vector<SaliencyTask> make_saliency_tasks(const VideoFeatureSource& source, Rng& rng) {
  std::vector<SaliencyTask> tasks;
  for (std::size_t v = 0; v < source.video_count(); ++v) tasks.push_back(make_saliency_task(source, v, rng));
  return tasks;
}

void SaliencyNetConfig::validate() const {
  if (in_channels == 0 || channels1 == 0 || channels2 == 0) throw InvalidArgument("saliency net: zero channels");
  if (kernel % 2 == 0) throw InvalidArgument("saliency net: kernel must be odd");
  if (height == 0 || width == 0 || height % 4 != 0 || width % 4 != 0)
    throw InvalidArgument("saliency net: input extents must be positive multiples of 4");
}

SaliencyNet::SaliencyNet(SaliencyNetConfig config) : config_(config) { config_.validate(); }

ParameterSet SaliencyNet::init_params(Rng& rng) const {
  const auto& c = config_;
  const std::size_t k = c.kernel, kk = k * k;
  ParameterSet p;
  p.add_uniform("enc1.k", {c.channels1, c.in_channels, k, k}, c.in_channels * kk, rng);
  p.add("enc1.b", Tensor({c.channels1}));
  p.add_uniform("enc2.k", {c.channels2, c.channels1, k, k}, c.channels1 * kk, rng);
  p.add("enc2.b", Tensor({c.channels2}));
  p.add_uniform("dec1.k", {c.channels1, c.channels2, k, k}, c.channels2 * kk, rng);
  p.add("dec1.b", Tensor({c.channels1}));
  p.add_uniform("dec2.k", {1, c.channels1, k, k}, c.channels1 * kk, rng);
  p.add("dec2.b", Tensor({1}));
  return p;
}

ad::Var SaliencyNet::forward(const BoundParameters& p, ad::Var x) const {
  const Shape expected{config_.in_channels, config_.height, config_.width};
  if (x.shape() != expected)
    throw InvalidArgument("saliency net: features " + shape_string(x.shape()) + ", expected " +
                          shape_string(expected));
  ad::Var h = ad::avg_pool(ad::relu(ad::conv2d(x, p["enc1.k"], p["enc1.b"])), 2, 2);
  h = ad::avg_pool(ad::relu(ad::conv2d(h, p["enc2.k"], p["enc2.b"])), 2, 2);
  h = ad::relu(ad::conv2d(ad::upsample_nearest(h, 2, 2), p["dec1.k"], p["dec1.b"]));
  h = ad::conv2d(ad::upsample_nearest(h, 2, 2), p["dec2.k"], p["dec2.b"]);
  return ad::softmax_all(h);
}

SaliencyMap SaliencyNet::predict(const ParameterSet& params, const Tensor& features) const {
  ad::Tape tape;
  BoundParameters p(tape, params, false);
  const Tensor& out = forward(p, tape.constant(features)).value();
  return SaliencyMap(config_.height, config_.width, out.values());
}

double SaliencyNet::loss(const ParameterSet& params, std::span<const SaliencySample> samples,
                         Gradients* grad) const {
  if (samples.empty()) throw InvalidArgument("saliency net: empty sample set");
  ad::Tape tape;
  BoundParameters p(tape, params, grad != nullptr);
  std::vector<ad::Var> losses;
  for (const auto& s : samples) {
    Tensor target({1, config_.height, config_.width},
                  std::vector<double>(s.target.values().begin(), s.target.values().end()));
    losses.push_back(ad::kl_loss(forward(p, tape.constant(s.features)), target));
  }
  ad::Var total = losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
  total = ad::scale(total, 1.0 / static_cast<double>(samples.size()));
  if (grad) {
    tape.backward(total);
    *grad = p.gradients();
  }
  return total.value().item();
}

LossFn<SaliencySample> SaliencyNet::loss_fn() const {
  return [this](const ParameterSet& params, std::span<const SaliencySample> s, Gradients* g) {
    return loss(params, s, g);
  };
}

MetaTrainResult meta_train(const SaliencyNet& net, ParameterSet theta, const TaskSampler& sampler,
                           const MetaConfig& config, std::uint64_t seed, std::size_t start_iteration) {
  config.validate();
  const auto loss = net.loss_fn();
  MetaTrainResult result;
  for (std::size_t it = start_iteration; it < config.meta_iterations; ++it) {
    const std::vector<SaliencyTask> batch = sampler(seed, it);
    if (batch.empty()) throw DataError("task sampler returned an empty batch");
    double support = 0.0;
    for (const auto& t : batch) support += net.loss(theta, t.support, nullptr);
    double query = 0.0;
    theta = fomaml_meta_step<SaliencySample>(theta, batch, loss, config, &query);
    result.curve.push_back({it + 1, support / static_cast<double>(batch.size()), query});
  }
  result.params = std::move(theta);
  result.iterations_done = std::max(start_iteration, config.meta_iterations);
  return result;
}

CheckpointMetadata meta_checkpoint_metadata(const MetaConfig& config, std::size_t iterations_done,
                                            std::uint64_t seed) {
  return {{"alpha", config.alpha},
          {"beta", config.beta},
          {"inner_steps", static_cast<double>(config.inner_steps)},
          {"task_batch", static_cast<double>(config.task_batch)},
          {"iterations", static_cast<double>(iterations_done)},
          {"seed", static_cast<double>(seed)}};
}

void save_task_dataset(const std::filesystem::path& dir, std::span<const SaliencyTask> tasks) {
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  manifest << "# schema=tilestream.tasks/1\n" << "task,split,index,features,target\n";
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    for (int split = 0; split < 2; ++split) {
      const auto& samples = split == 0 ? tasks[t].support : tasks[t].query;
      const char* name = split == 0 ? "support" : "query";
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::string stem = "t" + std::to_string(t) + "_" + name + "_" + std::to_string(i);
        ParameterSet f;
        f.add("features", samples[i].features);
        save_checkpoint(dir / (stem + ".features"), f);
        save_saliency(dir / (stem + ".salmap"), samples[i].target);
        manifest << t << ',' << name << ',' << i << ',' << stem << ".features," << stem << ".salmap\n";
      }
    }
  }
  io::write_text_file(dir / "manifest.csv", manifest.str());
}

std::vector<SaliencyTask> load_task_dataset(const std::filesystem::path& dir) {
  const std::string text = io::read_text_file(dir / "manifest.csv");
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  std::vector<SaliencyTask> tasks;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = io::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = (dir / "manifest.csv").string() + ":" + std::to_string(lineno);
    auto f = io::split(t, ',');
    if (!header) {
      if (f != std::vector<std::string>{"task", "split", "index", "features", "target"})
        throw DataError(where + ": bad manifest header");
      header = true;
      continue;
    }
    if (f.size() != 5) throw DataError(where + ": expected 5 fields");
    const auto task = static_cast<std::size_t>(io::parse_int(f[0], where));
    if (task >= tasks.size()) tasks.resize(task + 1);
    if (f[1] != "support" && f[1] != "query") throw DataError(where + ": split must be support|query");
    SaliencySample s{load_checkpoint(dir / f[3]).get("features"), load_saliency(dir / f[4])};
    (f[1] == "support" ? tasks[task].support : tasks[task].query).push_back(std::move(s));
  }
  if (!header) throw DataError(dir.string() + ": empty manifest");
  return tasks;
}

}  // namespace tilestream
