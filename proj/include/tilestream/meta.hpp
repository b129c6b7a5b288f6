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

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "tilestream/autodiff.hpp"
#include "tilestream/error.hpp"
#include "tilestream/geometry.hpp"
#include "tilestream/params.hpp"
#include "tilestream/random.hpp"

namespace tilestream {

/// Few-shot task: adapt on `support`, evaluate on `query`.
template <typename Sample>
struct Task {
  std::vector<Sample> support;
  std::vector<Sample> query;
};

/// Loss over a sample set. When `grad` is non-null it receives the gradient
/// with respect to every parameter, aligned with the ParameterSet.
template <typename Sample>
using LossFn = std::function<double(const ParameterSet&, std::span<const Sample>, Gradients*)>;

struct MetaConfig {
  double alpha = 0.05;              // inner (task) learning rate
  double beta = 0.05;               // meta learning rate
  std::size_t inner_steps = 1;      // k
  std::size_t task_batch = 4;
  std::size_t meta_iterations = 200;

  /// inner_steps == 0 is accepted only when `allow_degenerate` is set.
  void validate(bool allow_degenerate = false) const;
};

/// k full-batch gradient steps on the support set from a copy of `theta`.
template <typename Sample>
ParameterSet inner_adapt(const ParameterSet& theta, std::span<const Sample> support,
                         const LossFn<Sample>& loss, double alpha, std::size_t steps) {
  if (support.empty()) throw InvalidArgument("inner_adapt: empty support set");
  ParameterSet adapted = theta;
  for (std::size_t j = 0; j < steps; ++j) {
    Gradients g;
    loss(adapted, support, &g);
    axpy(adapted, -alpha, g);
  }
  return adapted;
}

/// Sum over tasks of the query gradient evaluated at the adapted parameters
/// (first-order approximation: no differentiation through adaptation).
template <typename Sample>
Gradients fomaml_meta_gradient(const ParameterSet& theta, std::span<const Task<Sample>> batch,
                               const LossFn<Sample>& loss, const MetaConfig& config,
                               double* mean_query_loss = nullptr) {
  if (batch.empty()) throw InvalidArgument("fomaml: empty task batch");
  Gradients total = zeros_like(theta);
  double q = 0.0;
  for (const Task<Sample>& task : batch) {
    const ParameterSet adapted = config.inner_steps == 0
                                     ? theta
                                     : inner_adapt<Sample>(theta, task.support, loss, config.alpha,
                                                           config.inner_steps);
    if (task.query.empty()) throw InvalidArgument("fomaml: empty query set");
    Gradients g;
    q += loss(adapted, task.query, &g);
    accumulate(total, g);
  }
  if (mean_query_loss) *mean_query_loss = q / static_cast<double>(batch.size());
  return total;
}

/// theta <- theta - beta * sum_i grad L_i(theta_k^i).
template <typename Sample>
ParameterSet fomaml_meta_step(const ParameterSet& theta, std::span<const Task<Sample>> batch,
                              const LossFn<Sample>& loss, const MetaConfig& config,
                              double* mean_query_loss = nullptr) {
  ParameterSet next = theta;
  axpy(next, -config.beta, fomaml_meta_gradient<Sample>(theta, batch, loss, config, mean_query_loss));
  return next;
}

struct FineTuneResult {
  ParameterSet params;
  std::vector<double> support_loss;  // epochs + 1 points, index 0 = before any update
  std::vector<double> query_loss;    // same indexing; empty when no query set is given
};

/// Full-batch gradient descent on the support set for `epochs` epochs.
template <typename Sample>
FineTuneResult fine_tune(const ParameterSet& init, std::span<const Sample> support,
                         std::span<const Sample> query, const LossFn<Sample>& loss, double alpha,
                         std::size_t epochs) {
  if (support.empty()) throw InvalidArgument("fine_tune: empty support set");
  FineTuneResult r;
  r.params = init;
  auto record_query = [&] {
    if (!query.empty()) r.query_loss.push_back(loss(r.params, query, nullptr));
  };
  for (std::size_t e = 0; e <= epochs; ++e) {
    Gradients g;
    r.support_loss.push_back(loss(r.params, support, e < epochs ? &g : nullptr));
    record_query();
    if (e < epochs) axpy(r.params, -alpha, g);
  }
  return r;
}

// Scalar analytic task family L(theta) = curvature * (theta - center)^2, used
// to validate the trainers against closed forms.
struct QuadraticTask {
  double center = 0.0;
  double curvature = 1.0;
};

/// Exact (second-order) MAML update, differentiating through the k inner
/// steps. Support and query share the task loss.
double maml_second_order_reference(double theta, std::span<const QuadraticTask> tasks, double alpha,
                                   double beta, std::size_t inner_steps);

/// The same update with the first-order approximation, computed analytically.
double fomaml_quadratic_reference(double theta, std::span<const QuadraticTask> tasks, double alpha,
                                  double beta, std::size_t inner_steps);

/// LossFn for the quadratic family: the ParameterSet holds one scalar
/// "theta" and every sample is a task; the loss is the sum over samples.
LossFn<QuadraticTask> quadratic_loss();

// ---------------------------------------------------------------------------
// Saliency tasks.

struct SaliencySample {
  Tensor features;      // [C,H,W]
  SaliencyMap target;   // H x W, unit mass
};

using SaliencyTask = Task<SaliencySample>;

inline constexpr std::size_t kSupportSize = 5;
inline constexpr std::size_t kQuerySize = 15;

/// Provides per-video frames for task construction.
class VideoFeatureSource {
 public:
  virtual ~VideoFeatureSource() = default;
  virtual std::size_t video_count() const = 0;
  virtual std::size_t frame_count(std::size_t video) const = 0;
  virtual SaliencySample frame(std::size_t video, std::size_t index) const = 0;
};

/// One task for `video`: 20 distinct frames drawn at random, split 5/15.
SaliencyTask make_saliency_task(const VideoFeatureSource& source, std::size_t video, Rng& rng);
/// One task per video, in video order.
std::vector<SaliencyTask> make_saliency_tasks(const VideoFeatureSource& source, Rng& rng);

/// Small planar encoder-decoder standing in for a spherical saliency model:
/// conv+relu, pool, conv+relu, pool, upsample, conv+relu, upsample, conv,
/// softmax over all pixels.
struct SaliencyNetConfig {
  std::size_t in_channels = 1;
  std::size_t height = 8;
  std::size_t width = 16;
  std::size_t channels1 = 4;
  std::size_t channels2 = 8;
  std::size_t kernel = 3;

  void validate() const;
};

class SaliencyNet {
 public:
  explicit SaliencyNet(SaliencyNetConfig config);

  const SaliencyNetConfig& config() const noexcept { return config_; }
  ParameterSet init_params(Rng& rng) const;
  ad::Var forward(const BoundParameters& params, ad::Var features) const;  // -> [1,H,W]
  SaliencyMap predict(const ParameterSet& params, const Tensor& features) const;

  /// Mean KL(target || prediction) over the samples.
  double loss(const ParameterSet& params, std::span<const SaliencySample> samples, Gradients* grad) const;
  LossFn<SaliencySample> loss_fn() const;

 private:
  SaliencyNetConfig config_;
};

struct MetaCurvePoint {
  std::size_t iteration = 0;
  double support_loss = 0.0;  // mean support loss before adaptation
  double query_loss = 0.0;    // mean query loss after adaptation
};

/// Draws a task batch for iteration `iteration`. Derived from (seed,
/// iteration) only, so a resumed run replays the same schedule.
using TaskSampler = std::function<std::vector<SaliencyTask>(std::uint64_t seed, std::size_t iteration)>;

struct MetaTrainResult {
  ParameterSet params;
  std::vector<MetaCurvePoint> curve;
  std::size_t iterations_done = 0;
};

/// Runs FOMAML iterations [start_iteration, config.meta_iterations).
MetaTrainResult meta_train(const SaliencyNet& net, ParameterSet theta, const TaskSampler& sampler,
                           const MetaConfig& config, std::uint64_t seed, std::size_t start_iteration = 0);

/// Metadata keys written into meta checkpoints.
CheckpointMetadata meta_checkpoint_metadata(const MetaConfig& config, std::size_t iterations_done,
                                            std::uint64_t seed);

// Task dataset directory: manifest.csv plus one features file (parameter
// container holding a tensor named "features") and one saliency file per
// sample. Manifest columns: task,split,index,features,target.
void save_task_dataset(const std::filesystem::path& dir, std::span<const SaliencyTask> tasks);
std::vector<SaliencyTask> load_task_dataset(const std::filesystem::path& dir);

}  // namespace tilestream
