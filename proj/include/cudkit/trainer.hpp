// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cudkit/cudnet.hpp"
#include "cudkit/image.hpp"
#include "cudkit/losses.hpp"
#include "cudkit/tensor.hpp"

namespace cudkit::trainer {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 2;
  int epochs = 20;
  double warmup_frac = 0.05;  // fraction of the first epoch spent ramping up
  double lambda_id = 1.0;
  CvdKind kind = CvdKind::Deuteranopia;
  uint64_t seed = 42;
  bool low_bottleneck = false;
  losses::HistParams hist;
  std::string data_dir;
  std::string out_checkpoint;
  std::string log_csv;  // optional; empty disables the per-step log
};

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckpointCorrupt : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckpointVersionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckpointTruncated : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Adam first/second moments for every trainable array, in declaration order.
struct AdamState {
  std::vector<tensor::Tensor<float>> m;
  std::vector<tensor::Tensor<float>> v;
  int64_t step = 0;  // completed steps; bias correction uses step+1
};

/// One Adam update with bias correction. `params` and `grads` follow the
/// fixed trainable-array order; lr is the already-scheduled rate.
void adam_step(const std::vector<tensor::Tensor<float>*>& params,
               const std::vector<std::vector<float>>& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps);

/// Warm-up cosine schedule: a linear 0->lr ramp over warmup_frac of the
/// first epoch, then one cosine half-period per epoch restarting at full lr.
double warmup_cosine_lr(int64_t step, int64_t steps_per_epoch, const TrainConfig& cfg);

struct Checkpoint {
  static constexpr int kVersion = 1;
  CvdKind kind = CvdKind::Deuteranopia;
  uint64_t init_seed = 0;
  cudnet::Weights<float> weights;
  AdamState adam;

  static Checkpoint fresh(const cudnet::ModelConfig& cfg, uint64_t seed, CvdKind kind);
};

/// Binary layout: one UTF-8 header line with the version, the config
/// snapshot and an array length table, then raw little-endian float32 data
/// in declaration order. Save/load round-trips bit-exactly.
void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct TrainResult {
  Checkpoint checkpoint;
  double first_epoch_mean_loss = 0;
  double last_epoch_mean_loss = 0;
  int64_t steps = 0;
};

/// Deterministic training loop over the dataset's train split: batches of
/// per-sample losses with averaged gradients, Adam with the warm-up cosine
/// schedule, a CSV log row per step, and a checkpoint per epoch. Worker
/// thread count is capped by the CUDKIT_THREADS environment variable.
TrainResult train(const TrainConfig& cfg);

/// Number of worker threads to use (>=1), honoring CUDKIT_THREADS.
int worker_threads(int wanted);

}  // namespace cudkit::trainer
