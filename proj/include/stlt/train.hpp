#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stlt/checkpoint.hpp"
#include "stlt/losses.hpp"
#include "stlt/mixer.hpp"
#include "stlt/tasks.hpp"

namespace stlt {

struct TrainConfig {
  std::string task = "copy";  // copy | oscillatory_recall | char_lm
  long steps = 2000;
  int batch = 4;
  double lr = 3e-4;
  double beta1 = 0.9, beta2 = 0.98;
  double weight_decay = 0.01;
  long warmup_steps = 500;
  std::uint64_t seed = 1;
  std::size_t s_max = 16;
  double lambda_omega = 1e-4, lambda_sigma = 1e-4, lambda_mask = 1e-3;
  double anneal_start = 1.0, anneal_end = 0.1, anneal_fraction = 0.4;
  double param_lr_scale = 0.1;  // lr multiplier for sigma_raw / omega / t_raw
  std::size_t d_model = 32, d_ff = 64, n_layers = 2, vocab = 16, n_ctx = 48;
  long delay = 16;
  long period = 8;
  double noise_prob = 0.1;
  std::string corpus_path;
  std::string mask_mode = "stochastic";  // stochastic | deterministic_eval
  long metrics_every = 50;
  long checkpoint_every = 0;  // 0: initial + final only
  bool freeze_omega = false;
  double omega_max = 3.141592653589793;
  double sigma_min_init = 1e-3, sigma_max_init = 10.0;
  double t_init = 32.0;
  double grad_clip = 1.0;
  long eval_every = 0;          // 0: no periodic eval
  double target_accuracy = 0.0;  // > 0: stop once eval accuracy reaches it
  int eval_batches = 8;
};

// Flat key=value file; '#' starts a comment. Unknown keys are rejected.
TrainConfig load_train_config(const std::string& path);
void apply_override(TrainConfig& cfg, const std::string& key,
                    const std::string& value);

struct TrainResult {
  long steps_run = 0;
  bool nan_abort = false;
  double final_task_loss = 0.0;
  double final_total_loss = 0.0;
  double final_accuracy = -1.0;
  std::vector<double> final_s_eff;  // deterministic masks, one per layer
  std::string metrics_path;
  std::string checkpoint_path;
};

// Runs the harness: per step forward/loss/backward/clip/AdamW plus the
// temperature anneal; periodic metrics rows and checkpoints. Deterministic
// for a fixed config. On a non-finite loss the loop aborts and the last
// periodic checkpoint is retained.
TrainResult train_loop(const TrainConfig& cfg, const std::string& out_dir);

TaskSample generate_sample(const TrainConfig& cfg, const CharCorpus* corpus,
                           std::uint64_t stream_seed);

double evaluate_accuracy(ModelParams& params, const TrainConfig& cfg,
                         const CharCorpus* corpus, std::uint64_t eval_seed,
                         int batches, double lambda_t);
double evaluate_loss(ModelParams& params, const TrainConfig& cfg,
                     const CharCorpus* corpus, std::uint64_t eval_seed,
                     int batches, double lambda_t);

// Deterministic-mask S_eff per decoder layer on probe batches.
std::vector<double> measure_s_eff(ModelParams& params, const TrainConfig& cfg,
                                  const CharCorpus* corpus, std::uint64_t seed,
                                  int batches, double lambda_t);

}  // namespace stlt
