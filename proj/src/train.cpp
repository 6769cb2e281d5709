#include "stlt/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "stlt/adaptive.hpp"
#include "stlt/optimizer.hpp"
#include "stlt/rng.hpp"
#include "stlt/tasks.hpp"

namespace stlt {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double to_double(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (...) {
    throw std::invalid_argument("config: bad numeric value for " + key + ": " + v);
  }
}

long to_long(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const long x = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (...) {
    throw std::invalid_argument("config: bad integer value for " + key + ": " + v);
  }
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: bad boolean value for " + key + ": " + v);
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", x);
  return buf;
}

MaskMode parse_mask_mode(const std::string& m) {
  if (m == "stochastic") return MaskMode::stochastic;
  if (m == "deterministic_eval") return MaskMode::deterministic_eval;
  if (m == "hard_threshold") return MaskMode::hard_threshold;
  throw std::invalid_argument("config: unknown mask_mode " + m);
}

}  // namespace

void apply_override(TrainConfig& c, const std::string& key, const std::string& value) {
  if (key == "task") c.task = value;
  else if (key == "steps") c.steps = to_long(value, key);
  else if (key == "batch") c.batch = static_cast<int>(to_long(value, key));
  else if (key == "lr") c.lr = to_double(value, key);
  else if (key == "beta1") c.beta1 = to_double(value, key);
  else if (key == "beta2") c.beta2 = to_double(value, key);
  else if (key == "weight_decay") c.weight_decay = to_double(value, key);
  else if (key == "warmup_steps") c.warmup_steps = to_long(value, key);
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_long(value, key));
  else if (key == "s_max") c.s_max = static_cast<std::size_t>(to_long(value, key));
  else if (key == "lambda_omega") c.lambda_omega = to_double(value, key);
  else if (key == "lambda_sigma") c.lambda_sigma = to_double(value, key);
  else if (key == "lambda_mask") c.lambda_mask = to_double(value, key);
  else if (key == "anneal_start") c.anneal_start = to_double(value, key);
  else if (key == "anneal_end") c.anneal_end = to_double(value, key);
  else if (key == "anneal_fraction") c.anneal_fraction = to_double(value, key);
  else if (key == "param_lr_scale") c.param_lr_scale = to_double(value, key);
  else if (key == "d_model") c.d_model = static_cast<std::size_t>(to_long(value, key));
  else if (key == "d_ff") c.d_ff = static_cast<std::size_t>(to_long(value, key));
  else if (key == "n_layers") c.n_layers = static_cast<std::size_t>(to_long(value, key));
  else if (key == "vocab") c.vocab = static_cast<std::size_t>(to_long(value, key));
  else if (key == "n_ctx") c.n_ctx = static_cast<std::size_t>(to_long(value, key));
  else if (key == "delay") c.delay = to_long(value, key);
  else if (key == "period") c.period = to_long(value, key);
  else if (key == "noise_prob") c.noise_prob = to_double(value, key);
  else if (key == "corpus_path") c.corpus_path = value;
  else if (key == "mask_mode") { parse_mask_mode(value); c.mask_mode = value; }
  else if (key == "metrics_every") c.metrics_every = to_long(value, key);
  else if (key == "checkpoint_every") c.checkpoint_every = to_long(value, key);
  else if (key == "freeze_omega") c.freeze_omega = to_bool(value, key);
  else if (key == "omega_max") c.omega_max = to_double(value, key);
  else if (key == "sigma_min_init") c.sigma_min_init = to_double(value, key);
  else if (key == "sigma_max_init") c.sigma_max_init = to_double(value, key);
  else if (key == "t_init") c.t_init = to_double(value, key);
  else if (key == "grad_clip") c.grad_clip = to_double(value, key);
  else if (key == "eval_every") c.eval_every = to_long(value, key);
  else if (key == "target_accuracy") c.target_accuracy = to_double(value, key);
  else if (key == "eval_batches") c.eval_batches = static_cast<int>(to_long(value, key));
  else throw std::invalid_argument("config: unknown key " + key);
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  TrainConfig cfg;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key=value, got: " + line);
    apply_override(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

TaskSample generate_sample(const TrainConfig& cfg, const CharCorpus* corpus,
                           std::uint64_t stream_seed) {
  if (cfg.task == "copy")
    return gen_copy_task(stream_seed, cfg.n_ctx, cfg.vocab,
                         static_cast<std::size_t>(cfg.delay));
  if (cfg.task == "oscillatory_recall")
    return gen_oscillatory_recall(stream_seed, cfg.n_ctx,
                                  static_cast<std::size_t>(cfg.period), cfg.vocab,
                                  cfg.noise_prob);
  if (cfg.task == "char_lm") {
    if (!corpus) throw std::runtime_error("char_lm task requires a corpus");
    return sample_char_lm(*corpus, stream_seed, cfg.n_ctx);
  }
  throw std::invalid_argument("unknown task " + cfg.task);
}

namespace {

ModelParams build_model(const TrainConfig& cfg) {
  BankInit bi;
  bi.sigma_min = cfg.sigma_min_init;
  bi.sigma_max = cfg.sigma_max_init;
  bi.omega_max = cfg.freeze_omega ? 0.0 : cfg.omega_max;
  bi.t_init = cfg.t_init;
  ModelParams p = init_lm_model(cfg.vocab, cfg.d_model, cfg.d_ff, cfg.n_ctx,
                                cfg.n_layers, cfg.s_max, bi, cfg.seed);
  if (cfg.freeze_omega)
    for (BlockParams& b : p.decoder_blocks)
      std::fill(b.bank.omega.begin(), b.bank.omega.end(), 0.0);
  return p;
}

std::size_t effective_vocab(const TrainConfig& cfg) {
  return cfg.task == "char_lm" ? 256 : cfg.vocab;
}

}  // namespace

double evaluate_accuracy(ModelParams& params, const TrainConfig& cfg,
                         const CharCorpus* corpus, std::uint64_t eval_seed,
                         int batches, double lambda_t) {
  std::size_t hits = 0, total = 0;
  for (int b = 0; b < batches; ++b) {
    TaskSample s = generate_sample(cfg, corpus, substream(cfg.seed, 0xe7a1, eval_seed, b));
    MixerOptions o;
    o.mask_mode = MaskMode::deterministic_eval;
    o.lambda_t = lambda_t;
    const Tensor logits = forward_lm(params, s.tokens, o);
    const std::size_t vocab = logits.dim(1);
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      const double* row = logits.v.data() + i * vocab;
      const std::size_t best =
          std::max_element(row, row + vocab) - row;
      hits += best == static_cast<std::size_t>(s.targets[i]);
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

double evaluate_loss(ModelParams& params, const TrainConfig& cfg,
                     const CharCorpus* corpus, std::uint64_t eval_seed,
                     int batches, double lambda_t) {
  double loss = 0.0;
  for (int b = 0; b < batches; ++b) {
    TaskSample s = generate_sample(cfg, corpus, substream(cfg.seed, 0xe7a1, eval_seed, b));
    MixerOptions o;
    o.mask_mode = MaskMode::deterministic_eval;
    o.lambda_t = lambda_t;
    const Tensor logits = forward_lm(params, s.tokens, o);
    loss += cross_entropy(logits.v, s.tokens.size(), logits.dim(1), s.targets);
  }
  return loss / batches;
}

std::vector<double> measure_s_eff(ModelParams& params, const TrainConfig& cfg,
                                  const CharCorpus* corpus, std::uint64_t seed,
                                  int batches, double lambda_t) {
  std::vector<double> acc(params.decoder_blocks.size(), 0.0);
  for (int b = 0; b < batches; ++b) {
    TaskSample s = generate_sample(cfg, corpus, substream(cfg.seed, 0x5eff, seed, b));
    Tape t;
    ModelBinding binding = bind_model(t, params, false);
    MixerOptions o;
    o.mask_mode = MaskMode::deterministic_eval;
    o.lambda_t = lambda_t;
    LmTrace trace;
    forward_lm_graph(t, params, binding, s.tokens, o, &trace);
    for (std::size_t l = 0; l < trace.blocks.size(); ++l)
      acc[l] += trace.blocks[l].s_eff;
  }
  for (double& a : acc) a /= batches;
  return acc;
}

TrainResult train_loop(const TrainConfig& cfg_in, const std::string& out_dir) {
  TrainConfig cfg = cfg_in;
  if (cfg.task == "char_lm") cfg.vocab = 256;
  if (cfg.steps < 0 || cfg.batch < 1)
    throw std::invalid_argument("train_loop: bad steps/batch");
  if (cfg.lr <= 0.0) throw std::invalid_argument("train_loop: lr must be > 0");
  if (cfg.beta1 <= 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 <= 0.0 || cfg.beta2 >= 1.0)
    throw std::invalid_argument("train_loop: betas must lie in (0,1)");
  if (cfg.anneal_fraction <= 0.0 || cfg.anneal_fraction > 1.0)
    throw std::invalid_argument("train_loop: anneal_fraction must lie in (0,1]");
  (void)effective_vocab(cfg);

  std::filesystem::create_directories(out_dir);
  const std::string metrics_path = out_dir + "/metrics.csv";
  const std::string ckpt_path = out_dir + "/checkpoint.bin";

  CharCorpus corpus;
  const CharCorpus* corpus_ptr = nullptr;
  if (cfg.task == "char_lm") {
    corpus = load_corpus(cfg.corpus_path);
    corpus_ptr = &corpus;
  }

  ModelParams model = build_model(cfg);
  AdamW opt;
  opt.beta1 = cfg.beta1;
  opt.beta2 = cfg.beta2;
  opt.weight_decay = cfg.weight_decay;

  const MaskMode mask_mode = parse_mask_mode(cfg.mask_mode);
  RegWeights reg{cfg.lambda_omega, cfg.lambda_sigma, cfg.lambda_mask};

  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw std::runtime_error("train_loop: cannot write " + metrics_path);
  metrics << "step,lr,lambda_T,task_loss,reg_omega,reg_sigma,reg_mask,total";
  for (std::size_t l = 0; l < cfg.n_layers; ++l) metrics << ",s_eff_layer_" << l;
  metrics << ",grad_norm\n";

  TrainResult result;
  result.metrics_path = metrics_path;
  result.checkpoint_path = ckpt_path;

  double lambda_t = cfg.anneal_start;
  save_checkpoint(ckpt_path, model, &opt, 0, cfg.seed, lambda_t);

  // Running mean of the task loss over the trailing window, for reporting.
  std::vector<double> recent;
  const std::size_t recent_cap = 50;

  for (long step = 0; step < cfg.steps; ++step) {
    lambda_t = anneal_temperature(step, cfg.steps, cfg.anneal_start, cfg.anneal_end,
                                  cfg.anneal_fraction);
    const double lr_t = lr_schedule(step + 1, cfg.warmup_steps, cfg.lr);

    Tape tape;
    ModelBinding binding = bind_model(tape, model, true, cfg.freeze_omega);
    std::vector<std::pair<Tape::Id, double>> terms;
    const double inv_batch = 1.0 / cfg.batch;
    double task_sum = 0.0, ro_sum = 0.0, rs_sum = 0.0, rm_sum = 0.0;
    std::vector<double> s_eff_sum(cfg.n_layers, 0.0);

    for (int b = 0; b < cfg.batch; ++b) {
      TaskSample s = generate_sample(cfg, corpus_ptr, substream(cfg.seed, 0xda7a, step, b));
      MixerOptions o;
      o.mask_mode = mask_mode;
      o.lambda_t = lambda_t;
      o.mask_seed = substream(cfg.seed, 0x6d736b, step, b);
      LmTrace trace;
      Tape::Id logits = forward_lm_graph(tape, model, binding, s.tokens, o, &trace);
      Tape::Id ce = tape.softmax_cross_entropy(logits, s.targets);
      terms.emplace_back(ce, inv_batch);
      task_sum += tape.val(ce)[0] * inv_batch;
      for (std::size_t l = 0; l < trace.blocks.size(); ++l) {
        const BlockTrace& bt = trace.blocks[l];
        Tape::Id ro = tape.abs_weighted_sum(bt.omega, bt.m_tilde);
        Tape::Id rs = tape.sigma_smoothness(bt.sigma_eff, bt.m_tilde);
        Tape::Id rm = tape.sum(bt.m_tilde);
        terms.emplace_back(ro, reg.lambda_omega * inv_batch);
        terms.emplace_back(rs, reg.lambda_sigma * inv_batch);
        terms.emplace_back(rm, reg.lambda_mask * inv_batch);
        ro_sum += reg.lambda_omega * tape.val(ro)[0] * inv_batch;
        rs_sum += reg.lambda_sigma * tape.val(rs)[0] * inv_batch;
        rm_sum += reg.lambda_mask * tape.val(rm)[0] * inv_batch;
        s_eff_sum[l] += bt.s_eff * inv_batch;
      }
    }
    Tape::Id loss = tape.weighted_sum(terms);
    const double loss_v = tape.val(loss)[0];
    if (!std::isfinite(loss_v)) {
      result.nan_abort = true;
      result.steps_run = step;
      metrics.flush();
      return result;  // last periodic checkpoint stays in place
    }

    tape.backward(loss);
    std::vector<std::vector<double>> grads(binding.slots.size());
    for (std::size_t i = 0; i < binding.slots.size(); ++i) {
      const Tensor* g = tape.grad_ptr(binding.ids[i]);
      grads[i] = g ? g->v : std::vector<double>(binding.slots[i].size(), 0.0);
    }
    const double grad_norm = clip_global_norm(grads, cfg.grad_clip);
    adamw_step(binding.slots, grads, opt, lr_t, cfg.param_lr_scale);

    recent.push_back(task_sum);
    if (recent.size() > recent_cap) recent.erase(recent.begin());

    result.final_task_loss = task_sum;
    result.final_total_loss = loss_v;

    const bool last = step + 1 == cfg.steps;
    if (cfg.metrics_every > 0 && (step % cfg.metrics_every == 0 || last)) {
      metrics << step << ',' << fmt(lr_t) << ',' << fmt(lambda_t) << ','
              << fmt(task_sum) << ',' << fmt(ro_sum) << ',' << fmt(rs_sum) << ','
              << fmt(rm_sum) << ',' << fmt(loss_v);
      for (std::size_t l = 0; l < cfg.n_layers; ++l) metrics << ',' << fmt(s_eff_sum[l]);
      metrics << ',' << fmt(grad_norm) << '\n';
    }
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
      save_checkpoint(ckpt_path, model, &opt, step + 1, cfg.seed, lambda_t);

    result.steps_run = step + 1;
    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
      const double acc = evaluate_accuracy(model, cfg, corpus_ptr, 0,
                                           cfg.eval_batches, cfg.anneal_end);
      result.final_accuracy = acc;
      if (cfg.target_accuracy > 0.0 && acc >= cfg.target_accuracy) break;
    }
  }

  if (!recent.empty()) {
    double mean = 0.0;
    for (double r : recent) mean += r;
    result.final_task_loss = mean / recent.size();
  }
  save_checkpoint(ckpt_path, model, &opt, result.steps_run, cfg.seed, lambda_t);
  result.final_s_eff =
      measure_s_eff(model, cfg, corpus_ptr, 1, cfg.eval_batches, cfg.anneal_end);
  if (cfg.eval_every > 0 || cfg.target_accuracy > 0.0)
    result.final_accuracy = evaluate_accuracy(model, cfg, corpus_ptr, 0,
                                              cfg.eval_batches, cfg.anneal_end);
  metrics.flush();
  return result;
}

}  // namespace stlt
