#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dode/checkpoint.hpp"
#include "dode/data.hpp"
#include "dode/importance.hpp"
#include "dode/netcore.hpp"
#include "dode/objectives.hpp"
#include "dode/odeflow.hpp"
#include "dode/optim.hpp"
#include "dode/schedule.hpp"

namespace dode {

struct TrainConfig {
  LogSnrSchedule schedule;
  std::vector<Eigen::Index> hidden{128, 128, 128};
  int embed_freqs = 4;
  Activation activation = Activation::SiLU;
  AdamConfig adam;
  double ema_rate = 0.9999;
  /// Use min(ema_rate, (1+n)/(10+n)) at step n so short runs are not
  /// dominated by the initialization.
  bool ema_warmup = true;
  std::size_t batch_size = 128;
  std::size_t iters = 20000;
  double lambda_tr = 0.1;  // finetune only
  StrategyKind strategy = StrategyKind::Designed;
  std::size_t gamma_net_hidden = 1024;
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;  // 0: evaluate once at the end
  std::size_t eval_size = 256;
  std::size_t nfe_probe = 16;  // prior draws used to measure sampling NFE in finetune
  TraceOptions trace;
  SolverConfig solver;

  void validate() const;
  /// Flat key=value view (config files, run manifests).
  std::map<std::string, std::string> to_kv() const;
  void set(const std::string& key, const std::string& value);
};

TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);

struct TrainRecord {
  std::uint64_t iteration;
  double train_loss;
  double eval_nll;  // nats per dimension; NaN when no eval split
  double wall_time;
};

struct TrainReport {
  std::vector<TrainRecord> records;
  std::vector<double> losses;  // every applied step's loss
  std::uint64_t skipped_steps = 0;
  bool aborted = false;
  std::string abort_reason;
  std::optional<double> nfe_before;
  std::optional<double> nfe_after;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainReport report;
};

struct TrainHooks {
  /// Called after every optimizer step with the 1-based iteration; return
  /// false to stop early.
  std::function<bool(std::uint64_t, const VelocityModel& raw, const std::vector<double>& ema)> on_step;
};

/// Eval NLL in nats/dim: TN bound (K=1, one draw) for discrete data, otherwise
/// the exact ODE NLL of alpha x0 + sigma eps at gamma_min with fixed noise.
double eval_nll(const LogSnrSchedule& s, const VelocityField& model, const Dataset& eval, std::size_t max_points,
                const SolverConfig& solver, std::uint64_t seed);

TrainResult pretrain(const TrainConfig& cfg, const Dataset& train, const Dataset* eval = nullptr,
                     const TrainHooks& hooks = {});
TrainResult finetune(const TrainConfig& cfg, const Checkpoint& start, const Dataset& train,
                     const Dataset* eval = nullptr, const TrainHooks& hooks = {});

/// Resumes first-order training from a checkpoint (same loop as finetune with lambda = 0).
TrainResult continue_pretrain(const TrainConfig& cfg, const Checkpoint& start, const Dataset& train,
                              const Dataset* eval = nullptr, const TrainHooks& hooks = {});

void save_report(const TrainReport& r, const std::string& path);

}  // namespace dode
