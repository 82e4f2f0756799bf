#include "dode/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "dode/dequant.hpp"
#include "dode/errors.hpp"
#include "dode/rng.hpp"

namespace dode {

void TrainConfig::validate() const {
  schedule.validate();
  adam.validate();
  if (!(ema_rate >= 0 && ema_rate < 1)) throw InvalidInput("train config: ema_rate must be in [0,1)");
  if (batch_size < 1) throw InvalidInput("train config: batch_size must be >= 1");
  if (!(lambda_tr >= 0)) throw InvalidInput("train config: lambda_tr must be >= 0");
  if (hidden.empty()) throw InvalidInput("train config: need at least one hidden layer");
  for (auto h : hidden)
    if (h < 1) throw InvalidInput("train config: hidden widths must be positive");
  if (trace.hutchinson && trace.probes < 1) throw InvalidInput("train config: trace_probes must be >= 1");
  solver.validate();
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string join_hidden(const std::vector<Eigen::Index>& h) {
  std::string s;
  for (std::size_t i = 0; i < h.size(); ++i) s += (i ? "x" : "") + std::to_string(h[i]);
  return s;
}

double to_double(const std::string& k, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw InvalidInput("train config: key '" + k + "' expects a number, got '" + v + "'");
  }
}

std::uint64_t to_uint(const std::string& k, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const auto d = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw InvalidInput("train config: key '" + k + "' expects a non-negative integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& k, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidInput("train config: key '" + k + "' expects true/false");
}

}  // namespace

std::map<std::string, std::string> TrainConfig::to_kv() const {
  return {
      {"schedule", to_string(schedule.kind)},
      {"gamma_min", fmt(schedule.gamma_min)},
      {"gamma_max", fmt(schedule.gamma_max)},
      {"hidden", join_hidden(hidden)},
      {"embed_freqs", std::to_string(embed_freqs)},
      {"activation", to_string(activation)},
      {"lr", fmt(adam.lr)},
      {"beta1", fmt(adam.beta1)},
      {"beta2", fmt(adam.beta2)},
      {"adam_eps", fmt(adam.eps)},
      {"weight_decay", fmt(adam.weight_decay)},
      {"ema_rate", fmt(ema_rate)},
      {"ema_warmup", ema_warmup ? "true" : "false"},
      {"batch_size", std::to_string(batch_size)},
      {"iters", std::to_string(iters)},
      {"lambda_tr", fmt(lambda_tr)},
      {"strategy", to_string(strategy)},
      {"gamma_net_hidden", std::to_string(gamma_net_hidden)},
      {"seed", std::to_string(seed)},
      {"eval_every", std::to_string(eval_every)},
      {"eval_size", std::to_string(eval_size)},
      {"nfe_probe", std::to_string(nfe_probe)},
      {"trace", trace.hutchinson ? "hutchinson" : "exact"},
      {"trace_probes", std::to_string(trace.probes)},
      {"probe", trace.probe == ProbeKind::Rademacher ? "rademacher" : "gaussian"},
      {"rtol", fmt(solver.rtol)},
      {"atol", fmt(solver.atol)},
      {"max_steps", std::to_string(solver.max_steps)},
  };
}

void TrainConfig::set(const std::string& k, const std::string& v) {
  if (k == "schedule") schedule.kind = parse_schedule_kind(v);
  else if (k == "gamma_min") schedule.gamma_min = to_double(k, v);
  else if (k == "gamma_max") schedule.gamma_max = to_double(k, v);
  else if (k == "hidden") {
    hidden.clear();
    std::stringstream ss(v);
    std::string part;
    while (std::getline(ss, part, 'x')) hidden.push_back(static_cast<Eigen::Index>(to_uint(k, part)));
  } else if (k == "embed_freqs") embed_freqs = static_cast<int>(to_uint(k, v));
  else if (k == "activation") activation = parse_activation(v);
  else if (k == "lr") adam.lr = to_double(k, v);
  else if (k == "beta1") adam.beta1 = to_double(k, v);
  else if (k == "beta2") adam.beta2 = to_double(k, v);
  else if (k == "adam_eps") adam.eps = to_double(k, v);
  else if (k == "weight_decay") adam.weight_decay = to_double(k, v);
  else if (k == "ema_rate") ema_rate = to_double(k, v);
  else if (k == "ema_warmup") ema_warmup = to_bool(k, v);
  else if (k == "batch_size") batch_size = to_uint(k, v);
  else if (k == "iters") iters = to_uint(k, v);
  else if (k == "lambda_tr") lambda_tr = to_double(k, v);
  else if (k == "strategy") strategy = parse_strategy(v);
  else if (k == "gamma_net_hidden") gamma_net_hidden = to_uint(k, v);
  else if (k == "seed") seed = to_uint(k, v);
  else if (k == "eval_every") eval_every = to_uint(k, v);
  else if (k == "eval_size") eval_size = to_uint(k, v);
  else if (k == "nfe_probe") nfe_probe = to_uint(k, v);
  else if (k == "trace") {
    if (v == "exact") trace.hutchinson = false;
    else if (v == "hutchinson") trace.hutchinson = true;
    else throw InvalidInput("train config: trace must be exact or hutchinson");
  } else if (k == "trace_probes") trace.probes = to_uint(k, v);
  else if (k == "probe") {
    if (v == "rademacher") trace.probe = ProbeKind::Rademacher;
    else if (v == "gaussian") trace.probe = ProbeKind::Gaussian;
    else throw InvalidInput("train config: probe must be rademacher or gaussian");
  } else if (k == "rtol") solver.rtol = to_double(k, v);
  else if (k == "atol") solver.atol = to_double(k, v);
  else if (k == "max_steps") solver.max_steps = to_uint(k, v);
  else throw InvalidInput("train config: unknown key '" + k + "'");
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  std::stringstream ss(text);
  std::string line;
  int no = 0;
  while (std::getline(ss, line)) {
    ++no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidInput("train config: line " + std::to_string(no) + " lacks '='");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidInput("train config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_train_config(ss.str());
}

double eval_nll(const LogSnrSchedule& s, const VelocityField& model, const Dataset& eval, std::size_t max_points,
                const SolverConfig& solver, std::uint64_t seed) {
  const auto n = std::min<Eigen::Index>(eval.size(), static_cast<Eigen::Index>(max_points));
  if (n < 1) throw InvalidInput("eval_nll: empty eval split");
  const double d = static_cast<double>(eval.dim());
  LikelihoodConfig lc;
  lc.solver = solver;
  double sum = 0;
  if (eval.discrete) {
    BoundOptions opt;
    opt.K = 1;
    opt.repeats = 1;
    opt.seed = seed;
    for (Eigen::Index i = 0; i < n; ++i) {
      opt.datum = static_cast<std::uint64_t>(i);
      sum += nll_trunc_normal(s, model, eval.discrete->row(i).transpose(), opt, lc).total_logp;
    }
  } else {
    const ScheduleEval e = eval_schedule(s, s.gamma_min);
    for (Eigen::Index i = 0; i < n; ++i) {
      Rng rng = task_rng(seed, static_cast<std::uint64_t>(i));
      const Vec x = e.alpha * eval.row(i) + e.sigma * standard_normal(eval.dim(), rng);
      sum += ode_log_likelihood(s, model, x, lc).logp;
    }
  }
  return -sum / (static_cast<double>(n) * d);
}

namespace {

using Clock = std::chrono::steady_clock;

struct LoopState {
  VelocityModel model;
  std::vector<double> ema;
  std::uint64_t iteration;
  std::optional<MonotoneGammaNet> net;
};

void check_shape(const TrainConfig& cfg, const ModelShape& shape) {
  if (shape.hidden != cfg.hidden || shape.embed_freqs != cfg.embed_freqs || shape.activation != cfg.activation)
    throw InvalidInput("finetune: checkpoint widths/embedding/activation do not match the config");
}

TrainResult run_loop(const TrainConfig& cfg, LoopState st, double lambda, const Dataset& train,
                     const Dataset* eval, const TrainHooks& hooks, bool track_nfe) {
  cfg.validate();
  if (train.size() < 1) throw InvalidInput("train: empty dataset");
  if (train.dim() != st.model.dim()) throw InvalidInput("train: dataset dimension does not match model");
  const LogSnrSchedule& s = cfg.schedule;
  const Eigen::Index d = train.dim();
  const auto t0 = Clock::now();
  TrainReport rep;
  AdamState opt, net_opt;
  Rng rng = task_rng(cfg.seed, 0x7472ULL + st.iteration);
  Rng net_rng = task_rng(cfg.seed, 0x6e6574ULL + st.iteration);
  std::uniform_int_distribution<Eigen::Index> pick(0, train.size() - 1);
  const std::uint64_t eval_seed = cfg.seed ^ 0x5eedULL;

  auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - t0).count(); };
  auto ema_model = [&] {
    VelocityModel m = st.model;
    m.params() = st.ema;
    return m;
  };
  auto probe_nfe = [&] {
    return ode_sample(s, ema_model(), cfg.nfe_probe, cfg.solver, cfg.seed ^ 0xabcdULL).mean_nfe();
  };
  if (track_nfe && cfg.nfe_probe > 0) rep.nfe_before = probe_nfe();

  std::vector<PathSample> batch(cfg.batch_size);
  std::vector<double> w(cfg.batch_size);
  std::vector<double> grad;
  int consecutive_bad = 0;
  for (std::size_t it = 0; it < cfg.iters; ++it) {
    const MonotoneGammaNet* netp = st.net ? &*st.net : nullptr;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const Vec x0 = train.row(pick(rng));
      const Vec eps = standard_normal(d, rng);
      const GammaDraw g = draw_gamma(cfg.strategy, s, rng, netp);
      batch[b] = sample_path(s, x0, eps, g.gamma);
      w[b] = g.is_weight;
    }
    LossValue lv;
    bool ok = true;
    try {
      lv = mixed_loss_grad(s, st.model, batch, w, lambda, grad, cfg.trace, &rng);
    } catch (const NumericFailure&) {
      ok = false;
    }
    if (ok) ok = adamw_step(st.model.params(), grad, opt, cfg.adam);
    if (!ok) {
      ++rep.skipped_steps;
      if (++consecutive_bad >= 10) {
        rep.aborted = true;
        rep.abort_reason = "train: loss or gradient non-finite for 10 consecutive steps at iteration " +
                           std::to_string(st.iteration + 1);
        break;
      }
      continue;
    }
    consecutive_bad = 0;
    ++st.iteration;
    double rate = cfg.ema_rate;
    if (cfg.ema_warmup)
      rate = std::min(rate, (1.0 + static_cast<double>(st.iteration)) / (10.0 + static_cast<double>(st.iteration)));
    ema_update(st.ema, st.model.params(), rate);
    rep.losses.push_back(lv.total);

    if (cfg.strategy == StrategyKind::Adaptive) {
      AdaptiveBatch ab;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        ab.x0.push_back(train.row(pick(net_rng)));
        ab.eps.push_back(standard_normal(d, net_rng));
        ab.t.push_back(uniform01(net_rng));
      }
      adaptive_is_step(s, st.model, *st.net, ab, net_opt, cfg.adam);
    }

    const bool stop = hooks.on_step && !hooks.on_step(st.iteration, st.model, st.ema);
    const bool last = it + 1 == cfg.iters || stop;
    if ((cfg.eval_every > 0 && st.iteration % cfg.eval_every == 0) || last) {
      const double nll = eval ? eval_nll(s, ema_model(), *eval, cfg.eval_size, cfg.solver, eval_seed)
                              : std::numeric_limits<double>::quiet_NaN();
      rep.records.push_back({st.iteration, lv.total, nll, elapsed()});
    }
    if (stop) break;
  }
  if (track_nfe && cfg.nfe_probe > 0) rep.nfe_after = probe_nfe();

  TrainResult r;
  r.report = std::move(rep);
  r.checkpoint.shape = st.model.shape();
  r.checkpoint.schedule = s;
  r.checkpoint.seed = cfg.seed;
  r.checkpoint.iteration = st.iteration;
  r.checkpoint.params = st.model.params();
  r.checkpoint.ema = st.ema;
  if (st.net) {
    r.checkpoint.gamma_net = st.net->params();
    r.checkpoint.gamma_net_hidden = st.net->hidden();
  }
  return r;
}

ModelShape shape_for(const TrainConfig& cfg, Eigen::Index d) {
  ModelShape sh;
  sh.data_dim = d;
  sh.hidden = cfg.hidden;
  sh.embed_freqs = cfg.embed_freqs;
  sh.activation = cfg.activation;
  sh.gamma_min = cfg.schedule.gamma_min;
  sh.gamma_max = cfg.schedule.gamma_max;
  return sh;
}

}  // namespace

TrainResult pretrain(const TrainConfig& cfg, const Dataset& train, const Dataset* eval, const TrainHooks& hooks) {
  cfg.validate();
  VelocityModel m = VelocityModel::initialized(shape_for(cfg, train.dim()), cfg.seed);
  std::vector<double> ema = m.params();
  std::optional<MonotoneGammaNet> net;
  if (cfg.strategy == StrategyKind::Adaptive)
    net = MonotoneGammaNet::initialized(cfg.schedule.gamma_min, cfg.schedule.gamma_max, cfg.seed,
                                        cfg.gamma_net_hidden);
  return run_loop(cfg, LoopState{std::move(m), std::move(ema), 0, std::move(net)}, 0.0, train, eval, hooks, false);
}

namespace {

LoopState resume_state(const TrainConfig& cfg, const Checkpoint& start) {
  cfg.validate();
  check_shape(cfg, start.shape);
  VelocityModel m = start.model(false);
  std::optional<MonotoneGammaNet> net;
  if (cfg.strategy == StrategyKind::Adaptive) {
    if (!start.gamma_net.empty()) {
      net.emplace(cfg.schedule.gamma_min, cfg.schedule.gamma_max, start.gamma_net_hidden);
      net->params() = start.gamma_net;
    } else {
      net = MonotoneGammaNet::initialized(cfg.schedule.gamma_min, cfg.schedule.gamma_max, cfg.seed,
                                          cfg.gamma_net_hidden);
    }
  }
  return LoopState{std::move(m), start.ema, start.iteration, std::move(net)};
}

}  // namespace

TrainResult finetune(const TrainConfig& cfg, const Checkpoint& start, const Dataset& train, const Dataset* eval,
                     const TrainHooks& hooks) {
  return run_loop(cfg, resume_state(cfg, start), cfg.lambda_tr, train, eval, hooks, true);
}

TrainResult continue_pretrain(const TrainConfig& cfg, const Checkpoint& start, const Dataset& train,
                              const Dataset* eval, const TrainHooks& hooks) {
  return run_loop(cfg, resume_state(cfg, start), 0.0, train, eval, hooks, false);
}

void save_report(const TrainReport& r, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw InvalidInput("save_report: cannot open " + path);
  f << "iteration,train_loss,eval_nll,wall_time\n";
  f.precision(17);
  for (const auto& rec : r.records)
    f << rec.iteration << ',' << rec.train_loss << ',' << rec.eval_nll << ',' << rec.wall_time << '\n';
}

}  // namespace dode
