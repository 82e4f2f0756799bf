#include "dode/cli.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <boost/version.hpp>
#include <json.hpp>

#include "dode/analytic.hpp"
#include "dode/checkpoint.hpp"
#include "dode/data.hpp"
#include "dode/dequant.hpp"
#include "dode/errors.hpp"
#include "dode/importance.hpp"
#include "dode/objectives.hpp"
#include "dode/odeflow.hpp"
#include "dode/oracle_suite.hpp"
#include "dode/trainer.hpp"

namespace dode {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Shared {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = "dode_out";
  std::string schedule;
  double gamma_min = NAN;
  double gamma_max = NAN;
  std::vector<std::string> sets;
};

struct DataOpts {
  std::string path;
  std::string kind = "mixture";
  std::string source = "gauss";
  Eigen::Index d = 2;
  Eigen::Index n = 4096;
  Eigen::Index eval_n = 256;
  double s0 = 1.0;
  std::uint64_t data_seed = 1;
};

// Exit-code classes. Thrown by command bodies that detect a failed check.
struct CheckFailed : Error {
  using Error::Error;
};

class Run {
 public:
  Shared sh;
  DataOpts data;
  json record = json::object();
  std::vector<std::string> outputs;
  CLI::Option* seed_opt = nullptr;

  TrainConfig config() const {
    TrainConfig cfg = sh.config.empty() ? TrainConfig{} : load_train_config(sh.config);
    for (const auto& kv : sh.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw InvalidInput("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!sh.schedule.empty()) cfg.schedule.kind = parse_schedule_kind(sh.schedule);
    if (!std::isnan(sh.gamma_min)) cfg.schedule.gamma_min = sh.gamma_min;
    if (!std::isnan(sh.gamma_max)) cfg.schedule.gamma_max = sh.gamma_max;
    if (seed_opt && seed_opt->count() > 0) cfg.seed = sh.seed;
    cfg.validate();
    return cfg;
  }

  fs::path out_path(const std::string& name) {
    fs::create_directories(sh.out);
    const fs::path p = fs::path(sh.out) / name;
    outputs.push_back(p.string());
    return p;
  }

  void write_text(const std::string& name, const std::string& text) {
    std::ofstream f(out_path(name));
    if (!f) throw InvalidInput("cli: cannot write " + name + " under " + sh.out);
    f << text;
  }
};

Dataset load_or_generate(const DataOpts& o, Eigen::Index n, std::uint64_t seed_offset) {
  if (!o.path.empty()) return load_dataset(o.path);
  DatasetSpec spec;
  spec.kind = parse_dataset_kind(o.kind);
  spec.d = o.d;
  spec.s0 = o.s0;
  spec.source = o.source;
  if (spec.kind == DatasetKind::GaussMixture || (spec.kind == DatasetKind::Discrete256 && o.source == "mixture")) {
    const DatasetSpec m = default_mixture_spec();
    if (o.d != m.d) throw InvalidInput("cli: the default mixture is 2-D; pass --d 2 or --data");
    spec.components = m.components;
  }
  return generate(spec, n, o.data_seed + seed_offset);
}

void add_data_opts(CLI::App* sub, DataOpts& o, bool with_eval) {
  sub->add_option("--data", o.path, "dataset CSV; generated when absent");
  sub->add_option("--dataset", o.kind, "generator: gauss | mixture | checkerboard | discrete256");
  sub->add_option("--source", o.source, "continuous source behind discrete256");
  sub->add_option("--d", o.d, "generated dimension");
  sub->add_option("--n", o.n, "generated sample count");
  sub->add_option("--s0", o.s0, "std of the gauss generator");
  sub->add_option("--data-seed", o.data_seed, "generator seed");
  if (with_eval) sub->add_option("--eval-n", o.eval_n, "held-out sample count (0: none)");
}

json kv_json(const TrainConfig& cfg) {
  json j = json::object();
  for (const auto& [k, v] : cfg.to_kv()) j[k] = v;
  return j;
}

std::string fmt17(double x) {
  std::ostringstream s;
  s << std::setprecision(17) << x;
  return s.str();
}

// ---- commands ----

void cmd_schedule_dump(Run& r, std::size_t points) {
  if (points < 2) throw InvalidInput("schedule-dump: --points must be >= 2");
  const LogSnrSchedule s = r.config().schedule;
  std::ostringstream csv;
  csv << "gamma,alpha,sigma,dalpha,dsigma,norm\n";
  for (std::size_t i = 0; i < points; ++i) {
    const double g = s.gamma_min + (s.gamma_max - s.gamma_min) * static_cast<double>(i) / static_cast<double>(points - 1);
    const ScheduleEval e = eval_schedule(s, g);
    csv << fmt17(g) << ',' << fmt17(e.alpha) << ',' << fmt17(e.sigma) << ',' << fmt17(e.dalpha) << ','
        << fmt17(e.dsigma) << ',' << fmt17(e.norm) << '\n';
  }
  r.write_text("schedule_" + to_string(s.kind) + ".csv", csv.str());
  r.record["points"] = points;
}

void cmd_oracle_check(Run& r, std::ostream& out) {
  const OracleReport rep = run_oracle_suite(r.sh.seed);
  r.write_text("oracle_report.json", rep.to_json() + "\n");
  out << rep.to_json() << '\n';
  r.record["checks"] = rep.checks.size();
  if (const auto* f = rep.first_failure())
    throw CheckFailed("oracle-check: " + f->name + " failed (error " + fmt17(f->error) + " > tolerance " +
                      fmt17(f->tolerance) + ")");
}

void cmd_gradcheck(Run& r, std::ostream& out, Eigen::Index d, double lambda, double tol) {
  TrainConfig cfg = r.config();
  ModelShape shape;
  shape.data_dim = d;
  shape.hidden = {16, 16};
  shape.embed_freqs = 2;
  shape.activation = cfg.activation;
  shape.gamma_min = cfg.schedule.gamma_min;
  shape.gamma_max = cfg.schedule.gamma_max;
  VelocityModel m = VelocityModel::initialized(shape, cfg.seed);
  Rng rng = task_rng(cfg.seed, 1);
  std::normal_distribution<double> jitter(0.0, 0.2);
  for (auto& p : m.params()) p += jitter(rng);  // the zero output layer would hide most gradients

  std::vector<PathSample> batch;
  std::vector<double> w;
  for (int i = 0; i < 6; ++i) {
    const GammaDraw g = draw_gamma(StrategyKind::Designed, cfg.schedule, rng);
    batch.push_back(sample_path(cfg.schedule, standard_normal(d, rng), standard_normal(d, rng), g.gamma));
    w.push_back(g.is_weight);
  }
  std::vector<double> grad(m.param_count(), 0.0);
  mixed_loss_grad(cfg.schedule, m, batch, w, lambda, grad);

  // The gradient treats the squared-error term inside the trace residual as a
  // constant, so the finite-difference target freezes it at the base point.
  std::vector<double> frozen;
  for (const auto& p : batch) frozen.push_back((m.value(p.x_gamma, p.gamma) - p.v_target).squaredNorm());
  auto loss_at = [&]() {
    double sum = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& p = batch[i];
      const ScheduleEval e = eval_schedule(cfg.schedule, p.gamma);
      const double W = w[i] * 2 * e.norm * e.norm / (e.sigma * e.sigma);
      Vec v;
      const Mat J = m.jvp(p.x_gamma, p.gamma, Mat::Identity(d, d), &v);
      const double res = e.sigma * J.trace() - e.dsigma / e.norm * static_cast<double>(d) +
                         2 * e.norm / e.sigma * frozen[i];
      sum += W * ((v - p.v_target).squaredNorm() + lambda * res * res);
    }
    return sum / static_cast<double>(batch.size());
  };

  const double value_gap = std::abs(loss_at() - mixed_loss(cfg.schedule, m, batch, w, lambda).total);

  double gmax = 0;
  for (double g : grad) gmax = std::max(gmax, std::abs(g));
  const double h = 1e-6;
  double worst = 0;
  std::size_t worst_i = 0;
  for (std::size_t i = 0; i < m.param_count(); ++i) {
    const double p0 = m.params()[i];
    m.params()[i] = p0 + h;
    const double lp = loss_at();
    m.params()[i] = p0 - h;
    const double lm = loss_at();
    m.params()[i] = p0;
    const double fd = (lp - lm) / (2 * h);
    const double rel = std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-3 * gmax});
    if (rel > worst) worst = rel, worst_i = i;
  }
  json rep = {{"params", m.param_count()}, {"lambda", lambda},        {"max_rel_error", worst},
              {"worst_param", worst_i},    {"loss_value_gap", value_gap},    {"tolerance", tol},        {"passed", worst < tol}};
  r.write_text("gradcheck.json", rep.dump(2) + "\n");
  out << rep.dump(2) << '\n';
  r.record["max_rel_error"] = worst;
  if (!(value_gap < 1e-10 * std::max(1.0, loss_at())))
    throw CheckFailed("gradcheck: mixed_loss disagrees with the reference loss by " + fmt17(value_gap));
  if (!(worst < tol)) throw CheckFailed("gradcheck: mixed_loss_grad max relative error " + fmt17(worst));
}

void write_train_outputs(Run& r, const TrainResult& res) {
  save_checkpoint(res.checkpoint, r.out_path("checkpoint.dode").string());
  save_report(res.report, r.out_path("report.csv").string());
  json s = {{"iterations", res.checkpoint.iteration},
            {"skipped_steps", res.report.skipped_steps},
            {"aborted", res.report.aborted}};
  if (!res.report.records.empty()) {
    const double e = res.report.records.back().eval_nll;
    s["final_eval_nll"] = std::isfinite(e) ? json(e) : json(nullptr);
  }
  if (res.report.nfe_before) s["nfe_before"] = *res.report.nfe_before;
  if (res.report.nfe_after) s["nfe_after"] = *res.report.nfe_after;
  r.write_text("train_summary.json", s.dump(2) + "\n");
  r.record["summary"] = s;
  if (res.report.aborted) throw NumericFailure("trainer: " + res.report.abort_reason);
}

void cmd_train(Run& r, const std::string& checkpoint, bool finetune_mode) {
  const TrainConfig cfg = r.config();
  r.record["train_config"] = kv_json(cfg);
  std::optional<Checkpoint> start;
  if (finetune_mode) start = load_checkpoint(checkpoint);
  const Dataset train = load_or_generate(r.data, r.data.n, 0);
  std::optional<Dataset> eval;
  if (r.data.eval_n > 0 && r.data.path.empty()) eval = load_or_generate(r.data, r.data.eval_n, 1000003);
  const Dataset* ev = eval ? &*eval : nullptr;
  write_train_outputs(r, finetune_mode ? finetune(cfg, *start, train, ev) : pretrain(cfg, train, ev));
}

LikelihoodConfig likelihood_config(const TrainConfig& cfg, const std::string& div, std::size_t probes,
                                   double prior_scale) {
  LikelihoodConfig lc;
  lc.solver = cfg.solver;
  lc.prior_data_scale = prior_scale;
  lc.divergence.seed = cfg.seed;
  lc.divergence.probes = probes;
  lc.divergence.probe = cfg.trace.probe;
  if (div == "hutchinson") lc.divergence.kind = DivergenceMode::Hutchinson;
  else if (div != "exact") throw InvalidInput("nll: --divergence must be exact or hutchinson");
  return lc;
}

struct NllOpts {
  std::string checkpoint;
  std::string bound = "tn";
  std::size_t K = 1;
  std::size_t repeats = 5;
  double gamma_eval = NAN;
  Eigen::Index max_points = 0;
  std::string divergence = "exact";
  std::size_t probes = 1;
  double prior_scale = 0.0;
};

void cmd_nll(Run& r, std::ostream& out, const NllOpts& o) {
  const TrainConfig cfg = r.config();
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const VelocityModel model = ck.model(true);
  Dataset ds = load_or_generate(r.data, r.data.n, 0);
  if (o.max_points > 0 && o.max_points < ds.size()) ds = subset(ds, 0, o.max_points);
  if (ds.dim() != model.dim()) throw InvalidInput("nll: dataset dimension does not match the checkpoint");
  const LikelihoodConfig lc = likelihood_config(cfg, o.divergence, o.probes, o.prior_scale);
  std::ostringstream lines;
  json summary;
  if (ds.discrete) {
    BoundOptions bo;
    bo.K = o.K;
    bo.repeats = o.repeats;
    bo.seed = cfg.seed;
    const DatasetBound db = evaluate_bound(parse_bound_kind(o.bound), ck.schedule, model, *ds.discrete, bo, lc, o.gamma_eval);
    for (std::size_t i = 0; i < db.per_datum.size(); ++i) {
      const auto& b = db.per_datum[i];
      json terms = json::object();
      for (const auto& t : b.corrections) terms[t.label] = t.value;
      lines << json{{"datum", i},         {"bound", to_string(b.kind)}, {"K", b.K},         {"logp", b.total_logp},
                    {"bpd", b.bpd},        {"ode_term", b.ode_term},     {"terms", terms},   {"nfe", b.nfe},
                    {"seed", cfg.seed}}
                   .dump()
            << '\n';
    }
    summary = {{"bound", o.bound}, {"K", o.K}, {"n", db.per_datum.size()}, {"mean_logp", db.mean_logp},
               {"mean_bpd", db.mean_bpd}, {"stderr", db.stderr_bpd}};
  } else {
    double sum = 0, sum2 = 0;
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
      LikelihoodConfig li = lc;
      li.divergence.seed = cfg.seed + static_cast<std::uint64_t>(i);
      const LikelihoodResult res = ode_log_likelihood(ck.schedule, model, ds.row(i), li);
      sum += res.logp;
      sum2 += res.logp * res.logp;
      lines << json{{"datum", i}, {"logp", res.logp}, {"nfe", res.nfe}, {"mode", li.divergence.label()},
                    {"seed", li.divergence.seed}}
                   .dump()
            << '\n';
    }
    const double n = static_cast<double>(ds.size());
    const double mean = sum / n;
    const double var = n > 1 ? (sum2 - n * mean * mean) / (n - 1) : 0.0;
    summary = {{"n", ds.size()}, {"mean_logp", mean}, {"stderr", std::sqrt(std::max(var, 0.0) / n)},
               {"mode", lc.divergence.label()}};
  }
  r.write_text("nll.jsonl", lines.str());
  r.write_text("nll_summary.json", summary.dump(2) + "\n");
  out << summary.dump(2) << '\n';
  r.record["summary"] = summary;
}

void cmd_sample(Run& r, std::ostream& out, const std::string& checkpoint, std::size_t n, double prior_scale) {
  const TrainConfig cfg = r.config();
  const Checkpoint ck = load_checkpoint(checkpoint);
  const VelocityModel model = ck.model(true);
  const SampleResult sr = ode_sample(ck.schedule, model, n, cfg.solver, cfg.seed, prior_scale);
  std::ostringstream csv;
  for (Eigen::Index j = 0; j < sr.samples.rows(); ++j) csv << (j ? "," : "") << 'x' << j;
  csv << '\n';
  for (Eigen::Index i = 0; i < sr.samples.cols(); ++i) {
    for (Eigen::Index j = 0; j < sr.samples.rows(); ++j) csv << (j ? "," : "") << fmt17(sr.samples(j, i));
    csv << '\n';
  }
  r.write_text("samples.csv", csv.str());
  const json s = {{"n", n}, {"mean_nfe", sr.mean_nfe()}, {"seed", cfg.seed}};
  r.write_text("sample_summary.json", s.dump(2) + "\n");
  out << s.dump(2) << '\n';
  r.record["summary"] = s;
}

struct DiagOpts {
  std::string checkpoint;
  std::string strategy = "designed";
  std::size_t bins = 40;
  std::size_t draws = 20000;
  std::size_t pool_data = 32;
  std::size_t pool_noise = 100;
  std::size_t curve_points = 201;
};

void cmd_is_diag(Run& r, std::ostream& out, const DiagOpts& o) {
  const TrainConfig cfg = r.config();
  const StrategyKind kind = parse_strategy(o.strategy);
  std::optional<Checkpoint> ck;
  if (!o.checkpoint.empty()) ck = load_checkpoint(o.checkpoint);
  const LogSnrSchedule s = ck ? ck->schedule : cfg.schedule;
  const Dataset ds = load_or_generate(r.data, r.data.n, 0);

  std::unique_ptr<VelocityField> model;
  if (ck) {
    model = std::make_unique<VelocityModel>(ck->model(true));
  } else {
    auto oracle = ds.oracle(s);
    if (!oracle) throw InvalidInput("is-diag: no checkpoint given and the dataset has no analytic model");
    model = std::make_unique<GaussianMixtureOracle>(*oracle);
  }
  if (model->dim() != ds.dim()) throw InvalidInput("is-diag: dataset dimension does not match the model");
  std::optional<MonotoneGammaNet> net;
  if (kind == StrategyKind::Adaptive) {
    if (!ck || ck->gamma_net.empty()) throw InvalidInput("is-diag: adaptive strategy needs a checkpoint with a gamma net");
    net.emplace(s.gamma_min, s.gamma_max, ck->gamma_net_hidden);
    net->params() = ck->gamma_net;
  }
  const MonotoneGammaNet* np = net ? &*net : nullptr;

  std::ostringstream curve;
  curve << "t,gamma,density\n";
  for (std::size_t i = 0; i < o.curve_points; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(o.curve_points - 1);
    double g, dens;
    if (kind == StrategyKind::Uniform) {
      g = s.gamma_min + t * (s.gamma_max - s.gamma_min);
      dens = 1.0 / (s.gamma_max - s.gamma_min);
    } else if (kind == StrategyKind::Designed) {
      g = designed_gamma_of_t(s, t);
      dens = designed_density(s, g);
    } else {
      const auto e = (*np)(t);
      g = e.gamma;
      dens = 1.0 / e.dgamma_dt;
    }
    curve << fmt17(t) << ',' << fmt17(g) << ',' << fmt17(dens) << '\n';
  }
  r.write_text("gamma_curve_" + o.strategy + ".csv", curve.str());

  const DiagnosticPools pools = make_pools(ds.samples, o.pool_data, o.pool_noise, cfg.seed);
  const VarianceProfile vp = variance_profile(s, *model, kind, np, pools, o.bins, o.draws, cfg.seed);
  std::ostringstream var;
  var << "lo,hi,count,mean,variance\n";
  for (const auto& b : vp.bins)
    var << fmt17(b.lo) << ',' << fmt17(b.hi) << ',' << b.count << ',' << (b.mean ? fmt17(*b.mean) : "") << ','
        << (b.variance ? fmt17(*b.variance) : "") << '\n';
  r.write_text("variance_" + o.strategy + ".csv", var.str());

  const EstimatorStats st = estimator_stats(s, *model, kind, np, pools, o.draws, cfg.seed);
  json summary = {{"strategy", o.strategy}, {"mean", st.mean}, {"variance", st.variance},
                  {"stderr", st.stderr_mean}, {"draws", st.n}};
  if (vp.peak_bin) summary["peak_bin"] = *vp.peak_bin;
  r.write_text("is_summary.json", summary.dump(2) + "\n");
  out << summary.dump(2) << '\n';
  r.record["summary"] = summary;
}

json versions() {
  return {{"dode", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"boost", BOOST_LIB_VERSION},
          {"compiler", __VERSION__}};
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"dode: diffusion ODE likelihood training and evaluation"};
  app.require_subcommand(1);
  Run r;

  std::size_t points = 100;
  Eigen::Index gc_d = 2;
  double gc_lambda = 0.1, gc_tol = 1e-4;
  std::string train_ck;
  NllOpts nll;
  std::string sample_ck;
  std::size_t sample_n = 100;
  double sample_prior = 0.0;
  DiagOpts diag;

  auto shared = [&](CLI::App* sub) {
    sub->add_option("--config", r.sh.config, "flat key=value config file (trainer keys)");
    auto* so = sub->add_option("--seed", r.sh.seed, "global seed");
    sub->add_option("--out", r.sh.out, "output directory");
    sub->add_option("--schedule", r.sh.schedule, "vp | sp");
    sub->add_option("--gamma-min", r.sh.gamma_min, "log-SNR lower end");
    sub->add_option("--gamma-max", r.sh.gamma_max, "log-SNR upper end");
    return so;
  };
  std::map<CLI::App*, CLI::Option*> seed_opts;

  auto* c_dump = app.add_subcommand("schedule-dump", "tabulate a schedule as CSV");
  seed_opts[c_dump] = shared(c_dump);
  c_dump->add_option("--kind", r.sh.schedule, "alias of --schedule");
  c_dump->add_option("--points", points, "grid size");

  auto* c_oracle = app.add_subcommand("oracle-check", "run the analytic oracle suite");
  seed_opts[c_oracle] = shared(c_oracle);

  auto* c_grad = app.add_subcommand("gradcheck", "compare the analytic gradient of the mixed loss to finite differences");
  seed_opts[c_grad] = shared(c_grad);
  c_grad->add_option("--d", gc_d, "data dimension");
  c_grad->add_option("--lambda", gc_lambda, "trace-loss weight");
  c_grad->add_option("--tol", gc_tol, "max relative error");

  auto* c_train = app.add_subcommand("train", "pretrain with the first-order objective");
  seed_opts[c_train] = shared(c_train);
  c_train->add_option("--set", r.sh.sets, "override a config key (key=value)");
  add_data_opts(c_train, r.data, true);

  auto* c_fine = app.add_subcommand("finetune", "finetune with the trace objective");
  seed_opts[c_fine] = shared(c_fine);
  c_fine->add_option("--set", r.sh.sets, "override a config key (key=value)");
  c_fine->add_option("--checkpoint", train_ck, "starting checkpoint")->required();
  add_data_opts(c_fine, r.data, true);

  auto* c_nll = app.add_subcommand("nll", "likelihood or dequantization bound per datum");
  seed_opts[c_nll] = shared(c_nll);
  c_nll->add_option("--checkpoint", nll.checkpoint, "model checkpoint")->required();
  c_nll->add_option("--bound", nll.bound, "uniform | tn | variational (discrete data)");
  c_nll->add_option("--K", nll.K, "importance samples per bound estimate");
  c_nll->add_option("--repeats", nll.repeats, "estimates averaged per datum");
  c_nll->add_option("--gamma-eval", nll.gamma_eval, "evaluation log-SNR for uniform/variational");
  c_nll->add_option("--max-points", nll.max_points, "evaluate at most this many rows");
  c_nll->add_option("--divergence", nll.divergence, "exact | hutchinson");
  c_nll->add_option("--probes", nll.probes, "Hutchinson probes");
  c_nll->add_option("--prior-scale", nll.prior_scale, "data std folded into the terminal prior");
  add_data_opts(c_nll, r.data, false);

  auto* c_sample = app.add_subcommand("sample", "draw samples by integrating the ODE");
  seed_opts[c_sample] = shared(c_sample);
  c_sample->add_option("--checkpoint", sample_ck, "model checkpoint")->required();
  c_sample->add_option("--n", sample_n, "number of samples");
  c_sample->add_option("--prior-scale", sample_prior, "data std folded into the terminal prior");

  auto* c_diag = app.add_subcommand("is-diag", "importance-sampling curve and per-bin variance");
  seed_opts[c_diag] = shared(c_diag);
  c_diag->add_option("--checkpoint", diag.checkpoint, "model checkpoint (default: analytic model of the data)");
  c_diag->add_option("--strategy", diag.strategy, "uniform | designed | adaptive");
  c_diag->add_option("--bins", diag.bins, "variance bins over gamma");
  c_diag->add_option("--draws", diag.draws, "gamma draws");
  c_diag->add_option("--pool-data", diag.pool_data, "fixed data points");
  c_diag->add_option("--pool-noise", diag.pool_noise, "fixed noise draws per point");
  add_data_opts(c_diag, r.data, false);

  std::vector<std::string> argv_store{"dode"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "dode: " << e.what() << '\n';
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  CLI::App* cmd = app.get_subcommands().front();
  r.seed_opt = seed_opts.at(cmd);
  const auto t0 = std::chrono::steady_clock::now();
  int code = 0;
  std::string error;
  try {
    if (cmd == c_dump) cmd_schedule_dump(r, points);
    else if (cmd == c_oracle) cmd_oracle_check(r, out);
    else if (cmd == c_grad) cmd_gradcheck(r, out, gc_d, gc_lambda, gc_tol);
    else if (cmd == c_train) cmd_train(r, "", false);
    else if (cmd == c_fine) cmd_train(r, train_ck, true);
    else if (cmd == c_nll) cmd_nll(r, out, nll);
    else if (cmd == c_sample) cmd_sample(r, out, sample_ck, sample_n, sample_prior);
    else if (cmd == c_diag) cmd_is_diag(r, out, diag);
  } catch (const InvalidInput& e) {
    code = 1, error = e.what();
  } catch (const ParseError& e) {
    code = 1, error = e.what();
  } catch (const UnsupportedVersion& e) {
    code = 1, error = e.what();
  } catch (const CheckFailed& e) {
    code = 2, error = e.what();
  } catch (const NumericFailure& e) {
    code = 2, error = e.what();
  } catch (const NonConvergence& e) {
    code = 2, error = e.what();
  } catch (const SingularityError& e) {
    code = 2, error = e.what();
  } catch (const fs::filesystem_error& e) {
    code = 1, error = std::string("cli: ") + e.what();
  }
  if (!error.empty()) err << "dode " << cmd->get_name() << ": " << error << '\n';

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json manifest = {{"command", cmd->get_name()},
                   {"argv", args},
                   {"seed", r.seed_opt->count() ? json(r.sh.seed) : json(nullptr)},
                   {"versions", versions()},
                   {"wall_time_s", wall},
                   {"exit_code", code},
                   {"outputs", r.outputs},
                   {"result", r.record}};
  if (!error.empty()) manifest["error"] = error;
  try {
    manifest["config"] = kv_json(r.config());
    manifest["seed"] = manifest["config"]["seed"];
  } catch (const std::exception&) {
    // config itself was the invalid input; argv still reproduces the run
  }
  json flags = json::object();
  for (const CLI::Option* o : cmd->get_options()) {
    if (o->get_name() == "--help") continue;
    const auto res = o->results();
    if (!res.empty()) flags[o->get_name()] = res.size() == 1 ? json(res.front()) : json(res);
  }
  manifest["flags"] = flags;
  try {
    fs::create_directories(r.sh.out);
    std::ofstream(fs::path(r.sh.out) / "run.json") << manifest.dump(2) << '\n';
  } catch (const std::exception& e) {
    err << "dode: cannot write run.json: " << e.what() << '\n';
    if (code == 0) code = 1;
  }
  return code;
}

}  // namespace dode
