#include "movesel/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numbers>
#include <thread>

#include "movesel/fit_result.hpp"
#include "movesel/hmm.hpp"
#include "movesel/io.hpp"
#include "movesel/predict.hpp"
#include "movesel/raster.hpp"
#include "movesel/rsf.hpp"
#include "movesel/ssf.hpp"
#include "movesel/track.hpp"

namespace movesel {

namespace fs = std::filesystem;

std::string_view to_string(Command command) noexcept {
  switch (command) {
    case Command::Thin: return "thin";
    case Command::Steps: return "steps";
    case Command::FitRsf: return "fit-rsf";
    case Command::FitSsf: return "fit-ssf";
    case Command::FitHmm: return "fit-hmm";
    case Command::Decode: return "decode";
    case Command::Logrss: return "logrss";
    case Command::PredictMap: return "predict-map";
    case Command::Ssud: return "ssud";
    case Command::Simulate: return "simulate";
  }
  return "unknown";
}

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::NonFiniteAtInit:
    case ErrorKind::DegenerateInput:
    case ErrorKind::SeparationDetected:
    case ErrorKind::SingularDesign:
    case ErrorKind::TooFewSteps:
    case ErrorKind::ExtentExhausted:
    case ErrorKind::InvalidUpdatedKernel:
    case ErrorKind::InvalidObservation:
    case ErrorKind::AllRestartsFailed:
    case ErrorKind::NonStochasticInput:
      return 1;
    default:
      return 2;
  }
}

namespace {

Error usage(const std::string& msg) { return Error(ErrorKind::UsageError, msg); }

std::vector<double> parse_grid_spec(const std::string& spec) {
  std::vector<double> out;
  const auto colon = split(spec, ':');
  if (colon.size() == 3) {
    double lo = 0.0;
    double hi = 0.0;
    double n = 0.0;
    if (!parse_double(trim(colon[0]), lo) || !parse_double(trim(colon[1]), hi) || !parse_double(trim(colon[2]), n) ||
        n < 2 || n != std::floor(n) || !(hi > lo)) {
      throw usage("--grid expects lo:hi:n with lo < hi and integer n >= 2, got '" + spec + "'");
    }
    const auto count = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i < count; ++i) {
      out.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
    }
    return out;
  }
  for (auto tok : split(spec, ',')) {
    double v = 0.0;
    if (!parse_double(trim(tok), v)) throw usage("--grid value '" + std::string(trim(tok)) + "' is not a number");
    out.push_back(v);
  }
  return out;
}

RasterArg parse_raster_arg(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size()) {
    throw usage("--raster expects name=path, got '" + arg + "'");
  }
  return RasterArg{arg.substr(0, eq), fs::path(arg.substr(eq + 1))};
}

std::vector<std::string> split_names(const std::string& s) {
  std::vector<std::string> out;
  for (auto tok : split(s, ',')) {
    if (!trim(tok).empty()) out.emplace_back(trim(tok));
  }
  return out;
}

}  // namespace

RunConfig parse_args(int argc, const char* const* argv) {
  RunConfig cfg;
  cfg.threads = std::max(1u, std::thread::hardware_concurrency());
  CLI::App app{"Resource selection, step selection and hidden Markov models for animal tracks", "movesel"};
  app.require_subcommand(1, 1);

  std::vector<std::string> rasters;
  std::string grid_spec;
  std::string reference;
  std::string scan;
  std::string transition = "\x01";  // sentinel: not given
  std::string obs;
  std::string initial = "free";

  const auto add_common = [&](CLI::App* sub, bool track_required) {
    auto* t = sub->add_option("--track", cfg.track, "Track CSV (id,t,x,y)");
    if (track_required) t->required();
    sub->add_option("--raster", rasters, "Covariate grid as name=path (repeatable)");
    sub->add_option("--out", cfg.out, "Output directory")->capture_default_str();
    sub->add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
    sub->add_option("--threads", cfg.threads, "Worker threads (default: available cores)")->check(CLI::PositiveNumber);
  };
  const auto add_preprocess = [&](CLI::App* sub) {
    sub->add_option("--interval", cfg.interval, "Expected fix interval in seconds (0: no check)")->capture_default_str();
    sub->add_option("--tolerance", cfg.tolerance, "Allowed gap deviation as a fraction of the interval")
        ->capture_default_str();
    sub->add_option("--max-gap", cfg.max_gap, "Interpolate onto the interval lattice across gaps up to this length")
        ->capture_default_str();
    sub->add_option("--thin-by", cfg.thin_by, "Keep every n-th location before fitting")->capture_default_str()
        ->check(CLI::PositiveNumber);
  };
  const auto add_ssf = [&](CLI::App* sub) {
    sub->add_option("--controls", cfg.controls, "Control steps per observed step")->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->add_option("--covariate", cfg.covariate, "Habitat covariate (default: first raster)");
    sub->add_flag("--interaction", cfg.interaction, "Add the covariate:ln_l interaction");
  };
  const auto add_hmm = [&](CLI::App* sub) {
    sub->add_option("--states", cfg.states, "Number of states")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--restarts", cfg.restarts, "Random restarts")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--transition", transition, "Comma-separated transition covariates (default: every raster)");
    sub->add_option("--obs", obs, "Comma-separated covariates on the log step mean");
    sub->add_option("--initial", initial, "Initial distribution: free or stationary")
        ->check(CLI::IsMember({"free", "stationary"}))->capture_default_str();
    sub->add_flag("--angle-mean", cfg.estimate_angle_mean, "Estimate per-state turn angle means");
  };

  auto* thin_cmd = app.add_subcommand("thin", "Keep every k-th location of each track");
  add_common(thin_cmd, true);
  add_preprocess(thin_cmd);
  thin_cmd->add_option("--k", cfg.k, "Thinning factor")->capture_default_str()->check(CLI::PositiveNumber);

  auto* steps_cmd = app.add_subcommand("steps", "Export observed and control steps");
  add_common(steps_cmd, true);
  add_preprocess(steps_cmd);
  add_ssf(steps_cmd);

  auto* rsf_cmd = app.add_subcommand("fit-rsf", "Fit a logistic resource selection function");
  add_common(rsf_cmd, true);
  add_preprocess(rsf_cmd);
  rsf_cmd->add_option("--ratio", cfg.ratio, "Available points per used point")->capture_default_str()
      ->check(CLI::PositiveNumber);
  rsf_cmd->add_option("--buffer", cfg.buffer, "Buffer around the minimum convex polygon")->capture_default_str();
  rsf_cmd->add_option("--scan", scan, "Comma-separated increasing ratios for a stability scan");

  auto* ssf_cmd = app.add_subcommand("fit-ssf", "Fit a step selection function");
  add_common(ssf_cmd, true);
  add_preprocess(ssf_cmd);
  add_ssf(ssf_cmd);

  auto* hmm_cmd = app.add_subcommand("fit-hmm", "Fit a hidden Markov model");
  add_common(hmm_cmd, true);
  add_preprocess(hmm_cmd);
  add_hmm(hmm_cmd);

  auto* decode_cmd = app.add_subcommand("decode", "Fit a hidden Markov model and decode states");
  add_common(decode_cmd, true);
  add_preprocess(decode_cmd);
  add_hmm(decode_cmd);

  auto* logrss_cmd = app.add_subcommand("logrss", "Log-RSS or state-probability curve");
  add_common(logrss_cmd, true);
  add_preprocess(logrss_cmd);
  add_ssf(logrss_cmd);
  add_hmm(logrss_cmd);
  logrss_cmd->add_option("--model", cfg.model, "rsf, ssf or hmm")->check(CLI::IsMember({"rsf", "ssf", "hmm"}))
      ->capture_default_str();
  logrss_cmd->add_option("--ratio", cfg.ratio, "Available points per used point (rsf)")->capture_default_str()
      ->check(CLI::PositiveNumber);
  logrss_cmd->add_option("--grid", grid_spec, "lo:hi:n or comma-separated covariate values");
  logrss_cmd->add_option("--reference", reference, "Reference covariate value (default: used-data mean)");

  auto* map_cmd = app.add_subcommand("predict-map", "RSF map or per-state HMM maps");
  add_common(map_cmd, true);
  add_preprocess(map_cmd);
  add_hmm(map_cmd);
  map_cmd->add_option("--model", cfg.model, "rsf or hmm")->check(CLI::IsMember({"rsf", "hmm"}))->capture_default_str();
  map_cmd->add_option("--ratio", cfg.ratio, "Available points per used point (rsf)")->capture_default_str()
      ->check(CLI::PositiveNumber);

  auto* ssud_cmd = app.add_subcommand("ssud", "Steady-state utilization distribution by path simulation");
  add_common(ssud_cmd, true);
  add_preprocess(ssud_cmd);
  add_ssf(ssud_cmd);
  ssud_cmd->add_option("--locations", cfg.locations, "Recorded locations")->capture_default_str()
      ->check(CLI::PositiveNumber);
  ssud_cmd->add_option("--burn-in", cfg.burn_in, "Steps discarded before recording")->capture_default_str();
  ssud_cmd->add_option("--candidates", cfg.candidates, "Proposals per step")->capture_default_str()
      ->check(CLI::PositiveNumber);
  ssud_cmd->add_option("--chains", cfg.chains, "Independent chains")->capture_default_str()
      ->check(CLI::PositiveNumber);

  auto* sim_cmd = app.add_subcommand("simulate", "Simulate a synthetic landscape and HMM track");
  add_common(sim_cmd, false);
  sim_cmd->add_option("--steps", cfg.steps, "Number of steps")->capture_default_str()->check(CLI::Range(2, 10000000));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    throw HelpRequested(app.help());
  } catch (const CLI::CallForAllHelp&) {
    throw HelpRequested(app.help("", CLI::AppFormatMode::All));
  } catch (const CLI::ParseError& e) {
    throw usage(e.what());
  }

  const CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  const std::map<std::string, Command> commands{
      {"thin", Command::Thin},       {"steps", Command::Steps},   {"fit-rsf", Command::FitRsf},
      {"fit-ssf", Command::FitSsf},  {"fit-hmm", Command::FitHmm}, {"decode", Command::Decode},
      {"logrss", Command::Logrss},   {"predict-map", Command::PredictMap}, {"ssud", Command::Ssud},
      {"simulate", Command::Simulate}};
  cfg.command = commands.at(name);

  for (const auto& r : rasters) cfg.rasters.push_back(parse_raster_arg(r));
  for (std::size_t i = 0; i < cfg.rasters.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (cfg.rasters[i].name == cfg.rasters[j].name) throw usage("raster name '" + cfg.rasters[i].name + "' given twice");
    }
  }
  if (!grid_spec.empty()) {
    cfg.grid = parse_grid_spec(grid_spec);
    for (std::size_t i = 1; i < cfg.grid.size(); ++i) {
      if (!(cfg.grid[i] > cfg.grid[i - 1])) throw usage("--grid values must be strictly increasing");
    }
  }
  if (!reference.empty() && reference != "mean") {
    double v = 0.0;
    if (!parse_double(reference, v)) throw usage("--reference expects a number or 'mean'");
    cfg.reference = v;
  }
  if (!scan.empty()) {
    for (auto tok : split(scan, ',')) {
      double v = 0.0;
      if (!parse_double(trim(tok), v) || v < 1 || v != std::floor(v)) throw usage("--scan expects positive integers");
      cfg.scan_ratios.push_back(static_cast<std::size_t>(v));
    }
    for (std::size_t i = 1; i < cfg.scan_ratios.size(); ++i) {
      if (cfg.scan_ratios[i] <= cfg.scan_ratios[i - 1]) throw usage("--scan ratios must be increasing");
    }
  }
  if (transition != "\x01") {
    cfg.transition_covariates = split_names(transition);
  } else {
    for (const auto& r : cfg.rasters) cfg.transition_covariates.push_back(r.name);
  }
  cfg.obs_covariates = split_names(obs);
  cfg.stationary = initial == "stationary";
  if (cfg.tolerance < 0.0 || cfg.tolerance >= 0.5) throw usage("--tolerance must lie in [0, 0.5)");
  if (cfg.interval < 0.0 || cfg.max_gap < 0.0 || cfg.buffer < 0.0) {
    throw usage("--interval, --max-gap and --buffer must be non-negative");
  }

  const bool needs_raster = cfg.command == Command::Steps || cfg.command == Command::FitRsf ||
                            cfg.command == Command::FitSsf || cfg.command == Command::Ssud ||
                            (cfg.command == Command::Logrss) ||
                            (cfg.command == Command::PredictMap);
  if (needs_raster && cfg.rasters.empty()) throw usage(name + " needs at least one --raster");
  if (cfg.command == Command::Logrss && cfg.model == "hmm" && cfg.transition_covariates.empty()) {
    throw usage("logrss --model hmm needs a transition covariate");
  }
  return cfg;
}

namespace {

struct Outputs {
  std::vector<std::pair<fs::path, std::string>> files;
  std::vector<std::string> report;  // key=value and table lines after the config echo
  std::vector<std::string> warnings;

  void add(const fs::path& p, std::string content) { files.emplace_back(p, std::move(content)); }
  void line(std::string s) { report.push_back(std::move(s)); }
};

std::string config_echo(const RunConfig& c) {
  std::string s = "command=" + std::string(to_string(c.command)) + "\n";
  s += "seed=" + std::to_string(c.seed) + "\n";
  if (!c.track.empty()) s += "track=" + c.track.string() + "\n";
  for (const auto& r : c.rasters) s += "raster." + r.name + "=" + r.path.string() + "\n";
  auto opt = [&](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
  switch (c.command) {
    case Command::Thin:
      opt("k", std::to_string(c.k));
      break;
    case Command::FitRsf:
      opt("ratio", std::to_string(c.ratio));
      opt("buffer", format_double(c.buffer));
      break;
    case Command::Steps:
    case Command::FitSsf:
      opt("controls", std::to_string(c.controls));
      opt("interaction", c.interaction ? "true" : "false");
      break;
    case Command::FitHmm:
    case Command::Decode:
      opt("states", std::to_string(c.states));
      opt("restarts", std::to_string(c.restarts));
      opt("initial", c.stationary ? "stationary" : "free");
      break;
    case Command::Logrss:
    case Command::PredictMap:
      opt("model", c.model);
      break;
    case Command::Ssud:
      opt("controls", std::to_string(c.controls));
      opt("locations", std::to_string(c.locations));
      opt("burn_in", std::to_string(c.burn_in));
      opt("candidates", std::to_string(c.candidates));
      opt("chains", std::to_string(c.chains));
      break;
    case Command::Simulate:
      opt("steps", std::to_string(c.steps));
      break;
  }
  if (c.command != Command::Simulate && c.command != Command::Thin) {
    opt("interval", format_double(c.interval));
    opt("thin_by", std::to_string(c.thin_by));
  }
  return s;
}

std::string render_report(const RunConfig& c, const Outputs& o) {
  std::string s = config_echo(c);
  for (const auto& l : o.report) s += l + "\n";
  s += "warnings=" + std::to_string(o.warnings.size()) + "\n";
  for (const auto& w : o.warnings) s += "warning: " + w + "\n";
  return s;
}

CovariateStack load_grids(const RunConfig& c) {
  CovariateStack stack;
  for (const auto& r : c.rasters) {
    try {
      stack.add(r.name, read_ascii_grid(r.path));
    } catch (const Error& e) {
      throw Error(e.kind(), r.path.string() + ": " + e.what(), e.line());
    }
  }
  return stack;
}

std::vector<Track> load_tracks(const RunConfig& c) {
  try {
    return read_track_csv(c.track);
  } catch (const Error& e) {
    throw Error(e.kind(), c.track.string() + ": " + e.what(), e.line());
  }
}

// Interpolation, regularity split and thinning; every resulting burst has at
// least two locations.
std::vector<Track> preprocess(const RunConfig& c, const std::vector<Track>& tracks, Outputs& out) {
  std::vector<Track> bursts;
  for (const auto& raw : tracks) {
    Track t = raw;
    if (c.interval > 0.0 && c.max_gap > 0.0) t = interpolate_regular(t, c.interval, c.max_gap);
    std::vector<Track> parts;
    if (c.interval > 0.0) {
      BurstSplit split = validate_regular(t, c.interval, c.tolerance);
      if (split.split_points > 0) {
        out.warnings.push_back("track " + t.id + ": split into " + std::to_string(split.bursts.size()) +
                               " bursts at " + std::to_string(split.split_points) + " irregular gaps");
      }
      if (split.singletons > 0) {
        out.warnings.push_back("track " + t.id + ": dropped " + std::to_string(split.singletons) +
                               " isolated locations");
      }
      parts = std::move(split.bursts);
    } else {
      parts.push_back(std::move(t));
    }
    for (auto& p : parts) {
      Track kept = c.thin_by > 1 ? thin(p, c.thin_by) : std::move(p);
      if (kept.usable()) bursts.push_back(std::move(kept));
    }
  }
  if (bursts.empty()) throw Error(ErrorKind::TooFewSteps, "no burst with at least two locations");
  return bursts;
}

Track pooled(const std::vector<Track>& bursts) {
  Track all;
  all.id = bursts.front().id;
  for (const auto& b : bursts) {
    all.times.insert(all.times.end(), b.times.begin(), b.times.end());
    all.coords.insert(all.coords.end(), b.coords.begin(), b.coords.end());
  }
  return all;
}

std::string coefficient_table(const FitResult& fit) {
  std::string s = "coefficients:\n";
  for (const auto& t : fit.terms) {
    s += "  " + t.name + " estimate=" + format_double(t.estimate) + " se=" + format_double(t.se) +
         (t.fixed ? " fixed" : (t.se_valid ? "" : " se_invalid")) + "\n";
  }
  return s;
}

void report_fit(const FitResult& fit, Outputs& out) {
  out.line("model=" + std::string(to_string(fit.kind)));
  out.line("n_obs=" + std::to_string(fit.n_obs));
  out.line("loglik=" + format_double(fit.loglik));
  out.line("converged=" + std::string(fit.converged ? "true" : "false"));
  std::string table = coefficient_table(fit);
  table.pop_back();
  out.line(table);
  for (const auto& w : fit.warnings) out.warnings.push_back(w);
}

void emit_fit(const FitResult& fit, const fs::path& dir, Outputs& out) {
  out.add(dir / "coefficients.csv", format_fit_csv(fit));
  out.add(dir / "coefficients.meta", format_fit_metadata(fit));
  report_fit(fit, out);
}

FitResult run_rsf(const RunConfig& c, const std::vector<Track>& bursts, const CovariateStack& grids, const Rng& rng,
                  Outputs& out) {
  Rng avail = rng.derive("availability");
  const UseAvailTable table = build_use_avail(pooled(bursts), grids, c.ratio, avail, c.buffer);
  out.line("n_used=" + std::to_string(table.n_used));
  out.line("n_available=" + std::to_string(table.n_available));
  if (table.redraws > 0) {
    out.warnings.push_back(std::to_string(table.redraws) + " availability draws fell outside the grids or on nodata and were redrawn");
  }
  FitResult fit = fit_logistic(table, true);
  fit.seed = c.seed;
  return fit;
}

struct SsfRun {
  StepSeries steps;
  KernelFit kernel;
  StepTable table;
  FitResult fit;
};

std::string resolve_covariate(const RunConfig& c) { return c.covariate.empty() ? c.rasters.front().name : c.covariate; }

SsfRun run_ssf(const RunConfig& c, const std::vector<Track>& bursts, const CovariateStack& grids, const Rng& rng,
               Outputs& out, bool fit_model) {
  SsfRun r;
  r.steps = to_steps(bursts, grids);
  r.kernel = fit_tentative_kernel(r.steps);
  if (r.kernel.sd_at_lower_bound) out.warnings.push_back("step lengths have no spread; kernel sd held at its floor");
  Rng ctrl = rng.derive("controls");
  r.table = generate_controls(r.steps, r.kernel.kernel, c.controls, grids, ctrl);
  out.line("kernel.step_mean=" + format_double(r.kernel.kernel.step.mean));
  out.line("kernel.step_sd=" + format_double(r.kernel.kernel.step.sd));
  out.line("kernel.kappa=" + format_double(r.kernel.kernel.angle.kappa));
  out.line("strata=" + std::to_string(r.table.n_strata));
  if (r.table.dropped_controls > 0) {
    out.warnings.push_back(std::to_string(r.table.dropped_controls) + " control steps dropped at the grid edge");
  }
  if (r.table.skipped_steps > 0) {
    out.warnings.push_back(std::to_string(r.table.skipped_steps) +
                           " observed steps skipped (no turn angle or nodata at the end point)");
  }
  if (fit_model) {
    const SsfSpec spec = make_ssf_spec(c.interaction, resolve_covariate(c), grids.names());
    r.fit = fit_conditional_logistic(r.table, spec);
    r.fit.seed = c.seed;
  }
  return r;
}

HmmFit run_hmm(const RunConfig& c, const StepSeries& steps, const Rng& rng, Outputs& out) {
  HmmFitConfig hc;
  hc.restarts = c.restarts;
  hc.initial = c.stationary ? InitialDistribution::Stationary : InitialDistribution::Free;
  hc.estimate_angle_mean = c.estimate_angle_mean;
  hc.threads = c.threads;
  HmmFit fit = fit_hmm(steps, c.states, c.transition_covariates, c.obs_covariates, hc, rng.derive("hmm"));
  std::size_t failed = 0;
  for (const auto& r : fit.restarts) failed += r.failed ? 1 : 0;
  if (failed > 0) out.warnings.push_back(std::to_string(failed) + " of " + std::to_string(fit.restarts.size()) + " restarts failed");
  out.line("best_restart=" + std::to_string(fit.best_restart + 1));
  std::string restarts = "restart_loglik=";
  for (std::size_t i = 0; i < fit.restarts.size(); ++i) {
    restarts += (i ? "," : "") + format_double(fit.restarts[i].failed ? std::nan("") : fit.restarts[i].loglik);
  }
  out.line(restarts);
  for (std::size_t s = 0; s < fit.model.n_states; ++s) {
    const auto& st = fit.model.states[s];
    const std::string p = "state" + std::to_string(s + 1) + ".";
    out.line(p + "step_mean=" + format_double(st.step.mean));
    out.line(p + "step_sd=" + format_double(st.step.sd));
    out.line(p + "kappa=" + format_double(st.angle.kappa));
    out.line(p + "angle_mean=" + format_double(st.angle.mu));
  }
  return fit;
}

FitResult hmm_as_fit(const HmmFit& h, std::uint64_t seed) {
  FitResult f;
  f.kind = ModelKind::HmmSubmodel;
  f.loglik = h.loglik;
  f.n_obs = h.n_obs;
  f.converged = h.converged;
  f.seed = seed;
  f.covariance = h.covariance;
  f.warnings = h.warnings;
  for (std::size_t i = 0; i < h.working.size(); ++i) {
    f.terms.push_back(TermEstimate{h.parameter_names[i], h.working[i], i < h.se.size() ? h.se[i] : 0.0,
                                   i < h.se_valid.size() && h.se_valid[i], false});
  }
  return f;
}

std::string states_csv(const StepSeries& steps, const std::vector<std::vector<std::size_t>>& paths,
                       const Eigen::MatrixXd& probs, std::size_t n_states) {
  std::string s = "id,t,x,y,state";
  for (std::size_t i = 0; i < n_states; ++i) s += ",p_state" + std::to_string(i + 1);
  s += "\n";
  std::size_t t = 0;
  for (const auto& path : paths) {
    for (std::size_t z : path) {
      const Step& st = steps.steps[t];
      s += st.id + "," + format_double(st.t_end) + "," + format_double(st.end.x) + "," + format_double(st.end.y) + "," +
           std::to_string(z + 1);
      for (std::size_t i = 0; i < n_states; ++i) {
        s += "," + format_double(probs(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)));
      }
      s += "\n";
      ++t;
    }
  }
  return s;
}

std::vector<double> default_grid(const CovariateStack& grids, const std::string& covariate) {
  const RasterGrid* g = grids.find(covariate);
  if (!g) throw Error(ErrorKind::MissingCovariate, "no raster named '" + covariate + "'");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double v : g->values) {
    if (g->is_nodata(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo)) throw Error(ErrorKind::DegenerateInput, "covariate '" + covariate + "' is constant; give --grid");
  std::vector<double> out;
  for (int i = 0; i < 50; ++i) out.push_back(lo + (hi - lo) * i / 49.0);
  return out;
}

double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Synthetic prey-diversity landscape: smooth bumps on a gentle gradient.
RasterGrid synthetic_landscape(Rng& rng) {
  RasterGrid g = RasterGrid::filled(160, 160, 0.0, 0.0, 500.0, 0.0);
  struct Bump {
    double x, y, r, h;
  };
  std::vector<Bump> bumps;
  for (int i = 0; i < 12; ++i) {
    bumps.push_back(Bump{rng.uniform(0.0, 80000.0), rng.uniform(0.0, 80000.0), rng.uniform(4000.0, 12000.0),
                         rng.uniform(0.5, 2.0)});
  }
  for (std::size_t r = 0; r < g.nrows; ++r) {
    for (std::size_t c = 0; c < g.ncols; ++c) {
      const Point p = g.cell_center(r, c);
      double v = 0.5 + p.x / 80000.0;
      for (const auto& b : bumps) {
        const double d2 = (p.x - b.x) * (p.x - b.x) + (p.y - b.y) * (p.y - b.y);
        v += b.h * std::exp(-0.5 * d2 / (b.r * b.r));
      }
      g.at(r, c) = std::round(v * 1e4) / 1e4;
    }
  }
  return g;
}

HmmModel synthetic_model(const std::string& covariate) {
  HmmModel m = HmmModel::make(3, {covariate});
  m.states[0] = StateObservation{GammaParams{150.0, 100.0}, VonMisesParams{0.0, 0.3}, {}};
  m.states[1] = StateObservation{GammaParams{800.0, 400.0}, VonMisesParams{0.0, 1.5}, {}};
  m.states[2] = StateObservation{GammaParams{2500.0, 1000.0}, VonMisesParams{0.0, 5.0}, {}};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (i == j) continue;
      m.beta(i, j, 0) = -2.0;
      // Richer prey pulls the animal into slow movement and holds it there.
      m.beta(i, j, 1) = j == 0 ? 0.8 : -0.4;
    }
  }
  return m;
}

void execute(const RunConfig& c, Outputs& out) {
  const Rng rng(c.seed);
  const fs::path& dir = c.out;

  if (c.command == Command::Simulate) {
    CovariateStack grids = load_grids(c);
    Rng land = rng.derive("landscape");
    if (grids.empty()) {
      RasterGrid g = synthetic_landscape(land);
      out.add(dir / "preydiv.asc", format_ascii_grid(g));
      grids.add("preydiv", std::move(g));
    }
    const std::string cov = grids.names().front();
    const HmmModel model = synthetic_model(cov);
    HmmSimulationOptions opts;
    const RasterGrid& g0 = grids.grid(0);
    opts.start = Point{(g0.xll + g0.xmax()) / 2.0, (g0.yll + g0.ymax()) / 2.0};
    opts.t0 = 1351468800.0;  // 2012-10-29T00:00:00Z
    opts.interval_s = 3600.0;
    opts.id = "sim1";
    Rng path_rng = rng.derive("path");
    const SimulatedPath sim = simulate_hmm_on_landscape(model, c.steps, grids, path_rng, opts);
    const std::vector<Track> tracks{sim.track};
    out.add(dir / "track.csv", format_track_csv(tracks));
    std::string truth = "id,t,x,y,state\n";
    for (std::size_t t = 0; t < sim.states.size(); ++t) {
      truth += sim.track.id + "," + format_double(sim.track.times[t + 1]) + "," +
               format_double(sim.track.coords[t + 1].x) + "," + format_double(sim.track.coords[t + 1].y) + "," +
               std::to_string(sim.states[t] + 1) + "\n";
    }
    out.add(dir / "states.csv", truth);
    out.line("locations=" + std::to_string(sim.track.size()));
    for (std::size_t s = 0; s < 3; ++s) {
      out.line("true.state" + std::to_string(s + 1) + ".step_mean=" + format_double(model.states[s].step.mean));
    }
    return;
  }

  const std::vector<Track> tracks = load_tracks(c);
  const CovariateStack grids = load_grids(c);

  if (c.command == Command::Thin) {
    std::vector<Track> thinned;
    std::size_t before = 0;
    std::size_t after = 0;
    for (const auto& b : preprocess(c, tracks, out)) {
      before += b.size();
      thinned.push_back(thin(b, c.k));
      after += thinned.back().size();
    }
    out.add(dir / "track.csv", format_track_csv(thinned));
    out.line("locations_in=" + std::to_string(before));
    out.line("locations_out=" + std::to_string(after));
    return;
  }

  const std::vector<Track> bursts = preprocess(c, tracks, out);
  std::size_t locations = 0;
  for (const auto& b : bursts) locations += b.size();
  out.line("bursts=" + std::to_string(bursts.size()));
  out.line("locations=" + std::to_string(locations));

  switch (c.command) {
    case Command::Steps: {
      const SsfRun r = run_ssf(c, bursts, grids, rng, out, false);
      out.add(dir / "steps.csv", format_step_table_csv(r.table));
      return;
    }
    case Command::FitRsf: {
      const FitResult fit = run_rsf(c, bursts, grids, rng, out);
      emit_fit(fit, dir, out);
      if (!c.scan_ratios.empty()) {
        const auto rows = availability_stability_scan(pooled(bursts), grids, c.scan_ratios, rng.derive("scan"), c.buffer);
        for (const auto& row : rows) {
          if (row.failed) out.warnings.push_back("scan ratio " + std::to_string(row.ratio) + " failed: " + row.error);
        }
        out.add(dir / "scan.csv", format_scan_csv(rows));
      }
      return;
    }
    case Command::FitSsf: {
      const SsfRun r = run_ssf(c, bursts, grids, rng, out, true);
      emit_fit(r.fit, dir, out);
      return;
    }
    case Command::FitHmm: {
      const StepSeries steps = to_steps(bursts, grids);
      const HmmFit fit = run_hmm(c, steps, rng, out);
      emit_fit(hmm_as_fit(fit, c.seed), dir, out);
      return;
    }
    case Command::Decode: {
      const StepSeries steps = to_steps(bursts, grids);
      const HmmFit fit = run_hmm(c, steps, rng, out);
      const auto paths = viterbi_decode(fit.model, steps);
      const Eigen::MatrixXd probs = state_probabilities(fit.model, steps);
      out.add(dir / "states.csv", states_csv(steps, paths, probs, fit.model.n_states));
      std::vector<std::size_t> counts(fit.model.n_states, 0);
      for (const auto& p : paths) {
        for (std::size_t z : p) ++counts[z];
      }
      for (std::size_t s = 0; s < counts.size(); ++s) {
        out.line("decoded.state" + std::to_string(s + 1) + "=" + std::to_string(counts[s]));
      }
      report_fit(hmm_as_fit(fit, c.seed), out);
      return;
    }
    case Command::Logrss: {
      if (c.model == "hmm") {
        const std::string cov = c.covariate.empty() ? c.transition_covariates.front() : c.covariate;
        const StepSeries steps = to_steps(bursts, grids);
        const HmmFit fit = run_hmm(c, steps, rng, out);
        const std::vector<double> grid = c.grid.empty() ? default_grid(grids, cov) : c.grid;
        out.add(dir / "curve.csv", format_curve_csv(state_prob_curve(fit, cov, grid)));
        report_fit(hmm_as_fit(fit, c.seed), out);
        return;
      }
      const std::string cov = resolve_covariate(c);
      const std::vector<double> grid = c.grid.empty() ? default_grid(grids, cov) : c.grid;
      CurveOptions opts;
      opts.reference = c.reference;
      CurveTable curve;
      if (c.model == "rsf") {
        const FitResult fit = run_rsf(c, bursts, grids, rng, out);
        curve = logrss_curve(fit, cov, grid, opts);
        report_fit(fit, out);
      } else {
        const SsfRun r = run_ssf(c, bursts, grids, rng, out, true);
        if (c.interaction) {
          std::vector<double> lengths;
          for (const auto& s : r.steps.steps) lengths.push_back(s.model_length());
          for (double p : {0.25, 0.5, 0.75}) {
            const double l = percentile(lengths, p);
            opts.context = MovementContext::at_length(l);
            opts.series = "l_p" + std::to_string(static_cast<int>(p * 100));
            const CurveTable part = logrss_curve(r.fit, cov, grid, opts);
            curve.rows.insert(curve.rows.end(), part.rows.begin(), part.rows.end());
            out.line(opts.series + ".l=" + format_double(l));
          }
        } else {
          curve = logrss_curve(r.fit, cov, grid, opts);
        }
        report_fit(r.fit, out);
      }
      out.add(dir / "curve.csv", format_curve_csv(curve));
      return;
    }
    case Command::PredictMap: {
      if (c.model == "rsf") {
        const FitResult fit = run_rsf(c, bursts, grids, rng, out);
        out.add(dir / "map_rsf.asc", format_ascii_grid(rsf_map(fit, grids)));
        report_fit(fit, out);
      } else {
        const StepSeries steps = to_steps(bursts, grids);
        const HmmFit fit = run_hmm(c, steps, rng, out);
        const auto maps = hmm_state_maps(fit.model, grids);
        for (std::size_t s = 0; s < maps.size(); ++s) {
          out.add(dir / ("map_state" + std::to_string(s + 1) + ".asc"), format_ascii_grid(maps[s]));
        }
        report_fit(hmm_as_fit(fit, c.seed), out);
      }
      return;
    }
    case Command::Ssud: {
      const SsfRun r = run_ssf(c, bursts, grids, rng, out, true);
      SsudOptions opts;
      opts.n_locations = c.locations;
      opts.burn_in = c.burn_in;
      opts.n_candidates = c.candidates;
      opts.n_chains = c.chains;
      opts.threads = c.threads;
      const SsudResult res = ssud_simulate(r.fit, r.kernel.kernel, grids, opts, rng.derive("ssud"));
      out.add(dir / "map_ssud.asc", format_ascii_grid(res.map));
      out.line("steps_simulated=" + std::to_string(res.steps_simulated));
      out.line("rejected_proposals=" + std::to_string(res.rejected_proposals));
      report_fit(r.fit, out);
      return;
    }
    case Command::Thin:
    case Command::Simulate:
      return;
  }
}

void write_outputs(const fs::path& dir, const Outputs& out, const std::string& report, RunResult& result) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create output directory " + dir.string() + ": " + ec.message());
  for (const auto& [path, content] : out.files) {
    write_text_file(path, content);
    result.written.push_back(path);
  }
  write_text_file(dir / "report.txt", report);
  result.written.push_back(dir / "report.txt");
}

}  // namespace

RunResult run(const RunConfig& config) {
  RunResult result;
  Outputs out;
  try {
    execute(config, out);
    write_outputs(config.out, out, render_report(config, out), result);
    std::error_code ec;
    fs::remove(config.out / "error.txt", ec);
    return result;
  } catch (const Error& e) {
    result.exit_code = exit_code_for(e.kind());
    result.message = e.what();
    std::string report = "error=" + std::string(e.name()) + "\n";
    if (e.line() > 0) report += "line=" + std::to_string(e.line()) + "\n";
    report += "message=" + std::string(e.what()) + "\nexit_code=" + std::to_string(result.exit_code) + "\n";
    report += config_echo(config);
    try {
      std::error_code ec;
      fs::create_directories(config.out, ec);
      write_text_file(config.out / "error.txt", report);
      result.written.push_back(config.out / "error.txt");
    } catch (const Error&) {
      // The error itself is still reported through the exit code and message.
    }
    return result;
  } catch (const std::exception& e) {
    result.exit_code = 1;
    result.message = std::string("internal error: ") + e.what();
    return result;
  }
}

int cli_main(int argc, const char* const* argv) {
  RunConfig cfg;
  try {
    cfg = parse_args(argc, argv);
  } catch (const HelpRequested& h) {
    std::cout << h.what();
    return 0;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  const RunResult r = run(cfg);
  if (r.exit_code != 0) std::cerr << r.message << "\n";
  return r.exit_code;
}

}  // namespace movesel
