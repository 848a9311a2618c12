#include "movesel/predict.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

#include "movesel/error.hpp"
#include "movesel/io.hpp"

namespace movesel {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double movement_value(std::string_view factor, const MovementContext& ctx) {
  if (factor == kStepLengthColumn) return ctx.l;
  if (factor == kLogStepLengthColumn) return ctx.ln_l;
  return ctx.cos_theta;
}

bool has_movement_factor(const std::vector<std::string>& factors) {
  return std::any_of(factors.begin(), factors.end(), [](const std::string& f) { return is_movement_column(f); });
}

bool only_movement_factors(const std::vector<std::string>& factors) {
  return std::all_of(factors.begin(), factors.end(), [](const std::string& f) { return is_movement_column(f); });
}

// Covariate-only term: coefficient and the grid index of each factor.
struct HabitatTerm {
  double beta = 0.0;
  std::vector<std::size_t> grid_index;
};

std::size_t grid_index_of(const CovariateStack& grids, const std::string& name) {
  auto i = grids.index_of(name);
  if (!i) throw Error(ErrorKind::MissingCovariate, "no grid for covariate '" + name + "'");
  return *i;
}

std::vector<HabitatTerm> habitat_terms(const FitResult& fit, const CovariateStack& grids) {
  std::vector<HabitatTerm> out;
  for (const auto& t : fit.terms) {
    if (t.name == kInterceptTerm) continue;
    const auto factors = term_factors(t.name);
    if (has_movement_factor(factors)) continue;
    HabitatTerm h{t.estimate, {}};
    for (const auto& f : factors) h.grid_index.push_back(grid_index_of(grids, f));
    out.push_back(std::move(h));
  }
  return out;
}

// Cell index when the point is inside the grids and every listed covariate
// has data there.
std::optional<std::size_t> valid_cell(const CovariateStack& grids, const std::vector<std::size_t>& needed, Point p) {
  auto cell = grids.grid(0).cell_index(p);
  if (!cell) return std::nullopt;
  for (std::size_t g : needed) {
    const RasterGrid& grid = grids.grid(g);
    if (grid.is_nodata(grid.values[*cell])) return std::nullopt;
  }
  return cell;
}

double habitat_eta(const std::vector<HabitatTerm>& terms, const CovariateStack& grids, std::size_t cell) {
  double eta = 0.0;
  for (const auto& t : terms) {
    double v = t.beta;
    for (std::size_t g : t.grid_index) v *= grids.grid(g).values[cell];
    eta += v;
  }
  return eta;
}

void require_grids(const CovariateStack& grids) {
  if (grids.empty()) throw Error(ErrorKind::DomainError, "at least one covariate grid is required");
}

}  // namespace

std::vector<std::string> CurveTable::series() const {
  std::vector<std::string> out;
  for (const auto& r : rows) {
    if (std::find(out.begin(), out.end(), r.series) == out.end()) out.push_back(r.series);
  }
  return out;
}

std::string format_curve_csv(const CurveTable& table) {
  std::string out = "series,x,value,se\n";
  for (const auto& r : table.rows) {
    out += r.series + "," + format_double(r.x) + "," + format_double(r.value) + "," + format_double(r.se) + "\n";
  }
  return out;
}

MovementContext MovementContext::at_length(double length, double cos_theta) {
  if (!(length > 0.0)) throw Error(ErrorKind::DomainError, "movement context step length must be positive");
  return MovementContext{length, std::log(length), cos_theta};
}

LogRss log_rss(const FitResult& fit, const std::map<std::string, double>& x1, const std::map<std::string, double>& x2,
               const std::optional<MovementContext>& context) {
  const std::size_t k = fit.terms.size();
  std::vector<double> diff(k, 0.0);
  auto lookup = [](const std::map<std::string, double>& x, const std::string& name) {
    auto it = x.find(name);
    if (it == x.end()) throw Error(ErrorKind::MissingCovariate, "no value for covariate '" + name + "'");
    return it->second;
  };
  for (std::size_t i = 0; i < k; ++i) {
    const auto& t = fit.terms[i];
    if (t.name == kInterceptTerm) continue;
    const auto factors = term_factors(t.name);
    if (only_movement_factors(factors)) continue;  // identical movement context on both sides
    if (has_movement_factor(factors) && !context) {
      throw Error(ErrorKind::MissingMovementContext, "term '" + t.name + "' needs a movement context");
    }
    double a = 1.0;
    double b = 1.0;
    for (const auto& f : factors) {
      if (is_movement_column(f)) {
        const double m = movement_value(f, *context);
        a *= m;
        b *= m;
      } else {
        a *= lookup(x1, f);
        b *= lookup(x2, f);
      }
    }
    diff[i] = a - b;
  }
  LogRss out;
  for (std::size_t i = 0; i < k; ++i) out.value += fit.terms[i].estimate * diff[i];
  double var = 0.0;
  bool valid = true;
  for (std::size_t i = 0; i < k; ++i) {
    if (diff[i] == 0.0) continue;
    if (!fit.terms[i].fixed && !fit.terms[i].se_valid) valid = false;
    for (std::size_t j = 0; j < k; ++j) {
      if (diff[j] != 0.0) var += diff[i] * diff[j] * fit.cov(i, j);
    }
  }
  out.se = valid ? std::sqrt(std::max(var, 0.0)) : kNaN;
  return out;
}

CurveTable logrss_curve(const FitResult& fit, const std::string& covariate, std::span<const double> grid,
                        const CurveOptions& options) {
  if (grid.empty()) throw Error(ErrorKind::DomainError, "curve grid is empty");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw Error(ErrorKind::DomainError, "curve grid must be strictly increasing");
  }
  double reference = 0.0;
  if (options.reference) {
    reference = *options.reference;
  } else {
    auto it = fit.case_means.find(covariate);
    if (it == fit.case_means.end()) {
      throw Error(ErrorKind::MissingCovariate, "fit has no used-data mean for '" + covariate + "'");
    }
    reference = it->second;
  }
  std::map<std::string, double> base;
  for (const auto& t : fit.terms) {
    if (t.name == kInterceptTerm) continue;
    for (const auto& f : term_factors(t.name)) {
      if (is_movement_column(f) || f == covariate) continue;
      if (auto o = options.others.find(f); o != options.others.end()) {
        base[f] = o->second;
      } else if (auto m = fit.case_means.find(f); m != fit.case_means.end()) {
        base[f] = m->second;
      } else {
        base[f] = 0.0;
      }
    }
  }
  auto x2 = base;
  x2[covariate] = reference;
  CurveTable table;
  for (double x : grid) {
    auto x1 = base;
    x1[covariate] = x;
    const LogRss r = log_rss(fit, x1, x2, options.context);
    table.rows.push_back(CurveRow{options.series, x, r.value, r.se});
  }
  return table;
}

RasterGrid rsf_map(const FitResult& fit, const CovariateStack& grids) {
  require_grids(grids);
  std::vector<HabitatTerm> terms;
  std::vector<std::size_t> needed;
  for (const auto& t : fit.terms) {
    if (t.name == kInterceptTerm) continue;
    HabitatTerm h{t.estimate, {}};
    for (const auto& f : term_factors(t.name)) {
      const std::size_t g = grid_index_of(grids, f);
      h.grid_index.push_back(g);
      if (std::find(needed.begin(), needed.end(), g) == needed.end()) needed.push_back(g);
    }
    terms.push_back(std::move(h));
  }
  const RasterGrid& geom = grids.grid(0);
  RasterGrid out = geom;
  const std::size_t n = geom.size();
  std::vector<char> valid(n, 1);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t g : needed) {
      if (grids.grid(g).is_nodata(grids.grid(g).values[c])) valid[c] = 0;
    }
    if (!valid[c]) {
      out.values[c] = out.nodata;
      continue;
    }
    out.values[c] = habitat_eta(terms, grids, c);
    mx = std::max(mx, out.values[c]);
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    if (valid[c]) sum += std::exp(out.values[c] - mx);
  }
  for (std::size_t c = 0; c < n; ++c) {
    if (valid[c]) out.values[c] = std::exp(out.values[c] - mx) / sum;
  }
  return out;
}

namespace {

struct ChainSetup {
  std::vector<HabitatTerm> habitat;
  std::vector<std::size_t> needed;         // grids that must have data at a candidate
  std::vector<std::string> local_names;    // covariates feeding the kernel update
  std::vector<std::size_t> local_index;
  bool per_step_update = false;
  MovementKernel fixed_kernel;
};

ChainSetup prepare_chain(const FitResult& fit, const MovementKernel& kernel, const CovariateStack& grids,
                         const KernelUpdateOptions& update) {
  require_grids(grids);
  ChainSetup s;
  s.habitat = habitat_terms(fit, grids);
  for (const auto& t : fit.terms) {
    if (t.name == kInterceptTerm) continue;
    const auto factors = term_factors(t.name);
    const bool mixed = has_movement_factor(factors) && !only_movement_factors(factors);
    for (const auto& f : factors) {
      if (is_movement_column(f)) continue;
      const std::size_t g = grid_index_of(grids, f);
      if (std::find(s.needed.begin(), s.needed.end(), g) == s.needed.end()) s.needed.push_back(g);
      if (mixed && std::find(s.local_names.begin(), s.local_names.end(), f) == s.local_names.end()) {
        s.local_names.push_back(f);
        s.local_index.push_back(g);
      }
    }
  }
  s.per_step_update = !s.local_names.empty();
  if (!s.per_step_update) s.fixed_kernel = update_movement_kernel(kernel, fit, {}, update);
  return s;
}

// Runs one path, calling visit(position, cell) after every accepted step.
template <typename Visit>
std::size_t run_chain(const FitResult& fit, const MovementKernel& kernel, const CovariateStack& grids,
                      const ChainSetup& setup, std::size_t n_steps, Point pos, double heading, Rng& rng,
                      std::size_t n_candidates, const KernelUpdateOptions& update, Visit&& visit) {
  if (n_candidates == 0) throw Error(ErrorKind::DomainError, "n_candidates must be at least 1");
  auto here = valid_cell(grids, setup.needed, pos);
  if (!here) throw Error(ErrorKind::OutOfExtent, "path start is outside the grids or on nodata");
  constexpr std::size_t kMaxConsecutiveRejects = 1000;
  std::vector<Point> cand_pos(n_candidates);
  std::vector<double> cand_heading(n_candidates);
  std::vector<std::size_t> cand_cell(n_candidates);
  std::vector<double> weight(n_candidates);
  std::size_t rejected = 0;
  std::map<std::string, double> local;
  for (std::size_t step = 0; step < n_steps; ++step) {
    MovementKernel k = setup.fixed_kernel;
    if (setup.per_step_update) {
      for (std::size_t i = 0; i < setup.local_names.size(); ++i) {
        local[setup.local_names[i]] = grids.grid(setup.local_index[i]).values[*here];
      }
      k = update_movement_kernel(kernel, fit, local, update);
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n_candidates; ++c) {
      std::size_t fails = 0;
      for (;;) {
        const double l = sample_gamma(k.step, rng);
        const double h = wrap_angle(heading + sample_vonmises(k.angle, rng));
        const Point p{pos.x + l * std::cos(h), pos.y + l * std::sin(h)};
        if (auto cell = valid_cell(grids, setup.needed, p)) {
          cand_pos[c] = p;
          cand_heading[c] = h;
          cand_cell[c] = *cell;
          break;
        }
        ++rejected;
        if (++fails >= kMaxConsecutiveRejects) {
          throw Error(ErrorKind::ExtentExhausted,
                      std::to_string(kMaxConsecutiveRejects) + " consecutive proposals left the grids at step " +
                          std::to_string(step));
        }
      }
      weight[c] = habitat_eta(setup.habitat, grids, cand_cell[c]);
      mx = std::max(mx, weight[c]);
    }
    double sum = 0.0;
    for (auto& w : weight) {
      w = std::exp(w - mx);
      sum += w;
    }
    const double u = rng.uniform() * sum;
    std::size_t pick = n_candidates - 1;
    double acc = 0.0;
    for (std::size_t c = 0; c < n_candidates; ++c) {
      acc += weight[c];
      if (u < acc) {
        pick = c;
        break;
      }
    }
    pos = cand_pos[pick];
    heading = cand_heading[pick];
    here = cand_cell[pick];
    visit(pos, *here);
  }
  return rejected;
}

}  // namespace

Track simulate_ssf_path(const FitResult& fit, const MovementKernel& kernel, const CovariateStack& grids,
                        std::size_t n_steps, Point start, double heading, Rng& rng, std::size_t n_candidates,
                        const KernelUpdateOptions& update) {
  const ChainSetup setup = prepare_chain(fit, kernel, grids, update);
  Track track;
  track.id = "ssf";
  track.times.push_back(0.0);
  track.coords.push_back(start);
  run_chain(fit, kernel, grids, setup, n_steps, start, heading, rng, n_candidates, update,
            [&](Point p, std::size_t) {
              track.times.push_back(static_cast<double>(track.times.size()));
              track.coords.push_back(p);
            });
  return track;
}

SsudResult ssud_simulate(const FitResult& fit, const MovementKernel& kernel, const CovariateStack& grids,
                         const SsudOptions& options, const Rng& rng) {
  if (options.n_locations == 0) throw Error(ErrorKind::DomainError, "n_locations must be positive");
  if (options.n_chains == 0) throw Error(ErrorKind::DomainError, "n_chains must be positive");
  if (options.thin == 0) throw Error(ErrorKind::DomainError, "thin must be positive");
  const ChainSetup setup = prepare_chain(fit, kernel, grids, options.update);
  const RasterGrid& geom = grids.grid(0);
  const std::size_t n_cells = geom.size();

  std::vector<std::size_t> valid_cells;
  for (std::size_t c = 0; c < n_cells; ++c) {
    bool ok = true;
    for (std::size_t g : setup.needed) ok = ok && !grids.grid(g).is_nodata(grids.grid(g).values[c]);
    if (ok) valid_cells.push_back(c);
  }
  if (valid_cells.empty()) throw Error(ErrorKind::DomainError, "no cell has data for every covariate");

  struct ChainOut {
    std::vector<std::uint64_t> counts;
    std::vector<std::vector<std::uint64_t>> batches;
    std::size_t steps = 0;
    std::size_t rejected = 0;
    std::exception_ptr error;
  };
  std::vector<ChainOut> chains(options.n_chains);
  const auto run = [&](std::size_t c) {
    ChainOut& out = chains[c];
    try {
      Rng chain_rng = rng.derive("ssud-chain:" + std::to_string(c));
      const std::size_t records =
          options.n_locations / options.n_chains + (c < options.n_locations % options.n_chains ? 1 : 0);
      out.counts.assign(n_cells, 0);
      out.batches.assign(options.batches, std::vector<std::uint64_t>(n_cells, 0));
      const Point start = options.start ? *options.start : geom.cell_center(valid_cells[chain_rng.index(valid_cells.size())]);
      const double heading = chain_rng.uniform(-std::numbers::pi, std::numbers::pi);
      const std::size_t n_steps = options.burn_in + records * options.thin;
      std::size_t step = 0;
      std::size_t recorded = 0;
      out.rejected = run_chain(fit, kernel, grids, setup, n_steps, start, heading, chain_rng, options.n_candidates,
                               options.update, [&](Point, std::size_t cell) {
                                 ++step;
                                 if (step <= options.burn_in || (step - options.burn_in) % options.thin != 0) return;
                                 ++out.counts[cell];
                                 if (options.batches > 0) ++out.batches[recorded * options.batches / records][cell];
                                 ++recorded;
                               });
      out.steps = n_steps;
    } catch (...) {
      out.error = std::current_exception();
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, options.n_chains));
  if (threads == 1) {
    for (std::size_t c = 0; c < options.n_chains; ++c) run(c);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t c = w; c < options.n_chains; c += threads) run(c);
      });
    }
    for (auto& t : pool) t.join();
  }

  SsudResult result;
  result.counts.assign(n_cells, 0);
  for (auto& ch : chains) {
    if (ch.error) std::rethrow_exception(ch.error);
    for (std::size_t i = 0; i < n_cells; ++i) result.counts[i] += ch.counts[i];
    result.steps_simulated += ch.steps;
    result.rejected_proposals += ch.rejected;
    for (const auto& b : ch.batches) {
      std::uint64_t total = 0;
      for (auto v : b) total += v;
      std::vector<double> row(n_cells, 0.0);
      for (std::size_t i = 0; i < n_cells; ++i) row[i] = total > 0 ? static_cast<double>(b[i]) / static_cast<double>(total) : 0.0;
      result.batch_maps.push_back(std::move(row));
    }
  }
  std::uint64_t total = 0;
  for (auto v : result.counts) total += v;
  result.map = geom;
  std::fill(result.map.values.begin(), result.map.values.end(), result.map.nodata);
  for (std::size_t c : valid_cells) {
    result.map.values[c] = static_cast<double>(result.counts[c]) / static_cast<double>(total);
  }
  return result;
}

RasterGrid ssud_map(const FitResult& fit, const MovementKernel& kernel, const CovariateStack& grids,
                    const SsudOptions& options, const Rng& rng) {
  return ssud_simulate(fit, kernel, grids, options, rng).map;
}

namespace {

std::vector<double> transition_values(const HmmModel& model, const std::string& covariate, double x,
                                      const std::map<std::string, double>& others) {
  std::vector<double> v;
  for (const auto& name : model.transition_covariates) {
    if (name == covariate) {
      v.push_back(x);
    } else if (auto it = others.find(name); it != others.end()) {
      v.push_back(it->second);
    } else {
      v.push_back(0.0);
    }
  }
  return v;
}

}  // namespace

CurveTable state_prob_curve(const HmmFit& fit, const std::string& covariate, std::span<const double> grid,
                            const std::map<std::string, double>& others) {
  const HmmModel& model = fit.model;
  if (std::find(model.transition_covariates.begin(), model.transition_covariates.end(), covariate) ==
      model.transition_covariates.end()) {
    throw Error(ErrorKind::MissingCovariate, "'" + covariate + "' is not a transition covariate of the fit");
  }
  if (grid.empty()) throw Error(ErrorKind::DomainError, "curve grid is empty");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw Error(ErrorKind::DomainError, "curve grid must be strictly increasing");
  }
  const std::vector<double> working = fit.working.empty() ? hmm_working_parameters(model) : fit.working;
  const auto names = hmm_parameter_names(model);
  std::vector<std::size_t> tp;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i].rfind("gamma", 0) == 0) tp.push_back(i);
  }
  bool cov_ok = static_cast<std::size_t>(fit.covariance.rows()) == working.size();
  for (std::size_t i : tp) cov_ok = cov_ok && i < fit.se_valid.size() && fit.se_valid[i];

  const std::size_t n = model.n_states;
  const auto pi_at = [&](const HmmModel& m, double x) {
    return stationary_distribution(transition_matrix(m, transition_values(m, covariate, x, others)));
  };

  CurveTable table;
  std::vector<std::vector<CurveRow>> per_state(n);
  for (double x : grid) {
    const Eigen::VectorXd pi = pi_at(model, x);
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(tp.size()));
    if (cov_ok) {
      std::vector<double> w = working;
      for (std::size_t k = 0; k < tp.size(); ++k) {
        const std::size_t idx = tp[k];
        const double h = 1e-5 * std::max(1.0, std::abs(working[idx]));
        w[idx] = working[idx] + h;
        const Eigen::VectorXd up = pi_at(hmm_from_working(model, w), x);
        w[idx] = working[idx] - h;
        const Eigen::VectorXd down = pi_at(hmm_from_working(model, w), x);
        w[idx] = working[idx];
        jac.col(static_cast<Eigen::Index>(k)) = (up - down) / (2.0 * h);
      }
    }
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(tp.size()), static_cast<Eigen::Index>(tp.size()));
    if (cov_ok) {
      for (std::size_t a = 0; a < tp.size(); ++a) {
        for (std::size_t b = 0; b < tp.size(); ++b) {
          sub(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
              fit.covariance(static_cast<Eigen::Index>(tp[a]), static_cast<Eigen::Index>(tp[b]));
        }
      }
    }
    for (std::size_t s = 0; s < n; ++s) {
      double se = kNaN;
      if (cov_ok) {
        const Eigen::RowVectorXd j = jac.row(static_cast<Eigen::Index>(s));
        se = std::sqrt(std::max(0.0, (j * sub * j.transpose())(0, 0)));
      }
      per_state[s].push_back(CurveRow{"state" + std::to_string(s + 1), x, pi(static_cast<Eigen::Index>(s)), se});
    }
  }
  for (auto& rows : per_state) table.rows.insert(table.rows.end(), rows.begin(), rows.end());
  return table;
}

std::vector<RasterGrid> hmm_state_maps(const HmmModel& model, const CovariateStack& grids) {
  require_grids(grids);
  std::vector<std::size_t> idx;
  for (const auto& name : model.transition_covariates) idx.push_back(grid_index_of(grids, name));
  const RasterGrid& geom = grids.grid(0);
  const std::size_t n = model.n_states;
  std::vector<RasterGrid> maps(n, geom);
  std::vector<double> x(idx.size());
  std::optional<Eigen::VectorXd> constant;
  if (idx.empty()) constant = stationary_distribution(transition_matrix(model, std::span<const double>{}));
  for (std::size_t c = 0; c < geom.size(); ++c) {
    bool ok = true;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const RasterGrid& g = grids.grid(idx[k]);
      x[k] = g.values[c];
      ok = ok && !g.is_nodata(x[k]);
    }
    if (!ok) {
      for (auto& m : maps) m.values[c] = m.nodata;
      continue;
    }
    const Eigen::VectorXd pi = constant ? *constant : stationary_distribution(transition_matrix(model, x));
    for (std::size_t s = 0; s < n; ++s) maps[s].values[c] = pi(static_cast<Eigen::Index>(s));
  }
  return maps;
}

}  // namespace movesel
