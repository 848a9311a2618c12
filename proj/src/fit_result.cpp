#include "movesel/fit_result.hpp"

#include <limits>
#include <tuple>

#include "movesel/error.hpp"
#include "movesel/io.hpp"

namespace movesel {

std::string_view to_string(ModelKind kind) noexcept {
  switch (kind) {
    case ModelKind::Rsf: return "rsf";
    case ModelKind::Ssf: return "ssf";
    case ModelKind::HmmSubmodel: return "hmm-submodel";
  }
  return "unknown";
}

const TermEstimate* FitResult::find(std::string_view name) const noexcept {
  for (const TermEstimate& t : terms) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

double FitResult::coefficient(std::string_view name, double fallback) const noexcept {
  const TermEstimate* t = find(name);
  return t ? t->estimate : fallback;
}

double FitResult::cov(std::size_t i, std::size_t j) const noexcept {
  if (i >= terms.size() || j >= terms.size() || terms[i].fixed || terms[j].fixed) return 0.0;
  auto free_index = [&](std::size_t k) {
    Eigen::Index idx = 0;
    for (std::size_t m = 0; m < k; ++m) {
      if (!terms[m].fixed) ++idx;
    }
    return idx;
  };
  const Eigen::Index a = free_index(i);
  const Eigen::Index b = free_index(j);
  if (a >= covariance.rows() || b >= covariance.cols()) return 0.0;
  return covariance(a, b);
}

std::vector<std::string> term_factors(std::string_view term) {
  std::vector<std::string> out;
  for (auto part : split(term, ':')) out.emplace_back(part);
  return out;
}

std::string format_fit_csv(const FitResult& fit) {
  std::string out = "term,estimate,se,se_valid\n";
  for (const TermEstimate& t : fit.terms) {
    out += t.name + "," + format_double(t.estimate) + "," + format_double(t.se) + "," +
           (t.se_valid ? "1" : "0") + "\n";
  }
  return out;
}

std::string format_fit_metadata(const FitResult& fit) {
  std::string out;
  out += "model=" + std::string(to_string(fit.kind)) + "\n";
  out += "loglik=" + format_double(fit.loglik) + "\n";
  out += "n=" + std::to_string(fit.n_obs) + "\n";
  out += "converged=" + std::string(fit.converged ? "true" : "false") + "\n";
  out += "seed=" + std::to_string(fit.seed) + "\n";
  std::string fixed;
  for (const TermEstimate& t : fit.terms) {
    if (t.fixed) fixed += (fixed.empty() ? "" : ",") + t.name;
  }
  if (!fixed.empty()) out += "fixed=" + fixed + "\n";
  for (const auto& [name, value] : fit.case_means) out += "mean." + name + "=" + format_double(value) + "\n";
  for (Eigen::Index i = 0; i < fit.covariance.rows(); ++i) {
    for (Eigen::Index j = 0; j < fit.covariance.cols(); ++j) {
      out += "cov." + std::to_string(i) + "." + std::to_string(j) + "=" + format_double(fit.covariance(i, j)) + "\n";
    }
  }
  return out;
}

FitResult parse_fit(std::string_view csv, std::string_view metadata) {
  FitResult fit;
  std::size_t line_no = 0;
  bool header = false;
  for (auto raw : split(csv, '\n')) {
    ++line_no;
    auto line = trim(raw);
    if (line.empty()) continue;
    if (!header) {
      if (line != "term,estimate,se,se_valid") throw Error(ErrorKind::ParseError, "bad coefficient header", line_no);
      header = true;
      continue;
    }
    auto cells = split(line, ',');
    if (cells.size() != 4) throw Error(ErrorKind::ParseError, "expected 4 fields", line_no);
    TermEstimate t;
    t.name = std::string(cells[0]);
    if (!parse_double(cells[1], t.estimate)) throw Error(ErrorKind::ParseError, "bad estimate", line_no);
    if (cells[2] == "NaN") {
      t.se = std::numeric_limits<double>::quiet_NaN();
    } else if (!parse_double(cells[2], t.se)) {
      throw Error(ErrorKind::ParseError, "bad se", line_no);
    }
    if (cells[3] != "0" && cells[3] != "1") throw Error(ErrorKind::ParseError, "bad se_valid", line_no);
    t.se_valid = cells[3] == "1";
    fit.terms.push_back(std::move(t));
  }
  if (!header) throw Error(ErrorKind::ParseError, "missing coefficient header", 1);

  std::size_t n_free = fit.terms.size();
  std::vector<std::tuple<Eigen::Index, Eigen::Index, double>> cov_entries;
  line_no = 0;
  for (auto raw : split(metadata, '\n')) {
    ++line_no;
    auto line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw Error(ErrorKind::ParseError, "expected key=value", line_no);
    const auto key = line.substr(0, eq);
    const auto value = line.substr(eq + 1);
    double v = 0.0;
    if (key == "model") {
      if (value == "rsf") fit.kind = ModelKind::Rsf;
      else if (value == "ssf") fit.kind = ModelKind::Ssf;
      else if (value == "hmm-submodel") fit.kind = ModelKind::HmmSubmodel;
      else throw Error(ErrorKind::ParseError, "unknown model kind", line_no);
    } else if (key == "loglik") {
      if (!parse_double(value, fit.loglik)) throw Error(ErrorKind::ParseError, "bad loglik", line_no);
    } else if (key == "n") {
      if (!parse_double(value, v)) throw Error(ErrorKind::ParseError, "bad n", line_no);
      fit.n_obs = static_cast<std::size_t>(v);
    } else if (key == "converged") {
      fit.converged = value == "true";
    } else if (key == "seed") {
      fit.seed = std::stoull(std::string(value));
    } else if (key == "fixed") {
      for (auto name : split(value, ',')) {
        for (TermEstimate& t : fit.terms) {
          if (t.name == name) {
            t.fixed = true;
            --n_free;
          }
        }
      }
    } else if (key.substr(0, 5) == "mean.") {
      if (!parse_double(value, v)) throw Error(ErrorKind::ParseError, "bad mean", line_no);
      fit.case_means[std::string(key.substr(5))] = v;
    } else if (key.substr(0, 4) == "cov.") {
      auto parts = split(key, '.');
      double i = 0, j = 0;
      if (parts.size() != 3 || !parse_double(parts[1], i) || !parse_double(parts[2], j) || !parse_double(value, v)) {
        throw Error(ErrorKind::ParseError, "bad covariance entry", line_no);
      }
      cov_entries.emplace_back(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j), v);
    } else {
      throw Error(ErrorKind::ParseError, "unknown key '" + std::string(key) + "'", line_no);
    }
  }
  const auto n = static_cast<Eigen::Index>(n_free);
  fit.covariance = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [i, j, v] : cov_entries) {
    if (i >= n || j >= n) throw Error(ErrorKind::ParseError, "covariance index out of range");
    fit.covariance(i, j) = v;
  }
  return fit;
}

void write_fit(const FitResult& fit, const std::filesystem::path& csv_path, const std::filesystem::path& meta_path) {
  write_text_file(csv_path, format_fit_csv(fit));
  write_text_file(meta_path, format_fit_metadata(fit));
}

}  // namespace movesel
