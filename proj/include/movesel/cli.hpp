#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "movesel/error.hpp"

namespace movesel {

enum class Command { Thin, Steps, FitRsf, FitSsf, FitHmm, Decode, Logrss, PredictMap, Ssud, Simulate };

std::string_view to_string(Command command) noexcept;

struct RasterArg {
  std::string name;
  std::filesystem::path path;
};

struct RunConfig {
  Command command = Command::Thin;
  std::filesystem::path track;
  std::vector<RasterArg> rasters;
  std::filesystem::path out = ".";
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  // Preprocessing. interval 0 skips the regularity check.
  double interval = 0.0;
  double tolerance = 0.1;
  double max_gap = 0.0;  // > 0 interpolates gaps up to this length first
  std::size_t k = 10;    // thin command
  std::size_t thin_by = 1;  // applied before fitting

  // fit-rsf
  std::size_t ratio = 10;
  double buffer = 0.0;
  std::vector<std::size_t> scan_ratios;

  // fit-ssf / steps / ssud
  std::size_t controls = 10;
  std::string covariate;  // defaults to the first raster
  bool interaction = false;

  // fit-hmm / decode
  std::size_t states = 3;
  std::size_t restarts = 25;
  std::vector<std::string> transition_covariates;  // defaults to every raster
  std::vector<std::string> obs_covariates;
  bool stationary = false;
  bool estimate_angle_mean = false;

  // logrss / predict-map
  std::string model = "rsf";
  std::vector<double> grid;  // empty: 50 points over the covariate's range
  std::optional<double> reference;

  // ssud
  std::size_t locations = 100000;
  std::size_t burn_in = 1000;
  std::size_t candidates = 50;
  std::size_t chains = 1;

  // simulate
  std::size_t steps = 1000;
};

// Thrown by parse_args for --help; what() holds the help text.
struct HelpRequested : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Throws Error(UsageError) on unknown flags, missing required options or
// invalid values.
RunConfig parse_args(int argc, const char* const* argv);

struct RunResult {
  int exit_code = 0;
  std::vector<std::filesystem::path> written;
  std::string message;
};

// Runs the pipeline. Outputs are assembled in memory and written at the end
// through temporary files, so a failed run leaves existing files untouched.
// Exit 0 on success, 1 on model-fit failure, 2 on usage or input errors; on
// failure error.txt in the output directory names the error kind.
RunResult run(const RunConfig& config);

// Exit code an error kind maps to (1 for model failures, 2 otherwise).
int exit_code_for(ErrorKind kind) noexcept;

// Convenience entry point used by the executable.
int cli_main(int argc, const char* const* argv);

}  // namespace movesel
