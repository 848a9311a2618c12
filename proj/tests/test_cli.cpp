#include "doctest.h"

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "movesel/cli.hpp"
#include "movesel/error.hpp"
#include "movesel/fit_result.hpp"
#include "movesel/io.hpp"
#include "movesel/raster.hpp"
#include "movesel/track.hpp"
#include "test_support.hpp"

using namespace movesel;
namespace fs = std::filesystem;

namespace {

const fs::path kData = MOVESEL_DATA_DIR;
const std::string kTrack = (kData / "track.csv").string();
const std::string kRaster = "preydiv=" + (kData / "preydiv.asc").string();

RunConfig parse(std::vector<std::string> args) {
  args.insert(args.begin(), "movesel");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return parse_args(static_cast<int>(argv.size()), argv.data());
}

ErrorKind parse_error_kind(std::vector<std::string> args) {
  try {
    parse(std::move(args));
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::IoError;
}

struct Shell {
  int code;
  std::string err;
};

// Runs the installed executable, capturing stderr.
Shell cli(const std::string& args) {
  const fs::path errfile = fs::temp_directory_path() / "movesel_cli_stderr.txt";
  const std::string cmd = std::string(MOVESEL_CLI_PATH) + " " + args + " >/dev/null 2>" + errfile.string();
  const int status = std::system(cmd.c_str());
  Shell s{WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_text_file(errfile)};
  return s;
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_text_file(e.path());
  }
  return out;
}

// First n locations of the bundled track, the size of the case-study track.
fs::path short_track(const fs::path& dir, std::size_t n) {
  auto tracks = read_track_csv(kTrack);
  Track& t = tracks.front();
  t.times.resize(n);
  t.coords.resize(n);
  const fs::path p = dir / "short.csv";
  write_track_csv(tracks, p);
  return p;
}

std::size_t count_lines_starting(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) n += line.rfind(prefix, 0) == 0;
  return n;
}

std::string report_value(const std::string& report, const std::string& key) {
  std::istringstream in(report);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
  }
  return {};
}

}  // namespace

TEST_SUITE("parse_args") {
  TEST_CASE("fit-hmm example") {
    const RunConfig c = parse({"fit-hmm", "--track", "t.csv", "--raster", "preydiv=p.asc", "--states", "3", "--seed", "7"});
    CHECK(c.command == Command::FitHmm);
    CHECK(c.states == 3);
    CHECK(c.seed == 7);
    REQUIRE(c.rasters.size() == 1);
    CHECK(c.rasters[0].name == "preydiv");
    CHECK(c.rasters[0].path == fs::path("p.asc"));
    CHECK(c.transition_covariates == std::vector<std::string>{"preydiv"});
  }

  TEST_CASE("case-study defaults") {
    const RunConfig thin = parse({"thin", "--track", "t.csv"});
    CHECK(thin.k == 10);
    CHECK(thin.seed == 0);
    CHECK(parse({"fit-rsf", "--track", "t.csv", "--raster", "a=a.asc"}).ratio == 10);
    CHECK(parse({"fit-ssf", "--track", "t.csv", "--raster", "a=a.asc"}).controls == 10);
    CHECK(parse({"fit-hmm", "--track", "t.csv"}).states == 3);
    CHECK(parse({"ssud", "--track", "t.csv", "--raster", "a=a.asc"}).locations == 100000);
  }

  TEST_CASE("usage errors") {
    CHECK(parse_error_kind({"fit-hmm", "--raster", "a=a.asc"}) == ErrorKind::UsageError);
    CHECK(parse_error_kind({"fit-rsf", "--track", "t.csv", "--raster", "a=a.asc", "--bogus", "1"}) ==
          ErrorKind::UsageError);
    CHECK(parse_error_kind({"fit-rsf", "--track", "t.csv"}) == ErrorKind::UsageError);
    CHECK(parse_error_kind({"fit-rsf", "--track", "t.csv", "--raster", "noequals"}) == ErrorKind::UsageError);
    CHECK(parse_error_kind({"fit-rsf", "--track", "t.csv", "--raster", "a=x", "--raster", "a=y"}) ==
          ErrorKind::UsageError);
    CHECK(parse_error_kind({"logrss", "--track", "t.csv", "--raster", "a=x", "--grid", "2:1:5"}) ==
          ErrorKind::UsageError);
    CHECK(parse_error_kind({"fit-hmm", "--track", "t.csv", "--states", "0"}) == ErrorKind::UsageError);
    CHECK(parse_error_kind({}) == ErrorKind::UsageError);
  }

  TEST_CASE("grid arguments") {
    const RunConfig a = parse({"logrss", "--track", "t", "--raster", "a=x", "--grid", "0:1:5"});
    CHECK(a.grid == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
    const RunConfig b = parse({"logrss", "--track", "t", "--raster", "a=x", "--grid", "1, 2.5,4", "--reference", "2"});
    CHECK(b.grid == std::vector<double>{1.0, 2.5, 4.0});
    REQUIRE(b.reference.has_value());
    CHECK(*b.reference == 2.0);
  }
}

TEST_SUITE("executable") {
  TEST_CASE("exit codes") {
    const fs::path dir = testsupport::fresh_dir("cli_exit");
    CHECK(cli("fit-hmm --raster " + kRaster).code == 2);
    CHECK(cli("--help").code == 0);
    CHECK(cli("fit-rsf --track " + (dir / "absent.csv").string() + " --raster " + kRaster + " --out " + dir.string())
              .code == 2);
    CHECK(read_text_file(dir / "error.txt").find("error=IoError") != std::string::npos);
  }

  TEST_CASE("corrupt raster reports the line") {
    const fs::path dir = testsupport::fresh_dir("cli_corrupt");
    std::string text = read_text_file(kData / "preydiv.asc");
    // Break the second data row (line 8 of the file).
    std::size_t pos = 0;
    for (int i = 0; i < 7; ++i) pos = text.find('\n', pos) + 1;
    text.insert(pos, "abc ");
    write_text_file(dir / "bad.asc", text);
    const Shell s = cli("fit-rsf --track " + kTrack + " --raster preydiv=" + (dir / "bad.asc").string() + " --out " +
                        (dir / "out").string());
    CHECK(s.code == 2);
    const std::string err = read_text_file(dir / "out" / "error.txt");
    CHECK(err.find("error=ParseError") != std::string::npos);
    CHECK(report_value(err, "line") == "8");
    CHECK(s.err.find("8") != std::string::npos);
  }

  TEST_CASE("model failure exits 1 and leaves earlier outputs untouched") {
    const fs::path dir = testsupport::fresh_dir("cli_fail");
    const RasterGrid real = read_ascii_grid(kData / "preydiv.asc");
    RasterGrid flat = RasterGrid::filled(real.nrows, real.ncols, real.xll, real.yll, real.cellsize, 1.0);
    write_ascii_grid(flat, dir / "flat.asc");
    fs::create_directories(dir / "out");
    write_text_file(dir / "out" / "coefficients.csv", "sentinel\n");
    const Shell s = cli("fit-rsf --track " + kTrack + " --raster a=" + (dir / "flat.asc").string() + " --out " +
                        (dir / "out").string());
    CHECK(s.code == 1);
    CHECK(read_text_file(dir / "out" / "coefficients.csv") == "sentinel\n");
    CHECK(read_text_file(dir / "out" / "error.txt").find("error=SingularDesign") != std::string::npos);
  }

  TEST_CASE("case-study-shaped pipeline: 140 locations, thin and fit-rsf") {
    const fs::path dir = testsupport::fresh_dir("cli_case");
    const fs::path t140 = short_track(dir, 140);
    CHECK(cli("thin --track " + t140.string() + " --out " + (dir / "thin").string()).code == 0);
    const auto thinned = read_track_csv(dir / "thin" / "track.csv");
    REQUIRE(thinned.size() == 1);
    CHECK(thinned[0].size() == 14);

    CHECK(cli("fit-rsf --track " + t140.string() + " --raster " + kRaster + " --seed 3 --out " + (dir / "rsf").string())
              .code == 0);
    const std::string report = read_text_file(dir / "rsf" / "report.txt");
    CHECK(report_value(report, "seed") == "3");
    CHECK(report_value(report, "n_used") == "140");
    CHECK(report_value(report, "n_available") == "1400");
    const FitResult fit = parse_fit(read_text_file(dir / "rsf" / "coefficients.csv"),
                                    read_text_file(dir / "rsf" / "coefficients.meta"));
    REQUIRE(fit.terms.size() == 2);
    for (const auto& t : fit.terms) CHECK(report.find(t.name) != std::string::npos);
    CHECK(report_value(report, "warnings") ==
          std::to_string(count_lines_starting(report, "warning: ")));
  }

  TEST_CASE("fits, maps and curves are deterministic and readable") {
    const fs::path dir = testsupport::fresh_dir("cli_det");
    const fs::path t = short_track(dir, 200);
    const std::vector<std::string> commands{
        "fit-ssf --interaction",
        "steps --controls 5",
        "logrss --model ssf --interaction --grid 0:3:7",
        "predict-map --model hmm --restarts 3",
        "decode --restarts 3",
        "ssud --locations 2000 --burn-in 100",
    };
    for (const auto& cmd : commands) {
      CAPTURE(cmd);
      const std::string base = cmd + " --track " + t.string() + " --raster " + kRaster + " --seed 11 --threads 1";
      REQUIRE(cli(base + " --out " + (dir / "a").string()).code == 0);
      REQUIRE(cli(base + " --out " + (dir / "b").string()).code == 0);
      const auto a = tree(dir / "a");
      CHECK(a == tree(dir / "b"));
      const std::string report = a.at("report.txt");
      CHECK(report_value(report, "seed") == "11");
      CHECK(report_value(report, "warnings") == std::to_string(count_lines_starting(report, "warning: ")));
      for (const auto& [name, content] : a) {
        if (name.ends_with(".asc")) {
          const RasterGrid m = parse_ascii_grid(content);
          double s = 0.0;
          for (double v : m.values) {
            if (!m.is_nodata(v)) s += v;
          }
          if (cmd.starts_with("ssud")) CHECK(std::abs(s - 1.0) < 1e-9);
        }
        if (name == "coefficients.csv") {
          const FitResult f = parse_fit(content, a.at("coefficients.meta"));
          for (const auto& term : f.terms) CHECK(report.find(term.name) != std::string::npos);
        }
        if (name == "curve.csv") CHECK(content.rfind("series,x,value,se\n", 0) == 0);
      }
      if (cmd.starts_with("predict-map")) {
        CHECK(a.count("map_state1.asc") == 1);
        CHECK(a.count("map_state2.asc") == 1);
        CHECK(a.count("map_state3.asc") == 1);
        CHECK(a.count("map_state4.asc") == 0);
      }
      if (cmd.starts_with("logrss")) CHECK(count_lines_starting(a.at("curve.csv"), "l_p") == 21);
      fs::remove_all(dir / "a");
      fs::remove_all(dir / "b");
    }
  }

  TEST_CASE("simulate reproduces the bundled dataset") {
    const fs::path dir = testsupport::fresh_dir("cli_sim");
    REQUIRE(cli("simulate --seed 2012 --steps 500 --out " + dir.string()).code == 0);
    for (const char* f : {"track.csv", "states.csv", "preydiv.asc"}) {
      CAPTURE(f);
      CHECK(read_text_file(dir / f) == read_text_file(kData / f));
    }
  }
}
