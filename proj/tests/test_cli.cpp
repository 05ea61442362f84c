#include "doctest.h"

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kQuick =
    " --synthetic \"n=600 seed=3\" --M 20 --train.max_epochs 25 --train.patience 5"
    " --flow.blocks 2 --flow.hidden_sizes 16,16 --qr.hidden_sizes 16,16";

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(VSPS_CLI_PATH) + " -v " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("baseline-only run trains no flow") {
  const auto dir = scratch("vsps_cli_qr");
  REQUIRE(run_cli(std::string("run") + kQuick + " --seeds 0 --methods naive_qr --output.dir " + dir.string(),
                  dir / "log.txt") == 0);
  const auto log = slurp(dir / "log.txt");
  CHECK(log.find("quantile training") != std::string::npos);
  CHECK(log.find("flow training") == std::string::npos);
  const auto report = json::parse(slurp(dir / "report.json"));
  CHECK_FALSE(report["seeds"][0]["methods"].contains("vsps"));
  fs::remove_all(dir);
}

TEST_CASE("regions.csv agrees with the report") {
  const auto dir = scratch("vsps_cli_regions");
  REQUIRE(run_cli(std::string("run") + kQuick + " --seeds 0,1 --output.dir " + dir.string(), dir / "log.txt") == 0);
  const auto report = json::parse(slurp(dir / "report.json"));

  std::map<std::pair<int, std::string>, std::pair<int, int>> tally;  // covered, total
  std::ifstream in(dir / "regions.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "seed,test_index,method,covered,y,geometry");
  while (std::getline(in, line)) {
    std::stringstream row(line);
    std::string seed, index, method, covered;
    std::getline(row, seed, ',');
    std::getline(row, index, ',');
    std::getline(row, method, ',');
    std::getline(row, covered, ',');
    auto& t = tally[{std::stoi(seed), method}];
    t.first += covered == "1";
    t.second += 1;

    // geometry is the last quoted cell
    const auto start = line.rfind(",\"{");
    REQUIRE(start != std::string::npos);
    std::string cell = line.substr(start + 2, line.size() - start - 3);
    std::string unquoted;
    for (std::size_t i = 0; i < cell.size(); ++i) {
      unquoted += cell[i];
      if (cell[i] == '"' && i + 1 < cell.size() && cell[i + 1] == '"') ++i;
    }
    const auto geometry = json::parse(unquoted);
    if (method == "vsps") {
      CHECK(geometry["centers"].size() == geometry["k"].get<std::size_t>());
    } else {
      CHECK(geometry["lower"].size() == 2);
      CHECK(geometry["upper"].size() == 2);
    }
  }
  for (const auto& rec : report["seeds"]) {
    const int seed = rec["seed"].get<int>();
    for (const char* method : {"vsps", "naive_qr"}) {
      const auto [hit, total] = tally[{seed, method}];
      REQUIRE(total > 0);
      CHECK(static_cast<double>(hit) / total == rec["methods"][method]["coverage"].get<double>());
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("identical runs give identical reports apart from the timestamp") {
  const auto a = scratch("vsps_cli_det_a"), b = scratch("vsps_cli_det_b");
  const std::string common = std::string("run") + kQuick + " --seeds 4";
  REQUIRE(run_cli(common + " --output.dir " + a.string(), a / "log.txt") == 0);
  REQUIRE(run_cli(common + " --output.dir " + b.string(), b / "log.txt") == 0);
  auto ra = json::parse(slurp(a / "report.json")), rb = json::parse(slurp(b / "report.json"));
  ra.erase("timestamp");
  rb.erase("timestamp");
  ra["config"].erase("output");
  rb["config"].erase("output");
  CHECK(ra.dump() == rb.dump());
  CHECK(slurp(a / "regions.csv") == slurp(b / "regions.csv"));
  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("bad input exits with a config error") {
  const auto dir = scratch("vsps_cli_bad");
  CHECK(run_cli("run --alpha 2 --output.dir " + dir.string(), dir / "log.txt") == 1);
  CHECK(run_cli("run --no-such-flag 1", dir / "log.txt") != 0);
  fs::remove_all(dir);
}

TEST_CASE("synthetic subcommand writes a loadable csv") {
  const auto dir = scratch("vsps_cli_syn");
  REQUIRE(run_cli("synthetic --n 40 --seed 2 -o " + (dir / "d.csv").string(), dir / "log.txt") == 0);
  const auto text = slurp(dir / "d.csv");
  CHECK(text.rfind("x0,y0,y1\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 41);
  fs::remove_all(dir);
}
