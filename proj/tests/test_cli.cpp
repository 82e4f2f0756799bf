#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dode/cli.hpp"
#include "dode/oracle_suite.hpp"

using namespace dode;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream o, e;
  const int c = run_cli(args, o, e);
  return {c, o.str(), e.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("dode_cli_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("schedule-dump writes one row per point") {
  const auto dir = scratch("dump");
  const auto r = run({"schedule-dump", "--kind", "sp", "--points", "100", "--out", dir.string()});
  REQUIRE(r.code == 0);
  const auto csv = slurp(dir / "schedule_sp.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 101);
  CHECK(csv.rfind("gamma,alpha,sigma", 0) == 0);
  CHECK(run({"schedule-dump", "--points", "1", "--out", dir.string()}).code == 1);
  fs::remove_all(dir);
}

TEST_CASE("run manifest replays to identical outputs") {
  const auto dir = scratch("replay");
  const std::vector<std::string> args{"schedule-dump", "--schedule", "vp", "--points", "17", "--out", dir.string(),
                                      "--seed", "5"};
  REQUIRE(run(args).code == 0);
  const auto first = slurp(dir / "schedule_vp.csv");
  const auto m = json::parse(slurp(dir / "run.json"));
  CHECK(m["command"] == "schedule-dump");
  CHECK(m["exit_code"] == 0);
  CHECK(m["seed"] == "5");
  CHECK(m["versions"].contains("eigen"));
  CHECK(m["config"]["schedule"] == "vp");
  fs::remove(dir / "schedule_vp.csv");
  REQUIRE(run(m["argv"].get<std::vector<std::string>>()).code == 0);
  CHECK(slurp(dir / "schedule_vp.csv") == first);
  fs::remove_all(dir);
}

TEST_CASE("oracle-check passes and reports every check") {
  const auto dir = scratch("oracle");
  const auto r = run({"oracle-check", "--out", dir.string()});
  CHECK(r.code == 0);
  const auto rep = json::parse(slurp(dir / "oracle_report.json"));
  CHECK(rep["checks"].size() >= 12);
  CHECK(rep["all_passed"] == true);
  fs::remove_all(dir);
}

TEST_CASE("oracle suite catches a corrupted sigma") {
  const auto bad = [](const LogSnrSchedule& s, double g) {
    auto e = eval_schedule(s, g);
    e.sigma *= 1.01;
    return e;
  };
  const auto rep = run_oracle_suite(1, bad);
  CHECK(!rep.all_passed());
  bool g2_failed = false;
  for (const auto& c : rep.checks)
    if (c.name.find("g2") != std::string::npos && !c.passed) g2_failed = true;
  CHECK(g2_failed);
  CHECK(run_oracle_suite(1).all_passed());
}

TEST_CASE("gradcheck passes for both schedules") {
  for (const char* s : {"vp", "sp"}) {
    const auto dir = scratch(std::string("grad_") + s);
    const auto r = run({"gradcheck", "--schedule", s, "--seed", "2", "--out", dir.string()});
    CHECK_MESSAGE(r.code == 0, r.err);
    const auto g = json::parse(slurp(dir / "gradcheck.json"));
    CHECK(g["max_rel_error"].get<double>() < 1e-4);
    fs::remove_all(dir);
  }
}

TEST_CASE("error exits") {
  const auto dir = scratch("err");
  auto r = run({"nll", "--checkpoint", (dir / "missing.ckpt").string(), "--out", dir.string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("cannot open") != std::string::npos);
  CHECK(json::parse(slurp(dir / "run.json"))["exit_code"] == 1);
  CHECK(run({"schedule-dump", "--bogus"}).code == 1);
  CHECK(run({}).code == 1);
  CHECK(run({"train", "--set", "lr", "--out", dir.string()}).code == 1);
  CHECK(run({"train", "--set", "nope=1", "--out", dir.string()}).code == 1);
  CHECK(run({"--help"}).code == 0);
  fs::remove_all(dir);
}

TEST_CASE("train, sample and nll chain through a checkpoint") {
  const auto dir = scratch("chain");
  const auto o = dir.string();
  auto r = run({"train", "--out", o, "--n", "256", "--eval-n", "8", "--set", "iters=30", "--set", "hidden=16x16",
                "--set", "batch_size=16", "--set", "embed_freqs=2"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto ck = (dir / "checkpoint.dode").string();
  CHECK(fs::exists(dir / "report.csv"));
  r = run({"sample", "--checkpoint", ck, "--n", "3", "--out", o});
  CHECK_MESSAGE(r.code == 0, r.err);
  r = run({"nll", "--checkpoint", ck, "--max-points", "3", "--out", o});
  CHECK_MESSAGE(r.code == 0, r.err);
  const auto lines = slurp(dir / "nll.jsonl");
  CHECK(std::count(lines.begin(), lines.end(), '\n') == 3);
  r = run({"finetune", "--checkpoint", ck, "--out", (dir / "ft").string(), "--n", "64", "--eval-n", "4", "--set",
           "iters=3", "--set", "hidden=16x16", "--set", "batch_size=8", "--set", "embed_freqs=2", "--set",
           "nfe_probe=2"});
  CHECK_MESSAGE(r.code == 0, r.err);
  fs::remove_all(dir);
}
