#include "doctest.h"

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(HDSHAP_CLI) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  std::size_t got = 0;
  while ((got = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), got);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path fresh(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("hdshap_test_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

// Small enough to keep the full pipeline to a few seconds.
fs::path small_config() {
  const auto path = fs::temp_directory_path() / "hdshap_test_cli_config.json";
  std::ofstream(path) << R"({
    "data": {"n_samples": 300},
    "models": {"boosted": {"n_rounds": 20}, "mlp": {"epochs": 20, "hidden": [8]}},
    "shap": {"background_size": 20, "n_coalitions": 64},
    "cluster": {"min_cluster_size": 8}
  })";
  return path;
}

}  // namespace

TEST_CASE("version and usage errors") {
  const auto v = run("--version");
  CHECK(v.code == 0);
  CHECK(v.output.find("0.1.0") != std::string::npos);
  CHECK(run("frobnicate").code != 0);
  const auto dir = fresh("badkey");
  CHECK(run("simulate --out " + dir.string() + " --set data.bogus=1").code == 2);
  CHECK(run("simulate --out " + dir.string() + " --set data.n_samples=abc").code == 2);
  CHECK(run("simulate --out " + dir.string() + " --config /nonexistent.json").code == 3);
}

TEST_CASE("missing artifacts exit with code 3 and name the producing command") {
  const auto dir = fresh("missing");
  const auto r = run("explain --out " + dir.string() + " --model tree");
  CHECK(r.code == 3);
  CHECK(r.output.find("missing artifact:") != std::string::npos);
  CHECK(r.output.find("hdshap train --model tree") != std::string::npos);
  CHECK(run("report --out " + dir.string()).code == 3);
}

TEST_CASE("full run: artifacts, resume, determinism and hash guard") {
  const auto cfg = small_config().string();
  const auto a = fresh("run_a"), b = fresh("run_b");
  const auto ra = run("run --out " + a.string() + " --config " + cfg);
  REQUIRE_MESSAGE(ra.code == 0, ra.output);
  for (const char* rel : {"manifest.json", "data/train.csv", "data/test.json", "models/tree.json",
                          "models/boosted.metrics.json", "models/mlp.json", "shap/boosted.json", "shap/mlp.csv",
                          "clusters/boosted.labels.csv", "clusters/boosted.purity.json", "plots/boosted.paths.svg",
                          "plots/boosted.waterfall.svg", "plots/boosted.heatmap.svg", "plots/tree.bar.svg",
                          "report.html"})
    CHECK_MESSAGE(fs::exists(a / rel), rel);

  const json manifest = json::parse(slurp(a / "manifest.json"));
  CHECK(manifest["tool_version"] == "0.1.0");
  CHECK(manifest["config"]["data"]["n_samples"] == 300);
  for (const auto& [name, entries] : manifest["artifacts"].items())
    for (const auto& e : entries) CHECK_MESSAGE(fs::exists(a / e["path"].get<std::string>()), name);

  const auto rb = run("run --out " + b.string() + " --config " + cfg);
  REQUIRE(rb.code == 0);
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file() || entry.path().filename() == "manifest.json") continue;
    const auto rel = fs::relative(entry.path(), a);
    CHECK_MESSAGE(slurp(entry.path()) == slurp(b / rel), rel.string());
  }
  CHECK(json::parse(slurp(b / "manifest.json"))["artifacts"] == manifest["artifacts"]);

  // A finished run resumes without recomputing.
  const auto before = fs::last_write_time(a / "models/mlp.json");
  const auto again = run("run --out " + a.string());
  CHECK(again.code == 0);
  CHECK(fs::last_write_time(a / "models/mlp.json") == before);
  CHECK(run("report --out " + a.string()).code == 0);

  const auto mismatch = run("simulate --out " + a.string() + " --n 500");
  CHECK(mismatch.code == 2);
  CHECK(mismatch.output.find("config hash mismatch") != std::string::npos);
  // Thread count is not part of the configuration identity.
  CHECK(run("report --out " + a.string() + " --threads 2").code == 0);
}

TEST_CASE("stage commands with options") {
  const auto cfg = small_config().string();
  const auto dir = fresh("stages");
  const std::string out = " --out " + dir.string();
  REQUIRE(run("simulate" + out + " --config " + cfg).code == 0);
  REQUIRE(run("train" + out + " --model tree,boosted").code == 0);
  REQUIRE(run("explain" + out + " --model boosted").code == 0);
  REQUIRE(run("cluster" + out).code == 0);
  CHECK(run("waterfall" + out + " --mode paths --fit-on vertices").code == 2);  // config changed
  const auto dir2 = fresh("stages2");
  const std::string out2 = " --out " + dir2.string();
  REQUIRE(run("simulate" + out2 + " --config " + cfg + " --set plots.fit_on=\"vertices\"").code == 0);
  REQUIRE(run("train" + out2 + " --model boosted").code == 0);
  REQUIRE(run("explain" + out2 + " --model boosted").code == 0);
  REQUIRE(run("cluster" + out2).code == 0);
  CHECK(run("waterfall" + out2 + " --mode both").code == 0);
  CHECK(fs::exists(dir2 / "plots/boosted.paths.csv"));
  CHECK(run("waterfall" + out2 + " --mode sideways").code == 2);
  CHECK(run("embed" + out2).code == 0);
  CHECK(slurp(dir2 / "clusters/boosted.embedding.csv").rfind("sample_id,pc1,pc2,label", 0) == 0);
  CHECK(run("heatmap" + out2).code == 0);
  CHECK(run("bar" + out2 + " --model tree").code == 3);
}

TEST_CASE("loading the idx fixture") {
  const std::string data = HDSHAP_TEST_DATA;
  const auto dir = fresh("idx");
  const auto r = run("load --out " + dir.string() + " --idx-images " + data + "/mnist-1k-images.idx3-ubyte" +
                     " --idx-labels " + data + "/mnist-1k-labels.idx1-ubyte --classes 0,1,7 --scale");
  REQUIRE_MESSAGE(r.code == 0, r.output);
  const json info = json::parse(slurp(dir / "data/dataset.json"));
  CHECK(info["class_names"] == json::array({"0", "1", "7"}));
}
