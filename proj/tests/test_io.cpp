#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <unistd.h>

#include "nsum/draws_io.hpp"
#include "nsum/manifest.hpp"
#include "nsum/rng.hpp"

using namespace nsum;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("nsum_io_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Draws sample_draws() {
  Draws d;
  d.param_names = {"rho[1]", "rho[2]", "eps[1,1]"};
  d.seed = 42;
  d.warmup = 10;
  d.thin = 2;
  RngStream rng(1, 1);
  for (int c = 0; c < 2; ++c) {
    Eigen::MatrixXd m(25, 3);
    for (int i = 0; i < 25; ++i)
      for (int j = 0; j < 3; ++j) m(i, j) = rng.normal();
    d.values.push_back(m);
  }
  d.chain_meta.resize(2);
  d.info["model"] = "correlated";
  d.info["bias_convention"] = "mean-one";
  return d;
}

}  // namespace

TEST_CASE("draws csv round-trip preserves values bit-exactly") {
  TempDir dir;
  const Draws d = sample_draws();
  const std::string path = (dir.path / "draws.csv").string();
  write_draws_csv(d, path);
  const Draws r = read_draws_csv(path);
  REQUIRE(r.param_names == d.param_names);
  REQUIRE(r.num_chains() == 2);
  for (int c = 0; c < 2; ++c) CHECK(r.values[c] == d.values[c]);
}

TEST_CASE("draws csv skip-prefix filter drops parameter families") {
  TempDir dir;
  const Draws d = sample_draws();
  const std::string path = (dir.path / "draws.csv").string();
  write_draws_csv(d, path, {"eps["});
  const Draws r = read_draws_csv(path);
  CHECK(r.param_names == std::vector<std::string>{"rho[1]", "rho[2]"});
}

TEST_CASE("draws bundle keeps metadata") {
  TempDir dir;
  const Draws d = sample_draws();
  write_draws_bundle(d, dir.path.string());
  const Draws r = read_draws_bundle(dir.path.string());
  CHECK(r.seed == 42);
  CHECK(r.thin == 2);
  CHECK(r.info.at("model") == "correlated");
  CHECK(r.info.at("bias_convention") == "mean-one");
  CHECK(r.values[1] == d.values[1]);
}

TEST_CASE("summary json parses and carries the expected fields") {
  TempDir dir;
  const Draws d = sample_draws();
  const std::string path = (dir.path / "summary.json").string();
  write_summary_json(d, path);
  std::ifstream in(path);
  nlohmann::json j;
  in >> j;
  CHECK(j.at("chains") == 2);
  CHECK(j.at("seed") == 42);
  const auto& p = j.at("params").at("rho[1]");
  CHECK(p.contains("mean"));
  CHECK(p.contains("q2.5"));
  CHECK(p.contains("q97.5"));
  CHECK(p.contains("rhat"));
  CHECK(p.contains("ess"));
  CHECK(std::abs(p.at("mean").get<double>()) < 0.3);
}

TEST_CASE("manifest hash is stable and content-sensitive") {
  CHECK(fnv1a_hex("abc") == fnv1a_hex("abc"));
  CHECK(fnv1a_hex("abc") != fnv1a_hex("abd"));
  CHECK(fnv1a_hex("") .size() == 16);

  TempDir dir;
  RunManifest m;
  m.command = "fit correlated";
  m.config_hash = fnv1a_hex("config bytes");
  m.seed = 7;
  m.started_at = "2026-01-01T00:00:00Z";
  m.finished_at = "2026-01-01T00:00:01Z";
  m.outputs = {"draws.csv"};
  const std::string path = (dir.path / "manifest.json").string();
  write_manifest(m, path);
  std::ifstream in(path);
  nlohmann::json j;
  in >> j;
  CHECK(j.at("command") == "fit correlated");
  CHECK(j.at("outputs").size() == 1);
  CHECK(j.at("toolkit_version") == kToolkitVersion);
}
