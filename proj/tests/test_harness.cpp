#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bayesflow/config.hpp"
#include "bayesflow/error.hpp"
#include "bayesflow/experiment.hpp"
#include "bayesflow/parallel.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace bayesflow;
namespace fs = std::filesystem;

namespace {

ExperimentConfig config_of(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

// The message of the config error thrown by f.
template <class F>
std::string config_error(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
    return e.what();
  }
  FAIL("expected a config error");
  return {};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bayesflow_harness_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_manifest(const std::vector<ManifestEntry>& a, const std::vector<ManifestEntry>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].path != b[i].path || a[i].sha256 != b[i].sha256) return false;
  return true;
}

const char* const kTwoMetrics = R"(schema_version = 1
experiment = lambda_g
[model]
name = gauss(1,0;0,0.1)
box = -1,1
[lambda_g]
metrics = Gstar=sigma_inverse(1) Ge=scaled_identity(10)
)";

const char* const kOuDecay = R"(schema_version = 1
experiment = flow_decay
[model]
name = ou(1)
box = -8,8
[numerics]
dx = 0.01
dt = 0.001
t_end = 2
window = 0.5,2
[flow]
flow = kl_fp
functional = kl
initial = gauss(2,1)
)";

const char* const kLangevin = R"(schema_version = 1
experiment = sampler
seed = 11
[model]
name = ou(1)
box = -6,6
[numerics]
dx = 0.05
dt = 0.01
t_end = 1
record_every = 0.25
[sampler]
kind = langevin
N = 4000
initial = point(2)
trace_thin = 400
)";

const char* const kGraph = R"(schema_version = 1
experiment = graph_ssl
seed = 5
[graph]
source = path(3)
labels = 0:1 2:-1
alpha = 1
likelihood = probit
gamma = 0.5
steps = 20000
dt = 0.05
)";

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult cli(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + BAYESFLOW_CLI + "\" " + args + " >\"" + out.string() +
                          "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

fs::path write_config(const fs::path& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_CASE("config parsing names the offending field") {
  const auto cfg = config_of(kTwoMetrics);
  CHECK(cfg.experiment() == "lambda_g");
  CHECK(cfg.get("model.name") == "gauss(1,0;0,0.1)");
  CHECK(cfg.get_doubles("model.box") == std::vector<double>{-1.0, 1.0});
  CHECK(!cfg.seed().has_value());

  CHECK(config_error([] { config_of("experiment = lambda_g\n"); }).find("schema_version") != std::string::npos);
  CHECK(config_error([] { config_of("schema_version = 2\nexperiment = lambda_g\n"); }).find("schema_version") !=
        std::string::npos);
  CHECK(config_error([] { config_of("schema_version = 1\n"); }).find("experiment") != std::string::npos);

  const auto bad = config_of("schema_version = 1\nexperiment = spectral\nseed = x\n[numerics]\ndx = 0.1abc\nsteps = 2.5\n");
  CHECK(config_error([&] { bad.get_double("numerics.dx"); }).find("numerics.dx") != std::string::npos);
  CHECK(config_error([&] { bad.get_int("numerics.steps"); }).find("numerics.steps") != std::string::npos);
  CHECK(config_error([&] { bad.seed(); }).find("seed") != std::string::npos);
  CHECK(config_error([&] { bad.get("numerics.dt"); }).find("numerics.dt") != std::string::npos);
  CHECK(bad.get_double("numerics.dt", 0.5) == 0.5);
}

TEST_CASE("validation rejects unknown keys and missing seeds") {
  auto cfg = config_of(kTwoMetrics);
  validate_experiment(cfg);

  cfg.set("model.name", "gaus(1)");
  CHECK(config_error([&] { validate_experiment(cfg); }).find("gaus") != std::string::npos);

  auto exp = config_of(kTwoMetrics);
  exp.set("experiment", "lambda");
  CHECK(config_error([&] { validate_experiment(exp); }).find("lambda") != std::string::npos);

  auto metric = config_of(kTwoMetrics);
  metric.set("lambda_g.metrics", "Gstar=sigma_invers(1)");
  CHECK(config_error([&] { validate_experiment(metric); }).find("sigma_invers") != std::string::npos);

  auto sampler = config_of(kLangevin);
  validate_experiment(sampler);
  std::map<std::string, std::string> values = sampler.values();
  values.erase("seed");
  CHECK(config_error([&] { validate_experiment(ExperimentConfig(values)); }).find("seed") != std::string::npos);

  auto graph = config_of(kGraph);
  validate_experiment(graph);
  graph.set("graph.source", "star(4)");
  CHECK(config_error([&] { validate_experiment(graph); }).find("star") != std::string::npos);
}

TEST_CASE("lambda_g experiment reproduces the two-metric Gaussian example") {
  const fs::path dir = scratch("lambda_g");
  const auto rep = run_experiment(config_of(kTwoMetrics), dir);
  CHECK(rep.scalars.at("lambda_Gstar") == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(rep.scalars.at("lambda_Ge") == doctest::Approx(0.1).epsilon(1e-8));
  CHECK(rep.scalars.at("lip_Gstar") == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(rep.scalars.at("lip_Ge") == doctest::Approx(1.0).epsilon(1e-8));

  REQUIRE(rep.manifest.size() == 1);
  CHECK(rep.manifest[0].path == "lambda_g.csv");
  CHECK(rep.manifest[0].sha256 == sha256_file(dir / "lambda_g.csv"));
  CHECK(read_file(dir / "lambda_g.csv").rfind("metric,lambda_g,lipschitz,argmin\n", 0) == 0);

  const auto json = nlohmann::json::parse(read_file(dir / "report.json"));
  CHECK(json["experiment"] == "lambda_g");
  CHECK(json["schema_version"] == kSchemaVersion);
  CHECK(json["config"]["model.name"] == "gauss(1,0;0,0.1)");
  CHECK(json["scalars"]["lambda_Ge"].get<double>() == rep.scalars.at("lambda_Ge"));
  CHECK(json["manifest"][0]["sha256"] == rep.manifest[0].sha256);
  CHECK(json["wall_time_s"].get<double>() >= 0.0);

  auto fd = config_of(kTwoMetrics);
  fd.set("numerics.derivatives", "finite_difference");
  const auto rep_fd = run_experiment(fd, scratch("lambda_g_fd"));
  CHECK(std::abs(rep_fd.scalars.at("lambda_Gstar") - 1.0) <= 1e-4);
  CHECK(std::abs(rep_fd.scalars.at("lambda_Ge") - 0.1) <= 1e-4);
}

TEST_CASE("sha256 matches known digests") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("flow_decay on the unit OU model decays at least at rate one") {
  const fs::path dir = scratch("flow");
  const auto rep = run_experiment(config_of(kOuDecay), dir);
  CHECK(rep.scalars.at("fitted_rate") <= -1.0 + 0.05);
  CHECK(rep.scalars.at("final_value") < rep.scalars.at("initial_value"));
  const std::string csv = read_file(dir / "decay.csv");
  CHECK(!csv.empty());
  CHECK(rep.manifest.at(0).sha256 == sha256_hex(csv));

  const auto again = run_experiment(config_of(kOuDecay), scratch("flow_again"));
  CHECK(same_manifest(rep.manifest, again.manifest));
  CHECK(again.scalars == rep.scalars);
}

TEST_CASE("spectral experiment recovers the OU gap") {
  const auto rep = run_experiment(config_of(R"(schema_version = 1
experiment = spectral
[model]
name = ou(2)
box = -14,14
[numerics]
dx = 0.02
)"),
                                  scratch("spectral"));
  CHECK(rep.scalars.at("lambda2") == doctest::Approx(0.5).epsilon(0.01));
  CHECK(rep.manifest.size() == 2);
}

TEST_CASE("metric ranking follows the feasibility constraint") {
  auto cfg = config_of(R"(schema_version = 1
experiment = metric_rank
[model]
name = gauss(1,0;0,0.1)
box = -1,1
[metric_rank]
metrics = I=euclidean Ge=scaled_identity(10) Gstar=sigma_inverse(1)
)");
  const fs::path dir = scratch("rank");
  const auto rep = run_experiment(cfg, dir);
  const auto& table = rep.tables.at("ranking");
  REQUIRE(table.size() == 3);
  CHECK(table[0]["metric"] == "Gstar");
  CHECK(table[1]["metric"] == "Ge");
  CHECK(table[2]["metric"] == "I");
  CHECK(table[0]["lambda_g"].get<double>() == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(table[1]["lambda_g"].get<double>() == doctest::Approx(0.1).epsilon(1e-8));
  // G = I: lambda is the smallest eigenvalue of Sigma^-1, above the winner,
  // but the drift is too steep.
  CHECK(table[2]["lambda_g"].get<double>() == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(table[2]["lipschitz"].get<double>() == doctest::Approx(10.0).epsilon(1e-8));
  CHECK(table[0]["feasible"] == true);
  CHECK(table[1]["feasible"] == true);
  CHECK(table[2]["feasible"] == false);
  CHECK(rep.scalars.at("feasible_count") == 2.0);
  CHECK(read_file(dir / "metric_rank.csv").find("3,I,") != std::string::npos);

  cfg.set("metric_rank.metrics", "Gstar=sigma_inverse(1)");
  const auto single = run_experiment(cfg, scratch("rank_single"));
  CHECK(single.tables.at("ranking")[0]["metric"] == "Gstar");
  CHECK(single.scalars.at("best_lambda") == doctest::Approx(1.0).epsilon(1e-8));

  cfg.set("metric_rank.metrics", "a0.5=sigma_inverse(0.5) a4=sigma_inverse(4) a1=sigma_inverse(1) a2=sigma_inverse(2)");
  const auto scaled = run_experiment(cfg, scratch("rank_scaled")).tables.at("ranking");
  REQUIRE(scaled.size() == 4);
  const char* order[] = {"a1", "a2", "a4", "a0.5"};
  const double lambda[] = {1.0, 0.5, 0.25, 2.0};
  for (int i = 0; i < 4; ++i) {
    CHECK(scaled[i]["metric"] == order[i]);
    CHECK(scaled[i]["lambda_g"].get<double>() == doctest::Approx(lambda[i]).epsilon(1e-8));
    CHECK(scaled[i]["feasible"] == (i < 3));
  }

  cfg.set("metric_rank.metrics", "I=euclidean");
  const auto none = run_experiment(cfg, scratch("rank_none"));
  CHECK(none.scalars.at("feasible_count") == 0.0);
  CHECK(none.scalars.count("best_lambda") == 0);

  cfg.set("metric_rank.metrics", "D=diag_poly");
  CHECK(config_error([&] { run_experiment(cfg, scratch("rank_bad")); }).find("'D'") != std::string::npos);
}

TEST_CASE("stochastic experiments are reproducible across thread counts") {
  const auto cfg = config_of(kLangevin);
  std::vector<ManifestEntry> first;
  std::map<std::string, double> scalars;
  for (int threads : {1, 2, 4}) {
    set_thread_count(threads);
    const auto rep = run_experiment(cfg, scratch("langevin_" + std::to_string(threads)));
    if (threads == 1) {
      first = rep.manifest;
      scalars = rep.scalars;
      CHECK(rep.manifest.size() == 3);
      CHECK(std::abs(rep.scalars.at("mean_1") - 2.0 * std::exp(-1.0)) < 0.05);
    } else {
      CHECK(same_manifest(first, rep.manifest));
      CHECK(rep.scalars == scalars);
    }
  }
  set_thread_count(1);

  auto other = cfg;
  other.set("seed", "12");
  CHECK(!same_manifest(first, run_experiment(other, scratch("langevin_seed")).manifest));
}

TEST_CASE("graph_ssl experiment reports MAP and label probabilities") {
  const fs::path dir = scratch("graph");
  const auto rep = run_experiment(config_of(kGraph), dir);
  CHECK(rep.scalars.at("map_gradient_norm") <= 1e-8);
  CHECK(rep.scalars.at("prob_plus_0") > 0.5);
  CHECK(rep.scalars.at("prob_plus_2") < 0.5);
  CHECK(rep.scalars.at("precond_lambda_g") >= 1.0 - 1e-6);
  CHECK(std::abs(rep.scalars.at("mean_u_0") + rep.scalars.at("mean_u_1") + rep.scalars.at("mean_u_2")) < 1e-10);
  CHECK(rep.manifest.size() == 2);
  CHECK(read_file(dir / "labels.csv").size() > 0);

  auto again = run_experiment(config_of(kGraph), scratch("graph_again"));
  CHECK(same_manifest(rep.manifest, again.manifest));
}

TEST_CASE("downstream errors carry the experiment name") {
  auto cfg = config_of(kOuDecay);
  cfg.set("numerics.scheme", "explicit");
  cfg.set("numerics.dt", "0.1");
  try {
    run_experiment(cfg, scratch("unstable"));
    FAIL("expected a stability error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::stability);
    CHECK(std::string(e.what()).find("experiment flow_decay") != std::string::npos);
  }
}

TEST_CASE("command-line exit codes and error JSON") {
  const fs::path dir = scratch("cli");
  const fs::path good = write_config(dir, "good.ini", kTwoMetrics);

  auto r = cli("catalog", dir);
  CHECK(r.code == 0);
  CHECK(r.out.find("sigma_inverse") != std::string::npos);
  CHECK(r.out.find("ou(sigma2)") != std::string::npos);

  r = cli("validate \"" + good.string() + "\"", dir);
  CHECK(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["valid"] == true);

  r = cli("run \"" + good.string() + "\" --out \"" + (dir / "out").string() + "\"", dir);
  CHECK(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["scalars"]["lambda_Ge"].get<double>() == doctest::Approx(0.1));
  CHECK(fs::exists(dir / "out" / "report.json"));

  std::string bad_text = kTwoMetrics;
  bad_text.replace(bad_text.find("gauss("), 6, "gaus(");
  const fs::path bad = write_config(dir, "bad.ini", bad_text);
  for (const std::string verb : {"validate", "run"}) {
    r = cli(verb + " \"" + bad.string() + "\"", dir);
    CHECK(r.code == 2);
    const auto err = nlohmann::json::parse(r.err);
    CHECK(err["error"] == "config");
    CHECK(err["message"].get<std::string>().find("gaus") != std::string::npos);
  }

  r = cli("run \"" + (dir / "missing.ini").string() + "\"", dir);
  CHECK(r.code == 2);
  CHECK(nlohmann::json::parse(r.err)["error"] == "config");

  r = cli("run \"" + good.string() + "\" --threads 0", dir);
  CHECK(r.code == 2);
  r = cli("frobnicate", dir);
  CHECK(r.code == 2);

  std::string unstable = kOuDecay;
  unstable.replace(unstable.find("dt = 0.001"), 10, "dt = 0.1\nscheme = explicit");
  const fs::path numeric = write_config(dir, "unstable.ini", unstable);
  r = cli("run \"" + numeric.string() + "\" --out \"" + (dir / "unstable").string() + "\"", dir);
  CHECK(r.code == 3);
  CHECK(nlohmann::json::parse(r.err)["error"] == "stability");
}

TEST_CASE("command-line seed override and thread count keep hashes stable") {
  const fs::path dir = scratch("cli_seed");
  std::string text = kLangevin;
  text.replace(text.find("seed = 11\n"), 10, "");
  const fs::path cfg = write_config(dir, "noseed.ini", text);

  auto r = cli("run \"" + cfg.string() + "\" --out \"" + (dir / "a").string() + "\"", dir);
  CHECK(r.code == 2);
  CHECK(nlohmann::json::parse(r.err)["message"].get<std::string>().find("seed") != std::string::npos);

  r = cli("run \"" + cfg.string() + "\" --seed 11 --threads 1 --out \"" + (dir / "a").string() + "\"", dir);
  REQUIRE(r.code == 0);
  r = cli("run \"" + cfg.string() + "\" --seed 11 --threads 4 --out \"" + (dir / "b").string() + "\"", dir);
  REQUIRE(r.code == 0);
  const auto a = nlohmann::json::parse(read_file(dir / "a" / "report.json"));
  const auto b = nlohmann::json::parse(read_file(dir / "b" / "report.json"));
  CHECK(a["manifest"] == b["manifest"]);
  CHECK(a["config"]["seed"] == "11");

  const auto direct = run_experiment(config_of(kLangevin), scratch("cli_seed_direct"));
  for (std::size_t i = 0; i < direct.manifest.size(); ++i)
    CHECK(a["manifest"][i]["sha256"] == direct.manifest[i].sha256);
}
