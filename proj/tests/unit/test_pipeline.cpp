#include <fstream>
#include <sstream>

#include "doctest.h"
#include "food/commands.hpp"
#include "food/pipeline.hpp"
#include "helpers.hpp"

using namespace food;
using namespace food::pipeline;
using nlohmann::json;

namespace {

const std::filesystem::path kTiny = std::filesystem::path(FOOD_SOURCE_DIR) / "configs" / "tiny.json";

std::string config_error(const json& j) {
  try {
    RunConfig::from_json(j);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
    return e.what();
  }
  return {};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config errors are collected") {
  const json j = {{"schema_version", 1},
                  {"seed", 1},
                  {"craft", {{"epsilon", -1.0}, {"step", "huge"}}},
                  {"train", {{"epochs", "many"}}},
                  {"colour", "blue"}};
  const std::string msg = config_error(j);
  CHECK(msg.find("epsilon") != std::string::npos);
  CHECK(msg.find("step") != std::string::npos);
  CHECK(msg.find("epochs") != std::string::npos);
  CHECK(msg.find("colour") != std::string::npos);

  CHECK(config_error({{"schema_version", 2}}).find("schema_version") != std::string::npos);
  CHECK(config_error({{"schema_version", 1}, {"bench", {{"repeats", 1}}}}).find("repeats") != std::string::npos);
  CHECK(config_error({{"schema_version", 1}, {"finetune", {{"lambda_grid", json::array()}}}}).find("lambda") !=
        std::string::npos);
}

TEST_CASE("config defaults, seed override and hashing") {
  const json base = {{"schema_version", 1}};
  const RunConfig a = RunConfig::from_json(base);
  CHECK(a.craft.epsilon == 0.01);
  CHECK(a.craft.max_iter == 10);
  CHECK(a.craft.thres_percentile == 95.0);
  CHECK(a.finetune.lr == 1e-4);
  CHECK(a.finetune.epochs == 15);
  CHECK(a.finetune.lambda_grid == std::vector<double>{0.01, 0.1, 1.0});

  CHECK(RunConfig::from_json(base).hash == a.hash);
  const RunConfig b = RunConfig::from_json(base, 99);
  CHECK(b.seed == 99);
  CHECK(b.hash != a.hash);
  CHECK(b.stamp().at("seed") == 99);

  json c = base;
  c["craft"] = {{"epsilon", 0.02}};
  CHECK(RunConfig::from_json(c).hash != a.hash);
}

TEST_CASE("lineage follows upstream sections only") {
  const json base = {{"schema_version", 1}};
  const RunConfig a = RunConfig::from_json(base);
  json j = base;
  j["detector"] = {{"l2", 0.01}};
  const RunConfig det = RunConfig::from_json(j);
  for (const char* s : {"train", "finetune", "craft"}) CHECK(det.lineage(s) == a.lineage(s));
  CHECK(det.lineage("fit-detector") != a.lineage("fit-detector"));

  j = base;
  j["craft"] = {{"max_iter", 3}};
  const RunConfig cr = RunConfig::from_json(j);
  CHECK(cr.lineage("finetune") == a.lineage("finetune"));
  CHECK(cr.lineage("craft") != a.lineage("craft"));

  j = base;
  j["bench"] = {{"repeats", 7}};
  CHECK(RunConfig::from_json(j).lineage("fit-detector") == a.lineage("fit-detector"));

  const RunConfig seeded = RunConfig::from_json(base, 8);
  CHECK(seeded.lineage("train") != a.lineage("train"));
  CHECK_THROWS_AS(a.lineage("eval"), Error);
}

TEST_CASE("exit codes") {
  using namespace food::cli;
  CHECK(exit_code(ErrorKind::kConfig) == 2);
  CHECK(exit_code(ErrorKind::kMissingArtifact) == 3);
  CHECK(exit_code(ErrorKind::kFormat) == 4);
  CHECK(exit_code(ErrorKind::kNumeric) == 5);
  CHECK(exit_code(ErrorKind::kMismatch) == 6);
  CHECK(exit_code(ErrorKind::kIo) == 1);
  CHECK(exit_code(ErrorKind::kInvalidArgument) == 1);
}

TEST_CASE("commands run the tiny config end to end") {
  testutil::TempDir dir("cli");
  cli::CommandOptions o;
  o.config = kTiny;
  o.out = dir.path;
  std::ostringstream log, err;
  const auto run = [&](const char* name) { return cli::run_command(name, o, log, err); };

  CHECK(run("finetune") == cli::kExitMissingArtifact);
  CHECK(err.str().find("base.ckpt") != std::string::npos);
  for (const char* c : {"train", "finetune", "craft", "fit-detector", "eval", "bench"})
    REQUIRE_MESSAGE(run(c) == 0, c << ": " << err.str());

  for (const char* f : {"base.ckpt", "finetuned.ckpt", "finetune_report.json", "crafted.fooddata", "craft_report.json",
                        "llr_histogram.csv", "food.ckpt", "metrics.csv", "metrics.json", "latency.csv",
                        "latency.json"})
    CHECK_MESSAGE(std::filesystem::exists(dir / f), f);

  const std::string csv = slurp(dir / "metrics.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + static_cast<long>(method_names().size()));
  const RunConfig cfg = cli::resolve(o);
  CHECK(csv.find("," + cfg.hash_hex() + ",3\n") != std::string::npos);
  const json report = json::parse(slurp(dir / "craft_report.json"));
  CHECK(report.at("count") == 100);
  CHECK(report.at("lineage") == cfg.lineage("craft"));

  SUBCASE("identical in and out sets are indistinguishable") {
    const FoodModel m = FoodModel::restore(ckpt::Checkpoint::load(dir / "food.ckpt"));
    const Splits s = load_data(cfg);
    for (const auto& r : run_eval(m, s.test_in, s.test_in)) {
      CHECK_MESSAGE(r.auroc == doctest::Approx(0.5).epsilon(0.02), r.method);
      CHECK_MESSAGE(r.det_acc == 0.5, r.method);
    }
  }
  SUBCASE("a different seed refuses upstream artifacts") {
    o.seed = 4;
    CHECK(run("finetune") == cli::kExitMismatch);
    CHECK(err.str().find("lineage") != std::string::npos);
  }
  SUBCASE("a detector change reuses crafted samples") {
    const json j = json::parse(slurp(kTiny));
    json changed = j;
    changed["detector"] = {{"l2", 0.001}};
    std::ofstream(dir / "changed.json") << changed.dump();
    o.config = dir / "changed.json";
    CHECK(run("eval") == cli::kExitMismatch);
    CHECK(run("fit-detector") == 0);
    CHECK(run("eval") == 0);
  }
  SUBCASE("a damaged checkpoint is a format error") {
    std::ofstream(dir / "food.ckpt", std::ios::trunc) << "garbage";
    CHECK(run("eval") == cli::kExitFormat);
  }
  SUBCASE("a bad config is a config error") {
    std::ofstream(dir / "bad.json") << R"({"schema_version": 1, "craft": {"epsilon": 0}})";
    o.config = dir / "bad.json";
    CHECK(run("train") == cli::kExitConfig);
  }
}
