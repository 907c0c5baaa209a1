#include "food/commands.hpp"

#include <cstdio>
#include <fstream>

namespace food::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;
using namespace pipeline;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return kExitConfig;
    case ErrorKind::kMissingArtifact: return kExitMissingArtifact;
    case ErrorKind::kFormat: return kExitFormat;
    case ErrorKind::kNumeric: return kExitNumeric;
    case ErrorKind::kMismatch: return kExitMismatch;
    default: return kExitOther;
  }
}

RunConfig resolve(const CommandOptions& o) {
  RunConfig cfg = RunConfig::load(o.config, o.seed);
  if (o.out) cfg.artifacts_dir = *o.out;
  return cfg;
}

namespace {

fs::path artifact(const RunConfig& cfg, const char* name) { return cfg.artifacts_dir / name; }

void prepare_dir(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.artifacts_dir, ec);
  require(!ec, ErrorKind::kIo, "cannot create artifacts directory '" + cfg.artifacts_dir.string() + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorKind::kIo, "cannot write '" + path.string() + "'");
  os << text;
  os.flush();
  require(static_cast<bool>(os), ErrorKind::kIo, "write failed for '" + path.string() + "'");
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::kMissingArtifact, "cannot open '" + path.string() + "'");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

json stage_meta(const RunConfig& cfg, const char* stage) {
  json m = cfg.stamp();
  m["stage"] = stage;
  m["lineage"] = cfg.lineage(stage);
  return m;
}

void merge(json& dst, const json& src) {
  for (const auto& [k, v] : src.items()) dst[k] = v;
}

// `meta` must come from `stage` run under the same upstream settings.
void check_lineage(const RunConfig& cfg, const json& meta, const char* stage, const fs::path& source) {
  const std::string want = cfg.lineage(stage);
  const std::string have = meta.value("lineage", std::string());
  require(meta.value("stage", std::string()) == stage, ErrorKind::kMismatch,
          "'" + source.string() + "' is not a " + stage + " artifact");
  require(have == want, ErrorKind::kMismatch,
          "'" + source.string() + "' was produced under different settings (lineage " + have + ", config expects " +
              want + "; recorded config_hash " + meta.value("config_hash", std::string("?")) + ")");
}

ckpt::Checkpoint load_stage(const RunConfig& cfg, const char* file, const char* stage) {
  const fs::path p = artifact(cfg, file);
  ckpt::Checkpoint ck = ckpt::Checkpoint::load(p);
  check_lineage(cfg, ck.meta, stage, p);
  return ck;
}

eval::CsvTags tags(const RunConfig& cfg) { return {{"config_hash", cfg.hash_hex()}, {"seed", std::to_string(cfg.seed)}}; }

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

void cmd_train(const RunConfig& cfg, std::ostream& log) {
  prepare_dir(cfg);
  const Splits s = load_data(cfg);
  log << "train: " << s.train.size() << " samples, " << s.train.num_classes << " classes\n";
  TrainOutcome t = run_train(cfg, s);
  ckpt::Checkpoint ck;
  ckpt::put_network(ck, t.net);
  merge(ck.meta, stage_meta(cfg, "train"));
  ck.meta["train_loss"] = t.losses;
  ck.meta["test_accuracy"] = t.test_accuracy;
  ck.save(artifact(cfg, names::kBase));
  log << "train: test accuracy " << fixed(t.test_accuracy) << " -> " << artifact(cfg, names::kBase).string() << "\n";
}

void cmd_finetune(const RunConfig& cfg, std::ostream& log) {
  prepare_dir(cfg);
  const ckpt::Checkpoint base = load_stage(cfg, names::kBase, "train");
  nn::Network<float> net = ckpt::get_network(base);
  const Splits s = load_data(cfg);
  const FinetuneOutcome f = run_finetune(cfg, s, net);

  json runs = json::array();
  for (const auto& r : f.all)
    runs.push_back({{"lambda", r.lambda},
                    {"best_epoch", r.best_epoch},
                    {"early_stopped", r.early_stopped},
                    {"train_loss", r.train_loss},
                    {"val_loss", r.val_loss},
                    {"val_ce", r.val_ce}});
  json report = stage_meta(cfg, "finetune");
  report["lambda"] = f.chosen.lambda;
  report["best_epoch"] = f.chosen.best_epoch;
  report["test_accuracy"] = f.test_accuracy;
  report["runs"] = runs;

  ckpt::Checkpoint ck;
  ckpt::put_network(ck, net);
  merge(ck.meta, stage_meta(cfg, "finetune"));
  ck.meta["lambda"] = f.chosen.lambda;
  ck.meta["best_epoch"] = f.chosen.best_epoch;
  ck.meta["test_accuracy"] = f.test_accuracy;
  ck.save(artifact(cfg, names::kFinetuned));
  write_text(artifact(cfg, "finetune_report.json"), report.dump(2) + "\n");
  log << "finetune: lambda " << f.chosen.lambda << ", best epoch " << f.chosen.best_epoch << ", test accuracy "
      << fixed(f.test_accuracy) << "\n";
}

void cmd_craft(const RunConfig& cfg, std::ostream& log) {
  prepare_dir(cfg);
  const ckpt::Checkpoint ft = load_stage(cfg, names::kFinetuned, "finetune");
  const nn::Network<float> net = ckpt::get_network(ft);
  const Splits s = load_data(cfg);
  CraftOutcome c = run_craft(cfg.craft, net, s.val);
  const auto& rep = c.crafted.report;

  merge(c.crafted.ood.provenance, stage_meta(cfg, "craft"));
  data::save_dataset(c.crafted.ood, artifact(cfg, names::kCrafted));

  json report = stage_meta(cfg, "craft");
  merge(report, rep.to_json());
  report["thres"] = c.thres;
  report["epsilon"] = cfg.craft.epsilon;
  report["step"] = oodgen::to_string(cfg.craft.step);
  write_text(artifact(cfg, names::kCraftReport), report.dump(2) + "\n");

  const auto hist = oodgen::llr_histogram(c.val_llr, rep.final_llr);
  write_text(artifact(cfg, names::kHistogram), oodgen::histogram_csv(hist, c.thres, tags(cfg)));
  log << "craft: " << rep.size() << " samples, thres " << c.thres << ", reached " << fixed(rep.reached_fraction())
      << ", failures " << rep.failures() << "\n";
}

void cmd_fit_detector(const RunConfig& cfg, std::ostream& log) {
  prepare_dir(cfg);
  const ckpt::Checkpoint ft = load_stage(cfg, names::kFinetuned, "finetune");
  const fs::path crafted_path = artifact(cfg, names::kCrafted);
  const data::Dataset crafted = data::load_dataset(crafted_path);
  check_lineage(cfg, crafted.provenance, "craft", crafted_path);
  require(crafted.provenance.contains("thres") && crafted.provenance.at("thres").is_number(), ErrorKind::kFormat,
          "'" + crafted_path.string() + "' does not record its threshold");

  nn::Network<float> net = ckpt::get_network(ft);
  const Splits s = load_data(cfg);
  Fitted f = fit_statistics(cfg, net, s.train);
  const FoodModel m =
      fit_food(cfg, std::move(net), std::move(f), s.val, crafted, crafted.provenance.at("thres").get<double>());

  ckpt::Checkpoint ck;
  m.store(ck);
  merge(ck.meta, stage_meta(cfg, "fit-detector"));
  ck.save(artifact(cfg, names::kFood));
  log << "fit-detector: " << s.val.size() << " in-distribution rows, " << crafted.size() << " crafted rows -> "
      << artifact(cfg, names::kFood).string() << "\n";
}

void cmd_eval(const RunConfig& cfg, std::ostream& log) {
  prepare_dir(cfg);
  const FoodModel m = FoodModel::restore(load_stage(cfg, names::kFood, "fit-detector"));
  const Splits s = load_data(cfg);
  auto rows = run_eval(m, s.test_in, s.test_ood);

  if (cfg.eval_latency_from_bench) {
    const fs::path lp = artifact(cfg, names::kLatencyJson);
    const json lat = read_json(lp);
    check_lineage(cfg, lat, "fit-detector", lp);
    for (auto& r : rows) {
      // stage rows share the timing of the method they are built on
      std::string timed = r.method;
      if (timed.rfind("Stage 4", 0) == 0) timed = "FOOD";
      for (const auto& e : lat.at("methods"))
        if (e.at("method") == timed) r.mean_latency_us = e.at("mean_us").get<double>();
    }
  }

  json out = cfg.stamp();
  out["rows"] = eval::metrics_json(rows);
  write_text(artifact(cfg, names::kMetricsCsv), eval::metrics_csv(rows, tags(cfg)));
  write_text(artifact(cfg, names::kMetricsJson), out.dump(2) + "\n");
  for (const auto& r : rows)
    log << "eval: " << r.method << "  auroc " << fixed(r.auroc) << "  tnr95 " << fixed(r.tnr95) << "  det_acc "
        << fixed(r.det_acc) << "\n";
}

void cmd_bench(const RunConfig& cfg, std::ostream& log) {
  prepare_dir(cfg);
  const FoodModel m = FoodModel::restore(load_stage(cfg, names::kFood, "fit-detector"));
  const Splits s = load_data(cfg);
  const eval::LatencyReport rep = run_bench(m, s.test_in, cfg.bench);
  json out = stage_meta(cfg, "fit-detector");
  merge(out, rep.to_json());
  write_text(artifact(cfg, names::kLatencyCsv), rep.to_csv(tags(cfg)));
  write_text(artifact(cfg, names::kLatencyJson), out.dump(2) + "\n");
  for (const auto& e : rep.methods)
    log << "bench: " << e.method << "  p50 " << fixed(e.p50_us, 2) << " us/sample\n";
  log << "bench: FOOD/MSP " << fixed(rep.ratio("FOOD", "MSP"), 3) << ", MD*/FOOD " << fixed(rep.ratio("MD*", "FOOD"), 3)
      << "\n";
}

int run_command(const std::string& name, const CommandOptions& o, std::ostream& log, std::ostream& err) {
  try {
    const RunConfig cfg = resolve(o);
    if (name == "train")
      cmd_train(cfg, log);
    else if (name == "finetune")
      cmd_finetune(cfg, log);
    else if (name == "craft")
      cmd_craft(cfg, log);
    else if (name == "fit-detector")
      cmd_fit_detector(cfg, log);
    else if (name == "eval")
      cmd_eval(cfg, log);
    else if (name == "bench")
      cmd_bench(cfg, log);
    else
      fail(ErrorKind::kInvalidArgument, "unknown command '" + name + "'");
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitOther;
  }
}

}  // namespace food::cli
