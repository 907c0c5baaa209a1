#include "food/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "food/parallel.hpp"
#include "food/rng.hpp"

namespace food::pipeline {

using json = nlohmann::json;

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

namespace {

// Reads typed fields from one config section and records every problem.
class Section {
 public:
  Section(const json& root, std::string name, std::vector<std::string>& errors)
      : name_(std::move(name)), errors_(errors) {
    if (root.contains(name_)) {
      if (!root.at(name_).is_object())
        err("", "must be an object");
      else
        obj_ = &root.at(name_);
    }
  }
  Section(const json* obj, std::string name, std::vector<std::string>& errors)
      : name_(std::move(name)), errors_(errors), obj_(obj) {}

  void allow(std::initializer_list<const char*> keys) {
    if (!obj_) return;
    for (const auto& [k, v] : obj_->items()) {
      bool ok = false;
      for (const char* a : keys) ok = ok || k == a;
      if (!ok) err(k, "unknown key");
    }
  }

  const json* raw(const char* key) const { return obj_ && obj_->contains(key) ? &obj_->at(key) : nullptr; }

  void size(const char* key, std::size_t& out, std::size_t min = 0) {
    if (const json* v = raw(key)) {
      if (!v->is_number_integer() || (v->is_number_integer() && v->get<long long>() < 0 && !v->is_number_unsigned()))
        return err(key, "expected a non-negative integer");
      out = v->get<std::size_t>();
    }
    if (out < min) err(key, "must be at least " + std::to_string(min));
  }
  void u64(const char* key, std::uint64_t& out) {
    if (const json* v = raw(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0))
        return err(key, "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void real(const char* key, double& out, double lo, double hi, bool lo_open = false) {
    if (const json* v = raw(key)) {
      if (!v->is_number()) return err(key, "expected a number");
      out = v->get<double>();
    }
    if (!std::isfinite(out) || out < lo || out > hi || (lo_open && out == lo))
      err(key, "out of range " + std::string(lo_open ? "(" : "[") + fmt(lo) + ", " + fmt(hi) + "]");
  }
  void boolean(const char* key, bool& out) {
    if (const json* v = raw(key)) {
      if (!v->is_boolean()) return err(key, "expected true or false");
      out = v->get<bool>();
    }
  }
  void string(const char* key, std::string& out) {
    if (const json* v = raw(key)) {
      if (!v->is_string()) return err(key, "expected a string");
      out = v->get<std::string>();
    }
  }
  void sizes(const char* key, std::vector<std::size_t>& out) {
    if (const json* v = raw(key)) {
      if (!v->is_array() || v->empty()) return err(key, "expected a non-empty array of integers");
      std::vector<std::size_t> r;
      for (const auto& x : *v) {
        if (!x.is_number_unsigned() || x.get<std::size_t>() == 0) return err(key, "entries must be positive integers");
        r.push_back(x.get<std::size_t>());
      }
      out = r;
    }
  }
  void reals(const char* key, std::vector<double>& out) {
    if (const json* v = raw(key)) {
      if (!v->is_array() || v->empty()) return err(key, "expected a non-empty array of numbers");
      std::vector<double> r;
      for (const auto& x : *v) {
        if (!x.is_number()) return err(key, "entries must be numbers");
        r.push_back(x.get<double>());
      }
      out = r;
    }
  }

  void err(const std::string& key, const std::string& msg) {
    errors_.push_back(name_ + (key.empty() ? "" : "." + key) + ": " + msg);
  }

 private:
  static std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  }
  std::string name_;
  std::vector<std::string>& errors_;
  const json* obj_ = nullptr;
};

const std::map<std::string, std::vector<std::string>>& required_paths() {
  static const std::map<std::string, std::vector<std::string>> m{
      {"cifar10", {"train", "test", "ood"}},
      {"native", {"train", "test", "ood"}},
      {"idx", {"train_images", "train_labels", "test_images", "test_labels", "ood_images", "ood_labels"}}};
  return m;
}

const std::map<std::string, std::vector<std::string>>& optional_paths() {
  static const std::map<std::string, std::vector<std::string>> m{
      {"cifar10", {"val"}}, {"native", {"val"}}, {"idx", {"val_images", "val_labels"}}};
  return m;
}

}  // namespace

RunConfig RunConfig::from_json(const json& j, std::optional<std::uint64_t> seed_override,
                               const std::filesystem::path& base_dir) {
  std::vector<std::string> errors;
  RunConfig c;
  if (!j.is_object()) fail(ErrorKind::kConfig, "config must be a JSON object");

  Section top(&j, "config", errors);
  top.allow({"schema_version", "seed", "data", "model", "train", "finetune", "craft", "detector", "mdstar", "bench",
             "eval", "artifacts"});
  if (!j.contains("schema_version"))
    top.err("schema_version", "missing (expected " + std::to_string(kSchemaVersion) + ")");
  else if (!j.at("schema_version").is_number_integer() || j.at("schema_version").get<long long>() != kSchemaVersion)
    top.err("schema_version", "unsupported (expected " + std::to_string(kSchemaVersion) + ")");
  top.u64("seed", c.seed);
  if (seed_override) c.seed = *seed_override;

  // data
  Section ds(j, "data", errors);
  ds.allow({"source", "synthetic", "paths", "val_fraction"});
  ds.string("source", c.data.source);
  ds.real("val_fraction", c.data.val_fraction, 0.0, 1.0, true);
  if (c.data.val_fraction >= 1.0) ds.err("val_fraction", "must be below 1");
  json synth_json = json::object();
  if (const json* s = ds.raw("synthetic")) {
    if (!s->is_object())
      ds.err("synthetic", "must be an object");
    else
      synth_json = *s;
  }
  const bool synth_seed_given = synth_json.contains("seed");
  try {
    c.data.synthetic = data::SyntheticSpec::from_json(synth_json);
  } catch (const nlohmann::json::exception& e) {
    ds.err("synthetic", std::string("bad value (") + e.what() + ")");
  } catch (const Error& e) {
    ds.err("synthetic", e.what());
  }
  if (!synth_seed_given || seed_override) c.data.synthetic.seed = c.seed;
  if (c.data.source == "synthetic") {
    try {
      c.data.synthetic.validate();
    } catch (const Error& e) {
      ds.err("synthetic", e.what());
    }
  } else if (required_paths().count(c.data.source)) {
    const json* p = ds.raw("paths");
    if (!p || !p->is_object()) {
      ds.err("paths", "required object for source '" + c.data.source + "'");
    } else {
      for (const auto& [k, v] : p->items()) {
        const auto& req = required_paths().at(c.data.source);
        const auto& opt = optional_paths().at(c.data.source);
        if (std::find(req.begin(), req.end(), k) == req.end() && std::find(opt.begin(), opt.end(), k) == opt.end()) {
          ds.err("paths." + k, "unknown key");
          continue;
        }
        if (!v.is_string()) {
          ds.err("paths." + k, "expected a string");
          continue;
        }
        c.data.paths[k] = v.get<std::string>();
      }
      for (const auto& k : required_paths().at(c.data.source))
        if (!c.data.paths.count(k)) ds.err("paths." + k, "missing");
      if (c.data.source == "idx" && (c.data.paths.count("val_images") != c.data.paths.count("val_labels")))
        ds.err("paths", "val_images and val_labels must be given together");
      for (auto& [k, v] : c.data.paths) {
        std::filesystem::path p2(v);
        if (p2.is_relative() && !base_dir.empty()) p2 = base_dir / p2;
        if (!std::filesystem::exists(p2)) ds.err("paths." + k, "file not found: " + p2.string());
      }
    }
  } else {
    ds.err("source", "unknown data source '" + c.data.source + "' (expected synthetic, cifar10, idx or native)");
  }

  Section md(j, "model", errors);
  md.allow({"stem_channels", "stage_channels", "stage_strides", "blocks_per_stage"});
  md.size("stem_channels", c.model.stem_channels, 1);
  md.sizes("stage_channels", c.model.stage_channels);
  md.sizes("stage_strides", c.model.stage_strides);
  md.size("blocks_per_stage", c.model.blocks_per_stage, 1);
  if (c.model.stage_channels.size() != c.model.stage_strides.size())
    md.err("stage_strides", "must have one entry per stage");

  Section tr(j, "train", errors);
  tr.allow({"epochs", "lr", "momentum", "weight_decay", "batch_size"});
  c.train.epochs = 5;
  tr.size("epochs", c.train.epochs, 1);
  tr.real("lr", c.train.lr, 0.0, 10.0, true);
  tr.real("momentum", c.train.momentum, 0.0, 0.9999);
  tr.real("weight_decay", c.train.weight_decay, 0.0, 1.0);
  tr.size("batch_size", c.train.batch_size, 2);

  Section ft(j, "finetune", errors);
  ft.allow({"lambda_grid", "epochs", "lr", "rms_alpha", "rms_eps", "batch_size", "batchnorm_train"});
  ft.reals("lambda_grid", c.finetune.lambda_grid);
  for (double l : c.finetune.lambda_grid)
    if (!(l >= 0) || !std::isfinite(l)) ft.err("lambda_grid", "entries must be non-negative");
  ft.size("epochs", c.finetune.epochs, 1);
  ft.real("lr", c.finetune.lr, 0.0, 1.0, true);
  ft.real("rms_alpha", c.finetune.rms_alpha, 0.0, 0.99999, true);
  ft.real("rms_eps", c.finetune.rms_eps, 0.0, 1.0, true);
  ft.size("batch_size", c.finetune.batch_size, 2);
  ft.boolean("batchnorm_train", c.finetune.batchnorm_train);

  Section cr(j, "craft", errors);
  cr.allow({"epsilon", "step", "max_iter", "thres_percentile", "thres_reading", "batch_size"});
  cr.real("epsilon", c.craft.epsilon, 0.0, 1.0, true);
  cr.size("max_iter", c.craft.max_iter, 1);
  cr.real("thres_percentile", c.craft.thres_percentile, 0.0, 99.999, true);
  std::string reading = oodgen::to_string(c.craft.thres_reading);
  cr.string("thres_reading", reading);
  if (reading == "lower" || reading == "upper")
    c.craft.thres_reading = oodgen::parse_thres_reading(reading);
  else
    cr.err("thres_reading", "expected lower or upper");
  cr.size("batch_size", c.craft.batch_size, 1);
  std::string step = oodgen::to_string(c.craft.step);
  cr.string("step", step);
  if (step == "raw" || step == "mean_abs" || step == "sign")
    c.craft.step = oodgen::parse_step_scale(step);
  else
    cr.err("step", "expected raw, mean_abs or sign");

  Section de(j, "detector", errors);
  de.allow({"l2", "max_steps", "grad_tol", "lr", "standardize"});
  de.real("l2", c.detector.l2, 0.0, 1e3);
  de.size("max_steps", c.detector.max_steps, 1);
  de.real("grad_tol", c.detector.grad_tol, 0.0, 1.0, true);
  de.real("lr", c.detector.lr, 0.0, 100.0, true);
  de.boolean("standardize", c.detector.standardize);

  Section mds(j, "mdstar", errors);
  mds.allow({"ridge"});
  mds.real("ridge", c.mdstar_ridge, 0.0, 1.0);

  Section be(j, "bench", errors);
  be.allow({"batch", "warmup", "repeats"});
  be.size("batch", c.bench.batch, 1);
  be.size("warmup", c.bench.warmup, 3);
  be.size("repeats", c.bench.repeats, 5);
  c.bench.max_batch = std::max(c.bench.max_batch, c.bench.batch);

  Section ev(j, "eval", errors);
  ev.allow({"latency_from_bench"});
  ev.boolean("latency_from_bench", c.eval_latency_from_bench);

  Section ar(j, "artifacts", errors);
  ar.allow({"dir"});
  std::string dir = "artifacts";
  ar.string("dir", dir);
  if (dir.empty()) ar.err("dir", "must not be empty");

  if (!errors.empty()) {
    std::string msg = "invalid config (" + std::to_string(errors.size()) + " problem" +
                      (errors.size() == 1 ? "" : "s") + "):";
    for (const auto& e : errors) msg += "\n  - " + e;
    fail(ErrorKind::kConfig, msg);
  }

  std::filesystem::path adir(dir);
  c.artifacts_dir = adir.is_relative() && !base_dir.empty() ? base_dir / adir : adir;
  for (auto& [k, v] : c.data.paths) {
    std::filesystem::path p(v);
    if (p.is_relative() && !base_dir.empty()) v = (base_dir / p).string();
  }

  json paths = json::object();
  for (const auto& [k, v] : c.data.paths) paths[k] = v;
  c.canonical = {
      {"schema_version", kSchemaVersion},
      {"seed", c.seed},
      {"data",
       {{"source", c.data.source},
        {"synthetic", c.data.synthetic.to_json()},
        {"paths", paths},
        {"val_fraction", c.data.val_fraction}}},
      {"model",
       {{"stem_channels", c.model.stem_channels},
        {"stage_channels", c.model.stage_channels},
        {"stage_strides", c.model.stage_strides},
        {"blocks_per_stage", c.model.blocks_per_stage}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"lr", c.train.lr},
        {"momentum", c.train.momentum},
        {"weight_decay", c.train.weight_decay},
        {"batch_size", c.train.batch_size}}},
      {"finetune",
       {{"lambda_grid", c.finetune.lambda_grid},
        {"epochs", c.finetune.epochs},
        {"lr", c.finetune.lr},
        {"rms_alpha", c.finetune.rms_alpha},
        {"rms_eps", c.finetune.rms_eps},
        {"batch_size", c.finetune.batch_size},
        {"batchnorm_train", c.finetune.batchnorm_train}}},
      {"craft",
       {{"epsilon", c.craft.epsilon},
        {"step", oodgen::to_string(c.craft.step)},
        {"max_iter", c.craft.max_iter},
        {"thres_percentile", c.craft.thres_percentile},
        {"thres_reading", oodgen::to_string(c.craft.thres_reading)},
        {"batch_size", c.craft.batch_size}}},
      {"detector",
       {{"l2", c.detector.l2},
        {"max_steps", c.detector.max_steps},
        {"grad_tol", c.detector.grad_tol},
        {"lr", c.detector.lr},
        {"standardize", c.detector.standardize}}},
      {"mdstar", {{"ridge", c.mdstar_ridge}}},
      {"bench", {{"batch", c.bench.batch}, {"warmup", c.bench.warmup}, {"repeats", c.bench.repeats}}},
      {"eval", {{"latency_from_bench", c.eval_latency_from_bench}}},
      {"artifacts", {{"dir", dir}}}};
  c.hash = fnv1a64(c.canonical.dump());
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::kConfig, "cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, "config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return from_json(j, seed_override, path.parent_path());
}

json RunConfig::stamp() const { return {{"config_hash", hash_hex()}, {"seed", seed}}; }

std::string RunConfig::lineage(std::string_view stage) const {
  static const std::vector<std::pair<std::string_view, std::vector<const char*>>> order{
      {"train", {"data", "model", "train"}},
      {"finetune", {"finetune"}},
      {"craft", {"craft"}},
      {"fit-detector", {"detector", "mdstar"}}};
  json parts = {{"seed", seed}};
  for (const auto& [name, sections] : order) {
    for (const char* sec : sections) parts[sec] = canonical.at(sec);
    if (name == stage) return hex64(fnv1a64(parts.dump()));
  }
  fail(ErrorKind::kInvalidArgument, "unknown stage '" + std::string(stage) + "'");
}

Splits load_data(const RunConfig& cfg) {
  Splits s;
  const auto& p = cfg.data.paths;
  const auto split_val = [&](data::Dataset& train) {
    auto parts = data::split(train, {1.0 - cfg.data.val_fraction, cfg.data.val_fraction}, derive_seed(cfg.seed, 5));
    parts[0].name = train.name + "-train";
    parts[1].name = train.name + "-val";
    s.train = std::move(parts[0]);
    s.val = std::move(parts[1]);
  };
  const auto stem = [](const std::string& path) { return std::filesystem::path(path).stem().string(); };
  if (cfg.data.source == "synthetic") {
    auto g = data::gen_synthetic(cfg.data.synthetic);
    s.train = std::move(g.train);
    s.val = std::move(g.val);
    s.test_in = std::move(g.test_in);
    s.test_ood = std::move(g.test_ood);
  } else if (cfg.data.source == "cifar10" || cfg.data.source == "native") {
    const auto load = [&](const std::string& key) {
      data::Dataset d = cfg.data.source == "cifar10" ? data::load_cifar10_binary(p.at(key)) : data::load_dataset(p.at(key));
      if (d.name.empty() || cfg.data.source == "cifar10") d.name = stem(p.at(key));
      return d;
    };
    data::Dataset train = load("train");
    if (p.count("val")) {
      s.train = std::move(train);
      s.val = load("val");
    } else {
      split_val(train);
    }
    s.test_in = load("test");
    s.test_ood = load("ood");
  } else {
    const auto load = [&](const std::string& pre) {
      data::Dataset d = data::load_idx(p.at(pre + "_images"), p.at(pre + "_labels"));
      d.name = stem(p.at(pre + "_images"));
      return d;
    };
    data::Dataset train = load("train");
    if (p.count("val_images")) {
      s.train = std::move(train);
      s.val = load("val");
    } else {
      split_val(train);
    }
    s.test_in = load("test");
    s.test_ood = load("ood");
  }
  const std::size_t C = s.train.num_classes;
  for (data::Dataset* d : {&s.val, &s.test_in}) {
    d->num_classes = std::max(d->num_classes, C);
    require(d->sample_shape() == s.train.sample_shape(), ErrorKind::kMismatch,
            "dataset '" + d->name + "' has sample shape " + shape_str(d->sample_shape()) + ", training set has " +
                shape_str(s.train.sample_shape()));
  }
  require(s.test_ood.sample_shape() == s.train.sample_shape(), ErrorKind::kMismatch,
          "OOD set sample shape does not match the training set");
  // OOD labels carry no meaning
  s.test_ood.num_classes = C;
  for (auto& y : s.test_ood.labels) y = std::clamp(y, 0, static_cast<int>(C) - 1);
  for (const data::Dataset* d : {&s.train, &s.val, &s.test_in, &s.test_ood}) d->validate();
  return s;
}

TrainOutcome run_train(const RunConfig& cfg, const Splits& s) {
  nn::MiniResNetOptions o = cfg.model;
  o.input_shape = s.train.sample_shape();
  o.num_classes = s.train.num_classes;
  data::channel_stats(s.train, o.norm_mean, o.norm_std);
  for (auto& v : o.norm_std)
    if (!(v > 1e-6)) v = 1.0;
  TrainOutcome out{nn::build_miniresnet(o, derive_seed(cfg.seed, 10)), {}, 0};
  train::ClassifierConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, 11);
  out.losses = train::train_classifier(out.net, s.train, tc);
  out.test_accuracy = train::accuracy(out.net, s.test_in);
  return out;
}

FinetuneOutcome run_finetune(const RunConfig& cfg, const Splits& s, nn::Network<float>& net) {
  head::install_gaussian_head(net, s.train);
  head::HeadLossConfig hc = cfg.finetune;
  hc.seed = derive_seed(cfg.seed, 12);
  FinetuneOutcome out;
  if (hc.lambda_grid.size() == 1) {
    hc.lambda = hc.lambda_grid[0];
    out.chosen = head::finetune(net, s.train, s.val, hc);
    out.all = {out.chosen};
  } else {
    out.chosen = head::finetune_select_lambda(net, s.train, s.val, hc, &out.all);
  }
  out.test_accuracy = train::accuracy(net, s.test_in);
  return out;
}

CraftOutcome run_craft(const CraftSettings& cs, const nn::Network<float>& net, const data::Dataset& val) {
  CraftOutcome out;
  out.val_llr = oodgen::dataset_llr(net, val);
  out.thres = oodgen::compute_thres(out.val_llr, cs.thres_percentile, cs.thres_reading);
  oodgen::CraftConfig cc;
  cc.epsilon = cs.epsilon;
  cc.step = cs.step;
  cc.max_iter = cs.max_iter;
  cc.thres = out.thres;
  cc.batch_size = cs.batch_size;
  out.crafted = oodgen::craft_batch(net, val, cc);
  out.crafted.ood.provenance["thres_percentile"] = cs.thres_percentile;
  out.crafted.ood.provenance["thres_reading"] = oodgen::to_string(cs.thres_reading);
  return out;
}

void SampleScores::append(const SampleScores& o) {
  if (count == 0) layers = o.layers;
  require(layers == o.layers, ErrorKind::kShape, "score layer counts differ");
  count += o.count;
  for (auto [dst, src] : {std::pair{&llr, &o.llr}, {&msp, &o.msp}, {&mdstar, &o.mdstar}, {&f_mixed, &o.f_mixed},
                          {&f_avg, &o.f_avg}})
    dst->insert(dst->end(), src->begin(), src->end());
}

std::vector<double> SampleScores::detector_rows(bool mixed) const {
  const auto& f = mixed ? f_mixed : f_avg;
  std::vector<double> rows;
  rows.reserve(count * (layers + 1));
  for (std::size_t n = 0; n < count; ++n) {
    rows.insert(rows.end(), f.begin() + static_cast<std::ptrdiff_t>(n * layers),
                f.begin() + static_cast<std::ptrdiff_t>((n + 1) * layers));
    rows.push_back(llr[n]);
  }
  return rows;
}

Fitted fit_statistics(const RunConfig& cfg, const nn::Network<float>& net, const data::Dataset& train) {
  const std::size_t L = net.num_taps();
  std::vector<scoring::PoolKind> mixed, avg(L, scoring::PoolKind::kAverage);
  for (std::size_t l = 1; l <= L; ++l) mixed.push_back(scoring::pool_kind(l, L, scoring::PoolPolicy::kMixed));
  scoring::PooledTaps pm, pa;
  train::for_each_batch(net, train.images, 128, [&](std::size_t, std::size_t, const nn::Network<float>::Output& o) {
    pm.append(scoring::pool_taps(o.taps, mixed));
    pa.append(scoring::pool_taps(o.taps, avg));
  });
  Fitted f;
  f.stats_mixed = scoring::fit_layer_stats(pm, train.labels, train.num_classes, scoring::PoolPolicy::kMixed);
  f.stats_avg = scoring::fit_layer_stats(pa, train.labels, train.num_classes, scoring::PoolPolicy::kAverage);
  f.mdstar = detector::fit_mdstar(pa, train.labels, train.num_classes, cfg.mdstar_ridge);
  return f;
}

SampleScores score_dataset(const nn::Network<float>& net, const Fitted& f, const data::Dataset& ds,
                           std::size_t batch_size) {
  const auto shapes = net.tap_shapes();
  f.stats_mixed.check_compatible(shapes);
  f.stats_avg.check_compatible(shapes);
  require(f.mdstar.layers.size() == shapes.size(), ErrorKind::kMismatch, "MD* statistics do not match the network");
  const scoring::FeatureScorer sm(f.stats_mixed), sa(f.stats_avg);
  SampleScores all;
  all.layers = shapes.size();
  train::for_each_batch(net, ds.images, batch_size, [&](std::size_t b, std::size_t e, const nn::Network<float>::Output& o) {
    SampleScores part;
    part.count = e - b;
    part.layers = shapes.size();
    const auto pm = scoring::pool_taps(o.taps, f.stats_mixed.kinds);
    const auto pa = scoring::pool_taps(o.taps, f.stats_avg.kinds);
    part.f_mixed = sm.features(pm);
    part.f_avg = sa.features(pa);
    part.mdstar = detector::mdstar_scores(f.mdstar, pa);
    for (std::size_t n = 0; n < part.count; ++n) {
      part.llr.push_back(scoring::llr(o.head.sample(n)));
      part.msp.push_back(scoring::msp(o.head.sample(n)));
    }
    all.append(part);
  });
  return all;
}

FoodModel fit_food(const RunConfig& cfg, nn::Network<float> net, Fitted f, const data::Dataset& val,
                   const data::Dataset& crafted, double thres) {
  const SampleScores sv = score_dataset(net, f, val);
  const SampleScores sc = score_dataset(net, f, crafted);
  const std::size_t width = sv.layers + 1;
  FoodModel m{std::move(net), std::move(f.stats_mixed), std::move(f.stats_avg), std::move(f.mdstar), {}, {}, thres};
  m.det_mixed = detector::fit_detector(sv.detector_rows(true), sc.detector_rows(true), width, cfg.detector);
  m.det_avg = detector::fit_detector(sv.detector_rows(false), sc.detector_rows(false), width, cfg.detector);
  return m;
}

void FoodModel::store(ckpt::Checkpoint& ck) const {
  ckpt::put_network(ck, const_cast<nn::Network<float>&>(net));
  stats_mixed.store(ck, "stats");
  stats_avg.store(ck, "stats_avg");
  mdstar.store(ck, "mdstar");
  det_mixed.store(ck, "detector");
  det_avg.store(ck, "detector_avg");
  ck.meta["thres"] = thres;
}

FoodModel FoodModel::restore(const ckpt::Checkpoint& ck) {
  FoodModel m{ckpt::get_network(ck),
              scoring::LayerGaussianStats::restore(ck, "stats"),
              scoring::LayerGaussianStats::restore(ck, "stats_avg"),
              detector::MdStarStats::restore(ck, "mdstar"),
              detector::DetectorModel::restore(ck, "detector"),
              detector::DetectorModel::restore(ck, "detector_avg"),
              ck.meta.value("thres", 0.0)};
  const auto shapes = m.net.tap_shapes();
  m.stats_mixed.check_compatible(shapes);
  m.stats_avg.check_compatible(shapes);
  require(m.mdstar.layers.size() == shapes.size(), ErrorKind::kMismatch, "MD* statistics do not match the network");
  for (std::size_t l = 0; l < shapes.size(); ++l)
    require(m.mdstar.layers[l].dim == shapes[l][0], ErrorKind::kMismatch,
            "MD* layer " + std::to_string(l + 1) + " width does not match the network");
  require(m.det_mixed.width() == shapes.size() + 1 && m.det_avg.width() == shapes.size() + 1, ErrorKind::kMismatch,
          "detector width does not match the number of taps");
  return m;
}

std::vector<double> method_scores(const FoodModel& m, const SampleScores& s, const std::string& method) {
  std::vector<double> out(s.count);
  const std::size_t L = s.layers;
  const auto detector_logits = [&](const detector::DetectorModel& d, bool mixed) {
    // logits rank like sigmoid scores but do not saturate into ties
    const auto rows = s.detector_rows(mixed);
    for (std::size_t n = 0; n < s.count; ++n)
      out[n] = d.logit(std::span<const double>(rows).subspan(n * (L + 1), L + 1));
  };
  if (method == "FOOD" || method == "Stage 4 - FOOD - Mixed Pooling") {
    detector_logits(m.det_mixed, true);
  } else if (method == "Stage 3 - FOOD - Avg Pooling") {
    detector_logits(m.det_avg, false);
  } else if (method == "LLR-only" || method == "Stage 1 - LLR") {
    out = s.llr;
  } else if (method == "MSP") {
    out = s.msp;
  } else if (method == "MD*") {
    out = s.mdstar;
  } else if (method == "Stage 2 - Likelihood sum + LLR") {
    for (std::size_t n = 0; n < s.count; ++n) {
      double sum = s.llr[n];
      for (std::size_t l = 0; l < L; ++l) sum += s.f_avg[n * L + l];
      out[n] = sum;
    }
  } else {
    fail(ErrorKind::kInvalidArgument, "unknown method '" + method + "'");
  }
  return out;
}

std::vector<eval::MetricRow> run_eval(const FoodModel& m, const data::Dataset& in, const data::Dataset& out) {
  const Fitted f{m.stats_mixed, m.stats_avg, m.mdstar};
  const SampleScores si = score_dataset(m.net, f, in);
  const SampleScores so = score_dataset(m.net, f, out);
  std::vector<eval::MetricRow> rows;
  for (const auto& name : method_names()) {
    eval::ScoredSet set{method_scores(m, si, name), method_scores(m, so, name)};
    auto row = eval::compute_row(name, in.name, out.name, set);
    row.mean_latency_us = std::nan("");
    rows.push_back(row);
  }
  return rows;
}

eval::LatencyReport run_bench(const FoodModel& m, const data::Dataset& pool, const eval::BenchConfig& bc) {
  require(pool.size() > 0, ErrorKind::kInvalidArgument, "bench needs at least one input sample");
  const ScopedWorkers single(1);
  using Out = nn::Network<float>::Output;
  const scoring::FeatureScorer scorer(m.stats_mixed);
  const std::size_t L = m.net.num_taps();
  std::vector<scoring::PoolKind> avg(L, scoring::PoolKind::kAverage);
  volatile double sink = 0;

  const std::function<Out(std::size_t)> forward = [&](std::size_t batch) {
    std::vector<std::size_t> rows(batch);
    for (std::size_t i = 0; i < batch; ++i) rows[i] = i % pool.size();
    return m.net.forward(pool.images.gather(rows));
  };
  std::vector<eval::BenchMethod<Out>> methods;
  methods.push_back({"forward-only", [&](const Out& o) { sink = sink + static_cast<double>(o.head[0]); }});
  methods.push_back({"MSP", [&](const Out& o) {
                       double acc = 0;
                       for (std::size_t n = 0; n < o.head.dim(0); ++n) acc += scoring::msp(o.head.sample(n));
                       sink = sink + acc;
                     }});
  methods.push_back({"FOOD", [&](const Out& o) {
                       const auto pooled = scoring::pool_taps(o.taps, m.stats_mixed.kinds);
                       const auto feats = scorer.features(pooled);
                       std::vector<double> row(L + 1);
                       double acc = 0;
                       for (std::size_t n = 0; n < o.head.dim(0); ++n) {
                         std::copy(feats.begin() + static_cast<std::ptrdiff_t>(n * L),
                                   feats.begin() + static_cast<std::ptrdiff_t>((n + 1) * L), row.begin());
                         row[L] = scoring::llr(o.head.sample(n));
                         acc += m.det_mixed.score(row);
                       }
                       sink = sink + acc;
                     }});
  methods.push_back({"MD*", [&](const Out& o) {
                       const auto pooled = scoring::pool_taps(o.taps, avg);
                       double acc = 0;
                       for (double v : detector::mdstar_scores(m.mdstar, pooled)) acc += v;
                       sink = sink + acc;
                     }});
  return eval::bench_latency<Out>(forward, methods, bc);
}

}  // namespace food::pipeline
