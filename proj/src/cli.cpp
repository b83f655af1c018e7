#include "grnr/cli.hpp"

#include <sys/utsname.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "grnr/config.hpp"
#include "grnr/dataset.hpp"
#include "grnr/errors.hpp"
#include "grnr/io.hpp"
#include "grnr/model.hpp"
#include "grnr/training.hpp"

namespace grnr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Options shared by the commands that resolve a RunConfig.
struct ConfigArgs {
  std::string profile;
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--profile", profile, "paper or desk");
    cmd->add_option("--config", config_file, "flat key=value config file");
    cmd->add_option("--set", sets, "section.key=value override (repeatable)");
    cmd->add_option("--seed", seed, "random seed");
  }

  config::KeyValues file_values() const {
    return config_file.empty() ? config::KeyValues{} : config::parse_config_file(config_file);
  }

  config::KeyValues overrides() const {
    config::KeyValues kv;
    for (const auto& s : sets) kv.push_back(config::parse_override(s));
    if (seed) kv.emplace_back("seed", std::to_string(*seed));
    return kv;
  }

  config::RunConfig resolve(const config::KeyValues& extra = {}) const {
    auto over = overrides();
    over.insert(over.end(), extra.begin(), extra.end());
    return config::resolve(profile, file_values(), over);
  }
};

struct OutputArgs {
  std::string output_dir = "runs";
  std::string run_id;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--output-dir", output_dir, "root directory for run outputs");
    cmd->add_option("--run-id", run_id, "run subfolder (default: derived from the arguments)");
  }

  // The default id is the command name plus a hash of the arguments that
  // determine the result, so reruns land in the same folder.
  fs::path dir(const std::string& command, const std::vector<std::string>& identity) const {
    std::string id = run_id;
    if (id.empty()) {
      std::string joined = command;
      for (const auto& s : identity) joined += "\x1f" + s;
      id = command + "-" + config::stable_hash(joined).substr(0, 12);
    }
    const fs::path d = fs::path(output_dir) / id;
    fs::create_directories(d);
    return d;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
}

std::string config_echo(const config::RunConfig& c) {
  std::string out;
  for (const auto& [k, v] : c.entries()) out += k + "=" + v + "\n";
  return out;
}

std::vector<std::string> identity_of(const config::RunConfig& c, std::vector<std::string> extra) {
  for (const auto& [k, v] : c.entries()) extra.push_back(k + "=" + v);
  return extra;
}

dataset::ToySplitCounts parse_counts(const std::string& flag, const std::string& text) {
  std::vector<std::size_t> xs;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    long long v = -1;
    try {
      v = std::stoll(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || v < 0) throw ConfigError(flag + ": expected three non-negative counts, got '" + text + "'");
    xs.push_back(static_cast<std::size_t>(v));
  }
  if (xs.size() != 3) throw ConfigError(flag + ": expected no,single,multi counts, got '" + text + "'");
  return {xs[0], xs[1], xs[2]};
}

std::string counts_table(const dataset::Manifest& m) {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof(line), "%-6s %8s %8s %8s %8s\n", "split", "no", "single", "multi", "total");
  out << line;
  for (const std::string split : {"train", "val", "test"}) {
    const auto c = m.category_counts(split);
    std::snprintf(line, sizeof(line), "%-6s %8zu %8zu %8zu %8zu\n", split.c_str(), c.no_target, c.single_target,
                  c.multi_target, c.total());
    out << line;
  }
  return out.str();
}

struct LoadedSplit {
  dataset::Manifest manifest;
  std::vector<training::TrainingExample> examples;
};

LoadedSplit load_split(const fs::path& path) {
  LoadedSplit out;
  out.manifest = dataset::load_manifest(path);
  const fs::path base = path.parent_path();
  for (const auto& s : out.manifest.samples) {
    out.examples.push_back({s.id, dataset::load_sample_image(s, base), s.instruction, s.polygons});
  }
  return out;
}

// Landmark boxes of the training split mapped into the layout reference frame.
model::PatchLayout layout_from_split(const LoadedSplit& split, const model::LayoutConfig& lc) {
  std::vector<geometry::Rect> boxes;
  for (std::size_t i = 0; i < split.examples.size(); ++i) {
    const double sx = static_cast<double>(lc.ref_w) / split.examples[i].image.width;
    const double sy = static_cast<double>(lc.ref_h) / split.examples[i].image.height;
    for (const auto& b : split.manifest.samples[i].landmark_boxes) {
      boxes.push_back({b.x * sx, b.y * sy, b.w * sx, b.h * sy});
    }
  }
  return model::compute_patch_layout(boxes, lc.ref_w, lc.ref_h, lc.patch_w, lc.patch_h, lc.num_patches,
                                     lc.stride);
}

std::string step_record(const training::StepLog& l) {
  json j = {{"epoch", l.epoch}, {"step", l.step}, {"ce", l.ce},
            {"point", l.point}, {"total", l.total}, {"lr", l.lr}};
  if (l.val_msiou) j["val_msiou"] = *l.val_msiou;
  return j.dump();
}

metrics::PredictionItem predict(const model::GennavModel& net, const std::string& id, const ImagePlane& img,
                                const std::string& instruction) {
  const auto pred = net.forward(img, instruction);
  const auto decoded = model::decode_prediction(pred, net.config());
  return {id, decoded.existence, decoded.polygons,
          std::vector<double>(pred.existence.begin(), pred.existence.end())};
}

// Model-shaping keys the user set explicitly must agree with the checkpoint.
void check_against_checkpoint(const config::KeyValues& explicit_values, const config::RunConfig& ckpt) {
  std::map<std::string, std::string> have;
  for (const auto& [k, v] : ckpt.entries()) have[k] = v;
  config::RunConfig probe = ckpt;
  for (const auto& [k, v] : explicit_values) {
    if (k.rfind("encoder.", 0) != 0 && k.rfind("layout.", 0) != 0 && k.rfind("model.", 0) != 0) continue;
    probe.set(k, v);
  }
  for (const auto& [k, v] : probe.entries()) {
    if (have[k] != v) {
      throw InputMismatch("config sets " + k + "=" + v + " but the checkpoint was trained with " + k + "=" + have[k]);
    }
  }
}

// --- commands -----------------------------------------------------------------

struct BuildArgs {
  bool synthetic = false;
  std::string counts = "10,10,10";
  std::string val_counts = "0,0,0";
  std::string test_counts = "0,0,0";
  std::uint64_t seed = 0;
  std::string talk2car, kitti_tracks, kitti_polygons, kitti_frames, templates, split_dir;
  std::string verifier = "http";
  int max_retries = 3;
  int max_in_flight = 4;
  double trace_tolerance = 1.0;
  bool expect_full = false;
  std::string review;
  OutputArgs output;
};

int cmd_build_dataset(const BuildArgs& a, std::ostream& out) {
  dataset::Manifest m;
  fs::path dir;
  if (a.synthetic) {
    dataset::ToyDatasetConfig cfg;
    cfg.train = parse_counts("--counts", a.counts);
    cfg.val = parse_counts("--val-counts", a.val_counts);
    cfg.test = parse_counts("--test-counts", a.test_counts);
    dir = a.output.dir("build-dataset", {"synthetic", a.counts, a.val_counts, a.test_counts, std::to_string(a.seed)});
    m = dataset::generate_toy_dataset(cfg, a.seed);
  } else {
    for (const auto& [flag, value] :
         std::vector<std::pair<std::string, std::string>>{{"--talk2car", a.talk2car},
                                                          {"--kitti-tracks", a.kitti_tracks},
                                                          {"--kitti-polygons", a.kitti_polygons},
                                                          {"--kitti-frames", a.kitti_frames},
                                                          {"--templates", a.templates},
                                                          {"--split-dir", a.split_dir}}) {
      if (value.empty()) throw ConfigError("build-dataset needs --synthetic or " + flag);
    }
    dir = a.output.dir("build-dataset", {a.talk2car, a.kitti_tracks, a.kitti_polygons, a.kitti_frames,
                                         a.templates, a.split_dir, std::to_string(a.seed),
                                         config::format_double(a.trace_tolerance)});
    std::unique_ptr<dataset::Verifier> verifier;
    if (a.verifier == "http") {
      verifier = dataset::HttpVerifier::from_env();
    } else if (a.verifier == "stub-absent") {
      verifier = std::make_unique<dataset::ScriptedVerifier>(
          std::vector{dataset::ScriptedVerifier::Step::Absent});
    } else {
      throw ConfigError("--verifier must be http or stub-absent");
    }
    dataset::NoTargetConfig nt;
    nt.seed = a.seed;
    nt.max_retries = a.max_retries;
    nt.max_in_flight = a.max_in_flight;
    const dataset::RealBuildInputs in{a.talk2car, a.kitti_tracks, a.kitti_polygons, a.kitti_frames,
                                      a.templates, a.split_dir, dir, a.trace_tolerance};
    m = dataset::build_real_dataset(in, *verifier, nt);
  }

  for (const std::string split : {"train", "val", "test"}) {
    dataset::save_manifest(m.split(split), dir / (split + ".jsonl"));
  }
  dataset::append_provenance(m.provenance, dir / "provenance.jsonl");
  out << counts_table(m);
  out << "wrote manifests to " << dir.string() << "\n";
  if (!a.review.empty()) {
    dataset::export_review(m, dir, a.review);
    out << "review sheet written to " << (fs::path(a.review) / "review.tsv").string() << "\n";
  }
  if (a.expect_full) dataset::check_full_build(m);
  return kExitOk;
}

struct TrainArgs {
  ConfigArgs cfg;
  OutputArgs output;
  std::string data;
  std::string train_manifest;
  std::string val_manifest;
  std::string layout_cache;
  bool dry_run = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const auto rc = a.cfg.resolve();
  fs::path train_path = a.train_manifest;
  fs::path val_path = a.val_manifest;
  if (!a.data.empty()) {
    if (train_path.empty()) train_path = fs::path(a.data) / "train.jsonl";
    if (val_path.empty()) val_path = fs::path(a.data) / "val.jsonl";
  }
  if (train_path.empty() || val_path.empty()) throw ConfigError("train needs --data or --train and --val manifests");
  out << config_echo(rc);

  const auto train_split = load_split(train_path);
  const auto val_split = load_split(val_path);
  if (train_split.examples.empty()) throw InvalidInput("training split " + train_path.string() + " is empty");
  if (val_split.examples.empty()) throw InvalidInput("validation split " + val_path.string() + " is empty");
  if (a.dry_run) return kExitOk;

  const auto train_text = dataset::serialize_manifest(train_split.manifest);
  const auto dir = a.output.dir("train", identity_of(rc, {config::stable_hash(train_text),
                                                          config::stable_hash(dataset::serialize_manifest(val_split.manifest))}));
  write_text(dir / "config.txt", config_echo(rc));

  std::string layout_key = train_text;
  for (const auto& [k, v] : rc.entries()) {
    if (k.rfind("layout.", 0) == 0) layout_key += k + "=" + v + "\n";
  }
  layout_key = config::stable_hash(layout_key);
  const fs::path cache_path = a.layout_cache.empty() ? dir / "layout-cache.json" : fs::path(a.layout_cache);
  auto layout = io::load_layout_cache(cache_path, layout_key);
  if (!layout) {
    layout = layout_from_split(train_split, rc.model.layout);
    io::save_layout_cache(cache_path, layout_key, *layout);
  }

  std::vector<std::string> texts;
  for (const auto& e : train_split.examples) texts.push_back(e.instruction);
  model::GennavModel net(rc.model, encoders::Vocabulary::build(texts), *layout, rc.seed);

  std::ofstream log(dir / "train_log.jsonl", std::ios::binary);
  if (!log) throw RuntimeFailure("cannot write training log in " + dir.string());
  training::TrainOptions opts;
  opts.eval = rc.eval;
  opts.on_log = [&](const training::StepLog& l) {
    log << step_record(l) << "\n";
    if (l.val_msiou) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "epoch %4d  loss %.5f  val msIoU %.4f\n", l.epoch, l.total, *l.val_msiou);
      out << buf << std::flush;
    }
  };
  opts.on_warning = [&](const std::string& w) { err << "warning: " << w << "\n"; };
  const auto result = training::train(net, train_split.examples, val_split.examples, rc.train, opts);
  log.close();

  io::save_checkpoint({rc, result.best_model, result.history, result.best_epoch}, dir / "checkpoint.json");
  json hist = json::array();
  for (const auto& h : result.history) hist.push_back({{"epoch", h.epoch}, {"val_msiou", h.val_msiou}});
  write_text(dir / "history.json", json{{"best_epoch", result.best_epoch}, {"history", hist}}.dump(2) + "\n");
  out << "best epoch " << result.best_epoch << ", checkpoint " << (dir / "checkpoint.json").string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  ConfigArgs cfg;
  OutputArgs output;
  std::string gt;
  std::string predictions;
  std::optional<double> msiou_K;
  std::string p_at_k;
  std::string raster;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  config::KeyValues extra;
  if (a.msiou_K) extra.emplace_back("eval.msiou_K", config::format_double(*a.msiou_K));
  if (!a.p_at_k.empty()) extra.emplace_back("eval.p_at_k", a.p_at_k);
  if (!a.raster.empty()) extra.emplace_back("eval.raster", a.raster);
  const auto rc = a.cfg.resolve(extra);
  if (a.gt.empty() || a.predictions.empty()) throw ConfigError("eval needs --gt and --predictions");

  const auto gt_manifest = dataset::load_manifest(a.gt);
  std::vector<metrics::GroundTruthItem> gt;
  for (const auto& s : gt_manifest.samples) gt.push_back({s.id, s.polygons, s.existence});
  if (!fs::exists(a.predictions)) throw IntegrityError("predictions not found: " + a.predictions);
  const auto preds = io::load_predictions(a.predictions);
  const auto report = metrics::evaluate(gt, preds, rc.eval);

  std::ifstream pin(a.predictions, std::ios::binary);
  std::stringstream pbuf;
  pbuf << pin.rdbuf();
  const auto dir = a.output.dir("eval", identity_of(rc, {config::stable_hash(dataset::serialize_manifest(gt_manifest)),
                                                         config::stable_hash(pbuf.str())}));
  write_text(dir / "report.json", io::report_json(report, &rc));
  out << io::report_table(report);
  out << "report " << (dir / "report.json").string() << "\n";
  return kExitOk;
}

struct InferArgs {
  ConfigArgs cfg;
  OutputArgs output;
  std::string checkpoint;
  std::string manifest;
  std::string image;
  std::string instruction;
  std::string id;
  std::string export_masks;
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
  if (a.checkpoint.empty()) throw ConfigError("infer needs --checkpoint");
  const auto ck = io::load_checkpoint(a.checkpoint);
  auto explicit_values = a.cfg.file_values();
  const auto over = a.cfg.overrides();
  explicit_values.insert(explicit_values.end(), over.begin(), over.end());
  check_against_checkpoint(explicit_values, ck.config);

  std::vector<std::pair<std::string, std::pair<ImagePlane, std::string>>> inputs;
  std::string input_identity;
  if (!a.manifest.empty()) {
    const auto split = load_split(a.manifest);
    for (const auto& e : split.examples) inputs.push_back({e.id, {e.image, e.instruction}});
    input_identity = config::stable_hash(dataset::serialize_manifest(split.manifest));
  } else if (!a.image.empty()) {
    if (a.instruction.empty()) throw ConfigError("--image needs --instruction");
    if (!fs::exists(a.image)) throw IntegrityError("image not found: " + a.image);
    const std::string id = a.id.empty() ? fs::path(a.image).stem().string() : a.id;
    inputs.push_back({id, {load_ppm(a.image), a.instruction}});
    input_identity = a.image + "\x1f" + a.instruction;
  } else {
    throw ConfigError("infer needs --manifest or --image with --instruction");
  }

  std::ifstream cin(a.checkpoint, std::ios::binary);
  std::stringstream cbuf;
  cbuf << cin.rdbuf();
  const auto dir = a.output.dir("infer", {config::stable_hash(cbuf.str()), input_identity});
  std::vector<metrics::PredictionItem> preds;
  for (const auto& [id, in] : inputs) {
    preds.push_back(predict(ck.model, id, in.first, in.second));
    if (!a.export_masks.empty()) {
      fs::create_directories(a.export_masks);
      const auto mask = geometry::rasterize(preds.back().polygons, in.first.width, in.first.height);
      geometry::write_pgm(mask, (fs::path(a.export_masks) / (id + ".pgm")).string());
    }
  }
  io::save_predictions(preds, dir / "predictions.jsonl");
  out << "wrote " << preds.size() << " prediction(s) to " << (dir / "predictions.jsonl").string() << "\n";
  return kExitOk;
}

struct BenchArgs {
  OutputArgs output;
  std::string checkpoint;
  std::string manifest;
  int warmup = 5;
  int runs = 50;
};

int cmd_bench_speed(const BenchArgs& a, std::ostream& out) {
  if (a.runs < 1) throw InvalidInput("bench-speed needs at least one timed run");
  if (a.warmup < 0) throw InvalidInput("--warmup must be >= 0");
  if (a.checkpoint.empty()) throw ConfigError("bench-speed needs --checkpoint");
  const auto ck = io::load_checkpoint(a.checkpoint);

  ImagePlane img;
  std::string instruction;
  if (!a.manifest.empty()) {
    const auto split = load_split(a.manifest);
    if (split.examples.empty()) throw InvalidInput("manifest " + a.manifest + " has no samples");
    img = split.examples.front().image;
    instruction = split.examples.front().instruction;
  } else {
    dataset::ToyDatasetConfig tc;
    tc.train = {0, 1, 0};
    const auto m = dataset::generate_toy_dataset(tc, 0);
    img = dataset::render_scene(*m.samples.front().scene);
    instruction = m.samples.front().instruction;
  }

  for (int i = 0; i < a.warmup; ++i) (void)ck.model.forward(img, instruction);
  std::vector<double> ms;
  for (int i = 0; i < a.runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto p = ck.model.forward(img, instruction);
    const auto t1 = std::chrono::steady_clock::now();
    if (p.vertices.empty()) throw RuntimeFailure("empty prediction during benchmark");
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  double mean = 0.0;
  for (double v : ms) mean += v;
  mean /= static_cast<double>(ms.size());
  double var = 0.0;
  for (double v : ms) var += (v - mean) * (v - mean);
  const double stdev = ms.size() > 1 ? std::sqrt(var / static_cast<double>(ms.size() - 1)) : 0.0;

  const auto fp = hardware_fingerprint();
  const auto dir = a.output.dir("bench-speed", {a.checkpoint, a.manifest, std::to_string(a.warmup),
                                                std::to_string(a.runs), fp});
  const json doc = {{"mean_ms", mean}, {"std_ms", stdev}, {"warmup", a.warmup}, {"runs", a.runs},
                    {"image", std::to_string(img.width) + "x" + std::to_string(img.height)},
                    {"hardware", fp}, {"samples_ms", ms}};
  write_text(dir / "bench.json", doc.dump(2) + "\n");
  char buf[160];
  std::snprintf(buf, sizeof(buf), "inference: %.3f +- %.3f ms/sample over %d runs (%d warmup)\n", mean, stdev,
                a.runs, a.warmup);
  out << buf << "hardware: " << fp << "\n";
  return kExitOk;
}

}  // namespace

std::string hardware_fingerprint() {
  std::string cpu = "unknown cpu";
  std::ifstream info("/proc/cpuinfo");
  std::string line;
  while (std::getline(info, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(line.find_first_not_of(' ', colon + 1));
      break;
    }
  }
  utsname u{};
  std::string os = "unknown os";
  if (uname(&u) == 0) os = std::string(u.sysname) + " " + u.release + " " + u.machine;
#ifdef NDEBUG
  const char* build = "release";
#else
  const char* build = "debug";
#endif
  return cpu + "; " + std::to_string(std::thread::hardware_concurrency()) + " threads; " + os + "; gcc " +
         __VERSION__ + "; " + build;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Referring navigable-region grounding: dataset, training, evaluation"};
  app.name("grnr");
  app.require_subcommand(1);
  std::function<int()> action;

  BuildArgs build;
  auto* b = app.add_subcommand("build-dataset", "build benchmark manifests");
  b->add_flag("--synthetic", build.synthetic, "generate procedural toy scenes");
  b->add_option("--counts", build.counts, "train no,single,multi counts");
  b->add_option("--val-counts", build.val_counts, "val no,single,multi counts");
  b->add_option("--test-counts", build.test_counts, "test no,single,multi counts");
  b->add_option("--seed", build.seed, "random seed");
  b->add_option("--talk2car", build.talk2car, "JSONL source samples");
  b->add_option("--kitti-tracks", build.kitti_tracks, "JSONL track annotations");
  b->add_option("--kitti-polygons", build.kitti_polygons, "JSONL polygon annotations for mined frames");
  b->add_option("--kitti-frames", build.kitti_frames, "directory of <video>/<frame>.ppm");
  b->add_option("--templates", build.templates, "instruction templates, one per line");
  b->add_option("--split-dir", build.split_dir, "directory with train.txt, val.txt, test.txt");
  b->add_option("--verifier", build.verifier, "http (VERIFIER_URL) or stub-absent");
  b->add_option("--max-retries", build.max_retries, "re-swaps per no-target candidate");
  b->add_option("--max-in-flight", build.max_in_flight, "parallel verifier requests");
  b->add_option("--trace-tolerance", build.trace_tolerance, "simplification tolerance in pixels for mask inputs");
  b->add_flag("--expect-full", build.expect_full, "fail unless the split counts match the full benchmark");
  b->add_option("--review", build.review, "export images and an accept/reject sheet here");
  build.output.add_to(b);
  b->callback([&] { action = [&] { return cmd_build_dataset(build, out); }; });

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train a model and keep the best validation checkpoint");
  train.cfg.add_to(t);
  train.output.add_to(t);
  t->add_option("--data", train.data, "directory with train.jsonl and val.jsonl");
  t->add_option("--train", train.train_manifest, "training manifest");
  t->add_option("--val", train.val_manifest, "validation manifest");
  t->add_option("--layout-cache", train.layout_cache, "patch layout cache file");
  t->add_flag("--dry-run", train.dry_run, "resolve config and inputs, then stop");
  t->callback([&] { action = [&] { return cmd_train(train, out, err); }; });

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score predictions against a ground-truth manifest");
  ev.cfg.add_to(e);
  ev.output.add_to(e);
  e->add_option("--gt", ev.gt, "ground-truth manifest");
  e->add_option("--predictions", ev.predictions, "predictions JSONL (or a manifest)");
  e->add_option("--msiou-K", ev.msiou_K, "msIoU threshold K");
  e->add_option("--p-at-k", ev.p_at_k, "comma-separated P@K thresholds");
  e->add_option("--raster", ev.raster, "evaluation raster WxH");
  e->callback([&] { action = [&] { return cmd_eval(ev, out); }; });

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "predict existence and polygons");
  inf.cfg.add_to(i);
  inf.output.add_to(i);
  i->add_option("--checkpoint", inf.checkpoint, "trained checkpoint");
  i->add_option("--manifest", inf.manifest, "input manifest");
  i->add_option("--image", inf.image, "single PPM image");
  i->add_option("--instruction", inf.instruction, "instruction for --image");
  i->add_option("--id", inf.id, "record id for --image");
  i->add_option("--export-masks", inf.export_masks, "write PGM masks here");
  i->callback([&] { action = [&] { return cmd_infer(inf, out); }; });

  BenchArgs bench;
  auto* s = app.add_subcommand("bench-speed", "measure inference time per sample");
  bench.output.add_to(s);
  s->add_option("--checkpoint", bench.checkpoint, "trained checkpoint");
  s->add_option("--manifest", bench.manifest, "take the first sample from this manifest");
  s->add_option("--warmup", bench.warmup, "untimed runs");
  s->add_option("--runs", bench.runs, "timed runs");
  s->callback([&] { action = [&] { return cmd_bench_speed(bench, out); }; });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& pe) {
    return app.exit(pe, out, err) == 0 ? kExitOk : kExitValidation;
  }
  try {
    return action();
  } catch (const ValidationError& ve) {
    err << "error: " << ve.what() << "\n";
    return kExitValidation;
  } catch (const RuntimeFailure& rf) {
    err << "error: " << rf.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace grnr::cli
