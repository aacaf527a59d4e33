// SPDX-License-Identifier: Apache-2.0
// close: command line front end for training, evaluation, segmentation,
// refinement, label cleaning and the annotation service.

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>

#include "close/checkpoint.hpp"
#include "close/error.hpp"
#include "close/heuristics.hpp"
#include "close/metrics.hpp"
#include "close/ply.hpp"
#include "close/refinement.hpp"
#include "close/service.hpp"
#include "close/synthgen.hpp"
#include "close/training.hpp"

using namespace closenet;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), e.byte);
  }
}

void write_json_file(const std::string& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << doc.dump(2) << '\n';
}

std::vector<ClassId> parse_class_list(const std::string& text) {
  std::vector<ClassId> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(LabelTaxonomy::standard().resolve(item));
  }
  return out;
}

// Scan input shared by several subcommands.
struct ScanArgs {
  std::string ply, meta, garments, body;

  void add(CLI::App* sub) {
    sub->add_option("scan", ply, "Scan point cloud (.ply)")->required()->check(CLI::ExistingFile);
    sub->add_option("--meta", meta, "Scan metadata JSON (default: <scan>.json next to the PLY)")
        ->check(CLI::ExistingFile);
    sub->add_option("--garments", garments, "Garment vector: class names, 0/1 string or 0x bitmask");
    sub->add_option("--body", body, "Body parameter JSON")->check(CLI::ExistingFile);
  }

  ScanSample load() const {
    std::optional<std::filesystem::path> meta_path;
    if (!meta.empty()) {
      meta_path = meta;
    } else if (auto sibling = std::filesystem::path(ply).replace_extension(".json"); std::filesystem::exists(sibling)) {
      meta_path = sibling;
    }
    ScanSample scan = load_scan(ply, meta_path);
    if (!garments.empty()) scan.garments = GarmentVector::parse(garments, LabelTaxonomy::standard());
    if (!body.empty()) {
      const json doc = read_json_file(body);
      scan.body = body_params_from_json(doc.contains("body") ? doc.at("body") : doc);
    }
    return scan;
  }
};

struct Context {
  std::string body_model_path;

  const BodyModel& body_model() {
    if (body_model_path.empty()) return toy_body_model();
    if (!loaded) loaded = load_body_model(body_model_path);
    return *loaded;
  }
  std::optional<BodyModel> loaded;
};

void print_report(const EvalReport& report) {
  const auto& t = LabelTaxonomy::standard();
  for (int c = 0; c < kNumClasses; ++c) {
    if (!report.per_class[c]) continue;
    std::printf("  %-14s %.4f\n", std::string(t.name(static_cast<ClassId>(c))).c_str(), *report.per_class[c]);
  }
  std::printf("mean IoU: %.4f\n", report.mean_iou);
  std::printf("mean IoU (per-scan average): %.4f\n", report.mean_iou_per_scan);
}

// synth ----------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 0;
  std::size_t n_train = 20, n_val = 5, n_test = 5, points = 1024;
  std::string coverage = "tshirt,shirt,pants,short-pants,jacket,dress,shoes,body,hair";
  std::vector<std::string> templates;
  bool no_probes = false;
};

int run_synth(const SynthArgs& a) {
  SuiteConfig sc;
  sc.master_seed = a.seed;
  sc.n_train = a.n_train, sc.n_val = a.n_val, sc.n_test = a.n_test;
  sc.n_points = a.points;
  sc.coverage = parse_class_list(a.coverage);
  sc.templates = a.templates;
  sc.probes = !a.no_probes;
  const SynthSuite suite = generate_suite(sc);
  write_suite(suite, a.out);
  std::printf("wrote %zu/%zu/%zu scans to %s\n", suite.train.size(), suite.val.size(), suite.test.size(),
              a.out.c_str());
  return 0;
}

// train ----------------------------------------------------------------------

struct TrainArgs {
  std::string suite, out, history, report, cache_dir;
  int epochs = 50, batch = 4;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::size_t sample_points = 4096;
  bool class_weighting = false, verbose = false;
  std::string body_encoder = "canonical", clothing_encoder = "attention";
  int k = 20, feature_width = 64, global_width = 1024, heads = 4, pe_bands = 6;
  std::vector<int> decoder_hidden = {256, 128};
  bool static_graph = false;
};

int run_train(const TrainArgs& a, Context& ctx) {
  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.learning_rate = a.lr;
  tc.seed = a.seed;
  tc.sample_points = a.sample_points;
  tc.class_weighting = a.class_weighting;
  tc.verbose = a.verbose;
  tc.network.body_encoder = parse_body_encoder(a.body_encoder);
  tc.network.clothing_encoder = parse_clothing_encoder(a.clothing_encoder);
  tc.network.k = a.k;
  tc.network.feature_width = a.feature_width;
  tc.network.global_width = a.global_width;
  tc.network.n_heads = a.heads;
  tc.network.pe_bands = a.pe_bands;
  tc.network.decoder_hidden = a.decoder_hidden;
  tc.network.static_graph = a.static_graph;
  if (!a.history.empty()) tc.history_csv = a.history;
  if (!a.report.empty()) tc.report_json = a.report;
  tc.validate();

  const LoadedSuite suite = read_suite(a.suite);
  if (suite.train.empty() || suite.val.empty()) throw ValidationError("suite needs train and val scans");
  BodyFeatureCache cache(a.cache_dir.empty() ? std::nullopt : std::optional<std::filesystem::path>(a.cache_dir));
  const auto train_set = make_examples(suite.train, tc.network, ctx.body_model(), &cache);
  const auto val_set = make_examples(suite.val, tc.network, ctx.body_model(), &cache);
  const TrainResult result = train(train_set, val_set, tc);
  save_checkpoint(result.state, a.out,
                  {{"best_epoch", result.best_epoch},
                   {"best_val_miou", result.best_val_miou},
                   {"seed", a.seed},
                   {"suite", a.suite}});
  std::printf("best epoch %d, val mIoU %.4f, checkpoint %s (%s)\n", result.best_epoch, result.best_val_miou,
              a.out.c_str(), result.state.hash().c_str());
  return 0;
}

// eval -----------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, suite, split = "test", report, cache_dir;
  std::vector<std::string> pred, gt;
  bool restrict = false;
};

int run_eval(const EvalArgs& a, Context& ctx) {
  EvalReport report;
  if (!a.pred.empty() || !a.gt.empty()) {
    if (a.pred.size() != a.gt.size()) throw ValidationError("--pred and --gt need the same number of files");
    std::vector<std::vector<ClassId>> preds, gts;
    for (const auto& p : a.pred) preds.push_back(read_label_file(p));
    for (const auto& g : a.gt) gts.push_back(read_label_file(g));
    report = evaluate_predictions(preds, gts, a.pred);
  } else {
    if (a.ckpt.empty() || a.suite.empty()) throw ValidationError("eval needs --ckpt and --suite, or --pred and --gt");
    const NetworkState state = load_checkpoint(a.ckpt);
    const LoadedSuite suite = read_suite(a.suite);
    const auto& scans = a.split == "train" ? suite.train : a.split == "val" ? suite.val : suite.test;
    if (a.split != "train" && a.split != "val" && a.split != "test")
      throw ValidationError("--split must be train, val or test");
    BodyFeatureCache cache(a.cache_dir.empty() ? std::nullopt : std::optional<std::filesystem::path>(a.cache_dir));
    const auto examples = make_examples(scans, state.config, ctx.body_model(), &cache);
    ForwardOptions fo;
    fo.restrict_to_garments = a.restrict;
    fo.chunk_size = 8192;
    report = evaluate(examples, state, fo);
  }
  print_report(report);
  if (!a.report.empty()) write_json_file(a.report, report.to_json());
  return 0;
}

// segment --------------------------------------------------------------------

struct SegmentArgs {
  ScanArgs scan;
  std::string ckpt, out;
  bool no_restrict = false;
  std::size_t chunk = 8192;
};

int run_segment(const SegmentArgs& a, Context& ctx) {
  const NetworkState state = load_checkpoint(a.ckpt);
  const ScanSample scan = a.scan.load();
  const Example ex = make_example(scan, state.config, ctx.body_model());
  SegmentOptions so;
  so.restrict_to_garments = !a.no_restrict;
  so.chunk_size = a.chunk;
  const Segmentation seg = segment(ex.input, state, so);
  write_label_file(a.out, scan.id, seg.labels, seg.confidence);
  std::printf("segmented %zu points of %s -> %s\n", seg.labels.size(), scan.id.c_str(), a.out.c_str());
  return 0;
}

// refine ---------------------------------------------------------------------

struct RefineArgs {
  ScanArgs scan;
  std::string ckpt, reference, labels, corrected, suite, out, report, preset;
  std::optional<double> lambda_c, lambda_f, lambda_w;
  std::vector<std::string> layers;
  int epochs = RefineConfig{}.epochs, steps = RefineConfig{}.steps_per_epoch;
  double lr = RefineConfig{}.learning_rate, budget = 0.015;
  bool allow_any_order = false, fail_on_regression = false;
};

int run_refine(const RefineArgs& a, Context& ctx) {
  const NetworkState current = load_checkpoint(a.ckpt);
  const NetworkState reference = a.reference.empty() ? current : load_checkpoint(a.reference);
  const ScanSample scan = a.scan.load();
  const Example ex = make_example(scan, current.config, ctx.body_model());
  const std::vector<ClassId> user = read_label_file(a.labels);
  if (user.size() != scan.size()) throw ValidationError("--labels must hold one label per scan point");

  RefineConfig rc;
  if (!a.preset.empty()) {
    rc.lambdas = lambda_preset(a.preset);
    rc.enforce_lambda_order = rc.lambdas.corrected < rc.lambdas.stable;
  }
  if (a.lambda_c) rc.lambdas.corrected = *a.lambda_c;
  if (a.lambda_f) rc.lambdas.stable = *a.lambda_f;
  if (a.lambda_w) rc.lambdas.anchor = *a.lambda_w;
  if (a.allow_any_order) rc.enforce_lambda_order = false;
  rc.layers.insert(a.layers.begin(), a.layers.end());
  rc.epochs = a.epochs;
  rc.steps_per_epoch = a.steps;
  rc.learning_rate = a.lr;

  std::vector<std::uint32_t> corrected;
  if (!a.corrected.empty()) {
    const json doc = read_json_file(a.corrected);
    const json& list = doc.is_object() ? doc.at("indices") : doc;
    for (const auto& v : list) corrected.push_back(v.get<std::uint32_t>());
  } else {
    const Segmentation seg = segment_logits(forward(ex.input, current, rc.forward));
    for (std::size_t i = 0; i < user.size(); ++i) {
      if (seg.labels[i] != user[i]) corrected.push_back(static_cast<std::uint32_t>(i));
    }
  }

  std::vector<Example> suite_examples;
  if (!a.suite.empty()) suite_examples = make_examples(read_suite(a.suite).test, current.config, ctx.body_model());
  const std::vector<ClassId> truth = scan.labels ? *scan.labels : std::vector<ClassId>();
  const RefineResult result = refine(current, reference, ex.input, user, corrected, rc, truth,
                                     suite_examples.empty() ? nullptr : &suite_examples);
  for (const auto& w : result.report.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  save_checkpoint(result.state, a.out, {{"refined_from", current.hash()}, {"report", result.report.to_json()}});
  if (!a.report.empty()) write_json_file(a.report, result.report.to_json());
  std::printf("%s\n", result.report.to_json().dump(2).c_str());
  if (result.report.suite_miou_before && result.report.suite_miou_after) {
    const double drop = *result.report.suite_miou_before - *result.report.suite_miou_after;
    const bool pass = drop <= a.budget;
    std::printf("regression guard: %s (suite mIoU %.4f -> %.4f)\n", pass ? "pass" : "FAIL",
                *result.report.suite_miou_before, *result.report.suite_miou_after);
    if (!pass && a.fail_on_regression) return kExitRuntime;
  }
  return 0;
}

// clean ----------------------------------------------------------------------

struct CleanArgs {
  ScanArgs scan;
  std::string labels, rules, out;
  int k = 8;
  bool no_body_filter = false, no_garment_filter = false;
};

int run_clean(const CleanArgs& a, Context& ctx) {
  const ScanSample scan = a.scan.load();
  std::vector<ClassId> labels = read_label_file(a.labels);
  if (labels.size() != scan.size()) throw ValidationError("--labels must hold one label per scan point");
  const BodyModel& model = ctx.body_model();
  std::size_t body_changes = 0, garment_changes = 0;
  if (!a.no_body_filter) {
    if (!scan.body) throw ValidationError("body filter needs body parameters (--body or metadata)");
    const RegionRules rules = a.rules.empty() ? RegionRules::defaults() : RegionRules::load(a.rules);
    rules.validate(model);
    const BodyFeatureField field = encode_body(scan, model);
    CleanResult r = body_part_filter(labels, field, scan.points, model, rules, a.k);
    labels = std::move(r.labels);
    body_changes = r.changed;
  }
  if (!a.no_garment_filter) {
    if (!scan.garments) throw ValidationError("garment filter needs a garment vector (--garments or metadata)");
    CleanResult r = garment_filter(labels, *scan.garments, scan.points, a.k);
    labels = std::move(r.labels);
    garment_changes = r.changed;
  }
  write_label_file(a.out, scan.id, labels);
  std::printf("body-part filter changed %zu points, garment filter changed %zu points\n", body_changes,
              garment_changes);
  return 0;
}

// merge3 ---------------------------------------------------------------------

struct Merge3Args {
  std::vector<std::string> pred, gt;
  std::string map, out;
};

int run_merge3(const Merge3Args& a) {
  const LabelTaxonomy taxonomy =
      a.map.empty() ? LabelTaxonomy::standard() : LabelTaxonomy::standard().with_merge_map(a.map);
  if (!a.gt.empty() && a.gt.size() != a.pred.size())
    throw ValidationError("--pred and --gt need the same number of files");
  ConfusionMatrix cm(3);
  json merged = json::array();
  for (std::size_t f = 0; f < a.pred.size(); ++f) {
    const auto pred = merge_to_3class(read_label_file(a.pred[f]), taxonomy);
    std::vector<std::uint8_t> p;
    for (auto c : pred) p.push_back(static_cast<std::uint8_t>(c));
    json coarse = json::array();
    for (auto c : pred) coarse.push_back(std::string(to_string(c)));
    merged.push_back({{"file", a.pred[f]}, {"labels", coarse}});
    if (!a.gt.empty()) {
      const auto gt = merge_to_3class(read_label_file(a.gt[f]), taxonomy);
      std::vector<std::uint8_t> g;
      for (auto c : gt) g.push_back(static_cast<std::uint8_t>(c));
      cm.add(p, g);
    }
  }
  if (!a.out.empty()) write_json_file(a.out, merged);
  if (!a.gt.empty()) {
    const auto per_class = cm.per_class_iou();
    for (int c = 0; c < 3; ++c) {
      if (per_class[c]) std::printf("  %-6s %.4f\n", std::string(to_string(static_cast<CoarseClass>(c))).c_str(),
                                    *per_class[c]);
    }
    std::printf("mean IoU (3-class): %.4f\n", mean_of_present(per_class));
  }
  return 0;
}

// attn-map -------------------------------------------------------------------

struct AttnArgs {
  ScanArgs scan;
  std::string ckpt, cls, out;
};

int run_attn(const AttnArgs& a, Context& ctx) {
  const NetworkState state = load_checkpoint(a.ckpt);
  if (state.config.clothing_encoder != ClothingEncoderMode::Attention)
    throw ValidationError("checkpoint has no attention encoder");
  const ClassId cls = LabelTaxonomy::standard().resolve(a.cls);
  const ScanSample scan = a.scan.load();
  const Example ex = make_example(scan, state.config, ctx.body_model());
  const std::vector<double> w = export_attention_map(ex.input, state, cls);
  if (std::filesystem::path(a.out).extension() == ".json") {
    write_json_file(a.out, {{"id", scan.id}, {"class", std::string(LabelTaxonomy::standard().name(cls))}, {"weights", w}});
  } else {
    const std::size_t n = scan.size();
    std::vector<double> x(n), y(n), z(n), r(n), g(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = scan.points(i, 0), y[i] = scan.points(i, 1), z[i] = scan.points(i, 2);
      r[i] = std::round(255.0 * w[i]), g[i] = std::round(64.0 * (1.0 - w[i])), b[i] = std::round(255.0 * (1.0 - w[i]));
    }
    ply::write(a.out, n,
               {{"x", "float", &x}, {"y", "float", &y}, {"z", "float", &z}, {"red", "uchar", &r},
                {"green", "uchar", &g}, {"blue", "uchar", &b}, {"attention", "float", &w}});
  }
  std::printf("attention map for %s written to %s\n", a.cls.c_str(), a.out.c_str());
  return 0;
}

// serve ----------------------------------------------------------------------

struct ServeArgs {
  std::string ckpt, scan_dir, ckpt_dir, host = "127.0.0.1", suite;
  std::optional<int> port;
};

HttpServer* g_server = nullptr;

int run_serve(const ServeArgs& a, Context& ctx) {
  ServiceConfig sc;
  sc.checkpoint = a.ckpt;
  sc.scan_dir = "scans";
  sc.checkpoint_dir = "checkpoints";
  sc.apply_environment();
  if (!a.scan_dir.empty()) sc.scan_dir = a.scan_dir;
  if (!a.ckpt_dir.empty()) sc.checkpoint_dir = a.ckpt_dir;
  if (a.port) sc.port = *a.port;
  sc.host = a.host;
  if (!a.suite.empty()) sc.suite_manifest = a.suite;
  Service service(sc, ctx.body_model());
  HttpServer server(service);
  const int port = server.bind(sc.host, sc.port);
  std::printf("serving on http://%s:%d (scans in %s, checkpoints in %s)\n", sc.host.c_str(), port,
              sc.scan_dir.string().c_str(), sc.checkpoint_dir.string().c_str());
  std::fflush(stdout);
  g_server = &server;
  std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
  std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
  server.listen();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CloSe-Net garment segmentation toolkit", "close"};
  app.require_subcommand(1);
  Context ctx;
  app.add_option("--body-model", ctx.body_model_path, "Body model container (JSON); default: bundled toy humanoid")
      ->check(CLI::ExistingFile);
  std::function<int()> action;

  auto with_config = [](CLI::App* sub) {
    sub->set_config("--config", "", "TOML/INI file with option values; flags override it");
  };

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic train/val/test suite");
  with_config(s);
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.seed, "Master seed");
  s->add_option("--train", synth.n_train, "Training scans");
  s->add_option("--val", synth.n_val, "Validation scans");
  s->add_option("--test", synth.n_test, "Test scans");
  s->add_option("--points", synth.points, "Points per scan");
  s->add_option("--coverage", synth.coverage, "Classes every training split must contain");
  s->add_option("--templates", synth.templates, "Recipe templates to draw from")->delimiter(',');
  s->add_flag("--no-probes", synth.no_probes, "Skip the layered and two-tone test probes");
  s->callback([&] { action = [&] { return run_synth(synth); }; });

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a network on a suite manifest");
  with_config(t);
  t->add_option("--suite", tr.suite, "Suite manifest.json")->required()->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "Checkpoint to write")->required();
  t->add_option("--epochs", tr.epochs);
  t->add_option("--batch-size", tr.batch);
  t->add_option("--lr", tr.lr, "Base learning rate (cosine decay)");
  t->add_option("--seed", tr.seed);
  t->add_option("--sample-points", tr.sample_points, "Random subsample size per scan and step");
  t->add_flag("--class-weighting", tr.class_weighting, "Inverse-frequency class weights in the loss");
  t->add_option("--body-encoder", tr.body_encoder, "canonical|none")->check(CLI::IsMember({"canonical", "none", "hybrid"}));
  t->add_option("--clothing-encoder", tr.clothing_encoder, "attention|binary|none")
      ->check(CLI::IsMember({"attention", "binary", "none"}));
  t->add_option("--k", tr.k, "Neighbours per point");
  t->add_option("--feature-width", tr.feature_width);
  t->add_option("--global-width", tr.global_width);
  t->add_option("--heads", tr.heads);
  t->add_option("--pe-bands", tr.pe_bands);
  t->add_option("--decoder-hidden", tr.decoder_hidden)->delimiter(',');
  t->add_flag("--static-graph", tr.static_graph, "Reuse the xyz graph in every layer");
  t->add_option("--history", tr.history, "Per-epoch history CSV");
  t->add_option("--report", tr.report, "Training report JSON");
  t->add_option("--cache-dir", tr.cache_dir, "Body feature cache directory");
  t->add_flag("-v,--verbose", tr.verbose);
  t->callback([&] { action = [&] { return run_train(tr, ctx); }; });

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Per-class and mean IoU");
  with_config(e);
  e->add_option("--ckpt", ev.ckpt, "Checkpoint")->check(CLI::ExistingFile);
  e->add_option("--suite", ev.suite, "Suite manifest.json")->check(CLI::ExistingFile);
  e->add_option("--split", ev.split, "train|val|test");
  e->add_option("--pred", ev.pred, "Predicted label files")->check(CLI::ExistingFile);
  e->add_option("--gt", ev.gt, "Ground-truth label files")->check(CLI::ExistingFile);
  e->add_flag("--restrict", ev.restrict, "Restrict predictions to declared garments");
  e->add_option("--report", ev.report, "Report JSON");
  e->add_option("--cache-dir", ev.cache_dir, "Body feature cache directory");
  e->callback([&] { action = [&] { return run_eval(ev, ctx); }; });

  SegmentArgs sg;
  auto* g = app.add_subcommand("segment", "Label every point of a scan");
  with_config(g);
  sg.scan.add(g);
  g->add_option("--ckpt", sg.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  g->add_option("--out", sg.out, "Label file to write")->required();
  g->add_flag("--no-restrict", sg.no_restrict, "Allow classes outside the garment vector");
  g->add_option("--chunk", sg.chunk, "Points per inference chunk");
  g->callback([&] { action = [&] { return run_segment(sg, ctx); }; });

  RefineArgs rf;
  auto* r = app.add_subcommand("refine", "Fine-tune a checkpoint on corrected labels of one scan");
  with_config(r);
  rf.scan.add(r);
  r->add_option("--ckpt", rf.ckpt, "Current checkpoint")->required()->check(CLI::ExistingFile);
  r->add_option("--reference", rf.reference, "Anchor checkpoint (default: --ckpt)")->check(CLI::ExistingFile);
  r->add_option("--labels", rf.labels, "Full corrected label file")->required()->check(CLI::ExistingFile);
  r->add_option("--corrected", rf.corrected, "JSON list of corrected indices (default: points the model gets wrong)")
      ->check(CLI::ExistingFile);
  r->add_option("--preset", rf.preset, "naive|weighted_ce|full")->check(CLI::IsMember({"naive", "weighted_ce", "full"}));
  r->add_option("--lambda-c", rf.lambda_c, "Weight of the corrected-point loss");
  r->add_option("--lambda-f", rf.lambda_f, "Weight of the stable-point loss");
  r->add_option("--lambda-w", rf.lambda_w, "Weight of the anchor term");
  r->add_flag("--allow-any-order", rf.allow_any_order, "Do not require lambda-c < lambda-f");
  r->add_option("--layers", rf.layers, "Trainable layers")->delimiter(',');
  r->add_option("--epochs", rf.epochs);
  r->add_option("--steps", rf.steps, "Gradient steps per epoch");
  r->add_option("--lr", rf.lr);
  r->add_option("--suite", rf.suite, "Suite manifest; its test split is the regression suite")->check(CLI::ExistingFile);
  r->add_option("--budget", rf.budget, "Allowed suite mIoU drop (fraction)");
  r->add_flag("--fail-on-regression", rf.fail_on_regression, "Exit 2 when the suite drops beyond the budget");
  r->add_option("--out", rf.out, "Refined checkpoint")->required();
  r->add_option("--report", rf.report, "Refinement report JSON");
  r->callback([&] { action = [&] { return run_refine(rf, ctx); }; });

  CleanArgs cl;
  auto* c = app.add_subcommand("clean", "Apply body-part and garment plausibility filters");
  with_config(c);
  cl.scan.add(c);
  c->add_option("--labels", cl.labels, "Label file to clean")->required()->check(CLI::ExistingFile);
  c->add_option("--rules", cl.rules, "Region rules JSON (default: built-in rules)")->check(CLI::ExistingFile);
  c->add_option("--k", cl.k, "Neighbours in the vote graph");
  c->add_flag("--no-body-filter", cl.no_body_filter);
  c->add_flag("--no-garment-filter", cl.no_garment_filter);
  c->add_option("--out", cl.out, "Cleaned label file")->required();
  c->callback([&] { action = [&] { return run_clean(cl, ctx); }; });

  Merge3Args m3;
  auto* m = app.add_subcommand("merge3", "Collapse labels to upper/lower/body and score them");
  with_config(m);
  m->add_option("--pred", m3.pred, "Label files")->required()->check(CLI::ExistingFile);
  m->add_option("--gt", m3.gt, "Ground-truth label files")->check(CLI::ExistingFile);
  m->add_option("--map", m3.map, "Merge map JSON {upper:[...], lower:[...], body:[...]}")->check(CLI::ExistingFile);
  m->add_option("--out", m3.out, "Coarse labels JSON");
  m->callback([&] { action = [&] { return run_merge3(m3); }; });

  AttnArgs at;
  auto* a = app.add_subcommand("attn-map", "Export per-point attention to one class");
  with_config(a);
  at.scan.add(a);
  a->add_option("--ckpt", at.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  a->add_option("--class", at.cls, "Class name")->required();
  a->add_option("--out", at.out, "Output .ply (colored) or .json")->required();
  a->callback([&] { action = [&] { return run_attn(at, ctx); }; });

  ServeArgs sv;
  auto* v = app.add_subcommand("serve", "Run the HTTP annotation service");
  with_config(v);
  v->add_option("--ckpt", sv.ckpt, "Reference checkpoint")->required()->check(CLI::ExistingFile);
  v->add_option("--scan-dir", sv.scan_dir, "Scan store (default $CLOSE_SCAN_DIR or ./scans)");
  v->add_option("--ckpt-dir", sv.ckpt_dir, "Refined checkpoints (default $CLOSE_CKPT_DIR or ./checkpoints)");
  v->add_option("--host", sv.host);
  v->add_option("--port", sv.port, "Port (default $CLOSE_PORT or 8080)");
  v->add_option("--suite", sv.suite, "Suite manifest for regression numbers")->check(CLI::ExistingFile);
  v->callback([&] { action = [&] { return run_serve(sv, ctx); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return kExitValidation;
  }

  try {
    return action ? action() : kExitValidation;
  } catch (const ValidationError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitValidation;
  } catch (const ParseError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& err) {
    std::cerr << "failed: " << err.what() << '\n';
    return kExitRuntime;
  }
}
