// SPDX-License-Identifier: Apache-2.0
#include "close/refinement.hpp"

#include <cmath>

#include "close/error.hpp"
#include "close/metrics.hpp"
#include "close/optimizer.hpp"

namespace closenet {

using nlohmann::json;

RefineLambdas lambda_preset(std::string_view name) {
  if (name == "naive") return {1.0, 0.0, 0.0};
  if (name == "weighted_ce" || name == "weighted-ce") return {0.1, 1.0, 0.0};
  if (name == "full") return {0.1, 1.0, 1.0};
  throw ValidationError("unknown lambda preset '" + std::string(name) + "' (naive|weighted_ce|full)");
}

std::vector<std::string> RefineConfig::validate() const {
  const auto& l = lambdas;
  for (double v : {l.corrected, l.stable, l.anchor}) {
    if (!std::isfinite(v) || v < 0.0) throw ValidationError("refinement weights must be finite and non-negative");
  }
  if (epochs < 1 || steps_per_epoch < 1) throw ValidationError("refinement needs at least one epoch and step");
  if (!(learning_rate > 0.0)) throw ValidationError("refinement learning rate must be positive");
  std::vector<std::string> warnings;
  if (enforce_lambda_order && !(l.corrected < l.stable))
    throw ValidationError("lambda_c must be smaller than lambda_f (disable the order check to override)");
  if (l.corrected >= l.stable / 2.0)
    warnings.push_back("lambda_c is not much smaller than lambda_f");
  return warnings;
}

CorrectionSplit CorrectionSplit::from(std::span<const std::uint32_t> corrected, std::size_t num_points) {
  if (corrected.empty()) throw ValidationError("nothing corrected");
  std::vector<char> mark(num_points, 0);
  for (auto i : corrected) {
    if (i >= num_points) throw ValidationError("corrected index " + std::to_string(i) + " out of range");
    mark[i] = 1;
  }
  CorrectionSplit split;
  for (std::uint32_t i = 0; i < num_points; ++i) (mark[i] ? split.corrected : split.stable).push_back(i);
  return split;
}

namespace {

// Mean CE of the rows in `rows` against `targets[row]`; adds scale·dCE to dlogits.
double subset_ce(const Matrix& logits, const Matrix& probs, std::span<const ClassId> targets,
                 std::span<const std::uint32_t> rows, double scale, Matrix& dlogits) {
  if (rows.empty()) return 0.0;
  double total = 0.0;
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (auto i : rows) {
    const auto row = logits.row(i);
    const ClassId y = targets[i];
    if (y >= row.size()) throw ValidationError("refinement label out of range");
    double m = -std::numeric_limits<double>::infinity();
    for (double v : row) m = std::max(m, v);
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - m);
    total += m + std::log(sum) - row[y];
    if (scale != 0.0) {
      auto d = dlogits.row(i);
      const auto p = probs.row(i);
      for (std::size_t c = 0; c < d.size(); ++c) d[c] += scale * inv * (p[c] - (c == y ? 1.0 : 0.0));
    }
  }
  return total * inv;
}

std::set<std::string> resolve_layers(const NetworkState& state, const std::set<std::string>& requested) {
  std::set<std::string> layers = requested;
  if (layers.empty()) layers = {state.last_decoder_layer(), "global_mlp"};
  const auto known = state.layers();
  for (const auto& name : layers) {
    if (!known.contains(name)) throw ValidationError("unknown layer '" + name + "' in trainable mask");
  }
  return layers;
}

std::vector<ClassId> argmax_labels(const Matrix& logits) { return segment_logits(logits).labels; }

double target_iou(const Matrix& logits, std::span<const ClassId> truth) {
  const auto pred = argmax_labels(logits);
  return iou(pred, truth, kNumClasses).mean;
}

}  // namespace

RefineLossValue refine_loss(const Matrix& logits, std::span<const ClassId> user_labels,
                            std::span<const ClassId> reference_labels, const CorrectionSplit& split,
                            const RefineLambdas& lambdas) {
  const std::size_t n = logits.rows();
  if (user_labels.size() != n || reference_labels.size() != n)
    throw ShapeMismatchError("refine_loss: label vectors must cover every point");
  if (split.corrected.empty()) throw ValidationError("nothing corrected");
  if (split.corrected.size() + split.stable.size() != n)
    throw ShapeMismatchError("refine_loss: corrected and stable sets must partition the scan");
  RefineLossValue out;
  out.dlogits.resize(n, logits.cols());
  const Matrix probs = softmax_rows(logits);
  out.corrected_ce = subset_ce(logits, probs, user_labels, split.corrected, lambdas.corrected, out.dlogits);
  out.stable_ce = subset_ce(logits, probs, reference_labels, split.stable, lambdas.stable, out.dlogits);
  out.total = lambdas.corrected * out.corrected_ce + lambdas.stable * out.stable_ce;
  return out;
}

double anchor_penalty(const NetworkState& working, const NetworkState& reference, const std::set<std::string>& layers,
                      double weight, ParamSet* grads) {
  double total = 0.0;
  for (const auto& [name, p] : working.params) {
    if (!layers.contains(layer_of(name))) continue;
    const auto w = p.values();
    const auto r = reference.param(name).values();
    std::span<double> g;
    if (grads) g = grads->at(name).values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double d = w[i] - r[i];
      total += d * d;
      if (grads) g[i] += 2.0 * weight * d;
    }
  }
  return weight * total;
}

json RefineReport::to_json() const {
  json j{{"target_iou_before", target_iou_before},
         {"target_iou_after", target_iou_after},
         {"suite_miou_before", suite_miou_before ? json(*suite_miou_before) : json(nullptr)},
         {"suite_miou_after", suite_miou_after ? json(*suite_miou_after) : json(nullptr)},
         {"epochs", epochs},
         {"lambdas", {{"corrected", lambdas.corrected}, {"stable", lambdas.stable}, {"anchor", lambdas.anchor}}},
         {"trainable_layers", trainable_layers},
         {"no_op", no_op},
         {"weight_delta", weight_delta},
         {"warnings", warnings}};
  return j;
}

RefineResult refine(const NetworkState& current, const NetworkState& reference, const NetworkInput& scan,
                    std::span<const ClassId> user_labels, std::span<const std::uint32_t> corrected,
                    const RefineConfig& config, std::span<const ClassId> eval_labels,
                    const std::vector<Example>* suite) {
  RefineReport report;
  report.warnings = config.validate();
  if (!(current.config == reference.config))
    throw ValidationError("reference and working models have different configurations");
  const std::size_t n = scan.size();
  if (user_labels.size() != n) throw ShapeMismatchError("user labels must cover every point of the scan");
  if (!eval_labels.empty() && eval_labels.size() != n) throw ShapeMismatchError("evaluation labels must cover every point");
  const CorrectionSplit split = CorrectionSplit::from(corrected, n);
  const auto layers = resolve_layers(current, config.layers);
  const auto truth = eval_labels.empty() ? user_labels : eval_labels;

  report.lambdas = config.lambdas;
  report.trainable_layers.assign(layers.begin(), layers.end());
  const Matrix logits_before = forward(scan, current, config.forward);
  report.target_iou_before = target_iou(logits_before, truth);
  if (suite && !suite->empty()) report.suite_miou_before = evaluate(*suite, current, config.forward).mean_iou;

  RefineResult result{current, report};
  const auto predicted = argmax_labels(logits_before);
  bool differs = false;
  for (auto i : split.corrected) differs = differs || predicted[i] != user_labels[i];
  if (!differs) {
    result.report.no_op = true;
    result.report.target_iou_after = result.report.target_iou_before;
    result.report.suite_miou_after = result.report.suite_miou_before;
    return result;
  }

  const auto reference_labels = argmax_labels(forward(scan, reference, config.forward));
  NetworkState& working = result.state;
  Adam adam(working.params);
  const double lr = config.learning_rate, lw = config.lambdas.anchor;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (int step = 0; step < config.steps_per_epoch; ++step) {
      ForwardCache cache;
      const Matrix logits = forward(scan, working, config.forward, &cache);
      const RefineLossValue loss = refine_loss(logits, user_labels, reference_labels, split, config.lambdas);
      if (!std::isfinite(loss.total)) throw NumericError("refinement loss is not finite");
      ParamSet grads = backward(scan, working, cache, loss.dlogits);
      anchor_penalty(working, reference, layers, lw, &grads);
      adam.step(working.params, grads, lr, &layers);
    }
  }
  result.report.epochs = config.epochs;
  double delta = 0.0;
  for (const auto& [name, p] : working.params) {
    const auto w = p.values();
    const auto s = current.param(name).values();
    for (std::size_t i = 0; i < w.size(); ++i) delta += (w[i] - s[i]) * (w[i] - s[i]);
  }
  result.report.weight_delta = std::sqrt(delta);
  result.report.target_iou_after = target_iou(forward(scan, working, config.forward), truth);
  if (suite && !suite->empty()) result.report.suite_miou_after = evaluate(*suite, working, config.forward).mean_iou;
  return result;
}

FrozenSuite FrozenSuite::build(std::vector<Example> examples, const NetworkState& state) {
  if (examples.empty()) throw ValidationError("regression suite is empty");
  FrozenSuite suite;
  suite.baseline_miou = evaluate(examples, state).mean_iou;
  suite.examples = std::move(examples);
  return suite;
}

GuardResult regression_guard(const NetworkState& state, const FrozenSuite& suite, double budget) {
  if (suite.examples.empty()) throw ValidationError("regression suite is empty");
  GuardResult g;
  g.before = suite.baseline_miou;
  g.after = evaluate(suite.examples, state).mean_iou;
  g.delta = g.after - g.before;
  g.pass = -g.delta <= budget;
  return g;
}

}  // namespace closenet
