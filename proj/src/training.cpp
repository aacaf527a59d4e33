// SPDX-License-Identifier: Apache-2.0
#include "close/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

#include "close/error.hpp"
#include "close/optimizer.hpp"

namespace closenet {

using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t bound) {
  return static_cast<std::size_t>((static_cast<unsigned __int128>(rng()) * bound) >> 64);
}

void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

double uniform_real(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Rotates positions (columns 0-2) and normals (6-8) about the y axis.
void rotate_yaw(Matrix& points, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    for (std::size_t base : {std::size_t{0}, std::size_t{6}}) {
      const double x = points(i, base), z = points(i, base + 2);
      points(i, base) = c * x + s * z;
      points(i, base + 2) = -s * x + c * z;
    }
  }
}

}  // namespace

Example make_example(const ScanSample& scan, const NetworkConfig& config, const BodyModel& body_model,
                     BodyFeatureCache* cache) {
  auto [normalized, record] = normalize(scan);
  (void)record;
  Example ex;
  ex.id = scan.id;
  std::shared_ptr<const BodyFeatureField> body;
  if (config.body_encoder != BodyEncoderMode::None) {
    if (!normalized.body)
      throw ValidationError("scan '" + scan.id + "' has no body parameters; fit the body model (registration step) first");
    if (config.body_encoder == BodyEncoderMode::Hybrid) {
      body = std::make_shared<BodyFeatureField>(encode_body_hybrid(normalized, body_model));
    } else if (cache) {
      body = cache->get(normalized, body_model);
    } else {
      body = std::make_shared<BodyFeatureField>(encode_body(normalized, body_model));
    }
  }
  ex.input = make_input(normalized, body.get());
  if (scan.labels) ex.labels = *scan.labels;
  return ex;
}

std::vector<Example> make_examples(const std::vector<ScanSample>& scans, const NetworkConfig& config,
                                   const BodyModel& body_model, BodyFeatureCache* cache) {
  std::vector<Example> out;
  out.reserve(scans.size());
  for (const auto& s : scans) out.push_back(make_example(s, config, body_model, cache));
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be at least 1");
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (sample_points < 2) throw ValidationError("sample_points must be at least 2");
  if (!(augment_yaw >= 0.0) || !std::isfinite(augment_yaw)) throw ValidationError("augment_yaw must be finite and non-negative");
  network.validate();
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,loss,val_miou,learning_rate,seconds\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << r.loss << ',' << r.val_miou << ',' << r.learning_rate << ',' << r.seconds << '\n';
  }
}

TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                  const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw ValidationError("training set is empty");
  for (const auto& ex : train_set) {
    if (ex.labels.size() != ex.input.size())
      throw ValidationError("training scan '" + ex.id + "' has no labels");
  }
  std::vector<double> class_weights;
  if (config.class_weighting) {
    std::vector<double> counts(kNumClasses, 0.0);
    double total = 0.0;
    for (const auto& ex : train_set) {
      for (ClassId y : ex.labels) counts[y] += 1.0, total += 1.0;
    }
    class_weights.resize(kNumClasses);
    for (int c = 0; c < kNumClasses; ++c) {
      class_weights[c] = counts[c] > 0.0 ? total / (kNumClasses * counts[c]) : 0.0;
    }
  }

  std::mt19937_64 rng(config.seed);
  TrainResult result;
  result.state = NetworkState::initialize(config.network, rng());
  NetworkState state = result.state;
  Adam adam(state.params);
  result.best_val_miou = -1.0;

  const std::size_t batches_per_epoch = (train_set.size() + config.batch_size - 1) / config.batch_size;
  const long total_steps = static_cast<long>(batches_per_epoch) * config.epochs;
  long step = 0;
  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    double epoch_loss = 0.0;
    double lr = config.learning_rate;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      ParamSet grads = zeros_like(state.params);
      double batch_loss = 0.0;
      std::string ids;
      for (std::size_t e = begin; e < end; ++e) {
        const Example& ex = train_set[order[e]];
        ids += (ids.empty() ? "" : ",") + ex.id;
        const NetworkInput* input = &ex.input;
        std::vector<ClassId> labels;
        const std::vector<ClassId>* target = &ex.labels;
        NetworkInput sampled;
        if (ex.input.size() > config.sample_points) {
          std::vector<std::size_t> rows(ex.input.size());
          std::iota(rows.begin(), rows.end(), 0);
          for (std::size_t i = 0; i < config.sample_points; ++i) {
            std::swap(rows[i], rows[i + uniform_index(rng, rows.size() - i)]);
          }
          rows.resize(config.sample_points);
          std::sort(rows.begin(), rows.end());
          sampled = subset(ex.input, rows);
          for (auto r : rows) labels.push_back(ex.labels[r]);
          input = &sampled;
          target = &labels;
        }
        if (config.augment_yaw > 0.0) {
          if (input != &sampled) sampled = *input;
          rotate_yaw(sampled.points, uniform_real(rng, -config.augment_yaw, config.augment_yaw));
          input = &sampled;
        }
        ForwardCache cache;
        const Matrix logits = forward(*input, state, {}, &cache);
        LossResult loss = ce_loss(logits, *target, class_weights);
        if (!std::isfinite(loss.value))
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                             " (scans " + ids + ")");
        const double scale = 1.0 / static_cast<double>(end - begin);
        for (double& v : loss.dlogits.values()) v *= scale;
        const ParamSet g = backward(*input, state, cache, loss.dlogits);
        for (auto& [name, m] : grads) add_inplace(m, g.at(name));
        batch_loss += loss.value * scale;
      }
      for (const auto& [name, m] : grads) {
        for (double v : m.values()) {
          if (!std::isfinite(v))
            throw NumericError("non-finite gradient in " + name + " at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(b) + " (scans " + ids + ")");
        }
      }
      lr = cosine_lr(config.learning_rate, step++, total_steps);
      adam.step(state.params, grads, lr);
      epoch_loss += batch_loss;
    }
    EpochRecord record;
    record.epoch = epoch;
    record.loss = epoch_loss / static_cast<double>(batches_per_epoch);
    record.learning_rate = lr;
    record.val_miou = val_set.empty() ? 0.0 : evaluate(val_set, state).mean_iou;
    record.seconds = seconds_since(start);
    result.history.push_back(record);
    if (config.verbose) {
      std::cerr << "epoch " << epoch << " loss " << record.loss << " val mIoU " << record.val_miou << " ("
                << record.seconds << " s)\n";
    }
    // Without a validation split the last epoch is kept.
    if (val_set.empty() || record.val_miou > result.best_val_miou) {
      result.best_val_miou = record.val_miou;
      result.best_epoch = epoch;
      result.state = state;
    }
  }
  if (config.history_csv) write_history_csv(result.history, *config.history_csv);
  if (config.report_json) {
    json report{{"best_epoch", result.best_epoch},
                {"best_val_miou", result.best_val_miou},
                {"epochs", config.epochs},
                {"state_hash", result.state.hash()},
                {"config", to_json(config.network)}};
    std::ofstream out(*config.report_json);
    if (!out) throw Error("cannot write " + config.report_json->string());
    out << report.dump(2) << '\n';
  }
  return result;
}

json EvalReport::to_json() const {
  json classes = json::object();
  const auto& tax = LabelTaxonomy::standard();
  for (int c = 0; c < kNumClasses; ++c) {
    const auto name = std::string(tax.name(static_cast<ClassId>(c)));
    classes[name] = per_class[c] ? json(*per_class[c]) : json(nullptr);
  }
  json scans = json::array();
  for (const auto& s : per_scan) scans.push_back({{"id", s.id}, {"mean_iou", s.iou.mean}});
  return {{"mean_iou", mean_iou},
          {"mean_iou_per_scan", mean_iou_per_scan},
          {"per_class_iou", classes},
          {"per_scan", scans},
          {"seconds", seconds}};
}

EvalReport evaluate_predictions(const std::vector<std::vector<ClassId>>& predictions,
                                const std::vector<std::vector<ClassId>>& labels,
                                const std::vector<std::string>& ids) {
  if (predictions.size() != labels.size()) throw ShapeMismatchError("prediction and label set sizes differ");
  if (predictions.empty()) throw ValidationError("nothing to evaluate");
  EvalReport report;
  ConfusionMatrix pooled(kNumClasses);
  double scan_sum = 0.0;
  for (std::size_t s = 0; s < predictions.size(); ++s) {
    ScanScore score;
    score.id = s < ids.size() ? ids[s] : std::to_string(s);
    score.iou = iou(predictions[s], labels[s], kNumClasses);
    pooled.add(predictions[s], labels[s]);
    scan_sum += score.iou.mean;
    report.per_scan.push_back(std::move(score));
  }
  report.per_class = pooled.per_class_iou();
  report.mean_iou = mean_of_present(report.per_class);
  report.mean_iou_per_scan = scan_sum / static_cast<double>(predictions.size());
  return report;
}

EvalReport evaluate(const std::vector<Example>& examples, const NetworkState& state, const ForwardOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::vector<ClassId>> preds, labels;
  std::vector<std::string> ids;
  for (const auto& ex : examples) {
    if (ex.labels.size() != ex.input.size()) throw ValidationError("scan '" + ex.id + "' has no labels");
    preds.push_back(segment_logits(forward(ex.input, state, options)).labels);
    labels.push_back(ex.labels);
    ids.push_back(ex.id);
  }
  EvalReport report = evaluate_predictions(preds, labels, ids);
  report.seconds = seconds_since(start);
  return report;
}

Segmentation segment_logits(const Matrix& logits) {
  const Matrix p = softmax_rows(logits);
  Segmentation out;
  out.labels.resize(p.rows());
  out.confidence.resize(p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const auto row = p.row(i);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    out.labels[i] = static_cast<ClassId>(best);
    out.confidence[i] = row[static_cast<std::size_t>(best)];
  }
  return out;
}

Segmentation segment(const NetworkInput& input, const NetworkState& state, const SegmentOptions& options) {
  ForwardOptions fo;
  fo.restrict_to_garments = options.restrict_to_garments;
  fo.chunk_size = options.chunk_size;
  return segment_logits(forward(input, state, fo));
}

}  // namespace closenet
