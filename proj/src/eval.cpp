#include "mvm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

#include "mvm/trainer.hpp"

namespace mvm {

void PropagationConfig::validate(int num_stages) const {
  if (k < 1) throw ConfigError("propagation k must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("propagation temperature must be > 0");
  if (context_frames < 0) throw ConfigError("propagation context_frames must be >= 0");
  if (feature_stage < 0 || feature_stage > num_stages) {
    throw ConfigError("feature_stage must lie in [0, " + std::to_string(num_stages) + "] (0 = final)");
  }
}

namespace {

Tensor normalize_sites(const Tensor& features) {
  const int64_t c = features.size(0), sites = features.size(1) * features.size(2);
  std::vector<double> v = features.values();
  for (int64_t s = 0; s < sites; ++s) {
    double sq = 0.0;
    for (int64_t ch = 0; ch < c; ++ch) sq += v[static_cast<size_t>(ch * sites + s)] * v[static_cast<size_t>(ch * sites + s)];
    const double inv = sq > 0.0 ? 1.0 / std::sqrt(sq) : 0.0;
    for (int64_t ch = 0; ch < c; ++ch) v[static_cast<size_t>(ch * sites + s)] *= inv;
  }
  return Tensor::from(features.shape(), std::move(v));
}

std::vector<Tensor> sequence_features(const MaskedConvAutoencoder& model, const ParamSet& params,
                                      const std::vector<Tensor>& frames, int stage) {
  NoGradGuard no_grad;
  const auto stages = model.encode_dense(stack_frames(frames), params);
  const Tensor& f = stages.at(static_cast<size_t>(stage - 1));
  const int64_t n = f.size(0), c = f.size(1), h = f.size(2), w = f.size(3);
  const auto per = static_cast<size_t>(c * h * w);
  std::vector<Tensor> out;
  for (int64_t i = 0; i < n; ++i) {
    std::vector<double> one(f.values().begin() + static_cast<std::ptrdiff_t>(i * per),
                            f.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    out.push_back(normalize_sites(Tensor::from({c, h, w}, std::move(one))));
  }
  return out;
}

}  // namespace

Tensor extract_features(const MaskedConvAutoencoder& model, const ParamSet& params,
                        const Tensor& frame, int stage) {
  const int stages = model.config().encoder.num_stages();
  if (stage < 0 || stage > stages) {
    throw ConfigError("feature stage " + std::to_string(stage) + " out of range");
  }
  return sequence_features(model, params, {frame}, stage == 0 ? stages : stage).front();
}

SoftLabels downsample_labels(const LabelMap& labels, int h, int w, int num_labels) {
  if (h < 1 || w < 1 || labels.height % h != 0 || labels.width % w != 0) {
    throw DimensionError("downsample_labels: " + std::to_string(labels.height) + "x" +
                         std::to_string(labels.width) + " labels do not tile a " +
                         std::to_string(h) + "x" + std::to_string(w) + " grid");
  }
  const int by = labels.height / h, bx = labels.width / w;
  const double inv = 1.0 / (by * bx);
  SoftLabels soft(static_cast<size_t>(h * w), std::vector<double>(static_cast<size_t>(num_labels), 0.0));
  for (int y = 0; y < labels.height; ++y) {
    for (int x = 0; x < labels.width; ++x) {
      const int id = labels.at(y, x);
      if (id >= num_labels) throw std::invalid_argument("downsample_labels: label id out of range");
      soft[static_cast<size_t>((y / by) * w + x / bx)][static_cast<size_t>(id)] += inv;
    }
  }
  return soft;
}

LabelMap hard_labels(const SoftLabels& soft, int h, int w, int height, int width) {
  if (static_cast<int>(soft.size()) != h * w || height % h != 0 || width % w != 0) {
    throw DimensionError("hard_labels: grid does not tile the output");
  }
  std::vector<uint8_t> site(soft.size());
  for (size_t s = 0; s < soft.size(); ++s) {
    // max_element returns the first maximum, i.e. the lowest id.
    site[s] = static_cast<uint8_t>(std::max_element(soft[s].begin(), soft[s].end()) - soft[s].begin());
  }
  LabelMap out{height, width, std::vector<uint8_t>(static_cast<size_t>(height * width))};
  const int by = height / h, bx = width / w;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out.ids[static_cast<size_t>(y * width + x)] = site[static_cast<size_t>((y / by) * w + x / bx)];
  return out;
}

std::vector<LabelMap> propagate_labels(const std::vector<Tensor>& features, const LabelMap& first,
                                       const PropagationConfig& config) {
  if (features.empty()) throw std::invalid_argument("propagate_labels: no frames");
  if (config.k < 1 || !(config.temperature > 0.0)) {
    throw ConfigError("propagate_labels: need k >= 1 and temperature > 0");
  }
  const Shape fshape = features.front().shape();
  for (const auto& f : features) {
    if (f.shape() != fshape || f.dim() != 3) {
      throw DimensionError("propagate_labels: feature maps differ in shape");
    }
  }
  const int64_t c = fshape[0];
  const int h = static_cast<int>(fshape[1]), w = static_cast<int>(fshape[2]);
  const size_t sites = static_cast<size_t>(h * w);
  const int num_labels = 1 + *std::max_element(first.ids.begin(), first.ids.end());

  std::vector<Tensor> unit;
  for (const auto& f : features) unit.push_back(normalize_sites(f));

  std::vector<SoftLabels> soft;
  soft.push_back(downsample_labels(first, h, w, num_labels));
  std::vector<LabelMap> out{first};

  std::vector<std::pair<double, size_t>> cand;
  for (size_t t = 1; t < features.size(); ++t) {
    std::vector<size_t> context{0};
    const size_t lo = t > static_cast<size_t>(config.context_frames) ? t - static_cast<size_t>(config.context_frames) : 1;
    for (size_t p = lo; p < t; ++p) context.push_back(p);

    const auto& q = unit[t].values();
    SoftLabels pred(sites, std::vector<double>(static_cast<size_t>(num_labels), 0.0));
    for (size_t i = 0; i < sites; ++i) {
      cand.clear();
      for (size_t ci = 0; ci < context.size(); ++ci) {
        const auto& r = unit[context[ci]].values();
        for (size_t j = 0; j < sites; ++j) {
          double sim = 0.0;
          for (int64_t ch = 0; ch < c; ++ch) sim += q[static_cast<size_t>(ch) * sites + i] * r[static_cast<size_t>(ch) * sites + j];
          cand.emplace_back(sim, ci * sites + j);
        }
      }
      const size_t k = std::min(cand.size(), static_cast<size_t>(config.k));
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(),
                        [](const auto& a, const auto& b) {
                          return a.first != b.first ? a.first > b.first : a.second < b.second;
                        });
      const double top = cand.front().first;
      double z = 0.0;
      for (size_t n = 0; n < k; ++n) z += std::exp((cand[n].first - top) / config.temperature);
      auto& dist = pred[i];
      for (size_t n = 0; n < k; ++n) {
        const double wgt = std::exp((cand[n].first - top) / config.temperature) / z;
        const auto& src = soft[context[cand[n].second / sites]][cand[n].second % sites];
        for (int l = 0; l < num_labels; ++l) dist[static_cast<size_t>(l)] += wgt * src[static_cast<size_t>(l)];
      }
    }
    out.push_back(hard_labels(pred, h, w, first.height, first.width));
    soft.push_back(std::move(pred));
  }
  return out;
}

IouScore score_iou(const std::vector<LabelMap>& pred, const std::vector<LabelMap>& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("score_iou: frame count mismatch");
  std::map<int, std::pair<int64_t, int64_t>> counts;  // label -> (intersection, union)
  for (size_t f = 0; f < truth.size(); ++f) {
    if (pred[f].height != truth[f].height || pred[f].width != truth[f].width) {
      throw DimensionError("score_iou: prediction and truth differ in size");
    }
    for (uint8_t id : truth[f].ids)
      if (id != 0) counts[id];
  }
  if (counts.empty()) throw std::invalid_argument("score_iou: truth has no nonzero labels");
  for (size_t f = 0; f < truth.size(); ++f) {
    for (size_t i = 0; i < truth[f].ids.size(); ++i) {
      const int a = pred[f].ids[i], b = truth[f].ids[i];
      for (auto& [label, c] : counts) {
        const bool in_a = a == label, in_b = b == label;
        c.first += in_a && in_b;
        c.second += in_a || in_b;
      }
    }
  }
  IouScore score;
  for (const auto& [label, c] : counts) {
    score.per_label[label] = static_cast<double>(c.first) / static_cast<double>(c.second);
    score.mean += score.per_label[label];
  }
  score.mean /= static_cast<double>(counts.size());
  return score;
}

IouScore score_iou(const LabelMap& pred, const LabelMap& truth) {
  return score_iou(std::vector<LabelMap>{pred}, std::vector<LabelMap>{truth});
}

SequenceResult evaluate_sequence(const MaskedConvAutoencoder& model, const ParamSet& params,
                                 const Sequence& seq, const PropagationConfig& config) {
  if (seq.frames.size() < 2) throw DataError("sequence " + seq.name + " has fewer than 2 frames");
  if (seq.labels.size() != seq.frames.size()) {
    throw DataError("sequence " + seq.name + " lacks a label map per frame");
  }
  config.validate(model.config().encoder.num_stages());
  const auto features = sequence_features(
      model, params, seq.frames, config.resolved_stage(model.config().encoder.num_stages()));
  const auto pred = propagate_labels(features, seq.labels.front(), config);
  const std::vector<LabelMap> p(pred.begin() + 1, pred.end());
  const std::vector<LabelMap> t(seq.labels.begin() + 1, seq.labels.end());
  return {seq.name, score_iou(p, t)};
}

EvalSummary evaluate_dataset(const MaskedConvAutoencoder& model, const ParamSet& params,
                             const std::vector<Sequence>& data, const PropagationConfig& config) {
  if (data.empty()) throw DataError("evaluation dataset is empty");
  EvalSummary summary;
  for (const auto& seq : data) summary.sequences.push_back(evaluate_sequence(model, params, seq, config));
  for (const auto& r : summary.sequences) summary.mean_iou += r.iou.mean;
  summary.mean_iou /= static_cast<double>(summary.sequences.size());
  return summary;
}

std::string format_eval_jsonl(const EvalSummary& summary) {
  std::string out;
  for (const auto& r : summary.sequences) {
    nlohmann::ordered_json j;
    j["name"] = r.name;
    nlohmann::ordered_json per = nlohmann::ordered_json::object();
    for (const auto& [label, v] : r.iou.per_label) per[std::to_string(label)] = v;
    j["per_label_iou"] = per;
    j["mean_iou"] = r.iou.mean;
    out += j.dump() + "\n";
  }
  nlohmann::ordered_json s;
  s["summary"] = true;
  s["sequences"] = summary.sequences.size();
  s["mean_iou"] = summary.mean_iou;
  out += s.dump() + "\n";
  return out;
}

}  // namespace mvm
