#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mvm/dataio.hpp"
#include "mvm/model.hpp"

namespace mvm {

struct PropagationConfig {
  int k = 7;
  double temperature = 0.07;
  int context_frames = 3;
  int feature_stage = 0;  // 1-based encoder stage; 0 = final stage

  void validate(int num_stages) const;
  int resolved_stage(int num_stages) const { return feature_stage == 0 ? num_stages : feature_stage; }
};

/// Dense-path features of one [3,H,W] frame at `stage` (1-based, 0 = final), every site
/// vector scaled to unit L2 norm. Returns [C,h,w]. No graph is recorded.
Tensor extract_features(const MaskedConvAutoencoder& model, const ParamSet& params,
                        const Tensor& frame, int stage);

/// Per-site label distributions at feature resolution: [h*w][num_labels].
using SoftLabels = std::vector<std::vector<double>>;

/// Block-average of one-hot labels onto an h x w grid. Label dims must be
/// multiples of h and w.
SoftLabels downsample_labels(const LabelMap& labels, int h, int w, int num_labels);

/// Argmax per site (lowest id on ties), nearest-neighbor upsampled to H x W.
LabelMap hard_labels(const SoftLabels& soft, int h, int w, int height, int width);

/// Propagates frame-0 labels through `features` ([C,h,w] per frame, L2-normalized
/// per site before matching). Frame t
/// attends to frame 0 plus the previous `context_frames` frames; each target
/// site takes the softmax(sim / temperature)-weighted mean of the soft labels
/// of its top-k most similar context sites. Returns one map per frame at
/// label resolution; entry 0 is the input.
std::vector<LabelMap> propagate_labels(const std::vector<Tensor>& features, const LabelMap& first,
                                       const PropagationConfig& config);

struct IouScore {
  std::map<int, double> per_label;  // nonzero labels present in truth
  double mean = 0.0;
};

/// Intersection-over-union per nonzero truth label, pooled over all given
/// frames. Throws when truth has no nonzero label.
IouScore score_iou(const std::vector<LabelMap>& pred, const std::vector<LabelMap>& truth);
IouScore score_iou(const LabelMap& pred, const LabelMap& truth);

struct SequenceResult {
  std::string name;
  IouScore iou;
};

/// Propagates frame-0 labels of `seq` and scores frames 1..T-1.
SequenceResult evaluate_sequence(const MaskedConvAutoencoder& model, const ParamSet& params,
                                 const Sequence& seq, const PropagationConfig& config);

struct EvalSummary {
  std::vector<SequenceResult> sequences;
  double mean_iou = 0.0;  // mean over sequences
};

EvalSummary evaluate_dataset(const MaskedConvAutoencoder& model, const ParamSet& params,
                             const std::vector<Sequence>& data, const PropagationConfig& config);

/// One JSON object per sequence {name, per_label_iou, mean_iou}, then a
/// summary object {summary: true, sequences, mean_iou}.
std::string format_eval_jsonl(const EvalSummary& summary);

}  // namespace mvm
