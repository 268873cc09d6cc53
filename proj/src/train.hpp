#pragma once

#include <string>
#include <vector>

#include "metrics.hpp"
#include "model.hpp"
#include "scenegen.hpp"

namespace spacap {

struct LossWeights {
  double delta = 10.0;
  double zeta = 0.1;
};

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t epochs = 50;
  std::size_t eval_interval = 2000;  // iterations
  double learning_rate = 1e-3;
  // Cosine-decayed to this floor across the run; equal to learning_rate
  // (i.e. constant) when negative.
  double final_learning_rate = -1.0;
  double weight_decay = 1e-5;
  std::uint64_t seed = 0;
  double noise_sigma = 0.05;
  bool augment = true;
  // When set, every scene keeps one fixed proposal draw (seeded by the scene
  // index) for the whole run instead of a fresh draw per iteration. Used for
  // pure-memorization overfit runs.
  bool fixed_proposals = false;
  // Global gradient-norm clip applied before each ADAM step; <= 0 disables.
  double grad_clip_norm = 0.0;
  // After this fraction of total iterations, batch norm runs in eval mode
  // (frozen running stats) so weights adapt to inference-time normalization.
  // Negative disables freezing.
  double bn_freeze_frac = -1.0;
  // Supervise every object's caption per scene per iteration (true) or one
  // uniformly chosen caption (false, ~3-4x cheaper per iteration).
  bool all_captions = true;
  // Relation supervision is enabled only within [t2t_start_frac,
  // t2t_stop_frac) of total iterations; defaults cover the whole run.
  double t2t_start_frac = 0.0;
  double t2t_stop_frac = 1.0;
  LossWeights loss_weights;
  double nms_iou = 0.5;
  double objectness_iou = 0.25;  // positive proposal threshold
};

// Eq.2-style sum over the three axes of 3-class cross-entropy over the
// supervised ordered pairs. supervise_mask is M*M bytes, diagonal excluded
// by the caller. Labels -1/0/+1 map to class 0/1/2.
Graph::Id relation_loss(Graph& g, Graph::Id relation_logits, const RelationMap& labels,
                        const std::vector<std::uint8_t>& supervise_mask);

std::vector<std::uint8_t> off_diagonal_mask(std::size_t m);

// Supervised pair set: ordered off-diagonal pairs of matched proposals, i.e.
// proposals overlapping their assigned ground-truth box above iou_thresh.
std::vector<std::uint8_t> matched_pair_mask(const ProposalBatch& batch, const Scene& scene,
                                            double iou_thresh);

// Mean next-word cross-entropy over non-pad positions. logits row t predicts
// words[t+1].
Graph::Id description_loss(Graph& g, Graph::Id logits, const std::vector<int>& words);

struct DetectionForward {
  Graph::Id features = -1;    // M x C
  Graph::Id obj_logits = -1;  // M x 2
  Graph::Id cls_logits = -1;  // M x K
  Graph::Id pred_params = -1; // M x 6: refined center|size
};

DetectionForward detector_forward(Graph& g, const Model& model, const ProposalBatch& batch);

Aabb box_from_params(const double* params6, int class_id, int color_id);

// Objectness CE + smooth-L1 box regression on positives + class CE on
// positives, equally weighted.
Graph::Id detection_loss(Graph& g, const DetectionForward& det, const ProposalBatch& batch,
                         const Scene& scene, double objectness_iou);

Graph::Id total_loss(Graph& g, Graph::Id det, Graph::Id des, Graph::Id rel,
                     const LossWeights& w, bool use_t2t);

// Full forward on one scene: detector heads, positional encoding, encoder.
struct SceneForward {
  ProposalBatch batch;
  DetectionForward det;
  Graph::Id tokens = -1;  // encoder input
  EncoderOutput enc;      // enc.tokens == tokens when the encoder is off
};

SceneForward forward_scene(Graph& g, Model& model, const Scene& scene, ProposalBatch batch,
                           bool training);

// Relation labels for proposal pairs via their assigned ground-truth boxes.
RelationMap proposal_relation_labels(const ProposalBatch& batch, const Scene& scene,
                                     const RelationParams& p);

struct EvalOptions {
  std::uint64_t seed = 9000;
  double noise_sigma = 0.05;
  double nms_iou = 0.5;
  double iou_thresh = 0.5;
};

EvalReport evaluate(Model& model, const std::vector<SceneRecord>& records,
                    const EvalOptions& opts);

// Teacher-forced next-word accuracy and RPH argmax accuracy over a dataset,
// without augmentation (fixed per-scene proposal seeds).
struct FitDiagnostics {
  double token_accuracy = 0;
  double relation_accuracy = 0;
};

FitDiagnostics diagnose(Model& model, const std::vector<SceneRecord>& records,
                        std::uint64_t seed, double noise_sigma);

struct HistoryPoint {
  std::size_t iter = 0;
  double loss = 0;
  double val_cider_0_5 = 0;
};

struct FitResult {
  std::string checkpoint_path;
  std::vector<HistoryPoint> history;
  double best_cider = 0;
};

// Training loop with on-the-fly relation relabeling; saves the checkpoint
// with the best validation CIDEr@0.5IoU and a JSONL metric log.
FitResult fit(const std::vector<SceneRecord>& train_set, const std::vector<SceneRecord>& val_set,
              const TrainConfig& cfg, const ModelConfig& mcfg, const std::string& out_dir);

// Checkpoint container: magic string, config, parameters, ADAM moments,
// batch-norm running stats, step counter.
void save_checkpoint(const Model& model, const TrainConfig& tcfg, const std::string& path);
struct LoadedCheckpoint {
  Model model;
  TrainConfig train_config;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

}  // namespace spacap
