#pragma once

#include <string>
#include <vector>

#include "geom3d.hpp"
#include "scenegen.hpp"

namespace spacap {

using TokenSeq = std::vector<std::string>;

TokenSeq split_tokens(const std::string& text);

// BLEU-4: clipped n-gram precisions (1e-9 numerator floor), brevity penalty.
double bleu4(const TokenSeq& candidate, const std::vector<TokenSeq>& references);

// LCS F-measure with beta=1.2, max over references.
double rouge_l(const TokenSeq& candidate, const std::vector<TokenSeq>& references);

// CIDEr-D over a corpus of (candidate, references) items; document
// frequencies come from the references themselves. sigma=6, x10 scaling.
// Returns one score per item.
std::vector<double> cider_d(const std::vector<TokenSeq>& candidates,
                            const std::vector<std::vector<TokenSeq>>& references);

enum class CaptionMetric { kCider, kBleu4, kRougeL };

struct PredictedCaption {
  Aabb box;
  double score = 0;
  TokenSeq tokens;
};

struct GtCaption {
  Aabb box;
  TokenSeq tokens;
};

// One evaluation scene: predictions are post-NMS.
struct CaptionEvalInstance {
  std::vector<PredictedCaption> predictions;
  std::vector<GtCaption> gt;
};

// Greedy one-to-one matching by descending IoU; returns the matched gt index
// per prediction, -1 if unmatched.
std::vector<int> greedy_match_boxes(const std::vector<Aabb>& pred, const std::vector<Aabb>& gt,
                                    double iou_thresh);

// m@kIoU: greedy one-to-one matching by descending IoU; unmatched GT scores
// 0; average over all GT objects across instances.
double m_at_iou(const std::vector<CaptionEvalInstance>& instances, CaptionMetric metric,
                double iou_thresh = 0.5);

struct Detection {
  Aabb box;
  double score = 0;
  int class_id = 0;
};

struct DetectionInstance {
  std::vector<Detection> predictions;
  std::vector<Aabb> gt;
};

// Per-class all-point-interpolation AP at the IoU threshold, averaged over
// classes present in GT.
double map_at_iou(const std::vector<DetectionInstance>& instances, double iou_thresh = 0.5);

struct RelationEvalInstance {
  Scene scene;
  std::vector<PredictedCaption> predictions;
};

// Fraction of IoU-matched predictions whose parsed relation phrase agrees
// with the phrase recomputed from geometry against the parsed referent.
// Unparseable captions count as incorrect.
double relation_word_accuracy(const std::vector<RelationEvalInstance>& instances,
                              const RelationParams& p, double iou_thresh = 0.5);

struct EvalReport {
  double cider_0_5 = 0;
  double bleu4_0_5 = 0;
  double rouge_0_5 = 0;
  double map_0_5 = 0;
  double relation_word_acc = 0;
  std::size_t matched_count = 0;
  std::size_t total_gt = 0;
};

std::string eval_report_to_json(const EvalReport& r);

}  // namespace spacap
