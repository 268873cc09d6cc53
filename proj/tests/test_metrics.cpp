#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "metrics.hpp"

using namespace spacap;

namespace {

// Frozen toy corpus; golden constants derived with the independent reference
// implementation in tools/reference_metrics.py.
const std::vector<std::pair<std::string, std::vector<std::string>>> kCorpus = {
    {"the red chair is left of the blue table",
     {"the red chair is to the left of the blue table",
      "a red chair left of a blue table"}},
    {"a green lamp above the white shelf", {"a green lamp is above the white shelf"}},
    {"this is a black monitor . it is behind the brown box .",
     {"this is a black monitor . it is behind the brown box .",
      "a black monitor behind a brown box ."}},
};

const double kGoldenBleu[3] = {0.747674390610610, 0.515448683110766, 1.0};
const double kGoldenRouge[3] = {0.884057971014493, 0.922246220302376, 1.0};
const double kGoldenCider[3] = {5.003998900858676, 6.269432314000618, 6.255332142027362};

Aabb box(double cx, double s) {
  Aabb b;
  b.center = {cx, 0, 0};
  b.size = {s, s, s};
  return b;
}

}  // namespace

TEST_CASE("golden corpus constants to 1e-6") {
  std::vector<TokenSeq> cands;
  std::vector<std::vector<TokenSeq>> refs;
  for (const auto& [c, rs] : kCorpus) {
    cands.push_back(split_tokens(c));
    std::vector<TokenSeq> r;
    for (const auto& s : rs) r.push_back(split_tokens(s));
    refs.push_back(std::move(r));
  }
  auto cider = cider_d(cands, refs);
  for (int i = 0; i < 3; ++i) {
    CHECK(bleu4(cands[i], refs[i]) == doctest::Approx(kGoldenBleu[i]).epsilon(1e-6));
    CHECK(rouge_l(cands[i], refs[i]) == doctest::Approx(kGoldenRouge[i]).epsilon(1e-6));
    CHECK(cider[i] == doctest::Approx(kGoldenCider[i]).epsilon(1e-6));
  }
}

TEST_CASE("identity candidates score 1.0 / 1.0 / 10.0") {
  TokenSeq a = split_tokens("the red chair is left of the blue table");
  TokenSeq b = split_tokens("a green lamp sits above the white shelf tonight");
  CHECK(bleu4(a, {a}) == doctest::Approx(1.0));
  CHECK(rouge_l(a, {a}) == doctest::Approx(1.0));
  // CIDEr identity needs a >=2 image corpus with disjoint ngrams so that the
  // idf weights are nonzero.
  auto scores = cider_d({a, b}, {{a}, {b}});
  CHECK(scores[0] == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(scores[1] == doctest::Approx(10.0).epsilon(1e-9));
}

TEST_CASE("rouge_l hand cases") {
  CHECK(rouge_l(split_tokens("a c d"), {split_tokens("a b c d")}) ==
        doctest::Approx(0.835616438356164).epsilon(1e-9));
  CHECK(rouge_l(split_tokens("a b c d"), {split_tokens("a c d")}) ==
        doctest::Approx(0.879807692307692).epsilon(1e-9));
  CHECK(rouge_l(split_tokens("x y"), {split_tokens("a b")}) == 0.0);
}

TEST_CASE("bleu brevity penalty and empty-overlap floor") {
  TokenSeq cand = split_tokens("a b c d e");
  // no 4-gram overlap -> floor keeps the score tiny but positive
  CHECK(bleu4(cand, {split_tokens("a b c x y")}) > 0.0);
  CHECK(bleu4(cand, {split_tokens("a b c x y")}) < 0.1);
  // shorter candidate than reference gets penalized
  TokenSeq full = split_tokens("a b c d e f g h");
  TokenSeq part = split_tokens("a b c d e");
  CHECK(bleu4(part, {full}) < bleu4(full, {full}));
}

TEST_CASE("map_at_iou hand case equals 5/6") {
  // One class; ranked TP(0.9), FP(0.8), TP(0.7); 2 GT boxes.
  DetectionInstance inst;
  inst.gt = {box(0, 1), box(5, 1)};
  inst.predictions = {{box(0.05, 1), 0.9, 0},   // TP
                      {box(10, 1), 0.8, 0},     // FP
                      {box(5.05, 1), 0.7, 0}};  // TP
  CHECK(map_at_iou({inst}, 0.5) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("map_at_iou averages only classes present in gt") {
  DetectionInstance inst;
  inst.gt = {box(0, 1)};
  inst.gt[0].class_id = 1;
  inst.predictions = {{box(0.0, 1), 0.9, 1}, {box(7, 1), 0.8, 3}};  // class 3 has no GT
  CHECK(map_at_iou({inst}, 0.5) == doctest::Approx(1.0));
}

TEST_CASE("m_at_iou scores unmatched gt as zero") {
  CaptionEvalInstance inst;
  TokenSeq ref = split_tokens("this is a red chair . it is next to the blue table .");
  inst.gt.push_back({box(0, 1), ref});
  inst.gt.push_back({box(5, 1), ref});
  inst.predictions.push_back({box(0.02, 1), 0.9, ref});  // matches gt 0 exactly
  double rouge = m_at_iou({inst}, CaptionMetric::kRougeL, 0.5);
  CHECK(rouge == doctest::Approx(0.5));  // (1.0 + 0.0) / 2
  double bleu = m_at_iou({inst}, CaptionMetric::kBleu4, 0.5);
  CHECK(bleu == doctest::Approx(0.5));
}

TEST_CASE("relation_word_accuracy on constructed captions") {
  RelationParams p;
  Scene scene;
  scene.scene_id = "t";
  Aabb chair = box(-2, 1);
  chair.class_id = 0;  // chair
  chair.color_id = 0;  // red
  Aabb table = box(2, 1);
  table.class_id = 1;  // table
  table.color_id = 2;  // blue
  scene.objects = {chair, table};

  RelationEvalInstance good;
  good.scene = scene;
  good.predictions.push_back(
      {chair, 0.9, split_tokens("this is a red chair . it is left of the blue table .")});
  CHECK(relation_word_accuracy({good}, p, 0.5) == doctest::Approx(1.0));

  RelationEvalInstance bad = good;
  bad.predictions[0].tokens =
      split_tokens("this is a red chair . it is right of the blue table .");
  CHECK(relation_word_accuracy({bad}, p, 0.5) == doctest::Approx(0.0));

  RelationEvalInstance garbled = good;
  garbled.predictions[0].tokens = split_tokens("it it it it");
  CHECK(relation_word_accuracy({garbled}, p, 0.5) == doctest::Approx(0.0));
}
