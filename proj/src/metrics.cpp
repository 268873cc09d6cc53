#include "metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <sstream>

#include "json.hpp"

namespace spacap {

namespace {

using NgramCounts = std::map<std::string, double>;

std::string join(const TokenSeq& toks, std::size_t start, std::size_t n) {
  std::string key;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) key += '\x1f';
    key += toks[start + i];
  }
  return key;
}

NgramCounts ngram_counts(const TokenSeq& toks, std::size_t n) {
  NgramCounts out;
  if (toks.size() >= n)
    for (std::size_t i = 0; i + n <= toks.size(); ++i) out[join(toks, i, n)] += 1.0;
  return out;
}

}  // namespace

TokenSeq split_tokens(const std::string& text) {
  TokenSeq out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

double bleu4(const TokenSeq& candidate, const std::vector<TokenSeq>& references) {
  if (candidate.empty() || references.empty())
    throw std::invalid_argument("bleu4: empty input");
  double log_sum = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    NgramCounts cand = ngram_counts(candidate, n);
    NgramCounts max_ref;
    for (const auto& ref : references)
      for (const auto& [k, v] : ngram_counts(ref, n)) max_ref[k] = std::max(max_ref[k], v);
    double clipped = 0, total = 0;
    for (const auto& [k, v] : cand) {
      total += v;
      auto it = max_ref.find(k);
      clipped += std::min(v, it == max_ref.end() ? 0.0 : it->second);
    }
    double p = total > 0 ? std::max(clipped, 1e-9) / total : 1e-9;
    log_sum += std::log(p);
  }
  double c = (double)candidate.size();
  double r = (double)references[0].size();
  for (const auto& ref : references) {
    double len = (double)ref.size();
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r))
      r = len;
  }
  double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / 4.0);
}

double rouge_l(const TokenSeq& candidate, const std::vector<TokenSeq>& references) {
  if (candidate.empty() || references.empty())
    throw std::invalid_argument("rouge_l: empty input");
  const double beta = 1.2;
  double best = 0;
  for (const auto& ref : references) {
    std::size_t n = candidate.size(), m = ref.size();
    std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
      for (std::size_t j = 1; j <= m; ++j) {
        if (candidate[i - 1] == ref[j - 1])
          cur[j] = prev[j - 1] + 1;
        else
          cur[j] = std::max(prev[j], cur[j - 1]);
      }
      std::swap(prev, cur);
    }
    double lcs = (double)prev[m];
    if (lcs == 0) continue;
    double prec = lcs / n, rec = lcs / m;
    double f = (1 + beta * beta) * prec * rec / (rec + beta * beta * prec);
    best = std::max(best, f);
  }
  return best;
}

std::vector<double> cider_d(const std::vector<TokenSeq>& candidates,
                            const std::vector<std::vector<TokenSeq>>& references) {
  if (candidates.size() != references.size() || candidates.empty())
    throw std::invalid_argument("cider_d: corpus empty or size mismatch");
  const double sigma = 6.0;
  const std::size_t N = 4;

  // Document frequencies from the reference sets themselves.
  std::map<std::string, double> df;
  for (const auto& refs : references) {
    std::map<std::string, bool> seen;
    for (const auto& ref : refs)
      for (std::size_t n = 1; n <= N; ++n)
        for (const auto& [k, v] : ngram_counts(ref, n)) seen[k] = true;
    for (const auto& [k, v] : seen) df[k] += 1.0;
  }
  double log_num_images = std::log((double)references.size());

  struct Vecs {
    std::array<NgramCounts, 4> vec;
    std::array<double, 4> norm{0, 0, 0, 0};
    double length = 0;  // bigram count, per the reference scorer
  };
  auto to_vecs = [&](const TokenSeq& toks) {
    Vecs v;
    for (std::size_t n = 1; n <= N; ++n) {
      for (const auto& [k, tf] : ngram_counts(toks, n)) {
        double idf = log_num_images - std::log(std::max(1.0, df[k]));
        double w = tf * idf;
        v.vec[n - 1][k] = w;
        v.norm[n - 1] += w * w;
        if (n == 2) v.length += tf;
      }
      v.norm[n - 1] = std::sqrt(v.norm[n - 1]);
    }
    return v;
  };

  std::vector<double> scores;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    Vecs hyp = to_vecs(candidates[i]);
    std::array<double, 4> acc{0, 0, 0, 0};
    for (const auto& ref : references[i]) {
      Vecs rv = to_vecs(ref);
      double delta = hyp.length - rv.length;
      double len_pen = std::exp(-(delta * delta) / (2 * sigma * sigma));
      for (std::size_t n = 0; n < N; ++n) {
        double val = 0;
        for (const auto& [k, hw] : hyp.vec[n]) {
          auto it = rv.vec[n].find(k);
          if (it != rv.vec[n].end()) val += std::min(hw, it->second) * it->second;
        }
        if (hyp.norm[n] != 0 && rv.norm[n] != 0) val /= hyp.norm[n] * rv.norm[n];
        acc[n] += val * len_pen;
      }
    }
    double mean_n = (acc[0] + acc[1] + acc[2] + acc[3]) / 4.0;
    scores.push_back(10.0 * mean_n / references[i].size());
  }
  return scores;
}

std::vector<int> greedy_match_boxes(const std::vector<Aabb>& pred, const std::vector<Aabb>& gt,
                                    double iou_thresh) {
  struct Cand {
    double iou;
    std::size_t p, g;
  };
  std::vector<Cand> cands;
  for (std::size_t p = 0; p < pred.size(); ++p)
    for (std::size_t g = 0; g < gt.size(); ++g) {
      double v = iou_aabb(pred[p], gt[g]);
      if (v > iou_thresh) cands.push_back({v, p, g});
    }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Cand& a, const Cand& b) { return a.iou > b.iou; });
  std::vector<int> out(pred.size(), -1);
  std::vector<bool> gt_used(gt.size(), false);
  std::vector<bool> p_used(pred.size(), false);
  for (const auto& c : cands) {
    if (p_used[c.p] || gt_used[c.g]) continue;
    out[c.p] = (int)c.g;
    p_used[c.p] = true;
    gt_used[c.g] = true;
  }
  return out;
}

double m_at_iou(const std::vector<CaptionEvalInstance>& instances, CaptionMetric metric,
                double iou_thresh) {
  // Per GT object: the matched prediction's caption, or empty if unmatched.
  std::vector<TokenSeq> cands;
  std::vector<std::vector<TokenSeq>> refs;
  for (const auto& inst : instances) {
    std::vector<Aabb> pb, gb;
    for (const auto& p : inst.predictions) pb.push_back(p.box);
    for (const auto& g : inst.gt) gb.push_back(g.box);
    auto match = greedy_match_boxes(pb, gb, iou_thresh);
    std::vector<int> pred_of_gt(gb.size(), -1);
    for (std::size_t p = 0; p < match.size(); ++p)
      if (match[p] >= 0) pred_of_gt[match[p]] = (int)p;
    for (std::size_t g = 0; g < gb.size(); ++g) {
      refs.push_back({inst.gt[g].tokens});
      if (pred_of_gt[g] >= 0)
        cands.push_back(inst.predictions[pred_of_gt[g]].tokens);
      else
        cands.push_back({});
    }
  }
  if (cands.empty()) return 0.0;
  double total = 0;
  if (metric == CaptionMetric::kCider) {
    auto scores = cider_d(cands, refs);
    for (double s : scores) total += s;
  } else {
    for (std::size_t i = 0; i < cands.size(); ++i) {
      if (cands[i].empty()) continue;
      total += metric == CaptionMetric::kBleu4 ? bleu4(cands[i], refs[i])
                                               : rouge_l(cands[i], refs[i]);
    }
  }
  return total / cands.size();
}

double map_at_iou(const std::vector<DetectionInstance>& instances, double iou_thresh) {
  std::map<int, std::size_t> npos;
  for (const auto& inst : instances)
    for (const auto& g : inst.gt) npos[g.class_id] += 1;
  if (npos.empty()) return 0.0;

  double ap_sum = 0;
  for (const auto& [cls, pos_count] : npos) {
    struct Det {
      double score;
      std::size_t inst, idx;
    };
    std::vector<Det> dets;
    for (std::size_t s = 0; s < instances.size(); ++s)
      for (std::size_t d = 0; d < instances[s].predictions.size(); ++d)
        if (instances[s].predictions[d].class_id == cls)
          dets.push_back({instances[s].predictions[d].score, s, d});
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Det& a, const Det& b) { return a.score > b.score; });
    std::vector<std::vector<bool>> used(instances.size());
    for (std::size_t s = 0; s < instances.size(); ++s)
      used[s].assign(instances[s].gt.size(), false);
    std::vector<int> tp(dets.size(), 0);
    for (std::size_t d = 0; d < dets.size(); ++d) {
      const auto& inst = instances[dets[d].inst];
      const Aabb& pbox = inst.predictions[dets[d].idx].box;
      double best_iou = iou_thresh;
      int best_g = -1;
      for (std::size_t g = 0; g < inst.gt.size(); ++g) {
        if (inst.gt[g].class_id != cls || used[dets[d].inst][g]) continue;
        double v = iou_aabb(pbox, inst.gt[g]);
        if (v > best_iou) {
          best_iou = v;
          best_g = (int)g;
        }
      }
      if (best_g >= 0) {
        tp[d] = 1;
        used[dets[d].inst][best_g] = true;
      }
    }
    std::vector<double> prec(dets.size()), rec(dets.size());
    double ctp = 0;
    for (std::size_t d = 0; d < dets.size(); ++d) {
      ctp += tp[d];
      prec[d] = ctp / (double)(d + 1);
      rec[d] = ctp / (double)pos_count;
    }
    // all-point interpolation: precision envelope from the right
    for (std::size_t d = dets.size(); d-- > 1;) prec[d - 1] = std::max(prec[d - 1], prec[d]);
    double ap = 0;
    double prev_rec = 0;
    for (std::size_t d = 0; d < dets.size(); ++d) {
      if (tp[d]) {
        ap += (rec[d] - prev_rec) * prec[d];
        prev_rec = rec[d];
      }
    }
    ap_sum += ap;
  }
  return ap_sum / npos.size();
}

namespace {

struct ParsedCaption {
  std::string phrase;
  int ref_color = -1;
  int ref_class = -1;
  bool ok = false;
};

int find_word(const std::vector<std::string>& list, const std::string& w) {
  for (std::size_t i = 0; i < list.size(); ++i)
    if (list[i] == w) return (int)i;
  return -1;
}

ParsedCaption parse_caption(const TokenSeq& toks) {
  ParsedCaption out;
  // template: this is a C1 K1 . it is <phrase> the C2 K2 .
  auto dot = std::find(toks.begin(), toks.end(), ".");
  if (dot == toks.end()) return out;
  std::size_t i = dot - toks.begin();
  if (i + 2 >= toks.size() || toks[i + 1] != "it" || toks[i + 2] != "is") return out;
  if (toks.size() < i + 7 || toks.back() != ".") return out;
  std::size_t the_pos = toks.size() - 4;
  if (toks[the_pos] != "the") return out;
  if (the_pos <= i + 3) return out;
  std::string phrase;
  for (std::size_t k = i + 3; k < the_pos; ++k) {
    if (!phrase.empty()) phrase += ' ';
    phrase += toks[k];
  }
  out.phrase = phrase;
  out.ref_color = find_word(Vocabulary::color_names(), toks[the_pos + 1]);
  out.ref_class = find_word(Vocabulary::class_names(), toks[the_pos + 2]);
  out.ok = out.ref_color >= 0 && out.ref_class >= 0 && !phrase.empty();
  return out;
}

}  // namespace

double relation_word_accuracy(const std::vector<RelationEvalInstance>& instances,
                              const RelationParams& p, double iou_thresh) {
  std::size_t matched = 0, correct = 0;
  for (const auto& inst : instances) {
    std::vector<Aabb> pb;
    for (const auto& pr : inst.predictions) pb.push_back(pr.box);
    auto match = greedy_match_boxes(pb, inst.scene.objects, iou_thresh);
    for (std::size_t pi = 0; pi < match.size(); ++pi) {
      if (match[pi] < 0) continue;
      ++matched;
      ParsedCaption parsed = parse_caption(inst.predictions[pi].tokens);
      if (!parsed.ok) continue;
      std::size_t target = (std::size_t)match[pi];
      const Aabb& tbox = inst.scene.objects[target];
      // referent: nearest object with the parsed class and color
      int ref_idx = -1;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < inst.scene.objects.size(); ++j) {
        if (j == target) continue;
        const Aabb& o = inst.scene.objects[j];
        if (o.class_id != parsed.ref_class || o.color_id != parsed.ref_color) continue;
        double d2 = 0;
        for (int a = 0; a < 3; ++a) {
          double d = tbox.center[a] - o.center[a];
          d2 += d * d;
        }
        if (d2 < best) {
          best = d2;
          ref_idx = (int)j;
        }
      }
      if (ref_idx < 0) continue;
      RelationTriplet t = classify_relation(tbox, inst.scene.objects[ref_idx], p);
      if (relation_phrase(t) == parsed.phrase) ++correct;
    }
  }
  return matched == 0 ? 0.0 : (double)correct / (double)matched;
}

std::string eval_report_to_json(const EvalReport& r) {
  nlohmann::json j{{"cider_0_5", r.cider_0_5},
                   {"bleu4_0_5", r.bleu4_0_5},
                   {"rouge_0_5", r.rouge_0_5},
                   {"map_0_5", r.map_0_5},
                   {"relation_word_acc", r.relation_word_acc},
                   {"matched_count", r.matched_count},
                   {"total_gt", r.total_gt}};
  return j.dump();
}

}  // namespace spacap
