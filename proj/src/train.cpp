#include "train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace spacap {

using nlohmann::json;

std::vector<std::uint8_t> off_diagonal_mask(std::size_t m) {
  std::vector<std::uint8_t> mask(m * m, 1);
  for (std::size_t i = 0; i < m; ++i) mask[i * m + i] = 0;
  return mask;
}

std::vector<std::uint8_t> matched_pair_mask(const ProposalBatch& batch, const Scene& scene,
                                            double iou_thresh) {
  std::size_t m = batch.boxes.size();
  std::vector<bool> pos(m);
  for (std::size_t i = 0; i < m; ++i)
    pos[i] = iou_aabb(batch.boxes[i], scene.objects[batch.gt_assignment[i]]) > iou_thresh;
  std::vector<std::uint8_t> mask(m * m, 0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      mask[i * m + j] = i != j && pos[i] && pos[j];
  return mask;
}

Graph::Id relation_loss(Graph& g, Graph::Id relation_logits, const RelationMap& labels,
                        const std::vector<std::uint8_t>& supervise_mask) {
  std::size_t m = labels.m;
  if (g.value(relation_logits).rows() != m * m || g.value(relation_logits).cols() != 9)
    throw std::invalid_argument("relation_loss: logits must be (M*M) x 9");
  bool any = false;
  for (auto b : supervise_mask) any = any || b;
  if (!any) throw std::invalid_argument("relation_loss: empty supervision set");

  Graph::Id total = -1;
  for (int axis = 0; axis < 3; ++axis) {
    std::vector<int> targets(m * m, 0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const RelationTriplet& t = labels.at(i, j);
        int lab = axis == 0 ? t.lx : axis == 1 ? t.ly : t.lz;
        targets[i * m + j] = lab + 1;  // -1/0/+1 -> 0/1/2
      }
    Graph::Id axis_logits = g.slice_cols(relation_logits, axis * 3, 3);
    Graph::Id ce = g.cross_entropy_logits(axis_logits, targets, supervise_mask);
    total = total < 0 ? ce : g.add(total, ce);
  }
  return total;
}

Graph::Id description_loss(Graph& g, Graph::Id logits, const std::vector<int>& words) {
  if (words.size() < 2) throw std::invalid_argument("description_loss: too few words");
  if (g.value(logits).rows() != words.size() - 1)
    throw std::invalid_argument("description_loss: logits row count must be len(words)-1");
  std::vector<int> targets(words.begin() + 1, words.end());
  std::vector<std::uint8_t> use(targets.size());
  bool any = false;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    use[t] = targets[t] != Vocabulary::kPad;
    any = any || use[t];
  }
  if (!any) throw std::invalid_argument("description_loss: all-pad target");
  return g.cross_entropy_logits(logits, targets, use);
}

DetectionForward detector_forward(Graph& g, const Model& model, const ProposalBatch& batch) {
  DetectionForward det;
  Graph::Id desc = g.constant(batch.descriptors);
  det.features = model.embed_features(g, desc);
  det.obj_logits = model.objectness_logits(g, det.features);
  det.cls_logits = model.class_logits(g, det.features);
  std::size_t M = batch.boxes.size();
  Tensor base({M, 6});
  for (std::size_t i = 0; i < M; ++i)
    for (int a = 0; a < 3; ++a) {
      base.v[i * 6 + a] = batch.boxes[i].center[a];
      base.v[i * 6 + 3 + a] = batch.boxes[i].size[a];
    }
  det.pred_params = g.add(g.constant(std::move(base)), model.box_deltas(g, det.features));
  return det;
}

Aabb box_from_params(const double* p, int class_id, int color_id) {
  Aabb b;
  for (int a = 0; a < 3; ++a) {
    b.center[a] = p[a];
    b.size[a] = std::max(1e-3, p[3 + a]);
  }
  b.class_id = class_id;
  b.color_id = color_id;
  return b;
}

Graph::Id detection_loss(Graph& g, const DetectionForward& det, const ProposalBatch& batch,
                         const Scene& scene, double objectness_iou) {
  std::size_t M = batch.boxes.size();
  std::vector<int> obj_targets(M, 0);
  std::vector<std::size_t> positives;
  std::vector<int> cls_targets(M, 0);
  for (std::size_t i = 0; i < M; ++i) {
    const Aabb& gt = scene.objects[batch.gt_assignment[i]];
    cls_targets[i] = gt.class_id;
    if (iou_aabb(batch.boxes[i], gt) > objectness_iou) {
      obj_targets[i] = 1;
      positives.push_back(i);
    }
  }
  Graph::Id loss = g.cross_entropy_logits(det.obj_logits, obj_targets, {});
  if (!positives.empty()) {
    std::vector<std::uint8_t> pos_mask(M, 0);
    for (std::size_t i : positives) pos_mask[i] = 1;
    loss = g.add(loss, g.cross_entropy_logits(det.cls_logits, cls_targets, pos_mask));
    Tensor gt_params({positives.size(), 6});
    for (std::size_t k = 0; k < positives.size(); ++k) {
      const Aabb& gt = scene.objects[batch.gt_assignment[positives[k]]];
      for (int a = 0; a < 3; ++a) {
        gt_params.v[k * 6 + a] = gt.center[a];
        gt_params.v[k * 6 + 3 + a] = gt.size[a];
      }
    }
    Graph::Id pred_pos = g.gather_rows(det.pred_params, positives);
    loss = g.add(loss, g.smooth_l1(pred_pos, g.constant(std::move(gt_params))));
  }
  return loss;
}

Graph::Id total_loss(Graph& g, Graph::Id det, Graph::Id des, Graph::Id rel,
                     const LossWeights& w, bool use_t2t) {
  auto check = [&](Graph::Id id, const char* name) {
    if (!std::isfinite(g.value(id).v[0]))
      throw std::runtime_error(std::string("total_loss: non-finite component ") + name);
  };
  check(det, "detection");
  check(des, "description");
  Graph::Id total = g.add(g.scale(det, w.delta), des);
  if (use_t2t) {
    check(rel, "relation");
    total = g.add(total, g.scale(rel, w.zeta));
  }
  return total;
}

SceneForward forward_scene(Graph& g, Model& model, const Scene& scene, ProposalBatch batch,
                           bool training) {
  SceneForward fwd;
  fwd.batch = std::move(batch);
  fwd.det = detector_forward(g, model, fwd.batch);
  Graph::Id pe = model.make_positional_encoding(g, fwd.batch, training);
  fwd.tokens = g.add(fwd.det.features, pe);
  if (model.config().use_encoder) {
    fwd.enc = model.encode(g, fwd.tokens);
  } else {
    fwd.enc.tokens = fwd.tokens;
  }
  return fwd;
}

RelationMap proposal_relation_labels(const ProposalBatch& batch, const Scene& scene,
                                     const RelationParams& p) {
  RelationMap gt_map = relation_maps(scene.objects, p);
  RelationMap out;
  out.m = batch.boxes.size();
  out.labels.assign(out.m * out.m, RelationTriplet{});
  for (std::size_t i = 0; i < out.m; ++i)
    for (std::size_t j = 0; j < out.m; ++j)
      out.at(i, j) = gt_map.at(batch.gt_assignment[i], batch.gt_assignment[j]);
  return out;
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (a + 1) + 0xD1B54A32D192ED03ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

SceneGenConfig gen_config_for(const ModelConfig& mcfg) {
  SceneGenConfig g;
  g.num_classes = mcfg.num_classes;
  g.num_colors = mcfg.num_colors;
  return g;
}

std::vector<int> trim_to_eos(const std::vector<int>& tokens) {
  std::vector<int> out;
  for (int t : tokens) {
    out.push_back(t);
    if (t == Vocabulary::kEos) break;
  }
  return out;
}

// Proposal with the highest IoU among those assigned to the object.
int proposal_for_object(const ProposalBatch& batch, const Scene& scene, std::size_t obj) {
  int best = -1;
  double best_iou = -1;
  for (std::size_t i = 0; i < batch.boxes.size(); ++i) {
    if (batch.gt_assignment[i] != obj) continue;
    double v = iou_aabb(batch.boxes[i], scene.objects[obj]);
    if (v > best_iou) {
      best_iou = v;
      best = (int)i;
    }
  }
  return best;
}

}  // namespace

EvalReport evaluate(Model& model, const std::vector<SceneRecord>& records,
                    const EvalOptions& opts) {
  const Vocabulary vocab;
  const RelationParams rel_params;
  SceneGenConfig gcfg = gen_config_for(model.config());
  std::vector<CaptionEvalInstance> cap_instances;
  std::vector<DetectionInstance> det_instances;
  std::vector<RelationEvalInstance> rel_instances;
  std::size_t matched = 0, total_gt = 0;

  for (std::size_t s = 0; s < records.size(); ++s) {
    const Scene& scene = records[s].scene;
    Rng rng(mix_seed(opts.seed, s));
    ProposalBatch batch =
        simulate_proposals(scene, opts.noise_sigma, model.config().m_proposals, gcfg, rng);
    Graph g;
    SceneForward fwd = forward_scene(g, model, scene, std::move(batch), /*training=*/false);

    std::size_t M = fwd.batch.boxes.size();
    const Tensor& obj = g.value(fwd.det.obj_logits);
    const Tensor& cls = g.value(fwd.det.cls_logits);
    const Tensor& params = g.value(fwd.det.pred_params);
    std::vector<double> scores(M);
    std::vector<Aabb> pred_boxes(M);
    for (std::size_t i = 0; i < M; ++i) {
      double a = obj.at(i, 0), b = obj.at(i, 1);
      double mx = std::max(a, b);
      scores[i] = std::exp(b - mx) / (std::exp(a - mx) + std::exp(b - mx));
      int best_cls = 0;
      for (std::size_t c = 1; c < cls.cols(); ++c)
        if (cls.at(i, c) > cls.at(i, best_cls)) best_cls = (int)c;
      pred_boxes[i] = box_from_params(&params.v[i * 6], best_cls, 0);
    }
    auto kept = nms(pred_boxes, scores, opts.nms_iou);

    CaptionEvalInstance cap_inst;
    DetectionInstance det_inst;
    RelationEvalInstance rel_inst;
    rel_inst.scene = scene;
    for (std::size_t k : kept) {
      Graph::Id target = g.gather_rows(fwd.enc.tokens, {k});
      auto word_ids = model.greedy_decode(g, target);
      TokenSeq toks = split_tokens(vocab.detokenize(word_ids));
      cap_inst.predictions.push_back({pred_boxes[k], scores[k], toks});
      det_inst.predictions.push_back({pred_boxes[k], scores[k], pred_boxes[k].class_id});
      rel_inst.predictions.push_back({pred_boxes[k], scores[k], toks});
    }
    for (std::size_t o = 0; o < scene.objects.size(); ++o) {
      TokenSeq ref;
      for (const auto& c : records[s].captions)
        if (c.object_index == o) ref = split_tokens(c.text);
      cap_inst.gt.push_back({scene.objects[o], ref});
      det_inst.gt.push_back(scene.objects[o]);
    }
    total_gt += scene.objects.size();
    {
      std::vector<Aabb> pb;
      for (const auto& p : cap_inst.predictions) pb.push_back(p.box);
      std::vector<Aabb> gb;
      for (const auto& gtc : cap_inst.gt) gb.push_back(gtc.box);
      auto m = greedy_match_boxes(pb, gb, opts.iou_thresh);
      for (int v : m)
        if (v >= 0) ++matched;
    }
    cap_instances.push_back(std::move(cap_inst));
    det_instances.push_back(std::move(det_inst));
    rel_instances.push_back(std::move(rel_inst));
  }

  EvalReport report;
  report.cider_0_5 = m_at_iou(cap_instances, CaptionMetric::kCider, opts.iou_thresh);
  report.bleu4_0_5 = m_at_iou(cap_instances, CaptionMetric::kBleu4, opts.iou_thresh);
  report.rouge_0_5 = m_at_iou(cap_instances, CaptionMetric::kRougeL, opts.iou_thresh);
  report.map_0_5 = map_at_iou(det_instances, opts.iou_thresh);
  report.relation_word_acc = relation_word_accuracy(rel_instances, rel_params, opts.iou_thresh);
  report.matched_count = matched;
  report.total_gt = total_gt;
  return report;
}

FitDiagnostics diagnose(Model& model, const std::vector<SceneRecord>& records,
                        std::uint64_t seed, double noise_sigma) {
  SceneGenConfig gcfg = gen_config_for(model.config());
  const RelationParams rel_params;
  std::size_t tok_total = 0, tok_correct = 0, rel_total = 0, rel_correct = 0;
  for (std::size_t s = 0; s < records.size(); ++s) {
    const Scene& scene = records[s].scene;
    Rng rng(mix_seed(seed, s));
    ProposalBatch batch =
        simulate_proposals(scene, noise_sigma, model.config().m_proposals, gcfg, rng);
    Graph g;
    SceneForward fwd = forward_scene(g, model, scene, std::move(batch), false);

    if (model.config().use_encoder && model.config().use_t2t) {
      RelationMap labels = proposal_relation_labels(fwd.batch, scene, rel_params);
      auto mask = matched_pair_mask(fwd.batch, scene, 0.25);
      const Tensor& logits = g.value(fwd.enc.relation_logits);
      std::size_t M = labels.m;
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < M; ++j) {
          if (!mask[i * M + j]) continue;
          const RelationTriplet& t = labels.at(i, j);
          int labs[3] = {t.lx + 1, t.ly + 1, t.lz + 1};
          for (int axis = 0; axis < 3; ++axis) {
            int best = 0;
            for (int c = 1; c < 3; ++c)
              if (logits.at(i * M + j, axis * 3 + c) > logits.at(i * M + j, axis * 3 + best))
                best = c;
            ++rel_total;
            if (best == labs[axis]) ++rel_correct;
          }
        }
    }

    for (const auto& cap : records[s].captions) {
      int pi = proposal_for_object(fwd.batch, scene, cap.object_index);
      if (pi < 0) continue;
      Graph::Id target = g.gather_rows(fwd.enc.tokens, {(std::size_t)pi});
      std::vector<int> full = trim_to_eos(cap.tokens);
      std::vector<int> input(full.begin(), full.end() - 1);
      DecoderOutput dec = model.decode_teacher_forced(g, target, input);
      const Tensor& logits = g.value(dec.logits);
      for (std::size_t t = 0; t < input.size(); ++t) {
        int want = full[t + 1];
        int best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
          if (logits.at(t, c) > logits.at(t, best)) best = (int)c;
        ++tok_total;
        if (best == want) ++tok_correct;
      }
    }
  }
  FitDiagnostics d;
  d.token_accuracy = tok_total ? (double)tok_correct / tok_total : 0.0;
  d.relation_accuracy = rel_total ? (double)rel_correct / rel_total : 0.0;
  return d;
}

FitResult fit(const std::vector<SceneRecord>& train_set, const std::vector<SceneRecord>& val_set,
              const TrainConfig& cfg, const ModelConfig& mcfg_in, const std::string& out_dir) {
  if (train_set.empty() || val_set.empty())
    throw std::invalid_argument("fit: empty train or val split");
  ModelConfig mcfg = mcfg_in;
  const Vocabulary vocab;
  if (mcfg.vocab_size == 0) mcfg.vocab_size = vocab.size();
  Model model(mcfg, cfg.seed);
  SceneGenConfig gcfg = gen_config_for(mcfg);
  const RelationParams rel_params;
  AdamConfig adam;
  adam.lr = cfg.learning_rate;
  adam.weight_decay = cfg.weight_decay;

  std::filesystem::create_directories(out_dir);
  std::string ckpt_path = out_dir + "/checkpoint.json";
  std::string log_path = out_dir + "/metrics.jsonl";
  std::ofstream log(log_path);
  if (!log) throw std::runtime_error("fit: cannot write " + log_path);

  EvalOptions eval_opts;
  eval_opts.seed = mix_seed(cfg.seed, 0xE7A1);
  eval_opts.noise_sigma = cfg.noise_sigma;
  eval_opts.nms_iou = cfg.nms_iou;

  FitResult result;
  result.checkpoint_path = ckpt_path;
  result.best_cider = -1;

  std::size_t iters_per_epoch =
      (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t total_iters = cfg.epochs * iters_per_epoch;
  std::size_t iter = 0;

  auto run_eval = [&](double cur_loss) {
    EvalReport rep = evaluate(model, val_set, eval_opts);
    HistoryPoint hp{iter, cur_loss, rep.cider_0_5};
    result.history.push_back(hp);
    log << json{{"iter", iter}, {"loss", cur_loss}, {"val_cider_0.5", rep.cider_0_5}}.dump()
        << '\n';
    log.flush();
    if (rep.cider_0_5 > result.best_cider) {
      result.best_cider = rep.cider_0_5;
      save_checkpoint(model, cfg, ckpt_path);
    }
  };

  double last_loss = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5AFF, epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

    for (std::size_t b = 0; b < iters_per_epoch; ++b) {
      Graph g;
      Graph::Id batch_loss = -1;
      std::size_t count = 0;
      for (std::size_t slot = 0; slot < cfg.batch_size; ++slot) {
        std::size_t idx = order[(b * cfg.batch_size + slot) % order.size()];
        Rng rng(cfg.fixed_proposals ? mix_seed(cfg.seed, idx) : mix_seed(cfg.seed, iter, slot));
        Scene scene = cfg.augment ? augment(train_set[idx].scene, rng) : train_set[idx].scene;
        ProposalBatch batch =
            simulate_proposals(scene, cfg.noise_sigma, mcfg.m_proposals, gcfg, rng);
        bool bn_train = !(cfg.bn_freeze_frac >= 0.0 &&
                          (double)iter >= cfg.bn_freeze_frac * (double)total_iters);
        SceneForward fwd = forward_scene(g, model, scene, std::move(batch), bn_train);

        Graph::Id det = detection_loss(g, fwd.det, fwd.batch, scene, cfg.objectness_iou);

        std::size_t first_obj = 0, last_obj = scene.objects.size();
        if (!cfg.all_captions) {
          first_obj = rng.uniform_int(scene.objects.size());
          last_obj = first_obj + 1;
        }
        Graph::Id des = -1;
        for (std::size_t target_obj = first_obj; target_obj < last_obj; ++target_obj) {
          int pi = proposal_for_object(fwd.batch, scene, target_obj);
          if (pi < 0) pi = 0;
          Graph::Id target = g.gather_rows(fwd.enc.tokens, {(std::size_t)pi});
          CaptionRecord cap = render_caption(scene, target_obj, rel_params, vocab);
          std::vector<int> full = trim_to_eos(cap.tokens);
          std::vector<int> input(full.begin(), full.end() - 1);
          DecoderOutput dec = model.decode_teacher_forced(g, target, input);
          Graph::Id one = description_loss(g, dec.logits, full);
          des = des < 0 ? one : g.add(des, one);
        }
        des = g.scale(des, 1.0 / (double)(last_obj - first_obj));

        Graph::Id rel = -1;
        bool scene_t2t = mcfg.use_encoder && mcfg.use_t2t &&
                         (double)iter >= cfg.t2t_start_frac * (double)total_iters &&
                         (double)iter < cfg.t2t_stop_frac * (double)total_iters;
        if (scene_t2t) {
          auto mask = matched_pair_mask(fwd.batch, scene, cfg.objectness_iou);
          bool any = false;
          for (auto b : mask) any = any || b;
          if (any) {
            RelationMap labels = proposal_relation_labels(fwd.batch, scene, rel_params);
            rel = relation_loss(g, fwd.enc.relation_logits, labels, mask);
          } else {
            scene_t2t = false;
          }
        }
        Graph::Id scene_loss = total_loss(g, det, des, rel, cfg.loss_weights, scene_t2t);
        batch_loss = batch_loss < 0 ? scene_loss : g.add(batch_loss, scene_loss);
        ++count;
      }
      batch_loss = g.scale(batch_loss, 1.0 / count);
      model.params().zero_grad();
      g.backward(batch_loss);
      model.params().clip_grad_norm(cfg.grad_clip_norm);
      if (cfg.final_learning_rate >= 0.0 && total_iters > 1) {
        double frac = (double)iter / (double)(total_iters - 1);
        adam.lr = cfg.final_learning_rate +
                  0.5 * (cfg.learning_rate - cfg.final_learning_rate) *
                      (1.0 + std::cos(frac * 3.14159265358979323846));
      }
      model.params().adam_step(adam);
      last_loss = g.value(batch_loss).v[0];
      ++iter;
      if (iter % cfg.eval_interval == 0) run_eval(last_loss);
    }
  }
  if (total_iters % cfg.eval_interval != 0 || total_iters == 0) run_eval(last_loss);
  return result;
}

// ---- checkpoint / config serialization ----

namespace {
constexpr const char* kMagic = "SPACAP3D-CKPT";

json tensor_to_json(const Tensor& t) { return json{{"shape", t.shape}, {"values", t.v}}; }

Tensor tensor_from_json(const json& j) {
  Tensor t;
  t.shape = j.at("shape").get<std::vector<std::size_t>>();
  t.v = j.at("values").get<std::vector<double>>();
  return t;
}

json model_config_to_j(const ModelConfig& c) {
  return json{{"c_model", c.c_model},
              {"n_blocks", c.n_blocks},
              {"n_heads", c.n_heads},
              {"ffn_width", c.ffn_width},
              {"vocab_size", c.vocab_size},
              {"max_caption_len", c.max_caption_len},
              {"pos_enc_kind", to_string(c.pos_enc_kind)},
              {"decoder_kind", to_string(c.decoder_kind)},
              {"use_encoder", c.use_encoder},
              {"use_t2t", c.use_t2t},
              {"m_proposals", c.m_proposals},
              {"num_classes", c.num_classes},
              {"num_colors", c.num_colors}};
}

ModelConfig model_config_from_j(const json& j) {
  ModelConfig c;
  c.c_model = j.value("c_model", c.c_model);
  c.n_blocks = j.value("n_blocks", c.n_blocks);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.ffn_width = j.value("ffn_width", c.ffn_width);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_caption_len = j.value("max_caption_len", c.max_caption_len);
  if (j.contains("pos_enc_kind"))
    c.pos_enc_kind = pos_enc_kind_from_string(j.at("pos_enc_kind").get<std::string>());
  if (j.contains("decoder_kind"))
    c.decoder_kind = decoder_kind_from_string(j.at("decoder_kind").get<std::string>());
  c.use_encoder = j.value("use_encoder", c.use_encoder);
  c.use_t2t = j.value("use_t2t", c.use_t2t);
  c.m_proposals = j.value("m_proposals", c.m_proposals);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.num_colors = j.value("num_colors", c.num_colors);
  return c;
}

json train_config_to_j(const TrainConfig& c) {
  return json{{"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"eval_interval", c.eval_interval},
              {"learning_rate", c.learning_rate},
              {"final_learning_rate", c.final_learning_rate},
              {"weight_decay", c.weight_decay},
              {"seed", c.seed},
              {"noise_sigma", c.noise_sigma},
              {"augment", c.augment},
              {"fixed_proposals", c.fixed_proposals},
              {"grad_clip_norm", c.grad_clip_norm},
              {"bn_freeze_frac", c.bn_freeze_frac},
              {"all_captions", c.all_captions},
              {"t2t_start_frac", c.t2t_start_frac},
              {"t2t_stop_frac", c.t2t_stop_frac},
              {"delta", c.loss_weights.delta},
              {"zeta", c.loss_weights.zeta},
              {"nms_iou", c.nms_iou},
              {"objectness_iou", c.objectness_iou}};
}

TrainConfig train_config_from_j(const json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.final_learning_rate = j.value("final_learning_rate", c.final_learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.augment = j.value("augment", c.augment);
  c.fixed_proposals = j.value("fixed_proposals", c.fixed_proposals);
  c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
  c.bn_freeze_frac = j.value("bn_freeze_frac", c.bn_freeze_frac);
  c.all_captions = j.value("all_captions", c.all_captions);
  c.t2t_start_frac = j.value("t2t_start_frac", c.t2t_start_frac);
  c.t2t_stop_frac = j.value("t2t_stop_frac", c.t2t_stop_frac);
  c.loss_weights.delta = j.value("delta", c.loss_weights.delta);
  c.loss_weights.zeta = j.value("zeta", c.loss_weights.zeta);
  c.nms_iou = j.value("nms_iou", c.nms_iou);
  c.objectness_iou = j.value("objectness_iou", c.objectness_iou);
  return c;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return model_config_to_j(cfg).dump(); }
ModelConfig model_config_from_json(const std::string& text) {
  return model_config_from_j(json::parse(text));
}
std::string train_config_to_json(const TrainConfig& cfg) { return train_config_to_j(cfg).dump(); }
TrainConfig train_config_from_json(const std::string& text) {
  return train_config_from_j(json::parse(text));
}

void save_checkpoint(const Model& model, const TrainConfig& tcfg, const std::string& path) {
  json params = json::object();
  for (const auto& [name, e] : const_cast<Model&>(model).params().all()) {
    params[name] = json{{"value", tensor_to_json(e.value)},
                        {"m1", tensor_to_json(e.m1)},
                        {"m2", tensor_to_json(e.m2)}};
  }
  json bn = json::object();
  for (const auto& [name, st] : const_cast<Model&>(model).bn_states()) {
    if (!st.initialized) continue;
    bn[name] = json{{"mean", st.running_mean.v}, {"var", st.running_var.v}};
  }
  json j{{"magic", kMagic},
         {"version", 1},
         {"model_config", model_config_to_j(model.config())},
         {"train_config", train_config_to_j(tcfg)},
         {"step", const_cast<Model&>(model).params().step},
         {"params", params},
         {"bn", bn}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << j.dump();
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  json j = json::parse(in);
  if (j.value("magic", "") != kMagic)
    throw std::runtime_error("load_checkpoint: bad magic string in " + path);
  ModelConfig mcfg = model_config_from_j(j.at("model_config"));
  LoadedCheckpoint out{Model(mcfg, 0), train_config_from_j(j.at("train_config"))};
  auto& ps = out.model.params();
  for (const auto& [name, pj] : j.at("params").items()) {
    auto& e = ps.entry(name);
    Tensor value = tensor_from_json(pj.at("value"));
    if (value.shape != e.value.shape)
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
    e.value = std::move(value);
    e.m1 = tensor_from_json(pj.at("m1"));
    e.m2 = tensor_from_json(pj.at("m2"));
  }
  ps.step = j.at("step").get<std::int64_t>();
  for (const auto& [name, bj] : j.at("bn").items()) {
    BatchNormState st;
    st.running_mean = Tensor::row(bj.at("mean").get<std::vector<double>>());
    st.running_var = Tensor::row(bj.at("var").get<std::vector<double>>());
    st.initialized = true;
    out.model.bn_states()[name] = std::move(st);
  }
  return out;
}

}  // namespace spacap
