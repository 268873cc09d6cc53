#include "workflows.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace spacap {

using nlohmann::json;

namespace {

std::string iso_now() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_manifest(const std::string& path, const std::string& command, const json& config,
                    const json& inputs, const json& outputs, double duration_sec) {
  json m{{"command", command},     {"config", config},
         {"inputs", inputs},       {"outputs", outputs},
         {"timestamp", iso_now()}, {"duration_sec", duration_sec}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest " + path);
  out << m.dump(2) << '\n';
}

SceneGenConfig scenegen_config_from(const json& j) {
  SceneGenConfig c;
  c.min_objects = j.value("min_objects", c.min_objects);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.floor_half = j.value("floor_half", c.floor_half);
  c.max_pair_iou = j.value("max_pair_iou", c.max_pair_iou);
  c.elevated_prob = j.value("elevated_prob", c.elevated_prob);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.num_colors = j.value("num_colors", c.num_colors);
  return c;
}

EvalOptions eval_options_from(const json& j) {
  EvalOptions o;
  o.seed = j.value("seed", o.seed);
  o.noise_sigma = j.value("noise_sigma", o.noise_sigma);
  o.nms_iou = j.value("nms_iou", o.nms_iou);
  o.iou_thresh = j.value("iou_thresh", o.iou_thresh);
  return o;
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

}  // namespace

std::string gen_data(const std::string& config_json, const std::string& out_path) {
  Timer timer;
  json cfg = json::parse(config_json);
  std::uint64_t seed = cfg.value("seed", (std::uint64_t)0);
  std::size_t num_scenes = cfg.value("num_scenes", (std::size_t)100);
  SceneGenConfig gcfg = scenegen_config_from(cfg.value("scenegen", json::object()));
  const Vocabulary vocab;
  const RelationParams rel_params;

  std::vector<SceneRecord> records;
  records.reserve(num_scenes);
  for (std::size_t i = 0; i < num_scenes; ++i) {
    SceneRecord rec;
    rec.scene = generate_scene(seed * 1000003ULL + i, gcfg);
    for (std::size_t o = 0; o < rec.scene.objects.size(); ++o)
      rec.captions.push_back(render_caption(rec.scene, o, rel_params, vocab));
    records.push_back(std::move(rec));
  }
  write_dataset(out_path, records);
  write_manifest(out_path + ".manifest.json", "gen-data", cfg, json::object(),
                 json{{"dataset", out_path}}, timer.seconds());
  return json{{"num_scenes", records.size()}, {"path", out_path}}.dump();
}

std::string train_workflow(const std::string& config_json, const std::string& train_path,
                           const std::string& val_path, const std::string& out_dir) {
  Timer timer;
  json cfg = json::parse(config_json);
  ModelConfig mcfg = model_config_from_json(cfg.value("model", json::object()).dump());
  TrainConfig tcfg = train_config_from_json(cfg.value("train", json::object()).dump());
  auto train_set = read_dataset(train_path);
  auto val_set = read_dataset(val_path);
  FitResult res = fit(train_set, val_set, tcfg, mcfg, out_dir);
  write_manifest(out_dir + "/manifest.json", "train", cfg,
                 json{{"train", train_path}, {"val", val_path}},
                 json{{"checkpoint", res.checkpoint_path},
                      {"metrics", out_dir + "/metrics.jsonl"}},
                 timer.seconds());
  return json{{"checkpoint", res.checkpoint_path}, {"best_cider_0.5", res.best_cider}}.dump();
}

std::string eval_workflow(const std::string& checkpoint_path, const std::string& data_path,
                          const std::string& config_json, const std::string& out_path) {
  Timer timer;
  json cfg = json::parse(config_json.empty() ? "{}" : config_json);
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
  EvalOptions opts = eval_options_from(cfg);
  if (!cfg.contains("noise_sigma")) opts.noise_sigma = ckpt.train_config.noise_sigma;
  auto records = read_dataset(data_path);
  EvalReport rep = evaluate(ckpt.model, records, opts);
  std::string text = eval_report_to_json(rep);
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    out << text << '\n';
    write_manifest(out_path + ".manifest.json", "eval", cfg,
                   json{{"checkpoint", checkpoint_path}, {"data", data_path}},
                   json{{"report", out_path}}, timer.seconds());
  }
  return text;
}

std::string caption_scene(const std::string& checkpoint_path, const std::string& scene_json,
                          const std::string& config_json) {
  json cfg = json::parse(config_json.empty() ? "{}" : config_json);
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
  Model& model = ckpt.model;
  Scene scene = scene_from_json(scene_json);
  EvalOptions opts = eval_options_from(cfg);
  if (!cfg.contains("noise_sigma")) opts.noise_sigma = ckpt.train_config.noise_sigma;

  SceneGenConfig gcfg;
  gcfg.num_classes = model.config().num_classes;
  gcfg.num_colors = model.config().num_colors;
  Rng rng(opts.seed);
  ProposalBatch batch =
      simulate_proposals(scene, opts.noise_sigma, model.config().m_proposals, gcfg, rng);
  Graph g;
  SceneForward fwd = forward_scene(g, model, scene, std::move(batch), false);

  const Tensor& obj = g.value(fwd.det.obj_logits);
  const Tensor& params = g.value(fwd.det.pred_params);
  std::size_t M = fwd.batch.boxes.size();
  std::vector<double> scores(M);
  std::vector<Aabb> boxes(M);
  for (std::size_t i = 0; i < M; ++i) {
    double a = obj.at(i, 0), b = obj.at(i, 1);
    double mx = std::max(a, b);
    scores[i] = std::exp(b - mx) / (std::exp(a - mx) + std::exp(b - mx));
    boxes[i] = box_from_params(&params.v[i * 6], 0, 0);
  }
  auto kept = nms(boxes, scores, opts.nms_iou);

  const Vocabulary vocab;
  json out = json::array();
  for (std::size_t k : kept) {
    Graph::Id target = g.gather_rows(fwd.enc.tokens, {k});
    auto ids = model.greedy_decode(g, target);
    out.push_back(json{{"proposal", k},
                       {"score", scores[k]},
                       {"center", {boxes[k].center[0], boxes[k].center[1], boxes[k].center[2]}},
                       {"size", {boxes[k].size[0], boxes[k].size[1], boxes[k].size[2]}},
                       {"caption", vocab.detokenize(ids)}});
  }
  return json{{"scene_id", scene.scene_id}, {"captions", out}}.dump();
}

std::string relations_of_scene(const std::string& scene_json) {
  Scene scene = scene_from_json(scene_json);
  RelationMap map = relation_maps(scene.objects, RelationParams{});
  json rows = json::array();
  for (std::size_t i = 0; i < map.m; ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < map.m; ++j) {
      const RelationTriplet& t = map.at(i, j);
      row.push_back({t.lx, t.ly, t.lz});
    }
    rows.push_back(std::move(row));
  }
  return json{{"m", map.m}, {"labels", rows}}.dump();
}

std::string attn_dump(const std::string& checkpoint_path, const std::string& scene_json,
                      const std::string& config_json) {
  json cfg = json::parse(config_json.empty() ? "{}" : config_json);
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
  Model& model = ckpt.model;
  Scene scene = scene_from_json(scene_json);
  EvalOptions opts = eval_options_from(cfg);
  if (!cfg.contains("noise_sigma")) opts.noise_sigma = ckpt.train_config.noise_sigma;
  std::size_t target_idx = cfg.value("target", (std::size_t)0);

  SceneGenConfig gcfg;
  gcfg.num_classes = model.config().num_classes;
  gcfg.num_colors = model.config().num_colors;
  Rng rng(opts.seed);
  ProposalBatch batch =
      simulate_proposals(scene, opts.noise_sigma, model.config().m_proposals, gcfg, rng);
  Graph g;
  SceneForward fwd = forward_scene(g, model, scene, std::move(batch), false);
  if (target_idx >= fwd.batch.boxes.size())
    throw std::invalid_argument("attn_dump: target index out of range");

  json enc_attn = json::array();
  if (model.config().use_encoder) {
    auto heads = Model::last_block_attention(g, fwd.enc);
    for (const auto& h : heads) {
      json rows = json::array();
      for (std::size_t i = 0; i < h.rows(); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < h.cols(); ++j) row.push_back(h.at(i, j));
        rows.push_back(std::move(row));
      }
      enc_attn.push_back(std::move(rows));
    }
  }

  Graph::Id target = g.gather_rows(fwd.enc.tokens, {target_idx});
  auto ids = model.greedy_decode(g, target);
  std::vector<int> input(ids.begin(), ids.end() - 1);  // SOS..last word
  DecoderOutput dec = model.decode_teacher_forced(g, target, input);
  json dec_attn = json::array();
  for (const auto& row : dec.target_attention) dec_attn.push_back(row);

  const Vocabulary vocab;
  return json{{"scene_id", scene.scene_id},
              {"target", target_idx},
              {"caption", vocab.detokenize(ids)},
              {"encoder_attn", enc_attn},
              {"decoder_attn", dec_attn}}
      .dump();
}

}  // namespace spacap
