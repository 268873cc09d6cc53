#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "train.hpp"

using namespace spacap;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.c_model = 32;
  cfg.n_blocks = 1;
  cfg.n_heads = 4;
  cfg.ffn_width = 64;
  cfg.m_proposals = 8;
  cfg.vocab_size = Vocabulary().size();
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<SceneRecord> tiny_dataset(std::uint64_t seed0, std::size_t n) {
  SceneGenConfig gcfg;
  Vocabulary vocab;
  RelationParams p;
  std::vector<SceneRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    SceneRecord rec;
    rec.scene = generate_scene(seed0 + i, gcfg);
    for (std::size_t o = 0; o < rec.scene.objects.size(); ++o)
      rec.captions.push_back(render_caption(rec.scene, o, p, vocab));
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

TEST_CASE("relation loss of uniform logits is 3 ln 3") {
  Graph g;
  std::size_t m = 4;
  RelationMap labels;
  labels.m = m;
  labels.labels.assign(m * m, RelationTriplet{});
  labels.at(0, 1) = {1, -1, 0};
  labels.at(1, 0) = {-1, 1, 0};
  Graph::Id logits = g.constant(Tensor({m * m, 9}, 0.0));
  Graph::Id loss = relation_loss(g, logits, labels, off_diagonal_mask(m));
  CHECK(g.value(loss).v[0] == doctest::Approx(3.0 * std::log(3.0)));
  CHECK_THROWS_AS(relation_loss(g, logits, labels, std::vector<std::uint8_t>(m * m, 0)),
                  std::invalid_argument);
}

TEST_CASE("description loss of uniform logits is ln V") {
  Graph g;
  std::size_t V = Vocabulary().size();
  std::vector<int> words{1, 5, 9, 2};  // SOS w w EOS
  Graph::Id logits = g.constant(Tensor({words.size() - 1, V}, 0.0));
  CHECK(g.value(description_loss(g, logits, words)).v[0] ==
        doctest::Approx(std::log((double)V)));
}

TEST_CASE("pad targets contribute neither value nor gradient") {
  std::size_t V = 12;
  std::vector<int> padded{1, 5, 9, 7, 4, 2, 0, 0, 0, 0};  // EOS at index 5
  std::vector<int> trimmed(padded.begin(), padded.begin() + 6);
  Tensor logits({padded.size() - 1, V});
  Rng rng(3);
  for (auto& v : logits.v) v = rng.uniform(-2, 2);

  Graph g1;
  double with_pads = g1.value(description_loss(g1, g1.constant(logits), padded)).v[0];
  Graph g2;
  Graph::Id trimmed_logits = g2.slice_rows(g2.constant(logits), 0, trimmed.size() - 1);
  double without = g2.value(description_loss(g2, trimmed_logits, trimmed)).v[0];
  CHECK(with_pads == doctest::Approx(without).epsilon(1e-12));

  // gradient: pad rows receive exactly zero
  ParamStore ps;
  ps.create("z", logits.shape, [&] { return 0.0; });
  ps.entry("z").value = logits;
  Graph g3;
  Graph::Id l = description_loss(g3, g3.param(ps, "z"), padded);
  ps.zero_grad();
  g3.backward(l);
  const Tensor& grad = ps.entry("z").grad;
  for (std::size_t t = 5; t < grad.rows(); ++t)  // rows whose target is PAD
    for (std::size_t c = 0; c < V; ++c) CHECK(grad.at(t, c) == 0.0);
}

TEST_CASE("total loss arithmetic") {
  Graph g;
  Graph::Id det = g.constant(Tensor::scalar(0.1));
  Graph::Id des = g.constant(Tensor::scalar(1.0));
  Graph::Id rel = g.constant(Tensor::scalar(2.0));
  LossWeights w;  // delta 10, zeta 0.1
  CHECK(g.value(total_loss(g, det, des, rel, w, true)).v[0] == doctest::Approx(2.2));
  CHECK(g.value(total_loss(g, det, des, rel, w, false)).v[0] == doctest::Approx(2.0));
  Graph::Id bad = g.constant(Tensor::scalar(std::nan("")));
  CHECK_THROWS_AS(total_loss(g, bad, des, rel, w, true), std::runtime_error);
}

TEST_CASE("proposal relation labels follow the assignment") {
  ModelConfig mcfg = small_config();
  SceneGenConfig gcfg;
  RelationParams p;
  Scene scene = generate_scene(5, gcfg);
  Rng rng(2);
  ProposalBatch batch = simulate_proposals(scene, 0.02, mcfg.m_proposals, gcfg, rng);
  RelationMap labels = proposal_relation_labels(batch, scene, p);
  RelationMap gt = relation_maps(scene.objects, p);
  for (std::size_t i = 0; i < labels.m; ++i) {
    CHECK(labels.at(i, i) == RelationTriplet{0, 0, 0});
    for (std::size_t j = 0; j < labels.m; ++j)
      CHECK(labels.at(i, j) == gt.at(batch.gt_assignment[i], batch.gt_assignment[j]));
  }
}

TEST_CASE("detection loss is finite and all heads receive gradient") {
  ModelConfig mcfg = small_config();
  Model model(mcfg, 3);
  SceneGenConfig gcfg;
  Scene scene = generate_scene(9, gcfg);
  Rng rng(4);
  ProposalBatch batch = simulate_proposals(scene, 0.05, mcfg.m_proposals, gcfg, rng);
  Graph g;
  DetectionForward det = detector_forward(g, model, batch);
  Graph::Id loss = detection_loss(g, det, batch, scene, 0.25);
  CHECK(std::isfinite(g.value(loss).v[0]));
  CHECK(g.value(loss).v[0] > 0.0);
  model.params().zero_grad();
  g.backward(loss);
  for (const char* name : {"det.embed.w", "det.obj.w", "det.cls.w", "det.box.w"}) {
    const Tensor& grad = model.params().entry(name).grad;
    double norm = 0;
    for (double v : grad.v) norm += v * v;
    CHECK(norm > 0.0);
  }
}

TEST_CASE("config json round trips") {
  ModelConfig mcfg = small_config();
  mcfg.pos_enc_kind = PosEncKind::kBoxCenterSize;
  mcfg.decoder_kind = DecoderKind::kLateGuide;
  mcfg.use_t2t = false;
  ModelConfig back = model_config_from_json(model_config_to_json(mcfg));
  CHECK(model_config_to_json(back) == model_config_to_json(mcfg));
  CHECK(back.pos_enc_kind == PosEncKind::kBoxCenterSize);
  CHECK(back.decoder_kind == DecoderKind::kLateGuide);

  TrainConfig tcfg;
  tcfg.seed = 77;
  tcfg.noise_sigma = 0.02;
  tcfg.loss_weights.zeta = 0.25;
  TrainConfig tback = train_config_from_json(train_config_to_json(tcfg));
  CHECK(train_config_to_json(tback) == train_config_to_json(tcfg));
}

TEST_CASE("checkpoint save/load round trip is byte identical") {
  ModelConfig mcfg = small_config();
  Model model(mcfg, 21);
  TrainConfig tcfg;
  tcfg.seed = 13;
  // perturb the optimizer state so moments are exercised too
  AdamConfig adam;
  for (const auto& name : model.params().names()) {
    auto& e = model.params().entry(name);
    for (auto& v : e.grad.v) v = 0.01;
  }
  model.params().adam_step(adam);

  std::string p1 = "ckpt_a.json", p2 = "ckpt_b.json";
  save_checkpoint(model, tcfg, p1);
  LoadedCheckpoint loaded = load_checkpoint(p1);
  save_checkpoint(loaded.model, loaded.train_config, p2);
  CHECK(slurp(p1) == slurp(p2));
  CHECK(loaded.model.params().step == model.params().step);
  std::remove(p1.c_str());
  std::remove(p2.c_str());

  std::ofstream bad("ckpt_bad.json");
  bad << "{\"magic\": \"nope\"}";
  bad.close();
  CHECK_THROWS_AS(load_checkpoint("ckpt_bad.json"), std::runtime_error);
  std::remove("ckpt_bad.json");
}

TEST_CASE("200 adam steps halve the loss on a fixed batch") {
  ModelConfig mcfg = small_config();
  Model model(mcfg, 8);
  SceneGenConfig gcfg;
  RelationParams p;
  Vocabulary vocab;
  Scene scene = generate_scene(77, gcfg);
  Rng prop_rng(6);
  ProposalBatch batch = simulate_proposals(scene, 0.02, mcfg.m_proposals, gcfg, prop_rng);
  CaptionRecord cap = render_caption(scene, 0, p, vocab);
  std::vector<int> full;
  for (int t : cap.tokens) {
    full.push_back(t);
    if (t == Vocabulary::kEos) break;
  }
  std::vector<int> input(full.begin(), full.end() - 1);
  AdamConfig adam;
  LossWeights w;

  double first = 0, last = 0;
  for (int it = 0; it < 200; ++it) {
    Graph g;
    SceneForward fwd = forward_scene(g, model, scene, batch, true);
    Graph::Id det = detection_loss(g, fwd.det, fwd.batch, scene, 0.25);
    Graph::Id target = g.gather_rows(fwd.enc.tokens, {0});
    DecoderOutput dec = model.decode_teacher_forced(g, target, input);
    Graph::Id des = description_loss(g, dec.logits, full);
    RelationMap labels = proposal_relation_labels(fwd.batch, scene, p);
    Graph::Id rel = relation_loss(g, fwd.enc.relation_logits, labels,
                                  off_diagonal_mask(labels.m));
    Graph::Id loss = total_loss(g, det, des, rel, w, true);
    model.params().zero_grad();
    g.backward(loss);
    model.params().adam_step(adam);
    if (it == 0) first = g.value(loss).v[0];
    last = g.value(loss).v[0];
  }
  CHECK(last < 0.5 * first);
}

TEST_CASE("fit writes outputs and is deterministic") {
  auto train_set = tiny_dataset(300, 6);
  auto val_set = tiny_dataset(400, 3);
  TrainConfig tcfg;
  tcfg.batch_size = 3;
  tcfg.epochs = 2;
  tcfg.eval_interval = 2;
  tcfg.seed = 5;
  ModelConfig mcfg = small_config();

  FitResult r1 = fit(train_set, val_set, tcfg, mcfg, "fit_tmp_a");
  FitResult r2 = fit(train_set, val_set, tcfg, mcfg, "fit_tmp_b");
  CHECK(std::filesystem::exists("fit_tmp_a/checkpoint.json"));
  CHECK(std::filesystem::exists("fit_tmp_a/metrics.jsonl"));
  CHECK(!r1.history.empty());
  CHECK(slurp("fit_tmp_a/checkpoint.json") == slurp("fit_tmp_b/checkpoint.json"));
  CHECK(slurp("fit_tmp_a/metrics.jsonl") == slurp("fit_tmp_b/metrics.jsonl"));

  // the persisted checkpoint evaluates identically to a fresh load
  LoadedCheckpoint ckpt = load_checkpoint("fit_tmp_a/checkpoint.json");
  EvalOptions opts;
  EvalReport a = evaluate(ckpt.model, val_set, opts);
  EvalReport b = evaluate(ckpt.model, val_set, opts);
  CHECK(eval_report_to_json(a) == eval_report_to_json(b));
  CHECK(a.total_gt > 0);

  FitDiagnostics d = diagnose(ckpt.model, val_set, 1, 0.02);
  CHECK(d.token_accuracy >= 0.0);
  CHECK(d.token_accuracy <= 1.0);

  std::filesystem::remove_all("fit_tmp_a");
  std::filesystem::remove_all("fit_tmp_b");
}
