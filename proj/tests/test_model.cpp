#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <set>

#include "model.hpp"
#include "rng.hpp"
#include "scenegen.hpp"
#include "train.hpp"

using namespace spacap;

namespace {

ModelConfig desk_config() {
  ModelConfig cfg;
  cfg.vocab_size = Vocabulary().size();
  return cfg;
}

Tensor random_tokens(std::size_t m, std::size_t c, std::uint64_t seed) {
  Tensor t({m, c});
  Rng rng(seed);
  for (auto& v : t.v) v = rng.uniform(-1, 1);
  return t;
}

ProposalBatch make_batch(std::uint64_t scene_seed, std::uint64_t rng_seed,
                         const ModelConfig& mcfg, double sigma = 0.05) {
  SceneGenConfig gcfg;
  gcfg.num_classes = mcfg.num_classes;
  gcfg.num_colors = mcfg.num_colors;
  Scene s = generate_scene(scene_seed, gcfg);
  Rng rng(rng_seed);
  return simulate_proposals(s, sigma, mcfg.m_proposals, gcfg, rng);
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = desk_config();
  cfg.validate();
  cfg.n_heads = 5;  // 64 % 5 != 0
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = desk_config();
  cfg.vocab_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = desk_config();
  cfg.use_encoder = false;
  cfg.use_t2t = true;  // t2t requires the encoder
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("target-aware mask exact pattern") {
  auto m = build_target_aware_mask(3);  // 4x4
  // row 0: target attends only itself
  std::vector<std::uint8_t> want{1, 0, 0, 0,   // target
                                 1, 1, 0, 0,   // word 1: target + itself
                                 1, 1, 1, 0,   // word 2
                                 1, 1, 1, 1};  // word 3
  CHECK(m == want);
}

TEST_CASE("causal mask exact pattern") {
  auto m = build_causal_mask(3);
  std::vector<std::uint8_t> want{1, 0, 0, 1, 1, 0, 1, 1, 1};
  CHECK(m == want);
}

TEST_CASE("encoder attention rows sum to one; relation logits iff t2t") {
  ModelConfig cfg = desk_config();
  Model model(cfg, 1);
  Graph g;
  Graph::Id tokens = g.constant(random_tokens(cfg.m_proposals, cfg.c_model, 5));
  EncoderOutput enc = model.encode(g, tokens);
  CHECK(enc.relation_logits >= 0);
  CHECK(g.value(enc.relation_logits).rows() == cfg.m_proposals * cfg.m_proposals);
  CHECK(g.value(enc.relation_logits).cols() == 9);
  auto heads = Model::last_block_attention(g, enc);
  REQUIRE(heads.size() == cfg.n_heads);
  for (const auto& h : heads)
    for (std::size_t i = 0; i < h.rows(); ++i) {
      double s = 0;
      for (std::size_t j = 0; j < h.cols(); ++j) s += h.at(i, j);
      CHECK(s == doctest::Approx(1.0));
    }

  ModelConfig no_t2t = cfg;
  no_t2t.use_t2t = false;
  Model m2(no_t2t, 1);
  Graph g2;
  EncoderOutput e2 = m2.encode(g2, g2.constant(random_tokens(cfg.m_proposals, cfg.c_model, 5)));
  CHECK(e2.relation_logits < 0);
}

TEST_CASE("encoder permutation equivariance") {
  ModelConfig cfg = desk_config();
  cfg.m_proposals = 6;
  Model model(cfg, 3);
  Tensor base = random_tokens(6, cfg.c_model, 8);
  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  Tensor permuted({6, cfg.c_model});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < cfg.c_model; ++c)
      permuted.at(i, c) = base.at(perm[i], c);

  Graph g1, g2;
  EncoderOutput e1 = model.encode(g1, g1.constant(base));
  EncoderOutput e2 = model.encode(g2, g2.constant(permuted));
  const Tensor& t1 = g1.value(e1.tokens);
  const Tensor& t2 = g2.value(e2.tokens);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < cfg.c_model; ++c)
      CHECK(t2.at(i, c) == doctest::Approx(t1.at(perm[i], c)).epsilon(1e-9));

  const Tensor& r1 = g1.value(e1.relation_logits);
  const Tensor& r2 = g2.value(e2.relation_logits);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j)
      for (int k = 0; k < 9; ++k)
        CHECK(r2.at(i * 6 + j, k) ==
              doctest::Approx(r1.at(perm[i] * 6 + perm[j], k)).epsilon(1e-9));
}

TEST_CASE("decoder causality: future words cannot influence earlier logits") {
  for (DecoderKind kind : {DecoderKind::kEarlyGuide, DecoderKind::kLateGuide}) {
    ModelConfig cfg = desk_config();
    cfg.decoder_kind = kind;
    Model model(cfg, 2);
    Graph g;
    Graph::Id target = g.constant(random_tokens(1, cfg.c_model, 4));
    std::vector<int> words{1, 5, 9, 12, 7};
    std::vector<int> tampered{1, 5, 9, 30, 25};  // change positions 3 and 4
    DecoderOutput a = model.decode_teacher_forced(g, target, words);
    DecoderOutput b = model.decode_teacher_forced(g, target, tampered);
    const Tensor& la = g.value(a.logits);
    const Tensor& lb = g.value(b.logits);
    for (std::size_t t = 0; t < 3; ++t)  // rows before the first change
      for (std::size_t c = 0; c < la.cols(); ++c)
        CHECK(la.at(t, c) == lb.at(t, c));
    // the changed position must matter somewhere later
    bool differs = false;
    for (std::size_t c = 0; c < la.cols(); ++c)
      if (la.at(3, c) != lb.at(3, c)) differs = true;
    CHECK(differs);
  }
}

TEST_CASE("decoder output is conditioned on the target token") {
  for (DecoderKind kind : {DecoderKind::kEarlyGuide, DecoderKind::kLateGuide}) {
    ModelConfig cfg = desk_config();
    cfg.decoder_kind = kind;
    Model model(cfg, 2);
    Graph g;
    std::vector<int> words{1, 5, 9};
    DecoderOutput a = model.decode_teacher_forced(g, g.constant(random_tokens(1, cfg.c_model, 4)),
                                                  words);
    DecoderOutput b = model.decode_teacher_forced(g, g.constant(random_tokens(1, cfg.c_model, 6)),
                                                  words);
    const Tensor& la = g.value(a.logits);
    const Tensor& lb = g.value(b.logits);
    bool differs = false;
    for (std::size_t i = 0; i < la.size(); ++i)
      if (la.v[i] != lb.v[i]) differs = true;
    CHECK(differs);
    CHECK(a.target_attention.size() == words.size());
    CHECK(a.target_attention[0].size() == cfg.n_heads);
  }
}

TEST_CASE("positional encoding kinds: geometry dependence") {
  ModelConfig base = desk_config();
  auto encode_with = [&](PosEncKind kind, std::uint64_t scene_seed) {
    ModelConfig cfg = base;
    cfg.pos_enc_kind = kind;
    Model model(cfg, 11);
    ProposalBatch batch = make_batch(scene_seed, 99, cfg);
    Graph g;
    return g.value(model.make_positional_encoding(g, batch, false));
  };

  for (PosEncKind kind : {PosEncKind::kNone, PosEncKind::kSinusoidal, PosEncKind::kRandom}) {
    Tensor a = encode_with(kind, 1);
    Tensor b = encode_with(kind, 2);  // different scene, same shape
    CHECK(a.v == b.v);  // input-geometry independent
  }
  CHECK(encode_with(PosEncKind::kNone, 1).v == std::vector<double>(
            base.m_proposals * base.c_model, 0.0));
  for (PosEncKind kind :
       {PosEncKind::kBoxCenter, PosEncKind::kBoxCenterSize, PosEncKind::kVoteCenter}) {
    Tensor a = encode_with(kind, 1);
    Tensor b = encode_with(kind, 2);
    CHECK(a.v != b.v);  // geometry dependent
  }
}

TEST_CASE("greedy decode terminates and is well-formed") {
  ModelConfig cfg = desk_config();
  Model model(cfg, 5);
  Graph g;
  auto ids = model.greedy_decode(g, g.constant(random_tokens(1, cfg.c_model, 3)));
  REQUIRE(!ids.empty());
  CHECK(ids.front() == Vocabulary::kSos);
  CHECK(ids.size() <= cfg.max_caption_len);
  if (ids.size() < cfg.max_caption_len) CHECK(ids.back() == Vocabulary::kEos);
}

TEST_CASE("parameter sets reflect the enabled components") {
  auto names_for = [](bool use_enc, bool use_t2t, DecoderKind dk, PosEncKind pk) {
    ModelConfig cfg = desk_config();
    cfg.use_encoder = use_enc;
    cfg.use_t2t = use_t2t;
    cfg.decoder_kind = dk;
    cfg.pos_enc_kind = pk;
    Model m(cfg, 1);
    auto v = m.params().names();
    return std::set<std::string>(v.begin(), v.end());
  };
  auto full = names_for(true, true, DecoderKind::kEarlyGuide, PosEncKind::kVoteCenter);
  auto no_t2t = names_for(true, false, DecoderKind::kEarlyGuide, PosEncKind::kVoteCenter);
  auto no_enc = names_for(false, false, DecoderKind::kEarlyGuide, PosEncKind::kVoteCenter);
  auto late = names_for(false, false, DecoderKind::kLateGuide, PosEncKind::kVoteCenter);
  auto random_pe = names_for(true, true, DecoderKind::kEarlyGuide, PosEncKind::kRandom);

  CHECK(full.count("rph.1.w") == 1);
  CHECK(no_t2t.count("rph.1.w") == 0);
  CHECK(no_t2t.count("enc0.attn.q.w") == 1);
  CHECK(no_enc.count("enc0.attn.q.w") == 0);
  CHECK(late.count("dec0.cross.q.w") == 1);
  CHECK(full.count("dec0.cross.q.w") == 0);
  CHECK(full.count("pos.w1") == 1);
  CHECK(random_pe.count("pos.w1") == 0);
  CHECK(random_pe.count("pos.slots") == 1);
}

TEST_CASE("model construction is deterministic in the seed") {
  ModelConfig cfg = desk_config();
  Model a(cfg, 17), b(cfg, 17), c(cfg, 18);
  for (const auto& name : a.params().names()) {
    CHECK(a.params().entry(name).value.v == b.params().entry(name).value.v);
  }
  bool any_diff = false;
  for (const auto& name : a.params().names())
    if (a.params().entry(name).value.v != c.params().entry(name).value.v) any_diff = true;
  CHECK(any_diff);
}
