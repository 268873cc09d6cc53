#include "model.hpp"

#include <cmath>
#include <stdexcept>

namespace spacap {

PosEncKind pos_enc_kind_from_string(const std::string& s) {
  if (s == "none") return PosEncKind::kNone;
  if (s == "sinusoidal") return PosEncKind::kSinusoidal;
  if (s == "random") return PosEncKind::kRandom;
  if (s == "box_center") return PosEncKind::kBoxCenter;
  if (s == "box_center_size") return PosEncKind::kBoxCenterSize;
  if (s == "vote_center") return PosEncKind::kVoteCenter;
  throw std::invalid_argument("unknown positional encoding kind: " + s);
}

std::string to_string(PosEncKind k) {
  switch (k) {
    case PosEncKind::kNone: return "none";
    case PosEncKind::kSinusoidal: return "sinusoidal";
    case PosEncKind::kRandom: return "random";
    case PosEncKind::kBoxCenter: return "box_center";
    case PosEncKind::kBoxCenterSize: return "box_center_size";
    case PosEncKind::kVoteCenter: return "vote_center";
  }
  return "?";
}

DecoderKind decoder_kind_from_string(const std::string& s) {
  if (s == "early" || s == "early_guide") return DecoderKind::kEarlyGuide;
  if (s == "late" || s == "late_guide") return DecoderKind::kLateGuide;
  throw std::invalid_argument("unknown decoder kind: " + s);
}

std::string to_string(DecoderKind k) {
  return k == DecoderKind::kEarlyGuide ? "early_guide" : "late_guide";
}

void ModelConfig::validate() const {
  if (c_model == 0 || n_heads == 0 || c_model % n_heads != 0)
    throw std::invalid_argument("ModelConfig: c_model must divide by n_heads");
  if (vocab_size == 0) throw std::invalid_argument("ModelConfig: vocab_size unset");
  if (n_blocks == 0 || ffn_width == 0 || m_proposals == 0)
    throw std::invalid_argument("ModelConfig: zero-sized component");
  if (use_t2t && !use_encoder)
    throw std::invalid_argument("ModelConfig: relation supervision requires the encoder");
}

std::vector<std::uint8_t> build_target_aware_mask(std::size_t caption_len) {
  if (caption_len < 1) throw std::invalid_argument("build_target_aware_mask: L >= 1 required");
  std::size_t n = 1 + caption_len;
  std::vector<std::uint8_t> mask(n * n, 0);
  mask[0] = 1;  // target attends only itself
  for (std::size_t t = 1; t < n; ++t)
    for (std::size_t j = 0; j <= t; ++j) mask[t * n + j] = 1;
  return mask;
}

std::vector<std::uint8_t> build_causal_mask(std::size_t len) {
  std::vector<std::uint8_t> mask(len * len, 0);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t j = 0; j <= t; ++j) mask[t * len + j] = 1;
  return mask;
}

Tensor sinusoidal_encoding(std::size_t positions, std::size_t dim) {
  Tensor pe({positions, dim});
  for (std::size_t pos = 0; pos < positions; ++pos)
    for (std::size_t i = 0; i < dim; ++i) {
      double freq = std::pow(10000.0, -(double)(2 * (i / 2)) / (double)dim);
      pe.v[pos * dim + i] = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  return pe;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  init_params(seed);
}

void Model::init_params(std::uint64_t seed) {
  Rng rng(seed);
  auto xavier = [&rng](std::size_t fan_in, std::size_t fan_out) {
    double s = std::sqrt(6.0 / (double)(fan_in + fan_out));
    return [&rng, s]() { return rng.uniform(-s, s); };
  };
  auto zeros = []() { return 0.0; };
  auto ones = []() { return 1.0; };
  std::size_t C = cfg_.c_model;

  auto make_linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    ps_.create(name + ".w", {in, out}, xavier(in, out));
    ps_.create(name + ".b", {out}, zeros);
  };
  auto make_ln = [&](const std::string& name) {
    ps_.create(name + ".gamma", {C}, ones);
    ps_.create(name + ".beta", {C}, zeros);
  };
  auto make_attn = [&](const std::string& name) {
    make_linear(name + ".q", C, C);
    make_linear(name + ".k", C, C);
    make_linear(name + ".v", C, C);
    make_linear(name + ".o", C, C);
  };

  // detector surrogate
  std::size_t D = cfg_.descriptor_dim();
  make_linear("det.embed", D, C);
  make_linear("det.obj", C, 2);
  make_linear("det.cls", C, cfg_.num_classes);
  ps_.create("det.box.w", {C, 6}, zeros);
  ps_.create("det.box.b", {6}, zeros);

  // positional encoding
  switch (cfg_.pos_enc_kind) {
    case PosEncKind::kNone:
    case PosEncKind::kSinusoidal:
      break;
    case PosEncKind::kRandom:
      ps_.create("pos.slots", {cfg_.m_proposals, C}, xavier(cfg_.m_proposals, C));
      break;
    case PosEncKind::kBoxCenter:
    case PosEncKind::kVoteCenter:
      ps_.create("pos.w1", {3, C}, xavier(3, C));
      ps_.create("pos.w2", {C, C}, xavier(C, C));
      ps_.create("pos.bn.gamma", {C}, ones);
      ps_.create("pos.bn.beta", {C}, zeros);
      break;
    case PosEncKind::kBoxCenterSize:
      ps_.create("pos.w1", {6, C}, xavier(6, C));
      ps_.create("pos.w2", {C, C}, xavier(C, C));
      ps_.create("pos.bn.gamma", {C}, ones);
      ps_.create("pos.bn.beta", {C}, zeros);
      break;
  }

  if (cfg_.use_encoder) {
    for (std::size_t i = 0; i < cfg_.n_blocks; ++i) {
      std::string p = "enc" + std::to_string(i);
      make_ln(p + ".ln1");
      make_attn(p + ".attn");
      make_ln(p + ".ln2");
      make_linear(p + ".ffn.1", C, cfg_.ffn_width);
      make_linear(p + ".ffn.2", cfg_.ffn_width, C);
    }
    if (cfg_.use_t2t) {
      make_linear("rph.1", C, C);
      make_linear("rph.2", C, C);
      make_linear("rph.3", C, 9);
    }
  }

  ps_.create("dec.embed", {cfg_.vocab_size, C}, xavier(cfg_.vocab_size, C));
  for (std::size_t i = 0; i < cfg_.n_blocks; ++i) {
    std::string p = "dec" + std::to_string(i);
    make_ln(p + ".ln1");
    make_attn(p + ".attn");
    if (cfg_.decoder_kind == DecoderKind::kLateGuide) {
      make_ln(p + ".lnx");
      make_attn(p + ".cross");
    }
    make_ln(p + ".ln2");
    make_linear(p + ".ffn.1", C, cfg_.ffn_width);
    make_linear(p + ".ffn.2", cfg_.ffn_width, C);
  }
  make_linear("dec.out", C, cfg_.vocab_size);
}

Graph::Id Model::linear(Graph& g, Graph::Id x, const std::string& w, const std::string& b) const {
  auto& ps = const_cast<ParamStore&>(ps_);
  return g.add_rowvec(g.matmul(x, g.param(ps, w)), g.param(ps, b));
}

Graph::Id Model::embed_features(Graph& g, Graph::Id descriptors) const {
  return linear(g, descriptors, "det.embed.w", "det.embed.b");
}

Graph::Id Model::objectness_logits(Graph& g, Graph::Id features) const {
  return linear(g, features, "det.obj.w", "det.obj.b");
}

Graph::Id Model::class_logits(Graph& g, Graph::Id features) const {
  return linear(g, features, "det.cls.w", "det.cls.b");
}

Graph::Id Model::box_deltas(Graph& g, Graph::Id features) const {
  return linear(g, features, "det.box.w", "det.box.b");
}

Graph::Id Model::positional_encode_votes(Graph& g, Graph::Id centers, bool training) {
  Graph::Id h = g.matmul(centers, g.param(ps_, "pos.w1"));
  h = g.batch_norm(h, g.param(ps_, "pos.bn.gamma"), g.param(ps_, "pos.bn.beta"), bn_["pos.bn"],
                   training);
  h = g.relu(h);
  return g.matmul(h, g.param(ps_, "pos.w2"));
}

Graph::Id Model::make_positional_encoding(Graph& g, const ProposalBatch& batch, bool training) {
  std::size_t M = batch.boxes.size();
  std::size_t C = cfg_.c_model;
  switch (cfg_.pos_enc_kind) {
    case PosEncKind::kNone:
      return g.constant(Tensor({M, C}));
    case PosEncKind::kSinusoidal:
      return g.constant(sinusoidal_encoding(M, C));
    case PosEncKind::kRandom: {
      Graph::Id slots = g.param(ps_, "pos.slots");
      if (M == cfg_.m_proposals) return slots;
      return g.slice_rows(slots, 0, M);
    }
    case PosEncKind::kBoxCenter: {
      Tensor centers({M, 3});
      for (std::size_t i = 0; i < M; ++i)
        for (int a = 0; a < 3; ++a) centers.v[i * 3 + a] = batch.boxes[i].center[a];
      return positional_encode_votes(g, g.constant(std::move(centers)), training);
    }
    case PosEncKind::kBoxCenterSize: {
      Tensor params({M, 6});
      for (std::size_t i = 0; i < M; ++i)
        for (int a = 0; a < 3; ++a) {
          params.v[i * 6 + a] = batch.boxes[i].center[a];
          params.v[i * 6 + 3 + a] = batch.boxes[i].size[a];
        }
      return positional_encode_votes(g, g.constant(std::move(params)), training);
    }
    case PosEncKind::kVoteCenter: {
      Tensor centers({M, 3});
      for (std::size_t i = 0; i < M; ++i)
        for (int a = 0; a < 3; ++a) centers.v[i * 3 + a] = batch.centers[i][a];
      return positional_encode_votes(g, g.constant(std::move(centers)), training);
    }
  }
  throw std::invalid_argument("make_positional_encoding: unknown kind");
}

Graph::Id Model::attention_block(Graph& g, Graph::Id x, const std::string& prefix,
                                 const std::vector<std::uint8_t>& mask,
                                 std::vector<Graph::Id>* head_weights,
                                 std::vector<Graph::Id>* head_values) const {
  std::size_t d = cfg_.head_dim();
  double scale = 1.0 / std::sqrt((double)d);
  Graph::Id q = linear(g, x, prefix + ".q.w", prefix + ".q.b");
  Graph::Id k = linear(g, x, prefix + ".k.w", prefix + ".k.b");
  Graph::Id v = linear(g, x, prefix + ".v.w", prefix + ".v.b");
  std::vector<Graph::Id> outs;
  for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
    Graph::Id qh = g.slice_cols(q, h * d, d);
    Graph::Id kh = g.slice_cols(k, h * d, d);
    Graph::Id vh = g.slice_cols(v, h * d, d);
    Graph::Id scores = g.scale(g.matmul(qh, kh, false, true), scale);
    Graph::Id attn = g.softmax_masked(scores, mask);
    if (head_weights) head_weights->push_back(attn);
    if (head_values) head_values->push_back(vh);
    outs.push_back(g.matmul(attn, vh));
  }
  Graph::Id cat = g.concat_cols(outs);
  return linear(g, cat, prefix + ".o.w", prefix + ".o.b");
}

Graph::Id Model::ffn_block(Graph& g, Graph::Id x, const std::string& prefix) const {
  Graph::Id h = g.relu(linear(g, x, prefix + ".1.w", prefix + ".1.b"));
  return linear(g, h, prefix + ".2.w", prefix + ".2.b");
}

EncoderOutput Model::encode(Graph& g, Graph::Id tokens) const {
  EncoderOutput out;
  Graph::Id x = tokens;
  auto& ps = const_cast<ParamStore&>(ps_);
  for (std::size_t i = 0; i < cfg_.n_blocks; ++i) {
    std::string p = "enc" + std::to_string(i);
    bool last = i + 1 == cfg_.n_blocks;
    Graph::Id normed = g.layer_norm(x, g.param(ps, p + ".ln1.gamma"), g.param(ps, p + ".ln1.beta"));
    std::vector<Graph::Id> hw, hv;
    Graph::Id attn_out = attention_block(g, normed, p + ".attn", {}, &hw, &hv);
    out.attention.push_back(hw);
    if (last) {
      out.last_head_weights = hw;
      out.last_head_values = hv;
    }
    x = g.add(x, attn_out);
    Graph::Id normed2 = g.layer_norm(x, g.param(ps, p + ".ln2.gamma"), g.param(ps, p + ".ln2.beta"));
    x = g.add(x, ffn_block(g, normed2, p + ".ffn"));
  }
  out.tokens = x;
  if (cfg_.use_t2t) {
    out.pair_features = pair_contributions(g, out.last_head_weights, out.last_head_values);
    out.relation_logits = rph(g, out.pair_features);
  }
  return out;
}

Graph::Id Model::pair_contributions(Graph& g, const std::vector<Graph::Id>& head_weights,
                                    const std::vector<Graph::Id>& head_values) {
  std::vector<Graph::Id> parts;
  for (std::size_t h = 0; h < head_weights.size(); ++h)
    parts.push_back(g.pair_scale(head_weights[h], head_values[h]));
  return g.concat_cols(parts);
}

Graph::Id Model::rph(Graph& g, Graph::Id pair_features) const {
  Graph::Id h = g.relu(linear(g, pair_features, "rph.1.w", "rph.1.b"));
  h = g.relu(linear(g, h, "rph.2.w", "rph.2.b"));
  return linear(g, h, "rph.3.w", "rph.3.b");
}

Graph::Id Model::word_sequence(Graph& g, const std::vector<int>& words) const {
  std::vector<std::size_t> idx;
  for (int w : words) {
    if (w < 0 || (std::size_t)w >= cfg_.vocab_size)
      throw std::invalid_argument("word id out of vocabulary range");
    idx.push_back((std::size_t)w);
  }
  auto& ps = const_cast<ParamStore&>(ps_);
  Graph::Id emb = g.gather_rows(g.param(ps, "dec.embed"), idx);
  return g.add(emb, g.constant(sinusoidal_encoding(words.size(), cfg_.c_model)));
}

Graph::Id Model::cross_target_block(Graph& g, Graph::Id x, Graph::Id target,
                                    const std::string& prefix) const {
  std::size_t d = cfg_.head_dim();
  double scale = 1.0 / std::sqrt((double)d);
  Graph::Id q = linear(g, x, prefix + ".q.w", prefix + ".q.b");
  Graph::Id k = linear(g, target, prefix + ".k.w", prefix + ".k.b");
  Graph::Id v = linear(g, target, prefix + ".v.w", prefix + ".v.b");
  std::vector<Graph::Id> outs;
  for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
    Graph::Id qh = g.slice_cols(q, h * d, d);
    Graph::Id kh = g.slice_cols(k, h * d, d);
    Graph::Id vh = g.slice_cols(v, h * d, d);
    Graph::Id scores = g.scale(g.matmul(qh, kh, false, true), scale);  // L x 1
    Graph::Id attn = g.softmax_masked(scores, {});
    outs.push_back(g.matmul(attn, vh));
  }
  Graph::Id cat = g.concat_cols(outs);
  return linear(g, cat, prefix + ".o.w", prefix + ".o.b");
}

DecoderOutput Model::decode_teacher_forced(Graph& g, Graph::Id target_token,
                                           const std::vector<int>& words) const {
  std::size_t L = words.size();
  if (L < 1) throw std::invalid_argument("decode_teacher_forced: empty word sequence");
  if (L > cfg_.max_caption_len)
    throw std::invalid_argument("decode_teacher_forced: caption exceeds max length");
  auto& ps = const_cast<ParamStore&>(ps_);
  DecoderOutput out;
  Graph::Id wemb = word_sequence(g, words);

  if (cfg_.decoder_kind == DecoderKind::kEarlyGuide) {
    Graph::Id x = g.concat_rows({target_token, wemb});
    auto mask = build_target_aware_mask(L);
    std::vector<Graph::Id> last_hw;
    for (std::size_t i = 0; i < cfg_.n_blocks; ++i) {
      std::string p = "dec" + std::to_string(i);
      Graph::Id n1 = g.layer_norm(x, g.param(ps, p + ".ln1.gamma"), g.param(ps, p + ".ln1.beta"));
      std::vector<Graph::Id> hw;
      Graph::Id a = attention_block(g, n1, p + ".attn", mask, &hw, nullptr);
      if (i + 1 == cfg_.n_blocks) last_hw = hw;
      x = g.add(x, a);
      Graph::Id n2 = g.layer_norm(x, g.param(ps, p + ".ln2.gamma"), g.param(ps, p + ".ln2.beta"));
      x = g.add(x, ffn_block(g, n2, p + ".ffn"));
    }
    Graph::Id word_states = g.slice_rows(x, 1, L);
    out.logits = linear(g, word_states, "dec.out.w", "dec.out.b");
    out.target_attention.assign(L, std::vector<double>(cfg_.n_heads, 0.0));
    for (std::size_t h = 0; h < last_hw.size(); ++h) {
      const Tensor& attn = g.value(last_hw[h]);
      for (std::size_t t = 0; t < L; ++t)
        out.target_attention[t][h] = attn.at(t + 1, 0);
    }
  } else {
    Graph::Id x = wemb;
    auto mask = build_causal_mask(L);
    for (std::size_t i = 0; i < cfg_.n_blocks; ++i) {
      std::string p = "dec" + std::to_string(i);
      Graph::Id n1 = g.layer_norm(x, g.param(ps, p + ".ln1.gamma"), g.param(ps, p + ".ln1.beta"));
      x = g.add(x, attention_block(g, n1, p + ".attn", mask, nullptr, nullptr));
      Graph::Id nx = g.layer_norm(x, g.param(ps, p + ".lnx.gamma"), g.param(ps, p + ".lnx.beta"));
      x = g.add(x, cross_target_block(g, nx, target_token, p + ".cross"));
      Graph::Id n2 = g.layer_norm(x, g.param(ps, p + ".ln2.gamma"), g.param(ps, p + ".ln2.beta"));
      x = g.add(x, ffn_block(g, n2, p + ".ffn"));
    }
    out.logits = linear(g, x, "dec.out.w", "dec.out.b");
    // single-token cross attention: weight is exactly 1 per head
    out.target_attention.assign(L, std::vector<double>(cfg_.n_heads, 1.0));
  }
  return out;
}

std::vector<int> Model::greedy_decode(Graph& g, Graph::Id target_token) const {
  std::vector<int> words{Vocabulary::kSos};
  while (words.size() < cfg_.max_caption_len) {
    DecoderOutput out = decode_teacher_forced(g, target_token, words);
    const Tensor& logits = g.value(out.logits);
    std::size_t V = logits.cols();
    std::size_t last = logits.rows() - 1;
    int best = 0;
    double best_v = logits.at(last, 0);
    for (std::size_t j = 1; j < V; ++j)
      if (logits.at(last, j) > best_v) {
        best_v = logits.at(last, j);
        best = (int)j;
      }
    words.push_back(best);
    if (best == Vocabulary::kEos) break;
  }
  return words;
}

std::vector<Tensor> Model::last_block_attention(const Graph& g, const EncoderOutput& enc) {
  std::vector<Tensor> out;
  for (Graph::Id id : enc.last_head_weights) out.push_back(g.value(id));
  return out;
}

}  // namespace spacap
