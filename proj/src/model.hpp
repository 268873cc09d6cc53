#pragma once

#include <string>
#include <vector>

#include "autodiff.hpp"
#include "geom3d.hpp"
#include "scenegen.hpp"

namespace spacap {

enum class PosEncKind { kNone, kSinusoidal, kRandom, kBoxCenter, kBoxCenterSize, kVoteCenter };
enum class DecoderKind { kEarlyGuide, kLateGuide };

PosEncKind pos_enc_kind_from_string(const std::string& s);
std::string to_string(PosEncKind k);
DecoderKind decoder_kind_from_string(const std::string& s);
std::string to_string(DecoderKind k);

struct ModelConfig {
  std::size_t c_model = 64;
  std::size_t n_blocks = 2;
  std::size_t n_heads = 4;
  std::size_t ffn_width = 256;
  std::size_t vocab_size = 0;  // filled from the vocabulary
  std::size_t max_caption_len = 30;
  PosEncKind pos_enc_kind = PosEncKind::kVoteCenter;
  DecoderKind decoder_kind = DecoderKind::kEarlyGuide;
  bool use_encoder = true;
  bool use_t2t = true;
  std::size_t m_proposals = 16;
  std::size_t num_classes = 8;
  std::size_t num_colors = 6;

  std::size_t head_dim() const { return c_model / n_heads; }
  std::size_t descriptor_dim() const { return 6 + num_classes + num_colors + 4; }
  void validate() const;
};

// Target-aware mask for a target token plus L word positions. Row-major
// (1+L)x(1+L), nonzero = attend. Word position t attends {target, 1..t};
// the target attends only itself.
std::vector<std::uint8_t> build_target_aware_mask(std::size_t caption_len);

// Plain causal LxL mask.
std::vector<std::uint8_t> build_causal_mask(std::size_t len);

struct EncoderOutput {
  Graph::Id tokens = -1;                          // M x C
  std::vector<std::vector<Graph::Id>> attention;  // per block, per head: M x M
  std::vector<Graph::Id> last_head_weights;       // last block, per head: M x M
  std::vector<Graph::Id> last_head_values;        // last block, per head: M x d
  Graph::Id pair_features = -1;                   // (M*M) x C, only if use_t2t
  Graph::Id relation_logits = -1;                 // (M*M) x 9, only if use_t2t
};

struct DecoderOutput {
  Graph::Id logits = -1;  // L x vocab, position t predicts input word t+1
  // Per-head attention of each word position onto the target token, from the
  // last decoder block (early guide: self-attention column 0; late guide:
  // cross-attention weight, identically 1).
  std::vector<std::vector<double>> target_attention;  // L rows x H
};

// The captioning network plus the detector-surrogate heads. Owns all
// parameters, ADAM state, and batch-norm running statistics.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  std::map<std::string, BatchNormState>& bn_states() { return bn_; }

  // Detector surrogate: descriptor embedding + objectness/class/box heads.
  Graph::Id embed_features(Graph& g, Graph::Id descriptors) const;  // M x C
  Graph::Id objectness_logits(Graph& g, Graph::Id features) const;  // M x 2
  Graph::Id class_logits(Graph& g, Graph::Id features) const;       // M x K
  Graph::Id box_deltas(Graph& g, Graph::Id features) const;         // M x 6

  // Eq.1-style projection: linear -> BN -> ReLU -> linear.
  Graph::Id positional_encode_votes(Graph& g, Graph::Id centers, bool training);

  Graph::Id make_positional_encoding(Graph& g, const ProposalBatch& batch, bool training);

  EncoderOutput encode(Graph& g, Graph::Id tokens) const;

  // g[i][j] = concatenation over heads of w_h[i][j] * v_h[j].
  static Graph::Id pair_contributions(Graph& g, const std::vector<Graph::Id>& head_weights,
                                      const std::vector<Graph::Id>& head_values);

  // Shared 3-layer MLP over pair features; 9 logits = three 3-way axis
  // groups ordered (x, y, z), classes ordered (-1, 0, +1).
  Graph::Id rph(Graph& g, Graph::Id pair_features) const;

  DecoderOutput decode_teacher_forced(Graph& g, Graph::Id target_token,
                                      const std::vector<int>& words) const;

  std::vector<int> greedy_decode(Graph& g, Graph::Id target_token) const;

  // Numeric copies of the last encoder block's per-head attention.
  static std::vector<Tensor> last_block_attention(const Graph& g, const EncoderOutput& enc);

 private:
  ModelConfig cfg_;
  ParamStore ps_;
  std::map<std::string, BatchNormState> bn_;

  void init_params(std::uint64_t seed);
  Graph::Id attention_block(Graph& g, Graph::Id x, const std::string& prefix,
                            const std::vector<std::uint8_t>& mask,
                            std::vector<Graph::Id>* head_weights,
                            std::vector<Graph::Id>* head_values) const;
  Graph::Id ffn_block(Graph& g, Graph::Id x, const std::string& prefix) const;
  Graph::Id cross_target_block(Graph& g, Graph::Id x, Graph::Id target,
                               const std::string& prefix) const;
  Graph::Id linear(Graph& g, Graph::Id x, const std::string& w, const std::string& b) const;
  Graph::Id word_sequence(Graph& g, const std::vector<int>& words) const;

  friend class ModelIo;
};

Tensor sinusoidal_encoding(std::size_t positions, std::size_t dim);

}  // namespace spacap
