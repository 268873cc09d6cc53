#pragma once

#include <optional>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "geom3d.hpp"
#include "rng.hpp"

namespace spacap {

// Closed template vocabulary. UNK is kept for robustness on external data
// but is never produced by the generator.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kSos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Vocabulary();

  int id(const std::string& word) const;        // UNK if absent
  const std::string& word(int id) const;
  std::size_t size() const { return words_.size(); }

  std::vector<int> tokenize(const std::string& text) const;  // adds SOS/EOS
  std::string detokenize(const std::vector<int>& ids) const; // strips specials

  static const std::vector<std::string>& class_names();
  static const std::vector<std::string>& color_names();

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

struct Scene {
  std::string scene_id;
  std::vector<Aabb> objects;
  double floor_min_x = -4, floor_min_y = -4, floor_max_x = 4, floor_max_y = 4;
};

struct CaptionRecord {
  std::string scene_id;
  std::size_t object_index = 0;
  std::vector<int> tokens;  // SOS ... EOS, then PAD up to caption length
  std::string text;
};

struct SceneRecord {
  Scene scene;
  std::vector<CaptionRecord> captions;
};

struct SceneGenConfig {
  std::size_t min_objects = 3;
  std::size_t max_objects = 5;
  double floor_half = 4.0;
  double max_pair_iou = 0.3;
  double elevated_prob = 0.3;  // chance an object floats above the floor
  std::size_t num_classes = 8;
  std::size_t num_colors = 6;
};

Scene generate_scene(std::uint64_t seed, const SceneGenConfig& cfg);

// Template caption for one object against its nearest neighbor; relation
// phrase derived from classify_relation.
CaptionRecord render_caption(const Scene& scene, std::size_t object_index,
                             const RelationParams& p, const Vocabulary& vocab);

std::string relation_phrase(const RelationTriplet& t);

// Simulated detector output: jittered copies of ground-truth boxes plus a
// raw per-proposal descriptor the model embeds into features.
struct ProposalBatch {
  std::vector<Aabb> boxes;          // jittered boxes (detector surrogate output)
  std::vector<Vec3> centers;        // jittered centers, the vote-center analog
  Tensor descriptors;               // M x D raw descriptor matrix
  std::vector<std::size_t> gt_assignment;
};

std::size_t descriptor_dim(const SceneGenConfig& cfg);

ProposalBatch simulate_proposals(const Scene& scene, double noise_sigma, std::size_t m,
                                 const SceneGenConfig& cfg, Rng& rng);

struct AugmentDraw {
  bool flip_yz = false;  // mirror x
  bool flip_xz = false;  // mirror y
  Vec3 angles_deg{0, 0, 0};
  Vec3 shift{0, 0, 0};
};

AugmentDraw sample_augment(Rng& rng);
Scene augment(const Scene& scene, const AugmentDraw& draw);
Scene augment(const Scene& scene, Rng& rng);

void write_dataset(const std::string& path, const std::vector<SceneRecord>& records);
std::vector<SceneRecord> read_dataset(const std::string& path);

std::string scene_to_json(const Scene& scene);
Scene scene_from_json(const std::string& text);

}  // namespace spacap
