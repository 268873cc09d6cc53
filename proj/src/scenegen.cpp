#include "scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace spacap {

using nlohmann::json;

namespace {

const std::vector<std::string> kClasses = {"chair", "table", "couch",   "bed",
                                           "lamp",  "shelf", "monitor", "box"};
const std::vector<std::string> kColors = {"red", "green", "blue", "white", "black", "brown"};
const std::vector<std::string> kGrammar = {"this", "is",    "a",     ".",   "it",  "left",
                                           "right", "of",   "behind", "in",  "front",
                                           "above", "below", "and",   "next", "to",  "the"};

constexpr std::size_t kCaptionLen = 30;

}  // namespace

const std::vector<std::string>& Vocabulary::class_names() { return kClasses; }
const std::vector<std::string>& Vocabulary::color_names() { return kColors; }

Vocabulary::Vocabulary() {
  words_ = {"<pad>", "<sos>", "<eos>", "<unk>"};
  for (const auto& w : kGrammar) words_.push_back(w);
  for (const auto& w : kColors) words_.push_back(w);
  for (const auto& w : kClasses) words_.push_back(w);
  for (std::size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = (int)i;
}

int Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || (std::size_t)id >= words_.size())
    throw std::invalid_argument("Vocabulary: id out of range");
  return words_[id];
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
  std::vector<int> out{kSos};
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back(id(w));
  out.push_back(kEos);
  return out;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kPad || id == kSos) continue;
    if (id == kEos) break;
    if (!out.empty()) out += ' ';
    out += word(id);
  }
  return out;
}

Scene generate_scene(std::uint64_t seed, const SceneGenConfig& cfg) {
  if (cfg.num_classes == 0 || cfg.num_colors == 0 || cfg.num_classes > kClasses.size() ||
      cfg.num_colors > kColors.size())
    throw std::invalid_argument("generate_scene: bad palette sizes");
  Rng rng(seed);
  Scene scene;
  scene.scene_id = "scene-" + std::to_string(seed);
  scene.floor_min_x = scene.floor_min_y = -cfg.floor_half;
  scene.floor_max_x = scene.floor_max_y = cfg.floor_half;
  std::size_t span = cfg.max_objects - cfg.min_objects + 1;
  std::size_t n = cfg.min_objects + rng.uniform_int(span);
  for (std::size_t k = 0; k < n; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 300 && !placed; ++attempt) {
      Aabb box;
      box.size = {rng.uniform(0.3, 1.2), rng.uniform(0.3, 1.2), rng.uniform(0.3, 1.2)};
      box.center[0] = rng.uniform(-cfg.floor_half + box.size[0] / 2, cfg.floor_half - box.size[0] / 2);
      box.center[1] = rng.uniform(-cfg.floor_half + box.size[1] / 2, cfg.floor_half - box.size[1] / 2);
      box.center[2] = box.size[2] / 2;
      if (rng.uniform() < cfg.elevated_prob) box.center[2] += rng.uniform(0.5, 2.0);
      box.class_id = (int)rng.uniform_int(cfg.num_classes);
      box.color_id = (int)rng.uniform_int(cfg.num_colors);
      bool ok = true;
      for (const auto& other : scene.objects)
        if (iou_aabb(box, other) > cfg.max_pair_iou) {
          ok = false;
          break;
        }
      if (ok) {
        scene.objects.push_back(box);
        placed = true;
      }
    }
    if (!placed)
      throw std::runtime_error("generate_scene: placement failed after retries; use a larger floor");
  }
  return scene;
}

std::string relation_phrase(const RelationTriplet& t) {
  std::vector<std::string> parts;
  if (t.lx == 1) parts.push_back("right of");
  if (t.lx == -1) parts.push_back("left of");
  if (t.ly == 1) parts.push_back("behind");
  if (t.ly == -1) parts.push_back("in front of");
  if (t.lz == 1) parts.push_back("above");
  if (t.lz == -1) parts.push_back("below");
  if (parts.empty()) return "next to";
  std::string out = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) out += " and " + parts[i];
  return out;
}

CaptionRecord render_caption(const Scene& scene, std::size_t object_index,
                             const RelationParams& p, const Vocabulary& vocab) {
  if (scene.objects.size() < 2)
    throw std::invalid_argument("render_caption: scene needs at least 2 objects");
  const Aabb& obj = scene.objects[object_index];
  std::size_t nearest = object_index == 0 ? 1 : 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < scene.objects.size(); ++j) {
    if (j == object_index) continue;
    double d2 = 0;
    for (int k = 0; k < 3; ++k) {
      double d = obj.center[k] - scene.objects[j].center[k];
      d2 += d * d;
    }
    if (d2 < best) {
      best = d2;
      nearest = j;
    }
  }
  const Aabb& ref = scene.objects[nearest];
  RelationTriplet t = classify_relation(obj, ref, p);
  std::string text = "this is a " + kColors[obj.color_id] + " " + kClasses[obj.class_id] +
                     " . it is " + relation_phrase(t) + " the " + kColors[ref.color_id] + " " +
                     kClasses[ref.class_id] + " .";
  CaptionRecord rec;
  rec.scene_id = scene.scene_id;
  rec.object_index = object_index;
  rec.text = text;
  rec.tokens = vocab.tokenize(text);
  if (rec.tokens.size() > kCaptionLen)
    throw std::runtime_error("render_caption: caption exceeds 30 tokens");
  rec.tokens.resize(kCaptionLen, Vocabulary::kPad);
  return rec;
}

std::size_t descriptor_dim(const SceneGenConfig& cfg) {
  return 6 + cfg.num_classes + cfg.num_colors + 4;
}

ProposalBatch simulate_proposals(const Scene& scene, double noise_sigma, std::size_t m,
                                 const SceneGenConfig& cfg, Rng& rng) {
  std::size_t n = scene.objects.size();
  if (m < n) throw std::invalid_argument("simulate_proposals: m smaller than object count");
  std::size_t D = descriptor_dim(cfg);
  ProposalBatch batch;
  batch.descriptors = Tensor({m, D});
  for (std::size_t k = 0; k < m; ++k) {
    std::size_t src = k < n ? k : rng.uniform_int(n);
    const Aabb& gt = scene.objects[src];
    Aabb box = gt;
    for (int a = 0; a < 3; ++a) {
      box.center[a] += rng.normal(0.0, noise_sigma);
      box.size[a] = std::max(0.05, box.size[a] + rng.normal(0.0, noise_sigma));
    }
    batch.boxes.push_back(box);
    batch.centers.push_back(box.center);
    double* row = &batch.descriptors.v[k * D];
    for (int a = 0; a < 3; ++a) row[a] = box.center[a];
    for (int a = 0; a < 3; ++a) row[3 + a] = box.size[a];
    row[6 + gt.class_id] = 1.0;
    row[6 + cfg.num_classes + gt.color_id] = 1.0;
    for (int a = 0; a < 4; ++a)
      row[6 + cfg.num_classes + cfg.num_colors + a] = rng.normal(0.0, 0.01);
  }
  batch.gt_assignment = assign_nearest_gt(batch.centers, scene.objects);
  return batch;
}

AugmentDraw sample_augment(Rng& rng) {
  AugmentDraw d;
  d.flip_yz = rng.coin();
  d.flip_xz = rng.coin();
  for (int a = 0; a < 3; ++a) d.angles_deg[a] = rng.uniform(-5.0, 5.0);
  for (int a = 0; a < 3; ++a) d.shift[a] = rng.uniform(-0.5, 0.5);
  return d;
}

namespace {

Vec3 rotate_xyz(const Vec3& v, const Vec3& angles_rad) {
  Vec3 r = v;
  // x-axis
  {
    double c = std::cos(angles_rad[0]), s = std::sin(angles_rad[0]);
    r = {r[0], c * r[1] - s * r[2], s * r[1] + c * r[2]};
  }
  // y-axis
  {
    double c = std::cos(angles_rad[1]), s = std::sin(angles_rad[1]);
    r = {c * r[0] + s * r[2], r[1], -s * r[0] + c * r[2]};
  }
  // z-axis
  {
    double c = std::cos(angles_rad[2]), s = std::sin(angles_rad[2]);
    r = {c * r[0] - s * r[1], s * r[0] + c * r[1], r[2]};
  }
  return r;
}

}  // namespace

Scene augment(const Scene& scene, const AugmentDraw& draw) {
  Scene out = scene;
  Vec3 rad{draw.angles_deg[0] * M_PI / 180.0, draw.angles_deg[1] * M_PI / 180.0,
           draw.angles_deg[2] * M_PI / 180.0};
  for (auto& box : out.objects) {
    Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
    for (int corner = 0; corner < 8; ++corner) {
      Vec3 c;
      for (int a = 0; a < 3; ++a)
        c[a] = box.center[a] + ((corner >> a) & 1 ? 0.5 : -0.5) * box.size[a];
      if (draw.flip_yz) c[0] = -c[0];
      if (draw.flip_xz) c[1] = -c[1];
      c = rotate_xyz(c, rad);
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], c[a]);
        hi[a] = std::max(hi[a], c[a]);
      }
    }
    for (int a = 0; a < 3; ++a) {
      box.center[a] = (lo[a] + hi[a]) / 2 + draw.shift[a];
      box.size[a] = hi[a] - lo[a];
    }
  }
  // refit floor rectangle to cover the transformed objects
  double fx0 = 1e300, fy0 = 1e300, fx1 = -1e300, fy1 = -1e300;
  for (const auto& box : out.objects) {
    fx0 = std::min(fx0, box.min(0));
    fy0 = std::min(fy0, box.min(1));
    fx1 = std::max(fx1, box.max(0));
    fy1 = std::max(fy1, box.max(1));
  }
  out.floor_min_x = std::min(scene.floor_min_x, fx0);
  out.floor_min_y = std::min(scene.floor_min_y, fy0);
  out.floor_max_x = std::max(scene.floor_max_x, fx1);
  out.floor_max_y = std::max(scene.floor_max_y, fy1);
  return out;
}

Scene augment(const Scene& scene, Rng& rng) { return augment(scene, sample_augment(rng)); }

namespace {

json box_to_json(const Aabb& b) {
  return json{{"center", {b.center[0], b.center[1], b.center[2]}},
              {"size", {b.size[0], b.size[1], b.size[2]}},
              {"class", b.class_id},
              {"color", b.color_id}};
}

Aabb box_from_json(const json& j) {
  Aabb b;
  for (int a = 0; a < 3; ++a) {
    b.center[a] = j.at("center").at(a).get<double>();
    b.size[a] = j.at("size").at(a).get<double>();
  }
  b.class_id = j.at("class").get<int>();
  b.color_id = j.at("color").get<int>();
  if (!b.valid()) throw std::invalid_argument("box: non-positive size");
  return b;
}

json scene_to_j(const Scene& s) {
  json objs = json::array();
  for (const auto& b : s.objects) objs.push_back(box_to_json(b));
  return json{{"scene_id", s.scene_id},
              {"floor", {s.floor_min_x, s.floor_min_y, s.floor_max_x, s.floor_max_y}},
              {"objects", objs}};
}

Scene scene_from_j(const json& j) {
  Scene s;
  s.scene_id = j.at("scene_id").get<std::string>();
  s.floor_min_x = j.at("floor").at(0).get<double>();
  s.floor_min_y = j.at("floor").at(1).get<double>();
  s.floor_max_x = j.at("floor").at(2).get<double>();
  s.floor_max_y = j.at("floor").at(3).get<double>();
  for (const auto& o : j.at("objects")) s.objects.push_back(box_from_json(o));
  return s;
}

json caption_to_j(const CaptionRecord& c) {
  return json{{"scene_id", c.scene_id},
              {"object_index", c.object_index},
              {"tokens", c.tokens},
              {"text", c.text}};
}

CaptionRecord caption_from_j(const json& j) {
  CaptionRecord c;
  c.scene_id = j.at("scene_id").get<std::string>();
  c.object_index = j.at("object_index").get<std::size_t>();
  c.tokens = j.at("tokens").get<std::vector<int>>();
  c.text = j.at("text").get<std::string>();
  return c;
}

}  // namespace

std::string scene_to_json(const Scene& scene) { return scene_to_j(scene).dump(); }

Scene scene_from_json(const std::string& text) { return scene_from_j(json::parse(text)); }

void write_dataset(const std::string& path, const std::vector<SceneRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_dataset: cannot open " + path);
  for (const auto& rec : records) {
    json caps = json::array();
    for (const auto& c : rec.captions) caps.push_back(caption_to_j(c));
    out << json{{"scene", scene_to_j(rec.scene)}, {"captions", caps}}.dump() << '\n';
  }
}

std::vector<SceneRecord> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_dataset: cannot open " + path);
  std::vector<SceneRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      SceneRecord rec;
      rec.scene = scene_from_j(j.at("scene"));
      for (const auto& c : j.at("captions")) rec.captions.push_back(caption_from_j(c));
      out.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw std::runtime_error("read_dataset: line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace spacap
