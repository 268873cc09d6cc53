// Command-line front end. Talks to the core exclusively through the C API.
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "spacap/spacap.h"

using nlohmann::json;

namespace {

template <typename Fn>
int report(Fn&& call) {
  char* out = nullptr;
  spacap_status st = call(&out);
  if (st == SPACAP_OK) {
    if (out) std::cout << out << '\n';
  } else {
    std::cerr << "error: " << spacap_last_error() << '\n';
  }
  spacap_string_free(out);
  return (int)st;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "error: cannot read " << path << '\n';
    std::exit(2);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json load_config(const std::string& config_path) {
  if (config_path.empty()) return json::object();
  return json::parse(read_file(config_path));
}

// Named model presets for the ablation ladder.
void apply_ablation(json& model, const std::string& name) {
  if (name.empty()) return;
  if (name == "model-a") {
    model["decoder_kind"] = "late_guide";
    model["use_encoder"] = false;
    model["use_t2t"] = false;
  } else if (name == "model-b") {
    model["decoder_kind"] = "early_guide";
    model["use_encoder"] = false;
    model["use_t2t"] = false;
  } else if (name == "model-c" || name == "no-t2t") {
    model["decoder_kind"] = "early_guide";
    model["use_encoder"] = true;
    model["use_t2t"] = false;
    model["pos_enc_kind"] = "vote_center";
  } else if (name == "model-d") {
    model["decoder_kind"] = "early_guide";
    model["use_encoder"] = true;
    model["use_t2t"] = true;
    model["pos_enc_kind"] = "vote_center";
  } else {
    std::cerr << "error: unknown ablation preset '" << name << "'\n";
    std::exit(2);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spacap3d: spatiality-guided 3D dense captioning on synthetic desk scenes"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a captioned synthetic dataset (JSONL)");
  std::string gen_out, gen_config;
  std::uint64_t gen_seed = 0;
  std::size_t gen_n = 100;
  gen->add_option("--out", gen_out, "Output dataset path")->required();
  gen->add_option("--seed", gen_seed, "RNG seed");
  gen->add_option("--num-scenes", gen_n, "Number of scenes");
  gen->add_option("--config", gen_config, "JSON config file (overridden by flags)");

  // train
  auto* tr = app.add_subcommand("train", "Train a model");
  std::string tr_train, tr_val, tr_out, tr_config, tr_ablation, tr_pos, tr_dec;
  std::uint64_t tr_seed = 0;
  bool tr_seed_set = false;
  std::size_t tr_m = 0;
  double tr_noise = -1;
  tr->add_option("--train", tr_train, "Training dataset (JSONL)")->required();
  tr->add_option("--val", tr_val, "Validation dataset (JSONL)")->required();
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--config", tr_config, "JSON config file {\"model\":{},\"train\":{}}");
  tr->add_option("--ablation", tr_ablation, "Preset: model-a|model-b|model-c|model-d|no-t2t");
  tr->add_option("--pos-enc", tr_pos,
                 "none|sinusoidal|random|box_center|box_center_size|vote_center");
  tr->add_option("--decoder", tr_dec, "early_guide|late_guide");
  tr->add_option("--seed", tr_seed, "RNG seed")->each([&](const std::string&) {
    tr_seed_set = true;
  });
  tr->add_option("--m", tr_m, "Proposals per scene");
  tr->add_option("--noise-sigma", tr_noise, "Proposal jitter sigma");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_out, ev_config;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", ev_data, "Dataset (JSONL)")->required();
  ev->add_option("--out", ev_out, "Report output path (optional)");
  ev->add_option("--config", ev_config, "JSON config file");

  // caption
  auto* cap = app.add_subcommand("caption", "Caption the proposals of one scene");
  std::string cap_ckpt, cap_scene, cap_config;
  cap->add_option("--checkpoint", cap_ckpt, "Checkpoint file")->required();
  cap->add_option("--scene", cap_scene, "Scene JSON file")->required();
  cap->add_option("--config", cap_config, "JSON config file");

  // relations
  auto* rel = app.add_subcommand("relations", "Pairwise relation labels of a scene");
  std::string rel_scene;
  rel->add_option("--scene", rel_scene, "Scene JSON file")->required();

  // attn-dump
  auto* att = app.add_subcommand("attn-dump", "Dump encoder/decoder attention for a scene");
  std::string att_ckpt, att_scene, att_config;
  std::size_t att_target = 0;
  att->add_option("--checkpoint", att_ckpt, "Checkpoint file")->required();
  att->add_option("--scene", att_scene, "Scene JSON file")->required();
  att->add_option("--target", att_target, "Target proposal index");
  att->add_option("--config", att_config, "JSON config file");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    json cfg = load_config(gen_config);
    if (gen->count("--seed")) cfg["seed"] = gen_seed;
    if (gen->count("--num-scenes") || !cfg.contains("num_scenes")) cfg["num_scenes"] = gen_n;
    if (!cfg.contains("seed")) cfg["seed"] = gen_seed;
    return report([&](char** out) {
      return spacap_gen_data(cfg.dump().c_str(), gen_out.c_str(), out);
    });
  }
  if (tr->parsed()) {
    json cfg = load_config(tr_config);
    if (!cfg.contains("model")) cfg["model"] = json::object();
    if (!cfg.contains("train")) cfg["train"] = json::object();
    apply_ablation(cfg["model"], tr_ablation);
    if (!tr_pos.empty()) cfg["model"]["pos_enc_kind"] = tr_pos;
    if (!tr_dec.empty()) cfg["model"]["decoder_kind"] = tr_dec;
    if (tr_m) cfg["model"]["m_proposals"] = tr_m;
    if (tr_seed_set) cfg["train"]["seed"] = tr_seed;
    if (tr_noise >= 0) cfg["train"]["noise_sigma"] = tr_noise;
    return report([&](char** out) {
      return spacap_train(cfg.dump().c_str(), tr_train.c_str(), tr_val.c_str(), tr_out.c_str(),
                          out);
    });
  }
  if (ev->parsed()) {
    json cfg = load_config(ev_config);
    return report([&](char** out) {
      return spacap_eval(ev_ckpt.c_str(), ev_data.c_str(), cfg.dump().c_str(),
                         ev_out.empty() ? nullptr : ev_out.c_str(), out);
    });
  }
  if (cap->parsed()) {
    json cfg = load_config(cap_config);
    std::string scene = read_file(cap_scene);
    return report([&](char** out) {
      return spacap_caption(cap_ckpt.c_str(), scene.c_str(), cfg.dump().c_str(), out);
    });
  }
  if (rel->parsed()) {
    std::string scene = read_file(rel_scene);
    return report([&](char** out) { return spacap_relations(scene.c_str(), out); });
  }
  if (att->parsed()) {
    json cfg = load_config(att_config);
    cfg["target"] = att_target;
    std::string scene = read_file(att_scene);
    return report([&](char** out) {
      return spacap_attn_dump(att_ckpt.c_str(), scene.c_str(), cfg.dump().c_str(), out);
    });
  }
  return 2;
}
