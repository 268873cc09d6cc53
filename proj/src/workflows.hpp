#pragma once

#include <string>

#include "train.hpp"

namespace spacap {

// High-level commands shared by the C API and the CLI. Each takes a JSON
// config string, writes its primary outputs (timestamp-free, byte-stable for
// a fixed config) plus a run manifest alongside them, and returns a JSON
// summary.

// config: {"seed": u64, "num_scenes": n, "scenegen": {optional overrides}}
std::string gen_data(const std::string& config_json, const std::string& out_path);

// config: {"model": {...}, "train": {...}}
std::string train_workflow(const std::string& config_json, const std::string& train_path,
                           const std::string& val_path, const std::string& out_dir);

// config: {"seed": u64, "noise_sigma": s, "nms_iou": t, "iou_thresh": t}
std::string eval_workflow(const std::string& checkpoint_path, const std::string& data_path,
                          const std::string& config_json, const std::string& out_path);

// Captions every kept proposal of one scene. Returns JSON.
std::string caption_scene(const std::string& checkpoint_path, const std::string& scene_json,
                          const std::string& config_json);

// Relation label map of a scene's ground-truth boxes. Returns
// {"m": n, "labels": [[[lx,ly,lz], ...], ...]}.
std::string relations_of_scene(const std::string& scene_json);

// Encoder/decoder attention snapshot for one scene and one target proposal.
std::string attn_dump(const std::string& checkpoint_path, const std::string& scene_json,
                      const std::string& config_json);

}  // namespace spacap
