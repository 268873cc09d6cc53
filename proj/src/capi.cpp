#include "spacap/spacap.h"

#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

#include "workflows.hpp"

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <typename Fn>
spacap_status guarded(char** out, Fn&& fn) {
  g_last_error.clear();
  try {
    std::string result = fn();
    if (out) *out = dup_string(result);
    return SPACAP_OK;
  } catch (const std::invalid_argument& e) {
    g_last_error = e.what();
    return SPACAP_ERR_USAGE;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SPACAP_ERR_RUNTIME;
  }
}

std::string require(const char* s, const char* what) {
  if (!s) throw std::invalid_argument(std::string(what) + " must not be null");
  return s;
}

}  // namespace

extern "C" {

const char* spacap_last_error(void) { return g_last_error.c_str(); }

void spacap_string_free(char* s) { std::free(s); }

spacap_status spacap_gen_data(const char* config_json, const char* out_path,
                              char** summary_json_out) {
  return guarded(summary_json_out, [&] {
    return spacap::gen_data(require(config_json, "config_json"), require(out_path, "out_path"));
  });
}

spacap_status spacap_train(const char* config_json, const char* train_path,
                           const char* val_path, const char* out_dir,
                           char** summary_json_out) {
  return guarded(summary_json_out, [&] {
    return spacap::train_workflow(require(config_json, "config_json"),
                                  require(train_path, "train_path"),
                                  require(val_path, "val_path"), require(out_dir, "out_dir"));
  });
}

spacap_status spacap_eval(const char* checkpoint_path, const char* data_path,
                          const char* config_json, const char* out_path,
                          char** report_json_out) {
  return guarded(report_json_out, [&] {
    return spacap::eval_workflow(require(checkpoint_path, "checkpoint_path"),
                                 require(data_path, "data_path"),
                                 config_json ? config_json : "{}", out_path ? out_path : "");
  });
}

spacap_status spacap_caption(const char* checkpoint_path, const char* scene_json,
                             const char* config_json, char** captions_json_out) {
  return guarded(captions_json_out, [&] {
    return spacap::caption_scene(require(checkpoint_path, "checkpoint_path"),
                                 require(scene_json, "scene_json"),
                                 config_json ? config_json : "{}");
  });
}

spacap_status spacap_relations(const char* scene_json, char** labels_json_out) {
  return guarded(labels_json_out,
                 [&] { return spacap::relations_of_scene(require(scene_json, "scene_json")); });
}

spacap_status spacap_attn_dump(const char* checkpoint_path, const char* scene_json,
                               const char* config_json, char** attn_json_out) {
  return guarded(attn_json_out, [&] {
    return spacap::attn_dump(require(checkpoint_path, "checkpoint_path"),
                             require(scene_json, "scene_json"),
                             config_json ? config_json : "{}");
  });
}

}  // extern "C"
