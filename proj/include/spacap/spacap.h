/* C API for the spacap shared library.
 *
 * All functions return a status code; 0 is success. String outputs are
 * heap-allocated and must be released with spacap_string_free. On failure,
 * spacap_last_error() returns a thread-local message for the calling thread.
 */
#ifndef SPACAP_SPACAP_H_
#define SPACAP_SPACAP_H_

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum spacap_status {
  SPACAP_OK = 0,
  SPACAP_ERR_RUNTIME = 1, /* I/O failures, bad files, internal errors */
  SPACAP_ERR_USAGE = 2    /* invalid arguments or config */
} spacap_status;

/* Message describing the last failure on this thread; empty string if none. */
const char* spacap_last_error(void);

void spacap_string_free(char* s);

/* Generate a synthetic captioned dataset (JSONL) plus a run manifest.
 * config_json: {"seed": u64, "num_scenes": n, "scenegen": {...}} */
spacap_status spacap_gen_data(const char* config_json, const char* out_path,
                              char** summary_json_out);

/* Train a model; writes checkpoint.json, metrics.jsonl and manifest.json
 * into out_dir. config_json: {"model": {...}, "train": {...}} */
spacap_status spacap_train(const char* config_json, const char* train_path,
                           const char* val_path, const char* out_dir,
                           char** summary_json_out);

/* Evaluate a checkpoint on a dataset. out_path may be NULL (report is only
 * returned). */
spacap_status spacap_eval(const char* checkpoint_path, const char* data_path,
                          const char* config_json, const char* out_path,
                          char** report_json_out);

/* Caption every kept proposal of one scene (scene given as JSON). */
spacap_status spacap_caption(const char* checkpoint_path, const char* scene_json,
                             const char* config_json, char** captions_json_out);

/* Ground-truth pairwise relation labels of a scene:
 * {"m": n, "labels": [[[lx,ly,lz], ...], ...]} */
spacap_status spacap_relations(const char* scene_json, char** labels_json_out);

/* Encoder/decoder attention snapshot for one scene and target proposal. */
spacap_status spacap_attn_dump(const char* checkpoint_path, const char* scene_json,
                               const char* config_json, char** attn_json_out);

#ifdef __cplusplus
}
#endif

#endif /* SPACAP_SPACAP_H_ */
