#ifndef MEMR_H
#define MEMR_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MEMR_API __declspec(dllexport)
#else
#define MEMR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum memr_status {
  MEMR_OK = 0,
  MEMR_ERR_INVALID_ARGUMENT = 1,
  MEMR_ERR_DOMAIN = 2,
  MEMR_ERR_SHAPE = 3,
  MEMR_ERR_IO = 4,
  MEMR_ERR_NUMERIC = 5,
  MEMR_ERR_CONTRACT = 6,
  MEMR_ERR_EXISTS = 7,
  MEMR_ERR_INTERNAL = 8
} memr_status;

/* Flags for memr_train. */
#define MEMR_FORCE 1u
#define MEMR_PRETRAIN_ONLY 2u
#define MEMR_DIR_PREPARED 4u

typedef struct memr_model memr_model;

/* Message of the last failure on this thread; empty after success. */
MEMR_API const char* memr_last_error(void);
MEMR_API const char* memr_version(void);
MEMR_API const char* memr_status_name(memr_status s);

/* Strings returned through char** out-parameters are owned by the caller. */
MEMR_API void memr_string_free(char* s);

/* options_json keys: seed (required), n_train, n_valid, n_test, alphabet,
   groups, stay, final_stop, stop_leak, leak, concentration, t_max. */
MEMR_API memr_status memr_make_corpus(const char* options_json, const char* out_dir, unsigned flags, char** result_json);

/* Trainer settings with every default filled in, after validation. */
MEMR_API memr_status memr_resolve_train_config(const char* config_json, char** resolved_json);

/* config_json holds trainer settings (see config.json in a run directory);
   NULL or "{}" takes the defaults. result_json receives status.json. */
MEMR_API memr_status memr_train(const char* config_json, const char* corpus_dir, const char* out_dir, unsigned flags,
                                char** result_json);

/* A run directory; checkpoint may be NULL (actor_final.ckpt, falling back to
   actor_pretrain.ckpt) or a file name inside checkpoints/ or a path. */
MEMR_API memr_status memr_model_load(const char* run_dir, const char* checkpoint, memr_model** out);
MEMR_API void memr_model_free(memr_model* model);
MEMR_API size_t memr_model_vocab_size(const memr_model* model);

/* options_json keys: seed (required), n (1), tau (1.0), t_max (run's),
   prefix (""). Output is one sentence per line. */
MEMR_API memr_status memr_model_generate(const memr_model* model, const char* options_json, char** text);

/* Sentence-per-line files. options_json keys: n (5), seed (required when
   bootstrap > 0), bootstrap (0). out_dir may be NULL; otherwise bleu.json and
   bleu.csv go there. */
MEMR_API memr_status memr_eval_bleu(const char* samples_path, const char* references_path, const char* options_json,
                                    const char* out_dir, char** result_json);

/* Seen prefixes from corpus_dir/train.txt, unseen from corpus_dir/test.txt.
   options_json keys: seed (required), k (list), tau, prefixes_per_k,
   completions_per_prefix, bootstrap, order, score_completion_only.
   out_dir may be NULL; otherwise completion.csv and completion.dat go there. */
MEMR_API memr_status memr_eval_completion(const memr_model* model, const char* corpus_dir, const char* options_json,
                                          const char* out_dir, char** result_json);

/* options_json keys: seed (required), m (1000), floor (-80),
   direction ("forward", "reverse" or "both"). */
MEMR_API memr_status memr_eval_kl(const memr_model* model, const char* grammar_path, const char* options_json,
                                  char** result_json);

/* Exit-style verdict in *all_pass (1 when every component is below 1e-4). */
MEMR_API memr_status memr_gradcheck(uint64_t seed, int* all_pass, char** result_json);

/* Aggregates run directories; out_dir may be NULL, otherwise report.txt,
   report.csv and report.json are written there. */
MEMR_API memr_status memr_report(const char* const* run_dirs, size_t n, const char* out_dir, char** result_json);

#ifdef __cplusplus
}
#endif

#endif
