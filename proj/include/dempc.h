/* C interface to the dempc library. Every function returns a dempc_status;
 * on failure dempc_last_error() holds a message for the calling thread. */
#ifndef DEMPC_H
#define DEMPC_H

#include <stddef.h>

#if defined(DEMPC_BUILDING_LIBRARY)
#define DEMPC_API __attribute__((visibility("default")))
#else
#define DEMPC_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dempc_status {
  DEMPC_OK = 0,
  DEMPC_E_INVALID_ARGUMENT = 1, /* null handle, null pointer, bad enum */
  DEMPC_E_STRUCTURAL = 2,       /* shapes or schemas disagree */
  DEMPC_E_NUMERIC = 3,          /* non-finite value */
  DEMPC_E_DOMAIN = 4,           /* argument outside the operation's domain */
  DEMPC_E_IO = 5,               /* file or parse problem */
  DEMPC_E_INTERNAL = 6
} dempc_status;

typedef struct dempc_session dempc_session;
typedef struct dempc_model dempc_model;

typedef struct dempc_metrics {
  double cumulative_nox;
  double peak_nox;
  double average_nox;
  double average_soot;
  double peak_soot;
  double violation_ratio;
  double total_fuel;
  int solves;
  int converged;
  int plant_clamp_events;
} dempc_metrics;

DEMPC_API const char* dempc_version(void);
DEMPC_API const char* dempc_status_name(dempc_status status);
DEMPC_API const char* dempc_last_error(void);

/* config_path may be NULL for the built-in defaults. */
DEMPC_API dempc_status dempc_session_open(const char* config_path, const char* out_dir, int use_cache,
                                          dempc_session** out);
DEMPC_API void dempc_session_close(dempc_session* session);
/* "section.key=value" with a JSON value. Drops every stage already held in memory. */
DEMPC_API dempc_status dempc_session_override(dempc_session* session, const char* assignment);
/* Writes a NUL-terminated string into buf; *needed (optional) receives the full length + 1.
 * A NULL buf with non-NULL needed is a size query. */
DEMPC_API dempc_status dempc_session_config_json(const dempc_session* session, char* buf, size_t len,
                                                 size_t* needed);
DEMPC_API dempc_status dempc_session_config_hash(const dempc_session* session, char* buf, size_t len);

DEMPC_API dempc_status dempc_tune_hparams(dempc_session* session);
DEMPC_API dempc_status dempc_train_fnn(dempc_session* session, int tuned);
DEMPC_API dempc_status dempc_gen_ident_data(dempc_session* session);
DEMPC_API dempc_status dempc_train_rnn(dempc_session* session);
/* cycle: "case_study", a builtin cycle name or a CSV path. metrics may be NULL. */
DEMPC_API dempc_status dempc_simulate(dempc_session* session, const char* scenario, const char* cycle,
                                      dempc_metrics* metrics);
/* Runs every configured scenario and writes the comparison tables. */
DEMPC_API dempc_status dempc_compare_scenarios(dempc_session* session);
DEMPC_API dempc_status dempc_pipeline(dempc_session* session);
DEMPC_API dempc_status dempc_soot_limit(dempc_session* session, double* out);
DEMPC_API dempc_status dempc_write_manifest(dempc_session* session);

DEMPC_API dempc_status dempc_model_load(const char* path, dempc_model** out);
DEMPC_API void dempc_model_free(dempc_model* model);
DEMPC_API dempc_status dempc_model_dims(const dempc_model* model, size_t* input_dim, size_t* output_dim);
/* Physical-unit inputs and outputs. */
DEMPC_API dempc_status dempc_model_predict(const dempc_model* model, const double* input, size_t input_len,
                                           double* output, size_t output_len);

#ifdef __cplusplus
}
#endif

#endif
