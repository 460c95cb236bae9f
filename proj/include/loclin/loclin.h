#ifndef LOCLIN_H
#define LOCLIN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define LOCLIN_API __declspec(dllexport)
#else
#define LOCLIN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef struct ll_bundle ll_bundle;
typedef struct ll_jacobian ll_jacobian;

typedef enum {
  LL_OK = 0,
  LL_ERR_USAGE,
  LL_ERR_CONFIG,
  LL_ERR_INVALID_TOKEN,
  LL_ERR_SHAPE,
  LL_ERR_NUMERIC,
  LL_ERR_STALE_STATE,
  LL_ERR_RESOURCE,
  LL_ERR_UNSUPPORTED,
  LL_ERR_UNDEFINED,
  LL_ERR_IO,
  LL_ERR_FORMAT,
  LL_ERR_CHECKSUM,
  LL_ERR_INTERNAL
} ll_status;

/* Message of the last failing call on this thread; "" after a success. */
LOCLIN_API const char* ll_last_error(void);
LOCLIN_API const char* ll_status_name(ll_status status);
/* 0 success, 1 usage, 2 data (bad input or file), 3 numeric. */
LOCLIN_API int ll_status_exit_code(ll_status status);
LOCLIN_API const char* ll_version(void);

typedef enum { LL_ACT_SWIGLU = 0, LL_ACT_GEGLU, LL_ACT_SWISH_GLU } ll_activation;

typedef struct {
  size_t d_model, n_layers, n_heads, n_kv_heads, d_head, d_ff, vocab_size;
  ll_activation activation;
  double norm_eps, rope_theta;
  int tie_embeddings, embed_scale;
} ll_model_config;

LOCLIN_API void ll_config_default(ll_model_config* config);

LOCLIN_API ll_status ll_bundle_generate(uint64_t seed, const ll_model_config* config,
                                        int trained, ll_bundle** out);
LOCLIN_API ll_status ll_bundle_read(const char* path, ll_bundle** out);
LOCLIN_API ll_status ll_bundle_write(const ll_bundle* bundle, const char* path);
LOCLIN_API void ll_bundle_free(ll_bundle* bundle);
LOCLIN_API ll_status ll_bundle_config(const ll_bundle* bundle, ll_model_config* out);
/* FNV-1a 64 of the serialized tensor payload. */
LOCLIN_API ll_status ll_bundle_checksum(const ll_bundle* bundle, uint64_t* out);
/* Fraction of bundled-corpus prefixes whose greedy next token is correct. */
LOCLIN_API ll_status ll_bundle_corpus_accuracy(const ll_bundle* bundle, double* out);

/* Writes up to `capacity` ids; `count` always receives the full length. */
LOCLIN_API ll_status ll_tokenize(const ll_bundle* bundle, const char* prompt, int add_bos,
                                 int32_t* ids, size_t capacity, size_t* count);
LOCLIN_API ll_status ll_token_text(const ll_bundle* bundle, int32_t id, const char** out);

/* Final output embedding of the last position; y_len must equal d_model. */
LOCLIN_API ll_status ll_forward(const ll_bundle* bundle, const int32_t* ids, size_t n,
                                float* y, size_t y_len);
LOCLIN_API ll_status ll_greedy_next(const ll_bundle* bundle, const int32_t* ids, size_t n,
                                    int32_t* out);

typedef enum {
  LL_TARGET_FINAL = 0,
  LL_TARGET_LAYER_OUT,
  LL_TARGET_ATTN_OUT,
  LL_TARGET_MLP_OUT
} ll_target_kind;

typedef struct {
  size_t max_probes;
  unsigned threads;
} ll_jacobian_options;

LOCLIN_API void ll_jacobian_options_default(ll_jacobian_options* options);

/* Pass NULL options for defaults. */
LOCLIN_API ll_status ll_jacobian_detached(const ll_bundle* bundle, const int32_t* ids,
                                          size_t n, ll_target_kind target, size_t layer,
                                          const ll_jacobian_options* options,
                                          ll_jacobian** out);
LOCLIN_API ll_status ll_jacobian_standard(const ll_bundle* bundle, const int32_t* ids,
                                          size_t n, double step,
                                          const ll_jacobian_options* options,
                                          ll_jacobian** out);
LOCLIN_API size_t ll_jacobian_positions(const ll_jacobian* j);
LOCLIN_API size_t ll_jacobian_dim(const ll_jacobian* j);
/* Row-major d_model x d_model block; len must equal d_model^2. */
LOCLIN_API ll_status ll_jacobian_block(const ll_jacobian* j, size_t position, float* out,
                                       size_t len);
/* Applies the blocks to the embeddings of `ids` and compares with the
   nonlinear forward pass. `off_anchor` is set when ids differ from the
   anchor prompt. estimate may be NULL. */
LOCLIN_API ll_status ll_jacobian_reconstruct(const ll_jacobian* j, const ll_bundle* bundle,
                                             const int32_t* ids, size_t n, float* estimate,
                                             size_t len, double* rel_error, int* off_anchor);
/* Writes the blocks (and the frozen state of a detached Jacobian) as a
   tensor container with a null config. */
LOCLIN_API ll_status ll_jacobian_export(const ll_jacobian* j, const char* path);
LOCLIN_API void ll_jacobian_free(ll_jacobian* j);

/* Singular values (descending) of a row-major double matrix; s_len must be
   min(rows, cols). */
LOCLIN_API ll_status ll_svd_values(const double* m, size_t rows, size_t cols, double* s,
                                   size_t s_len);
LOCLIN_API ll_status ll_stable_rank(const double* s, size_t n, double* out);

typedef struct {
  size_t top_k;
  size_t retain;
  size_t n_vectors;
  double fd_step;
  const char* metric; /* "cosine", "dot" or "euclidean" */
  int has_layer;
  size_t layer;
  ll_jacobian_options jacobian;
} ll_report_options;

LOCLIN_API void ll_report_options_default(ll_report_options* options);

/* JSON reports; release with ll_string_free. NULL options for defaults. */
LOCLIN_API ll_status ll_report_verify(const ll_bundle* bundle, const int32_t* ids, size_t n,
                                      const ll_report_options* options, char** json);
LOCLIN_API ll_status ll_report_svd(const ll_bundle* bundle, const int32_t* ids, size_t n,
                                   const ll_report_options* options, char** json);
LOCLIN_API ll_status ll_report_layers(const ll_bundle* bundle, const int32_t* ids, size_t n,
                                      const ll_report_options* options, char** json);
LOCLIN_API ll_status ll_report_decode(const ll_bundle* bundle, const int32_t* ids, size_t n,
                                      const ll_report_options* options, char** json);

typedef struct {
  size_t layer;
  double lambda;
  size_t n_tokens;
  const char* alignment; /* "clamp-last", "truncate", "last-position-only" */
  const char* schedule;  /* "every-step", "first-step-only" */
} ll_steer_options;

LOCLIN_API void ll_steer_options_default(ll_steer_options* options);

LOCLIN_API ll_status ll_report_steer(const ll_bundle* bundle, const int32_t* steer_ids,
                                     size_t steer_n, const int32_t* const* prompts,
                                     const size_t* prompt_lengths, size_t n_prompts,
                                     const ll_steer_options* steer,
                                     const ll_report_options* options, char** json);

LOCLIN_API void ll_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif
