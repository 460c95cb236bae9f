#include "loclin/loclin.h"

#include <algorithm>
#include <bit>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <optional>

#include "loclin/bundle_io.hpp"
#include "loclin/generate.hpp"
#include "loclin/report.hpp"

struct ll_bundle {
  loclin::ModelBundle model;
  loclin::ToyVocab vocab;
  explicit ll_bundle(loclin::ModelBundle m)
      : model(std::move(m)), vocab(model.config.vocab_size) {}
};

struct ll_jacobian {
  std::optional<loclin::DetachedJacobian> detached;
  std::optional<loclin::StandardJacobian> standard;
  const std::vector<loclin::Matrix>& blocks() const {
    return detached ? detached->blocks : standard->blocks;
  }
};

namespace {

using namespace loclin;

thread_local std::string g_last_error;

ll_status status_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::usage: return LL_ERR_USAGE;
    case ErrorCode::config: return LL_ERR_CONFIG;
    case ErrorCode::invalid_token: return LL_ERR_INVALID_TOKEN;
    case ErrorCode::shape: return LL_ERR_SHAPE;
    case ErrorCode::numeric: return LL_ERR_NUMERIC;
    case ErrorCode::stale_frozen_state: return LL_ERR_STALE_STATE;
    case ErrorCode::resource: return LL_ERR_RESOURCE;
    case ErrorCode::unsupported_input: return LL_ERR_UNSUPPORTED;
    case ErrorCode::undefined_result: return LL_ERR_UNDEFINED;
    case ErrorCode::io: return LL_ERR_IO;
    case ErrorCode::format: return LL_ERR_FORMAT;
    case ErrorCode::checksum: return LL_ERR_CHECKSUM;
  }
  return LL_ERR_INTERNAL;
}

template <class F>
ll_status guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return LL_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return LL_ERR_RESOURCE;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return LL_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  require(p != nullptr, ErrorCode::usage, std::string(what) + " must not be null");
}

TokenSequence sequence(const int32_t* ids, size_t n) {
  require(n == 0 || ids != nullptr, ErrorCode::usage, "ids must not be null");
  TokenSequence s;
  s.ids.assign(ids, ids + n);
  return s;
}

ModelConfig to_config(const ll_model_config& c) {
  ModelConfig m;
  m.d_model = c.d_model;
  m.n_layers = c.n_layers;
  m.n_heads = c.n_heads;
  m.n_kv_heads = c.n_kv_heads;
  m.d_head = c.d_head;
  m.d_ff = c.d_ff;
  m.vocab_size = c.vocab_size;
  switch (c.activation) {
    case LL_ACT_SWIGLU: m.activation = Activation::swiglu; break;
    case LL_ACT_GEGLU: m.activation = Activation::geglu; break;
    case LL_ACT_SWISH_GLU: m.activation = Activation::swish_glu; break;
    default: fail(ErrorCode::config, "unknown activation");
  }
  m.norm_eps = c.norm_eps;
  m.rope_theta = c.rope_theta;
  m.tie_embeddings = c.tie_embeddings != 0;
  m.embed_scale = c.embed_scale != 0;
  return m;
}

ll_model_config from_config(const ModelConfig& m) {
  ll_model_config c{};
  c.d_model = m.d_model;
  c.n_layers = m.n_layers;
  c.n_heads = m.n_heads;
  c.n_kv_heads = m.n_kv_heads;
  c.d_head = m.d_head;
  c.d_ff = m.d_ff;
  c.vocab_size = m.vocab_size;
  c.activation = m.activation == Activation::geglu       ? LL_ACT_GEGLU
                 : m.activation == Activation::swish_glu ? LL_ACT_SWISH_GLU
                                                         : LL_ACT_SWIGLU;
  c.norm_eps = m.norm_eps;
  c.rope_theta = m.rope_theta;
  c.tie_embeddings = m.tie_embeddings;
  c.embed_scale = m.embed_scale;
  return c;
}

JacobianOptions jacobian_options(const ll_jacobian_options* o) {
  JacobianOptions j;
  if (o) {
    j.max_probes = o->max_probes;
    j.threads = o->threads == 0 ? 1 : o->threads;
  }
  return j;
}

ReportOptions report_options(const ll_report_options* o) {
  ll_report_options d;
  ll_report_options_default(&d);
  if (!o) o = &d;
  ReportOptions r;
  r.top_k = o->top_k;
  r.retain = o->retain;
  r.n_vectors = o->n_vectors;
  r.fd_step = o->fd_step;
  r.metric = metric_from_string(o->metric ? o->metric : "cosine");
  if (o->has_layer) r.layer = o->layer;
  r.jacobian = jacobian_options(&o->jacobian);
  return r;
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

using Report = std::string (*)(const ModelBundle&, const ToyVocab&, const TokenSequence&,
                               const ReportOptions&);

ll_status run_report(Report fn, const ll_bundle* b, const int32_t* ids, size_t n,
                     const ll_report_options* options, char** json) {
  return guard([&] {
    need(b, "bundle");
    need(json, "json");
    *json = nullptr;
    *json = copy_string(fn(b->model, b->vocab, sequence(ids, n), report_options(options)));
  });
}

}  // namespace

extern "C" {

const char* ll_last_error(void) { return g_last_error.c_str(); }

const char* ll_status_name(ll_status s) {
  switch (s) {
    case LL_OK: return "ok";
    case LL_ERR_USAGE: return "usage";
    case LL_ERR_CONFIG: return "config";
    case LL_ERR_INVALID_TOKEN: return "invalid-token";
    case LL_ERR_SHAPE: return "shape";
    case LL_ERR_NUMERIC: return "numeric";
    case LL_ERR_STALE_STATE: return "stale-frozen-state";
    case LL_ERR_RESOURCE: return "resource";
    case LL_ERR_UNSUPPORTED: return "unsupported-input";
    case LL_ERR_UNDEFINED: return "undefined-result";
    case LL_ERR_IO: return "io";
    case LL_ERR_FORMAT: return "format";
    case LL_ERR_CHECKSUM: return "checksum";
    case LL_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

int ll_status_exit_code(ll_status s) {
  switch (s) {
    case LL_OK: return 0;
    case LL_ERR_USAGE: return 1;
    case LL_ERR_NUMERIC:
    case LL_ERR_UNDEFINED: return 3;
    default: return 2;
  }
}

const char* ll_version(void) { return "0.1.0"; }

void ll_config_default(ll_model_config* config) {
  if (config) *config = from_config(ModelConfig{});
}

ll_status ll_bundle_generate(uint64_t seed, const ll_model_config* config, int trained,
                             ll_bundle** out) {
  return guard([&] {
    need(out, "out");
    *out = nullptr;
    const ModelConfig c = config ? to_config(*config) : ModelConfig{};
    TinyModelOptions o;
    o.trained = trained != 0;
    *out = new ll_bundle(make_tiny_model(seed, c, o));
  });
}

ll_status ll_bundle_read(const char* path, ll_bundle** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    *out = new ll_bundle(read_bundle(path));
  });
}

ll_status ll_bundle_write(const ll_bundle* b, const char* path) {
  return guard([&] {
    need(b, "bundle");
    need(path, "path");
    write_bundle(b->model, path);
  });
}

void ll_bundle_free(ll_bundle* b) { delete b; }

ll_status ll_bundle_config(const ll_bundle* b, ll_model_config* out) {
  return guard([&] {
    need(b, "bundle");
    need(out, "out");
    *out = from_config(b->model.config);
  });
}

ll_status ll_bundle_checksum(const ll_bundle* b, uint64_t* out) {
  return guard([&] {
    need(b, "bundle");
    need(out, "out");
    std::vector<std::uint8_t> payload;
    for (const auto& t : bundle_tensors(b->model))
      for (float v : t.values)
        for (int i = 0; i < 4; ++i)
          payload.push_back(static_cast<std::uint8_t>(std::bit_cast<std::uint32_t>(v) >> (8 * i)));
    *out = fnv1a64(payload);
  });
}

ll_status ll_bundle_corpus_accuracy(const ll_bundle* b, double* out) {
  return guard([&] {
    need(b, "bundle");
    need(out, "out");
    *out = corpus_accuracy(b->model);
  });
}

ll_status ll_tokenize(const ll_bundle* b, const char* prompt, int add_bos, int32_t* ids,
                      size_t capacity, size_t* count) {
  return guard([&] {
    need(b, "bundle");
    need(prompt, "prompt");
    need(count, "count");
    const auto seq = b->vocab.encode(prompt, add_bos != 0);
    *count = seq.size();
    require(capacity == 0 || ids != nullptr, ErrorCode::usage, "ids must not be null");
    std::copy_n(seq.ids.begin(), std::min(capacity, seq.size()), ids);
  });
}

ll_status ll_token_text(const ll_bundle* b, int32_t id, const char** out) {
  return guard([&] {
    need(b, "bundle");
    need(out, "out");
    *out = b->vocab.text(id).c_str();
  });
}

ll_status ll_forward(const ll_bundle* b, const int32_t* ids, size_t n, float* y,
                     size_t y_len) {
  return guard([&] {
    need(b, "bundle");
    need(y, "y");
    require(y_len == b->model.config.d_model, ErrorCode::shape, "y_len must equal d_model");
    const Vec out = forward(b->model, embed(b->model, sequence(ids, n))).y;
    std::copy(out.begin(), out.end(), y);
  });
}

ll_status ll_greedy_next(const ll_bundle* b, const int32_t* ids, size_t n, int32_t* out) {
  return guard([&] {
    need(b, "bundle");
    need(out, "out");
    *out = greedy_next_token(b->model, sequence(ids, n));
  });
}

void ll_jacobian_options_default(ll_jacobian_options* options) {
  if (!options) return;
  const JacobianOptions d;
  options->max_probes = d.max_probes;
  options->threads = d.threads;
}

ll_status ll_jacobian_detached(const ll_bundle* b, const int32_t* ids, size_t n,
                               ll_target_kind target, size_t layer,
                               const ll_jacobian_options* options, ll_jacobian** out) {
  return guard([&] {
    need(b, "bundle");
    need(out, "out");
    *out = nullptr;
    Target t;
    switch (target) {
      case LL_TARGET_FINAL: t = Target::final_output(); break;
      case LL_TARGET_LAYER_OUT: t = Target::at(layer, TapPoint::layer_out); break;
      case LL_TARGET_ATTN_OUT: t = Target::at(layer, TapPoint::attn_out); break;
      case LL_TARGET_MLP_OUT: t = Target::at(layer, TapPoint::mlp_out); break;
      default: fail(ErrorCode::usage, "unknown target");
    }
    if (t.kind != TargetKind::final_output)
      require(layer < b->model.config.n_layers, ErrorCode::usage, "layer out of range");
    auto j = std::make_unique<ll_jacobian>();
    j->detached = detached_jacobian(b->model, embed(b->model, sequence(ids, n)), t,
                                    jacobian_options(options));
    *out = j.release();
  });
}

ll_status ll_jacobian_standard(const ll_bundle* b, const int32_t* ids, size_t n, double step,
                               const ll_jacobian_options* options, ll_jacobian** out) {
  return guard([&] {
    need(b, "bundle");
    need(out, "out");
    *out = nullptr;
    require(step > 0.0, ErrorCode::usage, "step must be positive");
    auto j = std::make_unique<ll_jacobian>();
    j->standard = numeric_jacobian_fd(b->model, embed(b->model, sequence(ids, n)), step,
                                      Target::final_output(), jacobian_options(options));
    *out = j.release();
  });
}

size_t ll_jacobian_positions(const ll_jacobian* j) { return j ? j->blocks().size() : 0; }

size_t ll_jacobian_dim(const ll_jacobian* j) {
  return j && !j->blocks().empty() ? j->blocks().front().rows() : 0;
}

ll_status ll_jacobian_block(const ll_jacobian* j, size_t position, float* out, size_t len) {
  return guard([&] {
    need(j, "jacobian");
    need(out, "out");
    require(position < j->blocks().size(), ErrorCode::usage, "position out of range");
    const Matrix& m = j->blocks()[position];
    require(len == m.size(), ErrorCode::shape, "len must equal d_model * d_model");
    std::copy(m.values().begin(), m.values().end(), out);
  });
}

ll_status ll_jacobian_reconstruct(const ll_jacobian* j, const ll_bundle* b,
                                  const int32_t* ids, size_t n, float* estimate, size_t len,
                                  double* rel_error, int* off_anchor) {
  return guard([&] {
    need(j, "jacobian");
    need(b, "bundle");
    const auto x = embed(b->model, sequence(ids, n));
    const Reconstruction r =
        j->detached ? reconstruct(b->model, *j->detached, x) : reconstruct(b->model, *j->standard, x);
    if (estimate) {
      require(len == r.estimate.size(), ErrorCode::shape, "len must equal d_model");
      std::copy(r.estimate.begin(), r.estimate.end(), estimate);
    }
    if (rel_error) *rel_error = r.rel_error;
    if (off_anchor) *off_anchor = r.off_anchor;
  });
}

ll_status ll_jacobian_export(const ll_jacobian* j, const char* path) {
  return guard([&] {
    need(j, "jacobian");
    need(path, "path");
    std::vector<NamedTensor> tensors;
    const auto& blocks = j->blocks();
    for (std::size_t p = 0; p < blocks.size(); ++p)
      tensors.push_back(matrix_tensor("jacobian.blocks." + std::to_string(p), blocks[p]));
    tensors.push_back(matrix_tensor(
        "jacobian.anchor", j->detached ? j->detached->anchor.vectors : j->standard->anchor.vectors));
    if (j->detached)
      for (auto& t : frozen_tensors(j->detached->frozen)) tensors.push_back(std::move(t));
    export_tensors(tensors, path);
  });
}

void ll_jacobian_free(ll_jacobian* j) { delete j; }

ll_status ll_svd_values(const double* m, size_t rows, size_t cols, double* s, size_t s_len) {
  return guard([&] {
    need(m, "m");
    need(s, "s");
    require(rows > 0 && cols > 0, ErrorCode::shape, "matrix must be non-empty");
    require(s_len == std::min(rows, cols), ErrorCode::shape, "s_len must be min(rows, cols)");
    DMatrix a(rows, cols);
    std::copy(m, m + rows * cols, a.values().begin());
    const auto sum = svd(a, 1);
    std::copy_n(sum.singular_values.begin(), s_len, s);
  });
}

ll_status ll_stable_rank(const double* s, size_t n, double* out) {
  return guard([&] {
    need(out, "out");
    require(n == 0 || s != nullptr, ErrorCode::usage, "s must not be null");
    *out = stable_rank(std::span<const double>(s, n));
  });
}

void ll_report_options_default(ll_report_options* options) {
  if (!options) return;
  const ReportOptions d;
  options->top_k = d.top_k;
  options->retain = d.retain;
  options->n_vectors = d.n_vectors;
  options->fd_step = d.fd_step;
  options->metric = "cosine";
  options->has_layer = 0;
  options->layer = 0;
  ll_jacobian_options_default(&options->jacobian);
}

ll_status ll_report_verify(const ll_bundle* b, const int32_t* ids, size_t n,
                           const ll_report_options* options, char** json) {
  return run_report(verify_report, b, ids, n, options, json);
}

ll_status ll_report_svd(const ll_bundle* b, const int32_t* ids, size_t n,
                        const ll_report_options* options, char** json) {
  return run_report(svd_report, b, ids, n, options, json);
}

ll_status ll_report_layers(const ll_bundle* b, const int32_t* ids, size_t n,
                           const ll_report_options* options, char** json) {
  return run_report(layers_report, b, ids, n, options, json);
}

ll_status ll_report_decode(const ll_bundle* b, const int32_t* ids, size_t n,
                           const ll_report_options* options, char** json) {
  return run_report(decode_report, b, ids, n, options, json);
}

void ll_steer_options_default(ll_steer_options* options) {
  if (!options) return;
  const SteerRequest d;
  options->layer = d.layer;
  options->lambda = d.lambda;
  options->n_tokens = d.n_tokens;
  options->alignment = "clamp-last";
  options->schedule = "every-step";
}

ll_status ll_report_steer(const ll_bundle* b, const int32_t* steer_ids, size_t steer_n,
                          const int32_t* const* prompts, const size_t* prompt_lengths,
                          size_t n_prompts, const ll_steer_options* steer,
                          const ll_report_options* options, char** json) {
  return guard([&] {
    need(b, "bundle");
    need(json, "json");
    *json = nullptr;
    require(n_prompts == 0 || (prompts && prompt_lengths), ErrorCode::usage,
            "prompts must not be null");
    ll_steer_options so;
    ll_steer_options_default(&so);
    if (steer) so = *steer;
    SteerRequest req;
    req.steer_prompt = sequence(steer_ids, steer_n);
    for (size_t i = 0; i < n_prompts; ++i) req.inputs.push_back(sequence(prompts[i], prompt_lengths[i]));
    req.layer = so.layer;
    req.lambda = so.lambda;
    req.n_tokens = so.n_tokens;
    req.alignment = alignment_from_string(so.alignment ? so.alignment : "clamp-last");
    req.schedule = schedule_from_string(so.schedule ? so.schedule : "every-step");
    *json = copy_string(steer_report(b->model, b->vocab, req, report_options(options)));
  });
}

void ll_string_free(char* s) { std::free(s); }

}  // extern "C"
