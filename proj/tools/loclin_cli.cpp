#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "loclin/loclin.h"

namespace {

using json = nlohmann::ordered_json;

struct Failure {
  ll_status status;
  std::string message;
};

void check(ll_status s) {
  if (s != LL_OK) throw Failure{s, ll_last_error()};
}

struct BundleDeleter {
  void operator()(ll_bundle* b) const { ll_bundle_free(b); }
};
using BundlePtr = std::unique_ptr<ll_bundle, BundleDeleter>;

BundlePtr open_bundle(const std::string& path) {
  ll_bundle* b = nullptr;
  check(ll_bundle_read(path.c_str(), &b));
  return BundlePtr(b);
}

std::vector<int32_t> tokenize(const ll_bundle* b, const std::string& prompt) {
  size_t n = 0;
  check(ll_tokenize(b, prompt.c_str(), 1, nullptr, 0, &n));
  std::vector<int32_t> ids(n);
  check(ll_tokenize(b, prompt.c_str(), 1, ids.data(), ids.size(), &n));
  return ids;
}

std::vector<int32_t> parse_ids(const std::string& list) {
  std::vector<int32_t> ids;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      ids.push_back(static_cast<int32_t>(v));
    } catch (const std::exception&) {
      throw Failure{LL_ERR_USAGE, "--tokens: '" + item + "' is not an integer"};
    }
  }
  if (ids.empty()) throw Failure{LL_ERR_USAGE, "--tokens is empty"};
  return ids;
}

std::string cell(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_null()) return "";
  return v.dump();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

std::string md_field(const std::string& s) {
  std::string out;
  for (char c : s) out += c == '|' ? std::string("\\|") : std::string(1, c);
  return out;
}

void md_table(std::ostringstream& out, const json& t) {
  out << "|";
  for (const auto& c : t.at("columns")) out << " " << md_field(c.get<std::string>()) << " |";
  out << "\n|";
  for (size_t i = 0; i < t.at("columns").size(); ++i) out << " --- |";
  out << "\n";
  for (const auto& row : t.at("rows")) {
    out << "|";
    for (const auto& v : row) out << " " << md_field(cell(v)) << " |";
    out << "\n";
  }
}

std::string render(const json& report, const std::string& format) {
  if (format == "json") return report.dump(2) + "\n";
  const json& t = report.at("table");
  std::ostringstream out;
  if (format == "csv") {
    bool first = true;
    for (const auto& c : t.at("columns")) {
      out << (first ? "" : ",") << csv_field(c.get<std::string>());
      first = false;
    }
    out << "\n";
    for (const auto& row : t.at("rows")) {
      first = true;
      for (const auto& v : row) {
        out << (first ? "" : ",") << csv_field(cell(v));
        first = false;
      }
      out << "\n";
    }
    return out.str();
  }
  out << "## " << report.value("command", std::string("report")) << "\n\n";
  if (report.contains("summary")) {
    for (const auto& [k, v] : report.at("summary").items()) out << "- " << k << ": " << cell(v) << "\n";
    out << "\n";
  }
  md_table(out, t);
  for (const auto& g : report.value("grids", json::array())) {
    out << "\n### " << g.value("title", std::string()) << "\n\n";
    md_table(out, g);
  }
  return out.str();
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(out_path);
  if (!(f << text)) throw Failure{LL_ERR_IO, "cannot write " + out_path};
}

json take_json(char* s) {
  json j = json::parse(s);
  ll_string_free(s);
  return j;
}

struct Common {
  std::string bundle;
  std::string prompt;
  std::string tokens;
  std::optional<size_t> layer;
  size_t top_k = 5;
  std::string format = "json";
  std::string out;
  unsigned threads = 1;
  size_t max_probes = 0;
  std::string metric = "cosine";
};

void add_common(CLI::App* cmd, Common& c, bool with_prompt = true) {
  cmd->add_option("--bundle", c.bundle, "Model bundle file")->required();
  if (with_prompt) {
    auto* p = cmd->add_option("--prompt", c.prompt, "Prompt text (a <bos> token is prepended)");
    auto* t = cmd->add_option("--tokens", c.tokens, "Comma-separated token ids");
    p->excludes(t);
  }
  cmd->add_option("--top-k", c.top_k, "Tokens per decoded vector")->check(CLI::PositiveNumber);
  cmd->add_option("--format", c.format, "Output format")
      ->check(CLI::IsMember({"json", "csv", "md"}));
  cmd->add_option("--out", c.out, "Write the report to this file");
  cmd->add_option("--threads", c.threads, "Probe threads")->check(CLI::PositiveNumber);
  cmd->add_option("--max-probes", c.max_probes, "Probe budget (d_model x tokens)");
}

std::vector<int32_t> input_ids(const ll_bundle* b, const Common& c) {
  if (!c.tokens.empty()) return parse_ids(c.tokens);
  if (c.prompt.empty()) throw Failure{LL_ERR_USAGE, "one of --prompt or --tokens is required"};
  return tokenize(b, c.prompt);
}

ll_report_options report_options(const Common& c) {
  ll_report_options o;
  ll_report_options_default(&o);
  o.top_k = c.top_k;
  o.metric = c.metric.c_str();
  o.has_layer = c.layer.has_value();
  o.layer = c.layer.value_or(0);
  o.jacobian.threads = c.threads;
  if (c.max_probes) o.jacobian.max_probes = c.max_probes;
  return o;
}

using ReportFn = ll_status (*)(const ll_bundle*, const int32_t*, size_t,
                               const ll_report_options*, char**);

void run_report(ReportFn fn, const Common& c, const ll_report_options& o) {
  BundlePtr b = open_bundle(c.bundle);
  const auto ids = input_ids(b.get(), c);
  char* s = nullptr;
  check(fn(b.get(), ids.data(), ids.size(), &o, &s));
  emit(render(take_json(s), c.format), c.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Detached-Jacobian analysis of small decoder models", "loclin"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ll_version());

  Common verify_c, svd_c, layers_c, decode_c, steer_c;
  double fd_step = 1e-3;
  size_t retain = 8, vectors = 3;

  auto* verify = app.add_subcommand("verify", "Compare detached and finite-difference reconstructions");
  add_common(verify, verify_c);
  verify->add_option("--fd-step", fd_step, "Central-difference step")->check(CLI::PositiveNumber);

  auto* svd = app.add_subcommand("svd", "Singular vectors of each Jacobian block, decoded to tokens");
  add_common(svd, svd_c);
  svd->add_option("--layer", svd_c.layer, "Use the layer output instead of the final output");
  svd->add_option("--retain", retain, "Singular directions per block")->check(CLI::PositiveNumber);
  svd->add_option("--metric", svd_c.metric, "Input-space metric")
      ->check(CLI::IsMember({"cosine", "dot", "euclidean"}));

  auto* layers = app.add_subcommand("layers", "Stable rank and spectra across layers");
  add_common(layers, layers_c);
  layers->add_option("--layer", layers_c.layer, "Report only this layer");
  layers->add_option("--metric", layers_c.metric, "Input-space metric")
      ->check(CLI::IsMember({"cosine", "dot", "euclidean"}));

  auto* decode = app.add_subcommand("decode", "Decode the largest rows and columns of each block");
  add_common(decode, decode_c);
  decode->add_option("--layer", decode_c.layer, "Use the layer output instead of the final output");
  decode->add_option("--vectors", vectors, "Rows and columns per block")->check(CLI::PositiveNumber);
  decode->add_option("--metric", decode_c.metric, "Input-space metric")
      ->check(CLI::IsMember({"cosine", "dot", "euclidean"}));

  auto* steer = app.add_subcommand("steer", "Greedy generation with and without steering");
  add_common(steer, steer_c, false);
  std::vector<std::string> steer_prompts;
  std::string steer_prompt, alignment = "clamp-last", schedule = "every-step";
  size_t steer_layer = 0, n_tokens = 8;
  double lambda = 0.5;
  steer->add_option("--prompt", steer_prompts, "Input prompt (repeatable)")->required();
  steer->add_option("--steer-prompt", steer_prompt, "Concept prompt")->required();
  steer->add_option("--layer", steer_layer, "Steering layer")->required();
  steer->add_option("--lambda", lambda, "Weight of the unsteered activations")
      ->check(CLI::Range(0.0, 1.0));
  steer->add_option("--n-tokens", n_tokens, "Tokens to generate")->check(CLI::PositiveNumber);
  steer->add_option("--alignment", alignment, "Position alignment")
      ->check(CLI::IsMember({"clamp-last", "truncate", "last-position-only"}));
  steer->add_option("--schedule", schedule, "When to steer")
      ->check(CLI::IsMember({"every-step", "first-step-only"}));

  auto* gen = app.add_subcommand("gen-model", "Write a seeded random model bundle");
  ll_model_config cfg;
  ll_config_default(&cfg);
  uint64_t seed = 0;
  std::string gen_out, activation = "swiglu", gen_format = "json";
  std::optional<size_t> d_head;
  bool trained = false, tie = false, embed_scale = false;
  gen->add_option("--seed", seed, "Generator seed");
  gen->add_option("--out", gen_out, "Bundle path")->required();
  gen->add_option("--d-model", cfg.d_model)->check(CLI::PositiveNumber);
  gen->add_option("--layers", cfg.n_layers)->check(CLI::PositiveNumber);
  gen->add_option("--heads", cfg.n_heads)->check(CLI::PositiveNumber);
  gen->add_option("--kv-heads", cfg.n_kv_heads)->check(CLI::PositiveNumber);
  gen->add_option("--d-head", d_head, "Defaults to d_model / heads")->check(CLI::PositiveNumber);
  gen->add_option("--d-ff", cfg.d_ff)->check(CLI::PositiveNumber);
  gen->add_option("--vocab", cfg.vocab_size)->check(CLI::PositiveNumber);
  gen->add_option("--activation", activation)
      ->check(CLI::IsMember({"swiglu", "geglu", "swish-glu"}));
  gen->add_option("--norm-eps", cfg.norm_eps);
  gen->add_option("--rope-theta", cfg.rope_theta);
  gen->add_flag("--tie-embeddings", tie);
  gen->add_flag("--embed-scale", embed_scale);
  gen->add_flag("--trained", trained, "Fit the unembedding to the bundled corpus");
  gen->add_option("--format", gen_format)->check(CLI::IsMember({"json", "csv", "md"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return 0;
    CLI::App* sub = nullptr;
    for (auto* s : app.get_subcommands()) sub = s;
    std::cerr << (sub ? sub->help() : app.help());
    return 1;
  }

  try {
    if (verify->parsed()) {
      auto o = report_options(verify_c);
      o.fd_step = fd_step;
      run_report(ll_report_verify, verify_c, o);
    } else if (svd->parsed()) {
      auto o = report_options(svd_c);
      o.retain = retain;
      run_report(ll_report_svd, svd_c, o);
    } else if (layers->parsed()) {
      run_report(ll_report_layers, layers_c, report_options(layers_c));
    } else if (decode->parsed()) {
      auto o = report_options(decode_c);
      o.n_vectors = vectors;
      run_report(ll_report_decode, decode_c, o);
    } else if (steer->parsed()) {
      BundlePtr b = open_bundle(steer_c.bundle);
      const auto steer_ids = tokenize(b.get(), steer_prompt);
      std::vector<std::vector<int32_t>> inputs;
      std::vector<const int32_t*> ptrs;
      std::vector<size_t> lens;
      for (const auto& p : steer_prompts) inputs.push_back(tokenize(b.get(), p));
      for (const auto& in : inputs) {
        ptrs.push_back(in.data());
        lens.push_back(in.size());
      }
      ll_steer_options so;
      ll_steer_options_default(&so);
      so.layer = steer_layer;
      so.lambda = lambda;
      so.n_tokens = n_tokens;
      so.alignment = alignment.c_str();
      so.schedule = schedule.c_str();
      const auto o = report_options(steer_c);
      char* s = nullptr;
      check(ll_report_steer(b.get(), steer_ids.data(), steer_ids.size(), ptrs.data(),
                            lens.data(), ptrs.size(), &so, &o, &s));
      emit(render(take_json(s), steer_c.format), steer_c.out);
    } else if (gen->parsed()) {
      cfg.d_head = d_head.value_or(cfg.n_heads ? cfg.d_model / cfg.n_heads : 0);
      cfg.activation = activation == "geglu"       ? LL_ACT_GEGLU
                       : activation == "swish-glu" ? LL_ACT_SWISH_GLU
                                                   : LL_ACT_SWIGLU;
      cfg.tie_embeddings = tie;
      cfg.embed_scale = embed_scale;
      ll_bundle* raw = nullptr;
      check(ll_bundle_generate(seed, &cfg, trained, &raw));
      BundlePtr b(raw);
      check(ll_bundle_write(b.get(), gen_out.c_str()));
      uint64_t sum = 0;
      double acc = 0.0;
      check(ll_bundle_checksum(b.get(), &sum));
      check(ll_bundle_corpus_accuracy(b.get(), &acc));
      char hex[17];
      std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(sum));
      json r = {{"command", "gen-model"},
                {"summary", {{"out", gen_out}, {"seed", seed}, {"checksum", hex},
                             {"trained", trained}, {"corpus_accuracy", acc}}}};
      r["table"] = {{"columns", {"key", "value"}}, {"rows", json::array()}};
      for (const auto& [k, v] : r["summary"].items()) r["table"]["rows"].push_back({k, v});
      std::cout << render(r, gen_format);
    }
  } catch (const Failure& f) {
    std::cerr << "error (" << ll_status_name(f.status) << "): " << f.message << "\n";
    return ll_status_exit_code(f.status);
  }
  return 0;
}
