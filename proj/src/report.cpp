#include "loclin/report.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace loclin {

namespace {

using json = nlohmann::ordered_json;

std::string text_of(const ToyVocab& vocab, const TokenSequence& seq) {
  std::vector<TokenId> ids = seq.ids;
  if (!ids.empty() && ids.front() == ToyVocab::bos) ids.erase(ids.begin());
  return vocab.decode(ids);
}

json tokens_json(const ToyVocab& vocab, const TokenSequence& seq) {
  json out = json::array();
  for (TokenId id : seq.ids) out.push_back({{"id", id}, {"text", vocab.text(id)}});
  return out;
}

json decoding_json(const TokenDecoding& d) {
  json entries = json::array();
  for (const auto& e : d.entries)
    entries.push_back({{"id", e.id}, {"text", e.text}, {"score", e.score}});
  return {{"space", to_string(d.space)}, {"source", d.source}, {"tokens", entries}};
}

std::string joined(const TokenDecoding& d) {
  std::string out;
  for (const auto& e : d.entries) {
    if (!out.empty()) out += ' ';
    out += e.text;
  }
  return out;
}

// Non-finite doubles become null in JSON.
json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json table(std::vector<std::string> columns) {
  return {{"columns", std::move(columns)}, {"rows", json::array()}};
}

void check_common(const ReportOptions& o, const ModelBundle& bundle,
                  const TokenSequence& tokens) {
  require(o.top_k >= 1, ErrorCode::usage, "top-k must be at least 1");
  require(!tokens.ids.empty(), ErrorCode::usage, "prompt is empty");
  if (o.layer)
    require(*o.layer < bundle.config.n_layers, ErrorCode::usage,
            "layer " + std::to_string(*o.layer) + " is out of range (model has " +
                std::to_string(bundle.config.n_layers) + " layers)");
}

Target target_of(const ReportOptions& o) {
  return o.layer ? Target::at(*o.layer, TapPoint::layer_out) : Target::final_output();
}

json header(const char* command, const ModelBundle& bundle, const ToyVocab& vocab,
            const TokenSequence& tokens) {
  return {{"command", command},
          {"tokens", tokens_json(vocab, tokens)},
          {"d_model", bundle.config.d_model},
          {"n_layers", bundle.config.n_layers}};
}

json spectrum_json(const std::vector<double>& s) {
  const bool zero = std::all_of(s.begin(), s.end(), [](double v) { return v == 0.0; });
  return {{"singular_values", s},
          {"stable_rank", zero ? json(nullptr) : json(stable_rank(s))},
          {"zero_map", zero},
          {"normalized_by_max", normalized_by_max(s)},
          {"normalized_by_frobenius", normalized_by_frobenius(s)}};
}

}  // namespace

std::string verify_report(const ModelBundle& bundle, const ToyVocab& vocab,
                          const TokenSequence& tokens, const ReportOptions& options) {
  check_common(options, bundle, tokens);
  require(options.fd_step > 0.0, ErrorCode::usage, "finite-difference step must be positive");
  const auto x = embed(bundle, tokens);
  const auto dj = detached_jacobian(bundle, x, Target::final_output(), options.jacobian);
  const auto rd = reconstruct(bundle, dj, x);
  const auto sj = numeric_jacobian_fd(bundle, x, options.fd_step, Target::final_output(),
                                      options.jacobian);
  const auto rs = reconstruct(bundle, sj, x);

  json r = header("verify", bundle, vocab, tokens);
  const double contrast = rd.rel_error > 0.0 ? rs.rel_error / rd.rel_error : INFINITY;
  r["summary"] = {{"sequence_length", tokens.size()},
                  {"rel_error_detached", rd.rel_error},
                  {"rel_error_standard", rs.rel_error},
                  {"contrast", number(contrast)},
                  {"fd_step", options.fd_step},
                  {"tolerance", 1e-5},
                  {"pass", rd.rel_error <= 1e-5}};
  r["scatter"] = {{"reference", rd.reference},
                  {"detached", rd.estimate},
                  {"standard", rs.estimate}};
  json t = table({"index", "output", "detached", "standard"});
  for (std::size_t i = 0; i < rd.reference.size(); ++i)
    t["rows"].push_back({i, rd.reference[i], rd.estimate[i], rs.estimate[i]});
  r["table"] = std::move(t);
  return r.dump(2);
}

std::string svd_report(const ModelBundle& bundle, const ToyVocab& vocab,
                       const TokenSequence& tokens, const ReportOptions& options) {
  check_common(options, bundle, tokens);
  const auto x = embed(bundle, tokens);
  const Target target = target_of(options);
  const auto dj = detached_jacobian(bundle, x, target, options.jacobian);
  const std::size_t retain = std::min(options.retain, bundle.config.d_model);

  json r = header("svd", bundle, vocab, tokens);
  r["summary"] = {{"target", target.label()},
                  {"top_k", options.top_k},
                  {"retained", retain},
                  {"metric", to_string(options.metric)}};
  json positions = json::array();
  json t = table({"position", "token", "direction", "orientation", "singular_value", "tokens"});
  for (std::size_t p = 0; p < dj.blocks.size(); ++p) {
    const std::string token = vocab.text(tokens.ids[p]);
    const auto s = svd(dj.blocks[p], retain, "J" + std::to_string(p));
    json entry = {{"position", p}, {"token", token}};
    entry.update(spectrum_json(s.singular_values));
    json panels = json::array();
    const bool zero = s.singular_values.front() == 0.0;
    if (!zero) {
      for (const auto& pd : decode_svd_panels(s, bundle, vocab, options.top_k, options.metric)) {
        panels.push_back({{"index", pd.index},
                          {"singular_value", pd.singular_value},
                          {"u_pos", decoding_json(pd.u_pos)},
                          {"u_neg", decoding_json(pd.u_neg)},
                          {"v_pos", decoding_json(pd.v_pos)},
                          {"v_neg", decoding_json(pd.v_neg)}});
        const std::pair<const char*, const TokenDecoding*> sides[] = {
            {"U+", &pd.u_pos}, {"U-", &pd.u_neg}, {"V+", &pd.v_pos}, {"V-", &pd.v_neg}};
        for (const auto& [name, d] : sides)
          t["rows"].push_back({p, token, pd.index, name, pd.singular_value, joined(*d)});
      }
    }
    entry["panels"] = std::move(panels);
    positions.push_back(std::move(entry));
  }
  r["positions"] = std::move(positions);
  r["table"] = std::move(t);
  return r.dump(2);
}

std::string layers_report(const ModelBundle& bundle, const ToyVocab& vocab,
                          const TokenSequence& tokens, const ReportOptions& options) {
  check_common(options, bundle, tokens);
  const auto x = embed(bundle, tokens);
  const std::size_t k = tokens.size(), d = bundle.config.d_model;
  const std::size_t retain = std::max<std::size_t>(2, std::min(options.retain, d));

  ProfileOptions po;
  po.points = {TapPoint::layer_out, TapPoint::attn_out, TapPoint::mlp_out};
  po.jacobian = options.jacobian;
  const auto profile = spectrum_profile(bundle, x, po);

  const auto final_j = detached_jacobian(bundle, x, Target::final_output(), options.jacobian);
  const auto final_svd = svd(final_j.blocks.back(), retain, "final");

  json r = header("layers", bundle, vocab, tokens);
  r["summary"] = {{"sequence_length", k},
                  {"layers", options.layer ? json(*options.layer) : json("all")},
                  {"top_k", options.top_k}};

  json t = table({"layer", "point", "series", "position", "index", "singular_value",
                  "normalized_by_max", "normalized_by_frobenius", "stable_rank"});
  json series = json::array();
  for (const auto& pt : profile.points) {
    if (options.layer && pt.layer != *options.layer) continue;
    const auto by_max = normalized_by_max(pt.singular_values);
    const auto by_frob = normalized_by_frobenius(pt.singular_values);
    series.push_back({{"layer", pt.layer},
                      {"point", to_string(pt.point)},
                      {"series", to_string(pt.series)},
                      {"position", pt.position},
                      {"stable_rank", pt.stable_rank},
                      {"zero_map", pt.zero_map},
                      {"singular_values", pt.singular_values},
                      {"normalized_by_max", by_max},
                      {"normalized_by_frobenius", by_frob}});
    for (std::size_t i = 0; i < pt.singular_values.size(); ++i)
      t["rows"].push_back({pt.layer, to_string(pt.point), to_string(pt.series), pt.position, i,
                           pt.singular_values[i], by_max[i], by_frob[i], pt.stable_rank});
  }
  r["series"] = std::move(series);

  std::vector<std::string> grid_cols = {"layer"};
  for (std::size_t p = 0; p < k; ++p) grid_cols.push_back(std::to_string(p) + ":" + vocab.text(tokens.ids[p]));
  json grid = {{"title", "U0 per position (logit lens)"}, {"columns", grid_cols}, {"rows", json::array()}};

  json layers = json::array();
  for (std::size_t l = 0; l < bundle.config.n_layers; ++l) {
    if (options.layer && l != *options.layer) continue;
    const auto lj = layer_detached_jacobian(bundle, x, l, TapPoint::layer_out, options.jacobian);
    json grid_row = {l};
    for (const auto& block : lj.blocks) {
      const auto top = svd(block, 1);
      grid_row.push_back(top.singular_values.front() == 0.0
                             ? std::string("(zero)")
                             : joined(decode_logit_lens(top.u_panel.column(0), bundle, vocab,
                                                        options.top_k)));
    }
    grid["rows"].push_back(std::move(grid_row));
    const auto s = svd(lj.blocks.back(), retain, "layer " + std::to_string(l));
    json entry = {{"layer", l}, {"position", k - 1}};
    entry.update(spectrum_json(s.singular_values));
    if (s.singular_values.front() > 0.0 && final_svd.singular_values.front() > 0.0) {
      const auto proj = project_onto_final(s.u_panel, final_svd.u_panel);
      entry["projection_onto_final"] = {{proj[0][0], proj[0][1]}, {proj[1][0], proj[1][1]}};
      json dirs = json::array();
      for (std::size_t c = 0; c < s.retained; ++c) {
        if (s.singular_values[c] == 0.0) break;
        const std::vector<double> u = s.u_panel.column(c);
        const std::string tag = "layer " + std::to_string(l) + " U" + std::to_string(c);
        dirs.push_back(
            {{"index", c},
             {"singular_value", s.singular_values[c]},
             {"logit_lens", decoding_json(decode_logit_lens(u, bundle, vocab, options.top_k, tag))},
             {"input_space", decoding_json(nearest_input_tokens(u, bundle, vocab, options.top_k,
                                                                options.metric, tag))}});
      }
      entry["directions"] = std::move(dirs);
    } else {
      entry["projection_onto_final"] = nullptr;
      entry["directions"] = json::array();
    }
    layers.push_back(std::move(entry));
  }
  r["layers"] = std::move(layers);
  json fin = {{"position", k - 1}};
  fin.update(spectrum_json(final_svd.singular_values));
  r["final"] = std::move(fin);

  if (k == 1) {
    const auto f = layer_factorization(bundle, x, options.jacobian);
    r["factorization"] = {{"rel_frobenius", f.rel_frobenius}};
  } else {
    r["factorization"] = nullptr;
  }
  r["table"] = std::move(t);
  r["grids"] = json::array({std::move(grid)});
  return r.dump(2);
}

std::string decode_report(const ModelBundle& bundle, const ToyVocab& vocab,
                          const TokenSequence& tokens, const ReportOptions& options) {
  check_common(options, bundle, tokens);
  const auto x = embed(bundle, tokens);
  const Target target = target_of(options);
  const auto dj = detached_jacobian(bundle, x, target, options.jacobian);
  const std::size_t n = std::min(options.n_vectors, bundle.config.d_model);

  json r = header("decode", bundle, vocab, tokens);
  r["summary"] = {{"target", target.label()},
                  {"vectors", n},
                  {"top_k", options.top_k},
                  {"metric", to_string(options.metric)}};
  json t = table({"position", "token", "kind", "index", "norm", "tokens"});
  json positions = json::array();
  for (std::size_t p = 0; p < dj.blocks.size(); ++p) {
    const std::string token = vocab.text(tokens.ids[p]);
    auto emit = [&](const char* kind, const std::vector<RankedVector>& vs) {
      json out = json::array();
      for (const auto& v : vs) {
        json e = {{"index", v.index}, {"norm", v.norm}, {"zero_direction", v.zero_direction}};
        e["decoding"] = v.decoding ? decoding_json(*v.decoding) : json(nullptr);
        out.push_back(std::move(e));
        t["rows"].push_back({p, token, kind, v.index, v.norm,
                             v.decoding ? joined(*v.decoding) : std::string("(zero)")});
      }
      return out;
    };
    json entry = {{"position", p}, {"token", token}};
    entry["rows"] = emit("row", top_rows_by_norm(dj.blocks[p], n, bundle, vocab,
                                                 options.top_k, options.metric));
    entry["cols"] = emit("col", top_cols_by_norm(dj.blocks[p], n, bundle, vocab, options.top_k));
    positions.push_back(std::move(entry));
  }
  r["positions"] = std::move(positions);
  r["table"] = std::move(t);
  return r.dump(2);
}

std::string steer_report(const ModelBundle& bundle, const ToyVocab& vocab,
                         const SteerRequest& request, const ReportOptions& options) {
  require(!request.inputs.empty(), ErrorCode::usage, "steer needs at least one prompt");
  require(!request.steer_prompt.ids.empty(), ErrorCode::usage, "steer prompt is empty");
  require(request.layer < bundle.config.n_layers, ErrorCode::usage,
          "layer " + std::to_string(request.layer) + " is out of range");
  SteeringSpec spec = build_steering(bundle, request.steer_prompt, request.layer,
                                     request.lambda, request.alignment, options.jacobian);
  spec.schedule = request.schedule;

  json r = {{"command", "steer"}};
  r["summary"] = {{"steer_prompt", text_of(vocab, request.steer_prompt)},
                  {"layer", request.layer},
                  {"lambda", request.lambda},
                  {"alignment", to_string(request.alignment)},
                  {"schedule", to_string(request.schedule)},
                  {"n_tokens", request.n_tokens}};
  json t = table({"input", "normal", "steered"});
  json transcripts = json::array();
  for (const auto& input : request.inputs) {
    require(!input.ids.empty(), ErrorCode::usage, "prompt is empty");
    const auto tr = generate_steered(bundle, input, spec, request.n_tokens);
    const std::string in = text_of(vocab, input), normal = vocab.decode(tr.normal),
                      steered = vocab.decode(tr.steered);
    transcripts.push_back({{"input", in},
                           {"input_ids", input.ids},
                           {"normal", normal},
                           {"normal_ids", tr.normal},
                           {"steered", steered},
                           {"steered_ids", tr.steered}});
    t["rows"].push_back({in, normal, steered});
  }
  r["transcripts"] = std::move(transcripts);
  r["table"] = std::move(t);
  return r.dump(2);
}

}  // namespace loclin
