#include "loclin/bundle_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace loclin {

using ojson = nlohmann::ordered_json;

std::size_t NamedTensor::element_count() const {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

const NamedTensor* TensorFile::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> b) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::uint32_t get_u32(const std::uint8_t* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

ojson config_json(const ModelConfig& c) {
  ojson j;
  j["d_model"] = c.d_model;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["n_kv_heads"] = c.n_kv_heads;
  j["d_head"] = c.d_head;
  j["d_ff"] = c.d_ff;
  j["vocab_size"] = c.vocab_size;
  j["activation"] = to_string(c.activation);
  j["norm_eps"] = c.norm_eps;
  j["rope_theta"] = c.rope_theta;
  j["tie_embeddings"] = c.tie_embeddings;
  j["embed_scale"] = c.embed_scale;
  return j;
}

ModelConfig config_from(const ojson& j) {
  try {
    ModelConfig c;
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.n_kv_heads = j.at("n_kv_heads").get<std::size_t>();
    c.d_head = j.at("d_head").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.activation = activation_from_string(j.at("activation").get<std::string>());
    c.norm_eps = j.at("norm_eps").get<double>();
    c.rope_theta = j.at("rope_theta").get<double>();
    c.tie_embeddings = j.at("tie_embeddings").get<bool>();
    c.embed_scale = j.value("embed_scale", false);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format, std::string("malformed config: ") + e.what());
  }
}

}  // namespace

std::string config_to_json(const ModelConfig& config) { return config_json(config).dump(); }

ModelConfig config_from_json(const std::string& json) {
  try {
    return config_from(ojson::parse(json));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::format, std::string("malformed config JSON: ") + e.what());
  }
}

std::vector<std::uint8_t> serialize(const TensorFile& file) {
  std::vector<std::uint8_t> payload;
  ojson tensors = ojson::array();
  for (const auto& t : file.tensors) {
    require(t.values.size() == t.element_count(), ErrorCode::shape,
            "tensor " + t.name + " has " + std::to_string(t.values.size()) +
                " values for its shape");
    ojson e;
    e["name"] = t.name;
    e["dtype"] = "f32";
    e["shape"] = t.shape;
    e["byte_offset"] = payload.size();
    tensors.push_back(std::move(e));
    for (float v : t.values) put_u32(payload, std::bit_cast<std::uint32_t>(v));
  }
  ojson manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["config"] = file.config ? config_json(*file.config) : ojson(nullptr);
  manifest["tensors"] = std::move(tensors);
  manifest["checksum"] = hex64(fnv1a64(payload));
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

TensorFile deserialize(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= 16 && std::memcmp(bytes.data(), kMagic, 8) == 0,
          ErrorCode::format, "not a tensor container (bad magic)");
  const std::uint64_t mlen = get_u64(bytes.subspan(8, 8));
  require(mlen <= bytes.size() - 16, ErrorCode::format, "manifest length out of bounds");
  const std::string text(reinterpret_cast<const char*>(bytes.data() + 16), mlen);
  const auto payload = bytes.subspan(16 + mlen);

  ojson manifest;
  try {
    manifest = ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::format, std::string("malformed manifest: ") + e.what());
  }

  TensorFile file;
  try {
    const int version = manifest.at("format_version").get<int>();
    require(version == kFormatVersion, ErrorCode::format,
            "unsupported format version " + std::to_string(version));
    if (!manifest.at("config").is_null()) file.config = config_from(manifest.at("config"));

    struct Span {
      std::uint64_t begin, end;
      std::string name;
    };
    std::vector<Span> spans;
    for (const auto& e : manifest.at("tensors")) {
      NamedTensor t;
      t.name = e.at("name").get<std::string>();
      require(e.at("dtype").get<std::string>() == "f32", ErrorCode::format,
              "tensor " + t.name + ": only f32 is supported");
      t.shape = e.at("shape").get<std::vector<std::size_t>>();
      const auto offset = e.at("byte_offset").get<std::uint64_t>();
      const std::uint64_t nbytes = 4ull * t.element_count();
      require(offset % 4 == 0, ErrorCode::format, "tensor " + t.name + ": misaligned offset");
      require(offset <= payload.size() && nbytes <= payload.size() - offset,
              ErrorCode::format,
              "tensor " + t.name + " lies outside the payload (truncated file?)");
      for (const auto& s : spans)
        require(offset >= s.end || offset + nbytes <= s.begin || nbytes == 0,
                ErrorCode::format, "tensor " + t.name + " overlaps " + s.name);
      spans.push_back({offset, offset + nbytes, t.name});
      t.values.resize(t.element_count());
      for (std::size_t i = 0; i < t.values.size(); ++i)
        t.values[i] = std::bit_cast<float>(get_u32(payload.data() + offset + 4 * i));
      file.tensors.push_back(std::move(t));
    }
    const auto expected = manifest.at("checksum").get<std::string>();
    require(expected == hex64(fnv1a64(payload)), ErrorCode::checksum,
            "payload checksum mismatch (expected " + expected + ")");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format, std::string("malformed manifest: ") + e.what());
  }
  return file;
}

void write_tensor_file(const TensorFile& file, const std::filesystem::path& path) {
  const auto bytes = serialize(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorCode::io, "failed writing " + path.string());
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

NamedTensor matrix_tensor(std::string name, const Matrix& m) {
  return {std::move(name), {m.rows(), m.cols()}, m.values()};
}

NamedTensor matrix_tensor(std::string name, const DMatrix& m) {
  NamedTensor t{std::move(name), {m.rows(), m.cols()}, {}};
  t.values.assign(m.values().begin(), m.values().end());
  return t;
}

Matrix tensor_matrix(const NamedTensor& t) {
  require(t.shape.size() == 2, ErrorCode::format, "tensor " + t.name + " is not 2-D");
  Matrix m(t.shape[0], t.shape[1]);
  m.values() = t.values;
  return m;
}

namespace {

NamedTensor vec_tensor(std::string name, const Vec& v) {
  return {std::move(name), {v.size()}, v};
}

const NamedTensor& need(const TensorFile& f, const std::string& name) {
  const NamedTensor* t = f.find(name);
  require(t != nullptr, ErrorCode::format, "missing tensor " + name);
  return *t;
}

Matrix need_matrix(const TensorFile& f, const std::string& name) {
  return tensor_matrix(need(f, name));
}

Vec need_vec(const TensorFile& f, const std::string& name) {
  const auto& t = need(f, name);
  require(t.shape.size() == 1, ErrorCode::format, "tensor " + name + " is not 1-D");
  return t.values;
}

}  // namespace

std::vector<NamedTensor> bundle_tensors(const ModelBundle& b) {
  std::vector<NamedTensor> out;
  out.push_back(matrix_tensor("embedding", b.embedding));
  for (std::size_t i = 0; i < b.layers.size(); ++i) {
    const auto& l = b.layers[i];
    const auto p = "layers." + std::to_string(i) + ".";
    out.push_back(vec_tensor(p + "attn_norm", l.attn_norm));
    out.push_back(matrix_tensor(p + "wq", l.wq));
    out.push_back(matrix_tensor(p + "wk", l.wk));
    out.push_back(matrix_tensor(p + "wv", l.wv));
    out.push_back(matrix_tensor(p + "wo", l.wo));
    out.push_back(vec_tensor(p + "mlp_norm", l.mlp_norm));
    out.push_back(matrix_tensor(p + "w_gate", l.w_gate));
    out.push_back(matrix_tensor(p + "w_up", l.w_up));
    out.push_back(matrix_tensor(p + "w_down", l.w_down));
  }
  out.push_back(vec_tensor("final_norm", b.final_norm));
  if (!b.config.tie_embeddings) out.push_back(matrix_tensor("unembedding", b.unembedding));
  return out;
}

ModelBundle bundle_from_tensors(const TensorFile& f) {
  require(f.config.has_value(), ErrorCode::format, "container has no model config");
  ModelBundle b;
  b.config = *f.config;
  b.embedding = need_matrix(f, "embedding");
  for (std::size_t i = 0; i < b.config.n_layers; ++i) {
    const auto p = "layers." + std::to_string(i) + ".";
    LayerWeights l;
    l.attn_norm = need_vec(f, p + "attn_norm");
    l.wq = need_matrix(f, p + "wq");
    l.wk = need_matrix(f, p + "wk");
    l.wv = need_matrix(f, p + "wv");
    l.wo = need_matrix(f, p + "wo");
    l.mlp_norm = need_vec(f, p + "mlp_norm");
    l.w_gate = need_matrix(f, p + "w_gate");
    l.w_up = need_matrix(f, p + "w_up");
    l.w_down = need_matrix(f, p + "w_down");
    b.layers.push_back(std::move(l));
  }
  b.final_norm = need_vec(f, "final_norm");
  if (!b.config.tie_embeddings) b.unembedding = need_matrix(f, "unembedding");
  try {
    b.validate();
  } catch (const Error& e) {
    // Shape conflicts between manifest config and tensors are format errors.
    fail(e.code() == ErrorCode::config ? ErrorCode::format : e.code(), e.what());
  }
  return b;
}

void write_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
  bundle.validate();
  write_tensor_file(TensorFile{bundle.config, bundle_tensors(bundle)}, path);
}

ModelBundle read_bundle(const std::filesystem::path& path) {
  return bundle_from_tensors(read_tensor_file(path));
}

void export_tensors(const std::vector<NamedTensor>& tensors,
                    const std::filesystem::path& path) {
  write_tensor_file(TensorFile{std::nullopt, tensors}, path);
}

std::vector<NamedTensor> frozen_tensors(const FrozenState& fz) {
  std::vector<NamedTensor> out;
  Vec meta = {static_cast<float>(fz.seq_len), static_cast<float>(fz.d_model)};
  for (int i = 0; i < 4; ++i)
    meta.push_back(static_cast<float>((fz.anchor_hash >> (16 * i)) & 0xFFFFu));
  out.push_back(vec_tensor("frozen.meta", meta));
  for (std::size_t i = 0; i < fz.layers.size(); ++i) {
    const auto& l = fz.layers[i];
    const auto p = "frozen.layers." + std::to_string(i) + ".";
    out.push_back(vec_tensor(p + "attn_norm_divisor", l.attn_norm_divisor));
    NamedTensor probs{p + "attn_probs", {l.probs.size(), fz.seq_len, fz.seq_len}, {}};
    for (const auto& m : l.probs)
      probs.values.insert(probs.values.end(), m.values().begin(), m.values().end());
    out.push_back(std::move(probs));
    out.push_back(vec_tensor(p + "mlp_norm_divisor", l.mlp_norm_divisor));
    out.push_back(matrix_tensor(p + "mlp_gate", l.gate));
  }
  out.push_back(vec_tensor("frozen.final_norm_divisor", fz.final_norm_divisor));
  return out;
}

FrozenState frozen_from_tensors(const TensorFile& f) {
  FrozenState fz;
  const Vec meta = need_vec(f, "frozen.meta");
  require(meta.size() == 6, ErrorCode::format, "frozen.meta must have 6 entries");
  fz.seq_len = static_cast<std::size_t>(meta[0]);
  fz.d_model = static_cast<std::size_t>(meta[1]);
  for (int i = 0; i < 4; ++i)
    fz.anchor_hash |= static_cast<std::uint64_t>(meta[2 + i]) << (16 * i);
  for (std::size_t i = 0;; ++i) {
    const auto p = "frozen.layers." + std::to_string(i) + ".";
    if (!f.find(p + "attn_norm_divisor")) break;
    FrozenLayer l;
    l.attn_norm_divisor = need_vec(f, p + "attn_norm_divisor");
    const auto& probs = need(f, p + "attn_probs");
    require(probs.shape.size() == 3 && probs.shape[1] == fz.seq_len &&
                probs.shape[2] == fz.seq_len,
            ErrorCode::format, p + "attn_probs has the wrong shape");
    const std::size_t kk = fz.seq_len * fz.seq_len;
    for (std::size_t h = 0; h < probs.shape[0]; ++h) {
      Matrix m(fz.seq_len, fz.seq_len);
      std::copy(probs.values.begin() + static_cast<std::ptrdiff_t>(h * kk),
                probs.values.begin() + static_cast<std::ptrdiff_t>((h + 1) * kk),
                m.values().begin());
      l.probs.push_back(std::move(m));
    }
    l.mlp_norm_divisor = need_vec(f, p + "mlp_norm_divisor");
    l.gate = need_matrix(f, p + "mlp_gate");
    fz.layers.push_back(std::move(l));
  }
  fz.final_norm_divisor = need_vec(f, "frozen.final_norm_divisor");
  return fz;
}

}  // namespace loclin
