#include "peft/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "peft/errors.hpp"

namespace peft {

static_assert(std::endian::native == std::endian::little, "binary format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'E', 'F', 'T', 'F', 'R', 'G', '\0'};
constexpr std::uint32_t kKindWeights = 1;
constexpr std::uint32_t kKindAdapter = 2;

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw DataError("cannot open " + path.string() + " for writing");
  }
  template <class T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void finish() {
    out_.flush();
    if (!out_) throw DataError("write to " + path_.string() + " failed");
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw DataError("cannot open " + path.string());
  }
  template <class T>
  T get() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in_) truncated();
    return v;
  }
  std::string bytes(std::size_t limit) {
    const auto n = get<std::uint32_t>();
    if (n > limit) throw DataError(path_.string() + ": string of " + std::to_string(n) + " bytes is implausible");
    std::string s(n, '\0');
    in_.read(s.data(), n);
    if (!in_) truncated();
    return s;
  }
  void raw(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (!in_) truncated();
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) throw DataError(path_.string() + ": trailing bytes after last tensor");
  }
  [[noreturn]] void truncated() { throw DataError(path_.string() + ": file is truncated"); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

void write_header(Writer& w, std::uint32_t kind, const ModelConfig& c, const std::string& spec) {
  for (char ch : kMagic) w.put(ch);
  w.put<std::uint32_t>(kFormatVersion);
  w.put<std::uint32_t>(kind);
  for (std::size_t v : {c.n_layers, c.d_model, c.n_heads, c.n_kv_heads, c.head_dim, c.vocab_size, c.max_seq, c.d_ff})
    w.put<std::uint64_t>(v);
  w.put<double>(c.rope_theta);
  w.put<double>(c.norm_eps);
  w.put<std::uint8_t>(c.tie_embeddings ? 1 : 0);
  w.bytes(spec);
}

void write_tensors(Writer& w, const NamedTensors& tensors) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.bytes(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.put<std::uint64_t>(d);
    for (Scalar v : t.data()) w.put<double>(static_cast<double>(v));
  }
}

struct Header {
  std::uint32_t kind = 0;
  ModelConfig config;
  std::string spec;
};

Header read_header(Reader& r) {
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw DataError(r.path().string() + ": not a peft-forge binary (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion)
    throw DataError(r.path().string() + ": unsupported format version " + std::to_string(version));
  Header h;
  h.kind = r.get<std::uint32_t>();
  std::size_t* fields[] = {&h.config.n_layers, &h.config.d_model,    &h.config.n_heads, &h.config.n_kv_heads,
                           &h.config.head_dim, &h.config.vocab_size, &h.config.max_seq, &h.config.d_ff};
  for (std::size_t* f : fields) *f = r.get<std::uint64_t>();
  h.config.rope_theta = r.get<double>();
  h.config.norm_eps = r.get<double>();
  h.config.tie_embeddings = r.get<std::uint8_t>() != 0;
  h.spec = r.bytes(4096);
  try {
    h.config.validate();
  } catch (const ConfigError& e) {
    throw DataError(r.path().string() + ": stored config is invalid: " + e.what());
  }
  return h;
}

NamedTensors read_tensors(Reader& r) {
  const auto n = r.get<std::uint32_t>();
  NamedTensors out;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.bytes(1024);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw DataError(r.path().string() + ": tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    std::vector<double> raw(shape_numel(shape));
    r.raw(reinterpret_cast<char*>(raw.data()), raw.size() * sizeof(double));
    out.push_back({std::move(name), Tensor::from(shape, std::vector<Scalar>(raw.begin(), raw.end()))});
  }
  r.expect_end();
  return out;
}

}  // namespace

void save_weights(const std::filesystem::path& path, const BaseWeights& weights) {
  Writer w(path);
  write_header(w, kKindWeights, weights.config, "");
  write_tensors(w, weights.named());
  w.finish();
}

BaseWeights load_weights(const std::filesystem::path& path) {
  Reader r(path);
  const Header h = read_header(r);
  if (h.kind != kKindWeights) throw DataError(path.string() + ": holds an adapter, not base weights");
  return BaseWeights::from_named(h.config, read_tensors(r));
}

void save_adapter(const std::filesystem::path& path, const Adapter& adapter) {
  Writer w(path);
  write_header(w, kKindAdapter, adapter.config(), to_string(adapter.spec()));
  write_tensors(w, adapter.trainable_parameters());
  w.finish();
}

Adapter load_adapter(const std::filesystem::path& path) {
  Reader r(path);
  const Header h = read_header(r);
  if (h.kind != kKindAdapter) throw DataError(path.string() + ": holds base weights, not an adapter");
  AdapterSpec spec;
  try {
    spec = parse_adapter_spec(h.spec);
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": stored adapter spec is invalid: " + e.what());
  }
  return Adapter::from_state(h.config, spec, read_tensors(r));
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string() + " for hashing");
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

}  // namespace peft
