#include <bit>
#include <fstream>

#include "asl/model.hpp"

namespace asl {
namespace {

constexpr char kMagic[4] = {'A', 'S', 'L', 'N'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::span<const std::uint8_t> bytes(std::size_t n, const std::string& field) {
    if (in_.size() - pos_ < n) {
      throw LoadError(LoadError::Kind::truncated, field,
                      "truncated at byte " + std::to_string(in_.size()) + " (needed " + std::to_string(n) +
                          " bytes from offset " + std::to_string(pos_) + ")");
    }
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename U>
  U uint(const std::string& field) {
    auto b = bytes(sizeof(U), field);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b[i]) << (8 * i));
    return v;
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model) {
  Writer w;
  w.bytes(kMagic, 4);
  w.uint<std::uint32_t>(kCheckpointVersion);
  const std::string graph = serialize_model_config(model.graph());
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(graph.size()));
  w.bytes(graph.data(), graph.size());
  const auto params = model.named_parameters();
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(t->rank()));
    for (auto d : t->shape()) w.uint<std::uint64_t>(d);
    for (float v : t->values()) w.f32(v);
  }
  return w.take();
}

Model<float> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.bytes(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic)) {
    throw LoadError(LoadError::Kind::bad_magic, "magic", "not an ASLN checkpoint");
  }
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw LoadError(LoadError::Kind::bad_version, "version",
                    "unsupported version " + std::to_string(version) + " (expected " +
                        std::to_string(kCheckpointVersion) + ")");
  }
  const auto graph_len = r.uint<std::uint32_t>("graph length");
  auto graph_bytes = r.bytes(graph_len, "graph");
  ModelGraph graph;
  try {
    graph = parse_model_config(std::string_view(reinterpret_cast<const char*>(graph_bytes.data()), graph_bytes.size()));
  } catch (const Error& e) {
    throw LoadError(LoadError::Kind::malformed, "graph", e.what());
  }
  Model<float> model(std::move(graph));
  auto params = model.params();

  const auto count = r.uint<std::uint32_t>("parameter count");
  if (count != params.size()) {
    throw LoadError(LoadError::Kind::shape_mismatch, "parameter count",
                    "file has " + std::to_string(count) + " tensors, graph declares " + std::to_string(params.size()));
  }
  for (auto& p : params) {
    const auto name_len = r.uint<std::uint16_t>("parameter name length");
    auto name_bytes = r.bytes(name_len, "parameter name");
    const std::string name(name_bytes.begin(), name_bytes.end());
    if (name != p.name) {
      throw LoadError(LoadError::Kind::shape_mismatch, name, "expected parameter " + p.name);
    }
    const auto rank = r.uint<std::uint8_t>(name + " rank");
    Shape dims(rank);
    for (auto& d : dims) d = static_cast<std::size_t>(r.uint<std::uint64_t>(name + " dims"));
    if (dims != p.value->shape()) {
      throw LoadError(LoadError::Kind::shape_mismatch, name,
                      "shape " + to_string(dims) + " differs from graph shape " + to_string(p.value->shape()));
    }
    for (auto& v : p.value->values()) v = std::bit_cast<float>(r.uint<std::uint32_t>(name + " payload"));
  }
  if (!r.done()) {
    throw LoadError(LoadError::Kind::malformed, "trailer",
                    std::to_string(bytes.size() - r.position()) + " unexpected bytes after the last parameter");
  }
  return model;
}

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Model<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace asl
