#include "ctxbert/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "ctxbert/error.hpp"
#include "ctxbert/rng.hpp"

namespace ctxbert::training {
namespace {

constexpr std::string_view kMagic = "CTXBCKPT";

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <typename U>
  void put(U value) {
    char bytes[sizeof(U)];
    std::memcpy(bytes, &value, sizeof(U));
    buffer_.append(bytes, sizeof(U));
  }
  void put_bytes(std::string_view bytes) { buffer_.append(bytes); }
  const std::string& buffer() const { return buffer_; }

 private:
  std::string buffer_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  template <typename U>
  U get() {
    U value;
    std::memcpy(&value, take(sizeof(U)).data(), sizeof(U));
    return value;
  }
  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw FormatError("checkpoint truncated");
    const auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Parsed {
  model::ModelConfig config;
  std::map<std::string, std::pair<autograd::Shape, std::vector<float>>> tensors;
};

Parsed parse(const std::filesystem::path& path, bool with_tensors) {
  const std::string bytes = read_file(path);
  if (bytes.size() < kMagic.size() + 8 || bytes.compare(0, kMagic.size(), kMagic) != 0)
    throw FormatError(path.string() + ": not a checkpoint");
  const std::string_view body(bytes.data(), bytes.size() - 8);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 8);
  if (fnv1a64(body) != stored) throw FormatError(path.string() + ": checksum mismatch");

  Reader r(body);
  r.take(kMagic.size());
  if (const auto version = r.get<std::uint32_t>(); version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Parsed parsed;
  const auto json_len = r.get<std::uint64_t>();
  try {
    parsed.config = nlohmann::json::parse(r.take(json_len)).get<model::ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  if (!with_tensors) return parsed;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.take(r.get<std::uint32_t>()));
    autograd::Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint64_t>();
    std::vector<float> values(autograd::numel(shape));
    const auto raw = r.take(values.size() * sizeof(float));
    std::memcpy(values.data(), raw.data(), raw.size());
    parsed.tensors.emplace(std::move(name), std::make_pair(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw FormatError(path.string() + ": trailing bytes");
  return parsed;
}

}  // namespace

template <typename T>
void save_checkpoint(const model::ContextualBert<T>& net, const std::filesystem::path& path) {
  Writer w;
  w.put_bytes(kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  const std::string config = nlohmann::json(net.config()).dump();
  w.put<std::uint64_t>(config.size());
  w.put_bytes(config);
  const auto params = net.parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
    w.put_bytes(p.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) w.put<std::uint64_t>(d);
    for (T v : p.tensor.data()) w.put<float>(static_cast<float>(v));
  }
  const std::uint64_t checksum = fnv1a64(w.buffer());
  w.put<std::uint64_t>(checksum);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw FormatError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

model::ModelConfig read_checkpoint_config(const std::filesystem::path& path) { return parse(path, false).config; }

template <typename T>
std::unique_ptr<model::ContextualBert<T>> load_checkpoint(const std::filesystem::path& path) {
  auto parsed = parse(path, true);
  auto net = std::make_unique<model::ContextualBert<T>>(parsed.config, 0);
  for (auto& p : net->parameters()) {
    const auto it = parsed.tensors.find(p.name);
    if (it == parsed.tensors.end()) throw FormatError("checkpoint lacks tensor " + p.name);
    if (it->second.first != p.tensor.shape())
      throw FormatError("checkpoint tensor " + p.name + " has shape " + autograd::to_string(it->second.first) +
                        ", model expects " + autograd::to_string(p.tensor.shape()));
    auto dst = p.tensor.mutable_data();
    std::copy(it->second.second.begin(), it->second.second.end(), dst.begin());
  }
  return net;
}

template void save_checkpoint<float>(const model::ContextualBert<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(const model::ContextualBert<double>&, const std::filesystem::path&);
template std::unique_ptr<model::ContextualBert<float>> load_checkpoint<float>(const std::filesystem::path&);
template std::unique_ptr<model::ContextualBert<double>> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace ctxbert::training
