#include "gfnvi/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "gfnvi/error.hpp"

namespace gfnvi {

namespace {

constexpr char kMagic[8] = {'G', 'F', 'N', 'V', 'I', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u32(std::uint32_t v) { little(v); }
  void u64(std::uint64_t v) { little(v); }
  void f64(double v) { little(std::bit_cast<std::uint64_t>(v)); }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }

  std::vector<std::uint8_t> bytes;

 private:
  template <typename T>
  void little(T v) {
    for (std::size_t k = 0; k < sizeof(T); ++k) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() { return little<std::uint32_t>(); }
  std::uint64_t u64() { return little<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(little<std::uint64_t>()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorCode::IoError, "truncated checkpoint");
  }
  template <typename T>
  T little() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t k = 0; k < sizeof(T); ++k) v |= static_cast<T>(bytes_[pos_ + k]) << (8 * k);
    pos_ += sizeof(T);
    return v;
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encodeCheckpoint(const Checkpoint& ckpt) {
  if (ckpt.values.size() != ckpt.layout.total()) {
    throw Error(ErrorCode::DimensionMismatch, "checkpoint values do not match layout");
  }
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.nets.size()));
  w.u64(ckpt.seed);
  w.u64(ckpt.step);
  w.u64(ckpt.values.size());
  for (const Slice& s : {ckpt.layout.phi, ckpt.layout.theta, ckpt.layout.psi, ckpt.layout.xi}) {
    w.u64(s.offset);
    w.u64(s.size);
  }
  for (const NamedSpec& net : ckpt.nets) {
    w.u32(static_cast<std::uint32_t>(net.name.size()));
    w.raw(net.name.data(), net.name.size());
    w.u32(static_cast<std::uint32_t>(net.spec.inputDim));
    w.u32(static_cast<std::uint32_t>(net.spec.outputDim));
    w.u32(net.spec.activation == Activation::Tanh ? 0U : 1U);
    w.u32(static_cast<std::uint32_t>(net.spec.hidden.size()));
    for (int h : net.spec.hidden) w.u32(static_cast<std::uint32_t>(h));
    w.f64(net.spec.initScale);
  }
  for (double v : ckpt.values) w.f64(v);
  return std::move(w.bytes);
}

Checkpoint decodeCheckpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw Error(ErrorCode::IoError, "not a checkpoint (bad magic)");
  }
  if (r.u32() != kVersion) throw Error(ErrorCode::IoError, "unsupported checkpoint version");
  const std::uint32_t netCount = r.u32();
  Checkpoint ckpt;
  ckpt.seed = r.u64();
  ckpt.step = r.u64();
  const std::uint64_t count = r.u64();
  for (Slice* s : {&ckpt.layout.phi, &ckpt.layout.theta, &ckpt.layout.psi, &ckpt.layout.xi}) {
    s->offset = r.u64();
    s->size = r.u64();
  }
  if (ckpt.layout.total() != count) throw Error(ErrorCode::IoError, "slice table does not cover parameters");
  for (std::uint32_t k = 0; k < netCount; ++k) {
    NamedSpec net;
    net.name = r.str(r.u32());
    net.spec.inputDim = static_cast<int>(r.u32());
    net.spec.outputDim = static_cast<int>(r.u32());
    net.spec.activation = r.u32() == 0 ? Activation::Tanh : Activation::LeakyRelu;
    const std::uint32_t hidden = r.u32();
    for (std::uint32_t h = 0; h < hidden; ++h) net.spec.hidden.push_back(static_cast<int>(r.u32()));
    net.spec.initScale = r.f64();
    ckpt.nets.push_back(std::move(net));
  }
  ckpt.values.resize(count);
  for (double& v : ckpt.values) v = r.f64();
  if (!r.done()) throw Error(ErrorCode::IoError, "trailing bytes in checkpoint");
  return ckpt;
}

void writeCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encodeCheckpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint readCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decodeCheckpoint(bytes);
}

nlohmann::json checkpointToJson(const Checkpoint& ckpt) {
  nlohmann::json j;
  j["seed"] = ckpt.seed;
  j["step"] = ckpt.step;
  auto slice = [](const Slice& s) { return nlohmann::json{{"offset", s.offset}, {"size", s.size}}; };
  j["slices"] = {{"phi", slice(ckpt.layout.phi)},
                 {"theta", slice(ckpt.layout.theta)},
                 {"psi", slice(ckpt.layout.psi)},
                 {"xi", slice(ckpt.layout.xi)}};
  j["nets"] = nlohmann::json::array();
  for (const NamedSpec& net : ckpt.nets) {
    j["nets"].push_back({{"name", net.name},
                         {"input_dim", net.spec.inputDim},
                         {"output_dim", net.spec.outputDim},
                         {"hidden", net.spec.hidden},
                         {"activation", activationName(net.spec.activation)},
                         {"init_scale", net.spec.initScale}});
  }
  j["values"] = ckpt.values;
  return j;
}

}  // namespace gfnvi
