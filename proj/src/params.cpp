#include "pfv2/params.hpp"

#include <algorithm>

#include "binio.hpp"

namespace pfv2 {

namespace {
constexpr char kMagic[4] = {'P', 'F', 'V', '2'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

Tensor& ParamStore::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(value));
  return entries_.back().second;
}

bool ParamStore::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& [key, value] : entries_) {
    if (key == name) return value;
  }
  throw std::out_of_range("ParamStore: no parameter named '" + name + "'");
}

Tensor& ParamStore::get(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const ParamStore&>(*this).get(name));
}

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [name, t] : entries_) {
    Tensor copy = t.detach();
    copy.set_requires_grad(t.requires_grad());
    out.add(name, copy);
  }
  return out;
}

std::vector<unsigned char> encode_checkpoint(const ParamStore& params) {
  binio::Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    w.bytes(t.data().data(), t.numel() * sizeof(double));
  }
  return std::move(w.buffer());
}

ParamStore decode_checkpoint(const std::vector<unsigned char>& bytes) {
  auto on_short = [](std::size_t offset, std::size_t wanted) {
    throw CheckpointError("checkpoint truncated at byte " + std::to_string(offset) + " (needed " +
                          std::to_string(wanted) + " more bytes)");
  };
  binio::Reader r(bytes, on_short);
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) throw CheckpointError("checkpoint: bad magic at byte 0");
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  ParamStore out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    if (name_len > r.remaining()) on_short(r.offset(), name_len);
    std::string name = r.str(name_len);
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.u64();
      if (d == 0) throw CheckpointError("checkpoint: zero dimension in '" + name + "' at byte " + std::to_string(r.offset()));
    }
    const std::size_t n = shape_numel(shape);
    if (n > r.remaining() / sizeof(double)) on_short(r.offset(), n * sizeof(double));
    std::vector<double> data(n);
    r.bytes(data.data(), n * sizeof(double));
    out.add(std::move(name), Tensor::from(std::move(shape), std::move(data), true));
  }
  if (r.remaining() != 0) {
    throw CheckpointError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes at byte " +
                          std::to_string(r.offset()));
  }
  return out;
}

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path) {
  binio::write_file(path, encode_checkpoint(params));
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(binio::read_file(path));
}

}  // namespace pfv2
