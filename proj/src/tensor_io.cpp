#include "gpo/tensor_io.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace gpo {

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

namespace {

constexpr char kMagic[4] = {'G', 'P', 'T', '1'};

void put_le(std::ostream& os, std::uint64_t v, int bytes) {
  char buf[8];
  for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, bytes);
}

std::uint64_t get_le(std::istream& is, int bytes) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), bytes)) throw FormatError("GPT1: truncated stream");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  if (t.data.size() != t.numel()) throw FormatError("GPT1: data length does not match shape");
  if (t.shape.size() > 255) throw FormatError("GPT1: rank too large");
  os.write(kMagic, 4);
  put_le(os, static_cast<std::uint8_t>(t.dtype), 1);
  put_le(os, t.shape.size(), 1);
  for (auto d : t.shape) put_le(os, d, 8);
  for (double x : t.data) {
    if (t.dtype == DType::F32) put_le(os, std::bit_cast<std::uint32_t>(static_cast<float>(x)), 4);
    else put_le(os, std::bit_cast<std::uint64_t>(x), 8);
  }
  if (!os) throw FormatError("GPT1: write failed");
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("GPT1: bad magic");
  Tensor t;
  const auto dt = get_le(is, 1);
  if (dt > 1) throw FormatError("GPT1: unknown dtype " + std::to_string(dt));
  t.dtype = static_cast<DType>(dt);
  const auto rank = get_le(is, 1);
  for (std::uint64_t i = 0; i < rank; ++i) t.shape.push_back(get_le(is, 8));
  const std::size_t n = t.numel();
  t.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (t.dtype == DType::F32) t.data[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(is, 4)));
    else t.data[i] = std::bit_cast<double>(get_le(is, 8));
  }
  return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  return read_tensor(is);
}

void save_field_tensor(const std::string& path, const Tensor& t, const std::vector<std::string>& channels,
                       const std::string& mask_ref) {
  save_tensor(path, t);
  nlohmann::json side;
  side["channels"] = channels;
  side["shape"] = t.shape;
  side["dtype"] = t.dtype == DType::F32 ? "f32" : "f64";
  side["mask"] = mask_ref.empty() ? nlohmann::json(nullptr) : nlohmann::json(mask_ref);
  std::ofstream os(path + ".json");
  if (!os) throw FormatError("cannot open " + path + ".json for writing");
  os << side.dump(2) << "\n";
}

}  // namespace gpo
