#include "empssl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "empssl/errors.hpp"

namespace empssl {

namespace {

void put_u16(std::ostream& os, std::uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF)};
  os.write(b, 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 4);
}

void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

std::uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float get_f32(std::istream& is) {
  std::uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void save_checkpoint(const Network& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);

  auto tensors = net.state_tensors();
  os.write("EMPS", 4);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xFFFF) throw IoError("tensor name too long: " + name);
    put_u16(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(static_cast<char>(t->rank()));
    for (std::size_t d : t->dims()) put_u32(os, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < t->size(); ++i)
      put_f32(os, static_cast<float>((*t)[i]));
  }
  if (!os) throw IoError("short write while saving checkpoint: " + path);
}

void load_checkpoint(Network& net, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);

  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "EMPS", 4) != 0)
    throw IoError("bad checkpoint magic in " + path);
  const std::uint32_t version = get_u32(is);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = get_u32(is);

  auto tensors = net.state_tensors();
  if (count != tensors.size())
    throw IoError("checkpoint holds " + std::to_string(count) + " tensors, network has " +
                  std::to_string(tensors.size()));

  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint16_t name_len = get_u16(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint8_t rank = static_cast<std::uint8_t>(is.get());
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = get_u32(is);
    if (!is) throw IoError("truncated checkpoint: " + path);

    Tensor* target = nullptr;
    for (auto& [tname, t] : tensors)
      if (tname == name) {
        target = t;
        break;
      }
    if (!target) throw IoError("checkpoint tensor " + name + " not present in network");
    if (target->dims() != dims)
      throw IoError("checkpoint tensor " + name + " has mismatched shape");
    for (std::size_t i = 0; i < target->size(); ++i)
      (*target)[i] = static_cast<double>(get_f32(is));
    if (!is) throw IoError("truncated checkpoint payload: " + path);
  }
}

}  // namespace empssl
