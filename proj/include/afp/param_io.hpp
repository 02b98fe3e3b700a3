// "DCP1" parameter files and parameter checksums.
//
// Layout: the four magic bytes "DCP1", then per block: u32 name length,
// UTF-8 name, u32 rank, rank x u32 dims, prod(dims) x f32. All integers and
// floats are little-endian. The file ends exactly after the last block.

#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "afp/params.hpp"

namespace afp {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kParamMagic[4] = {'D', 'C', 'P', '1'};

namespace detail {

static_assert(std::endian::native == std::endian::little, "DCP1 I/O assumes a little-endian host");

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

}  // namespace detail

template <typename T>
std::string encode_params(const ParamSet<T>& params) {
  std::string out(kParamMagic, 4);
  for (const auto& [name, t] : params) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (T v : t.data()) {
      const float f = static_cast<float>(v);
      char b[4];
      std::memcpy(b, &f, 4);
      out.append(b, 4);
    }
  }
  return out;
}

template <typename T>
ParamSet<T> decode_params(const std::string& bytes, const std::string& origin = "<memory>") {
  auto fail = [&](const std::string& why) { return IoError(origin + ": " + why); };
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kParamMagic, 4) != 0)
    throw fail("missing DCP1 magic");
  std::size_t pos = 4;
  auto need = [&](std::size_t n, const char* what) {
    if (bytes.size() - pos < n) throw fail(std::string("truncated while reading ") + what);
  };
  auto u32 = [&](const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  };
  ParamSet<T> params;
  while (pos < bytes.size()) {
    const auto len = u32("name length");
    need(len, "name");
    std::string name = bytes.substr(pos, len);
    pos += len;
    const auto rank = u32("rank");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(u32("dims"));
    if (shape.empty() || std::find(shape.begin(), shape.end(), std::size_t{0}) != shape.end())
      throw fail("block '" + name + "' has an empty shape");
    const std::size_t n = shape_numel(shape);
    if (n > (bytes.size() - pos) / 4) throw fail("truncated data for block '" + name + "'");
    std::vector<T> data(n);
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, bytes.data() + pos + 4 * i, 4);
      data[i] = static_cast<T>(f);
    }
    pos += 4 * n;
    params.add(std::move(name), Tensor<T>::from(std::move(shape), std::move(data), true));
  }
  return params;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

template <typename T>
void save_params(const ParamSet<T>& params, const std::filesystem::path& path) {
  write_file(path, encode_params(params));
}

template <typename T = float>
ParamSet<T> load_params(const std::filesystem::path& path) {
  return decode_params<T>(read_file(path), path.string());
}

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

// SHA-256 over the exact in-memory values (names, shapes, native scalars).
template <typename T>
std::string params_checksum(const ParamSet<T>& params) {
  std::string buf;
  for (const auto& [name, t] : params) {
    buf += name;
    buf.push_back('\0');
    for (auto d : t.shape()) detail::put_u32(buf, static_cast<std::uint32_t>(d));
    buf.append(reinterpret_cast<const char*>(t.data().data()), t.numel() * sizeof(T));
  }
  return sha256_hex(buf);
}

}  // namespace afp
