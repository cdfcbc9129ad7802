// SPDX-License-Identifier: Apache-2.0
#include "diffseg/array_io.hpp"

#include <openssl/evp.h>

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "diffseg/errors.hpp"

namespace diffseg {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'E', 'G', 'A', 'R', 'R', '1'};
constexpr std::uint32_t kVersion = 1;

std::uint32_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 1;
    case torch::kFloat64: return 2;
    case torch::kUInt8: return 3;
    case torch::kInt64: return 4;
    default: throw IoError("array container: unsupported dtype");
  }
}

torch::ScalarType dtype_from_code(std::uint32_t c) {
  switch (c) {
    case 1: return torch::kFloat32;
    case 2: return torch::kFloat64;
    case 3: return torch::kUInt8;
    case 4: return torch::kInt64;
    default: throw IoError("array container: unknown dtype code " + std::to_string(c));
  }
}

template <typename T>
void write_raw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("array container: truncated header");
  return v;
}

}  // namespace

void save_array(const std::filesystem::path& path, const torch::Tensor& t) {
  auto cpu = t.detach().to(torch::kCPU).contiguous();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_raw(out, kVersion);
  write_raw(out, dtype_code(cpu.scalar_type()));
  write_raw(out, static_cast<std::uint32_t>(cpu.dim()));
  for (std::int64_t d = 0; d < cpu.dim(); ++d) write_raw(out, static_cast<std::uint64_t>(cpu.size(d)));
  out.write(static_cast<const char*>(cpu.data_ptr()), static_cast<std::streamsize>(cpu.nbytes()));
  if (!out) throw IoError("write failed: " + path.string());
}

torch::Tensor load_array(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("not an array container: " + path.string());
  const auto version = read_raw<std::uint32_t>(in);
  if (version != kVersion)
    throw IoError("array container version " + std::to_string(version) + " unsupported");
  const auto dtype = dtype_from_code(read_raw<std::uint32_t>(in));
  const auto ndim = read_raw<std::uint32_t>(in);
  if (ndim > 8) throw IoError("array container: implausible ndim");
  std::vector<std::int64_t> shape(ndim);
  std::int64_t numel = 1;
  for (auto& d : shape) {
    d = static_cast<std::int64_t>(read_raw<std::uint64_t>(in));
    numel *= d;
  }
  auto t = torch::empty(shape, torch::dtype(dtype));
  in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
  if (!in) throw IoError("array container: truncated payload in " + path.string());
  return t;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw IoError("sha256: context allocation failed");
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  hex << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) hex << std::setw(2) << static_cast<int>(digest[i]);
  return hex.str();
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + path.string());
  for (const auto& e : entries)
    out << e.id << '\t' << e.split << '\t' << e.relative_path << '\t' << e.sha256 << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    ManifestEntry e;
    if (!std::getline(row, e.id, '\t') || !std::getline(row, e.split, '\t') ||
        !std::getline(row, e.relative_path, '\t') || !std::getline(row, e.sha256))
      throw DataError("malformed manifest line: " + line);
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace diffseg
