#include "vstain/archive.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "vstain/errors.hpp"

namespace vstain {

namespace {

constexpr char kMagic[8] = {'V', 'S', 'T', 'A', 'R', 'C', '0', '1'};

void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace

void write_archive(const TensorArchive& archive, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp);
    os.write(kMagic, sizeof kMagic);
    put_u64(os, archive.size());
    for (const auto& [name, t] : archive) {
      put_u64(os, name.size());
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      const Shape s = t.shape();
      for (int d : {s.n, s.c, s.h, s.w}) put_u64(os, static_cast<std::uint64_t>(d));
      os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!os) throw IoError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive read_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw IoError(path.string() + " is not a tensor archive");
  TensorArchive out;
  const std::uint64_t count = get_u64(is);
  for (std::uint64_t i = 0; i < count && is; ++i) {
    const std::uint64_t len = get_u64(is);
    if (len > 4096) throw IoError(path.string() + ": corrupt entry name");
    std::string name(len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(len));
    Shape s;
    s.n = static_cast<int>(get_u64(is));
    s.c = static_cast<int>(get_u64(is));
    s.h = static_cast<int>(get_u64(is));
    s.w = static_cast<int>(get_u64(is));
    if (s.numel() < 0 || s.numel() > (std::int64_t{1} << 32)) throw IoError(path.string() + ": corrupt shape");
    Tensor<float> t(s);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    out.emplace(std::move(name), std::move(t));
  }
  if (!is) throw IoError("truncated archive " + path.string());
  return out;
}

void store_parameters(nets::Module<float>& module, const std::string& prefix, TensorArchive& archive) {
  for (const auto& p : module.parameters()) archive[prefix + p.name] = p.var->value();
}

void load_parameters(nets::Module<float>& module, const std::string& prefix, const TensorArchive& archive) {
  for (auto& p : module.parameters()) {
    const auto it = archive.find(prefix + p.name);
    if (it == archive.end()) throw IoError("checkpoint lacks parameter " + prefix + p.name);
    if (!(it->second.shape() == p.var->shape())) {
      throw IoError("checkpoint parameter " + prefix + p.name + " has shape " + it->second.shape().str() +
                    ", network expects " + p.var->shape().str());
    }
    p.var->mutable_value() = it->second;
  }
}

std::string archive_fingerprint(const TensorArchive& archive) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : archive) {
    mix(name.data(), name.size());
    const Shape s = t.shape();
    mix(&s, sizeof s);
    mix(t.data(), static_cast<std::size_t>(t.size()) * sizeof(float));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace vstain
