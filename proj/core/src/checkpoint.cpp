#include "strider/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace strider {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'R', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
V get(std::istream& in, const std::filesystem::path& path) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error(Errc::parse_error, "truncated checkpoint " + path.string());
  return v;
}

struct StoredTensor {
  Shape shape;
  std::vector<float> values;
};

std::map<std::string, StoredTensor> read_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw Error(Errc::parse_error, path.string() + " is not a checkpoint");
  }
  if (get<std::uint32_t>(in, path) != kVersion) {
    throw Error(Errc::parse_error, "unsupported checkpoint version in " + path.string());
  }
  auto count = get<std::uint32_t>(in, path);
  std::map<std::string, StoredTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name_len = get<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    StoredTensor t;
    auto rank = get<std::uint32_t>(in, path);
    for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(get<std::int64_t>(in, path));
    t.values.resize(static_cast<std::size_t>(shape_numel(t.shape)));
    in.read(reinterpret_cast<char*>(t.values.data()),
            static_cast<std::streamsize>(t.values.size() * sizeof(float)));
    if (!in) throw Error(Errc::parse_error, "truncated checkpoint " + path.string());
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace

std::filesystem::path manifest_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".json";
  return p;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params,
                     const nlohmann::json& meta) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put(out, kVersion);
  put(out, static_cast<std::uint32_t>(params.size()));
  nlohmann::json table = nlohmann::json::array();
  for (const auto* p : params.all()) {
    put(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put(out, static_cast<std::uint32_t>(p->value.shape.size()));
    for (auto d : p->value.shape) put(out, d);
    std::vector<float> values(p->value.data.begin(), p->value.data.end());
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
    table.push_back({{"name", p->name}, {"shape", p->value.shape}});
  }
  if (!out) throw Error(Errc::io_error, "failed writing checkpoint " + path.string());

  nlohmann::json manifest = meta;
  manifest["format"] = "strider-checkpoint";
  manifest["version"] = kVersion;
  manifest["tensors"] = std::move(table);
  std::ofstream mf(manifest_path(path), std::ios::trunc);
  if (!mf) throw Error(Errc::io_error, "cannot write manifest for " + path.string());
  mf << manifest.dump(2) << '\n';
}

nlohmann::json read_manifest(const std::filesystem::path& path) {
  std::ifstream in(manifest_path(path));
  if (!in) throw Error(Errc::io_error, "cannot open manifest for " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse_error, "bad checkpoint manifest: " + std::string(e.what()));
  }
}

template <typename T>
LoadReport load_checkpoint(const std::filesystem::path& path, ParameterSet<T>& params) {
  auto stored = read_tensors(path);
  LoadReport report;
  if (std::filesystem::exists(manifest_path(path))) report.meta = read_manifest(path);
  for (auto* p : params.all()) {
    auto it = stored.find(p->name);
    if (it == stored.end()) {
      report.missing.push_back(p->name);
      continue;
    }
    if (it->second.shape != p->value.shape) {
      throw Error(Errc::shape_mismatch, "checkpoint tensor " + p->name + " has shape " +
                                            shape_str(it->second.shape) + ", expected " +
                                            shape_str(p->value.shape));
    }
    for (std::size_t i = 0; i < it->second.values.size(); ++i) {
      p->value.data[i] = static_cast<T>(it->second.values[i]);
    }
    stored.erase(it);
  }
  for (const auto& [name, _] : stored) report.unused.push_back(name);
  return report;
}

template void save_checkpoint(const std::filesystem::path&, const ParameterSet<float>&,
                              const nlohmann::json&);
template void save_checkpoint(const std::filesystem::path&, const ParameterSet<double>&,
                              const nlohmann::json&);
template LoadReport load_checkpoint(const std::filesystem::path&, ParameterSet<float>&);
template LoadReport load_checkpoint(const std::filesystem::path&, ParameterSet<double>&);

}  // namespace strider
