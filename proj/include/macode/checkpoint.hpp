#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "macode/dataset.hpp"
#include "macode/discretize.hpp"
#include "macode/error.hpp"
#include "macode/model.hpp"

namespace macode {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'M', 'C', 'D', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1, I64 = 2 };

/// One named array of a checkpoint payload.
struct ArrayRecord {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::uint64_t> dims;
  std::vector<unsigned char> bytes;
};

namespace detail {

template <class T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::F32;
  else if constexpr (std::is_same_v<T, double>) return DType::F64;
  else return DType::I64;
}

inline std::size_t dtype_size(DType t) { return t == DType::F32 ? 4 : 8; }

template <class T>
ArrayRecord make_record(std::string name, const std::vector<std::uint64_t>& dims, const std::vector<T>& values) {
  ArrayRecord r{std::move(name), dtype_of<T>(), dims, std::vector<unsigned char>(values.size() * sizeof(T))};
  if (!values.empty()) std::memcpy(r.bytes.data(), values.data(), r.bytes.size());
  return r;
}

template <class T>
std::vector<T> record_values(const ArrayRecord& r) {
  if (r.dtype != dtype_of<T>()) throw CheckpointError("array '" + r.name + "' has an unexpected dtype");
  std::vector<T> out(r.bytes.size() / sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), r.bytes.data(), r.bytes.size());
  return out;
}

template <class U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U get(std::istream& in) {
  U v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(U))) throw CheckpointError("truncated checkpoint");
  return v;
}

inline std::string get_bytes(std::istream& in, std::uint64_t n) {
  if (n > (std::uint64_t{1} << 40)) throw CheckpointError("implausible record length");
  std::string s(static_cast<std::size_t>(n), '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw CheckpointError("truncated checkpoint");
  return s;
}

}  // namespace detail

/// Writes magic, version, the length-prefixed JSON manifest and the arrays.
inline void write_container(std::ostream& out, const nlohmann::json& manifest, const std::vector<ArrayRecord>& arrays) {
  out.write(kCheckpointMagic, 4);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  const std::string text = manifest.dump();
  detail::put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::put<std::uint64_t>(out, arrays.size());
  for (const auto& a : arrays) {
    detail::put<std::uint64_t>(out, a.name.size());
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(a.dtype));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(a.dims.size()));
    for (auto d : a.dims) detail::put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(a.bytes.data()), static_cast<std::streamsize>(a.bytes.size()));
  }
  if (!out) throw CheckpointError("write failed");
}

inline std::pair<nlohmann::json, std::map<std::string, ArrayRecord>> read_container(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw CheckpointError("not a checkpoint file");
  const auto version = detail::get<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw VersionMismatch("checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(detail::get_bytes(in, detail::get<std::uint64_t>(in)));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad manifest: ") + e.what());
  }
  std::map<std::string, ArrayRecord> arrays;
  const auto count = detail::get<std::uint64_t>(in);
  for (std::uint64_t k = 0; k < count; ++k) {
    ArrayRecord r;
    r.name = detail::get_bytes(in, detail::get<std::uint64_t>(in));
    const auto dt = detail::get<std::uint8_t>(in);
    if (dt > 2) throw CheckpointError("unknown dtype in array '" + r.name + "'");
    r.dtype = static_cast<DType>(dt);
    const auto ndim = detail::get<std::uint32_t>(in);
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      r.dims.push_back(detail::get<std::uint64_t>(in));
      numel *= r.dims.back();
    }
    const std::string raw = detail::get_bytes(in, numel * detail::dtype_size(r.dtype));
    r.bytes.assign(raw.begin(), raw.end());
    arrays.emplace(r.name, std::move(r));
  }
  return {std::move(manifest), std::move(arrays)};
}

/// Serializes a fitted model. The manifest carries the schema, configuration,
/// grid size and seed; the payload carries the grid cuts, the CDF nodes and
/// counts, and every parameter tensor.
template <class T>
void save_checkpoint(std::ostream& out, const FittedModel<T>& model) {
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["schema"] = schema_to_json(model.schema);
  manifest["config"] = config_to_json(model.params.config);
  manifest["grid"] = {{"bins", model.grid.bins()}};
  manifest["seed"] = model.seed;
  manifest["streams"] = {"train", "mask"};
  manifest["param_dtype"] = std::is_same_v<T, float> ? "f32" : "f64";
  manifest["vocab"] = model.params.vocab;

  std::vector<ArrayRecord> arrays;
  arrays.push_back(detail::make_record("grid.cuts", {model.grid.cuts().size()}, model.grid.cuts()));
  for (std::size_t j = 0; j < model.cdfs.size(); ++j) {
    if (!model.cdfs[j]) continue;
    const auto& c = *model.cdfs[j];
    arrays.push_back(detail::make_record("cdf." + std::to_string(j) + ".nodes", {c.nodes().size()}, c.nodes()));
    arrays.push_back(detail::make_record("cdf." + std::to_string(j) + ".counts", {c.counts().size()}, c.counts()));
  }
  model.params.weights.visit([&](const std::string& name, const ad::Tensor<T>& t) {
    std::vector<std::uint64_t> dims(t.shape.begin(), t.shape.end());
    arrays.push_back(detail::make_record("param." + name, dims, t.data));
  });
  write_container(out, manifest, arrays);
}

template <class T>
void save_checkpoint(const std::string& path, const FittedModel<T>& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write '" + path + "'");
  save_checkpoint(out, model);
}

template <class T = float>
FittedModel<T> load_checkpoint(std::istream& in) {
  auto [manifest, arrays] = read_container(in);
  auto take = [&](const std::string& name) -> const ArrayRecord& {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw CheckpointError("missing array '" + name + "'");
    return it->second;
  };
  FittedModel<T> m;
  try {
    m.schema = schema_from_json(manifest.at("schema"));
    m.params.config = config_from_json(manifest.at("config"));
    m.seed = manifest.at("seed").get<std::uint64_t>();
    m.params.vocab = manifest.at("vocab").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad manifest: ") + e.what());
  }
  m.grid = BinGrid(detail::record_values<double>(take("grid.cuts")));
  if (m.grid.bins() != m.params.config.bins) throw CheckpointError("grid size disagrees with the configuration");
  if (vocab_sizes(m.schema, m.grid) != m.params.vocab) throw CheckpointError("vocabulary disagrees with the schema");
  m.cdfs.resize(m.schema.size());
  for (std::size_t j = 0; j < m.schema.size(); ++j) {
    if (!m.schema[j].is_continuous()) continue;
    m.cdfs[j] = EmpiricalCdf(detail::record_values<double>(take("cdf." + std::to_string(j) + ".nodes")),
                             detail::record_values<std::int64_t>(take("cdf." + std::to_string(j) + ".counts")));
  }
  // Shapes come from a fresh initialization; values from the payload.
  Rng unused(0);
  auto shaped = init_params<T>(m.params.config, m.params.vocab, unused);
  m.params.weights = std::move(shaped.weights);
  m.params.weights.visit([&](const std::string& name, ad::Tensor<T>& t) {
    const auto& r = take("param." + name);
    const std::vector<std::uint64_t> dims(t.shape.begin(), t.shape.end());
    if (r.dims != dims) throw CheckpointError("array 'param." + name + "' has the wrong shape");
    t.data = detail::record_values<T>(r);
  });
  return m;
}

template <class T = float>
FittedModel<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path + "'");
  return load_checkpoint<T>(in);
}

}  // namespace macode
