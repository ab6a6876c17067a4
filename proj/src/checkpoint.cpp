#include "autornn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace autornn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts unsupported");

void save_params(const std::string& path_prefix, const ParamMap& params) {
  std::ofstream blob(path_prefix + ".bin", std::ios::binary | std::ios::trunc);
  if (!blob) throw std::runtime_error("cannot open " + path_prefix + ".bin for writing");
  nlohmann::json manifest = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, m] : params) {  // std::map: sorted by name
    manifest.push_back({{"name", name}, {"rows", m.rows}, {"cols", m.cols}, {"byte_offset", offset}});
    blob.write(reinterpret_cast<const char*>(m.data.data()),
               static_cast<std::streamsize>(m.size() * sizeof(double)));
    offset += m.size() * sizeof(double);
  }
  blob.close();
  std::ofstream mf(path_prefix + ".json", std::ios::trunc);
  if (!mf) throw std::runtime_error("cannot open " + path_prefix + ".json for writing");
  mf << manifest.dump(2) << "\n";
}

ParamMap load_params(const std::string& path_prefix) {
  std::ifstream mf(path_prefix + ".json");
  if (!mf) throw std::runtime_error("cannot open manifest " + path_prefix + ".json");
  nlohmann::json manifest = nlohmann::json::parse(mf);
  std::ifstream blob(path_prefix + ".bin", std::ios::binary);
  if (!blob) throw std::runtime_error("cannot open blob " + path_prefix + ".bin");

  ParamMap out;
  for (const auto& entry : manifest) {
    const std::string name = entry.at("name").get<std::string>();
    Matrix m(entry.at("rows").get<int>(), entry.at("cols").get<int>());
    blob.seekg(static_cast<std::streamoff>(entry.at("byte_offset").get<uint64_t>()));
    blob.read(reinterpret_cast<char*>(m.data.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!blob) throw std::runtime_error("truncated blob while reading tensor " + name);
    out.emplace(name, std::move(m));
  }
  return out;
}

}  // namespace autornn
