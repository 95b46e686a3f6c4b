// SPDX-License-Identifier: Apache-2.0
#include "orthomoe/serialize.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace orthomoe {

namespace {

constexpr char kMagic[4] = {'O', 'M', 'A', 'D'};
constexpr std::uint32_t kFormatVersion = 1;

struct TensorRef {
  std::string name;
  const Matrix* m;
};

std::vector<TensorRef> tensor_table(const AdapterState& st) {
  std::vector<TensorRef> refs;
  refs.push_back({"w0", &st.w0});
  refs.push_back({"router.weights", &st.router.weights});
  refs.push_back({"router.bias", &st.router.bias});
  if (st.variant == Variant::Ortho) {
    refs.push_back({"q_basis", &st.q_basis});
    refs.push_back({"s_q", &st.s_q});
    refs.push_back({"lambda", &st.lambda});
    for (std::size_t e = 0; e < st.experts; ++e) {
      refs.push_back({"p_bases." + std::to_string(e), &st.p_bases[e]});
      refs.push_back({"s_p." + std::to_string(e), &st.s_p[e]});
    }
  } else {
    refs.push_back({"a_shared", &st.a_shared});
    for (std::size_t e = 0; e < st.experts; ++e)
      refs.push_back({"b_experts." + std::to_string(e), &st.b_experts[e]});
  }
  return refs;
}

nlohmann::json router_config_json(const RouterConfig& cfg) {
  return nlohmann::json{{"experts", cfg.experts},
                        {"input_dim", cfg.input_dim},
                        {"pool", pool_kind_name(cfg.pool)},
                        {"sigma_feature_dim", cfg.sigma_feature_dim},
                        {"band_count", cfg.band_count},
                        {"band_edges", cfg.band_edges},
                        {"band_layout", band_layout_name(cfg.band_layout)}};
}

RouterConfig router_config_from_json(const nlohmann::json& j) {
  RouterConfig cfg;
  cfg.experts = j.at("experts").get<std::size_t>();
  cfg.input_dim = j.at("input_dim").get<std::size_t>();
  cfg.pool = pool_kind_from_name(j.at("pool").get<std::string>());
  cfg.sigma_feature_dim = j.at("sigma_feature_dim").get<std::size_t>();
  cfg.band_count = j.at("band_count").get<std::size_t>();
  cfg.band_edges = j.at("band_edges").get<std::vector<double>>();
  cfg.band_layout = band_layout_from_name(j.at("band_layout").get<std::string>());
  return cfg;
}

}  // namespace

void save_adapter(const AdapterState& st, const std::string& path) {
  nlohmann::json header;
  header["format"] = "orthomoe-adapter";
  header["variant"] = variant_name(st.variant);
  header["d_out"] = st.d_out();
  header["d_in"] = st.d_in();
  header["experts"] = st.experts;
  header["rank"] = st.rank;
  header["alpha"] = st.alpha;
  header["jitter_sigma"] = st.jitter_sigma;
  header["fallback_shared_basis"] = st.fallback_shared_basis;
  header["router"] = router_config_json(st.router.config);
  header["router_input"] = st.router_input == RouterInput::Bottleneck ? "bottleneck" : "raw";
  header["warnings"] = st.warnings;

  const std::vector<TensorRef> refs = tensor_table(st);
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const TensorRef& ref : refs) {
    tensors.push_back(nlohmann::json{
        {"name", ref.name}, {"rows", ref.m->rows}, {"cols", ref.m->cols}, {"offset", offset}});
    offset += ref.m->size();
  }
  header["tensors"] = tensors;

  const std::string header_str = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Error::Code::Io, "save_adapter: cannot open " + path);
  out.write(kMagic, 4);
  const std::uint32_t version = kFormatVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t header_len = header_str.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const TensorRef& ref : refs)
    out.write(reinterpret_cast<const char*>(ref.m->data.data()),
              static_cast<std::streamsize>(ref.m->size() * sizeof(double)));
  if (!out) throw Error(Error::Code::Io, "save_adapter: write failed for " + path);
}

AdapterState load_adapter(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Error::Code::Io, "load_adapter: cannot open " + path);
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw Error(Error::Code::Io, "load_adapter: bad magic in " + path);
  if (version != kFormatVersion)
    throw Error(Error::Code::Io, "load_adapter: unsupported format version");
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw Error(Error::Code::Io, "load_adapter: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Error::Code::Io, std::string("load_adapter: header parse failed: ") + e.what());
  }

  AdapterState st;
  st.variant = variant_from_name(header.at("variant").get<std::string>());
  st.experts = header.at("experts").get<std::size_t>();
  st.rank = header.at("rank").get<std::size_t>();
  st.alpha = header.at("alpha").get<double>();
  st.jitter_sigma = header.at("jitter_sigma").get<double>();
  st.fallback_shared_basis = header.at("fallback_shared_basis").get<bool>();
  st.router.config = router_config_from_json(header.at("router"));
  st.router_input = header.at("router_input").get<std::string>() == "bottleneck"
                        ? RouterInput::Bottleneck
                        : RouterInput::Raw;
  st.warnings = header.at("warnings").get<std::vector<std::string>>();
  if (st.variant == Variant::Ortho) {
    st.p_bases.resize(st.experts);
    st.s_p.resize(st.experts);
  } else {
    st.b_experts.resize(st.experts);
  }

  for (const auto& t : header.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    Matrix m(t.at("rows").get<std::size_t>(), t.at("cols").get<std::size_t>());
    in.seekg(static_cast<std::streamoff>(16 + header_len + t.at("offset").get<std::uint64_t>() * sizeof(double)));
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw Error(Error::Code::Io, "load_adapter: truncated tensor " + name);
    if (name == "w0") st.w0 = std::move(m);
    else if (name == "router.weights") st.router.weights = std::move(m);
    else if (name == "router.bias") st.router.bias = std::move(m);
    else if (name == "q_basis") st.q_basis = std::move(m);
    else if (name == "s_q") st.s_q = std::move(m);
    else if (name == "lambda") st.lambda = std::move(m);
    else if (name == "a_shared") st.a_shared = std::move(m);
    else if (name.rfind("p_bases.", 0) == 0) st.p_bases.at(std::stoul(name.substr(8))) = std::move(m);
    else if (name.rfind("s_p.", 0) == 0) st.s_p.at(std::stoul(name.substr(4))) = std::move(m);
    else if (name.rfind("b_experts.", 0) == 0) st.b_experts.at(std::stoul(name.substr(10))) = std::move(m);
    else throw Error(Error::Code::Io, "load_adapter: unknown tensor " + name);
  }
  return st;
}

}  // namespace orthomoe
