// SPDX-License-Identifier: Apache-2.0
#include "orthomoe/config_io.hpp"

#include <cinttypes>
#include <cstdio>
#include <ctime>
#include <fstream>

namespace orthomoe {

namespace {

const char* router_input_mode_name(RouterInputMode mode) {
  switch (mode) {
    case RouterInputMode::Default: return "default";
    case RouterInputMode::Bottleneck: return "bottleneck";
    case RouterInputMode::Raw: return "raw";
  }
  return "default";
}

RouterInputMode router_input_mode_from_name(const std::string& name) {
  if (name == "default") return RouterInputMode::Default;
  if (name == "bottleneck") return RouterInputMode::Bottleneck;
  if (name == "raw") return RouterInputMode::Raw;
  throw Error(Error::Code::ConfigParse, "unknown router input mode: " + name);
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["variant"] = variant_name(cfg.variant);
  j["d_in"] = cfg.d_in;
  j["d_out"] = cfg.d_out;
  j["n_layers"] = cfg.n_layers;
  j["seq_len"] = cfg.seq_len;
  j["batch"] = cfg.batch;
  j["experts"] = cfg.experts;
  j["rank"] = cfg.rank;
  j["alpha"] = cfg.alpha;
  j["lr"] = cfg.lr;
  j["router_lr_mult"] = cfg.router_lr_mult;
  j["weight_decay"] = cfg.weight_decay;
  j["total_steps"] = cfg.total_steps;
  j["log_every"] = cfg.log_every;
  j["seed"] = cfg.seed;
  j["jitter_sigma"] = cfg.jitter_sigma;
  j["balance"] = {{"weight", cfg.balance.weight},
                  {"warmup_ratio", cfg.balance.warmup_ratio},
                  {"per_bucket_coeff", cfg.balance.per_bucket_coeff},
                  {"bucket_count", cfg.balance.bucket_count},
                  {"soft_counts", cfg.balance.soft_counts}};
  j["lo_weight"] = cfg.lo_weight;
  j["lv_weight"] = cfg.lv_weight;
  j["lo_eps"] = cfg.lo_eps;
  j["router"] = {{"pool", pool_kind_name(cfg.router.pool)},
                 {"sigma_feature_dim", cfg.router.sigma_feature_dim},
                 {"band_count", cfg.router.band_count},
                 {"band_edges", cfg.router.band_edges},
                 {"band_layout", band_layout_name(cfg.router.band_layout)},
                 {"input", router_input_mode_name(cfg.router_input)}};
  j["expert_warmup_ratio"] = cfg.expert_warmup_ratio;
  j["freeze_router"] = cfg.freeze_router;
  j["task"] = {{"styles", cfg.task.styles},
               {"teacher_scale", cfg.task.teacher_scale},
               {"style_contrast", cfg.task.style_contrast},
               {"target_noise_std", cfg.task.target_noise_std},
               {"spectrum_top", cfg.task.spectrum_top},
               {"spectrum_within_decay", cfg.task.spectrum_within_decay},
               {"spectrum_slice_decay", cfg.task.spectrum_slice_decay}};
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  try {
    TrainConfig cfg;
    if (j.contains("variant")) cfg.variant = variant_from_name(j.at("variant").get<std::string>());
    read_field(j, "d_in", cfg.d_in);
    read_field(j, "d_out", cfg.d_out);
    read_field(j, "n_layers", cfg.n_layers);
    read_field(j, "seq_len", cfg.seq_len);
    read_field(j, "batch", cfg.batch);
    read_field(j, "experts", cfg.experts);
    read_field(j, "rank", cfg.rank);
    read_field(j, "alpha", cfg.alpha);
    read_field(j, "lr", cfg.lr);
    read_field(j, "router_lr_mult", cfg.router_lr_mult);
    read_field(j, "weight_decay", cfg.weight_decay);
    read_field(j, "total_steps", cfg.total_steps);
    read_field(j, "log_every", cfg.log_every);
    read_field(j, "seed", cfg.seed);
    read_field(j, "jitter_sigma", cfg.jitter_sigma);
    if (j.contains("balance")) {
      const auto& b = j.at("balance");
      read_field(b, "weight", cfg.balance.weight);
      read_field(b, "warmup_ratio", cfg.balance.warmup_ratio);
      read_field(b, "per_bucket_coeff", cfg.balance.per_bucket_coeff);
      read_field(b, "bucket_count", cfg.balance.bucket_count);
      read_field(b, "soft_counts", cfg.balance.soft_counts);
    }
    read_field(j, "lo_weight", cfg.lo_weight);
    read_field(j, "lv_weight", cfg.lv_weight);
    read_field(j, "lo_eps", cfg.lo_eps);
    if (j.contains("router")) {
      const auto& r = j.at("router");
      if (r.contains("pool")) cfg.router.pool = pool_kind_from_name(r.at("pool").get<std::string>());
      read_field(r, "sigma_feature_dim", cfg.router.sigma_feature_dim);
      read_field(r, "band_count", cfg.router.band_count);
      read_field(r, "band_edges", cfg.router.band_edges);
      if (r.contains("band_layout"))
        cfg.router.band_layout = band_layout_from_name(r.at("band_layout").get<std::string>());
      if (r.contains("input"))
        cfg.router_input = router_input_mode_from_name(r.at("input").get<std::string>());
    }
    read_field(j, "expert_warmup_ratio", cfg.expert_warmup_ratio);
    read_field(j, "freeze_router", cfg.freeze_router);
    if (j.contains("task")) {
      const auto& t = j.at("task");
      read_field(t, "styles", cfg.task.styles);
      read_field(t, "teacher_scale", cfg.task.teacher_scale);
      read_field(t, "style_contrast", cfg.task.style_contrast);
      read_field(t, "target_noise_std", cfg.task.target_noise_std);
      read_field(t, "spectrum_top", cfg.task.spectrum_top);
      read_field(t, "spectrum_within_decay", cfg.task.spectrum_within_decay);
      read_field(t, "spectrum_slice_decay", cfg.task.spectrum_slice_decay);
    }
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Error::Code::ConfigParse, std::string("config parse failed: ") + e.what());
  }
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Error::Code::ConfigParse, "cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Error::Code::ConfigParse, std::string("config parse failed: ") + e.what());
  }
  return train_config_from_json(j);
}

void apply_overrides(nlohmann::json& config, const std::vector<std::string>& overrides) {
  for (const std::string& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0)
      throw Error(Error::Code::ConfigParse, "override must look like key=value: " + item);
    const std::string path = item.substr(0, eq);
    const std::string raw = item.substr(eq + 1);
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
      value = raw;  // bare strings like variant=naive
    }
    nlohmann::json* node = &config;
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = path.find('.', start);
      const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
      if (key.empty()) throw Error(Error::Code::ConfigParse, "empty key in override: " + item);
      if (dot == std::string::npos) {
        (*node)[key] = value;
        break;
      }
      node = &(*node)[key];
      start = dot + 1;
    }
  }
}

std::string csv_header(const TrainConfig& cfg) {
  std::string header = "step,task_loss,balance_loss,entropy_mean";
  for (std::size_t l = 0; l < cfg.n_layers; ++l) header += ",entropy_layer_" + std::to_string(l);
  for (std::size_t e = 0; e < cfg.experts; ++e) header += ",util_expert_" + std::to_string(e);
  header += ",grad_norm_total";
  return header;
}

void write_train_log_csv(const TrainLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Error::Code::Io, "cannot open " + path + " for writing");
  out << csv_header(log.config) << "\n";
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const TrainLogRow& row : log.rows) {
    out << row.step << ',' << num(row.task_loss) << ',' << num(row.balance_loss) << ','
        << num(row.entropy_mean);
    for (double h : row.entropy_layer) out << ',' << num(h);
    for (double u : row.util_expert) out << ',' << num(u);
    out << ',' << num(row.grad_norm_total) << "\n";
  }
  if (!out) throw Error(Error::Code::Io, "write failed for " + path);
}

nlohmann::json RunManifest::to_json() const {
  return nlohmann::json{{"config", config},
                        {"seed", seed},
                        {"library_version", library_version},
                        {"created_at", created_at},
                        {"outputs", outputs},
                        {"warnings", warnings}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  try {
    RunManifest m;
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.library_version = j.at("library_version").get<std::string>();
    m.created_at = j.at("created_at").get<std::string>();
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
    m.warnings = j.at("warnings").get<std::vector<std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Error::Code::ConfigParse, std::string("manifest parse failed: ") + e.what());
  }
}

void write_manifest(const RunManifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Error::Code::Io, "cannot open " + path + " for writing");
  out << manifest.to_json().dump(2) << "\n";
  if (!out) throw Error(Error::Code::Io, "write failed for " + path);
}

RunManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Error::Code::Io, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Error::Code::Io, std::string("manifest parse failed: ") + e.what());
  }
  return RunManifest::from_json(j);
}

}  // namespace orthomoe
