// SPDX-License-Identifier: Apache-2.0
#include "orthomoe/router.hpp"

#include <algorithm>
#include <cmath>

namespace orthomoe {

namespace {
// Large enough that exp(logit - max) underflows to exactly 0 in f64, small
// enough to never produce NaN through the softmax.
constexpr double kMaskPenalty = 1e9;
}  // namespace

const char* pool_kind_name(PoolKind kind) {
  switch (kind) {
    case PoolKind::Rms: return "rms";
    case PoolKind::Mean: return "mean";
    case PoolKind::Max: return "max";
  }
  return "unknown";
}

PoolKind pool_kind_from_name(const std::string& name) {
  if (name == "rms") return PoolKind::Rms;
  if (name == "mean") return PoolKind::Mean;
  if (name == "max") return PoolKind::Max;
  throw Error(Error::Code::ConfigParse, "unknown pool kind: " + name);
}

const char* band_layout_name(BandLayout layout) {
  return layout == BandLayout::Interleaved ? "interleaved" : "contiguous";
}

BandLayout band_layout_from_name(const std::string& name) {
  if (name == "interleaved") return BandLayout::Interleaved;
  if (name == "contiguous") return BandLayout::Contiguous;
  throw Error(Error::Code::ConfigParse, "unknown band layout: " + name);
}

void RouterConfig::validate() const {
  if (experts == 0) throw Error(Error::Code::InvalidConfig, "router: experts must be >= 1");
  if (sigma_feature_dim % 2 != 0)
    throw Error(Error::Code::InvalidDim, "router: sigma_feature_dim must be even");
  if (band_count > 0) {
    if (band_edges.size() != band_count + 1)
      throw Error(Error::Code::InvalidConfig, "router: band_edges must have band_count + 1 entries");
    if (band_edges.front() != 0.0 || band_edges.back() != 1.0)
      throw Error(Error::Code::InvalidConfig, "router: band_edges must span [0, 1]");
    for (std::size_t i = 0; i + 1 < band_edges.size(); ++i)
      if (!(band_edges[i] < band_edges[i + 1]))
        throw Error(Error::Code::InvalidConfig, "router: band_edges must be strictly increasing");
    if (experts < band_count)
      throw Error(Error::Code::InvalidConfig, "router: need at least one expert per band");
  }
}

RouterState RouterState::zero_init(RouterConfig cfg) {
  cfg.validate();
  RouterState st;
  st.weights = Matrix(cfg.input_dim + cfg.sigma_feature_dim, cfg.experts);
  st.bias = Matrix(1, cfg.experts);
  st.config = std::move(cfg);
  return st;
}

Matrix pool(const std::vector<Matrix>& tokens, PoolKind kind) {
  if (tokens.empty()) throw Error(Error::Code::EmptySequence, "pool: empty batch");
  const std::size_t width = tokens.front().cols;
  Matrix out(tokens.size(), width);
  for (std::size_t b = 0; b < tokens.size(); ++b) {
    const Matrix& seq = tokens[b];
    if (seq.rows == 0) throw Error(Error::Code::EmptySequence, "pool: empty sequence");
    if (seq.cols != width) throw Error(Error::Code::ShapeMismatch, "pool: ragged batch");
    const std::size_t len = seq.rows;
    for (std::size_t j = 0; j < width; ++j) {
      switch (kind) {
        case PoolKind::Rms: {
          double acc = 0.0;
          for (std::size_t t = 0; t < len; ++t) acc += seq(t, j) * seq(t, j);
          out(b, j) = std::sqrt(acc / static_cast<double>(len));
          break;
        }
        case PoolKind::Mean: {
          double acc = 0.0;
          for (std::size_t t = 0; t < len; ++t) acc += seq(t, j);
          out(b, j) = acc / static_cast<double>(len);
          break;
        }
        case PoolKind::Max: {
          double m = seq(0, j);
          for (std::size_t t = 1; t < len; ++t) m = std::max(m, seq(t, j));
          out(b, j) = m;
          break;
        }
      }
    }
  }
  return out;
}

std::vector<double> sigma_features(double sigma, std::size_t dim) {
  if (dim % 2 != 0) throw Error(Error::Code::InvalidDim, "sigma_features: dim must be even");
  std::vector<double> out(dim);
  double freq = 1.0;
  for (std::size_t k = 0; k < dim / 2; ++k) {
    const double phase = 2.0 * M_PI * freq * sigma;
    out[2 * k] = std::sin(phase);
    out[2 * k + 1] = std::cos(phase);
    freq *= 2.0;
  }
  return out;
}

std::size_t band_of_sigma(const RouterConfig& cfg, double sigma) {
  if (cfg.band_count == 0) return 0;
  for (std::size_t b = 0; b + 1 < cfg.band_count; ++b)
    if (sigma < cfg.band_edges[b + 1]) return b;
  return cfg.band_count - 1;  // top band closed at 1
}

std::size_t expert_band(const RouterConfig& cfg, std::size_t expert) {
  if (cfg.band_count == 0) return 0;
  if (cfg.band_layout == BandLayout::Interleaved) return expert % cfg.band_count;
  return expert * cfg.band_count / cfg.experts;
}

RouteResult route(const RouterState& st, const Matrix& pooled, const std::vector<double>& sigma) {
  const RouterConfig& cfg = st.config;
  const std::size_t batch = pooled.rows;
  const std::size_t e = cfg.experts;
  if (pooled.cols != cfg.input_dim)
    throw Error(Error::Code::ShapeMismatch, "route: pooled width != configured input_dim");
  if (sigma.size() != batch) throw Error(Error::Code::ShapeMismatch, "route: sigma batch mismatch");

  RouteResult res;
  res.inputs = Matrix(batch, cfg.input_dim + cfg.sigma_feature_dim);
  res.logits = Matrix(batch, e);
  res.gates = Matrix(batch, e);

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < cfg.input_dim; ++j) res.inputs(b, j) = pooled(b, j);
    const std::vector<double> feats = sigma_features(sigma[b], cfg.sigma_feature_dim);
    for (std::size_t j = 0; j < feats.size(); ++j) res.inputs(b, cfg.input_dim + j) = feats[j];

    for (std::size_t k = 0; k < e; ++k) {
      double z = st.bias(0, k);
      for (std::size_t j = 0; j < res.inputs.cols; ++j) z += res.inputs(b, j) * st.weights(j, k);
      res.logits(b, k) = z;
    }

    const std::size_t band = band_of_sigma(cfg, sigma[b]);
    double zmax = -HUGE_VAL;
    bool any_unmasked = false;
    std::vector<double> masked(e);
    for (std::size_t k = 0; k < e; ++k) {
      const bool in_band = cfg.band_count == 0 || expert_band(cfg, k) == band;
      masked[k] = in_band ? res.logits(b, k) : res.logits(b, k) - kMaskPenalty;
      if (in_band) {
        any_unmasked = true;
        zmax = std::max(zmax, masked[k]);
      }
    }
    if (!any_unmasked)
      throw Error(Error::Code::AllMasked, "route: no expert assigned to a sample's band");
    double denom = 0.0;
    for (std::size_t k = 0; k < e; ++k) {
      masked[k] = std::exp(masked[k] - zmax);
      denom += masked[k];
    }
    for (std::size_t k = 0; k < e; ++k) res.gates(b, k) = masked[k] / denom;
  }
  return res;
}

double normalized_entropy(const Matrix& gates) {
  const std::size_t batch = gates.rows, e = gates.cols;
  if (batch == 0 || e == 0) throw Error(Error::Code::ShapeMismatch, "normalized_entropy: empty gates");
  if (e == 1) {
    for (std::size_t b = 0; b < batch; ++b)
      if (std::abs(gates(b, 0) - 1.0) > 1e-8)
        throw Error(Error::Code::NotOnSimplex, "normalized_entropy: row does not sum to 1");
    return 1.0;
  }
  const double log_e = std::log(static_cast<double>(e));
  double acc = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    double sum = 0.0, h = 0.0;
    for (std::size_t k = 0; k < e; ++k) {
      const double p = gates(b, k);
      if (p < -1e-8 || p > 1.0 + 1e-8)
        throw Error(Error::Code::NotOnSimplex, "normalized_entropy: entry outside [0, 1]");
      sum += p;
      if (p > 0.0) h -= p * std::log(p);
    }
    if (std::abs(sum - 1.0) > 1e-8)
      throw Error(Error::Code::NotOnSimplex, "normalized_entropy: row does not sum to 1");
    acc += h / log_e;
  }
  return acc / static_cast<double>(batch);
}

}  // namespace orthomoe
