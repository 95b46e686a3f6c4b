// SPDX-License-Identifier: Apache-2.0
#include "orthomoe/adapter.hpp"

#include <algorithm>
#include <cmath>

#include "orthomoe/cayley.hpp"
#include "orthomoe/linalg.hpp"
#include "orthomoe/rng.hpp"

namespace orthomoe {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Ortho: return "ortho";
    case Variant::Naive: return "naive";
    case Variant::Jittered: return "jittered";
  }
  return "unknown";
}

Variant variant_from_name(const std::string& name) {
  if (name == "ortho") return Variant::Ortho;
  if (name == "naive") return Variant::Naive;
  if (name == "jittered") return Variant::Jittered;
  throw Error(Error::Code::ConfigParse, "unknown variant: " + name);
}

double Gradients::trainable_norm() const {
  double acc = 0.0;
  auto add = [&acc](const Matrix& m) {
    for (double v : m.data) acc += v * v;
  };
  add(s_q);
  for (const Matrix& m : s_p) add(m);
  add(lambda);
  add(a_shared);
  for (const Matrix& m : b_experts) add(m);
  add(router_weights);
  add(router_bias);
  return std::sqrt(acc);
}

namespace {

RouterState make_router(RouterConfig cfg, RouterInput input, std::size_t rank, std::size_t d_in,
                        std::size_t experts) {
  cfg.experts = experts;
  cfg.input_dim = input == RouterInput::Bottleneck ? rank : d_in;
  return RouterState::zero_init(std::move(cfg));
}

}  // namespace

AdapterState init_ortho(Matrix w0, std::size_t experts, std::size_t rank, double alpha,
                        std::uint64_t rng_seed, RouterConfig router_cfg, RouterInput router_input) {
  if (rank < 1 || experts < 1)
    throw Error(Error::Code::InvalidConfig, "init_ortho: rank and experts must be >= 1");
  if (!w0.is_finite()) throw Error(Error::Code::NonFiniteInput, "init_ortho: w0 has non-finite entries");
  const std::size_t min_d = std::min(w0.rows, w0.cols);
  if (rank > min_d) throw Error(Error::Code::InvalidConfig, "init_ortho: rank exceeds min(d_out, d_in)");

  AdapterState st;
  st.variant = Variant::Ortho;
  st.experts = experts;
  st.rank = rank;
  st.alpha = alpha;
  st.router_input = router_input;
  st.fallback_shared_basis = min_d < experts * rank;

  const std::size_t slices = st.fallback_shared_basis ? 1 : experts;
  const std::size_t q = std::min(slices * rank + 6, min_d);
  Svd svd = randomized_svd(w0, q, /*power_iters=*/2, rng_seed);

  st.q_basis = Matrix(rank, w0.cols);
  for (std::size_t i = 0; i < w0.cols; ++i)
    for (std::size_t j = 0; j < rank; ++j) st.q_basis(j, i) = svd.v(i, j);

  st.p_bases.reserve(experts);
  for (std::size_t e = 0; e < experts; ++e) {
    const std::size_t offset = st.fallback_shared_basis ? 0 : e * rank;
    Matrix slice(w0.rows, rank);
    for (std::size_t i = 0; i < w0.rows; ++i)
      for (std::size_t j = 0; j < rank; ++j) slice(i, j) = svd.u(i, offset + j);
    st.p_bases.push_back(std::move(slice));
  }
  if (st.fallback_shared_basis)
    st.warnings.push_back(
        "init_ortho: min(d_out, d_in) < experts * rank; falling back to a shared basis "
        "replicated across experts (disjointness unavailable at this shape)");

  st.s_q = Matrix(rank, rank);
  st.s_p.assign(experts, Matrix(rank, rank));
  st.lambda = Matrix(1, rank);
  st.router = make_router(std::move(router_cfg), router_input, rank, w0.cols, experts);
  st.w0 = std::move(w0);
  return st;
}

AdapterState init_baseline(Matrix w0, Variant variant, double jitter_sigma, std::size_t experts,
                           std::size_t rank, double alpha, std::uint64_t rng_seed,
                           RouterConfig router_cfg, RouterInput router_input) {
  if (variant == Variant::Ortho)
    throw Error(Error::Code::InvalidConfig, "init_baseline: variant must be naive or jittered");
  if (rank < 1 || experts < 1)
    throw Error(Error::Code::InvalidConfig, "init_baseline: rank and experts must be >= 1");
  if (jitter_sigma < 0.0)
    throw Error(Error::Code::InvalidConfig, "init_baseline: jitter sigma must be >= 0");
  if (!w0.is_finite())
    throw Error(Error::Code::NonFiniteInput, "init_baseline: w0 has non-finite entries");

  AdapterState st;
  st.variant = variant;
  st.jitter_sigma = variant == Variant::Jittered ? jitter_sigma : 0.0;
  st.experts = experts;
  st.rank = rank;
  st.alpha = alpha;
  st.router_input = router_input;

  Rng rng(rng_seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(w0.cols));
  st.a_shared = Matrix(rank, w0.cols);
  for (double& v : st.a_shared.data) v = rng.uniform(-bound, bound);
  st.b_experts.reserve(experts);
  for (std::size_t e = 0; e < experts; ++e) {
    Matrix b(w0.rows, rank);
    if (st.jitter_sigma > 0.0)
      for (double& v : b.data) v = st.jitter_sigma * rng.normal();
    st.b_experts.push_back(std::move(b));
  }
  st.router = make_router(std::move(router_cfg), router_input, rank, w0.cols, experts);
  st.w0 = std::move(w0);
  return st;
}

EffectiveBases effective_bases(const AdapterState& st) {
  if (st.variant != Variant::Ortho)
    throw Error(Error::Code::WrongVariant, "effective_bases: only defined for the ortho variant");
  EffectiveBases eb;
  eb.r_q = cayley_forward(CayleySeed(st.s_q));
  eb.q_eff = multiply(eb.r_q, st.q_basis);
  eb.r_p.reserve(st.experts);
  eb.p_eff.reserve(st.experts);
  for (std::size_t e = 0; e < st.experts; ++e) {
    eb.r_p.push_back(cayley_forward(CayleySeed(st.s_p[e])));
    eb.p_eff.push_back(multiply(st.p_bases[e], eb.r_p.back()));
  }
  return eb;
}

namespace {

void validate_forward_input(const AdapterState& st, const std::vector<Matrix>& x,
                            const std::vector<double>& sigma) {
  if (x.empty()) throw Error(Error::Code::ShapeMismatch, "forward: empty batch");
  if (sigma.size() != x.size())
    throw Error(Error::Code::ShapeMismatch, "forward: sigma_noise batch mismatch");
  const std::size_t len = x.front().rows;
  for (const Matrix& xb : x) {
    if (xb.rows != len || xb.cols != st.d_in())
      throw Error(Error::Code::ShapeMismatch, "forward: inconsistent input shapes");
    if (len == 0) throw Error(Error::Code::EmptySequence, "forward: empty sequence");
    if (!xb.is_finite()) throw Error(Error::Code::NonFiniteInput, "forward: non-finite input");
  }
  for (double s : sigma) {
    if (!std::isfinite(s)) throw Error(Error::Code::NonFiniteInput, "forward: non-finite sigma");
    if (s < 0.0 || s > 1.0)
      throw Error(Error::Code::InvalidConfig, "forward: sigma_noise outside [0, 1]");
  }
}

const std::vector<Matrix>& router_source(const AdapterState& st, const ForwardCache& cache) {
  return st.router_input == RouterInput::Bottleneck ? cache.bottleneck_pre : cache.x;
}

void pool_backward(PoolKind kind, const Matrix& src, const Matrix& pooled, std::size_t row,
                   const std::vector<double>& dpooled, Matrix& dsrc) {
  const std::size_t len = src.rows;
  const double inv_len = 1.0 / static_cast<double>(len);
  for (std::size_t j = 0; j < src.cols; ++j) {
    const double g = dpooled[j];
    if (g == 0.0) continue;
    switch (kind) {
      case PoolKind::Rms: {
        const double p = pooled(row, j);
        if (p == 0.0) break;  // flat point: every token is zero in this channel
        const double coeff = g * inv_len / p;
        for (std::size_t t = 0; t < len; ++t) dsrc(t, j) += coeff * src(t, j);
        break;
      }
      case PoolKind::Mean: {
        const double coeff = g * inv_len;
        for (std::size_t t = 0; t < len; ++t) dsrc(t, j) += coeff;
        break;
      }
      case PoolKind::Max: {
        const double p = pooled(row, j);
        for (std::size_t t = 0; t < len; ++t) {
          if (src(t, j) == p) {
            dsrc(t, j) += g;
            break;
          }
        }
        break;
      }
    }
  }
}

}  // namespace

ForwardResult forward(const AdapterState& st, const std::vector<Matrix>& x,
                      const std::vector<double>& sigma_noise, bool keep_expert_outputs) {
  validate_forward_input(st, x, sigma_noise);
  const std::size_t batch = x.size();
  const double s = st.scale();

  ForwardResult res;
  ForwardCache& cache = res.cache;
  cache.x = x;
  cache.sigma = sigma_noise;
  cache.variant = st.variant;
  cache.d_in = st.d_in();
  cache.d_out = st.d_out();
  cache.rank = st.rank;
  cache.experts = st.experts;

  if (st.variant == Variant::Ortho) cache.bases = effective_bases(st);
  const Matrix& down = st.variant == Variant::Ortho ? cache.bases.q_eff : st.a_shared;

  cache.bottleneck_pre.reserve(batch);
  for (const Matrix& xb : x) cache.bottleneck_pre.push_back(multiply_a_bt(xb, down));

  cache.pooled = pool(router_source(st, cache), st.router.config.pool);
  cache.routed = route(st.router, cache.pooled, sigma_noise);

  cache.bottleneck_post.reserve(batch);
  for (const Matrix& pre : cache.bottleneck_pre) {
    Matrix post = pre;
    if (st.variant == Variant::Ortho)
      for (std::size_t t = 0; t < post.rows; ++t)
        for (std::size_t j = 0; j < post.cols; ++j) post(t, j) *= st.lambda(0, j);
    cache.bottleneck_post.push_back(std::move(post));
  }

  const std::vector<Matrix>& up =
      st.variant == Variant::Ortho ? cache.bases.p_eff : st.b_experts;

  res.y.reserve(batch);
  if (keep_expert_outputs) {
    cache.has_expert_outputs = true;
    cache.expert_outputs.resize(batch);
  }
  for (std::size_t b = 0; b < batch; ++b) {
    Matrix mix(st.d_out(), st.rank);
    for (std::size_t e = 0; e < st.experts; ++e) add_scaled(mix, up[e], cache.routed.gates(b, e));
    Matrix yb = multiply_a_bt(x[b], st.w0);
    Matrix resid = multiply_a_bt(cache.bottleneck_post[b], mix);
    add_scaled(yb, resid, s);
    res.y.push_back(std::move(yb));
    if (keep_expert_outputs) {
      auto& outs = cache.expert_outputs[b];
      outs.reserve(st.experts);
      for (std::size_t e = 0; e < st.experts; ++e) {
        Matrix o = multiply_a_bt(cache.bottleneck_post[b], up[e]);
        scale_in_place(o, s);
        outs.push_back(std::move(o));
      }
    }
  }
  return res;
}

Gradients backward(const AdapterState& st, const ForwardCache& cache,
                   const std::vector<Matrix>& dy, const BackwardExtras& extras) {
  if (cache.variant != st.variant || cache.d_in != st.d_in() || cache.d_out != st.d_out() ||
      cache.rank != st.rank || cache.experts != st.experts)
    throw Error(Error::Code::CacheMismatch, "backward: cache does not match this adapter");
  const std::size_t batch = cache.x.size();
  if (dy.size() != batch) throw Error(Error::Code::CacheMismatch, "backward: dy batch mismatch");
  const std::size_t e_count = st.experts;
  const double s = st.scale();
  const bool ortho = st.variant == Variant::Ortho;
  const std::vector<Matrix>& up = ortho ? cache.bases.p_eff : st.b_experts;
  const Matrix& down = ortho ? cache.bases.q_eff : st.a_shared;
  const RouterConfig& rcfg = st.router.config;

  if (extras.dgates && (extras.dgates->rows != batch || extras.dgates->cols != e_count))
    throw Error(Error::Code::ShapeMismatch, "backward: dgates shape mismatch");
  if (extras.dlogits && (extras.dlogits->rows != batch || extras.dlogits->cols != e_count))
    throw Error(Error::Code::ShapeMismatch, "backward: dlogits shape mismatch");
  if (extras.dexpert_outputs && extras.dexpert_outputs->size() != batch)
    throw Error(Error::Code::ShapeMismatch, "backward: dexpert_outputs batch mismatch");

  Gradients g;
  g.router_weights = Matrix(st.router.weights.rows, st.router.weights.cols);
  g.router_bias = Matrix(1, e_count);
  if (ortho) {
    g.s_q = Matrix(st.rank, st.rank);
    g.s_p.assign(e_count, Matrix(st.rank, st.rank));
    g.lambda = Matrix(1, st.rank);
  } else {
    g.a_shared = Matrix(st.rank, st.d_in());
    g.b_experts.assign(e_count, Matrix(st.d_out(), st.rank));
  }
  g.x.reserve(batch);

  Matrix d_down(st.rank, st.d_in());  // dQ_eff or dA_shared
  std::vector<Matrix> d_up(e_count, Matrix(st.d_out(), st.rank));  // dP_eff or dB

  const std::vector<Matrix>& pooled_src = router_source(st, cache);

  for (std::size_t b = 0; b < batch; ++b) {
    const Matrix& dyb = dy[b];
    if (dyb.rows != cache.x[b].rows || dyb.cols != st.d_out())
      throw Error(Error::Code::CacheMismatch, "backward: dy shape mismatch");

    Matrix dx = multiply(dyb, st.w0);

    Matrix mix(st.d_out(), st.rank);
    for (std::size_t e = 0; e < e_count; ++e) add_scaled(mix, up[e], cache.routed.gates(b, e));

    Matrix dl_post = multiply(dyb, mix);
    scale_in_place(dl_post, s);
    Matrix d_mix = multiply_at_b(dyb, cache.bottleneck_post[b]);
    scale_in_place(d_mix, s);

    std::vector<double> dgate(e_count, 0.0);
    for (std::size_t e = 0; e < e_count; ++e) {
      dgate[e] = dot(d_mix, up[e]);
      add_scaled(d_up[e], d_mix, cache.routed.gates(b, e));
    }

    if (extras.dexpert_outputs) {
      const auto& deo = (*extras.dexpert_outputs)[b];
      if (deo.size() != e_count)
        throw Error(Error::Code::ShapeMismatch, "backward: dexpert_outputs expert mismatch");
      for (std::size_t e = 0; e < e_count; ++e) {
        if (deo[e].empty()) continue;
        Matrix dpost = multiply(deo[e], up[e]);
        add_scaled(dl_post, dpost, s);
        Matrix dupe = multiply_at_b(deo[e], cache.bottleneck_post[b]);
        add_scaled(d_up[e], dupe, s);
      }
    }

    // lambda sits between the bottleneck and the mixture
    Matrix dl0;
    if (ortho) {
      const Matrix& pre = cache.bottleneck_pre[b];
      for (std::size_t j = 0; j < st.rank; ++j) {
        double acc = 0.0;
        for (std::size_t t = 0; t < pre.rows; ++t) acc += dl_post(t, j) * pre(t, j);
        g.lambda(0, j) += acc;
      }
      dl0 = Matrix(pre.rows, pre.cols);
      for (std::size_t t = 0; t < pre.rows; ++t)
        for (std::size_t j = 0; j < st.rank; ++j) dl0(t, j) = dl_post(t, j) * st.lambda(0, j);
    } else {
      dl0 = std::move(dl_post);
    }

    if (extras.dgates)
      for (std::size_t e = 0; e < e_count; ++e) dgate[e] += (*extras.dgates)(b, e);

    double inner = 0.0;
    for (std::size_t e = 0; e < e_count; ++e) inner += cache.routed.gates(b, e) * dgate[e];
    std::vector<double> dz(e_count);
    for (std::size_t e = 0; e < e_count; ++e)
      dz[e] = cache.routed.gates(b, e) * (dgate[e] - inner);
    if (extras.dlogits)
      for (std::size_t e = 0; e < e_count; ++e) dz[e] += (*extras.dlogits)(b, e);

    const std::size_t in_width = rcfg.input_dim + rcfg.sigma_feature_dim;
    std::vector<double> du(in_width, 0.0);
    for (std::size_t e = 0; e < e_count; ++e) {
      const double dze = dz[e];
      if (dze == 0.0) continue;
      g.router_bias(0, e) += dze;
      for (std::size_t i = 0; i < in_width; ++i) {
        g.router_weights(i, e) += cache.routed.inputs(b, i) * dze;
        du[i] += st.router.weights(i, e) * dze;
      }
    }
    std::vector<double> dpooled(du.begin(), du.begin() + rcfg.input_dim);
    if (st.router_input == RouterInput::Bottleneck)
      pool_backward(rcfg.pool, pooled_src[b], cache.pooled, b, dpooled, dl0);
    else
      pool_backward(rcfg.pool, pooled_src[b], cache.pooled, b, dpooled, dx);

    d_down = d_down + multiply_at_b(dl0, cache.x[b]);
    add_scaled(dx, multiply(dl0, down), 1.0);
    g.x.push_back(std::move(dx));
  }

  if (ortho) {
    Matrix d_rq = multiply_a_bt(d_down, st.q_basis);
    g.s_q = cayley_vjp(CayleySeed(st.s_q), d_rq);
    for (std::size_t e = 0; e < e_count; ++e) {
      Matrix d_rp = multiply_at_b(st.p_bases[e], d_up[e]);
      g.s_p[e] = cayley_vjp(CayleySeed(st.s_p[e]), d_rp);
    }
  } else {
    g.a_shared = std::move(d_down);
    g.b_experts = std::move(d_up);
  }
  return g;
}

std::vector<std::pair<std::string, Matrix*>> trainable_tensors(AdapterState& st) {
  std::vector<std::pair<std::string, Matrix*>> out;
  if (st.variant == Variant::Ortho) {
    out.emplace_back("s_q", &st.s_q);
    for (std::size_t e = 0; e < st.experts; ++e)
      out.emplace_back("s_p." + std::to_string(e), &st.s_p[e]);
    out.emplace_back("lambda", &st.lambda);
  } else {
    out.emplace_back("a_shared", &st.a_shared);
    for (std::size_t e = 0; e < st.experts; ++e)
      out.emplace_back("b_experts." + std::to_string(e), &st.b_experts[e]);
  }
  out.emplace_back("router.weights", &st.router.weights);
  out.emplace_back("router.bias", &st.router.bias);
  return out;
}

std::vector<std::pair<std::string, Matrix*>> trainable_tensors(Gradients& g, Variant variant) {
  std::vector<std::pair<std::string, Matrix*>> out;
  if (variant == Variant::Ortho) {
    out.emplace_back("s_q", &g.s_q);
    for (std::size_t e = 0; e < g.s_p.size(); ++e)
      out.emplace_back("s_p." + std::to_string(e), &g.s_p[e]);
    out.emplace_back("lambda", &g.lambda);
  } else {
    out.emplace_back("a_shared", &g.a_shared);
    for (std::size_t e = 0; e < g.b_experts.size(); ++e)
      out.emplace_back("b_experts." + std::to_string(e), &g.b_experts[e]);
  }
  out.emplace_back("router.weights", &g.router_weights);
  out.emplace_back("router.bias", &g.router_bias);
  return out;
}

Matrix deadlock_diagnostic(const AdapterState& st) {
  Matrix out(st.experts, st.experts);
  if (st.variant == Variant::Ortho) {
    EffectiveBases eb = effective_bases(st);
    for (std::size_t i = 0; i < st.experts; ++i)
      for (std::size_t j = 0; j < st.experts; ++j)
        out(i, j) = frobenius_norm(gram(eb.p_eff[i], eb.p_eff[j]));
  } else {
    for (std::size_t i = 0; i < st.experts; ++i)
      for (std::size_t j = 0; j < st.experts; ++j)
        out(i, j) = frobenius_norm(gram(st.b_experts[i], st.b_experts[j]));
  }
  return out;
}

}  // namespace orthomoe
