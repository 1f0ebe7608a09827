#include "mlnlu/decoders.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mlnlu/data.hpp"

namespace mlnlu {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_crf_shapes(const Tensord& emissions, const Tensord& transitions) {
  if (emissions.rank() != 2)
    throw DimensionError("crf: emissions must be rank-2, got " +
                         shape_str(emissions.shape()));
  const Index L = emissions.dim(1);
  if (transitions.rank() != 2 || transitions.dim(0) != L + 2 ||
      transitions.dim(1) != L + 2)
    throw DimensionError("crf: transitions " + shape_str(transitions.shape()) +
                         " do not match " + std::to_string(L) +
                         " labels (+2 boundary states)");
}

void check_tags(const std::vector<Index>& tags, Index T, Index L) {
  if (static_cast<Index>(tags.size()) != T)
    throw DimensionError("crf: " + std::to_string(tags.size()) +
                         " tags for " + std::to_string(T) + " positions");
  for (Index y : tags)
    if (y < 0 || y >= L)
      throw IndexError("crf: tag " + std::to_string(y) + " outside [0," +
                       std::to_string(L) + ")");
}

double lse_span(const double* v, Index n) {
  double m = kNegInf;
  for (Index i = 0; i < n; ++i) m = std::max(m, v[i]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (Index i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

}  // namespace

Tensord make_crf_transitions(Index n_labels) {
  if (n_labels < 1) throw ConfigError("crf transitions need >= 1 label");
  Tensord tr = Tensord::zeros({n_labels + 2, n_labels + 2});
  const Index start = crf_start(n_labels), stop = crf_stop(n_labels);
  for (Index i = 0; i < n_labels + 2; ++i) {
    tr(i, start) = kNegInf;  // nothing transitions into START
    tr(stop, i) = kNegInf;   // nothing transitions out of STOP
  }
  return tr;
}

CrfHead make_crf_head(Index d_ctx, Index n_labels, Rng& rng) {
  if (d_ctx < 1 || n_labels < 1)
    throw ConfigError("crf head dims must be positive");
  CrfHead head;
  head.n_labels = n_labels;
  head.d_ctx = d_ctx;
  Tensord w({d_ctx, n_labels});
  w.fill_xavier(rng);
  head.proj_w = Var::leaf(std::move(w));
  head.proj_b = Var::leaf(Tensord::zeros({n_labels}));
  head.transitions = Var::leaf(make_crf_transitions(n_labels));
  return head;
}

Var crf_emissions(const CrfHead& head, const Var& context, Index n_real) {
  if (context.value().rank() != 2 || context.value().dim(1) != head.d_ctx)
    throw DimensionError("crf_emissions: context " +
                         shape_str(context.shape()) + " does not match d_ctx " +
                         std::to_string(head.d_ctx));
  return add_rowwise(matmul(top_rows(context, n_real), head.proj_w),
                     head.proj_b);
}

Var crf_log_partition(const Var& emissions, const Var& transitions) {
  check_crf_shapes(emissions.value(), transitions.value());
  const Index T = emissions.value().dim(0), L = emissions.value().dim(1);
  const Index start = crf_start(L), stop = crf_stop(L);

  Var real_block = block(transitions, 0, L, 0, L);
  Var from_start = slice(row(transitions, start), 0, L);
  Var to_stop = slice(col(transitions, stop), 0, L);

  Var alpha = add(from_start, row(emissions, 0));
  for (Index t = 1; t < T; ++t)
    alpha = add(logsumexp(add_colwise(real_block, alpha), 0),
                row(emissions, t));
  return logsumexp(add(alpha, to_stop), 0);
}

Var crf_gold_score(const Var& emissions, const Var& transitions,
                   const std::vector<Index>& tags) {
  check_crf_shapes(emissions.value(), transitions.value());
  const Index T = emissions.value().dim(0), L = emissions.value().dim(1);
  check_tags(tags, T, L);
  const Index start = crf_start(L), stop = crf_stop(L);

  std::vector<Var> parts;
  parts.reserve(static_cast<std::size_t>(2 * T + 1));
  parts.push_back(slice(row(transitions, start), tags[0], 1));
  for (Index t = 0; t < T; ++t)
    parts.push_back(slice(row(emissions, t), tags[static_cast<std::size_t>(t)], 1));
  for (Index t = 1; t < T; ++t)
    parts.push_back(slice(row(transitions, tags[static_cast<std::size_t>(t - 1)]),
                          tags[static_cast<std::size_t>(t)], 1));
  parts.push_back(slice(row(transitions, tags[static_cast<std::size_t>(T - 1)]),
                        stop, 1));
  return sum(concat(parts));
}

Var crf_nll(const Var& emissions, const Var& transitions,
            const std::vector<Index>& tags) {
  return sub(crf_log_partition(emissions, transitions),
             crf_gold_score(emissions, transitions, tags));
}

ViterbiResult crf_viterbi(const Tensord& emissions, const Tensord& transitions,
                          bool constrain_bio,
                          const std::vector<std::string>& labels) {
  check_crf_shapes(emissions, transitions);
  const Index T = emissions.dim(0), L = emissions.dim(1);
  const Index start = crf_start(L), stop = crf_stop(L);

  // inside_of[y] = chunk type when label y is an I- tag, else empty.
  std::vector<std::string> inside_of(static_cast<std::size_t>(L));
  std::vector<std::string> begins(static_cast<std::size_t>(L));
  if (constrain_bio) {
    if (static_cast<Index>(labels.size()) != L)
      throw ConfigError("crf_viterbi: " + std::to_string(labels.size()) +
                        " label names for " + std::to_string(L) + " labels");
    for (Index y = 0; y < L; ++y) {
      auto [kind, type] = parse_bio_tag(labels[static_cast<std::size_t>(y)]);
      if (kind == 'I') inside_of[static_cast<std::size_t>(y)] = type;
      if (kind == 'B' || kind == 'I') begins[static_cast<std::size_t>(y)] = type;
    }
  }
  auto blocked = [&](Index prev, Index y) {  // prev == start for position 0
    if (!constrain_bio) return false;
    const std::string& need = inside_of[static_cast<std::size_t>(y)];
    if (need.empty()) return false;
    if (prev == start) return true;
    return begins[static_cast<std::size_t>(prev)] != need;
  };

  std::vector<double> delta(static_cast<std::size_t>(T * L), kNegInf);
  std::vector<Index> back(static_cast<std::size_t>(T * L), 0);
  for (Index y = 0; y < L; ++y)
    delta[static_cast<std::size_t>(y)] =
        (blocked(start, y) ? kNegInf : transitions(start, y)) + emissions(0, y);
  for (Index t = 1; t < T; ++t)
    for (Index y = 0; y < L; ++y) {
      double best = kNegInf;
      Index arg = 0;
      for (Index p = 0; p < L; ++p) {
        const double cand = blocked(p, y)
                                ? kNegInf
                                : delta[static_cast<std::size_t>((t - 1) * L + p)] +
                                      transitions(p, y);
        if (cand > best) {
          best = cand;
          arg = p;
        }
      }
      delta[static_cast<std::size_t>(t * L + y)] = best + emissions(t, y);
      back[static_cast<std::size_t>(t * L + y)] = arg;
    }

  double best = kNegInf;
  Index arg = 0;
  for (Index y = 0; y < L; ++y) {
    const double cand =
        delta[static_cast<std::size_t>((T - 1) * L + y)] + transitions(y, stop);
    if (cand > best) {
      best = cand;
      arg = y;
    }
  }
  ViterbiResult out;
  out.score = best;
  out.tags.assign(static_cast<std::size_t>(T), 0);
  out.tags[static_cast<std::size_t>(T - 1)] = arg;
  for (Index t = T - 1; t > 0; --t)
    out.tags[static_cast<std::size_t>(t - 1)] =
        back[static_cast<std::size_t>(t * L + out.tags[static_cast<std::size_t>(t)])];
  return out;
}

Tensord crf_marginals(const Tensord& emissions, const Tensord& transitions) {
  check_crf_shapes(emissions, transitions);
  const Index T = emissions.dim(0), L = emissions.dim(1);
  const Index start = crf_start(L), stop = crf_stop(L);

  Tensord alpha({T, L}), beta({T, L});
  for (Index y = 0; y < L; ++y)
    alpha(0, y) = transitions(start, y) + emissions(0, y);
  std::vector<double> scratch(static_cast<std::size_t>(L));
  for (Index t = 1; t < T; ++t)
    for (Index y = 0; y < L; ++y) {
      for (Index p = 0; p < L; ++p)
        scratch[static_cast<std::size_t>(p)] = alpha(t - 1, p) + transitions(p, y);
      alpha(t, y) = lse_span(scratch.data(), L) + emissions(t, y);
    }
  for (Index y = 0; y < L; ++y) beta(T - 1, y) = transitions(y, stop);
  for (Index t = T - 2; t >= 0; --t)
    for (Index y = 0; y < L; ++y) {
      for (Index n = 0; n < L; ++n)
        scratch[static_cast<std::size_t>(n)] =
            transitions(y, n) + emissions(t + 1, n) + beta(t + 1, n);
      beta(t, y) = lse_span(scratch.data(), L);
    }
  for (Index y = 0; y < L; ++y)
    scratch[static_cast<std::size_t>(y)] = alpha(T - 1, y) + beta(T - 1, y);
  const double logz = lse_span(scratch.data(), L);

  Tensord m({T, L});
  for (Index t = 0; t < T; ++t)
    for (Index y = 0; y < L; ++y)
      m(t, y) = std::exp(alpha(t, y) + beta(t, y) - logz);
  return m;
}

MlpIcHead make_mlp_ic_head(Index d_ctx, Index d_hidden, Index n_intents,
                           double dropout_rate, bool mean_pool, Rng& rng) {
  if (d_ctx < 1 || d_hidden < 1 || n_intents < 1)
    throw ConfigError("ic head dims must be positive");
  if (d_ctx % 2 != 0)
    throw ConfigError("ic head d_ctx must be even (forward/backward halves)");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ConfigError("ic head dropout outside [0,1)");
  MlpIcHead head;
  head.d_ctx = d_ctx;
  head.d_hidden = d_hidden;
  head.n_intents = n_intents;
  head.dropout_rate = dropout_rate;
  head.mean_pool = mean_pool;
  Tensord w1({d_hidden, d_ctx});
  w1.fill_xavier(rng);
  Tensord w2({n_intents, d_hidden});
  w2.fill_xavier(rng);
  head.w1 = Var::leaf(std::move(w1));
  head.b1 = Var::leaf(Tensord::zeros({d_hidden}));
  head.w2 = Var::leaf(std::move(w2));
  head.b2 = Var::leaf(Tensord::zeros({n_intents}));
  return head;
}

Var ic_logits(const MlpIcHead& head, const Var& context, Index n_real,
              Mode mode, Rng* drop_rng) {
  if (context.value().rank() != 2 || context.value().dim(1) != head.d_ctx)
    throw DimensionError("ic_logits: context " + shape_str(context.shape()) +
                         " does not match d_ctx " + std::to_string(head.d_ctx));
  if (n_real < 1 || n_real > context.value().dim(0))
    throw DimensionError("ic_logits: n_real out of range");

  Var u;
  if (head.mean_pool) {
    u = mean_rows(top_rows(context, n_real));
  } else {
    const Index h = head.d_ctx / 2;
    u = concat({slice(row(context, n_real - 1), 0, h),  // last forward state
                slice(row(context, 0), h, h)});         // first backward state
  }
  Var hidden = gelu(add(matmul(head.w1, u), head.b1));
  if (mode == Mode::Train && head.dropout_rate > 0.0) {
    if (!drop_rng) throw ConfigError("ic_logits: train mode needs a dropout rng");
    hidden = dropout(hidden, head.dropout_rate, mode, *drop_rng);
  }
  return add(matmul(head.w2, hidden), head.b2);
}

std::vector<Var> crf_params(const CrfHead& head) {
  return {head.proj_w, head.proj_b, head.transitions};
}

std::vector<Var> ic_params(const MlpIcHead& head) {
  return {head.w1, head.b1, head.w2, head.b2};
}

void set_crf_freeze(CrfHead& head, bool frozen) {
  for (Var p : crf_params(head)) p.set_requires_grad(!frozen);
}

void set_ic_freeze(MlpIcHead& head, bool frozen) {
  for (Var p : ic_params(head)) p.set_requires_grad(!frozen);
}

}  // namespace mlnlu
