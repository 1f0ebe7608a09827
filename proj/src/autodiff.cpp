#include "mlnlu/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace mlnlu {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

void Tape::backward(const Var& loss, double seed) {
  if (loss.value().size() != 1)
    throw DimensionError("backward: loss must be scalar, got " +
                         shape_str(loss.shape()));
  ensure_grad(loss.node())[0] += seed;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

void backward(const Var& loss, double seed) {
  Tape* t = Tape::active();
  if (!t) throw ConfigError("backward: no active tape");
  t->backward(loss, seed);
}

namespace detail {
Var make_result(Tensord value, std::initializer_list<const Var*> inputs,
                Tape** tape_out) {
  Var out = Var::wrap(std::make_shared<Node>());
  out.node()->value = std::move(value);
  bool needs = false;
  for (const Var* v : inputs) needs = needs || v->needs();
  out.node()->needs = needs;
  *tape_out = (needs && Tape::active()) ? Tape::active() : nullptr;
  return out;
}
}  // namespace detail

using detail::make_result;

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double gelu_scalar(double x) {
  // x * Phi(x) with Phi the standard normal CDF.
  return x * 0.5 * std::erfc(-x * 0.7071067811865475244);
}

Var matmul(const Var& a, const Var& b) {
  Tape* t;
  Var out = make_result(matmul(a.value(), b.value()), {&a, &b}, &t);
  if (t)
    t->record([an = a.node(), bn = b.node(), on = out.node()] {
      if (!on->grad) return;
      const auto g = on->grad->mat();
      if (bn->value.rank() == 2) {
        if (an->needs) ensure_grad(an).mat().noalias() += g * bn->value.mat().transpose();
        if (bn->needs) ensure_grad(bn).mat().noalias() += an->value.mat().transpose() * g;
      } else {
        // a {m,k} by b {k} -> {m}; g maps as 1 x m.
        if (an->needs)
          ensure_grad(an).mat().noalias() += g.transpose() * bn->value.mat();
        if (bn->needs)
          ensure_grad(bn).mat().noalias() += g * an->value.mat();
      }
    });
  return out;
}

namespace {
void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}
}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensord v = a.value();
  v.array() += b.value().array();
  Tape* t;
  Var out = make_result(std::move(v), {&a, &b}, &t);
  if (t)
    t->record([an = a.node(), bn = b.node(), on = out.node()] {
      if (!on->grad) return;
      if (an->needs) ensure_grad(an).array() += on->grad->array();
      if (bn->needs) ensure_grad(bn).array() += on->grad->array();
    });
  return out;
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensord v = a.value();
  v.array() -= b.value().array();
  Tape* t;
  Var out = make_result(std::move(v), {&a, &b}, &t);
  if (t)
    t->record([an = a.node(), bn = b.node(), on = out.node()] {
      if (!on->grad) return;
      if (an->needs) ensure_grad(an).array() += on->grad->array();
      if (bn->needs) ensure_grad(bn).array() -= on->grad->array();
    });
  return out;
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensord v = a.value();
  v.array() *= b.value().array();
  Tape* t;
  Var out = make_result(std::move(v), {&a, &b}, &t);
  if (t)
    t->record([an = a.node(), bn = b.node(), on = out.node()] {
      if (!on->grad) return;
      if (an->needs) ensure_grad(an).array() += on->grad->array() * bn->value.array();
      if (bn->needs) ensure_grad(bn).array() += on->grad->array() * an->value.array();
    });
  return out;
}

Var scale(const Var& a, double c) {
  Tensord v = a.value();
  v.array() *= c;
  Tape* t;
  Var out = make_result(std::move(v), {&a}, &t);
  if (t)
    t->record([an = a.node(), on = out.node(), c] {
      if (!on->grad) return;
      if (an->needs) ensure_grad(an).array() += c * on->grad->array();
    });
  return out;
}

Var add_rowwise(const Var& m, const Var& v) {
  if (m.value().rank() != 2 || v.value().rank() != 1 || m.value().dim(1) != v.value().dim(0))
    throw DimensionError("add_rowwise: " + shape_str(m.shape()) + " vs " +
                         shape_str(v.shape()));
  Tensord out_v = m.value();
  out_v.mat().rowwise() += v.value().mat().row(0);
  Tape* t;
  Var out = make_result(std::move(out_v), {&m, &v}, &t);
  if (t)
    t->record([mn = m.node(), vn = v.node(), on = out.node()] {
      if (!on->grad) return;
      if (mn->needs) ensure_grad(mn).array() += on->grad->array();
      if (vn->needs)
        ensure_grad(vn).mat().row(0) += on->grad->mat().colwise().sum();
    });
  return out;
}

Var add_colwise(const Var& m, const Var& v) {
  if (m.value().rank() != 2 || v.value().rank() != 1 || m.value().dim(0) != v.value().dim(0))
    throw DimensionError("add_colwise: " + shape_str(m.shape()) + " vs " +
                         shape_str(v.shape()));
  Tensord out_v = m.value();
  out_v.mat().colwise() += v.value().mat().row(0).transpose();
  Tape* t;
  Var out = make_result(std::move(out_v), {&m, &v}, &t);
  if (t)
    t->record([mn = m.node(), vn = v.node(), on = out.node()] {
      if (!on->grad) return;
      if (mn->needs) ensure_grad(mn).array() += on->grad->array();
      if (vn->needs)
        ensure_grad(vn).mat().row(0) += on->grad->mat().rowwise().sum().transpose();
    });
  return out;
}

Var sigmoid(const Var& x) {
  Tensord v = x.value();
  for (Index i = 0; i < v.size(); ++i) v[i] = sigmoid_scalar(v[i]);
  Tape* t;
  Var out = make_result(std::move(v), {&x}, &t);
  if (t)
    t->record([xn = x.node(), on = out.node()] {
      if (!on->grad || !xn->needs) return;
      ensure_grad(xn).array() +=
          on->grad->array() * on->value.array() * (1.0 - on->value.array());
    });
  return out;
}

Var tanh(const Var& x) {
  Tensord v = x.value();
  v.array() = v.array().tanh();
  Tape* t;
  Var out = make_result(std::move(v), {&x}, &t);
  if (t)
    t->record([xn = x.node(), on = out.node()] {
      if (!on->grad || !xn->needs) return;
      ensure_grad(xn).array() +=
          on->grad->array() * (1.0 - on->value.array().square());
    });
  return out;
}

Var gelu(const Var& x) {
  Tensord v = x.value();
  for (Index i = 0; i < v.size(); ++i) v[i] = gelu_scalar(v[i]);
  Tape* t;
  Var out = make_result(std::move(v), {&x}, &t);
  if (t)
    t->record([xn = x.node(), on = out.node()] {
      if (!on->grad || !xn->needs) return;
      auto& g = ensure_grad(xn);
      for (Index i = 0; i < g.size(); ++i) {
        const double xi = xn->value[i];
        const double phi = 0.5 * std::erfc(-xi * 0.7071067811865475244);
        const double dens = 0.3989422804014326779 * std::exp(-0.5 * xi * xi);
        g[i] += (*on->grad)[i] * (phi + xi * dens);
      }
    });
  return out;
}

Var activation(const Var& x, Activation kind) {
  switch (kind) {
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Tanh: return tanh(x);
    case Activation::Gelu: return gelu(x);
  }
  throw ConfigError("activation: unknown kind");
}

namespace {
// Stable logsumexp over a contiguous strided slice; returns -inf only when
// every input is -inf.
double lse_span(const double* p, Index n, Index stride) {
  double m = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < n; ++i) m = std::max(m, p[i * stride]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (Index i = 0; i < n; ++i) s += std::exp(p[i * stride] - m);
  return m + std::log(s);
}

void lse_grad_span(const double* p, Index n, Index stride, double out_val,
                   double out_grad, double* gp) {
  if (!std::isfinite(out_val)) return;
  for (Index i = 0; i < n; ++i)
    gp[i * stride] += out_grad * std::exp(p[i * stride] - out_val);
}
}  // namespace

Var logsumexp(const Var& x, int axis) {
  const Tensord& xv = x.value();
  Tensord v;
  if (xv.rank() == 1) {
    if (axis != 0) throw DimensionError("logsumexp: axis 0 expected for rank-1");
    v = Tensord::scalar(lse_span(xv.data(), xv.dim(0), 1));
  } else if (xv.rank() == 2) {
    const Index r = xv.dim(0), c = xv.dim(1);
    if (axis == 0) {
      v = Tensord::zeros({c});
      for (Index j = 0; j < c; ++j) v[j] = lse_span(xv.data() + j, r, c);
    } else if (axis == 1) {
      v = Tensord::zeros({r});
      for (Index i = 0; i < r; ++i) v[i] = lse_span(xv.data() + i * c, c, 1);
    } else {
      throw DimensionError("logsumexp: axis out of range for rank-2");
    }
  } else {
    throw DimensionError("logsumexp: rank > 2 unsupported");
  }
  Tape* t;
  Var out = make_result(std::move(v), {&x}, &t);
  if (t)
    t->record([xn = x.node(), on = out.node(), axis] {
      if (!on->grad || !xn->needs) return;
      auto& g = ensure_grad(xn);
      const Tensord& xv2 = xn->value;
      if (xv2.rank() == 1) {
        lse_grad_span(xv2.data(), xv2.dim(0), 1, on->value[0], (*on->grad)[0],
                      g.data());
      } else {
        const Index r = xv2.dim(0), c = xv2.dim(1);
        if (axis == 0) {
          for (Index j = 0; j < c; ++j)
            lse_grad_span(xv2.data() + j, r, c, on->value[j], (*on->grad)[j],
                          g.data() + j);
        } else {
          for (Index i = 0; i < r; ++i)
            lse_grad_span(xv2.data() + i * c, c, 1, on->value[i], (*on->grad)[i],
                          g.data() + i * c);
        }
      }
    });
  return out;
}

Var softmax_cross_entropy(const Var& logits, Index target) {
  const Tensord& lv = logits.value();
  if (lv.rank() != 1)
    throw DimensionError("softmax_cross_entropy: rank-1 logits expected");
  if (target < 0 || target >= lv.dim(0))
    throw IndexError("softmax_cross_entropy: target " + std::to_string(target) +
                     " outside [0," + std::to_string(lv.dim(0)) + ")");
  const double lse = lse_span(lv.data(), lv.dim(0), 1);
  Tape* t;
  Var out = make_result(Tensord::scalar(lse - lv[target]), {&logits}, &t);
  if (t)
    t->record([ln = logits.node(), on = out.node(), target, lse] {
      if (!on->grad || !ln->needs) return;
      auto& g = ensure_grad(ln);
      const double go = (*on->grad)[0];
      for (Index i = 0; i < g.size(); ++i)
        g[i] += go * std::exp(ln->value[i] - lse);
      g[target] -= go;
    });
  return out;
}

Var conv1d_maxpool(const Var& emb, const Var& filters, const Var& bias) {
  const Tensord& e = emb.value();
  const Tensord& f = filters.value();
  if (e.rank() != 2 || f.rank() != 3)
    throw DimensionError("conv1d_maxpool: emb rank-2 and filters rank-3 expected");
  const Index T = e.dim(0), d = e.dim(1);
  const Index nf = f.dim(0), w = f.dim(1);
  if (f.dim(2) != d)
    throw DimensionError("conv1d_maxpool: channel mismatch " + shape_str(e.shape()) +
                         " vs " + shape_str(f.shape()));
  if (bias.value().rank() != 1 || bias.value().dim(0) != nf)
    throw DimensionError("conv1d_maxpool: bias shape " + shape_str(bias.shape()));
  const Index teff = std::max(T, w);   // zero rows pad short sequences
  const Index npos = teff - w + 1;

  Tensord out_v({nf});
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(nf));
  for (Index k = 0; k < nf; ++k) {
    double best = -std::numeric_limits<double>::infinity();
    Index best_p = 0;
    for (Index p = 0; p < npos; ++p) {
      double s = 0.0;
      for (Index u = 0; u < w; ++u) {
        const Index t_row = p + u;
        if (t_row >= T) continue;  // zero padding contributes nothing
        for (Index c = 0; c < d; ++c) s += e(t_row, c) * f(k, u, c);
      }
      if (s > best) {
        best = s;
        best_p = p;
      }
    }
    out_v[k] = best + bias.value()[k];
    (*argmax)[static_cast<std::size_t>(k)] = best_p;
  }

  Tape* t;
  Var out = make_result(std::move(out_v), {&emb, &filters, &bias}, &t);
  if (t)
    t->record([en = emb.node(), fn = filters.node(), bn = bias.node(),
               on = out.node(), argmax] {
      if (!on->grad) return;
      const Tensord& e2 = en->value;
      const Tensord& f2 = fn->value;
      const Index T2 = e2.dim(0), d2 = e2.dim(1);
      const Index nf2 = f2.dim(0), w2 = f2.dim(1);
      for (Index k = 0; k < nf2; ++k) {
        const double go = (*on->grad)[k];
        if (go == 0.0) continue;
        if (bn->needs) ensure_grad(bn)[k] += go;
        const Index p = (*argmax)[static_cast<std::size_t>(k)];
        for (Index u = 0; u < w2; ++u) {
          const Index t_row = p + u;
          if (t_row >= T2) continue;
          for (Index c = 0; c < d2; ++c) {
            if (fn->needs) ensure_grad(fn)(k, u, c) += go * e2(t_row, c);
            if (en->needs) ensure_grad(en)(t_row, c) += go * f2(k, u, c);
          }
        }
      }
    });
  return out;
}

Var dropout(const Var& x, double p, Mode mode, Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw ConfigError("dropout: rate " + std::to_string(p) + " outside [0,1)");
  if (mode == Mode::Infer) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  Tensord v = x.value();
  auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(v.size()));
  for (Index i = 0; i < v.size(); ++i) {
    const double m = rng.uniform() < p ? 0.0 : keep_scale;
    (*mask)[static_cast<std::size_t>(i)] = m;
    v[i] *= m;
  }
  Tape* t;
  Var out = make_result(std::move(v), {&x}, &t);
  if (t)
    t->record([xn = x.node(), on = out.node(), mask] {
      if (!on->grad || !xn->needs) return;
      auto& g = ensure_grad(xn);
      for (Index i = 0; i < g.size(); ++i)
        g[i] += (*on->grad)[i] * (*mask)[static_cast<std::size_t>(i)];
    });
  return out;
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat: no parts");
  Index total = 0;
  for (const Var& p : parts) {
    if (p.value().rank() != 1) throw DimensionError("concat: rank-1 parts expected");
    total += p.value().dim(0);
  }
  Tensord v({total});
  Index off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), v.data() + off);
    off += p.value().size();
  }
  Var out = Var::wrap(std::make_shared<Node>());
  out.node()->value = std::move(v);
  bool needs = false;
  for (const Var& p : parts) needs = needs || p.needs();
  out.node()->needs = needs;
  Tape* t = (needs && Tape::active()) ? Tape::active() : nullptr;
  if (t) {
    std::vector<NodePtr> ins;
    ins.reserve(parts.size());
    for (const Var& p : parts) ins.push_back(p.node());
    t->record([ins, on = out.node()] {
      if (!on->grad) return;
      Index off2 = 0;
      for (const NodePtr& in : ins) {
        const Index n = in->value.size();
        if (in->needs) {
          auto& g = ensure_grad(in);
          for (Index i = 0; i < n; ++i) g[i] += (*on->grad)[off2 + i];
        }
        off2 += n;
      }
    });
  }
  return out;
}

Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  const Index c = rows.front().value().size();
  for (const Var& r : rows)
    if (r.value().rank() != 1 || r.value().dim(0) != c)
      throw DimensionError("stack_rows: inconsistent row widths");
  Tensord v({static_cast<Index>(rows.size()), c});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].value().data(), rows[i].value().data() + c,
              v.data() + static_cast<Index>(i) * c);
  Var out = Var::wrap(std::make_shared<Node>());
  out.node()->value = std::move(v);
  bool needs = false;
  for (const Var& r : rows) needs = needs || r.needs();
  out.node()->needs = needs;
  Tape* t = (needs && Tape::active()) ? Tape::active() : nullptr;
  if (t) {
    std::vector<NodePtr> ins;
    ins.reserve(rows.size());
    for (const Var& r : rows) ins.push_back(r.node());
    t->record([ins, on = out.node(), c] {
      if (!on->grad) return;
      for (std::size_t i = 0; i < ins.size(); ++i) {
        if (!ins[i]->needs) continue;
        auto& g = ensure_grad(ins[i]);
        const double* src = on->grad->data() + static_cast<Index>(i) * c;
        for (Index j = 0; j < c; ++j) g[j] += src[j];
      }
    });
  }
  return out;
}

Var hconcat(const Var& a, const Var& b) {
  const Tensord& av = a.value();
  const Tensord& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(0) != bv.dim(0))
    throw DimensionError("hconcat: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const Index r = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  Tensord v({r, ca + cb});
  for (Index i = 0; i < r; ++i) {
    std::copy(av.data() + i * ca, av.data() + (i + 1) * ca, v.data() + i * (ca + cb));
    std::copy(bv.data() + i * cb, bv.data() + (i + 1) * cb,
              v.data() + i * (ca + cb) + ca);
  }
  Tape* t;
  Var out = make_result(std::move(v), {&a, &b}, &t);
  if (t)
    t->record([an = a.node(), bn = b.node(), on = out.node(), r, ca, cb] {
      if (!on->grad) return;
      for (Index i = 0; i < r; ++i) {
        const double* g = on->grad->data() + i * (ca + cb);
        if (an->needs) {
          double* ga = ensure_grad(an).data() + i * ca;
          for (Index j = 0; j < ca; ++j) ga[j] += g[j];
        }
        if (bn->needs) {
          double* gb = ensure_grad(bn).data() + i * cb;
          for (Index j = 0; j < cb; ++j) gb[j] += g[ca + j];
        }
      }
    });
  return out;
}

Var row(const Var& m, Index i) {
  const Tensord& mv = m.value();
  if (mv.rank() != 2) throw DimensionError("row: rank-2 expected");
  if (i < 0 || i >= mv.dim(0))
    throw IndexError("row: index " + std::to_string(i) + " outside [0," +
                     std::to_string(mv.dim(0)) + ")");
  const Index c = mv.dim(1);
  Tensord v({c});
  std::copy(mv.data() + i * c, mv.data() + (i + 1) * c, v.data());
  Tape* t;
  Var out = make_result(std::move(v), {&m}, &t);
  if (t)
    t->record([mn = m.node(), on = out.node(), i, c] {
      if (!on->grad || !mn->needs) return;
      auto& g = ensure_grad(mn);
      for (Index j = 0; j < c; ++j) g[i * c + j] += (*on->grad)[j];
    });
  return out;
}

Var top_rows(const Var& m, Index n) {
  const Tensord& mv = m.value();
  if (mv.rank() != 2) throw DimensionError("top_rows: rank-2 expected");
  if (n < 1 || n > mv.dim(0)) throw IndexError("top_rows: n out of range");
  const Index c = mv.dim(1);
  Tensord v({n, c});
  std::copy(mv.data(), mv.data() + n * c, v.data());
  Tape* t;
  Var out = make_result(std::move(v), {&m}, &t);
  if (t)
    t->record([mn = m.node(), on = out.node(), n, c] {
      if (!on->grad || !mn->needs) return;
      auto& g = ensure_grad(mn);
      for (Index i = 0; i < n * c; ++i) g[i] += (*on->grad)[i];
    });
  return out;
}

Var col(const Var& m, Index j) {
  const Tensord& mv = m.value();
  if (mv.rank() != 2) throw DimensionError("col: rank-2 expected");
  if (j < 0 || j >= mv.dim(1))
    throw IndexError("col: index " + std::to_string(j) + " outside [0," +
                     std::to_string(mv.dim(1)) + ")");
  const Index r = mv.dim(0), c = mv.dim(1);
  Tensord v({r});
  for (Index i = 0; i < r; ++i) v[i] = mv[i * c + j];
  Tape* t;
  Var out = make_result(std::move(v), {&m}, &t);
  if (t)
    t->record([mn = m.node(), on = out.node(), j, r, c] {
      if (!on->grad || !mn->needs) return;
      auto& g = ensure_grad(mn);
      for (Index i = 0; i < r; ++i) g[i * c + j] += (*on->grad)[i];
    });
  return out;
}

Var block(const Var& m, Index r0, Index rows, Index c0, Index cols) {
  const Tensord& mv = m.value();
  if (mv.rank() != 2) throw DimensionError("block: rank-2 expected");
  if (r0 < 0 || rows < 1 || r0 + rows > mv.dim(0) || c0 < 0 || cols < 1 ||
      c0 + cols > mv.dim(1))
    throw IndexError("block: [" + std::to_string(r0) + "," +
                     std::to_string(r0 + rows) + ")x[" + std::to_string(c0) +
                     "," + std::to_string(c0 + cols) + ") outside " +
                     shape_str(m.shape()));
  const Index c = mv.dim(1);
  Tensord v({rows, cols});
  for (Index i = 0; i < rows; ++i)
    std::copy(mv.data() + (r0 + i) * c + c0, mv.data() + (r0 + i) * c + c0 + cols,
              v.data() + i * cols);
  Tape* t;
  Var out = make_result(std::move(v), {&m}, &t);
  if (t)
    t->record([mn = m.node(), on = out.node(), r0, rows, c0, cols, c] {
      if (!on->grad || !mn->needs) return;
      auto& g = ensure_grad(mn);
      for (Index i = 0; i < rows; ++i)
        for (Index k = 0; k < cols; ++k)
          g[(r0 + i) * c + c0 + k] += (*on->grad)[i * cols + k];
    });
  return out;
}

Var pad_rows(const Var& m, Index total_rows) {
  const Tensord& mv = m.value();
  if (mv.rank() != 2) throw DimensionError("pad_rows: rank-2 expected");
  const Index r = mv.dim(0), c = mv.dim(1);
  if (total_rows < r) throw DimensionError("pad_rows: target smaller than input");
  if (total_rows == r) return m;
  Tensord v({total_rows, c});
  std::copy(mv.data(), mv.data() + r * c, v.data());
  Tape* t;
  Var out = make_result(std::move(v), {&m}, &t);
  if (t)
    t->record([mn = m.node(), on = out.node(), r, c] {
      if (!on->grad || !mn->needs) return;
      auto& g = ensure_grad(mn);
      for (Index i = 0; i < r * c; ++i) g[i] += (*on->grad)[i];
    });
  return out;
}

Var slice(const Var& v, Index start, Index len) {
  const Tensord& vv = v.value();
  if (vv.rank() != 1) throw DimensionError("slice: rank-1 expected");
  if (start < 0 || len < 1 || start + len > vv.dim(0))
    throw IndexError("slice: [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") outside [0," +
                     std::to_string(vv.dim(0)) + ")");
  Tensord out_v({len});
  std::copy(vv.data() + start, vv.data() + start + len, out_v.data());
  Tape* t;
  Var out = make_result(std::move(out_v), {&v}, &t);
  if (t)
    t->record([vn = v.node(), on = out.node(), start, len] {
      if (!on->grad || !vn->needs) return;
      auto& g = ensure_grad(vn);
      for (Index i = 0; i < len; ++i) g[start + i] += (*on->grad)[i];
    });
  return out;
}

Var rows_lookup(const Var& table, const std::vector<Index>& ids) {
  const Tensord& tv = table.value();
  if (tv.rank() != 2) throw DimensionError("rows_lookup: rank-2 table expected");
  if (ids.empty()) throw DimensionError("rows_lookup: empty id list");
  const Index v_rows = tv.dim(0), d = tv.dim(1);
  for (Index id : ids)
    if (id < 0 || id >= v_rows)
      throw IndexError("rows_lookup: id " + std::to_string(id) + " outside [0," +
                       std::to_string(v_rows) + ")");
  Tensord v({static_cast<Index>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy(tv.data() + ids[i] * d, tv.data() + (ids[i] + 1) * d,
              v.data() + static_cast<Index>(i) * d);
  Tape* t;
  Var out = make_result(std::move(v), {&table}, &t);
  if (t)
    t->record([tn = table.node(), on = out.node(), ids, d] {
      if (!on->grad || !tn->needs) return;
      auto& g = ensure_grad(tn);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* src = on->grad->data() + static_cast<Index>(i) * d;
        double* dst = g.data() + ids[i] * d;
        for (Index j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  return out;
}

Var sparse_combine(const Var& w, const std::vector<std::pair<Index, double>>& feats) {
  const Tensord& wv = w.value();
  if (wv.rank() != 2) throw DimensionError("sparse_combine: rank-2 weights expected");
  const Index f_rows = wv.dim(0), c = wv.dim(1);
  Tensord v({c});
  for (const auto& [id, val] : feats) {
    if (id < 0 || id >= f_rows)
      throw IndexError("sparse_combine: feature id " + std::to_string(id) +
                       " outside [0," + std::to_string(f_rows) + ")");
    const double* src = wv.data() + id * c;
    for (Index j = 0; j < c; ++j) v[j] += val * src[j];
  }
  Tape* t;
  Var out = make_result(std::move(v), {&w}, &t);
  if (t)
    t->record([wn = w.node(), on = out.node(), feats, c] {
      if (!on->grad || !wn->needs) return;
      auto& g = ensure_grad(wn);
      for (const auto& [id, val] : feats) {
        double* dst = g.data() + id * c;
        for (Index j = 0; j < c; ++j) dst[j] += val * (*on->grad)[j];
      }
    });
  return out;
}

Var sum(const Var& x) {
  Tape* t;
  Var out = make_result(Tensord::scalar(x.value().array().sum()), {&x}, &t);
  if (t)
    t->record([xn = x.node(), on = out.node()] {
      if (!on->grad || !xn->needs) return;
      ensure_grad(xn).array() += (*on->grad)[0];
    });
  return out;
}

Var mean_rows(const Var& m) {
  const Tensord& mv = m.value();
  if (mv.rank() != 2) throw DimensionError("mean_rows: rank-2 expected");
  const Index r = mv.dim(0), c = mv.dim(1);
  Tensord v({c});
  v.mat().row(0) = mv.mat().colwise().mean();
  Tape* t;
  Var out = make_result(std::move(v), {&m}, &t);
  if (t)
    t->record([mn = m.node(), on = out.node(), r, c] {
      if (!on->grad || !mn->needs) return;
      auto& g = ensure_grad(mn);
      const double inv = 1.0 / static_cast<double>(r);
      for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) g[i * c + j] += inv * (*on->grad)[j];
    });
  return out;
}

}  // namespace mlnlu
