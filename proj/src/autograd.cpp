#include "recon_ood/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "recon_ood/errors.hpp"

namespace recon_ood {

template <typename T>
const BasicTensor<T>& Var<T>::value() const {
  if (!graph_) throw ContractError("use of an unbound Var");
  return graph_->value(id_);
}

template <typename T>
Var<T> Graph<T>::constant(BasicTensor<T> value) {
  if (!value.all_finite()) throw NumericError("constant contains NaN/Inf");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::param(ParamStore<T>& store, const std::string& name) {
  Parameter<T>& p = store.at(name);
  if (auto it = bound_.find(&p.value); it != bound_.end()) {
    if (!nodes_[it->second].param) throw ContractError("parameter '" + name + "' already bound as frozen");
    return Var<T>(this, it->second);
  }
  Node n;
  n.borrowed = &p.value;
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  bound_.emplace(&p.value, nodes_.size() - 1);
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::frozen(const ParamStore<T>& store, const std::string& name) {
  const Parameter<T>& p = store.at(name);
  if (auto it = bound_.find(&p.value); it != bound_.end()) return Var<T>(this, it->second);
  Node n;
  n.borrowed = &p.value;
  nodes_.push_back(std::move(n));
  bound_.emplace(&p.value, nodes_.size() - 1);
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::record(BasicTensor<T> value, std::vector<std::size_t> parents, BackwardFn backward) {
  if (!value.all_finite()) throw NumericError("operation produced NaN/Inf");
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                [this](std::size_t p) { return nodes_[p].requires_grad; });
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
BasicTensor<T>& Graph<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = BasicTensor<T>(value(id).shape());
  return n.grad;
}

template <typename T>
BasicTensor<T> Graph<T>::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.grad.empty() ? BasicTensor<T>(value(id).shape()) : n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (&loss.graph() != this) throw ContractError("backward: loss belongs to another graph");
  if (loss.value().size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  for (auto& n : nodes_) n.grad = BasicTensor<T>();
  grad_buffer(loss.id()).fill(T{1});
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) {
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      n.param->has_grad = true;
    }
  }
}

namespace {

template <typename T>
void require_same_shape(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + " shape mismatch: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

template <typename T>
void require_matrix(const char* op, const BasicTensor<T>& a) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(a.shape()));
  }
}

template <typename T>
T sigmoid(T x) {
  return x >= T{0} ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
}

// Shared body for unary elementwise ops: f gives the value, df the local
// derivative from (input, output).
template <typename T, typename F, typename DF>
Var<T> unary(Var<T> a, F f, DF df) {
  Graph<T>& g = a.graph();
  const auto& x = a.value();
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  const std::size_t ai = a.id();
  return g.record(std::move(out), {ai}, [ai, df](Graph<T>& g, std::size_t self) {
    if (!g.requires_grad(ai)) return;
    const auto& x = g.value(ai);
    const auto& y = g.value(self);
    const auto& go = g.out_grad(self);
    auto& ga = g.grad_buffer(ai);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += go[i] * df(x[i], y[i]);
  });
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Graph<T>& g = a.graph();
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_string(av.shape()) + " · " +
                         shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  const std::size_t ai = a.id(), bi = b.id();
  return g.record(matmul(av, bv), {ai, bi}, [=](Graph<T>& g, std::size_t self) {
    const auto& go = g.out_grad(self);
    if (g.requires_grad(ai)) {
      // dA = G · Bᵀ
      gemm_accumulate<T>(go.data(), g.value(bi).data(), g.grad_buffer(ai).data(), m, n, k, false, true);
    }
    if (g.requires_grad(bi)) {
      // dB = Aᵀ · G
      gemm_accumulate<T>(g.value(ai).data(), go.data(), g.grad_buffer(bi).data(), k, m, n, true, false);
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Graph<T>& g = a.graph();
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t ai = a.id(), bi = b.id();
  if (av.shape() == bv.shape()) {
    BasicTensor<T> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return g.record(std::move(out), {ai, bi}, [ai, bi](Graph<T>& g, std::size_t self) {
      const auto& go = g.out_grad(self);
      for (std::size_t p : {ai, bi}) {
        if (!g.requires_grad(p)) continue;
        auto& gp = g.grad_buffer(p);
        for (std::size_t i = 0; i < go.size(); ++i) gp[i] += go[i];
      }
    });
  }
  if (bv.rank() == 1 && bv.dim(0) == av.shape().back()) {
    const std::size_t width = bv.dim(0);
    BasicTensor<T> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % width];
    return g.record(std::move(out), {ai, bi}, [ai, bi, width](Graph<T>& g, std::size_t self) {
      const auto& go = g.out_grad(self);
      if (g.requires_grad(ai)) {
        auto& ga = g.grad_buffer(ai);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (g.requires_grad(bi)) {
        auto& gb = g.grad_buffer(bi);
        for (std::size_t i = 0; i < go.size(); ++i) gb[i % width] += go[i];
      }
    });
  }
  throw DimensionError("add shape mismatch: " + shape_string(av.shape()) + " vs " +
                       shape_string(bv.shape()));
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Graph<T>& g = a.graph();
  require_same_shape("sub", a.value(), b.value());
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return g.record(std::move(out), {ai, bi}, [ai, bi](Graph<T>& g, std::size_t self) {
    const auto& go = g.out_grad(self);
    if (g.requires_grad(ai)) {
      auto& ga = g.grad_buffer(ai);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (g.requires_grad(bi)) {
      auto& gb = g.grad_buffer(bi);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Graph<T>& g = a.graph();
  require_same_shape("mul", a.value(), b.value());
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return g.record(std::move(out), {ai, bi}, [ai, bi](Graph<T>& g, std::size_t self) {
    const auto& go = g.out_grad(self);
    if (g.requires_grad(ai)) {
      auto& ga = g.grad_buffer(ai);
      const auto& bv = g.value(bi);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (g.requires_grad(bi)) {
      auto& gb = g.grad_buffer(bi);
      const auto& av = g.value(ai);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

template <typename T>
Var<T> silu(Var<T> a) {
  return unary<T>(
      a, [](T x) { return x * sigmoid(x); },
      [](T x, T) {
        const T s = sigmoid(x);
        return s * (T{1} + x * (T{1} - s));
      });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  return unary<T>(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> exp(Var<T> a) {
  return unary<T>(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> elementwise(ElementwiseOp op, Var<T> a, std::optional<Var<T>> b) {
  const bool binary = op == ElementwiseOp::add || op == ElementwiseOp::sub || op == ElementwiseOp::mul;
  if (binary && !b) throw ContractError("binary elementwise op requires two operands");
  switch (op) {
    case ElementwiseOp::add: return add(a, *b);
    case ElementwiseOp::sub: return sub(a, *b);
    case ElementwiseOp::mul: return mul(a, *b);
    case ElementwiseOp::silu: return silu(a);
    case ElementwiseOp::tanh: return tanh(a);
  }
  throw ContractError("unknown elementwise op");
}

template <typename T>
Var<T> scale(Var<T> a, double factor) {
  const T f = static_cast<T>(factor);
  return unary<T>(
      a, [f](T x) { return f * x; }, [f](T, T) { return f; });
}

template <typename T>
Var<T> scale_by(Var<T> a, Var<T> s) {
  Graph<T>& g = a.graph();
  if (s.value().size() != 1) {
    throw DimensionError("scale_by expects a one-element factor, got " + shape_string(s.shape()));
  }
  const T f = s.value()[0];
  BasicTensor<T> out = a.value();
  for (auto& v : out.data()) v *= f;
  const std::size_t ai = a.id(), si = s.id();
  return g.record(std::move(out), {ai, si}, [ai, si](Graph<T>& g, std::size_t self) {
    const auto& go = g.out_grad(self);
    const auto& av = g.value(ai);
    if (g.requires_grad(ai)) {
      const T f = g.value(si)[0];
      auto& ga = g.grad_buffer(ai);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * f;
    }
    if (g.requires_grad(si)) {
      T acc{0};
      for (std::size_t i = 0; i < go.size(); ++i) acc += go[i] * av[i];
      g.grad_buffer(si)[0] += acc;
    }
  });
}

template <typename T>
Var<T> clamp(Var<T> a, double lo, double hi) {
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  return unary<T>(
      a, [l, h](T x) { return std::clamp(x, l, h); },
      [l, h](T x, T) { return (x > l && x < h) ? T{1} : T{0}; });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  Graph<T>& g = a.graph();
  const auto& av = a.value();
  require_matrix("transpose", av);
  const std::size_t r = av.dim(0), c = av.dim(1);
  BasicTensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  const std::size_t ai = a.id();
  return g.record(std::move(out), {ai}, [ai, r, c](Graph<T>& g, std::size_t self) {
    const auto& go = g.out_grad(self);
    auto& ga = g.grad_buffer(ai);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += go[j * r + i];
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols of nothing");
  Graph<T>& g = parts.front().graph();
  const std::size_t rows = parts.front().value().rows();
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    require_matrix("concat_cols", v);
    if (v.dim(0) != rows) {
      throw DimensionError("concat_cols row mismatch: " + shape_string(parts.front().shape()) + " vs " +
                           shape_string(v.shape()));
    }
    widths.push_back(v.dim(1));
    ids.push_back(p.id());
    total += v.dim(1);
  }
  BasicTensor<T> out({rows, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data().begin() + r * widths[k], widths[k], out.data().begin() + r * total + offset);
    offset += widths[k];
  }
  return g.record(std::move(out), ids, [ids, widths, rows, total](Graph<T>& g, std::size_t self) {
    const auto& go = g.out_grad(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (g.requires_grad(ids[k])) {
        auto& gp = g.grad_buffer(ids[k]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) gp[r * widths[k] + c] += go[r * total + offset + c];
      }
      offset += widths[k];
    }
  });
}

template <typename T>
Var<T> normalize_rows(Var<T> a) {
  Graph<T>& g = a.graph();
  const auto& av = a.value();
  require_matrix("normalize_rows", av);
  const std::size_t r = av.dim(0), c = av.dim(1);
  BasicTensor<T> out({r, c});
  std::vector<T> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < c; ++j) ss += double(av[i * c + j]) * av[i * c + j];
    const T n = static_cast<T>(std::max(std::sqrt(ss), 1e-12));
    norms[i] = n;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = av[i * c + j] / n;
  }
  const std::size_t ai = a.id();
  return g.record(std::move(out), {ai}, [ai, r, c, norms](Graph<T>& g, std::size_t self) {
    const auto& go = g.out_grad(self);
    const auto& y = g.value(self);
    auto& ga = g.grad_buffer(ai);
    for (std::size_t i = 0; i < r; ++i) {
      T dot{0};
      for (std::size_t j = 0; j < c; ++j) dot += go[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        ga[i * c + j] += (go[i * c + j] - y[i * c + j] * dot) / norms[i];
    }
  });
}

template <typename T>
Var<T> log_softmax_rows(Var<T> a) {
  Graph<T>& g = a.graph();
  const auto& av = a.value();
  require_matrix("log_softmax_rows", av);
  const std::size_t r = av.dim(0), c = av.dim(1);
  BasicTensor<T> out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = av.data().data() + i * c;
    const T mx = *std::max_element(row, row + c);
    T se{0};
    for (std::size_t j = 0; j < c; ++j) se += std::exp(row[j] - mx);
    const T lse = mx + std::log(se);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
  }
  const std::size_t ai = a.id();
  return g.record(std::move(out), {ai}, [ai, r, c](Graph<T>& g, std::size_t self) {
    const auto& go = g.out_grad(self);
    const auto& y = g.value(self);
    auto& ga = g.grad_buffer(ai);
    for (std::size_t i = 0; i < r; ++i) {
      T gs{0};
      for (std::size_t j = 0; j < c; ++j) gs += go[i * c + j];
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += go[i * c + j] - std::exp(y[i * c + j]) * gs;
    }
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  Graph<T>& g = a.graph();
  double acc = 0.0;
  for (T v : a.value().data()) acc += v;
  const std::size_t ai = a.id();
  return g.record(BasicTensor<T>::scalar(static_cast<T>(acc)), {ai}, [ai](Graph<T>& g, std::size_t self) {
    const T go = g.out_grad(self)[0];
    for (auto& v : g.grad_buffer(ai).data()) v += go;
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

template <typename T>
Var<T> mse_loss(Var<T> pred, Var<T> target) {
  Graph<T>& g = pred.graph();
  require_same_shape("mse_loss", pred.value(), target.value());
  const double loss = mse(pred.value(), target.value());
  const std::size_t pi = pred.id(), ti = target.id();
  return g.record(BasicTensor<T>::scalar(static_cast<T>(loss)), {pi, ti}, [pi, ti](Graph<T>& g, std::size_t self) {
    const T go = g.out_grad(self)[0];
    const auto& p = g.value(pi);
    const auto& t = g.value(ti);
    const T k = T{2} * go / static_cast<T>(p.size());
    if (g.requires_grad(pi)) {
      auto& gp = g.grad_buffer(pi);
      for (std::size_t i = 0; i < p.size(); ++i) gp[i] += k * (p[i] - t[i]);
    }
    if (g.requires_grad(ti)) {
      auto& gt = g.grad_buffer(ti);
      for (std::size_t i = 0; i < p.size(); ++i) gt[i] -= k * (p[i] - t[i]);
    }
  });
}

template <typename T>
double mse(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  require_same_shape("mse", pred, target);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = double(pred[i]) - double(target[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

#define RECON_OOD_INSTANTIATE(T)                                                \
  template class Var<T>;                                                        \
  template class Graph<T>;                                                      \
  template Var<T> matmul(Var<T>, Var<T>);                                       \
  template Var<T> add(Var<T>, Var<T>);                                          \
  template Var<T> sub(Var<T>, Var<T>);                                          \
  template Var<T> mul(Var<T>, Var<T>);                                          \
  template Var<T> silu(Var<T>);                                                 \
  template Var<T> tanh(Var<T>);                                                 \
  template Var<T> exp(Var<T>);                                                  \
  template Var<T> elementwise(ElementwiseOp, Var<T>, std::optional<Var<T>>);   \
  template Var<T> scale(Var<T>, double);                                        \
  template Var<T> scale_by(Var<T>, Var<T>);                                     \
  template Var<T> clamp(Var<T>, double, double);                                \
  template Var<T> transpose(Var<T>);                                            \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                      \
  template Var<T> normalize_rows(Var<T>);                                       \
  template Var<T> log_softmax_rows(Var<T>);                                     \
  template Var<T> sum(Var<T>);                                                  \
  template Var<T> mean(Var<T>);                                                 \
  template Var<T> mse_loss(Var<T>, Var<T>);                                     \
  template double mse(const BasicTensor<T>&, const BasicTensor<T>&);

RECON_OOD_INSTANTIATE(float)
RECON_OOD_INSTANTIATE(double)

#undef RECON_OOD_INSTANTIATE

}  // namespace recon_ood
