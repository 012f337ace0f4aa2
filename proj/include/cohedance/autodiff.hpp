// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Graph records every operation applied to its Vars together with a
// backward closure. Calling backward() on a 1x1 Var walks the tape in
// reverse and accumulates gradients. A Graph constructed with
// record=false evaluates values only, which is what inference uses.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace cohedance {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Large negative stand-in for -inf in additive attention masks.
inline constexpr double kMaskedScore = -1e9;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an attention row has no unmasked key.
class FullyMaskedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class S>
class Graph;

template <class S>
struct Var {
  Graph<S>* graph = nullptr;
  int id = -1;

  const Mat<S>& value() const { return graph->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  S scalar() const { return value()(0, 0); }
};

/// Named trainable parameters. Iteration order is the sorted name order,
/// which keeps checkpoints and optimizer state deterministic.
template <class S>
struct ParamStore {
  std::map<std::string, Mat<S>> values;

  Mat<S>& at(const std::string& name) {
    auto it = values.find(name);
    if (it == values.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  const Mat<S>& at(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return values.count(name) != 0; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, m] : values) n += static_cast<std::size_t>(m.size());
    return n;
  }

  template <class T>
  ParamStore<T> cast() const {
    ParamStore<T> out;
    for (const auto& [k, m] : values) out.values[k] = m.template cast<T>();
    return out;
  }
};

template <class S>
class Graph {
 public:
  using Backward = std::function<void(Graph&)>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var<S> constant(Mat<S> v) { return push(std::move(v), {}, false); }

  /// Leaf bound to a named parameter. Repeated lookups of the same name
  /// return the same node so gradients accumulate in one place. When
  /// `trainable` is false the parameter enters as a constant.
  Var<S> param(const ParamStore<S>& store, const std::string& name, bool trainable = true) {
    const auto key = std::make_pair(&store, name);
    auto it = params_.find(key);
    if (it != params_.end()) return Var<S>{this, it->second};
    Var<S> v = push(store.at(name), {}, record_ && trainable);
    params_.emplace(key, v.id);
    if (record_ && trainable) param_order_.emplace_back(&store, name, v.id);
    return v;
  }

  const Mat<S>& value(Var<S> v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }

  /// Gradient of the last backward() target with respect to v. Empty
  /// (zero-size) when v did not influence the target.
  const Mat<S>& grad(Var<S> v) const { return nodes_.at(static_cast<std::size_t>(v.id)).grad; }

  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  Var<S> push(Mat<S> value, Backward backward, bool needs_grad) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = record_ && needs_grad;
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<S>{this, static_cast<int>(nodes_.size() - 1)};
  }

  /// Accumulate `g` into the gradient of node `id` (no-op for constants).
  template <class Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  const Mat<S>& upstream(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  void backward(Var<S> loss) {
    if (!record_) throw std::logic_error("backward() on a non-recording graph");
    if (loss.value().size() != 1) throw ShapeError("backward() needs a scalar target");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    Node& root = nodes_[static_cast<std::size_t>(loss.id)];
    if (!root.needs_grad) return;
    root.grad = Mat<S>::Ones(1, 1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.needs_grad && n.backward && n.grad.size() != 0) n.backward(*this);
    }
  }

  /// Gradients of every trainable parameter of `store` touched by this graph.
  std::map<std::string, Mat<S>> param_grads(const ParamStore<S>& store) const {
    std::map<std::string, Mat<S>> out;
    for (const auto& [s, name, id] : param_order_) {
      if (s != &store) continue;
      const Mat<S>& g = nodes_[static_cast<std::size_t>(id)].grad;
      if (g.size() == 0) {
        out[name] = Mat<S>::Zero(store.at(name).rows(), store.at(name).cols());
      } else {
        out[name] = g;
      }
    }
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    Backward backward;
    bool needs_grad = false;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::map<std::pair<const ParamStore<S>*, std::string>, int> params_;
  std::vector<std::tuple<const ParamStore<S>*, std::string, int>> param_order_;
};

namespace ad {

namespace detail {

template <class S>
bool any_grad(Graph<S>& g, std::initializer_list<Var<S>> vs) {
  if (!g.recording()) return false;
  for (const auto& v : vs)
    if (g.needs_grad(v.id)) return true;
  return false;
}

template <class S>
void same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch");
}

}  // namespace detail

template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimension mismatch");
  Graph<S>& g = *a.graph;
  Mat<S> out = a.value() * b.value();
  const int ia = a.id, ib = b.id;
  return g.push(std::move(out),
                [ia, ib, self = static_cast<int>(g.size())](Graph<S>& gr) {
                  const Mat<S>& up = gr.upstream(self);
                  if (gr.needs_grad(ia)) gr.accumulate(ia, up * gr.value(Var<S>{&gr, ib}).transpose());
                  if (gr.needs_grad(ib)) gr.accumulate(ib, gr.value(Var<S>{&gr, ia}).transpose() * up);
                },
                detail::any_grad(g, {a, b}));
}

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::same_shape(a, b, "add");
  Graph<S>& g = *a.graph;
  const int ia = a.id, ib = b.id;
  return g.push(a.value() + b.value(),
                [ia, ib, self = static_cast<int>(g.size())](Graph<S>& gr) {
                  const Mat<S>& up = gr.upstream(self);
                  gr.accumulate(ia, up);
                  gr.accumulate(ib, up);
                },
                detail::any_grad(g, {a, b}));
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::same_shape(a, b, "sub");
  Graph<S>& g = *a.graph;
  const int ia = a.id, ib = b.id;
  return g.push(a.value() - b.value(),
                [ia, ib, self = static_cast<int>(g.size())](Graph<S>& gr) {
                  const Mat<S>& up = gr.upstream(self);
                  gr.accumulate(ia, up);
                  gr.accumulate(ib, -up);
                },
                detail::any_grad(g, {a, b}));
}

template <class S>
Var<S> scale(Var<S> a, S k) {
  Graph<S>& g = *a.graph;
  const int ia = a.id;
  return g.push(a.value() * k,
                [ia, k, self = static_cast<int>(g.size())](Graph<S>& gr) {
                  gr.accumulate(ia, gr.upstream(self) * k);
                },
                detail::any_grad(g, {a}));
}

/// a + row, with `row` (1 x C) broadcast over every row of `a`.
template <class S>
Var<S> add_row(Var<S> a, Var<S> row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: bias shape");
  Graph<S>& g = *a.graph;
  Mat<S> out = a.value().rowwise() + row.value().row(0);
  const int ia = a.id, ir = row.id;
  return g.push(std::move(out),
                [ia, ir, self = static_cast<int>(g.size())](Graph<S>& gr) {
                  const Mat<S>& up = gr.upstream(self);
                  gr.accumulate(ia, up);
                  if (gr.needs_grad(ir)) gr.accumulate(ir, up.colwise().sum());
                },
                detail::any_grad(g, {a, row}));
}

/// x W + b for x (R x in), W (in x out), b (1 x out).
template <class S>
Var<S> linear(Var<S> x, Var<S> w, Var<S> b) {
  return add_row(matmul(x, w), b);
}

template <class S>
Var<S> hadamard(Var<S> a, Var<S> b) {
  detail::same_shape(a, b, "hadamard");
  Graph<S>& g = *a.graph;
  const int ia = a.id, ib = b.id;
  return g.push(a.value().cwiseProduct(b.value()),
                [ia, ib, self = static_cast<int>(g.size())](Graph<S>& gr) {
                  const Mat<S>& up = gr.upstream(self);
                  if (gr.needs_grad(ia)) gr.accumulate(ia, up.cwiseProduct(gr.value(Var<S>{&gr, ib})));
                  if (gr.needs_grad(ib)) gr.accumulate(ib, up.cwiseProduct(gr.value(Var<S>{&gr, ia})));
                },
                detail::any_grad(g, {a, b}));
}

/// tanh-approximated GELU.
template <class S>
Var<S> gelu(Var<S> x) {
  Graph<S>& g = *x.graph;
  const S c = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
  const S k = static_cast<S>(0.044715);
  const Mat<S>& xv = x.value();
  Mat<S> out(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < xv.size(); ++i) {
    const S v = xv.data()[i];
    out.data()[i] = S(0.5) * v * (S(1) + std::tanh(c * (v + k * v * v * v)));
  }
  const int ix = x.id;
  return g.push(std::move(out),
                [ix, c, k, self = static_cast<int>(g.size())](Graph<S>& gr) {
                  const Mat<S>& up = gr.upstream(self);
                  const Mat<S>& xv2 = gr.value(Var<S>{&gr, ix});
                  Mat<S> d(xv2.rows(), xv2.cols());
                  for (Eigen::Index i = 0; i < xv2.size(); ++i) {
                    const S v = xv2.data()[i];
                    const S t = std::tanh(c * (v + k * v * v * v));
                    const S dt = (S(1) - t * t) * c * (S(1) + S(3) * k * v * v);
                    d.data()[i] = up.data()[i] * (S(0.5) * (S(1) + t) + S(0.5) * v * dt);
                  }
                  gr.accumulate(ix, d);
                },
                detail::any_grad(g, {x}));
}

template <class S>
Var<S> sigmoid(Var<S> x) {
  Graph<S>& g = *x.graph;
  Mat<S> out = x.value().unaryExpr([](S v) {
    return v >= 0 ? S(1) / (S(1) + std::exp(-v)) : std::exp(v) / (S(1) + std::exp(v));
  });
  const int ix = x.id;
  const int self = static_cast<int>(g.size());
  return g.push(std::move(out),
                [ix, self](Graph<S>& gr) {
                  const Mat<S>& y = gr.value(Var<S>{&gr, self});
                  gr.accumulate(ix, gr.upstream(self).cwiseProduct(y.cwiseProduct((S(1) - y.array()).matrix())));
                },
                detail::any_grad(g, {x}));
}

/// Natural log; inputs must be positive.
template <class S>
Var<S> log(Var<S> x) {
  Graph<S>& g = *x.graph;
  const int ix = x.id;
  return g.push(x.value().array().log().matrix(),
                [ix, self = static_cast<int>(g.size())](Graph<S>& gr) {
                  gr.accumulate(ix, gr.upstream(self).cwiseQuotient(gr.value(Var<S>{&gr, ix})));
                },
                detail::any_grad(g, {x}));
}

/// Elementwise clamp to [lo, hi]; gradient passes only inside the range.
template <class S>
Var<S> clamp(Var<S> x, S lo, S hi) {
  Graph<S>& g = *x.graph;
  const int ix = x.id;
  return g.push(x.value().cwiseMax(lo).cwiseMin(hi),
                [ix, lo, hi, self = static_cast<int>(g.size())](Graph<S>& gr) {
                  const Mat<S>& xv = gr.value(Var<S>{&gr, ix});
                  Mat<S> d = gr.upstream(self);
                  for (Eigen::Index i = 0; i < d.size(); ++i)
                    if (xv.data()[i] < lo || xv.data()[i] > hi) d.data()[i] = S(0);
                  gr.accumulate(ix, d);
                },
                detail::any_grad(g, {x}));
}

/// 1 - x, elementwise.
template <class S>
Var<S> one_minus(Var<S> x) {
  Graph<S>& g = *x.graph;
  const int ix = x.id;
  return g.push((S(1) - x.value().array()).matrix(),
                [ix, self = static_cast<int>(g.size())](Graph<S>& gr) {
                  gr.accumulate(ix, -gr.upstream(self));
                },
                detail::any_grad(g, {x}));
}

template <class S>
Var<S> sum(Var<S> x) {
  Graph<S>& g = *x.graph;
  Mat<S> out(1, 1);
  out(0, 0) = x.value().sum();
  const int ix = x.id;
  const Eigen::Index r = x.rows(), c = x.cols();
  return g.push(std::move(out),
                [ix, r, c, self = static_cast<int>(g.size())](Graph<S>& gr) {
                  gr.accumulate(ix, Mat<S>::Constant(r, c, gr.upstream(self)(0, 0)));
                },
                detail::any_grad(g, {x}));
}

template <class S>
Var<S> mean(Var<S> x) {
  return scale(sum(x), S(1) / static_cast<S>(x.value().size()));
}

/// Mean absolute difference, mean(|a - b|). The subgradient at 0 is 0.
template <class S>
Var<S> l1_mean(Var<S> a, Var<S> b) {
  detail::same_shape(a, b, "l1_mean");
  Graph<S>& g = *a.graph;
  const Mat<S> diff = a.value() - b.value();
  Mat<S> out(1, 1);
  out(0, 0) = diff.cwiseAbs().sum() / static_cast<S>(diff.size());
  const int ia = a.id, ib = b.id;
  return g.push(std::move(out),
                [ia, ib, self = static_cast<int>(g.size())](Graph<S>& gr) {
                  const Mat<S> d = gr.value(Var<S>{&gr, ia}) - gr.value(Var<S>{&gr, ib});
                  const S k = gr.upstream(self)(0, 0) / static_cast<S>(d.size());
                  Mat<S> s = d.unaryExpr([k](S v) { return v > 0 ? k : (v < 0 ? -k : S(0)); });
                  gr.accumulate(ia, s);
                  if (gr.needs_grad(ib)) gr.accumulate(ib, -s);
                },
                detail::any_grad(g, {a, b}));
}

/// Row gather: out.row(i) = x.row(idx[i]), or a zero row where idx[i] < 0.
template <class S>
Var<S> gather_rows(Var<S> x, std::vector<int> idx) {
  Graph<S>& g = *x.graph;
  const Mat<S>& xv = x.value();
  Mat<S> out(static_cast<Eigen::Index>(idx.size()), xv.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= xv.rows()) throw ShapeError("gather_rows: index out of range");
    if (idx[i] < 0) {
      out.row(static_cast<Eigen::Index>(i)).setZero();
    } else {
      out.row(static_cast<Eigen::Index>(i)) = xv.row(idx[i]);
    }
  }
  const int ix = x.id;
  const Eigen::Index r = xv.rows(), c = xv.cols();
  return g.push(std::move(out),
                [ix, r, c, idx = std::move(idx), self = static_cast<int>(g.size())](Graph<S>& gr) {
                  const Mat<S>& up = gr.upstream(self);
                  Mat<S> d = Mat<S>::Zero(r, c);
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    if (idx[i] >= 0) d.row(idx[i]) += up.row(static_cast<Eigen::Index>(i));
                  gr.accumulate(ix, d);
                },
                detail::any_grad(g, {x}));
}

template <class S>
Var<S> slice_cols(Var<S> x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > x.cols()) throw ShapeError("slice_cols: out of range");
  Graph<S>& g = *x.graph;
  const int ix = x.id;
  const Eigen::Index r = x.rows(), c = x.cols();
  return g.push(x.value().middleCols(start, count),
                [ix, r, c, start, count, self = static_cast<int>(g.size())](Graph<S>& gr) {
                  Mat<S> d = Mat<S>::Zero(r, c);
                  d.middleCols(start, count) = gr.upstream(self);
                  gr.accumulate(ix, d);
                },
                detail::any_grad(g, {x}));
}

template <class S>
Var<S> transpose(Var<S> x) {
  Graph<S>& g = *x.graph;
  const int ix = x.id;
  return g.push(x.value().transpose(),
                [ix, self = static_cast<int>(g.size())](Graph<S>& gr) {
                  gr.accumulate(ix, gr.upstream(self).transpose());
                },
                detail::any_grad(g, {x}));
}

/// Row-wise layer normalization with learned gain and bias (both 1 x C).
template <class S>
Var<S> layer_norm(Var<S> x, Var<S> gain, Var<S> bias, S eps = S(1e-5)) {
  Graph<S>& g = *x.graph;
  const Mat<S>& xv = x.value();
  const Eigen::Index rows = xv.rows(), cols = xv.cols();
  if (gain.cols() != cols || bias.cols() != cols) throw ShapeError("layer_norm: parameter shape");
  Mat<S> xhat(rows, cols);
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S mu = xv.row(r).mean();
    const S var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = S(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  Mat<S> out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  const int ix = x.id, ig = gain.id, ib = bias.id;
  return g.push(std::move(out),
                [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std),
                 self = static_cast<int>(g.size())](Graph<S>& gr) {
                  const Mat<S>& up = gr.upstream(self);
                  const auto gain_row = gr.value(Var<S>{&gr, ig}).row(0);
                  if (gr.needs_grad(ig)) gr.accumulate(ig, up.cwiseProduct(xhat).colwise().sum());
                  if (gr.needs_grad(ib)) gr.accumulate(ib, up.colwise().sum());
                  if (gr.needs_grad(ix)) {
                    const Eigen::Index n = xhat.cols();
                    Mat<S> dxhat = (up.array().rowwise() * gain_row.array()).matrix();
                    Mat<S> dx(xhat.rows(), n);
                    for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                      const S m1 = dxhat.row(r).mean();
                      const S m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<S>(n);
                      dx.row(r) = inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                    }
                    gr.accumulate(ix, dx);
                  }
                },
                detail::any_grad(g, {x, gain, bias}));
}

/// Scale each row to unit Euclidean norm.
template <class S>
Var<S> l2_normalize_rows(Var<S> x, S eps = S(1e-12)) {
  Graph<S>& g = *x.graph;
  const Mat<S>& xv = x.value();
  Eigen::Matrix<S, Eigen::Dynamic, 1> norms = xv.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) norms(i) = std::max(norms(i), eps);
  Mat<S> y = xv.array().colwise() / norms.array();
  const int ix = x.id;
  const int self = static_cast<int>(g.size());
  return g.push(std::move(y),
                [ix, self, norms = std::move(norms)](Graph<S>& gr) {
                  const Mat<S>& up = gr.upstream(self);
                  const Mat<S>& yv = gr.value(Var<S>{&gr, self});
                  Mat<S> d(up.rows(), up.cols());
                  for (Eigen::Index r = 0; r < up.rows(); ++r) {
                    const S proj = up.row(r).dot(yv.row(r));
                    d.row(r) = (up.row(r) - proj * yv.row(r)) / norms(r);
                  }
                  gr.accumulate(ix, d);
                },
                detail::any_grad(g, {x}));
}

/// Mean over rows i of -log softmax(logits.row(i))[i]. Square logits only.
template <class S>
Var<S> cross_entropy_diagonal(Var<S> logits) {
  if (logits.rows() != logits.cols()) throw ShapeError("cross_entropy_diagonal: square logits required");
  Graph<S>& g = *logits.graph;
  const Mat<S>& z = logits.value();
  const Eigen::Index n = z.rows();
  Mat<S> probs(n, n);
  S loss = 0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const S mx = z.row(r).maxCoeff();
    const auto e = (z.row(r).array() - mx).exp();
    const S denom = e.sum();
    probs.row(r) = e / denom;
    loss += -(z(r, r) - mx - std::log(denom));
  }
  Mat<S> out(1, 1);
  out(0, 0) = loss / static_cast<S>(n);
  const int iz = logits.id;
  return g.push(std::move(out),
                [iz, n, probs = std::move(probs), self = static_cast<int>(g.size())](Graph<S>& gr) {
                  Mat<S> d = probs;
                  for (Eigen::Index r = 0; r < n; ++r) d(r, r) -= S(1);
                  gr.accumulate(iz, d * (gr.upstream(self)(0, 0) / static_cast<S>(n)));
                },
                detail::any_grad(g, {logits}));
}

/// Multi-head scaled dot-product attention over independent row groups.
///
/// q holds `groups` contiguous blocks of Lq rows, k and v hold `groups`
/// blocks of Lk rows; block g of q attends only to block g of k/v. The
/// model dimension C is split evenly over `heads`, and each head's scores
/// are divided by sqrt(C / heads). `mask` is an optional additive Lq x Lk
/// matrix shared by every group and head.
template <class S>
Var<S> attention(Var<S> q, Var<S> k, Var<S> v, int heads, int groups, const Mat<S>* mask = nullptr) {
  const Eigen::Index c = q.cols();
  if (k.cols() != c || v.cols() != c) throw ShapeError("attention: model dimension mismatch");
  if (k.rows() != v.rows()) throw ShapeError("attention: key/value length mismatch");
  if (heads <= 0 || c % heads != 0) throw ShapeError("attention: heads must divide model dimension");
  if (groups <= 0 || q.rows() % groups != 0 || k.rows() % groups != 0)
    throw ShapeError("attention: rows not divisible into groups");
  const Eigen::Index lq = q.rows() / groups, lk = k.rows() / groups, dh = c / heads;
  if (mask != nullptr && (mask->rows() != lq || mask->cols() != lk)) throw ShapeError("attention: mask shape");
  if (lk == 0) throw FullyMaskedError("attention: no keys");

  Graph<S>& g = *q.graph;
  const Mat<S>& qv = q.value();
  const Mat<S>& kv = k.value();
  const Mat<S>& vv = v.value();
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));
  // Per (group, head) probability blocks, kept for the backward pass.
  std::vector<Mat<S>> probs(static_cast<std::size_t>(groups * heads));
  Mat<S> out(q.rows(), c);
  const S masked_floor = static_cast<S>(kMaskedScore / 2);
  for (int gi = 0; gi < groups; ++gi) {
    for (int h = 0; h < heads; ++h) {
      const auto qb = qv.block(gi * lq, h * dh, lq, dh);
      const auto kb = kv.block(gi * lk, h * dh, lk, dh);
      const auto vb = vv.block(gi * lk, h * dh, lk, dh);
      Mat<S> scores = (qb * kb.transpose()) * inv_sqrt;
      if (mask != nullptr) scores += *mask;
      for (Eigen::Index r = 0; r < lq; ++r) {
        const S mx = scores.row(r).maxCoeff();
        if (mask != nullptr && mx < masked_floor)
          throw FullyMaskedError("attention: query row " + std::to_string(r) + " has no unmasked key");
        scores.row(r) = (scores.row(r).array() - mx).exp();
        scores.row(r) /= scores.row(r).sum();
      }
      out.block(gi * lq, h * dh, lq, dh) = scores * vb;
      probs[static_cast<std::size_t>(gi * heads + h)] = std::move(scores);
    }
  }
  const int iq = q.id, ik = k.id, iv = v.id;
  return g.push(
      std::move(out),
      [iq, ik, iv, heads, groups, lq, lk, dh, c, inv_sqrt, probs = std::move(probs),
       self = static_cast<int>(g.size())](Graph<S>& gr) {
        const Mat<S>& up = gr.upstream(self);
        const Mat<S>& qv2 = gr.value(Var<S>{&gr, iq});
        const Mat<S>& kv2 = gr.value(Var<S>{&gr, ik});
        const Mat<S>& vv2 = gr.value(Var<S>{&gr, iv});
        Mat<S> dq = Mat<S>::Zero(qv2.rows(), c);
        Mat<S> dk = Mat<S>::Zero(kv2.rows(), c);
        Mat<S> dv = Mat<S>::Zero(vv2.rows(), c);
        for (int gi = 0; gi < groups; ++gi) {
          for (int h = 0; h < heads; ++h) {
            const Mat<S>& p = probs[static_cast<std::size_t>(gi * heads + h)];
            const auto dout = up.block(gi * lq, h * dh, lq, dh);
            const auto qb = qv2.block(gi * lq, h * dh, lq, dh);
            const auto kb = kv2.block(gi * lk, h * dh, lk, dh);
            const auto vb = vv2.block(gi * lk, h * dh, lk, dh);
            dv.block(gi * lk, h * dh, lk, dh) += p.transpose() * dout;
            Mat<S> dp = dout * vb.transpose();
            // softmax backward: ds = p * (dp - rowsum(dp * p))
            Eigen::Matrix<S, Eigen::Dynamic, 1> rs = dp.cwiseProduct(p).rowwise().sum();
            Mat<S> ds = (p.array() * (dp.array().colwise() - rs.array())).matrix() * inv_sqrt;
            dq.block(gi * lq, h * dh, lq, dh) += ds * kb;
            dk.block(gi * lk, h * dh, lk, dh) += ds.transpose() * qb;
          }
        }
        gr.accumulate(iq, dq);
        gr.accumulate(ik, dk);
        gr.accumulate(iv, dv);
      },
      detail::any_grad(g, {q, k, v}));
}

}  // namespace ad
}  // namespace cohedance
