#include "stf/tensor.hpp"

#include <cmath>
#include <cstring>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace stf {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// C += A . B with A [m x k], B [k x n]. ikj order streams B and C rows.
void mm_nn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C += A . B^T with A [m x k], B [n x k].
void mm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// C += A^T . B with A [k x m], B [k x n].
void mm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const double* ap = a + static_cast<size_t>(p) * m;
    const double* bp = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void acc(double* dst, const double* src, int n) {
  for (int i = 0; i < n; ++i) dst[i] += src[i];
}

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

int numel(const Shape& shape) {
  int n = 1;
  for (int e : shape) {
    if (e <= 0) fail("tensor: non-positive extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// ParamStore

Parameter& ParamStore::create(const std::string& name, Shape shape, int fan_in, Rng& rng) {
  if (params_.count(name)) fail("param store: duplicate parameter '" + name + "'");
  Parameter p;
  p.name = name;
  p.shape = std::move(shape);
  const int n = numel(p.shape);
  const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
  p.value.resize(n);
  for (double& v : p.value) v = rng.uniform_signed(limit);
  p.grad.assign(n, 0.0);
  return params_.emplace(name, std::move(p)).first->second;
}

Parameter& ParamStore::create_const(const std::string& name, Shape shape, double fill) {
  if (params_.count(name)) fail("param store: duplicate parameter '" + name + "'");
  Parameter p;
  p.name = name;
  p.shape = std::move(shape);
  const int n = numel(p.shape);
  p.value.assign(n, fill);
  p.grad.assign(n, 0.0);
  return params_.emplace(name, std::move(p)).first->second;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) fail("param store: unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) fail("param store: unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Tensor accessors

const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
int Tensor::size() const { return tape_->node(id_).n; }
const double* Tensor::data() const { return tape_->node(id_).value; }

std::vector<double> Tensor::values() const {
  const double* v = data();
  return std::vector<double>(v, v + size());
}

double Tensor::scalar() const {
  if (size() != 1) fail("tensor: scalar() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

bool Tensor::requires_grad() const { return tape_->node(id_).requires_grad; }

// ---------------------------------------------------------------------------
// Tape

void Tape::check_mine(Tensor t) const {
  if (t.tape_ != this) fail("tape: tensor belongs to a different tape");
}

int Tape::new_node(Shape shape, std::vector<double> values, bool requires_grad) {
  Node nd;
  nd.shape = std::move(shape);
  nd.n = numel(nd.shape);
  if (static_cast<int>(values.size()) != nd.n)
    fail("tensor: value count " + std::to_string(values.size()) + " does not match shape " +
         shape_str(nd.shape));
  nd.value_store = std::move(values);
  nd.value = nd.value_store.data();
  nd.requires_grad = requires_grad && record_;
  nodes_.push_back(std::move(nd));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(this, new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tape::constant(Shape shape, std::vector<double> values) {
  return leaf(std::move(shape), std::move(values), false);
}

Tensor Tape::param(Parameter& p) {
  Node nd;
  nd.shape = p.shape;
  nd.n = p.size();
  nd.value = p.value.data();
  nd.external_grad = p.grad.data();
  nd.requires_grad = record_;
  nodes_.push_back(std::move(nd));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::frozen(const Parameter& p) {
  Node nd;
  nd.shape = p.shape;
  nd.n = p.size();
  nd.value = p.value.data();
  nd.requires_grad = false;
  nodes_.push_back(std::move(nd));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::add(Tensor a, Tensor b) {
  check_mine(a);
  check_mine(b);
  if (a.shape() != b.shape())
    fail("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int n = a.size();
  std::vector<double> out(n);
  const double* av = a.data();
  const double* bv = b.data();
  for (int i = 0; i < n; ++i) out[i] = av[i] + bv[i];
  const bool ra = want_grad(a), rb = want_grad(b);
  int id = new_node(a.shape(), std::move(out), ra || rb);
  if (nodes_[id].requires_grad) {
    const int aid = a.id_, bid = b.id_, oid = id;
    nodes_[id].backprop = [=](AdjBuf& adj) {
      if (ra) acc(adj[aid].data(), adj[oid].data(), n);
      if (rb) acc(adj[bid].data(), adj[oid].data(), n);
    };
  }
  return Tensor(this, id);
}

Tensor Tape::add_rowvec(Tensor a, Tensor v) {
  check_mine(a);
  check_mine(v);
  if (a.shape().size() != 2 || v.shape().size() != 1 || v.shape()[0] != a.shape()[1])
    fail("add_rowvec: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(v.shape()));
  const int m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(a.size());
  const double* av = a.data();
  const double* vv = v.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] + vv[j];
  const bool ra = want_grad(a), rv = want_grad(v);
  int id = new_node(a.shape(), std::move(out), ra || rv);
  if (nodes_[id].requires_grad) {
    const int aid = a.id_, vid = v.id_, oid = id;
    nodes_[id].backprop = [=](AdjBuf& adj) {
      const double* g = adj[oid].data();
      if (ra) acc(adj[aid].data(), g, m * n);
      if (rv) {
        double* dv = adj[vid].data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) dv[j] += g[i * n + j];
      }
    };
  }
  return Tensor(this, id);
}

Tensor Tape::scale(Tensor a, double c) {
  check_mine(a);
  const int n = a.size();
  std::vector<double> out(n);
  const double* av = a.data();
  for (int i = 0; i < n; ++i) out[i] = av[i] * c;
  int id = new_node(a.shape(), std::move(out), want_grad(a));
  if (nodes_[id].requires_grad) {
    const int aid = a.id_, oid = id;
    nodes_[id].backprop = [=](AdjBuf& adj) {
      const double* g = adj[oid].data();
      double* da = adj[aid].data();
      for (int i = 0; i < n; ++i) da[i] += c * g[i];
    };
  }
  return Tensor(this, id);
}

Tensor Tape::concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat_rows: empty input");
  int cols = -1, rows = 0;
  bool any_grad = false;
  for (Tensor t : parts) {
    check_mine(t);
    if (t.shape().size() != 2) fail("concat_rows: rank-2 tensors required");
    if (cols < 0) cols = t.shape()[1];
    if (t.shape()[1] != cols)
      fail("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " +
           shape_str(t.shape()));
    rows += t.shape()[0];
    any_grad |= want_grad(t);
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(rows) * cols);
  for (Tensor t : parts) out.insert(out.end(), t.data(), t.data() + t.size());
  int id = new_node({rows, cols}, std::move(out), any_grad);
  if (nodes_[id].requires_grad) {
    struct Piece {
      int id;
      int offset;
      int n;
      bool grad;
    };
    std::vector<Piece> pieces;
    int off = 0;
    for (Tensor t : parts) {
      pieces.push_back({t.id_, off, t.size(), want_grad(t)});
      off += t.size();
    }
    const int oid = id;
    nodes_[id].backprop = [pieces, oid](AdjBuf& adj) {
      const double* g = adj[oid].data();
      for (const Piece& p : pieces)
        if (p.grad) acc(adj[p.id].data(), g + p.offset, p.n);
    };
  }
  return Tensor(this, id);
}

Tensor Tape::concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat_cols: empty input");
  int rows = -1, cols = 0;
  bool any_grad = false;
  for (Tensor t : parts) {
    check_mine(t);
    if (t.shape().size() != 2) fail("concat_cols: rank-2 tensors required");
    if (rows < 0) rows = t.shape()[0];
    if (t.shape()[0] != rows)
      fail("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
           shape_str(t.shape()));
    cols += t.shape()[1];
    any_grad |= want_grad(t);
  }
  std::vector<double> out(static_cast<size_t>(rows) * cols);
  int coff = 0;
  for (Tensor t : parts) {
    const int tc = t.shape()[1];
    const double* tv = t.data();
    for (int i = 0; i < rows; ++i)
      std::memcpy(&out[static_cast<size_t>(i) * cols + coff], tv + static_cast<size_t>(i) * tc,
                  sizeof(double) * tc);
    coff += tc;
  }
  int id = new_node({rows, cols}, std::move(out), any_grad);
  if (nodes_[id].requires_grad) {
    struct Piece {
      int id;
      int coff;
      int tc;
      bool grad;
    };
    std::vector<Piece> pieces;
    coff = 0;
    for (Tensor t : parts) {
      pieces.push_back({t.id_, coff, t.shape()[1], want_grad(t)});
      coff += t.shape()[1];
    }
    const int oid = id, R = rows, C = cols;
    nodes_[id].backprop = [pieces, oid, R, C](AdjBuf& adj) {
      const double* g = adj[oid].data();
      for (const Piece& p : pieces) {
        if (!p.grad) continue;
        double* dst = adj[p.id].data();
        for (int i = 0; i < R; ++i)
          for (int j = 0; j < p.tc; ++j)
            dst[static_cast<size_t>(i) * p.tc + j] += g[static_cast<size_t>(i) * C + p.coff + j];
      }
    };
  }
  return Tensor(this, id);
}

Tensor Tape::slice_rows(Tensor a, int start, int count) {
  check_mine(a);
  if (a.shape().size() != 2) fail("slice_rows: rank-2 tensor required");
  const int m = a.shape()[0], n = a.shape()[1];
  if (start < 0 || count <= 0 || start + count > m)
    fail("slice_rows: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
         ") out of bounds for " + shape_str(a.shape()));
  std::vector<double> out(a.data() + static_cast<size_t>(start) * n,
                          a.data() + static_cast<size_t>(start + count) * n);
  int id = new_node({count, n}, std::move(out), want_grad(a));
  if (nodes_[id].requires_grad) {
    const int aid = a.id_, oid = id;
    nodes_[id].backprop = [=](AdjBuf& adj) {
      acc(adj[aid].data() + static_cast<size_t>(start) * n, adj[oid].data(), count * n);
    };
  }
  return Tensor(this, id);
}

Tensor Tape::slice_cols(Tensor a, int start, int count) {
  check_mine(a);
  if (a.shape().size() != 2) fail("slice_cols: rank-2 tensor required");
  const int m = a.shape()[0], n = a.shape()[1];
  if (start < 0 || count <= 0 || start + count > n)
    fail("slice_cols: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
         ") out of bounds for " + shape_str(a.shape()));
  std::vector<double> out(static_cast<size_t>(m) * count);
  const double* av = a.data();
  for (int i = 0; i < m; ++i)
    std::memcpy(&out[static_cast<size_t>(i) * count], av + static_cast<size_t>(i) * n + start,
                sizeof(double) * count);
  int id = new_node({m, count}, std::move(out), want_grad(a));
  if (nodes_[id].requires_grad) {
    const int aid = a.id_, oid = id;
    nodes_[id].backprop = [=](AdjBuf& adj) {
      const double* g = adj[oid].data();
      double* da = adj[aid].data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < count; ++j)
          da[static_cast<size_t>(i) * n + start + j] += g[static_cast<size_t>(i) * count + j];
    };
  }
  return Tensor(this, id);
}

Tensor Tape::sum_all(Tensor a) {
  check_mine(a);
  const int n = a.size();
  double s = 0.0;
  const double* av = a.data();
  for (int i = 0; i < n; ++i) s += av[i];
  int id = new_node({1}, {s}, want_grad(a));
  if (nodes_[id].requires_grad) {
    const int aid = a.id_, oid = id;
    nodes_[id].backprop = [=](AdjBuf& adj) {
      const double g = adj[oid][0];
      double* da = adj[aid].data();
      for (int i = 0; i < n; ++i) da[i] += g;
    };
  }
  return Tensor(this, id);
}

Tensor Tape::matmul(Tensor a, Tensor b) {
  check_mine(a);
  check_mine(b);
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    fail("matmul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  mm_nn_acc(a.data(), b.data(), out.data(), m, k, n);
  const bool ra = want_grad(a), rb = want_grad(b);
  int id = new_node({m, n}, std::move(out), ra || rb);
  if (nodes_[id].requires_grad) {
    const int aid = a.id_, bid = b.id_, oid = id;
    const double* av = node(aid).value;
    const double* bv = node(bid).value;
    nodes_[id].backprop = [=](AdjBuf& adj) {
      const double* g = adj[oid].data();
      if (ra) mm_nt_acc(g, bv, adj[aid].data(), m, n, k);  // dA += g . B^T
      if (rb) mm_tn_acc(av, g, adj[bid].data(), k, m, n);  // dB += A^T . g
    };
  }
  return Tensor(this, id);
}

Tensor Tape::matmul_nt(Tensor a, Tensor b) {
  check_mine(a);
  check_mine(b);
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[1])
    fail("matmul_nt: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  mm_nt_acc(a.data(), b.data(), out.data(), m, k, n);
  const bool ra = want_grad(a), rb = want_grad(b);
  int id = new_node({m, n}, std::move(out), ra || rb);
  if (nodes_[id].requires_grad) {
    const int aid = a.id_, bid = b.id_, oid = id;
    const double* av = node(aid).value;
    const double* bv = node(bid).value;
    nodes_[id].backprop = [=](AdjBuf& adj) {
      const double* g = adj[oid].data();
      if (ra) mm_nn_acc(g, bv, adj[aid].data(), m, n, k);  // dA += g . B
      if (rb) mm_tn_acc(g, av, adj[bid].data(), n, m, k);  // dB += g^T . A
    };
  }
  return Tensor(this, id);
}

Tensor Tape::softmax(Tensor a, double temperature) {
  check_mine(a);
  if (!(temperature > 0.0)) fail("softmax: temperature must be > 0");
  if (a.shape().empty()) fail("softmax: rank >= 1 required");
  const int v = a.shape().back();
  const int rows = a.size() / v;
  const double* av = a.data();
  for (int i = 0; i < a.size(); ++i)
    if (!std::isfinite(av[i])) fail("softmax: non-finite input");
  std::vector<double> out(a.size());
  for (int r = 0; r < rows; ++r) {
    const double* x = av + static_cast<size_t>(r) * v;
    double* y = out.data() + static_cast<size_t>(r) * v;
    double mx = x[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (int j = 0; j < v; ++j) {
      y[j] = std::exp((x[j] - mx) / temperature);
      s += y[j];
    }
    const double inv = 1.0 / s;
    for (int j = 0; j < v; ++j) y[j] *= inv;
  }
  int id = new_node(a.shape(), std::move(out), want_grad(a));
  if (nodes_[id].requires_grad) {
    const int aid = a.id_, oid = id;
    const double* yv = node(id).value;
    const double inv_t = 1.0 / temperature;
    nodes_[id].backprop = [=](AdjBuf& adj) {
      const double* g = adj[oid].data();
      double* da = adj[aid].data();
      for (int r = 0; r < rows; ++r) {
        const double* y = yv + static_cast<size_t>(r) * v;
        const double* gr = g + static_cast<size_t>(r) * v;
        double dot = 0.0;
        for (int j = 0; j < v; ++j) dot += gr[j] * y[j];
        double* d = da + static_cast<size_t>(r) * v;
        for (int j = 0; j < v; ++j) d[j] += (gr[j] - dot) * y[j] * inv_t;
      }
    };
  }
  return Tensor(this, id);
}

Tensor Tape::cross_entropy(Tensor logits, const std::vector<int>& targets) {
  check_mine(logits);
  if (logits.shape().size() != 2) fail("cross_entropy: rank-2 logits required");
  const int rows = logits.shape()[0], v = logits.shape()[1];
  if (static_cast<int>(targets.size()) != rows)
    fail("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
         std::to_string(rows) + " logit rows");
  for (int t : targets)
    if (t < 0 || t >= v)
      fail("cross_entropy: target id " + std::to_string(t) + " out of range [0, " +
           std::to_string(v) + ")");
  const double* lv = logits.data();
  // Save softmax probabilities for the backward pass.
  std::vector<double> probs(logits.size());
  double loss = 0.0;
  for (int r = 0; r < rows; ++r) {
    const double* x = lv + static_cast<size_t>(r) * v;
    double* p = probs.data() + static_cast<size_t>(r) * v;
    double mx = x[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (int j = 0; j < v; ++j) {
      p[j] = std::exp(x[j] - mx);
      s += p[j];
    }
    const double inv = 1.0 / s;
    for (int j = 0; j < v; ++j) p[j] *= inv;
    loss += mx + std::log(s) - x[targets[r]];
  }
  loss /= rows;
  int id = new_node({1}, {loss}, want_grad(logits));
  if (nodes_[id].requires_grad) {
    const int lid = logits.id_, oid = id;
    auto saved = std::make_shared<std::vector<double>>(std::move(probs));
    auto tgt = std::make_shared<std::vector<int>>(targets);
    nodes_[id].backprop = [=](AdjBuf& adj) {
      const double g = adj[oid][0] / rows;
      double* dl = adj[lid].data();
      const double* p = saved->data();
      for (int r = 0; r < rows; ++r) {
        double* d = dl + static_cast<size_t>(r) * v;
        const double* pr = p + static_cast<size_t>(r) * v;
        for (int j = 0; j < v; ++j) d[j] += g * pr[j];
        d[(*tgt)[r]] -= g;
      }
    };
  }
  return Tensor(this, id);
}

Tensor Tape::layer_norm(Tensor x, Tensor gain, Tensor bias) {
  check_mine(x);
  check_mine(gain);
  check_mine(bias);
  if (x.shape().size() != 2) fail("layer_norm: rank-2 input required");
  const int m = x.shape()[0], d = x.shape()[1];
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    fail("layer_norm: affine shapes " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
         " do not match feature dim " + std::to_string(d));
  constexpr double kEps = 1e-5;
  const double* xv = x.data();
  const double* gv = gain.data();
  const double* bv = bias.data();
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(m);
  for (int i = 0; i < m; ++i) {
    const double* xi = xv + static_cast<size_t>(i) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xi[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= d;
    const double inv = 1.0 / std::sqrt(var + kEps);
    inv_std[i] = inv;
    for (int j = 0; j < d; ++j) {
      const double h = (xi[j] - mu) * inv;
      xhat[static_cast<size_t>(i) * d + j] = h;
      out[static_cast<size_t>(i) * d + j] = h * gv[j] + bv[j];
    }
  }
  const bool rx = want_grad(x), rg = want_grad(gain), rb = want_grad(bias);
  int id = new_node(x.shape(), std::move(out), rx || rg || rb);
  if (nodes_[id].requires_grad) {
    const int xid = x.id_, gid = gain.id_, bid = bias.id_, oid = id;
    auto sh = std::make_shared<std::vector<double>>(std::move(xhat));
    auto si = std::make_shared<std::vector<double>>(std::move(inv_std));
    nodes_[id].backprop = [=](AdjBuf& adj) {
      const double* g = adj[oid].data();
      for (int i = 0; i < m; ++i) {
        const double* gi = g + static_cast<size_t>(i) * d;
        const double* hi = sh->data() + static_cast<size_t>(i) * d;
        if (rg || rb) {
          for (int j = 0; j < d; ++j) {
            if (rg) adj[gid][j] += gi[j] * hi[j];
            if (rb) adj[bid][j] += gi[j];
          }
        }
        if (rx) {
          // dxhat = g * gain; dx = inv/d * (d*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
          double s1 = 0.0, s2 = 0.0;
          for (int j = 0; j < d; ++j) {
            const double dh = gi[j] * gv[j];
            s1 += dh;
            s2 += dh * hi[j];
          }
          double* dx = adj[xid].data() + static_cast<size_t>(i) * d;
          const double inv = (*si)[i];
          for (int j = 0; j < d; ++j) {
            const double dh = gi[j] * gv[j];
            dx[j] += inv * (dh - (s1 + hi[j] * s2) / d);
          }
        }
      }
    };
  }
  return Tensor(this, id);
}

Tensor Tape::gelu(Tensor x) {
  check_mine(x);
  const int n = x.size();
  const double* xv = x.data();
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * kInvSqrt2));
  int id = new_node(x.shape(), std::move(out), want_grad(x));
  if (nodes_[id].requires_grad) {
    const int xid = x.id_, oid = id;
    nodes_[id].backprop = [=](AdjBuf& adj) {
      const double* g = adj[oid].data();
      double* dx = adj[xid].data();
      for (int i = 0; i < n; ++i) {
        const double v = xv[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        dx[i] += g[i] * (cdf + v * pdf);
      }
    };
  }
  return Tensor(this, id);
}

Tensor Tape::dropout(Tensor a, double rate, uint64_t seed) {
  check_mine(a);
  if (rate < 0.0 || rate >= 1.0) fail("dropout: rate must be in [0, 1)");
  const int n = a.size();
  const double* av = a.data();
  std::vector<double> out(n);
  auto mask = std::make_shared<std::vector<double>>(n);
  Rng rng(seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (int i = 0; i < n; ++i) {
    const double m = (rng.uniform() < rate) ? 0.0 : keep_scale;
    (*mask)[i] = m;
    out[i] = av[i] * m;
  }
  int id = new_node(a.shape(), std::move(out), want_grad(a));
  if (nodes_[id].requires_grad) {
    const int aid = a.id_, oid = id;
    nodes_[id].backprop = [=](AdjBuf& adj) {
      const double* g = adj[oid].data();
      double* da = adj[aid].data();
      for (int i = 0; i < n; ++i) da[i] += g[i] * (*mask)[i];
    };
  }
  return Tensor(this, id);
}

Tensor Tape::embedding_lookup(const std::vector<int>& ids, Tensor table) {
  check_mine(table);
  if (table.shape().size() != 2) fail("embedding_lookup: rank-2 table required");
  const int v = table.shape()[0], d = table.shape()[1];
  const int L = static_cast<int>(ids.size());
  if (L == 0) fail("embedding_lookup: empty id list");
  for (int t : ids)
    if (t < 0 || t >= v)
      fail("embedding_lookup: id " + std::to_string(t) + " out of range [0, " + std::to_string(v) +
           ")");
  std::vector<double> out(static_cast<size_t>(L) * d);
  const double* tv = table.data();
  for (int i = 0; i < L; ++i)
    std::memcpy(&out[static_cast<size_t>(i) * d], tv + static_cast<size_t>(ids[i]) * d,
                sizeof(double) * d);
  int id = new_node({L, d}, std::move(out), want_grad(table));
  if (nodes_[id].requires_grad) {
    const int tid = table.id_, oid = id;
    auto saved = std::make_shared<std::vector<int>>(ids);
    nodes_[id].backprop = [=](AdjBuf& adj) {
      const double* g = adj[oid].data();
      double* dt = adj[tid].data();
      for (int i = 0; i < L; ++i)
        acc(dt + static_cast<size_t>((*saved)[i]) * d, g + static_cast<size_t>(i) * d, d);
    };
  }
  return Tensor(this, id);
}

Tensor Tape::embedding_mix(Tensor dist, Tensor table) {
  check_mine(dist);
  check_mine(table);
  if (dist.shape().size() != 2 || table.shape().size() != 2 ||
      dist.shape()[1] != table.shape()[0])
    fail("embedding_mix: shape mismatch " + shape_str(dist.shape()) + " vs " +
         shape_str(table.shape()));
  const int L = dist.shape()[0], v = dist.shape()[1], d = table.shape()[1];
  const double* dv = dist.data();
  for (int i = 0; i < L; ++i) {
    double s = 0.0;
    for (int j = 0; j < v; ++j) s += dv[static_cast<size_t>(i) * v + j];
    if (std::abs(s - 1.0) > 1e-6)
      fail("embedding_mix: distribution row " + std::to_string(i) + " sums to " +
           std::to_string(s) + ", not 1");
  }
  std::vector<double> out(static_cast<size_t>(L) * d, 0.0);
  mm_nn_acc(dv, table.data(), out.data(), L, v, d);
  const bool rd = want_grad(dist), rt = want_grad(table);
  int id = new_node({L, d}, std::move(out), rd || rt);
  if (nodes_[id].requires_grad) {
    const int did = dist.id_, tid = table.id_, oid = id;
    const double* dval = node(did).value;
    const double* tval = node(tid).value;
    nodes_[id].backprop = [=](AdjBuf& adj) {
      const double* g = adj[oid].data();
      if (rd) mm_nt_acc(g, tval, adj[did].data(), L, d, v);  // dDist += g . table^T
      if (rt) mm_tn_acc(dval, g, adj[tid].data(), v, L, d);  // dTable += dist^T . g
    };
  }
  return Tensor(this, id);
}

void Tape::backward(Tensor loss) {
  check_mine(loss);
  if (loss.size() != 1)
    fail("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!node(loss.id_).requires_grad) return;  // nothing reachable requires grad

  const int last = loss.id_;
  AdjBuf adj(last + 1);
  for (int i = 0; i <= last; ++i)
    if (nodes_[i].requires_grad) adj[i].assign(nodes_[i].n, 0.0);
  adj[last][0] = 1.0;
  for (int i = last; i >= 0; --i)
    if (nodes_[i].backprop) nodes_[i].backprop(adj);
  for (int i = 0; i <= last; ++i) {
    Node& nd = nodes_[i];
    if (!nd.requires_grad) continue;
    if (nd.external_grad != nullptr) {
      acc(nd.external_grad, adj[i].data(), nd.n);
    } else {
      if (nd.grad_accum.empty()) nd.grad_accum.assign(nd.n, 0.0);
      acc(nd.grad_accum.data(), adj[i].data(), nd.n);
    }
  }
}

std::vector<double> Tape::grad(Tensor t) const {
  check_mine(t);
  const Node& nd = node(t.id_);
  if (nd.external_grad != nullptr)
    return std::vector<double>(nd.external_grad, nd.external_grad + nd.n);
  if (nd.grad_accum.empty()) return std::vector<double>(nd.n, 0.0);
  return nd.grad_accum;
}

}  // namespace stf
