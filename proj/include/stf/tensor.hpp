#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "stf/rng.hpp"

namespace stf {

using Shape = std::vector<int>;

int numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// A named trainable tensor. `grad` accumulates across backward passes until
// explicitly zeroed; the optimizer owns that contract.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;

  int size() const { return static_cast<int>(value.size()); }
};

// Owns all parameters of one network, keyed by name. Iteration order is the
// sorted key order, which keeps optimizer updates and checkpoints
// deterministic.
class ParamStore {
 public:
  // Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Parameter& create(const std::string& name, Shape shape, int fan_in, Rng& rng);
  Parameter& create_const(const std::string& name, Shape shape, double fill);

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  void zero_grad();
  size_t count() const { return params_.size(); }

  std::map<std::string, Parameter>& all() { return params_; }
  const std::map<std::string, Parameter>& all() const { return params_; }

 private:
  std::map<std::string, Parameter> params_;
};

class Tape;

// Lightweight handle onto a tape node. Valid only while its tape is alive.
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  int size() const;
  const double* data() const;
  std::vector<double> values() const;
  double scalar() const;
  bool requires_grad() const;
  int id() const { return id_; }
  bool defined() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode autodiff tape. Nodes are appended in topological order and the
// backward pass visits them in strict reverse order. A tape and its tensors
// are confined to one thread.
//
// With record=false the tape still computes forward values but never builds
// backward closures; use it for inference.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- leaves ---------------------------------------------------------
  Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = false);
  Tensor constant(Shape shape, std::vector<double> values);
  // Aliases p.value; backward accumulates into p.grad. p must outlive the tape.
  Tensor param(Parameter& p);
  // Aliases p.value with no gradient path (parameters treated as constants).
  Tensor frozen(const Parameter& p);

  // --- elementwise / structural ---------------------------------------
  Tensor add(Tensor a, Tensor b);
  Tensor add_rowvec(Tensor a, Tensor v);  // [m x n] + [n]
  Tensor scale(Tensor a, double c);
  Tensor concat_rows(const std::vector<Tensor>& parts);
  Tensor concat_cols(const std::vector<Tensor>& parts);
  Tensor slice_rows(Tensor a, int start, int count);
  Tensor slice_cols(Tensor a, int start, int count);
  Tensor sum_all(Tensor a);  // -> [1]

  // --- linear algebra ---------------------------------------------------
  Tensor matmul(Tensor a, Tensor b);     // [m x k] . [k x n]
  Tensor matmul_nt(Tensor a, Tensor b);  // [m x k] . [n x k]^T
  Tensor linear(Tensor x, Tensor w, Tensor b) { return add_rowvec(matmul(x, w), b); }

  // --- nonlinearities and losses ---------------------------------------
  // Softmax along the last axis with max-subtraction; temperature must be > 0.
  Tensor softmax(Tensor a, double temperature = 1.0);
  // Mean over rows of -log softmax(logits)[target]. log-sum-exp stabilized.
  Tensor cross_entropy(Tensor logits, const std::vector<int>& targets);
  Tensor layer_norm(Tensor x, Tensor gain, Tensor bias);
  Tensor gelu(Tensor x);
  // Zeroes each element with probability rate and rescales survivors by
  // 1/(1-rate). Deterministic under the given seed.
  Tensor dropout(Tensor a, double rate, uint64_t seed);

  // --- embeddings -------------------------------------------------------
  Tensor embedding_lookup(const std::vector<int>& ids, Tensor table);
  // dist [L x V] rows must each sum to 1 within 1e-6. out = dist . table.
  Tensor embedding_mix(Tensor dist, Tensor table);

  // --- autodiff ----------------------------------------------------------
  // Accumulates gradients for every requires_grad tensor reachable from loss.
  // Repeated calls accumulate additively.
  void backward(Tensor loss);
  std::vector<double> grad(Tensor t) const;

  size_t node_count() const { return nodes_.size(); }

 private:
  friend class Tensor;

  using AdjBuf = std::vector<std::vector<double>>;

  struct Node {
    Shape shape;
    int n = 0;
    std::vector<double> value_store;    // owned forward values (empty if aliased)
    const double* value = nullptr;      // forward values (owned or external)
    std::vector<double> grad_accum;     // persistent gradient (non-parameter)
    double* external_grad = nullptr;    // parameter gradient target
    bool requires_grad = false;
    std::function<void(AdjBuf&)> backprop;
  };

  int new_node(Shape shape, std::vector<double> values, bool requires_grad);
  Node& node(int id) { return nodes_[id]; }
  const Node& node(int id) const { return nodes_[id]; }
  bool want_grad(Tensor t) const { return record_ && nodes_[t.id_].requires_grad; }
  void check_mine(Tensor t) const;

  std::vector<Node> nodes_;
  bool record_;
};

}  // namespace stf
