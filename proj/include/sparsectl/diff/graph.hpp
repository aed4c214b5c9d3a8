#pragma once

// Tape-based reverse-mode differentiation over dense row-major matrices.
//
// Every Value is a 2-D matrix (a vector is 1 x n, a scalar 1 x 1). Ops append
// nodes to the tape in topological order, so backward() is a single reverse
// sweep. Gradients accumulate additively into every input, which makes shared
// subexpressions correct without any extra bookkeeping.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sparsectl/error.hpp"

namespace sparsectl::diff {

using Index = Eigen::Index;

template <class Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_str(Index rows, Index cols) {
  std::ostringstream os;
  os << "[" << rows << " x " << cols << "]";
  return os.str();
}

template <class Real>
struct Param {
  std::string name;
  Matrix<Real> value;
  Matrix<Real> grad;
  bool trainable = true;

  Index size() const { return value.size(); }
};

// Owns the parameters of exactly one model. Names are unique and insertion
// order is stable, which fixes the checkpoint blob order.
template <class Real>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Param<Real>& add(std::string name, Index rows, Index cols, bool trainable = true) {
    if (index_.count(name) != 0) {
      throw InvalidInput("duplicate parameter name: " + name);
    }
    auto p = std::make_unique<Param<Real>>();
    p->name = std::move(name);
    p->value = Matrix<Real>::Zero(rows, cols);
    p->grad = Matrix<Real>::Zero(rows, cols);
    p->trainable = trainable;
    index_.emplace(p->name, items_.size());
    items_.push_back(std::move(p));
    return *items_.back();
  }

  Param<Real>* find(std::string_view name) {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : items_[it->second].get();
  }
  const Param<Real>* find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : items_[it->second].get();
  }

  Param<Real>& at(std::string_view name) {
    auto* p = find(name);
    if (p == nullptr) throw InvalidInput("unknown parameter: " + std::string(name));
    return *p;
  }

  std::size_t size() const { return items_.size(); }
  Param<Real>& operator[](std::size_t i) { return *items_[i]; }
  const Param<Real>& operator[](std::size_t i) const { return *items_[i]; }

  // Scalar count, optionally restricted to names starting with `prefix`.
  std::size_t count(bool trainable_only = true, std::string_view prefix = {}) const {
    std::size_t n = 0;
    for (const auto& p : items_) {
      if (trainable_only && !p->trainable) continue;
      if (!prefix.empty() && p->name.rfind(prefix, 0) != 0) continue;
      n += static_cast<std::size_t>(p->value.size());
    }
    return n;
  }

  void zero_grad() {
    for (auto& p : items_) p->grad.setZero();
  }

 private:
  std::vector<std::unique_ptr<Param<Real>>> items_;
  std::map<std::string, std::size_t> index_;
};

enum class Mode { train, eval };

template <class Real>
class Graph;

// Handle to a node on a Graph's tape. Cheap to copy; valid while the graph lives.
template <class Real>
class Var {
 public:
  Var() = default;
  Var(Graph<Real>* g, std::size_t id) : graph_(g), id_(id) {}

  Graph<Real>& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Matrix<Real>& value() const { return graph_->value(id_); }
  const Matrix<Real>& grad() const { return graph_->grad(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool needs_grad() const { return graph_->needs_grad(id_); }
  Real scalar() const { return value()(0, 0); }

 private:
  Graph<Real>* graph_ = nullptr;
  std::size_t id_ = 0;
};

template <class Real>
class Graph {
 public:
  using Mat = Matrix<Real>;
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  // `record` = false skips building backward closures (inference).
  explicit Graph(Mode mode = Mode::eval, bool record = true) : mode_(mode), record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Mode mode() const { return mode_; }
  bool training() const { return mode_ == Mode::train; }
  bool recording() const { return record_; }

  Var<Real> constant(Mat value) { return push(std::move(value), "constant", false, {}); }

  // Leaf with a gradient of its own (used for input-gradient checks).
  Var<Real> variable(Mat value) { return push(std::move(value), "variable", record_, {}); }

  // Leaf that reads the parameter in place and, when recording, adds its
  // gradient into Param::grad during backward.
  Var<Real> param(Param<Real>& p) {
    const bool grad = record_ && p.trainable;
    Node n;
    n.external = &p.value;
    n.op = "param";
    n.needs_grad = grad;
    if (grad) {
      Param<Real>* sink = &p;
      n.backward = [sink](Graph& g, std::size_t self) { sink->grad += g.grad(self); };
    }
    nodes_.push_back(std::move(n));
    return Var<Real>(this, nodes_.size() - 1);
  }

  // Appends an op result. `backward` runs only if some input needs a gradient.
  Var<Real> emit(Mat value, const char* op, std::initializer_list<Var<Real>> inputs,
                 BackwardFn backward) {
    bool grad = false;
    if (record_) {
      for (const auto& v : inputs) grad = grad || needs_grad(v.id());
    }
    return push(std::move(value), op, grad, grad ? std::move(backward) : BackwardFn{});
  }

  Var<Real> emit(Mat value, const char* op, const std::vector<Var<Real>>& inputs,
                 BackwardFn backward) {
    bool grad = false;
    if (record_) {
      for (const auto& v : inputs) grad = grad || needs_grad(v.id());
    }
    return push(std::move(value), op, grad, grad ? std::move(backward) : BackwardFn{});
  }

  const Mat& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external != nullptr ? *n.external : n.value;
  }
  Mat& grad(std::size_t id) { return nodes_.at(id).grad; }
  const Mat& grad(std::size_t id) const { return nodes_.at(id).grad; }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  const char* op(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }

  // Accumulates d(loss)/d(node) into every node that needs a gradient.
  void backward(Var<Real> loss) {
    const Mat& l = value(loss.id());
    if (l.rows() != 1 || l.cols() != 1) {
      throw ShapeError("backward requires a scalar loss, got " + shape_str(l.rows(), l.cols()));
    }
    if (backward_done_) throw std::logic_error("backward already ran on this graph");
    backward_done_ = true;
    for (auto& n : nodes_) {
      if (n.needs_grad) {
        const Mat& v = n.external != nullptr ? *n.external : n.value;
        n.grad = Mat::Zero(v.rows(), v.cols());
      }
    }
    if (!nodes_[loss.id()].needs_grad) return;
    nodes_[loss.id()].grad(0, 0) = Real(1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      if (nodes_[i].needs_grad && nodes_[i].backward) nodes_[i].backward(*this, i);
    }
  }

 private:
  struct Node {
    Mat value;
    const Mat* external = nullptr;
    Mat grad;
    const char* op = "";
    bool needs_grad = false;
    BackwardFn backward;
  };

  Var<Real> push(Mat value, const char* op, bool grad, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.needs_grad = grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<Real>(this, nodes_.size() - 1);
  }

  Mode mode_;
  bool record_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
};

using Rng = std::mt19937_64;

// Uniform +-1/sqrt(fan_in) initialisation; fan_in is the column count.
template <class Real>
void init_uniform_fan_in(Param<Real>& p, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(1, p.value.cols())));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<Real>(dist(rng));
}

template <class Real>
void init_uniform(Param<Real>& p, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<Real>(dist(rng));
}

}  // namespace sparsectl::diff
