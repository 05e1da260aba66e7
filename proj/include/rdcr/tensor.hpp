#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "rdcr/error.hpp"
#include "rdcr/rng.hpp"

namespace rdcr {

class Tape;

// Flat row-major n-d array of doubles with an optional gradient slot.
// Copying a Tensor copies the handle; the storage is shared.
struct TensorImpl {
  std::vector<int> shape;
  Eigen::ArrayXd data;
  Eigen::ArrayXd grad;  // size 0 until first touched by backward
  bool requires_grad = false;
  int producer = -1;    // index of the tape node that produced this, -1 = leaf
  Tape* tape = nullptr;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false);
  static Tensor from_values(std::vector<int> shape,
                            std::initializer_list<double> values,
                            bool requires_grad = false);
  static Tensor from_array(std::vector<int> shape, Eigen::ArrayXd values,
                           bool requires_grad = false);
  static Tensor uniform(std::vector<int> shape, double lo, double hi,
                        RngStream& rng, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  Eigen::Index numel() const { return impl_->data.size(); }

  Eigen::ArrayXd& data() { return impl_->data; }
  const Eigen::ArrayXd& data() const { return impl_->data; }
  double* ptr() { return impl_->data.data(); }
  const double* ptr() const { return impl_->data.data(); }

  double value() const;  // scalar tensors only

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }
  bool has_grad() const { return impl_->grad.size() > 0; }
  Eigen::ArrayXd& grad();              // allocates zeros on first access
  const Eigen::ArrayXd& grad() const;  // throws if absent
  void zero_grad();                    // drops the grad buffer

  // True when an op recording on the active tape must track this input.
  bool tracked() const {
    return impl_->requires_grad || impl_->producer >= 0;
  }

  std::shared_ptr<TensorImpl>& impl() { return impl_; }
  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

  bool all_finite() const { return impl_->data.isFinite().all(); }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

Eigen::Index numel_of(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);
void check_same_shape(const Tensor& a, const Tensor& b, const char* op);

struct TapeNode {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::shared_ptr<TensorImpl> output;
  // Reads output->grad, accumulates into each tracked input's grad.
  std::function<void()> backward;
};

// Append-only record of the forward pass; nodes are stored in topological
// order by construction (an op's inputs are recorded before the op).
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_; }

  int add_node(TapeNode node) {
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
  }
  size_t size() const { return nodes_.size(); }
  const TapeNode& node(int i) const { return nodes_[static_cast<size_t>(i)]; }
  void clear() { nodes_.clear(); }

 private:
  friend class TapeScope;
  friend void backward(const Tensor&);
  std::vector<TapeNode> nodes_;
  static thread_local Tape* current_;
};

// RAII activation: ops record onto `tape` while the scope is alive.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(Tape::current_) {
    Tape::current_ = &tape;
  }
  ~TapeScope() { Tape::current_ = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// Reverse sweep from `loss` (a scalar on a tape). Gradients of leaf tensors
// accumulate across calls; intermediate grads are scratch per call.
void backward(const Tensor& loss);

}  // namespace rdcr
