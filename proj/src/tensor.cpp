#include "rdcr/tensor.hpp"

#include <sstream>

namespace rdcr {

thread_local Tape* Tape::current_ = nullptr;

Eigen::Index numel_of(const std::vector<int>& shape) {
  Eigen::Index n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

static std::shared_ptr<TensorImpl> make_impl(std::vector<int> shape,
                                             bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.setZero(numel_of(impl->shape));
  impl->requires_grad = requires_grad;
  return impl;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return Tensor(make_impl(std::move(shape), requires_grad));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  auto impl = make_impl(std::move(shape), requires_grad);
  impl->data.setConstant(value);
  return Tensor(std::move(impl));
}

Tensor Tensor::from_values(std::vector<int> shape,
                           std::initializer_list<double> values,
                           bool requires_grad) {
  auto impl = make_impl(std::move(shape), requires_grad);
  if (static_cast<Eigen::Index>(values.size()) != impl->data.size())
    throw ShapeError("from_values: element count does not match shape");
  Eigen::Index i = 0;
  for (double v : values) impl->data[i++] = v;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_array(std::vector<int> shape, Eigen::ArrayXd values,
                          bool requires_grad) {
  if (numel_of(shape) != values.size())
    throw ShapeError("from_array: element count does not match shape");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::uniform(std::vector<int> shape, double lo, double hi,
                       RngStream& rng, bool requires_grad) {
  auto impl = make_impl(std::move(shape), requires_grad);
  for (Eigen::Index i = 0; i < impl->data.size(); ++i)
    impl->data[i] = rng.uniform(lo, hi);
  return Tensor(std::move(impl));
}

double Tensor::value() const {
  if (numel() != 1) throw ShapeError("value(): tensor is not scalar");
  return impl_->data[0];
}

Eigen::ArrayXd& Tensor::grad() {
  if (impl_->grad.size() == 0) impl_->grad.setZero(impl_->data.size());
  return impl_->grad;
}

const Eigen::ArrayXd& Tensor::grad() const {
  if (impl_->grad.size() == 0)
    throw std::runtime_error("grad(): no gradient present");
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.resize(0); }

void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward: loss must be a scalar tensor");
  TensorImpl* limpl = loss.impl().get();
  if (limpl->producer < 0 || limpl->tape == nullptr)
    throw std::runtime_error("backward: loss is not on a tape");
  Tape& tape = *limpl->tape;

  const int root = limpl->producer;
  std::vector<char> needed(static_cast<size_t>(root) + 1, 0);
  needed[static_cast<size_t>(root)] = 1;
  // One reverse sweep marks all ancestors: the tape is topologically ordered.
  for (int i = root; i >= 0; --i) {
    if (!needed[static_cast<size_t>(i)]) continue;
    for (const auto& in : tape.nodes_[static_cast<size_t>(i)].inputs) {
      if (in->producer >= 0 && in->tape == &tape)
        needed[static_cast<size_t>(in->producer)] = 1;
    }
  }

  // Intermediate grads are per-call scratch; leaf grads accumulate.
  for (int i = 0; i <= root; ++i) {
    if (!needed[static_cast<size_t>(i)]) continue;
    TensorImpl* out = tape.nodes_[static_cast<size_t>(i)].output.get();
    out->grad.setZero(out->data.size());
    for (const auto& in : tape.nodes_[static_cast<size_t>(i)].inputs) {
      if ((in->requires_grad || in->producer >= 0) && in->grad.size() == 0)
        in->grad.setZero(in->data.size());
    }
  }

  limpl->grad[0] = 1.0;
  for (int i = root; i >= 0; --i) {
    if (needed[static_cast<size_t>(i)]) tape.nodes_[static_cast<size_t>(i)].backward();
  }
}

}  // namespace rdcr
