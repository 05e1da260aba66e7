#pragma once

#include <functional>
#include <vector>

#include "rdcr/tensor.hpp"

namespace rdcr::ops {

// Elementwise / structural
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& x);                       // -> scalar [1]
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor select_rows(const Tensor& x, const std::vector<int>& rows);

// Activations / pooling
Tensor relu(const Tensor& x);
Tensor max_pool2d(const Tensor& x, int k, int stride);
Tensor global_average_pool(const Tensor& x);       // [N,C,H,W] -> [N,C]
Tensor dropout(const Tensor& x, double p, uint64_t rng_key);

// Dense layers. Cross-correlation convention: no kernel flip.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Class-axis ops on [N,K]
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Consistency losses; the teacher distribution is a detached constant.
Tensor mse_consistency(const Tensor& student_logits, const Tensor& teacher_probs);
Tensor kl_consistency(const Tensor& student_logits, const Tensor& teacher_probs);

// Softmax of a [N,K] array without tape involvement (teacher side).
Eigen::ArrayXd softmax_rows(const Eigen::ArrayXd& logits, int n, int k);

namespace detail {
// Registers a tape node when a tape is active and any input is tracked.
void record(const char* op, std::initializer_list<Tensor> inputs, Tensor& out,
            std::function<void()> bw);
}

}  // namespace rdcr::ops
