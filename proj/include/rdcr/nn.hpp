#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rdcr/tensor.hpp"

namespace rdcr::nn {

enum class NormKind { batch, instance, layer, group };

struct Normalization {
  NormKind kind = NormKind::group;
  int group_size = 16;  // channels per group, group kind only
  bool weight_standardization = false;
  double epsilon = 1e-5;
};

// Config names: "bn", "in", "ln", "gn", "gn+ws".
Normalization parse_norm(const std::string& name);
std::string norm_name(const Normalization& n);

struct ConvLayer {
  Tensor weight;  // [O,C,3,3]
  Tensor bias;    // [O]
  Tensor gamma;   // [O]
  Tensor beta;    // [O]
  // batch kind only; updated in train mode, read in eval mode
  Eigen::ArrayXd running_mean;
  Eigen::ArrayXd running_var;
};

struct ModelConfig {
  int in_channels = 1;
  int image_size = 16;
  int num_classes = 6;
  double width_multiplier = 0.125;
  Normalization norm;
  double dropout_p = 0.5;
};

struct NetworkParams {
  std::vector<ConvLayer> backbone;  // nine 3x3 convs
  Tensor class_w, class_b;          // feature width -> K
  Tensor rot_w, rot_b;              // feature width -> 4
  ModelConfig config;
  std::vector<int> widths;          // resolved output channels per conv

  std::vector<Tensor> parameters();
  std::vector<std::pair<std::string, Tensor>> named_parameters();
  void set_requires_grad(bool v);
  void zero_grad();
  NetworkParams clone() const;
  long param_count();
};

NetworkParams build_backbone(const ModelConfig& config, uint64_t seed);

struct ForwardOptions {
  bool train = false;
  // Per-row dropout streams so a row's mask depends only on its own key;
  // empty falls back to one flat stream per stage from flat_dropout_key.
  std::vector<uint64_t> row_keys;
  uint64_t flat_dropout_key = 0;
  // batch kind: which rows feed the running-statistic update (empty = all).
  std::vector<uint8_t> stat_rows;
  bool update_running_stats = true;
};

struct ForwardResult {
  Tensor class_logits;  // [N,K]
  Tensor rot_logits;    // [N,4]
  Tensor features;      // [N,F]
};

ForwardResult forward(NetworkParams& params, const Tensor& x,
                      const ForwardOptions& opts);

// Staged forward for the finite-difference sweep: activations[i] is the input
// to stage i, so perturbing a parameter of stage i only needs a replay from i.
int stage_count();
int stage_of_conv(int conv_index);
std::vector<Tensor> forward_activations(NetworkParams& params, const Tensor& x,
                                        const ForwardOptions& opts);
ForwardResult forward_from(NetworkParams& params, int stage, const Tensor& act,
                           const ForwardOptions& opts);

// Per-filter standardization over C*kH*kW; differentiable. The divisor is
// max(population std, epsilon) so scaling a filter rescales exactly.
Tensor weight_standardize(const Tensor& weight, double epsilon);

// group / instance / layer standardization + per-channel affine.
Tensor group_norm(const Tensor& x, const Normalization& norm,
                  const Tensor& gamma, const Tensor& beta);

// batch kind: train mode uses batch statistics over all rows and updates the
// running estimates from stat_rows; eval mode reads the running estimates.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Eigen::ArrayXd& running_mean, Eigen::ArrayXd& running_var,
                  bool train, double momentum, double epsilon,
                  const std::vector<uint8_t>& stat_rows, bool update_running);

}  // namespace rdcr::nn
