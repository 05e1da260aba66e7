#pragma once

#include <functional>
#include <vector>

#include "rdcr/metrics.hpp"
#include "rdcr/nn.hpp"
#include "rdcr/noise.hpp"
#include "rdcr/schedule.hpp"

namespace rdcr::train {

enum class ConsistencyKind { mse, kl };

struct LossWeights {
  Schedule s = Schedule::constant(1.0);
  Schedule c = Schedule::constant(0.0);
  Schedule r = Schedule::constant(0.0);
};

struct OptimConfig {
  double base_lr = 0.05;
  double lr_floor = 0.0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int pretrain_epochs = 60;  // cosine span before the cyclic phase
};

struct SwaConfig {
  int cycles = 0;
  int cycle_epochs = 30;
  int captures_per_cycle = 1;  // snapshots at the tail of each cycle
};

struct EmaConfig {
  double decay = 0.99;
  double decay_late = 0.999;  // once the consistency ramp has finished
};

struct AugmentOptions {
  int translate = 2;
  bool hflip = false;
  double noise_sigma = 0.15;
};

struct TrainConfig {
  noise::Setting setting = noise::Setting::simplified_nl;
  ConsistencyKind consistency = ConsistencyKind::mse;
  LossWeights weights;
  double clip_threshold = 3.0;
  OptimConfig optim;
  EmaConfig ema;
  SwaConfig swa;
  AugmentOptions augment;
  bool rotation = true;  // expand each batch with the four orientations
  int epochs = 60;
  int batch = 32;
  uint64_t seed = 0;
};

// ---- optimizer pieces --------------------------------------------------

struct SgdState {
  std::vector<Eigen::ArrayXd> velocity;
};

// v <- momentum*v + g + weight_decay*p;  p <- p - lr*v
void sgd_step(std::vector<Tensor>& params, SgdState& state, double lr,
              double momentum, double weight_decay);

// Scales all gradients so the global norm is at most tau; returns the
// pre-clip norm.  Non-finite gradients abort.
double clip_gradients(std::vector<Tensor>& params, double tau);

// teacher <- decay*teacher + (1-decay)*student, elementwise over trainable
// parameters; running statistics are copied outright.
void ema_update(nn::NetworkParams& teacher, const nn::NetworkParams& student,
                double decay);

// Equal-weight average of captured snapshots (running arithmetic mean).
struct SwaState {
  nn::NetworkParams params;
  int captures = 0;

  void capture(const nn::NetworkParams& snapshot);
};

// ---- the objective -----------------------------------------------------

struct LossParts {
  double sup = 0.0, cons = 0.0, rot = 0.0;  // unweighted per-term means
  double total = 0.0;                       // weighted sum
};

// One batch as the loss sees it.  Student rows are the 4B oriented copies in
// source-major order when expanded, otherwise the B plain rows.
struct LossBatch {
  std::vector<int> observed;     // B observed labels
  std::vector<uint8_t> in_ds;    // B flags: row participates in the supervised term
  std::vector<int> rot_labels;   // 4B orientation targets; empty when not expanded
  bool expanded = false;
};

// Weighted three-term objective.  Supervised and consistency terms see only
// the un-rotated copies; the teacher distribution enters as a constant.
// Terms with zero weight and absent inputs contribute nothing.
Tensor rdcr_loss(const nn::ForwardResult& student_out, const Tensor& teacher_probs,
                 const LossBatch& batch, double w_s, double w_c, double w_r,
                 ConsistencyKind kind, LossParts& parts);

// ---- evaluation --------------------------------------------------------

// Eval-mode argmax over rows supplied by `image`; ties take the smaller class.
std::vector<int> predict_rows(nn::NetworkParams& params,
                              const std::function<const double*(int)>& image,
                              int count, int batch);

double evaluate(nn::NetworkParams& params, const Dataset& data, int batch);

struct PseudoLabels {
  std::vector<int> labels;
  Eigen::ArrayXd probs;  // count x K softmax rows
};

// Eval-mode predictions on the (unaugmented) training pool.
PseudoLabels pseudo_labels(nn::NetworkParams& model, const noise::NoisyDataset& data,
                           const std::vector<int>& indices, int batch);

// ---- the loop ----------------------------------------------------------

struct RunResult {
  nn::NetworkParams student;
  nn::NetworkParams teacher;
  SwaState swa;
  nn::NetworkParams best;  // evaluated role at the best-validation epoch
  int best_epoch = -1;
  std::vector<metrics::MetricsRecord> log;
};

// The evaluated role: the teacher when consistency is ever on, else the
// student (a plain-CE run has no meaningful teacher).
metrics::Role evaluated_role(const TrainConfig& cfg);

RunResult run_training(const TrainConfig& cfg, const nn::ModelConfig& model_cfg,
                       const noise::NoisyDataset& data, const Dataset& test);

}  // namespace rdcr::train
