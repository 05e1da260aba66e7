#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rdcr/tensor.hpp"

namespace rdcr {

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// `f` must map a tensor to a scalar tensor and be safe to call repeatedly;
// the analytic pass runs on a private tape, the probes run tape-free.
double gradient_check(const std::function<Tensor(const Tensor&)>& f,
                      const Tensor& point, double step);

struct FdSweepEntry {
  std::string name;
  double worst_err = 0.0;
  Eigen::Index count = 0;
};

struct FdSweepResult {
  double worst = 0.0;
  std::vector<FdSweepEntry> per_param;
};

// Central finite differences over every parameter of the full three-term
// objective on the tiny double-head network (width 0.125, four source images
// expanded to all orientations, K=4, 8x8 glyphs).  Probes replay only the
// stages downstream of the perturbed parameter from cached activations.
FdSweepResult rdcr_loss_fd_sweep(uint64_t seed, double step);

}  // namespace rdcr
