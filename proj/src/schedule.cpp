#include "rdcr/schedule.hpp"

#include <cmath>

namespace rdcr::train {

Schedule Schedule::constant(double v) {
  Schedule s;
  s.kind = ScheduleKind::constant;
  s.start_value = v;
  s.end_value = v;
  return s;
}

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "constant") return ScheduleKind::constant;
  if (name == "cosine_ramp_up") return ScheduleKind::cosine_ramp_up;
  if (name == "cosine_ramp_down") return ScheduleKind::cosine_ramp_down;
  if (name == "linear_ramp_up") return ScheduleKind::linear_ramp_up;
  throw ConfigError("unknown schedule kind: " + name);
}

std::string schedule_kind_name(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::cosine_ramp_up: return "cosine_ramp_up";
    case ScheduleKind::cosine_ramp_down: return "cosine_ramp_down";
    case ScheduleKind::linear_ramp_up: return "linear_ramp_up";
  }
  return "?";
}

double schedule_value(const Schedule& s, double t) {
  if (t < 0.0) throw ConfigError("schedule_value: negative time");
  if (s.kind == ScheduleKind::constant) return s.start_value;
  if (s.length <= 0.0) throw ConfigError("schedule_value: length must be positive");
  const double frac = std::min(t / s.length, 1.0);
  switch (s.kind) {
    case ScheduleKind::linear_ramp_up:
      return s.start_value + (s.end_value - s.start_value) * frac;
    case ScheduleKind::cosine_ramp_up:
      return s.start_value +
             (s.end_value - s.start_value) * (1.0 - std::cos(M_PI * frac)) / 2.0;
    case ScheduleKind::cosine_ramp_down:
      // same cosine arc read in the decaying role
      return s.end_value +
             (s.start_value - s.end_value) * (1.0 + std::cos(M_PI * frac)) / 2.0;
    case ScheduleKind::constant: break;
  }
  return s.start_value;
}

double cyclic_lr(int epoch, double base_lr, int cycle_length, int pretrain_epochs,
                 double lr_floor) {
  if (cycle_length < 1) throw ConfigError("cyclic_lr: cycle length must be >= 1");
  if (epoch < 0) throw ConfigError("cyclic_lr: negative epoch");
  auto cosine = [&](int pos, int span) {
    if (span <= 1) return base_lr;
    const double frac = static_cast<double>(pos) / (span - 1);
    return lr_floor + (base_lr - lr_floor) * (1.0 + std::cos(M_PI * frac)) / 2.0;
  };
  if (epoch < pretrain_epochs) return cosine(epoch, pretrain_epochs);
  const int pos = (epoch - pretrain_epochs) % cycle_length;
  return cosine(pos, cycle_length);
}

}  // namespace rdcr::train
