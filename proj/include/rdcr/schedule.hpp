#pragma once

#include <string>

#include "rdcr/error.hpp"

namespace rdcr::train {

enum class ScheduleKind { constant, cosine_ramp_up, cosine_ramp_down, linear_ramp_up };

struct Schedule {
  ScheduleKind kind = ScheduleKind::constant;
  double start_value = 0.0;
  double end_value = 0.0;
  double length = 1.0;  // epochs

  static Schedule constant(double v);
};

ScheduleKind parse_schedule_kind(const std::string& name);
std::string schedule_kind_name(ScheduleKind k);

// start at t=0, end at t >= length, monotone between.
double schedule_value(const Schedule& s, double t);

// Cosine decay from base_lr to lr_floor across the pretrain phase, then
// restarting cosine cycles of cycle_length epochs (cycle start = base_lr,
// cycle end = lr_floor).
double cyclic_lr(int epoch, double base_lr, int cycle_length, int pretrain_epochs,
                 double lr_floor = 0.0);

}  // namespace rdcr::train
