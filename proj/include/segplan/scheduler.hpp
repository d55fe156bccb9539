#pragma once

#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "segplan/errors.hpp"

namespace segplan {

struct SchedulerConfig {
  double initial_lr = 3e-4;
  double ema_decay = 0.9;
  double min_improvement = 5e-3;
  std::size_t lr_patience = 30;
  std::size_t stop_patience = 60;
  double lr_factor = 5.0;
  double min_lr = 1e-6;
};

enum class SchedulerAction { continue_training, reduce_lr, stop };

inline std::string to_string(SchedulerAction a) {
  switch (a) {
    case SchedulerAction::continue_training: return "continue";
    case SchedulerAction::reduce_lr: return "reduce_lr";
    case SchedulerAction::stop: return "stop";
  }
  return "?";
}

struct SchedulerState {
  double lr = 3e-4;
  std::size_t epoch = 0;  // index of the next epoch to be observed
  bool started = false;
  double train_ema = 0.0;
  double val_ema = 0.0;
  // Reference EMAs only move on an improvement larger than min_improvement.
  double best_train_ema = 0.0;
  double best_val_ema = 0.0;
  std::size_t best_train_epoch = 0;
  std::size_t best_val_epoch = 0;

  bool operator==(const SchedulerState&) const = default;
};

inline SchedulerState initial_scheduler_state(const SchedulerConfig& cfg = {}) {
  SchedulerState s;
  s.lr = cfg.initial_lr;
  return s;
}

// One epoch of the plateau/stop state machine. The stop condition is checked
// before the reduction so a lapsed val patience at a low lr ends training.
inline SchedulerAction scheduler_step(SchedulerState& s, double train_loss, double val_loss,
                                      const SchedulerConfig& cfg = {}) {
  if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
    throw ValidationError("scheduler: non-finite loss at epoch " + std::to_string(s.epoch) + ", training aborted");
  }
  const std::size_t e = s.epoch;
  if (!s.started) {
    s.started = true;
    s.train_ema = train_loss;
    s.val_ema = val_loss;
    s.best_train_ema = s.train_ema;
    s.best_val_ema = s.val_ema;
    s.best_train_epoch = e;
    s.best_val_epoch = e;
  } else {
    s.train_ema = cfg.ema_decay * s.train_ema + (1.0 - cfg.ema_decay) * train_loss;
    s.val_ema = cfg.ema_decay * s.val_ema + (1.0 - cfg.ema_decay) * val_loss;
    if (s.train_ema < s.best_train_ema - cfg.min_improvement) {
      s.best_train_ema = s.train_ema;
      s.best_train_epoch = e;
    }
    if (s.val_ema < s.best_val_ema - cfg.min_improvement) {
      s.best_val_ema = s.val_ema;
      s.best_val_epoch = e;
    }
  }
  ++s.epoch;
  if (s.lr < cfg.min_lr && e - s.best_val_epoch >= cfg.stop_patience) return SchedulerAction::stop;
  if (e - s.best_train_epoch >= cfg.lr_patience) {
    s.lr /= cfg.lr_factor;
    s.best_train_epoch = e;
    return SchedulerAction::reduce_lr;
  }
  return SchedulerAction::continue_training;
}

// {epoch, lr, train_ema, val_ema, action}; lr is the value after the step.
inline std::string scheduler_log_line(const SchedulerState& s, SchedulerAction a) {
  nlohmann::ordered_json line;
  line["epoch"] = s.epoch - 1;
  line["lr"] = s.lr;
  line["train_ema"] = s.train_ema;
  line["val_ema"] = s.val_ema;
  line["action"] = to_string(a);
  return line.dump();
}

}  // namespace segplan
