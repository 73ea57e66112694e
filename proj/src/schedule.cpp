#include "heatlens/optim.hpp"

#include <cmath>

namespace heatlens {

double lr_at(const ScheduleConfig& s, double epoch) {
  s.validate();
  if (epoch < 0.0 || epoch > s.total_epochs)
    fail_value("lr_at", "epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(s.total_epochs) + "]");
  if (epoch < s.warmup_epochs)
    return s.warmup_start_lr + (s.base_lr - s.warmup_start_lr) * (epoch / s.warmup_epochs);
  const double span = s.total_epochs - s.warmup_epochs;
  const double u = (epoch - s.warmup_epochs) / span;
  return s.min_lr + 0.5 * (s.base_lr - s.min_lr) * (1.0 + std::cos(3.14159265358979323846 * u));
}

}  // namespace heatlens
