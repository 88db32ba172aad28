#include "cxr/train/schedule.hpp"

#include "cxr/common/error.hpp"

namespace cxr {

PlateauScheduler::PlateauScheduler(double initial_lr, double factor, int patience, double min_delta)
    : lr_(initial_lr), factor_(factor), patience_(patience), min_delta_(min_delta) {
  require(initial_lr > 0.0, ErrorKind::kInvalidArgument, "plateau: initial lr must be positive");
  require(factor > 0.0 && factor < 1.0, ErrorKind::kInvalidArgument, "plateau: factor must lie in (0, 1)");
  require(patience >= 1, ErrorKind::kInvalidArgument, "plateau: patience must be >= 1");
  require(min_delta >= 0.0, ErrorKind::kInvalidArgument, "plateau: min_delta must be >= 0");
}

double PlateauScheduler::step(double val_loss) {
  if (val_loss < best_ - min_delta_) {
    best_ = val_loss;
    bad_epochs_ = 0;
  } else if (++bad_epochs_ >= patience_) {
    lr_ *= factor_;
    ++reductions_;
    bad_epochs_ = 0;
  }
  return lr_;
}

EarlyStopper::EarlyStopper(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {
  require(patience >= 1, ErrorKind::kInvalidArgument, "early stop: patience must be >= 1");
  require(min_delta >= 0.0, ErrorKind::kInvalidArgument, "early stop: min_delta must be >= 0");
}

bool EarlyStopper::step(double val_loss) {
  if (val_loss < best_ - min_delta_) {
    best_ = val_loss;
    stalled_ = 1;
  } else {
    ++stalled_;
  }
  if (stalled_ >= patience_) stopped_ = true;
  return stopped_;
}

}  // namespace cxr
