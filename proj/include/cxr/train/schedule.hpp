#pragma once

#include <limits>

namespace cxr {

// Reduce-on-plateau: once `patience` consecutive epochs fail to improve the
// best validation loss by more than min_delta, lr is multiplied by factor and
// the count restarts.
class PlateauScheduler {
 public:
  PlateauScheduler(double initial_lr, double factor = 0.1, int patience = 3, double min_delta = 1e-4);

  // Feed one epoch's validation loss; returns the lr for the next epoch.
  double step(double val_loss);
  double lr() const { return lr_; }
  int bad_epochs() const { return bad_epochs_; }
  int reductions() const { return reductions_; }

 private:
  double lr_;
  double factor_;
  int patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
  int reductions_ = 0;
};

// Stops once the loss has not changed by more than min_delta across
// `patience` consecutive epochs: the epoch holding the best loss plus
// patience - 1 epochs that fail to beat it.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience = 10, double min_delta = 1e-4);

  bool step(double val_loss);
  bool stopped() const { return stopped_; }
  int stalled_epochs() const { return stalled_; }

 private:
  int patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int stalled_ = 0;
  bool stopped_ = false;
};

}  // namespace cxr
