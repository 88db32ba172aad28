#pragma once

#include <vector>

// Reference scanners for plateau decay and early stopping. Each epoch's
// decision is recomputed from the raw prefix of the loss sequence.
namespace cxr::oracle {

// Epochs i whose loss beats every earlier improvement by more than delta.
inline std::vector<bool> improvements(const std::vector<double>& losses, double delta) {
  std::vector<bool> out(losses.size(), false);
  for (std::size_t i = 0; i < losses.size(); ++i) {
    bool beats = true;
    for (std::size_t j = 0; j < i; ++j) {
      if (out[j] && !(losses[i] < losses[j] - delta)) beats = false;
    }
    out[i] = beats;
  }
  return out;
}

// lr in effect after each epoch.
inline std::vector<double> plateau_lrs(const std::vector<double>& losses, double lr, double factor, int patience,
                                       double delta) {
  const auto improved = improvements(losses, delta);
  std::vector<double> out;
  for (std::size_t t = 0; t < losses.size(); ++t) {
    // Decays are the ends of runs of `patience` non-improving epochs, where a
    // run starts after an improvement or after the previous decay.
    int decays = 0;
    std::size_t run_start = 0;
    for (std::size_t i = 0; i <= t; ++i) {
      if (improved[i]) {
        run_start = i + 1;
      } else if (i + 1 - run_start == static_cast<std::size_t>(patience)) {
        ++decays;
        run_start = i + 1;
      }
    }
    double v = lr;
    for (int d = 0; d < decays; ++d) v *= factor;
    out.push_back(v);
  }
  return out;
}

// First epoch (1-based) at which training stops, or 0.
inline int early_stop_epoch(const std::vector<double>& losses, int patience, double delta) {
  const auto improved = improvements(losses, delta);
  for (std::size_t t = 0; t < losses.size(); ++t) {
    std::size_t last = 0;
    bool seen = false;
    for (std::size_t i = 0; i <= t; ++i) {
      if (improved[i]) {
        last = i;
        seen = true;
      }
    }
    const std::size_t window = seen ? t - last + 1 : t + 1;
    if (window >= static_cast<std::size_t>(patience)) return static_cast<int>(t) + 1;
  }
  return 0;
}

}  // namespace cxr::oracle
