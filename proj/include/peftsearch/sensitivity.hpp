#pragma once

// Module sensitivity scoring, its exponential moving average, the budget-aware
// module importance indicator, and the windowed stability trigger.

#include <cstdint>
#include <deque>
#include <vector>

namespace peftsearch {

// cos(0,0) := 1, cos(0, nonzero) := 0
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

struct SiteGradView {
  const std::vector<double>* weights;
  const std::vector<double>* grad_train;
  const std::vector<double>* grad_val;
};

// s_n = f_n(train) + alpha_n * f_n(val) with
// f_n(D) = mean over site parameters of |w * G(w, D)| and alpha_n the cosine
// of the flattened train/val gradients (0 when either side has zero norm).
// Removed sites (keep[n] == 0) score 0.
std::vector<double> module_sensitivity(const std::vector<std::vector<SiteGradView>>& sites,
                                       const std::vector<uint8_t>& keep);

struct SensitivityState {
  std::vector<double> s_bar;
  std::vector<uint8_t> initialized;
  double gamma = 0.85;

  void init(size_t n, double g) {
    s_bar.assign(n, 0.0);
    initialized.assign(n, 0);
    gamma = g;
  }
};

// s_bar <- gamma * s_bar + (1 - gamma) * raw; uninitialized entries take raw.
void ema_update(SensitivityState& state, const std::vector<double>& raw);

// Greedy descending-sensitivity accumulation under the budget (ties -> lower
// index first); the first overflowing site and everything below it get 0.
std::vector<uint8_t> importance_indicator(const std::vector<double>& s_bar,
                                          const std::vector<double>& expected_counts,
                                          const std::vector<uint8_t>& keep, double budget);

struct IndicatorHistory {
  std::deque<std::vector<uint8_t>> buf;  // at most H+1 entries
  int window = 5;

  void push(std::vector<uint8_t> indicator);
  void clear() { buf.clear(); }
};

struct TriggerResult {
  double beta = 0.0;
  bool fire = false;
};

// beta = mean cosine over the H most recent consecutive indicator pairs;
// warm-up (fewer than H+1 indicators) gives beta = 0, no fire.
TriggerResult stability_and_trigger(const IndicatorHistory& history, double tau);

}  // namespace peftsearch
