#include "peftsearch/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace peftsearch {

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> module_sensitivity(const std::vector<std::vector<SiteGradView>>& sites,
                                       const std::vector<uint8_t>& keep) {
  if (sites.size() != keep.size()) throw std::invalid_argument("module_sensitivity: size mismatch");
  std::vector<double> s(sites.size(), 0.0);
  for (size_t n = 0; n < sites.size(); ++n) {
    if (!keep[n]) continue;
    double f_tr = 0.0, f_val = 0.0;
    double dot = 0.0, ntr = 0.0, nval = 0.0;
    long count = 0;
    for (const SiteGradView& part : sites[n]) {
      const auto& w = *part.weights;
      const auto& gt = *part.grad_train;
      const auto& gv = *part.grad_val;
      if (w.size() != gt.size() || w.size() != gv.size())
        throw std::invalid_argument("module_sensitivity: misaligned arrays for site " + std::to_string(n));
      for (size_t i = 0; i < w.size(); ++i) {
        f_tr += std::abs(w[i] * gt[i]);
        f_val += std::abs(w[i] * gv[i]);
        dot += gt[i] * gv[i];
        ntr += gt[i] * gt[i];
        nval += gv[i] * gv[i];
      }
      count += static_cast<long>(w.size());
    }
    if (count == 0) throw std::invalid_argument("module_sensitivity: kept site with no parameters");
    f_tr /= count;
    f_val /= count;
    // alpha := 0 when either gradient has zero norm (no evidence of agreement)
    const double alpha = (ntr == 0.0 || nval == 0.0) ? 0.0 : dot / (std::sqrt(ntr) * std::sqrt(nval));
    s[n] = f_tr + alpha * f_val;
  }
  return s;
}

void ema_update(SensitivityState& state, const std::vector<double>& raw) {
  if (raw.size() != state.s_bar.size()) throw std::invalid_argument("ema_update: size mismatch");
  for (double x : raw)
    if (!std::isfinite(x)) throw std::invalid_argument("ema_update: non-finite raw score");
  for (size_t i = 0; i < raw.size(); ++i) {
    if (!state.initialized[i]) {
      state.s_bar[i] = raw[i];
      state.initialized[i] = 1;
    } else {
      state.s_bar[i] = state.gamma * state.s_bar[i] + (1.0 - state.gamma) * raw[i];
    }
  }
}

std::vector<uint8_t> importance_indicator(const std::vector<double>& s_bar,
                                          const std::vector<double>& expected_counts,
                                          const std::vector<uint8_t>& keep, double budget) {
  const size_t n = s_bar.size();
  if (expected_counts.size() != n || keep.size() != n)
    throw std::invalid_argument("importance_indicator: size mismatch");
  std::vector<int> order;
  for (size_t i = 0; i < n; ++i)
    if (keep[i]) order.push_back(static_cast<int>(i));
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return s_bar[a] > s_bar[b]; });
  std::vector<uint8_t> ind(n, 0);
  double acc = 0.0;
  for (int i : order) {
    if (acc + expected_counts[i] > budget) break;  // overflow: this and all lower ranks stay 0
    acc += expected_counts[i];
    ind[i] = 1;
  }
  return ind;
}

void IndicatorHistory::push(std::vector<uint8_t> indicator) {
  buf.push_back(std::move(indicator));
  while (static_cast<int>(buf.size()) > window + 1) buf.pop_front();
}

TriggerResult stability_and_trigger(const IndicatorHistory& history, double tau) {
  TriggerResult r;
  if (static_cast<int>(history.buf.size()) < history.window + 1) return r;  // warm-up
  double acc = 0.0;
  const size_t last = history.buf.size() - 1;
  for (int j = 0; j < history.window; ++j) {
    const auto& a = history.buf[last - j];
    const auto& b = history.buf[last - j - 1];
    std::vector<double> av(a.begin(), a.end()), bv(b.begin(), b.end());
    acc += cosine_similarity(av, bv);
  }
  r.beta = acc / history.window;
  r.fire = r.beta >= tau;
  return r;
}

}  // namespace peftsearch
