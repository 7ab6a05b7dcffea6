#include "peftsearch/selector.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "peftsearch/sensitivity.hpp"

namespace peftsearch {

std::vector<double> expected_site_counts(const Array& theta, const Array& phi,
                                         const SelectionState& sel,
                                         const std::vector<ModuleSite>& sites) {
  const size_t n = sites.size();
  if (sel.b.size() != n || theta.rows() < static_cast<int>(n))
    throw std::invalid_argument("expected_site_counts: misaligned shapes");
  std::vector<double> counts(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    if (!sel.b[i]) continue;
    std::vector<double> trow = {theta.v[i * 2 + 0], theta.v[i * 2 + 1]};
    const double p = softmax_vec(trow)[1];
    double c;
    if (sel.d[i]) {
      c = static_cast<double>(sites[i].q[sel.k_star[i]]);
    } else {
      const int K = static_cast<int>(sites[i].dims.size());
      std::vector<double> prow(K);
      for (int k = 0; k < K; ++k) prow[k] = phi.v[i * K + k];
      const std::vector<double> pp = softmax_vec(prow);
      c = 0.0;
      for (int k = 0; k < K; ++k) c += pp[k] * sites[i].q[k];
    }
    counts[i] = p * c;
  }
  return counts;
}

double expected_parameters(const Array& theta, const Array& phi, const SelectionState& sel,
                           const std::vector<ModuleSite>& sites) {
  double e = 0.0;
  for (double c : expected_site_counts(theta, phi, sel, sites)) e += c;
  return e;
}

double reduction_target(double expected, double budget, int max_triggers, int trigger_index) {
  if (trigger_index >= max_triggers)
    throw std::invalid_argument("reduction_target: trigger budget exhausted");
  return (expected - budget) / (max_triggers - trigger_index);
}

std::vector<int> select_modules_to_remove(const std::vector<double>& s_bar,
                                          SelectionState& sel,
                                          const std::vector<double>& site_counts,
                                          double target) {
  std::vector<int> removed;
  if (target <= 0.0) return removed;
  std::vector<int> order;
  for (size_t i = 0; i < sel.b.size(); ++i)
    if (sel.b[i]) order.push_back(static_cast<int>(i));
  // ascending sensitivity; ties -> higher index removed first
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (s_bar[a] != s_bar[b]) return s_bar[a] < s_bar[b];
    return a > b;
  });
  double acc = 0.0;
  for (int i : order) {
    if (acc + site_counts[i] > target) break;
    acc += site_counts[i];
    sel.b[i] = 0;
    sel.d[i] = 1;
    sel.k_star[i] = -1;
    removed.push_back(i);
  }
  return removed;
}

double dimension_stability(const std::vector<std::vector<double>>& window) {
  if (window.size() < 2) return kNotYetFixable;
  const size_t K = window.front().size();
  const size_t T = window.size();
  double kl = 0.0;
  for (size_t k = 0; k < K; ++k) {
    const double p = std::max(window.front()[k], 1e-8);
    const double q = std::max(window.back()[k], 1e-8);
    kl += p * std::log(p / q);
  }
  double sigma_mean = 0.0;
  for (size_t k = 0; k < K; ++k) {
    double mean = 0.0;
    for (const auto& row : window) mean += row[k];
    mean /= T;
    double var = 0.0;
    for (const auto& row : window) {
      const double d = row[k] - mean;
      var += d * d;
    }
    var /= T;  // population variance
    sigma_mean += std::sqrt(var);
  }
  sigma_mean /= K;
  return sigma_mean * kl;
}

std::vector<double> potential_dims(const Array& phi, const SelectionState& sel,
                                   const std::vector<ModuleSite>& sites) {
  const size_t n = sites.size();
  std::vector<double> v(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    if (!sel.b[i]) continue;  // removed: 0
    const auto& dims = sites[i].dims;
    if (sel.d[i]) {
      v[i] = dims[sel.k_star[i]];
      continue;
    }
    const int K = static_cast<int>(dims.size());
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (phi.v[i * K + k] > phi.v[i * K + best]) best = k;
    v[i] = dims[best];
  }
  return v;
}

int dim_fix_count(const SelectionState& sel, const std::vector<double>& v_prev,
                  const std::vector<double>& v_now, int max_triggers, int trigger_index) {
  if (trigger_index >= max_triggers)
    throw std::invalid_argument("dim_fix_count: trigger budget exhausted");
  int undetermined = 0;
  for (uint8_t di : sel.d)
    if (!di) ++undetermined;
  if (undetermined == 0) return 0;
  const double cos = cosine_similarity(v_prev, v_now);
  return static_cast<int>(std::floor(undetermined * cos / (max_triggers - trigger_index)));
}

std::vector<int> fix_dimensions(const std::vector<double>& lambda, int y,
                                const std::vector<double>& v_now, SelectionState& sel,
                                const std::vector<ModuleSite>& sites) {
  std::vector<int> fixed;
  if (y <= 0) return fixed;
  std::vector<int> order;
  for (size_t i = 0; i < sel.d.size(); ++i)
    if (sel.b[i] && !sel.d[i]) order.push_back(static_cast<int>(i));
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return lambda[a] < lambda[b]; });
  const int count = std::min<int>(y, static_cast<int>(order.size()));
  for (int j = 0; j < count; ++j) {
    const int i = order[j];
    const auto& dims = sites[i].dims;
    const auto it = std::find(dims.begin(), dims.end(), static_cast<int>(v_now[i]));
    if (it == dims.end())
      throw std::runtime_error("fix_dimensions: potential dim not a candidate for site " +
                               std::to_string(i));
    sel.d[i] = 1;
    sel.k_star[i] = static_cast<int>(it - dims.begin());
    fixed.push_back(i);
  }
  return fixed;
}

}  // namespace peftsearch
