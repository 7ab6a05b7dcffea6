#pragma once

// Early-selection engine: expected-parameter estimation, per-trigger reduction
// targets, adaptive binary module removal, dimension stability scoring, and
// adaptive dimension fixing.

#include <limits>
#include <vector>

#include "peftsearch/supernet.hpp"

namespace peftsearch {

inline constexpr double kNotYetFixable = std::numeric_limits<double>::infinity();

// Per-site probability-weighted expected parameter count p_n * C_n; removed
// sites contribute 0.
std::vector<double> expected_site_counts(const Array& theta, const Array& phi,
                                         const SelectionState& sel,
                                         const std::vector<ModuleSite>& sites);

double expected_parameters(const Array& theta, const Array& phi, const SelectionState& sel,
                           const std::vector<ModuleSite>& sites);

// R_z = (E_t - B) / (Z - z); callers treat R_z <= 0 as a no-removal trigger.
double reduction_target(double expected, double budget, int max_triggers, int trigger_index);

// Greedy ascending-sensitivity removal while the cumulative expected count
// stays within the target (ties -> higher index removed first). Updates
// b, d and k_star for removed sites; returns the removed indices.
std::vector<int> select_modules_to_remove(const std::vector<double>& s_bar,
                                          SelectionState& sel,
                                          const std::vector<double>& site_counts,
                                          double target);

// lambda = mean_k sigma_k * KL(first row || last row), population sigma on
// softmaxed probabilities, 1e-8 probability floor in the KL; windows shorter
// than 2 give the "not yet fixable" sentinel.
double dimension_stability(const std::vector<std::vector<double>>& window);

// Removed -> 0; fixed -> dims[k*]; otherwise dims[argmax softmax(phi row)],
// ties -> smaller index.
std::vector<double> potential_dims(const Array& phi, const SelectionState& sel,
                                   const std::vector<ModuleSite>& sites);

// Y_z = floor(#undetermined * cos(v_prev, v_now) / (Z - z))
int dim_fix_count(const SelectionState& sel, const std::vector<double>& v_prev,
                  const std::vector<double>& v_now, int max_triggers, int trigger_index);

// Fix the Y undetermined sites with lowest stability (ties -> lower index) at
// the dim named by v_now; returns the fixed indices.
std::vector<int> fix_dimensions(const std::vector<double>& lambda, int y,
                                const std::vector<double>& v_now, SelectionState& sel,
                                const std::vector<ModuleSite>& sites);

}  // namespace peftsearch
