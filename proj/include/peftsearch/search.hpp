#pragma once

// Budget-guided iterative search: alternate weight / gate / dimension steps,
// trigger evaluation every step, early selection on fire, termination when the
// trigger budget is exhausted, and final-architecture retraining. Also hosts
// the ablation search modes.

#include <cstdint>
#include <string>
#include <vector>

#include "peftsearch/backbone.hpp"
#include "peftsearch/model.hpp"
#include "peftsearch/selector.hpp"
#include "peftsearch/sensitivity.hpp"
#include "peftsearch/supernet.hpp"
#include "peftsearch/task.hpp"

namespace peftsearch {

enum class SearchMode { BIPEFT, Entangled, BinaryThenDim, DimThenBinary, NoSelection };

SearchMode search_mode_from_string(const std::string& s);
std::string to_string(SearchMode m);

struct BudgetConfig {
  double budget_ratio = 0.05;  // fraction of backbone parameters
  int Z = 12;                  // max triggers
  double tau = 0.85;
  int H = 5;
  double gamma = 0.85;
  int T = 2000;
  double lr_weights = 3e-4;
  double lr_arch = 1e-2;
  int batch_size = 8;
  double temperature = 1.0;
  uint64_t seed = 1;
  SearchMode mode = SearchMode::BIPEFT;

  void validate() const;
};

struct StepRecord {
  int step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double beta = 0.0;
  double expected_params = 0.0;
};

struct TriggerRecord {
  int z = 0;
  int step = 0;
  double reduction_target = 0.0;
  std::vector<int> removed;
  int fix_count = 0;
  std::vector<int> fixed;
};

struct SearchTrace {
  std::vector<StepRecord> steps;
  std::vector<TriggerRecord> triggers;
  std::string warning;
};

struct SearchResult {
  SearchedArchitecture architecture;
  SearchTrace trace;
};

// AdamW with optional per-row freezing (arch logits) and linear lr decay.
class AdamW {
 public:
  struct Slot {
    Array* value;
    Array* grad;
    int row_width = 0;                       // 0: no row structure
    const std::vector<uint8_t>* frozen_rows = nullptr;
    std::vector<double> m, v;
  };

  AdamW(double lr, double weight_decay, int total_steps);
  void add(Array* value, Array* grad, int row_width = 0,
           const std::vector<uint8_t>* frozen_rows = nullptr);
  void step();

 private:
  double lr_, wd_;
  int total_steps_;
  int t_ = 0;
  std::vector<Slot> slots_;
};

SearchResult run_search(const Backbone& bb, const SpaceConfig& space, const SplitData& data,
                        const BudgetConfig& cfg);

struct RetrainMetrics {
  EvalMetrics val;
  EvalMetrics test;
  long trainable_params = 0;
};

RetrainMetrics retrain(const SearchedArchitecture& arch, const Backbone& bb,
                       const SpaceConfig& space, const SplitData& data, int steps,
                       uint64_t seed);

// Random architecture with total parameters <= budget (baseline generator).
SearchedArchitecture random_architecture(const Backbone& bb, const SpaceConfig& space,
                                         long budget, uint64_t seed);

}  // namespace peftsearch
