#pragma once

// The disentangled search space: N module sites, each with a binary keep/drop
// gate (theta logits) and a categorical rank choice (phi logits) over the
// candidate dimension list, mixed by Gumbel-Softmax with weight entanglement
// (every rank uses the leading slices of one max-rank parameter block).

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "peftsearch/autodiff.hpp"
#include "peftsearch/backbone.hpp"

namespace peftsearch {

enum class ModuleKind { LoRA, AdapterLR, BitFit, LNFit };

std::string to_string(ModuleKind k);
ModuleKind module_kind_from_string(const std::string& s);
bool is_rank_parameterized(ModuleKind k);

struct SpaceConfig {
  std::vector<ModuleKind> kinds = {ModuleKind::LoRA, ModuleKind::AdapterLR,
                                   ModuleKind::BitFit, ModuleKind::LNFit};
  std::vector<int> dims = {1, 4, 8};
  bool adapter_nonlinearity = false;
};

struct ModuleSite {
  int index = 0;
  ModuleKind kind;
  Position position;
  std::vector<int> dims;
  std::vector<long> q;  // trainable-parameter count per candidate dim

  // entangled weights, sized for max(dims)
  Array w_down;  // LoRA A [d_in, rmax] / adapter down [d, rmax]
  Array w_up;    // LoRA B [rmax, d_out] / adapter up [rmax, d]
  Array bias;    // BitFit bias / LNFit scale delta [d_out]
  Array g_down, g_up, g_bias;  // gradient sinks

  long weight_count() const;
  void zero_grads();
  void init_weights(std::mt19937_64& rng);
};

struct ArchWeights {
  Array theta;  // [N,2]; column 0 = drop, column 1 = keep
  Array phi;    // [N,K] (ablation joint mode: [N,K+1], column 0 = off)
  Array g_theta, g_phi;
};

struct SelectionState {
  std::vector<uint8_t> b;   // keep indicators
  std::vector<uint8_t> d;   // dimension-determined indicators
  std::vector<int> k_star;  // fixed dim index, -1 when undefined
  int z = 0;
  int Z = 0;
  std::vector<double> v_prev;                           // previous potential-dimension vector
  std::vector<std::vector<std::vector<double>>> phi_window;  // per-site softmaxed rows since last trigger

  void init(const std::vector<ModuleSite>& sites, int max_triggers);
  void clear_windows(size_t n) { phi_window.assign(n, {}); }
};

enum class MixKind { SoftMix, GumbelSoft, GumbelHard, Discrete };

struct MixMode {
  MixKind kind = MixKind::SoftMix;
  double temperature = 1.0;
  // Discrete mode: per-site keep + dim from the selection state / architecture.
};

struct SupernetState {
  std::vector<ModuleSite> sites;
  ArchWeights arch;
  SelectionState selection;
  double gumbel_temperature = 1.0;
  bool joint_space = false;  // ablation: single categorical over {off} + dims

  int site_count() const { return static_cast<int>(sites.size()); }
  void init_arch();
  long max_total_params() const;
};

struct ArchSiteRecord {
  std::string kind;
  std::string position;
  bool kept = false;
  int dim = 0;
  long params = 0;

  bool operator==(const ArchSiteRecord&) const = default;
};

struct SearchedArchitecture {
  std::vector<ArchSiteRecord> sites;
  std::vector<int> dims;
  long total_params = 0;
  uint64_t config_hash = 0;
  uint64_t seed = 0;

  bool operator==(const SearchedArchitecture&) const = default;
};

long param_count(ModuleKind kind, const Position& pos, int dim);

std::vector<ModuleSite> enumerate_sites(const Backbone& bb, const SpaceConfig& space,
                                        std::mt19937_64& rng);

// Per-site mixed delta for a standalone input (unit-test surface; the model
// forward shares the same node builder).
Array mix_site_output(const ModuleSite& site, const ArchWeights& arch,
                      const SelectionState& sel, const Array& input, const MixMode& mode,
                      std::mt19937_64* rng);

SearchedArchitecture materialize_architecture(const SupernetState& sup);

// --- internals shared with the model forward ---

struct SiteCoeffs {
  int gate = -1;                 // scalar node, or -1 for exact off
  std::vector<int> dim_probs;    // scalar node per candidate dim (empty for dim-free kinds)
};

// delta nodes of one site given its mixing coefficients; input is the node
// feeding the site's position
int site_delta_nodes(Tape& tape, const ModuleSite& site, int input, int normed_input,
                     const SiteCoeffs& coeffs, bool adapter_nonlinearity);

// forward of one site at a single dim with externally provided weight slices
// (entanglement consistency test surface)
Array site_forward_single_dim(const ModuleSite& site, int dim, const Array& input,
                              const Array& normed_input, bool adapter_nonlinearity);

std::vector<double> softmax_vec(const std::vector<double>& x);
double gumbel_sample(std::mt19937_64& rng);

}  // namespace peftsearch
