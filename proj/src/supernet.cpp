#include "peftsearch/supernet.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace peftsearch {

std::string to_string(ModuleKind k) {
  switch (k) {
    case ModuleKind::LoRA: return "LoRA";
    case ModuleKind::AdapterLR: return "AdapterLR";
    case ModuleKind::BitFit: return "BitFit";
    case ModuleKind::LNFit: return "LNFit";
  }
  return "?";
}

ModuleKind module_kind_from_string(const std::string& s) {
  if (s == "LoRA" || s == "lora") return ModuleKind::LoRA;
  if (s == "AdapterLR" || s == "adapter_lr") return ModuleKind::AdapterLR;
  if (s == "BitFit" || s == "bitfit") return ModuleKind::BitFit;
  if (s == "LNFit" || s == "lnfit") return ModuleKind::LNFit;
  throw std::invalid_argument("unknown module kind: " + s);
}

bool is_rank_parameterized(ModuleKind k) {
  return k == ModuleKind::LoRA || k == ModuleKind::AdapterLR;
}

std::vector<double> softmax_vec(const std::vector<double>& x) {
  std::vector<double> y(x.size());
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - mx);
    s += y[i];
  }
  for (auto& v : y) v /= s;
  return y;
}

double gumbel_sample(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(1e-12, 1.0);
  return -std::log(-std::log(u(rng)));
}

long param_count(ModuleKind kind, const Position& pos, int dim) {
  switch (kind) {
    case ModuleKind::LoRA: return static_cast<long>(dim) * (pos.d_in + pos.d_out);
    case ModuleKind::AdapterLR: return 2L * pos.d_out * dim;
    case ModuleKind::BitFit: return pos.d_out;
    case ModuleKind::LNFit: return pos.d_out;
  }
  return 0;
}

long ModuleSite::weight_count() const {
  return static_cast<long>(w_down.size()) + w_up.size() + bias.size();
}

void ModuleSite::zero_grads() {
  std::fill(g_down.v.begin(), g_down.v.end(), 0.0);
  std::fill(g_up.v.begin(), g_up.v.end(), 0.0);
  std::fill(g_bias.v.begin(), g_bias.v.end(), 0.0);
}

void ModuleSite::init_weights(std::mt19937_64& rng) {
  const int rmax = dims.empty() ? 0 : dims.back();
  // zero-init convention: the supernet starts at the pretrained function
  switch (kind) {
    case ModuleKind::LoRA: {
      w_down = Array({position.d_in, rmax});
      std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(position.d_in));
      for (auto& x : w_down.v) x = dist(rng);
      w_up = Array({rmax, position.d_out});
      break;
    }
    case ModuleKind::AdapterLR: {
      w_down = Array({position.d_out, rmax});
      std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(position.d_out));
      for (auto& x : w_down.v) x = dist(rng);
      w_up = Array({rmax, position.d_out});
      break;
    }
    case ModuleKind::BitFit:
    case ModuleKind::LNFit:
      bias = Array({position.d_out});
      break;
  }
  g_down = Array::zeros_like(w_down);
  g_up = Array::zeros_like(w_up);
  g_bias = Array::zeros_like(bias);
}

void SelectionState::init(const std::vector<ModuleSite>& sites, int max_triggers) {
  const size_t n = sites.size();
  b.assign(n, 1);
  d.assign(n, 0);
  k_star.assign(n, -1);
  z = 0;
  Z = max_triggers;
  v_prev.assign(n, 0.0);
  phi_window.assign(n, {});
  // dimension-free kinds are born fixed so the dimension machinery skips them
  for (size_t i = 0; i < n; ++i)
    if (!is_rank_parameterized(sites[i].kind)) {
      d[i] = 1;
      k_star[i] = 0;
    }
}

void SupernetState::init_arch() {
  const int n = site_count();
  const int k = n == 0 ? 1 : static_cast<int>(sites[0].dims.size());
  const int cols = joint_space ? k + 1 : k;
  arch.theta = Array({std::max(n, 1), 2});
  arch.phi = Array({std::max(n, 1), cols});
  arch.g_theta = Array::zeros_like(arch.theta);
  arch.g_phi = Array::zeros_like(arch.phi);
}

long SupernetState::max_total_params() const {
  long total = 0;
  for (const auto& s : sites) total += s.q.back();
  return total;
}

namespace {
bool kind_admits(ModuleKind kind, PosKind pos) {
  switch (kind) {
    case ModuleKind::LoRA: return is_linear_pos(pos);
    case ModuleKind::AdapterLR: return pos == PosKind::O || pos == PosKind::W2;
    case ModuleKind::BitFit: return true;  // linears and layer norms
    case ModuleKind::LNFit: return pos == PosKind::LN;
  }
  return false;
}
}  // namespace

std::vector<ModuleSite> enumerate_sites(const Backbone& bb, const SpaceConfig& space,
                                        std::mt19937_64& rng) {
  if (space.dims.empty()) throw std::invalid_argument("enumerate_sites: empty dim list");
  for (size_t i = 1; i < space.dims.size(); ++i)
    if (space.dims[i] <= space.dims[i - 1])
      throw std::invalid_argument("enumerate_sites: dims must be strictly increasing");
  std::vector<ModuleSite> sites;
  for (ModuleKind kind : space.kinds) {
    for (const Position& pos : bb.catalog) {
      if (!kind_admits(kind, pos.kind)) continue;
      ModuleSite s;
      s.index = static_cast<int>(sites.size());
      s.kind = kind;
      s.position = pos;
      s.dims = space.dims;
      for (int dim : s.dims) s.q.push_back(param_count(kind, pos, dim));
      s.init_weights(rng);
      sites.push_back(std::move(s));
    }
  }
  return sites;
}

int site_delta_nodes(Tape& tape, const ModuleSite& site, int input, int normed_input,
                     const SiteCoeffs& coeffs, bool adapter_nonlinearity) {
  if (coeffs.gate == -1) return -1;  // removed: exact zero, no graph
  const int down = tape.leaf(site.w_down, const_cast<Array*>(&site.g_down), "w_down");
  const int up = tape.leaf(site.w_up, const_cast<Array*>(&site.g_up), "w_up");
  const int bias = tape.leaf(site.bias, const_cast<Array*>(&site.g_bias), "bias");
  int mixed = -1;
  switch (site.kind) {
    case ModuleKind::LoRA:
    case ModuleKind::AdapterLR: {
      const int x = site.kind == ModuleKind::AdapterLR ? input : input;
      for (size_t k = 0; k < site.dims.size(); ++k) {
        if (k >= coeffs.dim_probs.size() || coeffs.dim_probs[k] == -1) continue;
        const int r = site.dims[k];
        int h = tape.matmul(x, tape.slice_cols(down, 0, r));
        if (site.kind == ModuleKind::AdapterLR && adapter_nonlinearity) h = tape.gelu(h);
        int dk = tape.matmul(h, tape.slice_rows(up, 0, r));
        dk = tape.mul_scalar(dk, coeffs.dim_probs[k]);
        mixed = mixed == -1 ? dk : tape.add(mixed, dk);
      }
      break;
    }
    case ModuleKind::BitFit: {
      // bias broadcast over the rows of the position's output
      const int zeros = tape.constant(Array({tape.val(input).rows(), site.position.d_out}), "bitfit_zero");
      mixed = tape.add_rowvec(zeros, bias);
      break;
    }
    case ModuleKind::LNFit: {
      mixed = tape.mul_rowvec(normed_input, bias);
      break;
    }
  }
  if (mixed == -1) throw std::runtime_error("site_delta_nodes: no admissible dimension branch");
  return tape.mul_scalar(mixed, coeffs.gate);
}

Array site_forward_single_dim(const ModuleSite& site, int dim, const Array& input,
                              const Array& normed_input, bool adapter_nonlinearity) {
  Tape tape;
  const int x = tape.constant(input, "x");
  const int nx = normed_input.size() > 0 ? tape.constant(normed_input, "nx") : x;
  SiteCoeffs coeffs;
  coeffs.gate = tape.constant(Array({1}, 1.0), "gate1");
  if (is_rank_parameterized(site.kind)) {
    const auto it = std::find(site.dims.begin(), site.dims.end(), dim);
    if (it == site.dims.end()) throw std::invalid_argument("site_forward_single_dim: dim not a candidate");
    coeffs.dim_probs.assign(site.dims.size(), -1);
    coeffs.dim_probs[it - site.dims.begin()] = tape.constant(Array({1}, 1.0), "p1");
  }
  const int d = site_delta_nodes(tape, site, x, nx, coeffs, adapter_nonlinearity);
  return tape.val(d);
}

namespace {
// coefficient nodes for a standalone single-site evaluation
SiteCoeffs standalone_coeffs(Tape& tape, const ModuleSite& site, const ArchWeights& arch,
                             const SelectionState& sel, const MixMode& mode,
                             std::mt19937_64* rng) {
  SiteCoeffs c;
  const int n = site.index;
  if (sel.b[n] == 0) return c;  // gate -1: removed
  const int K = static_cast<int>(site.dims.size());

  auto row_probs = [&](const Array& logits, int row, int cols) {
    std::vector<double> r(cols);
    for (int j = 0; j < cols; ++j) r[j] = logits.v[static_cast<long>(row) * cols + j];
    if ((mode.kind == MixKind::GumbelSoft || mode.kind == MixKind::GumbelHard) && rng)
      for (auto& v : r) v += gumbel_sample(*rng);
    for (auto& v : r) v /= mode.temperature;
    std::vector<double> p = softmax_vec(r);
    if (mode.kind == MixKind::GumbelHard) {
      int best = 0;
      for (int j = 1; j < cols; ++j)
        if (p[j] > p[best]) best = j;
      std::fill(p.begin(), p.end(), 0.0);
      p[best] = 1.0;
    }
    return p;
  };

  if (mode.kind == MixKind::Discrete) {
    c.gate = tape.constant(Array({1}, 1.0), "gate");
    if (is_rank_parameterized(site.kind)) {
      if (sel.d[n] == 0 || sel.k_star[n] < 0)
        throw std::runtime_error("mix_site_output: Discrete mode with undetermined dimension for kept site " +
                                 std::to_string(n));
      c.dim_probs.assign(K, -1);
      c.dim_probs[sel.k_star[n]] = tape.constant(Array({1}, 1.0), "p");
    }
    return c;
  }

  const auto gp = row_probs(arch.theta, n, 2);
  c.gate = tape.constant(Array({1}, gp[1]), "gate");
  if (is_rank_parameterized(site.kind)) {
    c.dim_probs.assign(K, -1);
    if (sel.d[n] == 1) {
      c.dim_probs[sel.k_star[n]] = tape.constant(Array({1}, 1.0), "p");
    } else {
      const auto pp = row_probs(arch.phi, n, K);
      for (int k = 0; k < K; ++k)
        if (pp[k] != 0.0) c.dim_probs[k] = tape.constant(Array({1}, pp[k]), "p");
    }
  }
  return c;
}
}  // namespace

Array mix_site_output(const ModuleSite& site, const ArchWeights& arch,
                      const SelectionState& sel, const Array& input, const MixMode& mode,
                      std::mt19937_64* rng) {
  const int rows = input.rows();
  Tape tape;
  SiteCoeffs coeffs = standalone_coeffs(tape, site, arch, sel, mode, rng);
  if (coeffs.gate == -1) return Array({rows, site.position.d_out});
  const int x = tape.constant(input, "x");
  int nx = x;
  if (site.kind == ModuleKind::LNFit) nx = tape.layernorm_rows(x);
  const int d = site_delta_nodes(tape, site, x, nx, coeffs, false);
  return tape.val(d);
}

SearchedArchitecture materialize_architecture(const SupernetState& sup) {
  SearchedArchitecture out;
  out.dims = sup.sites.empty() ? std::vector<int>{} : sup.sites[0].dims;
  for (const auto& site : sup.sites) {
    const int n = site.index;
    ArchSiteRecord rec;
    rec.kind = to_string(site.kind);
    rec.position = site.position.name;
    const int K = static_cast<int>(site.dims.size());
    if (sup.joint_space) {
      // joint categorical over {off} + dims; ties break toward smaller column
      int best = 0;
      for (int j = 1; j <= K; ++j)
        if (sup.arch.phi.v[static_cast<long>(n) * (K + 1) + j] >
            sup.arch.phi.v[static_cast<long>(n) * (K + 1) + best])
          best = j;
      rec.kept = best > 0;
      if (rec.kept) {
        const int k = is_rank_parameterized(site.kind) ? best - 1 : 0;
        rec.dim = site.dims[k];
        rec.params = site.q[k];
      }
    } else {
      const bool kept = sup.selection.b[n] == 1 &&
                        sup.arch.theta.v[static_cast<long>(n) * 2 + 1] >
                            sup.arch.theta.v[static_cast<long>(n) * 2 + 0];
      rec.kept = kept;
      if (kept) {
        int k = 0;
        if (sup.selection.d[n] == 1 && sup.selection.k_star[n] >= 0) {
          k = sup.selection.k_star[n];
        } else {
          for (int j = 1; j < K; ++j)
            if (sup.arch.phi.v[static_cast<long>(n) * K + j] >
                sup.arch.phi.v[static_cast<long>(n) * K + k])
              k = j;
        }
        rec.dim = site.dims[k];
        rec.params = site.q[k];
      }
    }
    out.total_params += rec.params;
    out.sites.push_back(std::move(rec));
  }
  return out;
}

}  // namespace peftsearch
