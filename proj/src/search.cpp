#include "peftsearch/search.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace peftsearch {

SearchMode search_mode_from_string(const std::string& s) {
  if (s == "bipeft") return SearchMode::BIPEFT;
  if (s == "entangled") return SearchMode::Entangled;
  if (s == "binary-then-dim") return SearchMode::BinaryThenDim;
  if (s == "dim-then-binary") return SearchMode::DimThenBinary;
  if (s == "no-selection") return SearchMode::NoSelection;
  throw std::invalid_argument("unknown search mode: " + s);
}

std::string to_string(SearchMode m) {
  switch (m) {
    case SearchMode::BIPEFT: return "bipeft";
    case SearchMode::Entangled: return "entangled";
    case SearchMode::BinaryThenDim: return "binary-then-dim";
    case SearchMode::DimThenBinary: return "dim-then-binary";
    case SearchMode::NoSelection: return "no-selection";
  }
  return "?";
}

void BudgetConfig::validate() const {
  if (!(budget_ratio > 0.0 && budget_ratio < 1.0))
    throw std::invalid_argument("BudgetConfig: budget_ratio must be in (0,1)");
  if (Z < 1) throw std::invalid_argument("BudgetConfig: Z must be >= 1");
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("BudgetConfig: tau must be in (0,1]");
  if (H < 1) throw std::invalid_argument("BudgetConfig: H must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw std::invalid_argument("BudgetConfig: gamma must be in [0,1]");
  if (T < 1) throw std::invalid_argument("BudgetConfig: T must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("BudgetConfig: batch_size must be >= 1");
  if (temperature <= 0.0) throw std::invalid_argument("BudgetConfig: temperature must be > 0");
}

AdamW::AdamW(double lr, double weight_decay, int total_steps)
    : lr_(lr), wd_(weight_decay), total_steps_(std::max(total_steps, 1)) {}

void AdamW::add(Array* value, Array* grad, int row_width,
                const std::vector<uint8_t>* frozen_rows) {
  Slot s;
  s.value = value;
  s.grad = grad;
  s.row_width = row_width;
  s.frozen_rows = frozen_rows;
  s.m.assign(value->v.size(), 0.0);
  s.v.assign(value->v.size(), 0.0);
  slots_.push_back(std::move(s));
}

void AdamW::step() {
  ++t_;
  const double decay = std::max(0.0, 1.0 - static_cast<double>(t_ - 1) / total_steps_);
  const double lr = lr_ * decay;
  const double bc1 = 1.0 - std::pow(0.9, t_);
  const double bc2 = 1.0 - std::pow(0.999, t_);
  for (Slot& s : slots_) {
    for (size_t i = 0; i < s.value->v.size(); ++i) {
      if (s.frozen_rows && s.row_width > 0 && (*s.frozen_rows)[i / s.row_width]) continue;
      const double g = s.grad->v[i];
      s.m[i] = 0.9 * s.m[i] + 0.1 * g;
      s.v[i] = 0.999 * s.v[i] + 0.001 * g * g;
      const double mh = s.m[i] / bc1;
      const double vh = s.v[i] / bc2;
      s.value->v[i] -= lr * (mh / (std::sqrt(vh) + 1e-8) + wd_ * s.value->v[i]);
    }
  }
}

namespace {

struct SearchRuntime {
  SupernetState sup;
  std::vector<uint8_t> frozen_theta, frozen_phi;
  std::vector<Example> weight_split, arch_split;
  std::mt19937_64 rng;
  std::vector<std::vector<double>> flat_w, flat_gtr, flat_gval;

  void zero_site_grads() {
    for (auto& s : sup.sites) s.zero_grads();
  }

  void harvest(std::vector<std::vector<double>>& dst) {
    dst.resize(sup.sites.size());
    for (size_t n = 0; n < sup.sites.size(); ++n) {
      const auto& s = sup.sites[n];
      auto& out = dst[n];
      out.clear();
      out.insert(out.end(), s.g_down.v.begin(), s.g_down.v.end());
      out.insert(out.end(), s.g_up.v.begin(), s.g_up.v.end());
      out.insert(out.end(), s.g_bias.v.begin(), s.g_bias.v.end());
    }
  }

  void flatten_weights() {
    flat_w.resize(sup.sites.size());
    for (size_t n = 0; n < sup.sites.size(); ++n) {
      const auto& s = sup.sites[n];
      auto& out = flat_w[n];
      out.clear();
      out.insert(out.end(), s.w_down.v.begin(), s.w_down.v.end());
      out.insert(out.end(), s.w_up.v.begin(), s.w_up.v.end());
      out.insert(out.end(), s.bias.v.begin(), s.bias.v.end());
    }
  }
};

void split_train(const SplitData& data, SearchRuntime& rt) {
  // disjoint halves: weight-train and arch-train
  for (size_t i = 0; i < data.train.size(); ++i)
    (i % 2 == 0 ? rt.weight_split : rt.arch_split).push_back(data.train[i]);
  if (rt.weight_split.empty() || rt.arch_split.empty())
    throw std::invalid_argument("run_search: train split too small to halve");
}

double weight_step(SearchRuntime& rt, const Backbone& bb, const BudgetConfig& cfg, AdamW& opt) {
  Batch batch = sample_batch(rt.weight_split, cfg.batch_size, rt.rng);
  rt.zero_site_grads();
  PassOptions opts;
  opts.gumbel_constants = true;  // soft Gumbel sample for the detached arch coefficients
  opts.temperature = cfg.temperature;
  opts.rng = &rt.rng;
  Tape tape;
  ForwardResult fr = model_forward(tape, bb, batch, &rt.sup, opts, nullptr);
  tape.backward(fr.loss);
  opt.step();
  return tape.val(fr.loss).v[0];
}

double arch_step(SearchRuntime& rt, const Backbone& bb, const BudgetConfig& cfg, AdamW& opt,
                 bool learn_theta, bool learn_phi) {
  Batch batch = sample_batch(rt.arch_split, cfg.batch_size, rt.rng);
  rt.zero_site_grads();
  std::fill(rt.sup.arch.g_theta.v.begin(), rt.sup.arch.g_theta.v.end(), 0.0);
  std::fill(rt.sup.arch.g_phi.v.begin(), rt.sup.arch.g_phi.v.end(), 0.0);
  PassOptions opts;
  opts.learn_theta = learn_theta;
  opts.learn_phi = learn_phi;
  opts.gumbel_learned = true;  // hard straight-through on the learned logits
  opts.temperature = cfg.temperature;
  opts.rng = &rt.rng;
  Tape tape;
  ForwardResult fr = model_forward(tape, bb, batch, &rt.sup, opts, nullptr);
  tape.backward(fr.loss);
  opt.step();
  return tape.val(fr.loss).v[0];
}

void push_phi_windows(SearchRuntime& rt) {
  const int K = rt.sup.sites.empty() ? 0 : static_cast<int>(rt.sup.sites[0].dims.size());
  for (size_t n = 0; n < rt.sup.sites.size(); ++n) {
    const auto& sel = rt.sup.selection;
    if (!sel.b[n] || sel.d[n]) continue;
    std::vector<double> row(K);
    for (int k = 0; k < K; ++k) row[k] = rt.sup.arch.phi.v[n * K + k];
    rt.sup.selection.phi_window[n].push_back(softmax_vec(row));
  }
}

SearchedArchitecture full_space_architecture(const SupernetState& sup) {
  SearchedArchitecture out;
  out.dims = sup.sites.empty() ? std::vector<int>{} : sup.sites[0].dims;
  for (const auto& site : sup.sites) {
    ArchSiteRecord rec;
    rec.kind = to_string(site.kind);
    rec.position = site.position.name;
    rec.kept = true;
    const int k = is_rank_parameterized(site.kind) ? static_cast<int>(site.dims.size()) - 1 : 0;
    rec.dim = site.dims[k];
    rec.params = site.q[k];
    out.total_params += rec.params;
    out.sites.push_back(std::move(rec));
  }
  return out;
}

// Hard-budget enforcement on the materialized architecture: shrink the kept
// site with the lowest priority one dim step at a time; drop it once it
// bottoms out (ties -> lower index).
void trim_to_budget(const std::vector<ModuleSite>& sites, SearchedArchitecture& arch,
                    long budget, const std::vector<double>& priority, SearchTrace& trace) {
  while (arch.total_params > budget) {
    int victim = -1;
    for (size_t i = 0; i < sites.size(); ++i) {
      if (!arch.sites[i].kept) continue;
      if (victim == -1 || priority[i] < priority[victim]) victim = static_cast<int>(i);
    }
    if (victim == -1) break;
    auto& rec = arch.sites[victim];
    const auto& site = sites[victim];
    arch.total_params -= rec.params;
    const auto it = std::find(site.dims.begin(), site.dims.end(), rec.dim);
    const int k = static_cast<int>(it - site.dims.begin());
    if (is_rank_parameterized(site.kind) && k > 0) {
      rec.dim = site.dims[k - 1];
      rec.params = site.q[k - 1];
      arch.total_params += rec.params;
    } else {
      rec.kept = false;
      rec.dim = 0;
      rec.params = 0;
    }
    if (trace.warning.empty()) trace.warning = "post-search budget trim applied";
  }
}

// keep probability per site, used as the trim priority in the ablation modes
std::vector<double> keep_probabilities(const SupernetState& sup) {
  std::vector<double> p(sup.sites.size(), 0.0);
  const int K = sup.sites.empty() ? 0 : static_cast<int>(sup.sites[0].dims.size());
  for (size_t n = 0; n < sup.sites.size(); ++n) {
    if (sup.joint_space) {
      std::vector<double> row(K + 1);
      for (int j = 0; j <= K; ++j) row[j] = sup.arch.phi.v[n * (K + 1) + j];
      p[n] = 1.0 - softmax_vec(row)[0];
    } else {
      p[n] = softmax_vec({sup.arch.theta.v[n * 2], sup.arch.theta.v[n * 2 + 1]})[1];
    }
  }
  return p;
}

SearchResult run_entangled(const Backbone& bb, const SpaceConfig& space, const SplitData& data,
                           const BudgetConfig& cfg) {
  SearchRuntime rt;
  rt.rng.seed(cfg.seed);
  rt.sup.joint_space = true;
  rt.sup.sites = enumerate_sites(bb, space, rt.rng);
  rt.sup.selection.init(rt.sup.sites, cfg.Z);
  rt.sup.init_arch();
  split_train(data, rt);

  AdamW opt_w(cfg.lr_weights, 0.01, cfg.T);
  for (auto& s : rt.sup.sites) {
    opt_w.add(&s.w_down, &s.g_down);
    opt_w.add(&s.w_up, &s.g_up);
    opt_w.add(&s.bias, &s.g_bias);
  }
  rt.frozen_phi.assign(rt.sup.sites.size(), 0);
  AdamW opt_a(cfg.lr_arch, 0.0, cfg.T);
  opt_a.add(&rt.sup.arch.phi, &rt.sup.arch.g_phi, rt.sup.arch.phi.cols(), &rt.frozen_phi);

  SearchTrace trace;
  for (int t = 1; t <= cfg.T; ++t) {
    StepRecord rec;
    rec.step = t;
    rec.train_loss = weight_step(rt, bb, cfg, opt_w);
    rec.val_loss = arch_step(rt, bb, cfg, opt_a, false, true);
    trace.steps.push_back(rec);
  }
  SearchedArchitecture arch = materialize_architecture(rt.sup);
  trim_to_budget(rt.sup.sites, arch,
                 static_cast<long>(cfg.budget_ratio * bb.param_count()),
                 keep_probabilities(rt.sup), trace);
  return {std::move(arch), std::move(trace)};
}

SearchResult run_two_stage(const Backbone& bb, const SpaceConfig& space, const SplitData& data,
                           const BudgetConfig& cfg, bool binary_first) {
  SearchRuntime rt;
  rt.rng.seed(cfg.seed);
  rt.sup.sites = enumerate_sites(bb, space, rt.rng);
  rt.sup.selection.init(rt.sup.sites, cfg.Z);
  rt.sup.init_arch();
  split_train(data, rt);

  AdamW opt_w(cfg.lr_weights, 0.01, cfg.T);
  for (auto& s : rt.sup.sites) {
    opt_w.add(&s.w_down, &s.g_down);
    opt_w.add(&s.w_up, &s.g_up);
    opt_w.add(&s.bias, &s.g_bias);
  }
  const size_t n = rt.sup.sites.size();
  rt.frozen_theta.assign(n, 0);
  rt.frozen_phi.assign(n, 0);
  AdamW opt_t(cfg.lr_arch, 0.0, cfg.T);
  opt_t.add(&rt.sup.arch.theta, &rt.sup.arch.g_theta, 2, &rt.frozen_theta);
  AdamW opt_p(cfg.lr_arch, 0.0, cfg.T);
  opt_p.add(&rt.sup.arch.phi, &rt.sup.arch.g_phi, rt.sup.arch.phi.cols(), &rt.frozen_phi);

  SearchTrace trace;
  const int half = std::max(cfg.T / 2, 1);
  auto run_phase = [&](int steps, bool theta_phase) {
    for (int t = 0; t < steps; ++t) {
      StepRecord rec;
      rec.step = static_cast<int>(trace.steps.size()) + 1;
      rec.train_loss = weight_step(rt, bb, cfg, opt_w);
      rec.val_loss = arch_step(rt, bb, cfg, theta_phase ? opt_t : opt_p, theta_phase, !theta_phase);
      trace.steps.push_back(rec);
    }
  };
  auto freeze_binary = [&] {
    for (size_t i = 0; i < n; ++i) {
      const bool keep = rt.sup.arch.theta.v[i * 2 + 1] > rt.sup.arch.theta.v[i * 2 + 0];
      if (!keep) {
        rt.sup.selection.b[i] = 0;
        rt.sup.selection.d[i] = 1;
        rt.sup.selection.k_star[i] = -1;
      }
      rt.frozen_theta[i] = 1;
    }
  };
  auto freeze_dims = [&] {
    if (rt.sup.sites.empty()) return;
    const int K = static_cast<int>(rt.sup.sites[0].dims.size());
    for (size_t i = 0; i < n; ++i) {
      if (rt.sup.selection.d[i]) continue;
      int best = 0;
      for (int k = 1; k < K; ++k)
        if (rt.sup.arch.phi.v[i * K + k] > rt.sup.arch.phi.v[i * K + best]) best = k;
      rt.sup.selection.d[i] = 1;
      rt.sup.selection.k_star[i] = best;
      rt.frozen_phi[i] = 1;
    }
  };

  if (binary_first) {
    run_phase(half, true);
    freeze_binary();
    run_phase(cfg.T - half, false);
  } else {
    run_phase(half, false);
    freeze_dims();
    run_phase(cfg.T - half, true);
  }
  SearchedArchitecture arch = materialize_architecture(rt.sup);
  trim_to_budget(rt.sup.sites, arch,
                 static_cast<long>(cfg.budget_ratio * bb.param_count()),
                 keep_probabilities(rt.sup), trace);
  return {std::move(arch), std::move(trace)};
}

SearchResult run_iterative(const Backbone& bb, const SpaceConfig& space, const SplitData& data,
                           const BudgetConfig& cfg, bool selection_enabled) {
  SearchRuntime rt;
  rt.rng.seed(cfg.seed);
  rt.sup.sites = enumerate_sites(bb, space, rt.rng);
  rt.sup.selection.init(rt.sup.sites, cfg.Z);
  rt.sup.init_arch();
  rt.sup.gumbel_temperature = cfg.temperature;
  split_train(data, rt);

  const double budget = cfg.budget_ratio * bb.param_count();
  SearchTrace trace;
  if (rt.sup.max_total_params() <= budget) {
    trace.warning = "budget exceeds the whole search space; returning the full space";
    return {full_space_architecture(rt.sup), std::move(trace)};
  }

  AdamW opt_w(cfg.lr_weights, 0.01, cfg.T);
  for (auto& s : rt.sup.sites) {
    opt_w.add(&s.w_down, &s.g_down);
    opt_w.add(&s.w_up, &s.g_up);
    opt_w.add(&s.bias, &s.g_bias);
  }
  const size_t n = rt.sup.sites.size();
  rt.frozen_theta.assign(n, 0);
  rt.frozen_phi.assign(n, 0);
  AdamW opt_t(cfg.lr_arch, 0.0, cfg.T);
  opt_t.add(&rt.sup.arch.theta, &rt.sup.arch.g_theta, 2, &rt.frozen_theta);
  AdamW opt_p(cfg.lr_arch, 0.0, cfg.T);
  opt_p.add(&rt.sup.arch.phi, &rt.sup.arch.g_phi, rt.sup.arch.phi.cols(), &rt.frozen_phi);

  SensitivityState sens;
  sens.init(n, cfg.gamma);
  IndicatorHistory history;
  history.window = cfg.H;
  SelectionState& sel = rt.sup.selection;
  sel.v_prev = potential_dims(rt.sup.arch.phi, sel, rt.sup.sites);

  for (int t = 1; t <= cfg.T; ++t) {
    StepRecord rec;
    rec.step = t;
    rec.train_loss = weight_step(rt, bb, cfg, opt_w);
    rt.harvest(rt.flat_gtr);
    rec.val_loss = arch_step(rt, bb, cfg, opt_t, true, false);
    rt.harvest(rt.flat_gval);
    arch_step(rt, bb, cfg, opt_p, false, true);
    push_phi_windows(rt);

    // sensitivity accumulation from the gradients already computed this step
    rt.flatten_weights();
    std::vector<std::vector<SiteGradView>> views(n);
    for (size_t i = 0; i < n; ++i)
      views[i].push_back({&rt.flat_w[i], &rt.flat_gtr[i], &rt.flat_gval[i]});
    std::vector<uint8_t> keep(sel.b.begin(), sel.b.end());
    ema_update(sens, module_sensitivity(views, keep));

    const std::vector<double> counts =
        expected_site_counts(rt.sup.arch.theta, rt.sup.arch.phi, sel, rt.sup.sites);
    double expected = 0.0;
    for (double c : counts) expected += c;
    rec.expected_params = expected;

    history.push(importance_indicator(sens.s_bar, counts, keep, budget));
    const TriggerResult trig = stability_and_trigger(history, cfg.tau);
    rec.beta = trig.beta;
    trace.steps.push_back(rec);

    if (selection_enabled && trig.fire && sel.z < sel.Z) {
      TriggerRecord tr;
      tr.z = sel.z;
      tr.step = t;
      tr.reduction_target = reduction_target(expected, budget, sel.Z, sel.z);
      tr.removed = select_modules_to_remove(sens.s_bar, sel, counts, tr.reduction_target);
      for (int i : tr.removed) {
        rt.frozen_theta[i] = 1;
        rt.frozen_phi[i] = 1;
      }
      std::vector<double> lambda(n, kNotYetFixable);
      for (size_t i = 0; i < n; ++i)
        if (sel.b[i] && !sel.d[i]) lambda[i] = dimension_stability(sel.phi_window[i]);
      const std::vector<double> v_now = potential_dims(rt.sup.arch.phi, sel, rt.sup.sites);
      tr.fix_count = dim_fix_count(sel, sel.v_prev, v_now, sel.Z, sel.z);
      tr.fixed = fix_dimensions(lambda, tr.fix_count, v_now, sel, rt.sup.sites);
      for (int i : tr.fixed) rt.frozen_phi[i] = 1;
      sel.v_prev = v_now;
      sel.z += 1;
      // cool-down: a fresh H+1 indicators and a fresh phi window before the next fire
      history.clear();
      sel.clear_windows(n);
      trace.triggers.push_back(std::move(tr));
      if (sel.z >= sel.Z) break;
    }
  }

  SearchedArchitecture arch = materialize_architecture(rt.sup);
  // the discretization of soft dims can overshoot the expectation-based
  // removals by a site or two
  if (selection_enabled)
    trim_to_budget(rt.sup.sites, arch, static_cast<long>(budget), sens.s_bar, trace);
  return {std::move(arch), std::move(trace)};
}

}  // namespace

SearchResult run_search(const Backbone& bb, const SpaceConfig& space, const SplitData& data,
                        const BudgetConfig& cfg) {
  cfg.validate();
  switch (cfg.mode) {
    case SearchMode::BIPEFT: return run_iterative(bb, space, data, cfg, true);
    case SearchMode::NoSelection: return run_iterative(bb, space, data, cfg, false);
    case SearchMode::Entangled: return run_entangled(bb, space, data, cfg);
    case SearchMode::BinaryThenDim: return run_two_stage(bb, space, data, cfg, true);
    case SearchMode::DimThenBinary: return run_two_stage(bb, space, data, cfg, false);
  }
  throw std::logic_error("run_search: unhandled mode");
}

RetrainMetrics retrain(const SearchedArchitecture& arch, const Backbone& bb,
                       const SpaceConfig& space, const SplitData& data, int steps,
                       uint64_t seed) {
  std::mt19937_64 rng(seed);
  SupernetState sup;
  sup.sites = enumerate_sites(bb, space, rng);
  if (sup.sites.size() != arch.sites.size())
    throw std::invalid_argument("retrain: architecture does not match the search space");
  sup.selection.init(sup.sites, 1);
  for (size_t i = 0; i < sup.sites.size(); ++i) {
    const auto& rec = arch.sites[i];
    if (rec.kind != to_string(sup.sites[i].kind) || rec.position != sup.sites[i].position.name)
      throw std::invalid_argument("retrain: site " + std::to_string(i) + " does not match the space");
    sup.selection.b[i] = rec.kept ? 1 : 0;
    sup.selection.d[i] = 1;
    if (rec.kept) {
      const auto& dims = sup.sites[i].dims;
      const auto it = std::find(dims.begin(), dims.end(), rec.dim);
      if (it == dims.end())
        throw std::invalid_argument("retrain: kept site with undetermined or invalid dim");
      sup.selection.k_star[i] = static_cast<int>(it - dims.begin());
    } else {
      sup.selection.k_star[i] = -1;
    }
  }
  sup.init_arch();

  AdamW opt(3e-3, 0.01, std::max(steps, 1));
  for (auto& s : sup.sites) {
    opt.add(&s.w_down, &s.g_down);
    opt.add(&s.w_up, &s.g_up);
    opt.add(&s.bias, &s.g_bias);
  }
  PassOptions opts;
  opts.discrete = true;
  for (int t = 0; t < steps; ++t) {
    Batch batch = sample_batch(data.train, 8, rng);
    for (auto& s : sup.sites) s.zero_grads();
    Tape tape;
    ForwardResult fr = model_forward(tape, bb, batch, &sup, opts, nullptr);
    tape.backward(fr.loss);
    opt.step();
  }
  RetrainMetrics m;
  m.val = evaluate(bb, data.val, &sup);
  m.test = evaluate(bb, data.test, &sup);
  m.trainable_params = arch.total_params;
  return m;
}

SearchedArchitecture random_architecture(const Backbone& bb, const SpaceConfig& space,
                                         long budget, uint64_t seed) {
  std::mt19937_64 rng(seed);
  SupernetState sup;
  sup.sites = enumerate_sites(bb, space, rng);
  std::vector<int> order(sup.sites.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::shuffle(order.begin(), order.end(), rng);

  SearchedArchitecture out;
  out.dims = sup.sites.empty() ? std::vector<int>{} : sup.sites[0].dims;
  out.sites.resize(sup.sites.size());
  out.seed = seed;
  for (size_t i = 0; i < sup.sites.size(); ++i) {
    out.sites[i].kind = to_string(sup.sites[i].kind);
    out.sites[i].position = sup.sites[i].position.name;
  }
  long total = 0;
  for (int i : order) {
    const auto& site = sup.sites[i];
    std::uniform_int_distribution<int> pick_k(0, static_cast<int>(site.dims.size()) - 1);
    const int k = is_rank_parameterized(site.kind) ? pick_k(rng) : 0;
    if (total + site.q[k] > budget) continue;
    total += site.q[k];
    out.sites[i].kept = true;
    out.sites[i].dim = site.dims[k];
    out.sites[i].params = site.q[k];
  }
  out.total_params = total;
  return out;
}

}  // namespace peftsearch
