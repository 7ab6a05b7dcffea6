// peftsearch: budget-guided architecture search for parameter-efficient
// fine-tuning modules on a small frozen transformer.
//
// Subcommands: pretrain, search, retrain, export-arch, import-arch, sweep.

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <string>

#include <CLI11.hpp>

#include "peftsearch/io.hpp"
#include "peftsearch/model.hpp"
#include "peftsearch/search.hpp"

using namespace peftsearch;

namespace {

int g_verbosity = [] {
  const char* env = std::getenv("PEFTSEARCH_LOG");
  return env ? std::atoi(env) : 1;
}();

void logf(int level, const char* fmt, ...) {
  if (level > g_verbosity) return;
  va_list args;
  va_start(args, fmt);
  std::vfprintf(stderr, fmt, args);
  std::fputc('\n', stderr);
  va_end(args);
}

struct CommonArgs {
  std::string config_path;
  std::string mode;
  double budget_ratio = -1.0;
  long seed = -1;
  std::string out = "out";
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config_path, "run configuration file (key=value lines)");
  cmd->add_option("--mode", a.mode,
                  "search mode: bipeft | entangled | binary-then-dim | dim-then-binary | no-selection");
  cmd->add_option("--budget-ratio", a.budget_ratio, "trainable-parameter budget as a backbone fraction");
  cmd->add_option("--seed", a.seed, "overrides the search seed");
  cmd->add_option("--out", a.out, "output directory / file prefix");
}

RunConfig resolve_config(const CommonArgs& a) {
  RunConfig cfg = a.config_path.empty() ? RunConfig{} : load_config(a.config_path);
  if (!a.mode.empty()) cfg.budget.mode = search_mode_from_string(a.mode);
  if (a.budget_ratio >= 0.0) cfg.budget.budget_ratio = a.budget_ratio;
  if (a.seed >= 0) cfg.budget.seed = static_cast<uint64_t>(a.seed);
  cfg.validate();
  return cfg;
}

Backbone pretrained_backbone(const RunConfig& cfg, const SplitData& data) {
  Backbone bb = build_backbone(cfg.backbone, cfg.budget.seed);
  pretrain_backbone(bb, data, cfg.pretrain_steps, cfg.budget.batch_size, 1e-2, cfg.budget.seed);
  logf(1, "pretrained backbone: %ld params, final loss %.4f", bb.param_count(),
       bb.final_pretrain_loss);
  return bb;
}

int cmd_pretrain(const CommonArgs& a) {
  const RunConfig cfg = resolve_config(a);
  const SplitData data = generate_task(cfg.task);
  const Backbone bb = pretrained_backbone(cfg, data);
  save_backbone(bb, a.out);
  std::printf("backbone params=%ld hash=%llu checkpoint=%s\n", bb.param_count(),
              static_cast<unsigned long long>(bb.params_hash()), a.out.c_str());
  return 0;
}

int cmd_search(const CommonArgs& a, bool also_retrain) {
  const RunConfig cfg = resolve_config(a);
  const SplitData data = generate_task(cfg.task);
  const Backbone bb = pretrained_backbone(cfg, data);

  SearchResult result = run_search(bb, cfg.space, data, cfg.budget);
  if (!result.trace.warning.empty()) logf(0, "warning: %s", result.trace.warning.c_str());
  result.architecture.config_hash = config_hash(cfg);
  result.architecture.seed = cfg.budget.seed;

  export_architecture(result.architecture, a.out + ".arch");
  emit_trace(result.trace, a.out + ".steps.csv", a.out + ".triggers.csv");
  logf(1, "trace: %zu steps, %zu triggers", result.trace.steps.size(),
       result.trace.triggers.size());

  const double ratio =
      static_cast<double>(result.architecture.total_params) / bb.param_count();
  std::printf("searched params=%ld ratio=%.6f budget_ratio=%.6f arch=%s.arch\n",
              result.architecture.total_params, ratio, cfg.budget.budget_ratio, a.out.c_str());

  if (also_retrain) {
    const RetrainMetrics m =
        retrain(result.architecture, bb, cfg.space, data, cfg.retrain_steps, cfg.budget.seed);
    std::printf("retrained val_acc=%.4f test_acc=%.4f test_loss=%.4f trainable=%ld\n",
                m.val.accuracy, m.test.accuracy, m.test.loss, m.trainable_params);
  }
  return 0;
}

int cmd_retrain(const CommonArgs& a, const std::string& arch_path) {
  const RunConfig cfg = resolve_config(a);
  const SplitData data = generate_task(cfg.task);
  const Backbone bb = pretrained_backbone(cfg, data);
  const SearchedArchitecture arch = import_architecture(arch_path);
  const RetrainMetrics m = retrain(arch, bb, cfg.space, data, cfg.retrain_steps, cfg.budget.seed);
  const double ratio = static_cast<double>(m.trainable_params) / bb.param_count();
  std::printf("retrained val_acc=%.4f test_acc=%.4f test_loss=%.4f trainable=%ld ratio=%.6f\n",
              m.val.accuracy, m.test.accuracy, m.test.loss, m.trainable_params, ratio);
  return 0;
}

int cmd_export(const CommonArgs& a) {
  // emits a baseline architecture for the configured space without searching
  const RunConfig cfg = resolve_config(a);
  const Backbone bb = build_backbone(cfg.backbone, cfg.budget.seed);
  const long budget = static_cast<long>(cfg.budget.budget_ratio * bb.param_count());
  SearchedArchitecture arch = random_architecture(bb, cfg.space, budget, cfg.budget.seed);
  arch.config_hash = config_hash(cfg);
  export_architecture(arch, a.out);
  std::printf("random architecture params=%ld budget=%ld file=%s\n", arch.total_params, budget,
              a.out.c_str());
  return 0;
}

int cmd_import(const std::string& path) {
  const SearchedArchitecture arch = import_architecture(path);
  int kept = 0;
  for (const auto& s : arch.sites) kept += s.kept;
  std::printf("valid architecture: %zu sites, %d kept, %ld params\n", arch.sites.size(), kept,
              arch.total_params);
  for (const auto& s : arch.sites)
    if (s.kept) logf(1, "  %s @ %s dim=%d params=%ld", s.kind.c_str(), s.position.c_str(), s.dim,
                     s.params);
  return 0;
}

int cmd_sweep(const CommonArgs& a, int runs) {
  RunConfig cfg = resolve_config(a);
  const SplitData data = generate_task(cfg.task);
  const Backbone bb = pretrained_backbone(cfg, data);
  std::printf("seed,mode,params,ratio,val_acc,test_acc\n");
  for (int r = 0; r < runs; ++r) {
    cfg.budget.seed = static_cast<uint64_t>(r + 1);
    SearchResult result = run_search(bb, cfg.space, data, cfg.budget);
    const RetrainMetrics m =
        retrain(result.architecture, bb, cfg.space, data, cfg.retrain_steps, cfg.budget.seed);
    std::printf("%d,%s,%ld,%.6f,%.4f,%.4f\n", r + 1, to_string(cfg.budget.mode).c_str(),
                result.architecture.total_params,
                static_cast<double>(result.architecture.total_params) / bb.param_count(),
                m.val.accuracy, m.test.accuracy);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"budget-guided PEFT architecture search"};
  app.require_subcommand(1);

  CommonArgs a;
  std::string arch_path;
  int sweep_runs = 5;

  CLI::App* pretrain = app.add_subcommand("pretrain", "pretrain and checkpoint the backbone");
  add_common(pretrain, a);
  CLI::App* search = app.add_subcommand("search", "run the architecture search");
  add_common(search, a);
  bool no_retrain = false;
  search->add_flag("--no-retrain", no_retrain, "skip retraining the searched architecture");
  CLI::App* retrain_cmd = app.add_subcommand("retrain", "retrain a saved architecture");
  add_common(retrain_cmd, a);
  retrain_cmd->add_option("--arch", arch_path, "architecture file")->required();
  CLI::App* exp = app.add_subcommand("export-arch", "write a random budget-feasible architecture");
  add_common(exp, a);
  CLI::App* imp = app.add_subcommand("import-arch", "validate and summarize an architecture file");
  imp->add_option("--arch", arch_path, "architecture file")->required();
  CLI::App* sweep = app.add_subcommand("sweep", "search + retrain over consecutive seeds");
  add_common(sweep, a);
  sweep->add_option("--runs", sweep_runs, "number of seeds");

  CLI11_PARSE(app, argc, argv);

  try {
    if (pretrain->parsed()) return cmd_pretrain(a);
    if (search->parsed()) return cmd_search(a, !no_retrain);
    if (retrain_cmd->parsed()) return cmd_retrain(a, arch_path);
    if (exp->parsed()) return cmd_export(a);
    if (imp->parsed()) return cmd_import(arch_path);
    if (sweep->parsed()) return cmd_sweep(a, sweep_runs);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
