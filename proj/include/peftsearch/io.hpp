#pragma once

// Run configuration (flat key=value text), architecture export/import with a
// schema version and exact numeric round-trip, and trace CSV emission with
// byte-reproducible formatting.

#include <cstdint>
#include <string>

#include "peftsearch/backbone.hpp"
#include "peftsearch/search.hpp"
#include "peftsearch/supernet.hpp"
#include "peftsearch/task.hpp"

namespace peftsearch {

struct RunConfig {
  BackboneConfig backbone;
  SyntheticTask task;
  SpaceConfig space;
  BudgetConfig budget;
  int pretrain_steps = 400;
  int retrain_steps = 400;

  void validate() const;
};

// Flat key=value lines; '#' comments and blank lines allowed; unknown keys and
// malformed values are errors.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string render_config(const RunConfig& cfg);

// FNV-1a over the sorted key=value pairs; independent of key order and
// comment/whitespace noise.
uint64_t config_hash(const RunConfig& cfg);

// Versioned architecture text; import validates the schema version, the dim
// list membership and the per-site parameter arithmetic.
std::string render_architecture(const SearchedArchitecture& arch);
SearchedArchitecture parse_architecture(const std::string& text);
void export_architecture(const SearchedArchitecture& arch, const std::string& path);
SearchedArchitecture import_architecture(const std::string& path);

// step CSV: step,train_loss,val_loss,beta,expected_params
// trigger CSV: z,step,reduction_target,removed,fix_count,fixed
std::string render_step_csv(const SearchTrace& trace);
std::string render_trigger_csv(const SearchTrace& trace);
void emit_trace(const SearchTrace& trace, const std::string& step_path,
                const std::string& trigger_path);

// Shared helpers: atomic replace (temp file + rename) and a locale-independent
// shortest-round-trip double formatter.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);
std::string format_double(double x);

}  // namespace peftsearch
