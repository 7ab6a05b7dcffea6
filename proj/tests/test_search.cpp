#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "peftsearch/io.hpp"
#include "peftsearch/search.hpp"

using namespace peftsearch;

namespace {

struct Fixture {
  Backbone bb;
  SplitData data;
  BudgetConfig cfg;

  Fixture() {
    BackboneConfig bc;
    bc.model_dim = 16;
    bc.ffn_dim = 32;
    bc.max_seq_len = 8;
    bb = build_backbone(bc, 11);

    SyntheticTask task;
    task.seq_len = 8;
    task.num_train = 96;
    task.num_val = 32;
    task.num_test = 32;
    data = generate_task(task);

    cfg.T = 80;
    cfg.Z = 6;
    cfg.batch_size = 4;
    cfg.seed = 1;
  }
};

long budget_of(const Fixture& f) {
  return static_cast<long>(f.cfg.budget_ratio * f.bb.param_count());
}

}  // namespace

TEST_CASE("identical config and seed give identical bytes") {
  Fixture f;
  const SearchResult a = run_search(f.bb, SpaceConfig{}, f.data, f.cfg);
  const SearchResult b = run_search(f.bb, SpaceConfig{}, f.data, f.cfg);
  CHECK(a.architecture == b.architecture);
  CHECK(render_architecture(a.architecture) == render_architecture(b.architecture));
  CHECK(render_step_csv(a.trace) == render_step_csv(b.trace));
  CHECK(render_trigger_csv(a.trace) == render_trigger_csv(b.trace));

  SUBCASE("a different seed diverges") {
    BudgetConfig c2 = f.cfg;
    c2.seed = 2;
    const SearchResult c = run_search(f.bb, SpaceConfig{}, f.data, c2);
    CHECK(render_step_csv(c.trace) != render_step_csv(a.trace));
  }
}

TEST_CASE("selection schedule invariants hold on a full run") {
  Fixture f;
  const SearchResult r = run_search(f.bb, SpaceConfig{}, f.data, f.cfg);

  CHECK(r.trace.triggers.size() <= static_cast<size_t>(f.cfg.Z));
  CHECK(!r.trace.steps.empty());
  CHECK(r.trace.steps.size() <= static_cast<size_t>(f.cfg.T));

  // b nonincreasing / d nondecreasing: a site is removed or fixed at most once,
  // never resurrected
  std::set<int> removed, fixed;
  int prev_z = -1;
  for (const auto& t : r.trace.triggers) {
    CHECK(t.z == prev_z + 1);
    prev_z = t.z;
    for (int i : t.removed) CHECK(removed.insert(i).second);
    for (int i : t.fixed) {
      CHECK(fixed.insert(i).second);
      CHECK(removed.count(i) == 0);  // removed sites are out of the dim pool
    }
    CHECK(t.fixed.size() <= static_cast<size_t>(t.fix_count));
  }
  for (int i : removed) CHECK_FALSE(r.architecture.sites[i].kept);

  SUBCASE("the materialized architecture respects the hard budget") {
    CHECK(r.architecture.total_params <= budget_of(f));
    long total = 0;
    for (const auto& s : r.architecture.sites) total += s.params;
    CHECK(total == r.architecture.total_params);
  }
  SUBCASE("beta stays in range and expected params are positive") {
    for (const auto& s : r.trace.steps) {
      CHECK(s.beta >= 0.0);
      CHECK(s.beta <= 1.0);
      CHECK(s.expected_params >= 0.0);
    }
  }
}

TEST_CASE("no-selection mode never triggers") {
  Fixture f;
  f.cfg.mode = SearchMode::NoSelection;
  const SearchResult r = run_search(f.bb, SpaceConfig{}, f.data, f.cfg);
  CHECK(r.trace.triggers.empty());
  CHECK(r.trace.steps.size() == static_cast<size_t>(f.cfg.T));
}

TEST_CASE("zero arch learning rate leaves the logits at their tie-break state") {
  Fixture f;
  f.cfg.lr_arch = 0.0;
  f.cfg.mode = SearchMode::NoSelection;
  const SearchResult r = run_search(f.bb, SpaceConfig{}, f.data, f.cfg);
  // all-zero theta rows tie, and ties drop
  for (const auto& s : r.architecture.sites) CHECK_FALSE(s.kept);
  CHECK(r.architecture.total_params == 0);
}

TEST_CASE("a budget larger than the whole space returns the full space with a warning") {
  Fixture f;
  f.cfg.budget_ratio = 0.999;
  const SearchResult r = run_search(f.bb, SpaceConfig{}, f.data, f.cfg);
  CHECK_FALSE(r.trace.warning.empty());
  for (const auto& s : r.architecture.sites) CHECK(s.kept);
}

TEST_CASE("single-trigger schedules close the whole gap at once") {
  Fixture f;
  f.cfg.Z = 1;
  const SearchResult r = run_search(f.bb, SpaceConfig{}, f.data, f.cfg);
  CHECK(r.trace.triggers.size() <= 1);
  CHECK(r.architecture.total_params <= budget_of(f));
}

TEST_CASE("ablation modes produce valid architectures") {
  Fixture f;
  f.cfg.T = 40;
  for (SearchMode mode : {SearchMode::Entangled, SearchMode::BinaryThenDim,
                          SearchMode::DimThenBinary}) {
    f.cfg.mode = mode;
    const SearchResult r = run_search(f.bb, SpaceConfig{}, f.data, f.cfg);
    INFO("mode ", to_string(mode));
    CHECK(r.trace.triggers.empty());  // only the iterative mode early-selects
    CHECK(r.architecture.sites.size() == 32);
    long total = 0;
    for (const auto& s : r.architecture.sites) {
      total += s.params;
      if (s.kept) CHECK((s.dim == 1 || s.dim == 4 || s.dim == 8));
    }
    CHECK(total == r.architecture.total_params);

    const SearchResult again = run_search(f.bb, SpaceConfig{}, f.data, f.cfg);
    CHECK(again.architecture == r.architecture);
  }
}

TEST_CASE("retrain trains only the kept sites and reports their count") {
  Fixture f;
  const SearchResult r = run_search(f.bb, SpaceConfig{}, f.data, f.cfg);
  const uint64_t backbone_hash = f.bb.params_hash();
  const RetrainMetrics m = retrain(r.architecture, f.bb, SpaceConfig{}, f.data, 40, 3);
  CHECK(m.trainable_params == r.architecture.total_params);
  CHECK(m.val.loss > 0.0);
  CHECK(f.bb.params_hash() == backbone_hash);  // backbone untouched

  SUBCASE("retrain is deterministic") {
    const RetrainMetrics m2 = retrain(r.architecture, f.bb, SpaceConfig{}, f.data, 40, 3);
    CHECK(m2.val.loss == m.val.loss);
    CHECK(m2.test.accuracy == m.test.accuracy);
  }
  SUBCASE("an architecture from a different space is rejected") {
    SpaceConfig lora_only;
    lora_only.kinds = {ModuleKind::LoRA};
    CHECK_THROWS_AS(retrain(r.architecture, f.bb, lora_only, f.data, 10, 3),
                    std::invalid_argument);
  }
  SUBCASE("a kept site with a foreign dim is rejected") {
    SearchedArchitecture bad = r.architecture;
    for (auto& s : bad.sites)
      if (s.kind == "LoRA") {
        s.kept = true;
        s.dim = 3;
        break;
      }
    CHECK_THROWS_AS(retrain(bad, f.bb, SpaceConfig{}, f.data, 10, 3), std::invalid_argument);
  }
}

TEST_CASE("random architectures respect the budget and the seed") {
  Fixture f;
  const long budget = budget_of(f);
  const SearchedArchitecture a = random_architecture(f.bb, SpaceConfig{}, budget, 5);
  const SearchedArchitecture b = random_architecture(f.bb, SpaceConfig{}, budget, 5);
  const SearchedArchitecture c = random_architecture(f.bb, SpaceConfig{}, budget, 6);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(a.total_params <= budget);
  CHECK(a.total_params > 0);
  long total = 0;
  for (const auto& s : a.sites) total += s.params;
  CHECK(total == a.total_params);
}

TEST_CASE("config validation rejects out-of-range settings") {
  BudgetConfig c;
  c.budget_ratio = 1.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = BudgetConfig{};
  c.tau = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = BudgetConfig{};
  c.Z = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = BudgetConfig{};
  c.H = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
