#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <map>
#include <set>

#include "peftsearch/io.hpp"
#include "peftsearch/task.hpp"

using namespace peftsearch;

TEST_CASE("labels are definitional") {
  SUBCASE("copy-class: first token mod classes") {
    CHECK(task_label(TaskKind::CopyClass, {7, 1, 2}, 4) == 3);
    CHECK(task_label(TaskKind::CopyClass, {8, 9, 9}, 4) == 0);
  }
  SUBCASE("parity of the token sum") {
    CHECK(task_label(TaskKind::Parity, {1, 2, 3}, 2) == 0);
    CHECK(task_label(TaskKind::Parity, {1, 2, 4}, 2) == 1);
  }
  SUBCASE("majority: most frequent token, ties to the smaller token") {
    CHECK(task_label(TaskKind::Majority, {5, 5, 3, 3, 2}, 8) == 3);
    CHECK(task_label(TaskKind::Majority, {6, 6, 6, 1, 1}, 4) == 2);  // 6 mod 4
  }
  SUBCASE("keyed lookup: first token points at the answer position") {
    // key 3, len 5 -> position 1 + 3 % 4 = 4
    CHECK(task_label(TaskKind::KeyedLookup, {3, 9, 9, 9, 6}, 8) == 6);
    // key 0 -> position 1
    CHECK(task_label(TaskKind::KeyedLookup, {0, 5, 9, 9, 9}, 8) == 5);
  }
}

TEST_CASE("task generation: determinism, disjoint splits, plausible balance") {
  SyntheticTask spec;
  spec.kind = TaskKind::Parity;
  spec.num_classes = 2;
  spec.num_train = 256;
  spec.num_val = 64;
  spec.num_test = 64;
  const SplitData a = generate_task(spec);
  const SplitData b = generate_task(spec);
  REQUIRE(a.train.size() == 256);
  REQUIRE(a.val.size() == 64);
  REQUIRE(a.test.size() == 64);

  SUBCASE("same spec, same data") {
    for (size_t i = 0; i < a.train.size(); ++i) {
      CHECK(a.train[i].tokens == b.train[i].tokens);
      CHECK(a.train[i].label == b.train[i].label);
    }
  }
  SUBCASE("no sequence appears in two splits") {
    std::set<std::vector<int>> seen;
    for (const auto* split : {&a.train, &a.val, &a.test})
      for (const auto& ex : *split) CHECK(seen.insert(ex.tokens).second);
  }
  SUBCASE("parity labels are roughly balanced") {
    int ones = 0;
    for (const auto& ex : a.train) ones += ex.label;
    CHECK(ones > 64);
    CHECK(ones < 192);
  }
  SUBCASE("labels match the definitional function") {
    for (const auto& ex : a.val)
      CHECK(ex.label == task_label(TaskKind::Parity, ex.tokens, 2));
  }
  SUBCASE("a different seed gives different data") {
    SyntheticTask other = spec;
    other.seed = 99;
    const SplitData c = generate_task(other);
    CHECK(c.train[0].tokens != a.train[0].tokens);
  }
}

TEST_CASE("unsatisfiable class counts are rejected") {
  SyntheticTask spec;
  spec.kind = TaskKind::Parity;
  spec.num_classes = 3;  // parity can only express 2
  CHECK_THROWS_AS(generate_task(spec), std::invalid_argument);
  spec.kind = TaskKind::CopyClass;
  spec.num_classes = 64;
  spec.vocab_size = 32;
  CHECK_THROWS_AS(generate_task(spec), std::invalid_argument);
}

TEST_CASE("config parsing round-trips and rejects junk") {
  const RunConfig def;
  const std::string text = render_config(def);
  const RunConfig back = parse_config(text);
  CHECK(render_config(back) == text);
  CHECK(config_hash(back) == config_hash(def));

  SUBCASE("values survive the trip") {
    RunConfig c = parse_config(
        "search.budget_ratio = 0.1\n"
        "# a comment\n"
        "\n"
        "search.mode = entangled\n"
        "task.kind = parity\n"
        "task.num_classes = 2\n"
        "space.dims = 1,2,4,8\n");
    CHECK(c.budget.budget_ratio == 0.1);
    CHECK(c.budget.mode == SearchMode::Entangled);
    CHECK(c.task.kind == TaskKind::Parity);
    CHECK(c.space.dims == std::vector<int>{1, 2, 4, 8});
  }
  SUBCASE("unknown keys are errors") {
    CHECK_THROWS_AS(parse_config("search.budgetratio=0.1\n"), std::invalid_argument);
  }
  SUBCASE("malformed values are errors") {
    CHECK_THROWS_AS(parse_config("search.steps=abc\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("just a line\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("space.dims=8,4,1\n"), std::invalid_argument);
  }
  SUBCASE("hash tracks content, not formatting") {
    const RunConfig x = parse_config("search.steps=500\n");
    const RunConfig y = parse_config("#hi\n  search.steps = 500  \n");
    const RunConfig z = parse_config("search.steps=501\n");
    CHECK(config_hash(x) == config_hash(y));
    CHECK(config_hash(x) != config_hash(z));
  }
}

TEST_CASE("architecture export/import identity and validation") {
  SearchedArchitecture arch;
  arch.dims = {1, 4, 8};
  arch.total_params = 0;
  arch.config_hash = 12345;
  arch.seed = 7;
  ArchSiteRecord kept{"lora", "layer0.Q", true, 4, 256};
  ArchSiteRecord dropped{"bitfit", "layer1.LN", false, 0, 0};
  arch.sites = {kept, dropped};
  arch.total_params = 256;

  const std::string path = "arch_roundtrip.txt";
  export_architecture(arch, path);
  const SearchedArchitecture back = import_architecture(path);
  std::remove(path.c_str());
  CHECK(back == arch);

  SUBCASE("re-rendering gives identical bytes") {
    CHECK(render_architecture(back) == render_architecture(arch));
  }
  SUBCASE("dims outside the candidate list are rejected") {
    std::string text = render_architecture(arch);
    const size_t at = text.find("dim=4");
    REQUIRE(at != std::string::npos);
    text.replace(at, 5, "dim=3");
    CHECK_THROWS_AS(parse_architecture(text), std::invalid_argument);
  }
  SUBCASE("unknown schema versions are rejected") {
    std::string text = render_architecture(arch);
    text.replace(0, text.find('\n'), "peft-arch v9");
    CHECK_THROWS_AS(parse_architecture(text), std::invalid_argument);
  }
  SUBCASE("total mismatches are rejected") {
    std::string text = render_architecture(arch);
    const size_t at = text.find("total_params=256");
    text.replace(at, 16, "total_params=999");
    CHECK_THROWS_AS(parse_architecture(text), std::invalid_argument);
  }
  SUBCASE("unknown module kinds are rejected") {
    std::string text = render_architecture(arch);
    const size_t at = text.find("lora ");
    text.replace(at, 5, "florp ");
    CHECK_THROWS(parse_architecture(text));
  }
}

TEST_CASE("trace CSVs are byte-stable") {
  SearchTrace trace;
  trace.steps.push_back({1, 1.25, 1.5, 0.0, 123.456});
  trace.steps.push_back({2, 1.0, 1.25, 0.75, 100.0});
  trace.triggers.push_back({0, 2, 10.5, {3, 7}, 1, {4}});

  const std::string steps = render_step_csv(trace);
  CHECK(steps ==
        "step,train_loss,val_loss,beta,expected_params\n"
        "1,1.25,1.5,0,123.456\n"
        "2,1,1.25,0.75,100\n");
  const std::string trig = render_trigger_csv(trace);
  CHECK(trig ==
        "z,step,reduction_target,removed,fix_count,fixed\n"
        "0,2,10.5,3;7,1,4\n");

  SUBCASE("emission is atomic-write and re-emission is identical") {
    emit_trace(trace, "steps_a.csv", "trig_a.csv");
    emit_trace(trace, "steps_b.csv", "trig_b.csv");
    CHECK(read_file("steps_a.csv") == read_file("steps_b.csv"));
    CHECK(read_file("steps_a.csv") == steps);
    CHECK(read_file("trig_a.csv") == trig);
    for (const char* f : {"steps_a.csv", "trig_a.csv", "steps_b.csv", "trig_b.csv"})
      std::remove(f);
  }
}
