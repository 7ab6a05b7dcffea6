#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace peftsearch {

struct Example {
  std::vector<int> tokens;
  int label = 0;
};

struct SplitData {
  std::vector<Example> train;  // halved into weight-train / arch-train by the search
  std::vector<Example> val;
  std::vector<Example> test;
};

struct Batch {
  std::vector<int> tokens;  // batch*seq, row-major
  std::vector<int> labels;  // batch
  int batch = 0;
  int seq = 0;
};

enum class TaskKind { CopyClass, Parity, Majority, KeyedLookup };

TaskKind task_kind_from_string(const std::string& s);
std::string to_string(TaskKind k);

struct SyntheticTask {
  TaskKind kind = TaskKind::KeyedLookup;
  int vocab_size = 32;
  int seq_len = 16;
  int num_classes = 4;
  int num_train = 512;
  int num_val = 128;
  int num_test = 128;
  uint64_t seed = 1;
};

// Deterministic labels, disjoint splits (no sequence appears twice).
SplitData generate_task(const SyntheticTask& spec);

int task_label(TaskKind kind, const std::vector<int>& tokens, int num_classes);

Batch sample_batch(const std::vector<Example>& split, int batch_size, std::mt19937_64& rng);
Batch full_batch(const std::vector<Example>& split);

}  // namespace peftsearch
