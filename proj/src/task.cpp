#include "peftsearch/task.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

namespace peftsearch {

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "copy-class") return TaskKind::CopyClass;
  if (s == "parity") return TaskKind::Parity;
  if (s == "majority") return TaskKind::Majority;
  if (s == "keyed-lookup") return TaskKind::KeyedLookup;
  throw std::invalid_argument("unknown task kind: " + s);
}

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::CopyClass: return "copy-class";
    case TaskKind::Parity: return "parity";
    case TaskKind::Majority: return "majority";
    case TaskKind::KeyedLookup: return "keyed-lookup";
  }
  return "?";
}

int task_label(TaskKind kind, const std::vector<int>& tokens, int num_classes) {
  switch (kind) {
    case TaskKind::CopyClass:
      return tokens[0] % num_classes;
    case TaskKind::Parity: {
      long s = 0;
      for (int t : tokens) s += t;
      return static_cast<int>(s % 2);
    }
    case TaskKind::Majority: {
      std::map<int, int> counts;
      for (int t : tokens) counts[t]++;
      int best = tokens[0], bestc = 0;
      for (auto [tok, c] : counts)
        if (c > bestc) { best = tok; bestc = c; }  // map order breaks ties toward smaller token
      return best % num_classes;
    }
    case TaskKind::KeyedLookup: {
      const int L = static_cast<int>(tokens.size());
      const int pos = 1 + tokens[0] % (L - 1);
      return tokens[pos] % num_classes;
    }
  }
  return 0;
}

SplitData generate_task(const SyntheticTask& spec) {
  if (spec.vocab_size <= 0 || spec.seq_len <= 0 || spec.num_classes <= 0 ||
      spec.num_train < 0 || spec.num_val < 0 || spec.num_test < 0)
    throw std::invalid_argument("generate_task: nonpositive extent");
  const int expressible = spec.kind == TaskKind::Parity ? 2 : spec.vocab_size;
  if (spec.num_classes > expressible)
    throw std::invalid_argument("generate_task: num_classes " + std::to_string(spec.num_classes) +
                                " exceeds expressible labels (" + std::to_string(expressible) +
                                ") for kind " + to_string(spec.kind));
  if (spec.kind == TaskKind::KeyedLookup && spec.seq_len < 2)
    throw std::invalid_argument("generate_task: keyed-lookup needs seq_len >= 2");

  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> tok(0, spec.vocab_size - 1);
  const int total = spec.num_train + spec.num_val + spec.num_test;
  std::set<std::vector<int>> seen;
  std::vector<Example> all;
  all.reserve(total);
  long attempts = 0;
  const long max_attempts = 1000L * total + 1000;
  while ((int)all.size() < total) {
    if (++attempts > max_attempts)
      throw std::runtime_error("generate_task: cannot draw enough distinct sequences");
    std::vector<int> t(spec.seq_len);
    for (auto& x : t) x = tok(rng);
    if (!seen.insert(t).second) continue;
    Example e;
    e.label = task_label(spec.kind, t, spec.num_classes);
    e.tokens = std::move(t);
    all.push_back(std::move(e));
  }
  SplitData d;
  d.train.assign(all.begin(), all.begin() + spec.num_train);
  d.val.assign(all.begin() + spec.num_train, all.begin() + spec.num_train + spec.num_val);
  d.test.assign(all.begin() + spec.num_train + spec.num_val, all.end());
  return d;
}

Batch sample_batch(const std::vector<Example>& split, int batch_size, std::mt19937_64& rng) {
  if (split.empty()) throw std::invalid_argument("sample_batch: empty split");
  std::uniform_int_distribution<size_t> pick(0, split.size() - 1);
  Batch b;
  b.batch = batch_size;
  b.seq = static_cast<int>(split[0].tokens.size());
  for (int i = 0; i < batch_size; ++i) {
    const Example& e = split[pick(rng)];
    b.tokens.insert(b.tokens.end(), e.tokens.begin(), e.tokens.end());
    b.labels.push_back(e.label);
  }
  return b;
}

Batch full_batch(const std::vector<Example>& split) {
  if (split.empty()) throw std::invalid_argument("full_batch: empty split");
  Batch b;
  b.batch = static_cast<int>(split.size());
  b.seq = static_cast<int>(split[0].tokens.size());
  for (const Example& e : split) {
    b.tokens.insert(b.tokens.end(), e.tokens.begin(), e.tokens.end());
    b.labels.push_back(e.label);
  }
  return b;
}

}  // namespace peftsearch
