#pragma once

// Forward pass of the frozen backbone with PEFT deltas mixed in at every
// catalog position. The supernet is applied additively, so gated-off sites
// leave the graph entirely (exact-zero deltas, exact-zero gradients).

#include <random>

#include "peftsearch/backbone.hpp"
#include "peftsearch/supernet.hpp"
#include "peftsearch/task.hpp"

namespace peftsearch {

// Gradient sinks for the backbone parameters (pretraining only).
struct BackboneGrads {
  Array tok_emb, pos_emb;
  std::vector<LayerParams> layers;
  Array cls_w, cls_b;

  explicit BackboneGrads(const Backbone& bb);
  void zero();
  std::vector<Array*> flat(Backbone& bb, std::vector<Array*>& values);
};

struct PassOptions {
  bool learn_theta = false;
  bool learn_phi = false;
  bool gumbel_learned = false;   // Gumbel noise + straight-through on learned logits
  bool gumbel_constants = false; // soft Gumbel sample for detached coefficients
  bool discrete = false;         // selection state decides gates and dims exactly
  double temperature = 1.0;
  std::mt19937_64* rng = nullptr;
};

struct ForwardResult {
  int loss = -1;
  int logits = -1;
};

ForwardResult model_forward(Tape& tape, const Backbone& bb, const Batch& batch,
                            SupernetState* sup, const PassOptions& opts,
                            BackboneGrads* bb_grads);

// Spec-level convenience: loss and logits as plain arrays.
std::pair<Array, Array> forward_with_peft(const Backbone& bb, const Batch& batch,
                                          SupernetState* sup, const MixMode& mode,
                                          std::mt19937_64* rng);

struct EvalMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalMetrics evaluate(const Backbone& bb, const std::vector<Example>& split,
                     SupernetState* sup);

}  // namespace peftsearch
