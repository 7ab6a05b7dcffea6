#pragma once

// Small frozen transformer classifier: the stand-in for a pretrained model.
// Exposes a deterministic catalog of attachment positions per layer
// (Q, K, V, O, W1, W2 linears plus the post-attention layer norm).

#include <cstdint>
#include <string>
#include <vector>

#include "peftsearch/autodiff.hpp"
#include "peftsearch/task.hpp"

namespace peftsearch {

struct BackboneConfig {
  int num_layers = 2;
  int model_dim = 32;
  int ffn_dim = 64;
  int num_heads = 2;
  int vocab_size = 32;
  int max_seq_len = 16;
  int num_classes = 4;

  void validate() const;
};

enum class PosKind { Q, K, V, O, W1, W2, LN };

std::string to_string(PosKind k);
PosKind pos_kind_from_string(const std::string& s);
bool is_linear_pos(PosKind k);

struct Position {
  PosKind kind;
  int layer;
  int d_in;   // input width of the linear (LN: normalized width)
  int d_out;  // output width of the linear (LN: normalized width)
  std::string name;  // e.g. "layer0.Q"
};

struct LayerParams {
  Array wq, bq, wk, bk, wv, bv, wo, bo;
  Array w1, b1, w2, b2;
  Array ln_g, ln_b;  // post-attention layer norm affine
};

struct Backbone {
  BackboneConfig cfg;
  Array tok_emb;  // [vocab, d]
  Array pos_emb;  // [max_seq, d]
  std::vector<LayerParams> layers;
  Array cls_w, cls_b;  // mean-pooled classifier head
  std::vector<Position> catalog;
  bool frozen = false;
  double final_pretrain_loss = 0.0;

  std::vector<std::pair<std::string, Array*>> named_params();
  std::vector<std::pair<std::string, const Array*>> named_params() const;
  long param_count() const;
  uint64_t params_hash() const;
};

Backbone build_backbone(const BackboneConfig& cfg, uint64_t seed);

// Plain gradient descent on the task's train split, then permanently freezes.
void pretrain_backbone(Backbone& bb, const SplitData& data, int steps, int batch_size,
                       double lr, uint64_t seed);

// Versioned binary checkpoint, byte-stable for equal seeds.
void save_backbone(const Backbone& bb, const std::string& path);
Backbone load_backbone(const std::string& path);

}  // namespace peftsearch
