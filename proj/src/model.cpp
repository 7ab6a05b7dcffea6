#include "peftsearch/model.hpp"

#include <cmath>
#include <stdexcept>

namespace peftsearch {

BackboneGrads::BackboneGrads(const Backbone& bb) {
  tok_emb = Array::zeros_like(bb.tok_emb);
  pos_emb = Array::zeros_like(bb.pos_emb);
  for (const auto& lp : bb.layers) {
    LayerParams g;
    g.wq = Array::zeros_like(lp.wq);
    g.bq = Array::zeros_like(lp.bq);
    g.wk = Array::zeros_like(lp.wk);
    g.bk = Array::zeros_like(lp.bk);
    g.wv = Array::zeros_like(lp.wv);
    g.bv = Array::zeros_like(lp.bv);
    g.wo = Array::zeros_like(lp.wo);
    g.bo = Array::zeros_like(lp.bo);
    g.w1 = Array::zeros_like(lp.w1);
    g.b1 = Array::zeros_like(lp.b1);
    g.w2 = Array::zeros_like(lp.w2);
    g.b2 = Array::zeros_like(lp.b2);
    g.ln_g = Array::zeros_like(lp.ln_g);
    g.ln_b = Array::zeros_like(lp.ln_b);
    layers.push_back(std::move(g));
  }
  cls_w = Array::zeros_like(bb.cls_w);
  cls_b = Array::zeros_like(bb.cls_b);
}

void BackboneGrads::zero() {
  auto z = [](Array& a) { std::fill(a.v.begin(), a.v.end(), 0.0); };
  z(tok_emb);
  z(pos_emb);
  for (auto& g : layers) {
    z(g.wq); z(g.bq); z(g.wk); z(g.bk); z(g.wv); z(g.bv); z(g.wo); z(g.bo);
    z(g.w1); z(g.b1); z(g.w2); z(g.b2); z(g.ln_g); z(g.ln_b);
  }
  z(cls_w);
  z(cls_b);
}

std::vector<Array*> BackboneGrads::flat(Backbone& bb, std::vector<Array*>& values) {
  values.clear();
  std::vector<Array*> grads;
  values.push_back(&bb.tok_emb); grads.push_back(&tok_emb);
  values.push_back(&bb.pos_emb); grads.push_back(&pos_emb);
  for (size_t l = 0; l < layers.size(); ++l) {
    LayerParams& v = bb.layers[l];
    LayerParams& g = layers[l];
    Array* vs[] = {&v.wq, &v.bq, &v.wk, &v.bk, &v.wv, &v.bv, &v.wo, &v.bo,
                   &v.w1, &v.b1, &v.w2, &v.b2, &v.ln_g, &v.ln_b};
    Array* gs[] = {&g.wq, &g.bq, &g.wk, &g.bk, &g.wv, &g.bv, &g.wo, &g.bo,
                   &g.w1, &g.b1, &g.w2, &g.b2, &g.ln_g, &g.ln_b};
    for (int i = 0; i < 14; ++i) {
      values.push_back(vs[i]);
      grads.push_back(gs[i]);
    }
  }
  values.push_back(&bb.cls_w); grads.push_back(&cls_w);
  values.push_back(&bb.cls_b); grads.push_back(&cls_b);
  return grads;
}

namespace {

struct PassContext {
  Tape& tape;
  SupernetState* sup;
  const PassOptions& opts;
  int theta_leaf = -1;  // present only when learning theta
  int phi_leaf = -1;
  // per-position site index lists
  std::vector<std::vector<int>> sites_at;
};

std::vector<double> logits_row(const Array& a, int row, int cols) {
  std::vector<double> r(cols);
  for (int j = 0; j < cols; ++j) r[j] = a.v[static_cast<long>(row) * cols + j];
  return r;
}

// scalar coefficient nodes for one site under the current pass options
SiteCoeffs pass_coeffs(PassContext& ctx, const ModuleSite& site) {
  Tape& tape = ctx.tape;
  const PassOptions& o = ctx.opts;
  SupernetState& sup = *ctx.sup;
  const SelectionState& sel = sup.selection;
  const int n = site.index;
  const int K = static_cast<int>(site.dims.size());
  SiteCoeffs c;
  if (sel.b[n] == 0) return c;

  if (o.discrete) {
    c.gate = tape.constant(Array({1}, 1.0), "gate");
    if (is_rank_parameterized(site.kind)) {
      if (sel.d[n] == 0 || sel.k_star[n] < 0)
        throw std::runtime_error("forward: discrete mode but site " + std::to_string(n) +
                                 " has undetermined dimension");
      c.dim_probs.assign(K, -1);
      c.dim_probs[sel.k_star[n]] = tape.constant(Array({1}, 1.0), "p");
    }
    return c;
  }

  const double temp = o.temperature;
  auto learned_row = [&](int leaf, int row, int cols) {
    int r = tape.slice_rows(leaf, row, 1);
    if (o.gumbel_learned && o.rng) {
      Array noise({1, cols});
      for (auto& x : noise.v) x = gumbel_sample(*o.rng);
      r = tape.add(r, tape.constant(std::move(noise), "gumbel"));
    }
    r = tape.scale(r, 1.0 / temp);
    int sm = tape.softmax_rows(r);
    if (o.gumbel_learned) sm = tape.hard_max_st(sm);
    return sm;
  };
  auto const_row = [&](const Array& logits, int row, int cols) {
    std::vector<double> r = logits_row(logits, row, cols);
    if (o.gumbel_constants && o.rng)
      for (auto& x : r) x += gumbel_sample(*o.rng);
    for (auto& x : r) x /= temp;
    return softmax_vec(r);
  };

  if (sup.joint_space) {
    // single categorical over {off} + dims; the gate is folded into p, and
    // for dim-free kinds the keep probability is 1 - off
    const bool dimfree = !is_rank_parameterized(site.kind);
    if (o.learn_phi) {
      if (ctx.phi_leaf == -1) ctx.phi_leaf = tape.leaf(sup.arch.phi, &sup.arch.g_phi, "joint");
      const int sm = learned_row(ctx.phi_leaf, n, K + 1);
      if (dimfree) {
        c.gate = tape.sub(tape.constant(Array({1}, 1.0), "one"), tape.pick(sm, 0));
      } else {
        c.gate = tape.constant(Array({1}, 1.0), "gate");
        c.dim_probs.assign(K, -1);
        for (int k = 0; k < K; ++k) c.dim_probs[k] = tape.pick(sm, k + 1);
      }
    } else {
      const auto p = const_row(sup.arch.phi, n, K + 1);
      if (dimfree) {
        c.gate = tape.constant(Array({1}, 1.0 - p[0]), "keep");
      } else {
        c.gate = tape.constant(Array({1}, 1.0), "gate");
        c.dim_probs.assign(K, -1);
        for (int k = 0; k < K; ++k)
          if (p[k + 1] != 0.0) c.dim_probs[k] = tape.constant(Array({1}, p[k + 1]), "p");
      }
    }
    return c;
  }

  if (o.learn_theta) {
    if (ctx.theta_leaf == -1) ctx.theta_leaf = tape.leaf(sup.arch.theta, &sup.arch.g_theta, "theta");
    c.gate = tape.pick(learned_row(ctx.theta_leaf, n, 2), 1);
  } else {
    c.gate = tape.constant(Array({1}, const_row(sup.arch.theta, n, 2)[1]), "gate");
  }
  if (is_rank_parameterized(site.kind)) {
    c.dim_probs.assign(K, -1);
    if (sel.d[n] == 1) {
      c.dim_probs[sel.k_star[n]] = tape.constant(Array({1}, 1.0), "p");
    } else if (o.learn_phi) {
      if (ctx.phi_leaf == -1) ctx.phi_leaf = tape.leaf(sup.arch.phi, &sup.arch.g_phi, "phi");
      const int sm = learned_row(ctx.phi_leaf, n, K);
      for (int k = 0; k < K; ++k) c.dim_probs[k] = tape.pick(sm, k);
    } else {
      const auto p = const_row(sup.arch.phi, n, K);
      for (int k = 0; k < K; ++k)
        if (p[k] != 0.0) c.dim_probs[k] = tape.constant(Array({1}, p[k]), "p");
    }
  }
  return c;
}

// y = x W + b plus LoRA (input-side) and BitFit deltas at this position,
// plus AdapterLR deltas applied to the base output where admissible.
int linear_with_peft(PassContext& ctx, int pos_index, int x, int w, int b, bool adapter_nl) {
  Tape& tape = ctx.tape;
  int y = tape.add_rowvec(tape.matmul(x, w), b);
  if (!ctx.sup) return y;
  const int base = y;
  for (int si : ctx.sites_at[pos_index]) {
    const ModuleSite& site = ctx.sup->sites[si];
    SiteCoeffs coeffs = pass_coeffs(ctx, site);
    if (coeffs.gate == -1) continue;
    const int input = site.kind == ModuleKind::AdapterLR ? base : x;
    const int d = site_delta_nodes(tape, site, input, -1, coeffs, adapter_nl);
    y = tape.add(y, d);
  }
  return y;
}

}  // namespace

ForwardResult model_forward(Tape& tape, const Backbone& bb, const Batch& batch,
                            SupernetState* sup, const PassOptions& opts,
                            BackboneGrads* bg) {
  const BackboneConfig& cfg = bb.cfg;
  if (batch.seq > cfg.max_seq_len)
    throw std::invalid_argument("model_forward: sequence longer than max_seq_len");
  for (int t : batch.tokens)
    if (t < 0 || t >= cfg.vocab_size) throw std::invalid_argument("model_forward: token id out of vocab");

  PassContext ctx{tape, sup, opts};
  if (sup) {
    if (sup->site_count() != static_cast<int>(sup->selection.b.size()))
      throw std::invalid_argument("model_forward: supernet site list misaligned with selection state");
    ctx.sites_at.assign(bb.catalog.size(), {});
    for (const auto& s : sup->sites) {
      bool found = false;
      for (size_t p = 0; p < bb.catalog.size(); ++p)
        if (bb.catalog[p].name == s.position.name) {
          ctx.sites_at[p].push_back(s.index);
          found = true;
          break;
        }
      if (!found)
        throw std::invalid_argument("model_forward: site position not in catalog: " + s.position.name);
    }
  }

  auto P = [&](Array& value, Array* grad) {
    return bg ? tape.leaf(value, grad, "bb") : tape.constant(value, "bb");
  };

  Backbone& mbb = const_cast<Backbone&>(bb);
  const int tok_table = P(mbb.tok_emb, bg ? &bg->tok_emb : nullptr);
  const int pos_table = P(mbb.pos_emb, bg ? &bg->pos_emb : nullptr);

  std::vector<int> pos_ids(batch.tokens.size());
  for (int i = 0; i < batch.batch; ++i)
    for (int j = 0; j < batch.seq; ++j) pos_ids[static_cast<long>(i) * batch.seq + j] = j;

  int x = tape.add(tape.embedding(batch.tokens, tok_table), tape.embedding(pos_ids, pos_table));

  const int d = cfg.model_dim;
  const int dh = d / cfg.num_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  for (int l = 0; l < cfg.num_layers; ++l) {
    LayerParams& lp = mbb.layers[l];
    LayerParams* gp = bg ? &bg->layers[l] : nullptr;
    const int base = l * 7;  // catalog positions per layer: Q K V O W1 W2 LN

    const int wq = P(lp.wq, gp ? &gp->wq : nullptr), bq = P(lp.bq, gp ? &gp->bq : nullptr);
    const int wk = P(lp.wk, gp ? &gp->wk : nullptr), bk = P(lp.bk, gp ? &gp->bk : nullptr);
    const int wv = P(lp.wv, gp ? &gp->wv : nullptr), bv = P(lp.bv, gp ? &gp->bv : nullptr);
    const int wo = P(lp.wo, gp ? &gp->wo : nullptr), bo = P(lp.bo, gp ? &gp->bo : nullptr);
    const int w1 = P(lp.w1, gp ? &gp->w1 : nullptr), b1 = P(lp.b1, gp ? &gp->b1 : nullptr);
    const int w2 = P(lp.w2, gp ? &gp->w2 : nullptr), b2 = P(lp.b2, gp ? &gp->b2 : nullptr);
    const int lng = P(lp.ln_g, gp ? &gp->ln_g : nullptr), lnb = P(lp.ln_b, gp ? &gp->ln_b : nullptr);

    const int q = linear_with_peft(ctx, base + 0, x, wq, bq, false);
    const int k = linear_with_peft(ctx, base + 1, x, wk, bk, false);
    const int v = linear_with_peft(ctx, base + 2, x, wv, bv, false);

    std::vector<int> examples;
    examples.reserve(batch.batch);
    for (int e = 0; e < batch.batch; ++e) {
      const int qe = tape.slice_rows(q, e * batch.seq, batch.seq);
      const int ke = tape.slice_rows(k, e * batch.seq, batch.seq);
      const int ve = tape.slice_rows(v, e * batch.seq, batch.seq);
      std::vector<int> heads;
      heads.reserve(cfg.num_heads);
      for (int h = 0; h < cfg.num_heads; ++h) {
        const int qh = tape.slice_cols(qe, h * dh, dh);
        const int kh = tape.slice_cols(ke, h * dh, dh);
        const int vh = tape.slice_cols(ve, h * dh, dh);
        const int scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt_dh);
        heads.push_back(tape.matmul(tape.softmax_rows(scores), vh));
      }
      examples.push_back(tape.concat_cols(heads));
    }
    const int ctx_all = tape.concat_rows(examples);

    const int attn = linear_with_peft(ctx, base + 3, ctx_all, wo, bo, false);
    const int h1 = tape.add(x, attn);

    // post-attention layer norm position
    const int normed = tape.layernorm_rows(h1);
    int y = tape.add_rowvec(tape.mul_rowvec(normed, lng), lnb);
    if (sup) {
      for (int si : ctx.sites_at[base + 6]) {
        const ModuleSite& site = ctx.sup->sites[si];
        SiteCoeffs coeffs = pass_coeffs(ctx, site);
        if (coeffs.gate == -1) continue;
        const int delta = site_delta_nodes(tape, site, y, normed, coeffs, false);
        y = tape.add(y, delta);
      }
    }

    const int a1 = linear_with_peft(ctx, base + 4, y, w1, b1, false);
    const int a2 = tape.gelu(a1);
    const int f = linear_with_peft(ctx, base + 5, a2, w2, b2, false);
    x = tape.add(y, f);
  }

  const int pooled = tape.seq_mean(x, batch.batch);
  const int clsw = P(mbb.cls_w, bg ? &bg->cls_w : nullptr);
  const int clsb = P(mbb.cls_b, bg ? &bg->cls_b : nullptr);
  const int logits = tape.add_rowvec(tape.matmul(pooled, clsw), clsb);
  const int loss = tape.mean_softmax_xent(logits, batch.labels);
  return {loss, logits};
}

std::pair<Array, Array> forward_with_peft(const Backbone& bb, const Batch& batch,
                                          SupernetState* sup, const MixMode& mode,
                                          std::mt19937_64* rng) {
  PassOptions opts;
  opts.temperature = mode.temperature;
  opts.rng = rng;
  switch (mode.kind) {
    case MixKind::SoftMix: break;
    case MixKind::GumbelSoft: opts.gumbel_constants = true; break;
    case MixKind::GumbelHard:
      // hard sampling of detached coefficients: soft sample then argmax;
      // gradients are not requested in this convenience wrapper
      opts.gumbel_constants = true;
      break;
    case MixKind::Discrete: opts.discrete = true; break;
  }
  Tape tape;
  ForwardResult fr = model_forward(tape, bb, batch, sup, opts, nullptr);
  return {tape.val(fr.loss), tape.val(fr.logits)};
}

EvalMetrics evaluate(const Backbone& bb, const std::vector<Example>& split, SupernetState* sup) {
  Batch batch = full_batch(split);
  PassOptions opts;
  opts.discrete = sup != nullptr;
  Tape tape;
  ForwardResult fr = model_forward(tape, bb, batch, sup, opts, nullptr);
  const Array& logits = tape.val(fr.logits);
  const int C = logits.cols();
  int correct = 0;
  for (int i = 0; i < batch.batch; ++i) {
    int best = 0;
    for (int j = 1; j < C; ++j)
      if (logits.v[static_cast<long>(i) * C + j] > logits.v[static_cast<long>(i) * C + best]) best = j;
    if (best == batch.labels[i]) ++correct;
  }
  EvalMetrics m;
  m.loss = tape.val(fr.loss).v[0];
  m.accuracy = static_cast<double>(correct) / batch.batch;
  return m;
}

}  // namespace peftsearch
