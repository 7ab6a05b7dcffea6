#include "peftsearch/backbone.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "peftsearch/model.hpp"

namespace peftsearch {

void BackboneConfig::validate() const {
  if (num_layers < 1 || model_dim < 1 || ffn_dim < 1 || num_heads < 1 || vocab_size < 1 ||
      max_seq_len < 1 || num_classes < 1)
    throw std::invalid_argument("BackboneConfig: all extents must be >= 1");
  if (model_dim % num_heads != 0)
    throw std::invalid_argument("BackboneConfig: model_dim must be divisible by num_heads");
}

std::string to_string(PosKind k) {
  switch (k) {
    case PosKind::Q: return "Q";
    case PosKind::K: return "K";
    case PosKind::V: return "V";
    case PosKind::O: return "O";
    case PosKind::W1: return "W1";
    case PosKind::W2: return "W2";
    case PosKind::LN: return "LN";
  }
  return "?";
}

PosKind pos_kind_from_string(const std::string& s) {
  if (s == "Q") return PosKind::Q;
  if (s == "K") return PosKind::K;
  if (s == "V") return PosKind::V;
  if (s == "O") return PosKind::O;
  if (s == "W1") return PosKind::W1;
  if (s == "W2") return PosKind::W2;
  if (s == "LN") return PosKind::LN;
  throw std::invalid_argument("unknown position kind: " + s);
}

bool is_linear_pos(PosKind k) { return k != PosKind::LN; }

std::vector<std::pair<std::string, Array*>> Backbone::named_params() {
  std::vector<std::pair<std::string, Array*>> out;
  out.emplace_back("tok_emb", &tok_emb);
  out.emplace_back("pos_emb", &pos_emb);
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerParams& lp = layers[l];
    out.emplace_back(p + "wq", &lp.wq);
    out.emplace_back(p + "bq", &lp.bq);
    out.emplace_back(p + "wk", &lp.wk);
    out.emplace_back(p + "bk", &lp.bk);
    out.emplace_back(p + "wv", &lp.wv);
    out.emplace_back(p + "bv", &lp.bv);
    out.emplace_back(p + "wo", &lp.wo);
    out.emplace_back(p + "bo", &lp.bo);
    out.emplace_back(p + "w1", &lp.w1);
    out.emplace_back(p + "b1", &lp.b1);
    out.emplace_back(p + "w2", &lp.w2);
    out.emplace_back(p + "b2", &lp.b2);
    out.emplace_back(p + "ln_g", &lp.ln_g);
    out.emplace_back(p + "ln_b", &lp.ln_b);
  }
  out.emplace_back("cls_w", &cls_w);
  out.emplace_back("cls_b", &cls_b);
  return out;
}

std::vector<std::pair<std::string, const Array*>> Backbone::named_params() const {
  auto mut = const_cast<Backbone*>(this)->named_params();
  std::vector<std::pair<std::string, const Array*>> out;
  out.reserve(mut.size());
  for (auto& [n, a] : mut) out.emplace_back(n, a);
  return out;
}

long Backbone::param_count() const {
  long n = 0;
  for (auto& [name, a] : named_params()) n += a->size();
  return n;
}

uint64_t Backbone::params_hash() const {
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  auto mix = [&h](const void* data, size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (auto& [name, a] : named_params()) {
    mix(name.data(), name.size());
    mix(a->v.data(), a->v.size() * sizeof(double));
  }
  return h;
}

namespace {
Array randn(std::vector<int> shape, double stddev, std::mt19937_64& rng) {
  Array a(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& x : a.v) x = dist(rng);
  return a;
}
}  // namespace

Backbone build_backbone(const BackboneConfig& cfg, uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  Backbone bb;
  bb.cfg = cfg;
  const int d = cfg.model_dim, f = cfg.ffn_dim;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  bb.tok_emb = randn({cfg.vocab_size, d}, sd, rng);
  bb.pos_emb = randn({cfg.max_seq_len, d}, sd, rng);
  for (int l = 0; l < cfg.num_layers; ++l) {
    LayerParams lp;
    lp.wq = randn({d, d}, sd, rng);
    lp.bq = Array({d});
    lp.wk = randn({d, d}, sd, rng);
    lp.bk = Array({d});
    lp.wv = randn({d, d}, sd, rng);
    lp.bv = Array({d});
    lp.wo = randn({d, d}, sd, rng);
    lp.bo = Array({d});
    lp.w1 = randn({d, f}, sd, rng);
    lp.b1 = Array({f});
    lp.w2 = randn({f, d}, 1.0 / std::sqrt(static_cast<double>(f)), rng);
    lp.b2 = Array({d});
    lp.ln_g = Array({d}, 1.0);
    lp.ln_b = Array({d});
    bb.layers.push_back(std::move(lp));
  }
  bb.cls_w = randn({d, cfg.num_classes}, sd, rng);
  bb.cls_b = Array({cfg.num_classes});

  for (int l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    bb.catalog.push_back({PosKind::Q, l, d, d, p + "Q"});
    bb.catalog.push_back({PosKind::K, l, d, d, p + "K"});
    bb.catalog.push_back({PosKind::V, l, d, d, p + "V"});
    bb.catalog.push_back({PosKind::O, l, d, d, p + "O"});
    bb.catalog.push_back({PosKind::W1, l, d, f, p + "W1"});
    bb.catalog.push_back({PosKind::W2, l, f, d, p + "W2"});
    bb.catalog.push_back({PosKind::LN, l, d, d, p + "LN"});
  }
  return bb;
}

void pretrain_backbone(Backbone& bb, const SplitData& data, int steps, int batch_size,
                       double lr, uint64_t seed) {
  if (steps < 0) throw std::invalid_argument("pretrain_backbone: negative steps");
  std::mt19937_64 rng(seed);
  BackboneGrads grads(bb);
  std::vector<Array*> values;
  std::vector<Array*> gsinks = grads.flat(bb, values);
  double last_loss = 0.0;
  for (int t = 0; t < steps; ++t) {
    Batch batch = sample_batch(data.train, batch_size, rng);
    grads.zero();
    Tape tape;
    ForwardResult fr = model_forward(tape, bb, batch, nullptr, {}, &grads);
    tape.backward(fr.loss);
    last_loss = tape.val(fr.loss).v[0];
    for (size_t i = 0; i < values.size(); ++i)
      for (int j = 0; j < values[i]->size(); ++j) values[i]->v[j] -= lr * gsinks[i]->v[j];
  }
  bb.final_pretrain_loss = last_loss;
  bb.frozen = true;
}

namespace {
constexpr char kMagic[8] = {'P', 'F', 'T', 'B', 'B', '0', '0', '1'};

template <typename T>
void put(std::ostream& os, const T& x) {
  os.write(reinterpret_cast<const char*>(&x), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T x{};
  is.read(reinterpret_cast<char*>(&x), sizeof(T));
  if (!is) throw std::runtime_error("backbone checkpoint: truncated file");
  return x;
}
}  // namespace

void save_backbone(const Backbone& bb, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("save_backbone: cannot open " + path);
  os.write(kMagic, sizeof(kMagic));
  put(os, bb.cfg.num_layers);
  put(os, bb.cfg.model_dim);
  put(os, bb.cfg.ffn_dim);
  put(os, bb.cfg.num_heads);
  put(os, bb.cfg.vocab_size);
  put(os, bb.cfg.max_seq_len);
  put(os, bb.cfg.num_classes);
  put(os, bb.final_pretrain_loss);
  put(os, static_cast<int>(bb.frozen));
  for (auto& [name, a] : bb.named_params()) {
    put(os, static_cast<int>(name.size()));
    os.write(name.data(), static_cast<long>(name.size()));
    put(os, static_cast<int>(a->shape.size()));
    for (int e : a->shape) put(os, e);
    os.write(reinterpret_cast<const char*>(a->v.data()),
             static_cast<long>(a->v.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("save_backbone: write failed for " + path);
}

Backbone load_backbone(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_backbone: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("load_backbone: bad magic / unsupported version in " + path);
  BackboneConfig cfg;
  cfg.num_layers = get<int>(is);
  cfg.model_dim = get<int>(is);
  cfg.ffn_dim = get<int>(is);
  cfg.num_heads = get<int>(is);
  cfg.vocab_size = get<int>(is);
  cfg.max_seq_len = get<int>(is);
  cfg.num_classes = get<int>(is);
  Backbone bb = build_backbone(cfg, 0);
  bb.final_pretrain_loss = get<double>(is);
  bb.frozen = get<int>(is) != 0;
  for (auto& [name, a] : bb.named_params()) {
    const int nlen = get<int>(is);
    std::string fname(nlen, '\0');
    is.read(fname.data(), nlen);
    if (fname != name) throw std::runtime_error("load_backbone: parameter order mismatch: " + fname);
    const int ndim = get<int>(is);
    std::vector<int> shape(ndim);
    for (int& e : shape) e = get<int>(is);
    if (shape != a->shape) throw std::runtime_error("load_backbone: shape mismatch for " + name);
    is.read(reinterpret_cast<char*>(a->v.data()), static_cast<long>(a->v.size() * sizeof(double)));
    if (!is) throw std::runtime_error("load_backbone: truncated parameter " + name);
  }
  return bb;
}

}  // namespace peftsearch
