#include "peftsearch/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "peftsearch/kernels.hpp"

namespace peftsearch {

namespace ker = kernels;

Array::Array(std::vector<int> s, double fill) : shape(std::move(s)) {
  for (int e : shape)
    if (e <= 0) throw std::invalid_argument("Array: nonpositive extent");
  v.assign(shape_numel(shape), fill);
}

int shape_numel(const std::vector<int>& shape) {
  int n = 1;
  for (int e : shape) n *= e;
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

int Tape::push(Array val, bool rg, std::string name) {
  Node n;
  n.grad = Array::zeros_like(val);
  n.val = std::move(val);
  n.requires_grad = rg;
  n.name = std::move(name);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::shape_error(const char* op, int node, const std::string& expected,
                       const std::string& actual) const {
  std::ostringstream os;
  os << op << ": shape mismatch at node " << node << " ('" << nodes_[node].name
     << "'): expected " << expected << ", got " << actual;
  throw std::invalid_argument(os.str());
}

void Tape::check2d(int a, const char* op) const {
  if (nodes_[a].val.shape.size() != 2)
    shape_error(op, a, "rank-2", shape_str(nodes_[a].val.shape));
}

int Tape::leaf(const Array& value, Array* grad_sink, std::string name) {
  int id = push(value, grad_sink != nullptr, std::move(name));
  nodes_[id].sink = grad_sink;
  return id;
}

int Tape::constant(Array value, std::string name) {
  return push(std::move(value), false, std::move(name));
}

int Tape::add(int a, int b) {
  if (nodes_[a].val.shape != nodes_[b].val.shape)
    shape_error("add", b, shape_str(nodes_[a].val.shape), shape_str(nodes_[b].val.shape));
  Array out(nodes_[a].val.shape);
  ker::add(nodes_[a].val.v.data(), nodes_[b].val.v.data(), out.v.data(), out.size());
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  int id = push(std::move(out), rg, "add");
  if (rg)
    nodes_[id].back = [this, id, a, b] {
      const auto& g = nodes_[id].grad.v;
      if (nodes_[a].requires_grad)
        for (int i = 0; i < (int)g.size(); ++i) nodes_[a].grad.v[i] += g[i];
      if (nodes_[b].requires_grad)
        for (int i = 0; i < (int)g.size(); ++i) nodes_[b].grad.v[i] += g[i];
    };
  return id;
}

int Tape::sub(int a, int b) { return add(a, scale(b, -1.0)); }

int Tape::mul(int a, int b) {
  if (nodes_[a].val.shape != nodes_[b].val.shape)
    shape_error("mul", b, shape_str(nodes_[a].val.shape), shape_str(nodes_[b].val.shape));
  Array out(nodes_[a].val.shape);
  ker::mul(nodes_[a].val.v.data(), nodes_[b].val.v.data(), out.v.data(), out.size());
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  int id = push(std::move(out), rg, "mul");
  if (rg)
    nodes_[id].back = [this, id, a, b] {
      const auto& g = nodes_[id].grad.v;
      if (nodes_[a].requires_grad)
        for (int i = 0; i < (int)g.size(); ++i) nodes_[a].grad.v[i] += g[i] * nodes_[b].val.v[i];
      if (nodes_[b].requires_grad)
        for (int i = 0; i < (int)g.size(); ++i) nodes_[b].grad.v[i] += g[i] * nodes_[a].val.v[i];
    };
  return id;
}

int Tape::scale(int a, double c) {
  Array out(nodes_[a].val.shape);
  for (int i = 0; i < out.size(); ++i) out.v[i] = nodes_[a].val.v[i] * c;
  bool rg = nodes_[a].requires_grad;
  int id = push(std::move(out), rg, "scale");
  if (rg)
    nodes_[id].back = [this, id, a, c] {
      const auto& g = nodes_[id].grad.v;
      for (int i = 0; i < (int)g.size(); ++i) nodes_[a].grad.v[i] += g[i] * c;
    };
  return id;
}

int Tape::mul_scalar(int a, int s) {
  if (!nodes_[s].val.is_scalar()) shape_error("mul_scalar", s, "[1]", shape_str(nodes_[s].val.shape));
  Array out(nodes_[a].val.shape);
  const double sv = nodes_[s].val.v[0];
  for (int i = 0; i < out.size(); ++i) out.v[i] = nodes_[a].val.v[i] * sv;
  bool rg = nodes_[a].requires_grad || nodes_[s].requires_grad;
  int id = push(std::move(out), rg, "mul_scalar");
  if (rg)
    nodes_[id].back = [this, id, a, s] {
      const auto& g = nodes_[id].grad.v;
      const double sv = nodes_[s].val.v[0];
      if (nodes_[a].requires_grad)
        for (int i = 0; i < (int)g.size(); ++i) nodes_[a].grad.v[i] += g[i] * sv;
      if (nodes_[s].requires_grad) {
        double acc = 0.0;
        for (int i = 0; i < (int)g.size(); ++i) acc += g[i] * nodes_[a].val.v[i];
        nodes_[s].grad.v[0] += acc;
      }
    };
  return id;
}

int Tape::matmul(int a, int b) {
  check2d(a, "matmul");
  check2d(b, "matmul");
  const int m = nodes_[a].val.rows(), k = nodes_[a].val.cols();
  if (nodes_[b].val.rows() != k)
    shape_error("matmul", b, "[" + std::to_string(k) + "x*]", shape_str(nodes_[b].val.shape));
  const int n = nodes_[b].val.cols();
  Array out({m, n});
  ker::matmul(nodes_[a].val.v.data(), nodes_[b].val.v.data(), out.v.data(), m, k, n);
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  int id = push(std::move(out), rg, "matmul");
  if (rg)
    nodes_[id].back = [this, id, a, b, m, k, n] {
      const double* g = nodes_[id].grad.v.data();
      if (nodes_[a].requires_grad) {
        std::vector<double> da(static_cast<size_t>(m) * k);
        ker::matmul_nt(g, nodes_[b].val.v.data(), da.data(), m, n, k);
        for (int i = 0; i < m * k; ++i) nodes_[a].grad.v[i] += da[i];
      }
      if (nodes_[b].requires_grad) {
        std::vector<double> db(static_cast<size_t>(k) * n);
        ker::matmul_tn(nodes_[a].val.v.data(), g, db.data(), m, k, n);
        for (int i = 0; i < k * n; ++i) nodes_[b].grad.v[i] += db[i];
      }
    };
  return id;
}

int Tape::transpose(int a) {
  check2d(a, "transpose");
  const int m = nodes_[a].val.rows(), n = nodes_[a].val.cols();
  Array out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.v[static_cast<long>(j) * m + i] = nodes_[a].val.v[static_cast<long>(i) * n + j];
  bool rg = nodes_[a].requires_grad;
  int id = push(std::move(out), rg, "transpose");
  if (rg)
    nodes_[id].back = [this, id, a, m, n] {
      const auto& g = nodes_[id].grad.v;
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < m; ++i)
          nodes_[a].grad.v[static_cast<long>(i) * n + j] += g[static_cast<long>(j) * m + i];
    };
  return id;
}

int Tape::add_rowvec(int a, int v) {
  check2d(a, "add_rowvec");
  const int m = nodes_[a].val.rows(), n = nodes_[a].val.cols();
  if (nodes_[v].val.size() != n)
    shape_error("add_rowvec", v, "[" + std::to_string(n) + "]", shape_str(nodes_[v].val.shape));
  Array out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.v[static_cast<long>(i) * n + j] = nodes_[a].val.v[static_cast<long>(i) * n + j] + nodes_[v].val.v[j];
  bool rg = nodes_[a].requires_grad || nodes_[v].requires_grad;
  int id = push(std::move(out), rg, "add_rowvec");
  if (rg)
    nodes_[id].back = [this, id, a, v, m, n] {
      const auto& g = nodes_[id].grad.v;
      if (nodes_[a].requires_grad)
        for (int i = 0; i < m * n; ++i) nodes_[a].grad.v[i] += g[i];
      if (nodes_[v].requires_grad)
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) nodes_[v].grad.v[j] += g[static_cast<long>(i) * n + j];
    };
  return id;
}

int Tape::mul_rowvec(int a, int v) {
  check2d(a, "mul_rowvec");
  const int m = nodes_[a].val.rows(), n = nodes_[a].val.cols();
  if (nodes_[v].val.size() != n)
    shape_error("mul_rowvec", v, "[" + std::to_string(n) + "]", shape_str(nodes_[v].val.shape));
  Array out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.v[static_cast<long>(i) * n + j] = nodes_[a].val.v[static_cast<long>(i) * n + j] * nodes_[v].val.v[j];
  bool rg = nodes_[a].requires_grad || nodes_[v].requires_grad;
  int id = push(std::move(out), rg, "mul_rowvec");
  if (rg)
    nodes_[id].back = [this, id, a, v, m, n] {
      const auto& g = nodes_[id].grad.v;
      if (nodes_[a].requires_grad)
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            nodes_[a].grad.v[static_cast<long>(i) * n + j] += g[static_cast<long>(i) * n + j] * nodes_[v].val.v[j];
      if (nodes_[v].requires_grad)
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            nodes_[v].grad.v[j] += g[static_cast<long>(i) * n + j] * nodes_[a].val.v[static_cast<long>(i) * n + j];
    };
  return id;
}

int Tape::slice_rows(int a, int r0, int rn) {
  check2d(a, "slice_rows");
  const int m = nodes_[a].val.rows(), n = nodes_[a].val.cols();
  if (r0 < 0 || rn <= 0 || r0 + rn > m)
    shape_error("slice_rows", a, "rows within [0," + std::to_string(m) + ")","[" + std::to_string(r0) + "," + std::to_string(r0 + rn) + ")");
  Array out({rn, n});
  std::copy(nodes_[a].val.v.begin() + static_cast<long>(r0) * n,
            nodes_[a].val.v.begin() + static_cast<long>(r0 + rn) * n, out.v.begin());
  bool rg = nodes_[a].requires_grad;
  int id = push(std::move(out), rg, "slice_rows");
  if (rg)
    nodes_[id].back = [this, id, a, r0, rn, n] {
      const auto& g = nodes_[id].grad.v;
      for (int i = 0; i < rn * n; ++i) nodes_[a].grad.v[static_cast<long>(r0) * n + i] += g[i];
    };
  return id;
}

int Tape::slice_cols(int a, int c0, int cn) {
  check2d(a, "slice_cols");
  const int m = nodes_[a].val.rows(), n = nodes_[a].val.cols();
  if (c0 < 0 || cn <= 0 || c0 + cn > n)
    shape_error("slice_cols", a, "cols within [0," + std::to_string(n) + ")", "[" + std::to_string(c0) + "," + std::to_string(c0 + cn) + ")");
  Array out({m, cn});
  for (int i = 0; i < m; ++i)
    std::copy(nodes_[a].val.v.begin() + static_cast<long>(i) * n + c0,
              nodes_[a].val.v.begin() + static_cast<long>(i) * n + c0 + cn,
              out.v.begin() + static_cast<long>(i) * cn);
  bool rg = nodes_[a].requires_grad;
  int id = push(std::move(out), rg, "slice_cols");
  if (rg)
    nodes_[id].back = [this, id, a, c0, cn, m, n] {
      const auto& g = nodes_[id].grad.v;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < cn; ++j)
          nodes_[a].grad.v[static_cast<long>(i) * n + c0 + j] += g[static_cast<long>(i) * cn + j];
    };
  return id;
}

int Tape::concat_rows(const std::vector<int>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty part list");
  const int n = nodes_[parts[0]].val.cols();
  int m = 0;
  bool rg = false;
  for (int p : parts) {
    check2d(p, "concat_rows");
    if (nodes_[p].val.cols() != n)
      shape_error("concat_rows", p, "[*x" + std::to_string(n) + "]", shape_str(nodes_[p].val.shape));
    m += nodes_[p].val.rows();
    rg = rg || nodes_[p].requires_grad;
  }
  Array out({m, n});
  int r = 0;
  for (int p : parts) {
    std::copy(nodes_[p].val.v.begin(), nodes_[p].val.v.end(), out.v.begin() + static_cast<long>(r) * n);
    r += nodes_[p].val.rows();
  }
  int id = push(std::move(out), rg, "concat_rows");
  if (rg)
    nodes_[id].back = [this, id, parts, n] {
      const auto& g = nodes_[id].grad.v;
      int r = 0;
      for (int p : parts) {
        const int rows = nodes_[p].val.rows();
        if (nodes_[p].requires_grad)
          for (int i = 0; i < rows * n; ++i) nodes_[p].grad.v[i] += g[static_cast<long>(r) * n + i];
        r += rows;
      }
    };
  return id;
}

int Tape::concat_cols(const std::vector<int>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty part list");
  const int m = nodes_[parts[0]].val.rows();
  int n = 0;
  bool rg = false;
  for (int p : parts) {
    check2d(p, "concat_cols");
    if (nodes_[p].val.rows() != m)
      shape_error("concat_cols", p, "[" + std::to_string(m) + "x*]", shape_str(nodes_[p].val.shape));
    n += nodes_[p].val.cols();
    rg = rg || nodes_[p].requires_grad;
  }
  Array out({m, n});
  int c = 0;
  for (int p : parts) {
    const int pc = nodes_[p].val.cols();
    for (int i = 0; i < m; ++i)
      std::copy(nodes_[p].val.v.begin() + static_cast<long>(i) * pc,
                nodes_[p].val.v.begin() + static_cast<long>(i) * pc + pc,
                out.v.begin() + static_cast<long>(i) * n + c);
    c += pc;
  }
  int id = push(std::move(out), rg, "concat_cols");
  if (rg)
    nodes_[id].back = [this, id, parts, m, n] {
      const auto& g = nodes_[id].grad.v;
      int c = 0;
      for (int p : parts) {
        const int pc = nodes_[p].val.cols();
        if (nodes_[p].requires_grad)
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < pc; ++j)
              nodes_[p].grad.v[static_cast<long>(i) * pc + j] += g[static_cast<long>(i) * n + c + j];
        c += pc;
      }
    };
  return id;
}

int Tape::softmax_rows(int a) {
  check2d(a, "softmax_rows");
  const int m = nodes_[a].val.rows(), n = nodes_[a].val.cols();
  Array out({m, n});
  ker::softmax_rows(nodes_[a].val.v.data(), out.v.data(), m, n);
  bool rg = nodes_[a].requires_grad;
  int id = push(std::move(out), rg, "softmax_rows");
  if (rg)
    nodes_[id].back = [this, id, a, m, n] {
      const auto& g = nodes_[id].grad.v;
      const auto& y = nodes_[id].val.v;
      for (int i = 0; i < m; ++i) {
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += g[static_cast<long>(i) * n + j] * y[static_cast<long>(i) * n + j];
        for (int j = 0; j < n; ++j)
          nodes_[a].grad.v[static_cast<long>(i) * n + j] +=
              y[static_cast<long>(i) * n + j] * (g[static_cast<long>(i) * n + j] - dot);
      }
    };
  return id;
}

int Tape::layernorm_rows(int a) {
  check2d(a, "layernorm_rows");
  const int m = nodes_[a].val.rows(), n = nodes_[a].val.cols();
  Array out({m, n});
  ker::layernorm_rows(nodes_[a].val.v.data(), out.v.data(), m, n);
  bool rg = nodes_[a].requires_grad;
  int id = push(std::move(out), rg, "layernorm_rows");
  if (rg)
    nodes_[id].back = [this, id, a, m, n] {
      const auto& g = nodes_[id].grad.v;
      const auto& y = nodes_[id].val.v;
      const auto& x = nodes_[a].val.v;
      for (int i = 0; i < m; ++i) {
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += x[static_cast<long>(i) * n + j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
          const double d = x[static_cast<long>(i) * n + j] - mean;
          var += d * d;
        }
        var /= n;
        const double inv = 1.0 / std::sqrt(var + ker::kLayerNormEps);
        double gmean = 0.0, gymean = 0.0;
        for (int j = 0; j < n; ++j) {
          gmean += g[static_cast<long>(i) * n + j];
          gymean += g[static_cast<long>(i) * n + j] * y[static_cast<long>(i) * n + j];
        }
        gmean /= n;
        gymean /= n;
        for (int j = 0; j < n; ++j)
          nodes_[a].grad.v[static_cast<long>(i) * n + j] +=
              inv * (g[static_cast<long>(i) * n + j] - gmean - y[static_cast<long>(i) * n + j] * gymean);
      }
    };
  return id;
}

int Tape::gelu(int a) {
  Array out(nodes_[a].val.shape);
  ker::gelu(nodes_[a].val.v.data(), out.v.data(), out.size());
  bool rg = nodes_[a].requires_grad;
  int id = push(std::move(out), rg, "gelu");
  if (rg)
    nodes_[id].back = [this, id, a] {
      const auto& g = nodes_[id].grad.v;
      for (int i = 0; i < (int)g.size(); ++i)
        nodes_[a].grad.v[i] += g[i] * ker::gelu_grad_value(nodes_[a].val.v[i]);
    };
  return id;
}

int Tape::embedding(const std::vector<int>& ids, int table) {
  check2d(table, "embedding");
  const int vocab = nodes_[table].val.rows(), d = nodes_[table].val.cols();
  for (int id : ids)
    if (id < 0 || id >= vocab)
      throw std::invalid_argument("embedding: id " + std::to_string(id) + " out of vocab " +
                                  std::to_string(vocab));
  Array out({static_cast<int>(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy(nodes_[table].val.v.begin() + static_cast<long>(ids[i]) * d,
              nodes_[table].val.v.begin() + static_cast<long>(ids[i]) * d + d,
              out.v.begin() + static_cast<long>(i) * d);
  bool rg = nodes_[table].requires_grad;
  int id = push(std::move(out), rg, "embedding");
  if (rg)
    nodes_[id].back = [this, id, ids, table, d] {
      const auto& g = nodes_[id].grad.v;
      for (size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < d; ++j)
          nodes_[table].grad.v[static_cast<long>(ids[i]) * d + j] += g[static_cast<long>(i) * d + j];
    };
  return id;
}

int Tape::seq_mean(int a, int groups) {
  check2d(a, "seq_mean");
  const int m = nodes_[a].val.rows(), n = nodes_[a].val.cols();
  if (groups <= 0 || m % groups != 0)
    shape_error("seq_mean", a, std::to_string(groups) + " groups dividing rows", shape_str(nodes_[a].val.shape));
  const int s = m / groups;
  Array out({groups, n});
  for (int gi = 0; gi < groups; ++gi)
    for (int r = 0; r < s; ++r)
      for (int j = 0; j < n; ++j)
        out.v[static_cast<long>(gi) * n + j] += nodes_[a].val.v[(static_cast<long>(gi) * s + r) * n + j] / s;
  bool rg = nodes_[a].requires_grad;
  int id = push(std::move(out), rg, "seq_mean");
  if (rg)
    nodes_[id].back = [this, id, a, groups, s, n] {
      const auto& g = nodes_[id].grad.v;
      for (int gi = 0; gi < groups; ++gi)
        for (int r = 0; r < s; ++r)
          for (int j = 0; j < n; ++j)
            nodes_[a].grad.v[(static_cast<long>(gi) * s + r) * n + j] += g[static_cast<long>(gi) * n + j] / s;
    };
  return id;
}

int Tape::sum(int a) {
  Array out({1});
  for (double x : nodes_[a].val.v) out.v[0] += x;
  bool rg = nodes_[a].requires_grad;
  int id = push(std::move(out), rg, "sum");
  if (rg)
    nodes_[id].back = [this, id, a] {
      const double g = nodes_[id].grad.v[0];
      for (auto& x : nodes_[a].grad.v) x += g;
    };
  return id;
}

int Tape::pick(int a, int index) {
  if (index < 0 || index >= nodes_[a].val.size())
    shape_error("pick", a, "index < " + std::to_string(nodes_[a].val.size()), std::to_string(index));
  Array out({1});
  out.v[0] = nodes_[a].val.v[index];
  bool rg = nodes_[a].requires_grad;
  int id = push(std::move(out), rg, "pick");
  if (rg)
    nodes_[id].back = [this, id, a, index] { nodes_[a].grad.v[index] += nodes_[id].grad.v[0]; };
  return id;
}

int Tape::hard_max_st(int a) {
  check2d(a, "hard_max_st");
  const int m = nodes_[a].val.rows(), n = nodes_[a].val.cols();
  Array out({m, n});
  for (int i = 0; i < m; ++i) {
    int best = 0;
    for (int j = 1; j < n; ++j)
      if (nodes_[a].val.v[static_cast<long>(i) * n + j] > nodes_[a].val.v[static_cast<long>(i) * n + best]) best = j;
    out.v[static_cast<long>(i) * n + best] = 1.0;
  }
  bool rg = nodes_[a].requires_grad;
  int id = push(std::move(out), rg, "hard_max_st");
  if (rg)
    nodes_[id].back = [this, id, a] {
      const auto& g = nodes_[id].grad.v;
      for (int i = 0; i < (int)g.size(); ++i) nodes_[a].grad.v[i] += g[i];
    };
  return id;
}

int Tape::mean_softmax_xent(int logits, const std::vector<int>& labels) {
  check2d(logits, "mean_softmax_xent");
  const int m = nodes_[logits].val.rows(), n = nodes_[logits].val.cols();
  if ((int)labels.size() != m)
    shape_error("mean_softmax_xent", logits, std::to_string(labels.size()) + " rows", shape_str(nodes_[logits].val.shape));
  for (int y : labels)
    if (y < 0 || y >= n) throw std::invalid_argument("mean_softmax_xent: label out of range");
  Array out({1});
  std::vector<double> probs(static_cast<size_t>(m) * n);
  ker::softmax_rows(nodes_[logits].val.v.data(), probs.data(), m, n);
  double loss = 0.0;
  for (int i = 0; i < m; ++i) loss += -std::log(std::max(probs[static_cast<long>(i) * n + labels[i]], 1e-300));
  out.v[0] = loss / m;
  bool rg = nodes_[logits].requires_grad;
  int id = push(std::move(out), rg, "mean_softmax_xent");
  if (rg)
    nodes_[id].back = [this, id, logits, labels, probs = std::move(probs), m, n] {
      const double g = nodes_[id].grad.v[0] / m;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          nodes_[logits].grad.v[static_cast<long>(i) * n + j] +=
              g * (probs[static_cast<long>(i) * n + j] - (j == labels[i] ? 1.0 : 0.0));
    };
  return id;
}

void Tape::backward(int loss_id) {
  if (loss_id < 0 || loss_id >= (int)nodes_.size())
    throw std::invalid_argument("backward: no such node (was forward run?)");
  if (!nodes_[loss_id].val.is_scalar())
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(nodes_[loss_id].val.shape));
  nodes_[loss_id].grad.v[0] = 1.0;
  for (int i = loss_id; i >= 0; --i)
    if (nodes_[i].requires_grad && nodes_[i].back) nodes_[i].back();
  for (auto& n : nodes_)
    if (n.sink) {
      if (n.sink->shape != n.val.shape) *n.sink = Array::zeros_like(n.val);
      for (int i = 0; i < n.val.size(); ++i) n.sink->v[i] += n.grad.v[i];
    }
  backward_done_ = true;
}

double finite_diff_max_rel_error(std::vector<double>& param,
                                 const std::function<double()>& loss,
                                 const std::vector<double>& analytic, double step) {
  if (step <= 0.0 || step > 1e-2) throw std::invalid_argument("finite_diff: step outside (0, 1e-2]");
  if (param.size() != analytic.size())
    throw std::invalid_argument("finite_diff: gradient size mismatch");
  double worst = 0.0;
  for (size_t i = 0; i < param.size(); ++i) {
    const double save = param[i];
    param[i] = save + step;
    const double lp = loss();
    param[i] = save - step;
    const double lm = loss();
    param[i] = save;
    const double fd = (lp - lm) / (2.0 * step);
    const double err = std::abs(analytic[i] - fd) / (std::abs(fd) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace peftsearch
