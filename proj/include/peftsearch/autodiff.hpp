#pragma once

// Reverse-mode automatic differentiation over dense row-major double arrays.
// The tape is eager: every op computes its forward value at construction and
// records a backward closure. Nodes are created in topological order by
// construction, so backward() is a single reverse sweep.

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace peftsearch {

struct Array {
  std::vector<int> shape;
  std::vector<double> v;

  Array() = default;
  explicit Array(std::vector<int> s, double fill = 0.0);

  static Array zeros_like(const Array& a) {
    Array out;
    out.shape = a.shape;
    out.v.assign(a.v.size(), 0.0);
    return out;
  }

  int size() const { return static_cast<int>(v.size()); }
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  bool is_scalar() const { return v.size() == 1; }
};

int shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

class Tape {
 public:
  // Leaf bound to external storage; gradients accumulate into *grad_sink
  // (if non-null) after backward().
  int leaf(const Array& value, Array* grad_sink, std::string name);
  // Leaf with no gradient flow.
  int constant(Array value, std::string name = "const");

  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int scale(int a, double c);
  int mul_scalar(int a, int s);            // a * s, s is a [1] node
  int matmul(int a, int b);                // 2-D
  int transpose(int a);                    // 2-D
  int add_rowvec(int a, int v);            // [m,n] + [n], broadcast over rows
  int mul_rowvec(int a, int v);            // [m,n] * [n], broadcast over rows
  int slice_rows(int a, int r0, int rn);
  int slice_cols(int a, int c0, int cn);
  int concat_rows(const std::vector<int>& parts);
  int concat_cols(const std::vector<int>& parts);
  int softmax_rows(int a);
  int layernorm_rows(int a);               // no affine, eps 1e-5
  int gelu(int a);
  int embedding(const std::vector<int>& ids, int table);
  int seq_mean(int a, int groups);         // [g*s, d] -> [g, d]
  int sum(int a);                          // -> [1]
  int pick(int a, int index);              // flattened element -> [1]
  int hard_max_st(int a);                  // one-hot argmax rows, straight-through grad
  int mean_softmax_xent(int logits, const std::vector<int>& labels);  // -> [1]

  const Array& val(int id) const { return nodes_[id].val; }
  const Array& grad(int id) const { return nodes_[id].grad; }

  // Reverse sweep from a scalar loss; accumulates into leaf grad sinks.
  void backward(int loss_id);

  int num_nodes() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Array val;
    Array grad;
    bool requires_grad = false;
    std::function<void()> back;
    Array* sink = nullptr;
    std::string name;
  };

  int push(Array val, bool rg, std::string name);
  void check2d(int a, const char* op) const;
  [[noreturn]] void shape_error(const char* op, int node, const std::string& expected,
                                const std::string& actual) const;

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Max over parameter entries of |analytic - central difference| /
// (|central difference| + 1e-12). `loss` must recompute the forward value
// from the current contents of `param`.
double finite_diff_max_rel_error(std::vector<double>& param,
                                 const std::function<double()>& loss,
                                 const std::vector<double>& analytic, double step);

}  // namespace peftsearch
