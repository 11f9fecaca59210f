#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "srst/errors.hpp"
#include "srst/rng.hpp"

namespace srst {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

// Dense double-precision tensor with reverse-mode autodiff.
//
// A Tensor is a shared handle: copies alias the same storage, so parameters
// can be held by the model, an optimizer, and a recorded graph at once.
// Ops build a DAG by storing parent handles plus a backward closure on the
// output node; backward(loss) runs the closures in reverse topological
// order and accumulates (sums) into each node's grad buffer, so gradients
// from several backward calls add up until zero_grad() is called.
class Tensor {
 public:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first use
    bool requires_grad = false;
    std::vector<Tensor> parents;
    std::function<void()> backward;
  };

  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from_vector(const Shape& shape, std::vector<double> values,
                            bool requires_grad = false);
  // I.i.d. normal(0, stddev) entries.
  static Tensor randn(const Shape& shape, Rng& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t size() const;
  bool requires_grad() const;

  std::vector<double>& data();
  const std::vector<double>& data() const;

  // Grad buffer, allocated as zeros on first access.
  std::vector<double>& grad();
  bool has_grad() const;
  void zero_grad();

  double at(std::initializer_list<int> idx) const;

  // Same data, no graph edges, no grad requirement.
  Tensor detach() const;

  Impl* impl() const { return impl_.get(); }

 private:
  friend Tensor make_op_output(const Shape& shape, std::vector<Tensor> parents,
                               const char* opname);
  std::shared_ptr<Impl> impl_;
};

// --- autodiff control ---------------------------------------------------

// Thread-local: when false, ops produce graph-free outputs (eval mode).
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev_); }

 private:
  bool prev_;
};

// Process-wide debug mode: every op output (and every grad buffer during
// backward) is scanned for NaN/Inf, throwing NumericError on the first hit.
void set_debug_checks(bool on);
bool debug_checks();

// Runs reverse-mode accumulation from a scalar loss.
void backward(const Tensor& loss);

// --- elementwise and reductions -----------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sum(const Tensor& a);   // -> scalar [1]
Tensor mean(const Tensor& a);  // -> scalar [1]

// --- linear algebra ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// y = x W (+ b). Pass a default-constructed Tensor to omit the bias.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// --- shape ops ------------------------------------------------------------

Tensor reshape(const Tensor& a, const Shape& shape);
Tensor transpose2d(const Tensor& a);
// Permutes the axes of a rank-3 tensor.
Tensor permute3(const Tensor& a, int p0, int p1, int p2);
// Columns [c0, c1) of a 2-D tensor.
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor concat_rows(const std::vector<Tensor>& parts);

// --- neural-net ops -------------------------------------------------------

Tensor softmax(const Tensor& x, int axis);
// Row-wise softmax over the last axis of a 2-D tensor with a keep-mask
// (1 byte per element, 0 = masked). Masked positions get exactly 0 weight;
// a fully masked row is an error.
Tensor softmax_masked(const Tensor& x, const std::vector<std::uint8_t>& keep);
Tensor log_softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps);
// x: [Cin, H, W], kernel: [Cout, Cin, kh, kw]. Zero padding on both axes.
Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int padding);
// Row lookup: out[i] = table[ids[i]]. Gradients scatter-add into the table.
Tensor embedding(const std::vector<int>& ids, const Tensor& table);
// out[t] = x[t, ids[t]] for 2-D x.
Tensor gather_rows(const Tensor& x, const std::vector<int>& ids);
Tensor sum_rows(const Tensor& x);  // [T, d] -> [T]
// Inverted-scale dropout; identity when p == 0. Caller supplies the stream.
Tensor dropout(const Tensor& x, double p, Rng& rng);

}  // namespace srst
