#include "srst/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace srst {

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<bool> g_debug_checks{false};

std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

void check_finite(const std::vector<double>& v, const char* what,
                  const char* opname) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(opname) + ": non-finite value in " + what);
    }
  }
}

void ensure_same_shape(const Tensor& a, const Tensor& b, const char* opname) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(opname) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

std::vector<double>& grad_of(const Tensor& t) {
  return const_cast<Tensor&>(t).grad();
}

bool wants_grad(const Tensor& t) { return t.requires_grad(); }

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ")";
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }
void set_debug_checks(bool on) { g_debug_checks.store(on); }
bool debug_checks() { return g_debug_checks.load(); }

// --- Tensor basics --------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return from_vector(shape, std::vector<double>(numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return from_vector(shape, std::vector<double>(numel(shape), value), requires_grad);
}

Tensor Tensor::from_vector(const Shape& shape, std::vector<double> values,
                           bool requires_grad) {
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor: non-positive dimension in " + shape_str(shape));
  }
  if (static_cast<std::int64_t>(values.size()) != numel(shape)) {
    throw DimensionError("tensor: value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = shape;
  t.impl_->data = std::move(values);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.normal() * stddev;
  return from_vector(shape, std::move(v), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw UsageError("tensor: use of undefined tensor");
  return impl_->shape;
}

std::int64_t Tensor::size() const { return numel(shape()); }

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

std::vector<double>& Tensor::data() {
  if (!impl_) throw UsageError("tensor: use of undefined tensor");
  return impl_->data;
}

const std::vector<double>& Tensor::data() const {
  if (!impl_) throw UsageError("tensor: use of undefined tensor");
  return impl_->data;
}

std::vector<double>& Tensor::grad() {
  if (!impl_) throw UsageError("tensor: use of undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

void Tensor::zero_grad() {
  if (!impl_) throw UsageError("tensor: use of undefined tensor");
  impl_->grad.assign(impl_->data.size(), 0.0);
}

double Tensor::at(std::initializer_list<int> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size()) {
    throw DimensionError("at: index rank " + std::to_string(idx.size()) +
                         " vs tensor rank " + std::to_string(s.size()));
  }
  std::int64_t flat = 0;
  size_t k = 0;
  for (int i : idx) {
    if (i < 0 || i >= s[k]) throw DimensionError("at: index out of range");
    flat = flat * s[k] + i;
    ++k;
  }
  return data()[flat];
}

Tensor Tensor::detach() const {
  if (!impl_) return Tensor();
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  return t;
}

// Creates the output node of an op, wiring graph edges when grad is on.
Tensor make_op_output(const Shape& shape, std::vector<Tensor> parents,
                      const char* opname) {
  Tensor t;
  t.impl_ = std::make_shared<Tensor::Impl>();
  t.impl_->shape = shape;
  t.impl_->data.assign(numel(shape), 0.0);
  if (grad_enabled()) {
    bool any = false;
    for (const Tensor& p : parents) any = any || p.requires_grad();
    if (any) {
      t.impl_->requires_grad = true;
      t.impl_->parents = std::move(parents);
    }
  }
  (void)opname;
  return t;
}

namespace {

// Attaches the backward closure unless the output ended up graph-free.
void set_backward(Tensor& out, std::function<void()> fn, const char* opname) {
  if (debug_checks()) check_finite(out.data(), "output", opname);
  if (out.impl()->requires_grad) out.impl()->backward = std::move(fn);
}

}  // namespace

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw UsageError("backward: loss must be a defined scalar tensor");
  }
  if (!loss.requires_grad()) {
    throw UsageError("backward: loss does not require grad");
  }
  // Iterative post-order DFS; parents are visited in recorded order, so the
  // execution order (and therefore accumulation order) is deterministic.
  std::vector<Tensor::Impl*> order;
  std::unordered_set<Tensor::Impl*> seen;
  struct Frame {
    Tensor::Impl* node;
    size_t next_parent;
  };
  std::vector<Frame> stack{{loss.impl(), 0}};
  seen.insert(loss.impl());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Tensor::Impl* p = f.node->parents[f.next_parent++].impl();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  grad_of(loss)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor::Impl* node = *it;
    if (node->backward) {
      node->backward();
      if (debug_checks()) {
        for (const Tensor& p : node->parents) {
          if (p.impl()->requires_grad && !p.impl()->grad.empty()) {
            check_finite(p.impl()->grad, "gradient", "backward");
          }
        }
      }
    }
  }
}

// --- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  ensure_same_shape(a, b, "add");
  Tensor out = make_op_output(a.shape(), {a, b}, "add");
  const std::int64_t n = out.size();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  set_backward(out, [a, b, self = out.impl()]() {
    const std::vector<double>& g = self->grad;
    if (wants_grad(a)) {
      std::vector<double>& ga = grad_of(a);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (wants_grad(b)) {
      std::vector<double>& gb = grad_of(b);
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  }, "add");
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  ensure_same_shape(a, b, "sub");
  Tensor out = make_op_output(a.shape(), {a, b}, "sub");
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  set_backward(out, [a, b, self = out.impl()]() {
    const std::vector<double>& g = self->grad;
    if (wants_grad(a)) {
      std::vector<double>& ga = grad_of(a);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (wants_grad(b)) {
      std::vector<double>& gb = grad_of(b);
      for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  }, "sub");
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  ensure_same_shape(a, b, "mul");
  Tensor out = make_op_output(a.shape(), {a, b}, "mul");
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  set_backward(out, [a, b, self = out.impl()]() {
    const std::vector<double>& g = self->grad;
    if (wants_grad(a)) {
      std::vector<double>& ga = grad_of(a);
      const std::vector<double>& vb = b.data();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (wants_grad(b)) {
      std::vector<double>& gb = grad_of(b);
      const std::vector<double>& va = a.data();
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    }
  }, "mul");
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = make_op_output(a.shape(), {a}, "scale");
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
  set_backward(out, [a, c, self = out.impl()]() {
    if (!wants_grad(a)) return;
    const std::vector<double>& g = self->grad;
    std::vector<double>& ga = grad_of(a);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  }, "scale");
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = make_op_output(a.shape(), {a}, "add_scalar");
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + c;
  set_backward(out, [a, self = out.impl()]() {
    if (!wants_grad(a)) return;
    const std::vector<double>& g = self->grad;
    std::vector<double>& ga = grad_of(a);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  }, "add_scalar");
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = make_op_output(a.shape(), {a}, "sigmoid");
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = a.data()[i];
    // Stable in both tails.
    out.data()[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                             : std::exp(x) / (1.0 + std::exp(x));
  }
  set_backward(out, [a, self = out.impl()]() {
    if (!wants_grad(a)) return;
    const std::vector<double>& g = self->grad;
    const std::vector<double>& y = self->data;
    std::vector<double>& ga = grad_of(a);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  }, "sigmoid");
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = make_op_output(a.shape(), {a}, "relu");
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = std::max(0.0, a.data()[i]);
  set_backward(out, [a, self = out.impl()]() {
    if (!wants_grad(a)) return;
    const std::vector<double>& g = self->grad;
    const std::vector<double>& x = a.data();
    std::vector<double>& ga = grad_of(a);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > 0.0 ? g[i] : 0.0;
  }, "relu");
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = make_op_output({1}, {a}, "sum");
  double s = 0.0;
  for (double x : a.data()) s += x;
  out.data()[0] = s;
  set_backward(out, [a, self = out.impl()]() {
    if (!wants_grad(a)) return;
    const double g = self->grad[0];
    std::vector<double>& ga = grad_of(a);
    for (double& x : ga) x += g;
  }, "sum");
  return out;
}

Tensor mean(const Tensor& a) {
  Tensor out = make_op_output({1}, {a}, "mean");
  double s = 0.0;
  for (double x : a.data()) s += x;
  const double inv = 1.0 / static_cast<double>(a.size());
  out.data()[0] = s * inv;
  set_backward(out, [a, inv, self = out.impl()]() {
    if (!wants_grad(a)) return;
    const double g = self->grad[0] * inv;
    std::vector<double>& ga = grad_of(a);
    for (double& x : ga) x += g;
  }, "mean");
  return out;
}

// --- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2) {
    throw DimensionError("matmul: expects 2-D tensors, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const int m = a.shape()[0], k = a.shape()[1];
  const int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions differ, " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out = make_op_output({m, n}, {a, b}, "matmul");
  {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (int i = 0; i < m; ++i) {
      double* orow = po + static_cast<std::int64_t>(i) * n;
      const double* arow = pa + static_cast<std::int64_t>(i) * k;
      for (int kk = 0; kk < k; ++kk) {
        const double av = arow[kk];
        if (av == 0.0) continue;
        const double* brow = pb + static_cast<std::int64_t>(kk) * n;
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
  set_backward(out, [a, b, m, k, n, self = out.impl()]() {
    const double* g = self->grad.data();
    if (wants_grad(a)) {
      // dA = G B^T
      std::vector<double>& ga = grad_of(a);
      const double* pb = b.data().data();
      for (int i = 0; i < m; ++i) {
        const double* grow = g + static_cast<std::int64_t>(i) * n;
        double* garow = ga.data() + static_cast<std::int64_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
          const double* brow = pb + static_cast<std::int64_t>(kk) * n;
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          garow[kk] += acc;
        }
      }
    }
    if (wants_grad(b)) {
      // dB = A^T G
      std::vector<double>& gb = grad_of(b);
      const double* pa = a.data().data();
      for (int kk = 0; kk < k; ++kk) {
        double* gbrow = gb.data() + static_cast<std::int64_t>(kk) * n;
        for (int i = 0; i < m; ++i) {
          const double av = pa[static_cast<std::int64_t>(i) * k + kk];
          if (av == 0.0) continue;
          const double* grow = g + static_cast<std::int64_t>(i) * n;
          for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  }, "matmul");
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2) {
    throw DimensionError("linear: expects 2-D input and weight, got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  if (x.shape()[1] != w.shape()[0]) {
    throw DimensionError("linear: input features " + shape_str(x.shape()) +
                         " do not match weight " + shape_str(w.shape()));
  }
  const int t = x.shape()[0], din = x.shape()[1], dout = w.shape()[1];
  if (b.defined() && (b.shape().size() != 1 || b.shape()[0] != dout)) {
    throw DimensionError("linear: bias " + shape_str(b.shape()) +
                         " does not match output dim " + std::to_string(dout));
  }
  std::vector<Tensor> parents{x, w};
  if (b.defined()) parents.push_back(b);
  Tensor out = make_op_output({t, dout}, std::move(parents), "linear");
  {
    const double* px = x.data().data();
    const double* pw = w.data().data();
    double* po = out.data().data();
    for (int i = 0; i < t; ++i) {
      double* orow = po + static_cast<std::int64_t>(i) * dout;
      if (b.defined()) {
        const double* pb = b.data().data();
        for (int j = 0; j < dout; ++j) orow[j] = pb[j];
      }
      const double* xrow = px + static_cast<std::int64_t>(i) * din;
      for (int kk = 0; kk < din; ++kk) {
        const double xv = xrow[kk];
        if (xv == 0.0) continue;
        const double* wrow = pw + static_cast<std::int64_t>(kk) * dout;
        for (int j = 0; j < dout; ++j) orow[j] += xv * wrow[j];
      }
    }
  }
  set_backward(out, [x, w, b, t, din, dout, self = out.impl()]() {
    const double* g = self->grad.data();
    if (wants_grad(x)) {
      std::vector<double>& gx = grad_of(x);
      const double* pw = w.data().data();
      for (int i = 0; i < t; ++i) {
        const double* grow = g + static_cast<std::int64_t>(i) * dout;
        double* gxrow = gx.data() + static_cast<std::int64_t>(i) * din;
        for (int kk = 0; kk < din; ++kk) {
          const double* wrow = pw + static_cast<std::int64_t>(kk) * dout;
          double acc = 0.0;
          for (int j = 0; j < dout; ++j) acc += grow[j] * wrow[j];
          gxrow[kk] += acc;
        }
      }
    }
    if (wants_grad(w)) {
      std::vector<double>& gw = grad_of(w);
      const double* px = x.data().data();
      for (int i = 0; i < t; ++i) {
        const double* grow = g + static_cast<std::int64_t>(i) * dout;
        const double* xrow = px + static_cast<std::int64_t>(i) * din;
        for (int kk = 0; kk < din; ++kk) {
          const double xv = xrow[kk];
          if (xv == 0.0) continue;
          double* gwrow = gw.data() + static_cast<std::int64_t>(kk) * dout;
          for (int j = 0; j < dout; ++j) gwrow[j] += xv * grow[j];
        }
      }
    }
    if (b.defined() && wants_grad(b)) {
      std::vector<double>& gb = grad_of(b);
      for (int i = 0; i < t; ++i) {
        const double* grow = g + static_cast<std::int64_t>(i) * dout;
        for (int j = 0; j < dout; ++j) gb[j] += grow[j];
      }
    }
  }, "linear");
  return out;
}

// --- shape ops --------------------------------------------------------------

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) +
                         " as " + shape_str(shape));
  }
  Tensor out = make_op_output(shape, {a}, "reshape");
  out.data() = a.data();
  set_backward(out, [a, self = out.impl()]() {
    if (!wants_grad(a)) return;
    const std::vector<double>& g = self->grad;
    std::vector<double>& ga = grad_of(a);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  }, "reshape");
  return out;
}

Tensor transpose2d(const Tensor& a) {
  if (a.shape().size() != 2) {
    throw DimensionError("transpose2d: expects 2-D, got " + shape_str(a.shape()));
  }
  const int m = a.shape()[0], n = a.shape()[1];
  Tensor out = make_op_output({n, m}, {a}, "transpose2d");
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data()[static_cast<std::int64_t>(j) * m + i] =
          a.data()[static_cast<std::int64_t>(i) * n + j];
  set_backward(out, [a, m, n, self = out.impl()]() {
    if (!wants_grad(a)) return;
    const std::vector<double>& g = self->grad;
    std::vector<double>& ga = grad_of(a);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        ga[static_cast<std::int64_t>(i) * n + j] +=
            g[static_cast<std::int64_t>(j) * m + i];
  }, "transpose2d");
  return out;
}

Tensor permute3(const Tensor& a, int p0, int p1, int p2) {
  if (a.shape().size() != 3) {
    throw DimensionError("permute3: expects 3-D, got " + shape_str(a.shape()));
  }
  int perm[3] = {p0, p1, p2};
  bool used[3] = {false, false, false};
  for (int p : perm) {
    if (p < 0 || p > 2 || used[p]) throw UsageError("permute3: invalid permutation");
    used[p] = true;
  }
  const Shape& s = a.shape();
  Shape os{s[perm[0]], s[perm[1]], s[perm[2]]};
  Tensor out = make_op_output(os, {a}, "permute3");
  const std::int64_t st[3] = {static_cast<std::int64_t>(s[1]) * s[2], s[2], 1};
  std::int64_t idx = 0;
  for (int i = 0; i < os[0]; ++i)
    for (int j = 0; j < os[1]; ++j)
      for (int kk = 0; kk < os[2]; ++kk)
        out.data()[idx++] = a.data()[i * st[perm[0]] + j * st[perm[1]] + kk * st[perm[2]]];
  set_backward(out, [a, os, st, perm0 = perm[0], perm1 = perm[1], perm2 = perm[2],
                     self = out.impl()]() {
    if (!wants_grad(a)) return;
    const std::vector<double>& g = self->grad;
    std::vector<double>& ga = grad_of(a);
    std::int64_t idx = 0;
    for (int i = 0; i < os[0]; ++i)
      for (int j = 0; j < os[1]; ++j)
        for (int kk = 0; kk < os[2]; ++kk)
          ga[i * st[perm0] + j * st[perm1] + kk * st[perm2]] += g[idx++];
  }, "permute3");
  return out;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  if (a.shape().size() != 2) {
    throw DimensionError("slice_cols: expects 2-D, got " + shape_str(a.shape()));
  }
  const int t = a.shape()[0], d = a.shape()[1];
  if (c0 < 0 || c1 > d || c0 >= c1) {
    throw UsageError("slice_cols: invalid range [" + std::to_string(c0) + ", " +
                     std::to_string(c1) + ") for width " + std::to_string(d));
  }
  const int w = c1 - c0;
  Tensor out = make_op_output({t, w}, {a}, "slice_cols");
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < w; ++j)
      out.data()[static_cast<std::int64_t>(i) * w + j] =
          a.data()[static_cast<std::int64_t>(i) * d + c0 + j];
  set_backward(out, [a, t, d, c0, w, self = out.impl()]() {
    if (!wants_grad(a)) return;
    const std::vector<double>& g = self->grad;
    std::vector<double>& ga = grad_of(a);
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < w; ++j)
        ga[static_cast<std::int64_t>(i) * d + c0 + j] +=
            g[static_cast<std::int64_t>(i) * w + j];
  }, "slice_cols");
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no tensors given");
  const int t = parts[0].shape()[0];
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.shape().size() != 2 || p.shape()[0] != t) {
      throw DimensionError("concat_cols: row counts differ");
    }
    total += p.shape()[1];
  }
  Tensor out = make_op_output({t, total}, parts, "concat_cols");
  int off = 0;
  for (const Tensor& p : parts) {
    const int w = p.shape()[1];
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < w; ++j)
        out.data()[static_cast<std::int64_t>(i) * total + off + j] =
            p.data()[static_cast<std::int64_t>(i) * w + j];
    off += w;
  }
  set_backward(out, [parts, t, total, self = out.impl()]() {
    const std::vector<double>& g = self->grad;
    int off = 0;
    for (const Tensor& p : parts) {
      const int w = p.shape()[1];
      if (wants_grad(p)) {
        std::vector<double>& gp = grad_of(p);
        for (int i = 0; i < t; ++i)
          for (int j = 0; j < w; ++j)
            gp[static_cast<std::int64_t>(i) * w + j] +=
                g[static_cast<std::int64_t>(i) * total + off + j];
      }
      off += w;
    }
  }, "concat_cols");
  return out;
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
  if (a.shape().size() != 2) {
    throw DimensionError("slice_rows: expects 2-D, got " + shape_str(a.shape()));
  }
  const int t = a.shape()[0], d = a.shape()[1];
  if (r0 < 0 || r1 > t || r0 >= r1) {
    throw UsageError("slice_rows: invalid range [" + std::to_string(r0) + ", " +
                     std::to_string(r1) + ") for " + std::to_string(t) + " rows");
  }
  const int h = r1 - r0;
  Tensor out = make_op_output({h, d}, {a}, "slice_rows");
  std::memcpy(out.data().data(), a.data().data() + static_cast<std::int64_t>(r0) * d,
              sizeof(double) * static_cast<std::int64_t>(h) * d);
  set_backward(out, [a, d, r0, h, self = out.impl()]() {
    if (!wants_grad(a)) return;
    const std::vector<double>& g = self->grad;
    std::vector<double>& ga = grad_of(a);
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * d; ++i)
      ga[static_cast<std::int64_t>(r0) * d + i] += g[i];
  }, "slice_rows");
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_rows: no tensors given");
  const int d = parts[0].shape()[1];
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.shape().size() != 2 || p.shape()[1] != d) {
      throw DimensionError("concat_rows: column counts differ");
    }
    total += p.shape()[0];
  }
  Tensor out = make_op_output({total, d}, parts, "concat_rows");
  std::int64_t off = 0;
  for (const Tensor& p : parts) {
    std::memcpy(out.data().data() + off, p.data().data(), sizeof(double) * p.size());
    off += p.size();
  }
  set_backward(out, [parts, self = out.impl()]() {
    const std::vector<double>& g = self->grad;
    std::int64_t off = 0;
    for (const Tensor& p : parts) {
      if (wants_grad(p)) {
        std::vector<double>& gp = grad_of(p);
        for (std::int64_t i = 0; i < p.size(); ++i) gp[i] += g[off + i];
      }
      off += p.size();
    }
  }, "concat_rows");
  return out;
}

// --- neural-net ops ----------------------------------------------------------

namespace {

// Shared softmax forward/backward over strided slices.
struct AxisIter {
  std::int64_t outer, n, inner;
};

AxisIter axis_iter(const Shape& s, int axis) {
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw UsageError("softmax: axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(s.size()));
  }
  AxisIter it{1, s[axis], 1};
  for (int i = 0; i < axis; ++i) it.outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) it.inner *= s[i];
  return it;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const AxisIter it = axis_iter(x.shape(), axis);
  check_finite(x.data(), "input", "softmax");
  Tensor out = make_op_output(x.shape(), {x}, "softmax");
  const double* px = x.data().data();
  double* po = out.data().data();
  for (std::int64_t o = 0; o < it.outer; ++o) {
    for (std::int64_t in = 0; in < it.inner; ++in) {
      const std::int64_t base = o * it.n * it.inner + in;
      double mx = px[base];
      for (std::int64_t j = 1; j < it.n; ++j)
        mx = std::max(mx, px[base + j * it.inner]);
      double z = 0.0;
      for (std::int64_t j = 0; j < it.n; ++j) {
        const double e = std::exp(px[base + j * it.inner] - mx);
        po[base + j * it.inner] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (std::int64_t j = 0; j < it.n; ++j) po[base + j * it.inner] *= inv;
    }
  }
  set_backward(out, [x, it, self = out.impl()]() {
    if (!wants_grad(x)) return;
    const std::vector<double>& g = self->grad;
    const std::vector<double>& y = self->data;
    std::vector<double>& gx = grad_of(x);
    for (std::int64_t o = 0; o < it.outer; ++o) {
      for (std::int64_t in = 0; in < it.inner; ++in) {
        const std::int64_t base = o * it.n * it.inner + in;
        double dot = 0.0;
        for (std::int64_t j = 0; j < it.n; ++j) {
          const std::int64_t k = base + j * it.inner;
          dot += g[k] * y[k];
        }
        for (std::int64_t j = 0; j < it.n; ++j) {
          const std::int64_t k = base + j * it.inner;
          gx[k] += y[k] * (g[k] - dot);
        }
      }
    }
  }, "softmax");
  return out;
}

Tensor softmax_masked(const Tensor& x, const std::vector<std::uint8_t>& keep) {
  if (x.shape().size() != 2) {
    throw DimensionError("softmax_masked: expects 2-D, got " + shape_str(x.shape()));
  }
  if (keep.size() != static_cast<size_t>(x.size())) {
    throw DimensionError("softmax_masked: mask size " + std::to_string(keep.size()) +
                         " does not match tensor " + shape_str(x.shape()));
  }
  const int t = x.shape()[0], n = x.shape()[1];
  check_finite(x.data(), "input", "softmax_masked");
  Tensor out = make_op_output(x.shape(), {x}, "softmax_masked");
  const double* px = x.data().data();
  double* po = out.data().data();
  for (int i = 0; i < t; ++i) {
    const std::int64_t base = static_cast<std::int64_t>(i) * n;
    double mx = 0.0;
    bool any = false;
    for (int j = 0; j < n; ++j) {
      if (!keep[base + j]) continue;
      mx = any ? std::max(mx, px[base + j]) : px[base + j];
      any = true;
    }
    if (!any) throw UsageError("softmax_masked: fully masked row " + std::to_string(i));
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      if (keep[base + j]) {
        const double e = std::exp(px[base + j] - mx);
        po[base + j] = e;
        z += e;
      } else {
        po[base + j] = 0.0;
      }
    }
    const double inv = 1.0 / z;
    for (int j = 0; j < n; ++j) po[base + j] *= inv;
  }
  set_backward(out, [x, t, n, self = out.impl()]() {
    if (!wants_grad(x)) return;
    const std::vector<double>& g = self->grad;
    const std::vector<double>& y = self->data;  // zero at masked entries
    std::vector<double>& gx = grad_of(x);
    for (int i = 0; i < t; ++i) {
      const std::int64_t base = static_cast<std::int64_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += g[base + j] * y[base + j];
      for (int j = 0; j < n; ++j) gx[base + j] += y[base + j] * (g[base + j] - dot);
    }
  }, "softmax_masked");
  return out;
}

Tensor log_softmax_rows(const Tensor& x) {
  if (x.shape().size() != 2) {
    throw DimensionError("log_softmax_rows: expects 2-D, got " + shape_str(x.shape()));
  }
  const int t = x.shape()[0], n = x.shape()[1];
  check_finite(x.data(), "input", "log_softmax_rows");
  Tensor out = make_op_output(x.shape(), {x}, "log_softmax_rows");
  const double* px = x.data().data();
  double* po = out.data().data();
  for (int i = 0; i < t; ++i) {
    const std::int64_t base = static_cast<std::int64_t>(i) * n;
    double mx = px[base];
    for (int j = 1; j < n; ++j) mx = std::max(mx, px[base + j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += std::exp(px[base + j] - mx);
    const double lse = mx + std::log(z);
    for (int j = 0; j < n; ++j) po[base + j] = px[base + j] - lse;
  }
  set_backward(out, [x, t, n, self = out.impl()]() {
    if (!wants_grad(x)) return;
    const std::vector<double>& g = self->grad;
    const std::vector<double>& y = self->data;
    std::vector<double>& gx = grad_of(x);
    for (int i = 0; i < t; ++i) {
      const std::int64_t base = static_cast<std::int64_t>(i) * n;
      double gsum = 0.0;
      for (int j = 0; j < n; ++j) gsum += g[base + j];
      for (int j = 0; j < n; ++j)
        gx[base + j] += g[base + j] - std::exp(y[base + j]) * gsum;
    }
  }, "log_softmax_rows");
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (x.shape().size() != 2) {
    throw DimensionError("layer_norm: expects 2-D input, got " + shape_str(x.shape()));
  }
  const int t = x.shape()[0], d = x.shape()[1];
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gamma/beta " + shape_str(gamma.shape()) +
                         "/" + shape_str(beta.shape()) + " do not match width " +
                         std::to_string(d));
  }
  Tensor out = make_op_output({t, d}, {x, gamma, beta}, "layer_norm");
  // Cache per-row inverse stddev and normalized values for backward.
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(t) * d);
  auto inv_sd = std::make_shared<std::vector<double>>(t);
  const double* px = x.data().data();
  const double* pg = gamma.data().data();
  const double* pb = beta.data().data();
  double* po = out.data().data();
  for (int i = 0; i < t; ++i) {
    const std::int64_t base = static_cast<std::int64_t>(i) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += px[base + j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = px[base + j] - mu;
      var += c * c;
    }
    var /= d;  // population variance
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sd)[i] = is;
    for (int j = 0; j < d; ++j) {
      const double h = (px[base + j] - mu) * is;
      (*xhat)[base + j] = h;
      po[base + j] = pg[j] * h + pb[j];
    }
  }
  set_backward(out, [x, gamma, beta, t, d, xhat, inv_sd, self = out.impl()]() {
    const std::vector<double>& g = self->grad;
    const double* pg = gamma.data().data();
    for (int i = 0; i < t; ++i) {
      const std::int64_t base = static_cast<std::int64_t>(i) * d;
      if (wants_grad(gamma)) {
        std::vector<double>& gg = grad_of(gamma);
        for (int j = 0; j < d; ++j) gg[j] += g[base + j] * (*xhat)[base + j];
      }
      if (wants_grad(beta)) {
        std::vector<double>& gb = grad_of(beta);
        for (int j = 0; j < d; ++j) gb[j] += g[base + j];
      }
      if (wants_grad(x)) {
        std::vector<double>& gx = grad_of(x);
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < d; ++j) {
          const double dh = g[base + j] * pg[j];
          m1 += dh;
          m2 += dh * (*xhat)[base + j];
        }
        m1 /= d;
        m2 /= d;
        const double is = (*inv_sd)[i];
        for (int j = 0; j < d; ++j) {
          const double dh = g[base + j] * pg[j];
          gx[base + j] += (dh - m1 - (*xhat)[base + j] * m2) * is;
        }
      }
    }
  }, "layer_norm");
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int padding) {
  if (x.shape().size() != 3 || kernel.shape().size() != 4) {
    throw DimensionError("conv2d: expects x (Cin,H,W) and kernel (Cout,Cin,kh,kw), got " +
                         shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
  }
  if (stride < 1 || padding < 0) throw UsageError("conv2d: invalid stride/padding");
  const int cin = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const int cout = kernel.shape()[0], kcin = kernel.shape()[1];
  const int kh = kernel.shape()[2], kw = kernel.shape()[3];
  if (cin != kcin) {
    throw DimensionError("conv2d: input channels " + std::to_string(cin) +
                         " vs kernel channels " + std::to_string(kcin));
  }
  const int ho = (h + 2 * padding - kh) / stride + 1;
  const int wo = (w + 2 * padding - kw) / stride + 1;
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) +
                         " smaller than kernel " + shape_str(kernel.shape()));
  }
  Tensor out = make_op_output({cout, ho, wo}, {x, kernel}, "conv2d");
  const double* px = x.data().data();
  const double* pk = kernel.data().data();
  double* po = out.data().data();
  auto xat = [&](int c, int i, int j) -> double {
    if (i < 0 || i >= h || j < 0 || j >= w) return 0.0;
    return px[(static_cast<std::int64_t>(c) * h + i) * w + j];
  };
  for (int oc = 0; oc < cout; ++oc) {
    for (int oi = 0; oi < ho; ++oi) {
      for (int oj = 0; oj < wo; ++oj) {
        double acc = 0.0;
        for (int ic = 0; ic < cin; ++ic)
          for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj)
              acc += xat(ic, oi * stride - padding + ki, oj * stride - padding + kj) *
                     pk[((static_cast<std::int64_t>(oc) * cin + ic) * kh + ki) * kw + kj];
        po[(static_cast<std::int64_t>(oc) * ho + oi) * wo + oj] = acc;
      }
    }
  }
  set_backward(out, [x, kernel, stride, padding, cin, h, w, cout, kh, kw, ho, wo,
                     self = out.impl()]() {
    const std::vector<double>& g = self->grad;
    const double* px = x.data().data();
    const double* pk = kernel.data().data();
    const bool gx_on = wants_grad(x);
    const bool gk_on = wants_grad(kernel);
    if (!gx_on && !gk_on) return;
    std::vector<double>* gx = gx_on ? &grad_of(x) : nullptr;
    std::vector<double>* gk = gk_on ? &grad_of(kernel) : nullptr;
    for (int oc = 0; oc < cout; ++oc) {
      for (int oi = 0; oi < ho; ++oi) {
        for (int oj = 0; oj < wo; ++oj) {
          const double go = g[(static_cast<std::int64_t>(oc) * ho + oi) * wo + oj];
          if (go == 0.0) continue;
          for (int ic = 0; ic < cin; ++ic) {
            for (int ki = 0; ki < kh; ++ki) {
              const int i = oi * stride - padding + ki;
              if (i < 0 || i >= h) continue;
              for (int kj = 0; kj < kw; ++kj) {
                const int j = oj * stride - padding + kj;
                if (j < 0 || j >= w) continue;
                const std::int64_t xi = (static_cast<std::int64_t>(ic) * h + i) * w + j;
                const std::int64_t kidx =
                    ((static_cast<std::int64_t>(oc) * cin + ic) * kh + ki) * kw + kj;
                if (gx_on) (*gx)[xi] += go * pk[kidx];
                if (gk_on) (*gk)[kidx] += go * px[xi];
              }
            }
          }
        }
      }
    }
  }, "conv2d");
  return out;
}

Tensor embedding(const std::vector<int>& ids, const Tensor& table) {
  if (table.shape().size() != 2) {
    throw DimensionError("embedding: table must be 2-D, got " + shape_str(table.shape()));
  }
  if (ids.empty()) throw UsageError("embedding: empty id list");
  const int v = table.shape()[0], d = table.shape()[1];
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw LookupError("embedding: id " + std::to_string(id) +
                        " outside table of size " + std::to_string(v));
    }
  }
  const int t = static_cast<int>(ids.size());
  Tensor out = make_op_output({t, d}, {table}, "embedding");
  for (int i = 0; i < t; ++i)
    std::memcpy(out.data().data() + static_cast<std::int64_t>(i) * d,
                table.data().data() + static_cast<std::int64_t>(ids[i]) * d,
                sizeof(double) * d);
  set_backward(out, [table, ids, d, self = out.impl()]() {
    if (!wants_grad(table)) return;
    const std::vector<double>& g = self->grad;
    std::vector<double>& gt = grad_of(table);
    for (size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < d; ++j)
        gt[static_cast<std::int64_t>(ids[i]) * d + j] +=
            g[static_cast<std::int64_t>(i) * d + j];
  }, "embedding");
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& ids) {
  if (x.shape().size() != 2) {
    throw DimensionError("gather_rows: expects 2-D, got " + shape_str(x.shape()));
  }
  const int t = x.shape()[0], n = x.shape()[1];
  if (static_cast<int>(ids.size()) != t) {
    throw DimensionError("gather_rows: " + std::to_string(ids.size()) +
                         " indices for " + std::to_string(t) + " rows");
  }
  for (int id : ids) {
    if (id < 0 || id >= n) throw LookupError("gather_rows: column index out of range");
  }
  Tensor out = make_op_output({t}, {x}, "gather_rows");
  for (int i = 0; i < t; ++i)
    out.data()[i] = x.data()[static_cast<std::int64_t>(i) * n + ids[i]];
  set_backward(out, [x, ids, n, self = out.impl()]() {
    if (!wants_grad(x)) return;
    const std::vector<double>& g = self->grad;
    std::vector<double>& gx = grad_of(x);
    for (size_t i = 0; i < ids.size(); ++i)
      gx[static_cast<std::int64_t>(i) * n + ids[i]] += g[i];
  }, "gather_rows");
  return out;
}

Tensor sum_rows(const Tensor& x) {
  if (x.shape().size() != 2) {
    throw DimensionError("sum_rows: expects 2-D, got " + shape_str(x.shape()));
  }
  const int t = x.shape()[0], n = x.shape()[1];
  Tensor out = make_op_output({t}, {x}, "sum_rows");
  for (int i = 0; i < t; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += x.data()[static_cast<std::int64_t>(i) * n + j];
    out.data()[i] = s;
  }
  set_backward(out, [x, t, n, self = out.impl()]() {
    if (!wants_grad(x)) return;
    const std::vector<double>& g = self->grad;
    std::vector<double>& gx = grad_of(x);
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < n; ++j) gx[static_cast<std::int64_t>(i) * n + j] += g[i];
  }, "sum_rows");
  return out;
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw UsageError("dropout: p must be in [0, 1)");
  if (p == 0.0) return x;
  auto mask = std::make_shared<std::vector<double>>(x.size());
  const double keep_scale = 1.0 / (1.0 - p);
  for (double& m : *mask) m = rng.uniform_real(0.0, 1.0) < p ? 0.0 : keep_scale;
  Tensor out = make_op_output(x.shape(), {x}, "dropout");
  for (std::int64_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * (*mask)[i];
  set_backward(out, [x, mask, self = out.impl()]() {
    if (!wants_grad(x)) return;
    const std::vector<double>& g = self->grad;
    std::vector<double>& gx = grad_of(x);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  }, "dropout");
  return out;
}

}  // namespace srst
