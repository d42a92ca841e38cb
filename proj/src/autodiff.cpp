#include "iclbench/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <string>

#include "iclbench/kernels.hpp"

namespace iclbench::ad {

template <class Real>
double GradientSet<Real>::global_norm() const {
  double acc = 0.0;
  for (const auto& g : grads) {
    for (Real v : g.data()) acc += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(acc);
}

template <class Real>
Var<Real> Tape<Real>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<Real>(this, nodes_.size() - 1);
}

template <class Real>
Var<Real> Tape<Real>::constant(Tensor<Real> value) {
  return push(Node{std::move(value), {}, {}, false, std::nullopt});
}

template <class Real>
Var<Real> Tape<Real>::leaf(Tensor<Real> value) {
  return push(Node{std::move(value), {}, {}, true, std::nullopt});
}

template <class Real>
Var<Real> Tape<Real>::parameter(std::size_t index, Tensor<Real> value) {
  return push(Node{std::move(value), {}, {}, true, index});
}

template <class Real>
Var<Real> Tape<Real>::record(std::string_view op, Tensor<Real> value,
                             std::initializer_list<Var<Real>> parents, BackwardFn fn) {
  return record(op, std::move(value), std::span<const Var<Real>>(parents.begin(), parents.size()),
                std::move(fn));
}

template <class Real>
Var<Real> Tape<Real>::record(std::string_view op, Tensor<Real> value,
                             std::span<const Var<Real>> parents, BackwardFn fn) {
  bool needs = false;
  for (const auto& p : parents) {
    if (p.tape() != this) {
      throw DetachedNodeError(std::string(op) + ": operand belongs to a different tape");
    }
    needs = needs || nodes_[p.id()].requires_grad;
  }
  if (!value.all_finite()) {
    throw NonFiniteError(std::string(op) + ": non-finite value in output of shape " +
                         shape_str(value.shape()));
  }
  Node node{std::move(value), {}, {}, needs, std::nullopt};
  if (needs) node.backward = std::move(fn);
  return push(std::move(node));
}

template <class Real>
Tensor<Real>* Tape<Real>::grad_target(const Var<Real>& v) {
  Node& n = nodes_.at(v.id());
  if (!n.requires_grad) return nullptr;
  if (n.grad.numel() != n.value.numel()) n.grad = Tensor<Real>(n.value.shape());
  return &n.grad;
}

template <class Real>
GradientSet<Real> Tape<Real>::backward(const Var<Real>& loss) {
  if (loss.tape() != this) throw DetachedNodeError("backward: loss was recorded on another tape");
  const Node& ln = nodes_.at(loss.id());
  if (ln.value.numel() != 1) {
    throw NotScalarError("backward: loss has shape " + shape_str(ln.value.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor<Real>();
  std::size_t max_param = 0;
  bool any_param = false;
  for (const auto& n : nodes_) {
    if (n.param_index) {
      max_param = std::max(max_param, *n.param_index);
      any_param = true;
    }
  }
  if (ln.requires_grad) {
    grad_target(loss)->fill(Real(1));
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
  }
  GradientSet<Real> out;
  if (!any_param) return out;
  out.grads.resize(max_param + 1);
  for (const auto& n : nodes_) {
    if (!n.param_index) continue;
    auto& g = out.grads[*n.param_index];
    if (g.numel() != n.value.numel()) g = Tensor<Real>(n.value.shape());
    if (!n.grad.empty()) {
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
  }
  return out;
}

namespace {

template <class Real>
Tape<Real>& tape_of(const Var<Real>& v) {
  if (!v.tape()) throw DetachedNodeError("operation on an unbound Var");
  return *v.tape();
}

// How a binary op lines up its operands: `small` (numel inner) repeats
// `outer` times across the larger operand.
struct Broadcast {
  Shape out;
  bool a_small = false;
  bool b_small = false;
  std::size_t inner = 0;
  std::size_t outer = 1;
};

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.inner = shape_numel(a);
  } else if (is_suffix(b, a)) {
    p.out = a;
    p.b_small = true;
    p.inner = shape_numel(b);
    p.outer = shape_numel(a) / std::max<std::size_t>(p.inner, 1);
  } else if (is_suffix(a, b)) {
    p.out = b;
    p.a_small = true;
    p.inner = shape_numel(a);
    p.outer = shape_numel(b) / std::max<std::size_t>(p.inner, 1);
  } else {
    throw ShapeMismatchError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                             shape_str(b));
  }
  return p;
}

template <class Real, class F>
void broadcast_apply(const Broadcast& p, const Real* a, const Real* b, Real* out, F f) {
  if (p.b_small) {
    for (std::size_t o = 0; o < p.outer; ++o) {
      const Real* ar = a + o * p.inner;
      Real* r = out + o * p.inner;
#pragma omp simd
      for (std::size_t i = 0; i < p.inner; ++i) r[i] = f(ar[i], b[i]);
    }
  } else if (p.a_small) {
    for (std::size_t o = 0; o < p.outer; ++o) {
      const Real* br = b + o * p.inner;
      Real* r = out + o * p.inner;
#pragma omp simd
      for (std::size_t i = 0; i < p.inner; ++i) r[i] = f(a[i], br[i]);
    }
  } else {
#pragma omp simd
    for (std::size_t i = 0; i < p.inner; ++i) out[i] = f(a[i], b[i]);
  }
}

// Sum a full-size gradient down to the broadcast operand.
template <class Real>
void reduce_into(Tensor<Real>& target, const Real* g, std::size_t outer, std::size_t inner,
                 Real sign = Real(1)) {
  Real* t = target.ptr();
  for (std::size_t o = 0; o < outer; ++o) {
    const Real* gr = g + o * inner;
#pragma omp simd
    for (std::size_t i = 0; i < inner; ++i) t[i] += sign * gr[i];
  }
}

template <class Real, class Fwd, class Bwd>
Var<Real> unary(const char* op, const Var<Real>& a, Fwd fwd, Bwd dfdx) {
  const auto& av = a.value();
  Tensor<Real> out(av.shape());
  const std::size_t n = av.numel();
  const Real* x = av.ptr();
  Real* y = out.ptr();
#pragma omp parallel for simd if (n > (1u << 16))
  for (std::size_t i = 0; i < n; ++i) y[i] = fwd(x[i]);
  return tape_of(a).record(op, std::move(out), {a},
                           [a, dfdx](Tape<Real>& t, const Tensor<Real>& g) {
                             Tensor<Real>* ga = t.grad_target(a);
                             if (!ga) return;
                             const auto& xv = a.value();
                             for (std::size_t i = 0; i < g.numel(); ++i) {
                               (*ga)[i] += g[i] * dfdx(xv[i]);
                             }
                           });
}

}  // namespace

template <class Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const Broadcast p = plan_broadcast("add", av.shape(), bv.shape());
  Tensor<Real> out(p.out);
  broadcast_apply(p, av.ptr(), bv.ptr(), out.ptr(), [](Real x, Real y) { return x + y; });
  return tape_of(a).record("add", std::move(out), {a, b},
                           [a, b, p](Tape<Real>& t, const Tensor<Real>& g) {
                             for (const auto& [v, small] : {std::pair{a, p.a_small},
                                                            std::pair{b, p.b_small}}) {
                               Tensor<Real>* gv = t.grad_target(v);
                               if (!gv) continue;
                               if (small) {
                                 reduce_into(*gv, g.ptr(), p.outer, p.inner);
                               } else {
                                 for (std::size_t i = 0; i < g.numel(); ++i) (*gv)[i] += g[i];
                               }
                             }
                           });
}

template <class Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const Broadcast p = plan_broadcast("sub", av.shape(), bv.shape());
  Tensor<Real> out(p.out);
  broadcast_apply(p, av.ptr(), bv.ptr(), out.ptr(), [](Real x, Real y) { return x - y; });
  return tape_of(a).record(
      "sub", std::move(out), {a, b}, [a, b, p](Tape<Real>& t, const Tensor<Real>& g) {
        for (const auto& [v, small, sign] :
             {std::tuple{a, p.a_small, Real(1)}, std::tuple{b, p.b_small, Real(-1)}}) {
          Tensor<Real>* gv = t.grad_target(v);
          if (!gv) continue;
          if (small) {
            reduce_into(*gv, g.ptr(), p.outer, p.inner, sign);
          } else {
            for (std::size_t i = 0; i < g.numel(); ++i) (*gv)[i] += sign * g[i];
          }
        }
      });
}

template <class Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const Broadcast p = plan_broadcast("mul", av.shape(), bv.shape());
  Tensor<Real> out(p.out);
  broadcast_apply(p, av.ptr(), bv.ptr(), out.ptr(), [](Real x, Real y) { return x * y; });
  return tape_of(a).record("mul", std::move(out), {a, b},
                           [a, b, p](Tape<Real>& t, const Tensor<Real>& g) {
                             const auto& av = a.value();
                             const auto& bv = b.value();
                             for (std::size_t o = 0; o < p.outer; ++o) {
                               for (std::size_t i = 0; i < p.inner; ++i) {
                                 const std::size_t full = o * p.inner + i;
                                 const std::size_t ia = p.a_small ? i : full;
                                 const std::size_t ib = p.b_small ? i : full;
                                 if (Tensor<Real>* ga = t.grad_target(a)) (*ga)[ia] += g[full] * bv[ib];
                                 if (Tensor<Real>* gb = t.grad_target(b)) (*gb)[ib] += g[full] * av[ia];
                               }
                             }
                           });
}

template <class Real>
Var<Real> scale(const Var<Real>& a, Real c) {
  return unary("scale", a, [c](Real x) { return c * x; }, [c](Real) { return c; });
}

template <class Real>
Var<Real> add_scalar(const Var<Real>& a, Real c) {
  return unary("add_scalar", a, [c](Real x) { return x + c; }, [](Real) { return Real(1); });
}

template <class Real>
Var<Real> relu(const Var<Real>& a) {
  return unary(
      "relu", a, [](Real x) { return x > Real(0) ? x : Real(0); },
      [](Real x) { return x > Real(0) ? Real(1) : Real(0); });
}

template <class Real>
Var<Real> square(const Var<Real>& a) {
  return unary("square", a, [](Real x) { return x * x; }, [](Real x) { return Real(2) * x; });
}

template <class Real>
Var<Real> exp(const Var<Real>& a) {
  return unary("exp", a, [](Real x) { return std::exp(x); }, [](Real x) { return std::exp(x); });
}

namespace {

template <class Real>
constexpr Real kGeluC = static_cast<Real>(0.7978845608028654);  // sqrt(2/pi)
template <class Real>
constexpr Real kGeluA = static_cast<Real>(0.044715);

}  // namespace

template <class Real>
Var<Real> gelu(const Var<Real>& a) {
  using Arr = Eigen::Array<Real, Eigen::Dynamic, 1>;
  using CMap = Eigen::Map<const Arr>;
  using MMap = Eigen::Map<Arr>;
  const auto& av = a.value();
  const Eigen::Index n = static_cast<Eigen::Index>(av.numel());
  CMap x(av.ptr(), n);
  Tensor<Real> out(av.shape());
  Tensor<Real> th(av.shape());
  MMap thm(th.ptr(), n);
  thm = (kGeluC<Real> * (x + kGeluA<Real> * x.cube())).tanh();
  MMap(out.ptr(), n) = Real(0.5) * x * (Real(1) + thm);
  return tape_of(a).record(
      "gelu", std::move(out), {a},
      [a, th = std::move(th), n](Tape<Real>& t, const Tensor<Real>& g) {
        Tensor<Real>* ga = t.grad_target(a);
        if (!ga) return;
        CMap xv(a.value().ptr(), n);
        CMap tv(th.ptr(), n);
        CMap gv(g.ptr(), n);
        const Arr du = kGeluC<Real> * (Real(1) + Real(3) * kGeluA<Real> * xv.square());
        MMap(ga->ptr(), n) +=
            gv * (Real(0.5) * (Real(1) + tv) + Real(0.5) * xv * (Real(1) - tv.square()) * du);
      });
}

template <class Real>
Var<Real> softmax(const Var<Real>& a) {
  const auto& av = a.value();
  if (av.rank() == 0) throw ShapeMismatchError("softmax: needs rank >= 1");
  const std::size_t d = av.shape().back();
  const std::size_t rows = av.numel() / d;
  Tensor<Real> out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* x = av.ptr() + r * d;
    Real* y = out.ptr() + r * d;
    const Real mx = *std::max_element(x, x + d);
    Real s = 0;
    for (std::size_t i = 0; i < d; ++i) s += (y[i] = std::exp(x[i] - mx));
    for (std::size_t i = 0; i < d; ++i) y[i] /= s;
  }
  Tensor<Real> saved = out;
  return tape_of(a).record("softmax", std::move(out), {a},
                      [a, y = std::move(saved), d, rows](Tape<Real>& t, const Tensor<Real>& g) {
                        Tensor<Real>* ga = t.grad_target(a);
                        if (!ga) return;
                        for (std::size_t r = 0; r < rows; ++r) {
                          Real dot = 0;
                          for (std::size_t i = 0; i < d; ++i) dot += g[r * d + i] * y[r * d + i];
                          for (std::size_t i = 0; i < d; ++i) {
                            (*ga)[r * d + i] += y[r * d + i] * (g[r * d + i] - dot);
                          }
                        }
                      });
}

template <class Real>
Var<Real> layer_norm(const Var<Real>& x, const Var<Real>& gamma, const Var<Real>& beta,
                     Real eps) {
  const auto& xv = x.value();
  if (xv.rank() == 0) throw ShapeMismatchError("layer_norm: needs rank >= 1");
  const std::size_t d = xv.shape().back();
  if (gamma.value().shape() != Shape{d} || beta.value().shape() != Shape{d}) {
    throw ShapeMismatchError("layer_norm: scale/shift must have shape [" + std::to_string(d) + "]");
  }
  const std::size_t rows = xv.numel() / d;
  Tensor<Real> out(xv.shape());
  Tensor<Real> xhat(xv.shape());
  std::vector<Real> inv_std(rows);
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = xv.ptr() + r * d;
    Real mu = 0;
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<Real>(d);
    Real var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<Real>(d);
    const Real is = Real(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < d; ++i) {
      const Real h = (xr[i] - mu) * is;
      xhat[r * d + i] = h;
      out[r * d + i] = h * gv[i] + bv[i];
    }
  }
  return tape_of(x).record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<Real>& t, const Tensor<Real>& g) {
        const auto& gv = gamma.value();
        if (Tensor<Real>* gg = t.grad_target(gamma)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < d; ++i) (*gg)[i] += g[r * d + i] * xhat[r * d + i];
          }
        }
        if (Tensor<Real>* gb = t.grad_target(beta)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < d; ++i) (*gb)[i] += g[r * d + i];
          }
        }
        if (Tensor<Real>* gx = t.grad_target(x)) {
          const Real inv_d = Real(1) / static_cast<Real>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            Real m1 = 0, m2 = 0;
            for (std::size_t i = 0; i < d; ++i) {
              const Real dh = g[r * d + i] * gv[i];
              m1 += dh;
              m2 += dh * xhat[r * d + i];
            }
            m1 *= inv_d;
            m2 *= inv_d;
            for (std::size_t i = 0; i < d; ++i) {
              const Real dh = g[r * d + i] * gv[i];
              (*gx)[r * d + i] += inv_std[r] * (dh - m1 - xhat[r * d + i] * m2);
            }
          }
        }
      });
}

template <class Real>
Var<Real> sum(const Var<Real>& a) {
  Real s = 0;
  for (Real v : a.value().data()) s += v;
  return tape_of(a).record("sum", Tensor<Real>::scalar(s), {a},
                           [a](Tape<Real>& t, const Tensor<Real>& g) {
                             if (Tensor<Real>* ga = t.grad_target(a)) {
                               for (auto& v : ga->data()) v += g[0];
                             }
                           });
}

template <class Real>
Var<Real> mean(const Var<Real>& a) {
  const std::size_t n = a.value().numel();
  if (n == 0) throw ShapeMismatchError("mean of an empty tensor");
  Real s = 0;
  for (Real v : a.value().data()) s += v;
  const Real inv = Real(1) / static_cast<Real>(n);
  return tape_of(a).record("mean", Tensor<Real>::scalar(s * inv), {a},
                           [a, inv](Tape<Real>& t, const Tensor<Real>& g) {
                             if (Tensor<Real>* ga = t.grad_target(a)) {
                               for (auto& v : ga->data()) v += g[0] * inv;
                             }
                           });
}

template <class Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() < 2 || bv.rank() < 2) throw ShapeMismatchError("matmul: operands need rank >= 2");
  const std::size_t m = av.shape()[av.rank() - 2];
  const std::size_t k = av.shape().back();
  const std::size_t kb = bv.shape()[bv.rank() - 2];
  const std::size_t n = bv.shape().back();
  if (k != kb) {
    throw ShapeMismatchError("matmul: inner dimensions differ, " + shape_str(av.shape()) + " x " +
                             shape_str(bv.shape()));
  }
  Shape out_shape = av.shape();
  out_shape.back() = n;
  if (bv.rank() == 2) {
    // Shared right operand: one GEMM over all leading rows.
    const std::size_t rows = av.numel() / k;
    Tensor<Real> out(out_shape);
    kernels::omp::gemm<Real>(false, false, rows, n, k, Real(1), av.ptr(), bv.ptr(), Real(0),
                             out.ptr());
    return tape_of(a).record("matmul", std::move(out), {a, b},
                             [a, b, rows, n, k](Tape<Real>& t, const Tensor<Real>& g) {
                               if (Tensor<Real>* ga = t.grad_target(a)) {
                                 kernels::omp::gemm<Real>(false, true, rows, k, n, Real(1),
                                                          g.ptr(), b.value().ptr(), Real(1),
                                                          ga->ptr());
                               }
                               if (Tensor<Real>* gb = t.grad_target(b)) {
                                 kernels::omp::gemm<Real>(true, false, k, n, rows, Real(1),
                                                          a.value().ptr(), g.ptr(), Real(1),
                                                          gb->ptr());
                               }
                             });
  }
  if (av.rank() != bv.rank() ||
      !std::equal(av.shape().begin(), av.shape().end() - 2, bv.shape().begin())) {
    throw ShapeMismatchError("matmul: batch dimensions differ, " + shape_str(av.shape()) + " x " +
                             shape_str(bv.shape()));
  }
  const std::size_t batch = av.numel() / (m * k);
  Tensor<Real> out(out_shape);
  for (std::size_t i = 0; i < batch; ++i) {
    kernels::omp::gemm<Real>(false, false, m, n, k, Real(1), av.ptr() + i * m * k,
                             bv.ptr() + i * k * n, Real(0), out.ptr() + i * m * n);
  }
  return tape_of(a).record(
      "matmul", std::move(out), {a, b}, [a, b, batch, m, n, k](Tape<Real>& t, const Tensor<Real>& g) {
        Tensor<Real>* ga = t.grad_target(a);
        Tensor<Real>* gb = t.grad_target(b);
        for (std::size_t i = 0; i < batch; ++i) {
          if (ga) {
            kernels::omp::gemm<Real>(false, true, m, k, n, Real(1), g.ptr() + i * m * n,
                                     b.value().ptr() + i * k * n, Real(1), ga->ptr() + i * m * k);
          }
          if (gb) {
            kernels::omp::gemm<Real>(true, false, k, n, m, Real(1), a.value().ptr() + i * m * k,
                                     g.ptr() + i * m * n, Real(1), gb->ptr() + i * k * n);
          }
        }
      });
}

template <class Real>
Tensor<Real> transpose_value(const Tensor<Real>& a, std::size_t axis0, std::size_t axis1) {
  if (axis0 > axis1) std::swap(axis0, axis1);
  const Shape& s = a.shape();
  if (axis1 >= s.size()) throw ShapeMismatchError("transpose: axis out of range");
  if (axis0 == axis1) return a;
  // View as [pre, n0, mid, n1, post] and emit [pre, n1, mid, n0, post].
  auto prod = [&](std::size_t lo, std::size_t hi) {
    std::size_t p = 1;
    for (std::size_t i = lo; i < hi; ++i) p *= s[i];
    return p;
  };
  const std::size_t pre = prod(0, axis0), n0 = s[axis0], mid = prod(axis0 + 1, axis1),
                    n1 = s[axis1], post = prod(axis1 + 1, s.size());
  Shape os = s;
  std::swap(os[axis0], os[axis1]);
  Tensor<Real> out(os);
  const Real* src = a.ptr();
  Real* dst = out.ptr();
  for (std::size_t p = 0; p < pre; ++p) {
    for (std::size_t i = 0; i < n0; ++i) {
      for (std::size_t m = 0; m < mid; ++m) {
        for (std::size_t j = 0; j < n1; ++j) {
          const std::size_t si = (((p * n0 + i) * mid + m) * n1 + j) * post;
          const std::size_t di = (((p * n1 + j) * mid + m) * n0 + i) * post;
          std::memcpy(dst + di, src + si, post * sizeof(Real));
        }
      }
    }
  }
  return out;
}

template <class Real>
Var<Real> transpose(const Var<Real>& a, std::size_t axis0, std::size_t axis1) {
  return tape_of(a).record("transpose", transpose_value(a.value(), axis0, axis1), {a},
                           [a, axis0, axis1](Tape<Real>& t, const Tensor<Real>& g) {
                             if (Tensor<Real>* ga = t.grad_target(a)) {
                               const Tensor<Real> back = transpose_value(g, axis0, axis1);
                               for (std::size_t i = 0; i < back.numel(); ++i) (*ga)[i] += back[i];
                             }
                           });
}

template <class Real>
Var<Real> reshape(const Var<Real>& a, Shape shape) {
  return tape_of(a).record("reshape", a.value().reshaped(std::move(shape)), {a},
                           [a](Tape<Real>& t, const Tensor<Real>& g) {
                             if (Tensor<Real>* ga = t.grad_target(a)) {
                               for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
                             }
                           });
}

namespace {

// [pre, n, post] decomposition around `axis`.
struct AxisView {
  std::size_t pre = 1, n = 1, post = 1;
};

AxisView axis_view(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeMismatchError("axis out of range for shape " + shape_str(s));
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.pre *= s[i];
  v.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.post *= s[i];
  return v;
}

}  // namespace

template <class Real>
Var<Real> concat(std::span<const Var<Real>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeMismatchError("concat of zero tensors");
  Shape os = parts[0].value().shape();
  const AxisView first = axis_view(os, axis);
  std::size_t total = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    Shape s = p.value().shape();
    const AxisView v = axis_view(s, axis);
    s[axis] = os[axis];
    if (s != os) throw ShapeMismatchError("concat: shapes differ off the concat axis");
    sizes.push_back(v.n);
    total += v.n;
  }
  os[axis] = total;
  Tensor<Real> out(os);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].value();
    for (std::size_t p = 0; p < first.pre; ++p) {
      std::memcpy(out.ptr() + (p * total + offset) * first.post,
                  pv.ptr() + p * sizes[k] * first.post, sizes[k] * first.post * sizeof(Real));
    }
    offset += sizes[k];
  }
  std::vector<Var<Real>> held(parts.begin(), parts.end());
  return tape_of(parts[0]).record(
      "concat", std::move(out), parts,
      [held, sizes, total, pre = first.pre, post = first.post](Tape<Real>& t,
                                                               const Tensor<Real>& g) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < held.size(); ++k) {
          if (Tensor<Real>* gk = t.grad_target(held[k])) {
            for (std::size_t p = 0; p < pre; ++p) {
              for (std::size_t i = 0; i < sizes[k] * post; ++i) {
                (*gk)[p * sizes[k] * post + i] += g[(p * total + offset) * post + i];
              }
            }
          }
          offset += sizes[k];
        }
      });
}

template <class Real>
Var<Real> slice(const Var<Real>& a, std::size_t axis, std::size_t start, std::size_t stop,
                std::size_t step) {
  const auto& av = a.value();
  const AxisView v = axis_view(av.shape(), axis);
  if (step == 0 || start >= stop || stop > v.n) {
    throw ShapeMismatchError("slice: bad range [" + std::to_string(start) + ", " +
                             std::to_string(stop) + ") step " + std::to_string(step) +
                             " on axis of size " + std::to_string(v.n));
  }
  const std::size_t m = (stop - start + step - 1) / step;
  Shape os = av.shape();
  os[axis] = m;
  Tensor<Real> out(os);
  for (std::size_t p = 0; p < v.pre; ++p) {
    for (std::size_t i = 0; i < m; ++i) {
      std::memcpy(out.ptr() + (p * m + i) * v.post,
                  av.ptr() + (p * v.n + start + i * step) * v.post, v.post * sizeof(Real));
    }
  }
  return tape_of(a).record("slice", std::move(out), {a},
                           [a, v, m, start, step](Tape<Real>& t, const Tensor<Real>& g) {
                             Tensor<Real>* ga = t.grad_target(a);
                             if (!ga) return;
                             for (std::size_t p = 0; p < v.pre; ++p) {
                               for (std::size_t i = 0; i < m; ++i) {
                                 for (std::size_t c = 0; c < v.post; ++c) {
                                   (*ga)[(p * v.n + start + i * step) * v.post + c] +=
                                       g[(p * m + i) * v.post + c];
                                 }
                               }
                             }
                           });
}

#define ICLBENCH_INSTANTIATE(Real)                                                          \
  template struct GradientSet<Real>;                                                        \
  template class Tape<Real>;                                                                \
  template Var<Real> matmul(const Var<Real>&, const Var<Real>&);                            \
  template Var<Real> add(const Var<Real>&, const Var<Real>&);                               \
  template Var<Real> sub(const Var<Real>&, const Var<Real>&);                               \
  template Var<Real> mul(const Var<Real>&, const Var<Real>&);                               \
  template Var<Real> scale(const Var<Real>&, Real);                                         \
  template Var<Real> add_scalar(const Var<Real>&, Real);                                    \
  template Var<Real> relu(const Var<Real>&);                                                \
  template Var<Real> square(const Var<Real>&);                                              \
  template Var<Real> exp(const Var<Real>&);                                                 \
  template Var<Real> gelu(const Var<Real>&);                                                \
  template Var<Real> softmax(const Var<Real>&);                                             \
  template Var<Real> layer_norm(const Var<Real>&, const Var<Real>&, const Var<Real>&, Real); \
  template Var<Real> sum(const Var<Real>&);                                                 \
  template Var<Real> mean(const Var<Real>&);                                                \
  template Var<Real> transpose(const Var<Real>&, std::size_t, std::size_t);                 \
  template Var<Real> reshape(const Var<Real>&, Shape);                                      \
  template Var<Real> concat(std::span<const Var<Real>>, std::size_t);                       \
  template Var<Real> slice(const Var<Real>&, std::size_t, std::size_t, std::size_t,         \
                           std::size_t);                                                    \
  template Tensor<Real> transpose_value(const Tensor<Real>&, std::size_t, std::size_t);

ICLBENCH_INSTANTIATE(float)
ICLBENCH_INSTANTIATE(double)

}  // namespace iclbench::ad
