#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "vibi/graph.hpp"

// Differentiable operator set. Every op validates shapes before computing and
// records a backward closure that accumulates into its inputs.

namespace vibi {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

inline constexpr double kLogFloor = 1e-12;

namespace detail {

template <typename T>
void same_shape(const char* op, Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
  }
}

template <typename T>
Graph<T>& graph_of(Var<T> a) {
  if (a.graph == nullptr) {
    throw LookupError("op on detached var");
  }
  return *a.graph;
}

template <typename T>
Graph<T>& graph_of(Var<T> a, Var<T> b) {
  if (a.graph != b.graph) {
    throw LookupError("op mixes nodes from different graphs");
  }
  return graph_of(a);
}

template <typename T, typename F>
Var<T> unary_map(Var<T> a, const char* kind, F forward, auto local_grad) {
  auto& g = graph_of(a);
  const auto& x = a.value();
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = forward(x[i]);
  }
  auto ia = a.id;
  return g.record(std::move(out), {ia},
                  [ia, local_grad](Graph<T>& gr, std::size_t self) {
                    const auto& up = gr.upstream(self);
                    const auto& xv = gr.value(ia);
                    const auto& yv = gr.value(self);
                    std::vector<T> d(up.size());
                    for (std::size_t i = 0; i < d.size(); ++i) {
                      d[i] = up[i] * local_grad(xv[i], yv[i]);
                    }
                    gr.accumulate(ia, d);
                  },
                  kind);
}

}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& g = detail::graph_of(a, b);
  detail::same_shape("add", a, b);
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.value()[i] + b.value()[i];
  }
  auto ia = a.id, ib = b.id;
  return g.record(std::move(out), {ia, ib},
                  [ia, ib](Graph<T>& gr, std::size_t self) {
                    const auto& up = gr.upstream(self).data();
                    gr.accumulate(ia, up);
                    gr.accumulate(ib, up);
                  },
                  "add");
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& g = detail::graph_of(a, b);
  detail::same_shape("sub", a, b);
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.value()[i] - b.value()[i];
  }
  auto ia = a.id, ib = b.id;
  return g.record(std::move(out), {ia, ib},
                  [ia, ib](Graph<T>& gr, std::size_t self) {
                    const auto& up = gr.upstream(self);
                    gr.accumulate(ia, up.data());
                    std::vector<T> neg(up.size());
                    for (std::size_t i = 0; i < neg.size(); ++i) {
                      neg[i] = -up[i];
                    }
                    gr.accumulate(ib, neg);
                  },
                  "sub");
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& g = detail::graph_of(a, b);
  detail::same_shape("mul", a, b);
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.value()[i] * b.value()[i];
  }
  auto ia = a.id, ib = b.id;
  return g.record(std::move(out), {ia, ib},
                  [ia, ib](Graph<T>& gr, std::size_t self) {
                    const auto& up = gr.upstream(self);
                    const auto& av = gr.value(ia);
                    const auto& bv = gr.value(ib);
                    std::vector<T> d(up.size());
                    if (gr.requires_grad(ia)) {
                      for (std::size_t i = 0; i < d.size(); ++i) {
                        d[i] = up[i] * bv[i];
                      }
                      gr.accumulate(ia, d);
                    }
                    if (gr.requires_grad(ib)) {
                      for (std::size_t i = 0; i < d.size(); ++i) {
                        d[i] = up[i] * av[i];
                      }
                      gr.accumulate(ib, d);
                    }
                  },
                  "mul");
}

/// Elementwise max. The gradient goes to `a` when a >= b, so exact ties favour
/// the first operand.
template <typename T>
Var<T> maximum(Var<T> a, Var<T> b) {
  auto& g = detail::graph_of(a, b);
  detail::same_shape("maximum", a, b);
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.value()[i] >= b.value()[i] ? a.value()[i] : b.value()[i];
  }
  auto ia = a.id, ib = b.id;
  return g.record(std::move(out), {ia, ib},
                  [ia, ib](Graph<T>& gr, std::size_t self) {
                    const auto& up = gr.upstream(self);
                    const auto& av = gr.value(ia);
                    const auto& bv = gr.value(ib);
                    std::vector<T> da(up.size(), T{0}), db(up.size(), T{0});
                    for (std::size_t i = 0; i < up.size(); ++i) {
                      (av[i] >= bv[i] ? da : db)[i] = up[i];
                    }
                    gr.accumulate(ia, da);
                    gr.accumulate(ib, db);
                  },
                  "maximum");
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  return detail::unary_map(
      a, "scale", [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  return detail::unary_map(
      a, "add_scalar", [s](T x) { return x + s; }, [](T, T) { return T{1}; });
}

template <typename T>
Var<T> relu(Var<T> a) {
  // Subgradient 0 at the kink.
  return detail::unary_map(
      a, "relu", [](T x) { return x > T{0} ? x : T{0}; },
      [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> exp(Var<T> a) {
  return detail::unary_map(
      a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

/// Natural log with inputs clamped to >= 1e-12; clamped entries pass no gradient.
template <typename T>
Var<T> log(Var<T> a) {
  const T floor = static_cast<T>(kLogFloor);
  return detail::unary_map(
      a, "log", [floor](T x) { return std::log(std::max(x, floor)); },
      [floor](T x, T) { return x >= floor ? T{1} / x : T{0}; });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  auto& g = detail::graph_of(a);
  auto out = a.value().reshaped(std::move(shape));
  auto ia = a.id;
  return g.record(std::move(out), {ia},
                  [ia](Graph<T>& gr, std::size_t self) {
                    gr.accumulate(ia, gr.upstream(self).data());
                  },
                  "reshape");
}

/// Sum of all elements as a scalar.
template <typename T>
Var<T> sum(Var<T> a) {
  auto& g = detail::graph_of(a);
  T s{0};
  for (auto v : a.value().data()) {
    s += v;
  }
  auto ia = a.id;
  return g.record(BasicTensor<T>::scalar(s), {ia},
                  [ia](Graph<T>& gr, std::size_t self) {
                    std::vector<T> d(gr.value(ia).size(), gr.upstream(self)[0]);
                    gr.accumulate(ia, d);
                  },
                  "sum");
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  return scale(sum(a), T{1} / static_cast<T>(a.value().size()));
}

/// Mean over one axis; the axis is removed from the shape.
template <typename T>
Var<T> mean(Var<T> a, std::size_t axis) {
  auto& g = detail::graph_of(a);
  const auto& shape = a.shape();
  VIBI_REQUIRE(axis < shape.size(), "mean: axis out of range");
  std::size_t outer = 1, inner = 1, len = shape[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  Shape out_shape;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out_shape.push_back(shape[i]);
  }
  BasicTensor<T> out(out_shape);
  const auto& x = a.value();
  const T inv = T{1} / static_cast<T>(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < inner; ++k) {
      T s{0};
      for (std::size_t j = 0; j < len; ++j) {
        s += x[(o * len + j) * inner + k];
      }
      out[o * inner + k] = s * inv;
    }
  }
  auto ia = a.id;
  return g.record(std::move(out), {ia},
                  [ia, outer, inner, len, inv](Graph<T>& gr, std::size_t self) {
                    const auto& up = gr.upstream(self);
                    std::vector<T> d(outer * len * inner);
                    for (std::size_t o = 0; o < outer; ++o) {
                      for (std::size_t j = 0; j < len; ++j) {
                        for (std::size_t k = 0; k < inner; ++k) {
                          d[(o * len + j) * inner + k] = up[o * inner + k] * inv;
                        }
                      }
                    }
                    gr.accumulate(ia, d);
                  },
                  "mean");
}

/// [M,K] x [K,N] -> [M,N].
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  auto& g = detail::graph_of(a, b);
  VIBI_REQUIRE(a.value().rank() == 2 && b.value().rank() == 2, "matmul: rank-2 operands required");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  VIBI_REQUIRE(b.shape()[0] == k, "matmul: inner dimensions differ " + shape_str(a.shape()) +
                                      " x " + shape_str(b.shape()));
  BasicTensor<T> out(Shape{m, n});
  MatMap<T>(out.data().data(), m, n).noalias() =
      ConstMatMap<T>(a.value().data().data(), m, k) * ConstMatMap<T>(b.value().data().data(), k, n);
  auto ia = a.id, ib = b.id;
  return g.record(std::move(out), {ia, ib},
                  [ia, ib, m, k, n](Graph<T>& gr, std::size_t self) {
                    ConstMatMap<T> up(gr.upstream(self).data().data(), m, n);
                    if (auto* ga = gr.grad_buffer(ia)) {
                      MatMap<T>(ga->data().data(), m, k).noalias() +=
                          up * ConstMatMap<T>(gr.value(ib).data().data(), k, n).transpose();
                    }
                    if (auto* gb = gr.grad_buffer(ib)) {
                      MatMap<T>(gb->data().data(), k, n).noalias() +=
                          ConstMatMap<T>(gr.value(ia).data().data(), m, k).transpose() * up;
                    }
                  },
                  "matmul");
}

/// Adds b[c] to every element of channel c, where channel is axis 1 of x.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> b) {
  auto& g = detail::graph_of(x, b);
  const auto& shape = x.shape();
  VIBI_REQUIRE(shape.size() >= 2, "add_bias: input needs a channel axis");
  VIBI_REQUIRE(b.value().rank() == 1 && b.shape()[0] == shape[1],
               "add_bias: bias length must equal axis-1 size");
  const std::size_t outer = shape[0], ch = shape[1], inner = shape_size(shape) / (outer * ch);
  BasicTensor<T> out(x.value());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < ch; ++c) {
      T* p = out.data().data() + (o * ch + c) * inner;
      for (std::size_t k = 0; k < inner; ++k) p[k] += b.value()[c];
    }
  }
  auto ix = x.id, ib = b.id;
  return g.record(std::move(out), {ix, ib},
                  [ix, ib, outer, ch, inner](Graph<T>& gr, std::size_t self) {
                    const auto& up = gr.upstream(self);
                    gr.accumulate(ix, up.data());
                    if (auto* gb = gr.grad_buffer(ib)) {
                      for (std::size_t o = 0; o < outer; ++o) {
                        for (std::size_t c = 0; c < ch; ++c) {
                          const T* p = up.data().data() + (o * ch + c) * inner;
                          T s{0};
                          for (std::size_t k = 0; k < inner; ++k) s += p[k];
                          (*gb)[c] += s;
                        }
                      }
                    }
                  },
                  "add_bias");
}

namespace detail {

struct ConvGeom {
  std::size_t n, c, h, w, f, kh, kw, pad, oh, ow;
  std::size_t k() const { return c * kh * kw; }
  std::size_t p() const { return oh * ow; }
};

template <typename T>
void im2col(const T* img, const ConvGeom& s, T* cols) {
  const auto ih = static_cast<std::ptrdiff_t>(s.h), iw = static_cast<std::ptrdiff_t>(s.w);
  const auto pad = static_cast<std::ptrdiff_t>(s.pad);
  for (std::size_t c = 0; c < s.c; ++c) {
    for (std::size_t ky = 0; ky < s.kh; ++ky) {
      for (std::size_t kx = 0; kx < s.kw; ++kx) {
        T* row = cols + ((c * s.kh + ky) * s.kw + kx) * s.p();
        for (std::size_t oy = 0; oy < s.oh; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy + ky) - pad;
          T* dst = row + oy * s.ow;
          if (y < 0 || y >= ih) {
            std::fill(dst, dst + s.ow, T{0});
            continue;
          }
          const T* src = img + (c * s.h + static_cast<std::size_t>(y)) * s.w;
          for (std::size_t ox = 0; ox < s.ow; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox + kx) - pad;
            dst[ox] = (x < 0 || x >= iw) ? T{0} : src[x];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeom& s, T* img) {
  const auto ih = static_cast<std::ptrdiff_t>(s.h), iw = static_cast<std::ptrdiff_t>(s.w);
  const auto pad = static_cast<std::ptrdiff_t>(s.pad);
  for (std::size_t c = 0; c < s.c; ++c) {
    for (std::size_t ky = 0; ky < s.kh; ++ky) {
      for (std::size_t kx = 0; kx < s.kw; ++kx) {
        const T* row = cols + ((c * s.kh + ky) * s.kw + kx) * s.p();
        for (std::size_t oy = 0; oy < s.oh; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy + ky) - pad;
          if (y < 0 || y >= ih) continue;
          T* dst = img + (c * s.h + static_cast<std::size_t>(y)) * s.w;
          const T* src = row + oy * s.ow;
          for (std::size_t ox = 0; ox < s.ow; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox + kx) - pad;
            if (x >= 0 && x < iw) dst[x] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Stride-1 convolution over NCHW input with F filters [F,C,KH,KW] and bias [F].
/// `pad` zero-pads each spatial border; pad = 0 is a valid convolution.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t pad = 0) {
  auto& g = detail::graph_of(x, w);
  detail::graph_of(w, b);
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  VIBI_REQUIRE(xs.size() == 4 && ws.size() == 4, "conv2d: input and weight must be rank 4");
  VIBI_REQUIRE(ws[1] == xs[1], "conv2d: channel mismatch " + shape_str(xs) + " vs " + shape_str(ws));
  VIBI_REQUIRE(b.value().rank() == 1 && b.shape()[0] == ws[0], "conv2d: bias length must equal filters");
  VIBI_REQUIRE(xs[2] + 2 * pad >= ws[2] && xs[3] + 2 * pad >= ws[3], "conv2d: kernel larger than input");
  detail::ConvGeom s{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], pad,
                     xs[2] + 2 * pad - ws[2] + 1, xs[3] + 2 * pad - ws[3] + 1};
  BasicTensor<T> out(Shape{s.n, s.f, s.oh, s.ow});
  std::vector<T> cols(s.k() * s.p());
  ConstMatMap<T> wm(w.value().data().data(), s.f, s.k());
  ConstMatMap<T> colm(cols.data(), s.k(), s.p());
  for (std::size_t i = 0; i < s.n; ++i) {
    detail::im2col(x.value().data().data() + i * s.c * s.h * s.w, s, cols.data());
    MatMap<T> om(out.data().data() + i * s.f * s.p(), s.f, s.p());
    om.noalias() = wm * colm;
    for (std::size_t f = 0; f < s.f; ++f) om.row(f).array() += b.value()[f];
  }
  auto ix = x.id, iw = w.id, ib = b.id;
  return g.record(
      std::move(out), {ix, iw, ib},
      [ix, iw, ib, s](Graph<T>& gr, std::size_t self) {
        const auto& up = gr.upstream(self);
        const auto& xv = gr.value(ix);
        auto* gx = gr.grad_buffer(ix);
        auto* gw = gr.grad_buffer(iw);
        auto* gb = gr.grad_buffer(ib);
        std::vector<T> cols(s.k() * s.p());
        std::vector<T> dcols(gx ? s.k() * s.p() : 0);
        ConstMatMap<T> wm(gr.value(iw).data().data(), s.f, s.k());
        for (std::size_t i = 0; i < s.n; ++i) {
          ConstMatMap<T> dy(up.data().data() + i * s.f * s.p(), s.f, s.p());
          if (gw) {
            detail::im2col(xv.data().data() + i * s.c * s.h * s.w, s, cols.data());
            MatMap<T>(gw->data().data(), s.f, s.k()).noalias() +=
                dy * ConstMatMap<T>(cols.data(), s.k(), s.p()).transpose();
          }
          if (gb) {
            for (std::size_t f = 0; f < s.f; ++f) (*gb)[f] += dy.row(f).sum();
          }
          if (gx) {
            MatMap<T>(dcols.data(), s.k(), s.p()).noalias() = wm.transpose() * dy;
            detail::col2im_add(dcols.data(), s, gx->data().data() + i * s.c * s.h * s.w);
          }
        }
      },
      "conv2d");
}

/// Non-overlapping max pooling with window = stride = `size` over NCHW input.
/// Trailing rows/columns that do not fill a window are dropped.
template <typename T>
Var<T> maxpool2d(Var<T> x, std::size_t size) {
  auto& g = detail::graph_of(x);
  const auto& xs = x.shape();
  VIBI_REQUIRE(xs.size() == 4, "maxpool2d: input must be rank 4");
  VIBI_REQUIRE(size >= 1 && xs[2] >= size && xs[3] >= size, "maxpool2d: window larger than input");
  const std::size_t planes = xs[0] * xs[1], h = xs[2], w = xs[3], oh = h / size, ow = w / size;
  BasicTensor<T> out(Shape{xs[0], xs[1], oh, ow});
  std::vector<std::uint32_t> arg(out.size());
  const auto& xv = x.value();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = p * h * w + oy * size * w + ox * size;
        for (std::size_t dy = 0; dy < size; ++dy) {
          for (std::size_t dx = 0; dx < size; ++dx) {
            std::size_t idx = p * h * w + (oy * size + dy) * w + ox * size + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = xv[best];
        arg[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  auto ix = x.id;
  return g.record(std::move(out), {ix},
                  [ix, arg = std::move(arg)](Graph<T>& gr, std::size_t self) {
                    const auto& up = gr.upstream(self);
                    if (auto* gx = gr.grad_buffer(ix)) {
                      for (std::size_t o = 0; o < arg.size(); ++o) (*gx)[arg[o]] += up[o];
                    }
                  },
                  "maxpool2d");
}

/// Log-softmax over the last axis, computed with max subtraction.
template <typename T>
Var<T> log_softmax(Var<T> a) {
  auto& g = detail::graph_of(a);
  const auto& shape = a.shape();
  const std::size_t len = shape.empty() ? 1 : shape.back();
  const std::size_t rows = a.value().size() / len;
  const auto& x = a.value();
  BasicTensor<T> out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* v = x.data().data() + r * len;
    T* o = out.data().data() + r * len;
    T mx = *std::max_element(v, v + len);
    T s{0};
    for (std::size_t j = 0; j < len; ++j) s += std::exp(v[j] - mx);
    const T log_s = std::log(s);
    for (std::size_t j = 0; j < len; ++j) o[j] = (v[j] - mx) - log_s;
  }
  auto ia = a.id;
  return g.record(std::move(out), {ia},
                  [ia, rows, len](Graph<T>& gr, std::size_t self) {
                    const auto& up = gr.upstream(self);
                    const auto& y = gr.value(self);
                    std::vector<T> d(up.size());
                    for (std::size_t r = 0; r < rows; ++r) {
                      T s{0};
                      for (std::size_t j = 0; j < len; ++j) s += up[r * len + j];
                      for (std::size_t j = 0; j < len; ++j) {
                        d[r * len + j] = up[r * len + j] - std::exp(y[r * len + j]) * s;
                      }
                    }
                    gr.accumulate(ia, d);
                  },
                  "log_softmax");
}

/// Rows [N,C] of log-probabilities -> [N] negative log-likelihoods of targets.
template <typename T>
Var<T> nll_pick(Var<T> logp, std::span<const std::size_t> targets) {
  auto& g = detail::graph_of(logp);
  const auto& shape = logp.shape();
  VIBI_REQUIRE(shape.size() == 2, "nll_pick: expected [N,C] log-probabilities");
  VIBI_REQUIRE(targets.size() == shape[0], "nll_pick: one target per row required");
  const std::size_t n = shape[0], c = shape[1];
  BasicTensor<T> out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    VIBI_REQUIRE(targets[i] < c, "nll_pick: target class out of range");
    out[i] = -logp.value()[i * c + targets[i]];
  }
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  auto il = logp.id;
  return g.record(std::move(out), {il},
                  [il, c, tg = std::move(tg)](Graph<T>& gr, std::size_t self) {
                    const auto& up = gr.upstream(self);
                    if (auto* gl = gr.grad_buffer(il)) {
                      for (std::size_t i = 0; i < tg.size(); ++i) (*gl)[i * c + tg[i]] -= up[i];
                    }
                  },
                  "nll_pick");
}

/// Selects along axis 0 (rows) or axis 1 (columns) of a rank-2 tensor:
/// axis 0: out[r, :] = x[idx[r], :]; axis 1: out[:, j] = x[:, idx[j]].
template <typename T>
Var<T> gather(Var<T> x, std::size_t axis, std::span<const std::size_t> idx) {
  auto& g = detail::graph_of(x);
  const auto& xs = x.shape();
  VIBI_REQUIRE(xs.size() == 2 && axis < 2, "gather: rank-2 input and axis 0/1 required");
  VIBI_REQUIRE(!idx.empty(), "gather: empty index list");
  for (auto i : idx) VIBI_REQUIRE(i < xs[axis], "gather: index out of range");
  const std::size_t rows = xs[0], cols = xs[1];
  const auto& xv = x.value();
  Shape out_shape = axis == 0 ? Shape{idx.size(), cols} : Shape{rows, idx.size()};
  BasicTensor<T> out(out_shape);
  if (axis == 0) {
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::copy_n(xv.data().data() + idx[r] * cols, cols, out.data().data() + r * cols);
    }
  } else {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < idx.size(); ++j) out[r * idx.size() + j] = xv[r * cols + idx[j]];
    }
  }
  std::vector<std::size_t> ids(idx.begin(), idx.end());
  auto ix = x.id;
  return g.record(std::move(out), {ix},
                  [ix, axis, rows, cols, ids = std::move(ids)](Graph<T>& gr, std::size_t self) {
                    const auto& up = gr.upstream(self);
                    auto* gx = gr.grad_buffer(ix);
                    if (!gx) return;
                    if (axis == 0) {
                      for (std::size_t r = 0; r < ids.size(); ++r) {
                        for (std::size_t c = 0; c < cols; ++c) (*gx)[ids[r] * cols + c] += up[r * cols + c];
                      }
                    } else {
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t j = 0; j < ids.size(); ++j) {
                          (*gx)[r * cols + ids[j]] += up[r * ids.size() + j];
                        }
                      }
                    }
                  },
                  "gather");
}

/// Adjoint of gather: sums x's entries into `out_len` slots along `axis`.
template <typename T>
Var<T> scatter(Var<T> x, std::size_t axis, std::span<const std::size_t> idx, std::size_t out_len) {
  auto& g = detail::graph_of(x);
  const auto& xs = x.shape();
  VIBI_REQUIRE(xs.size() == 2 && axis < 2, "scatter: rank-2 input and axis 0/1 required");
  VIBI_REQUIRE(idx.size() == xs[axis], "scatter: one index per slice required");
  for (auto i : idx) VIBI_REQUIRE(i < out_len, "scatter: index out of range");
  const std::size_t rows = xs[0], cols = xs[1];
  const auto& xv = x.value();
  Shape out_shape = axis == 0 ? Shape{out_len, cols} : Shape{rows, out_len};
  BasicTensor<T> out(out_shape);
  if (axis == 0) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) out[idx[r] * cols + c] += xv[r * cols + c];
    }
  } else {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < cols; ++j) out[r * out_len + idx[j]] += xv[r * cols + j];
    }
  }
  std::vector<std::size_t> ids(idx.begin(), idx.end());
  auto ix = x.id;
  return g.record(std::move(out), {ix},
                  [ix, axis, rows, cols, out_len, ids = std::move(ids)](Graph<T>& gr, std::size_t self) {
                    const auto& up = gr.upstream(self);
                    auto* gx = gr.grad_buffer(ix);
                    if (!gx) return;
                    if (axis == 0) {
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < cols; ++c) (*gx)[r * cols + c] += up[ids[r] * cols + c];
                      }
                    } else {
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t j = 0; j < cols; ++j) (*gx)[r * cols + j] += up[r * out_len + ids[j]];
                      }
                    }
                  },
                  "scatter");
}

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T>
Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }

/// Plain (non-graph) log-softmax of a vector; rejects empty input.
template <typename T>
std::vector<T> log_softmax_values(std::span<const T> v) {
  if (v.empty()) {
    throw InvalidArgument("log_softmax: empty vector");
  }
  Graph<T> g;
  auto x = g.constant(BasicTensor<T>(Shape{v.size()}, std::vector<T>(v.begin(), v.end())));
  const auto& out = log_softmax(x).value();
  return {out.data().begin(), out.data().end()};
}

}  // namespace vibi
