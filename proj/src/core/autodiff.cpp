// Copyright 2026 The tilestream Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "tilestream/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tilestream/error.hpp"

namespace tilestream::ad {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, BackwardFn backward) {
  if (!value.all_finite()) throw InvalidArgument("non-finite value produced on tape");
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape != this) throw InvalidArgument("operand belongs to a different tape");
    needs = needs || nodes_[p.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor{}, needs ? std::move(backward) : nullptr, needs});
  return Var{this, nodes_.size() - 1};
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Tensor* Tape::grad_target(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return &n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw InvalidArgument("loss belongs to a different tape");
  if (nodes_.at(loss.id).value.size() != 1)
    throw InvalidArgument("backward() requires a scalar loss, got " +
                          shape_string(nodes_[loss.id].value.shape()));
  for (Node& n : nodes_) n.grad = Tensor{};
  if (!nodes_[loss.id].requires_grad) return;
  nodes_[loss.id].grad = Tensor(nodes_[loss.id].value.shape(), 1.0);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.backward && !n.grad.empty()) n.backward(*this, id);
  }
}

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw InvalidArgument(std::string(what) + ": expected rank " + std::to_string(rank) +
                          " tensor, got " + shape_string(t.shape()));
}

template <typename Fwd, typename Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  const std::size_t ai = a.id;
  return a.tape->record(std::move(y), {a}, [ai, deriv](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_target(ai);
    if (!ga) return;
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ai);
    const Tensor& yv = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * deriv(xv[i], yv[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(y), {a, b}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t p : {ai, bi})
      if (Tensor* gp = t.grad_target(p))
        for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i] += g[i];
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(y), {a, b}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_target(ai))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Tensor* gb = t.grad_target(bi))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "hadamard");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(y), {a, b}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_target(ai)) {
      const Tensor& bv = t.value(bi);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = t.grad_target(bi)) {
      const Tensor& av = t.value(ai);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ai = a.id;
  return a.tape->record(Tensor::scalar(s), {a}, [ai](Tape& t, std::size_t self) {
    if (Tensor* ga = t.grad_target(ai)) {
      const double g = t.grad(self)[0];
      for (double& v : ga->data()) v += g;
    }
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var softmax_all(Var a) {
  const Tensor& x = a.value();
  const double mx = *std::max_element(x.data().begin(), x.data().end());
  Tensor y(x.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (y[i] = std::exp(x[i] - mx));
  for (double& v : y.data()) v /= z;
  const std::size_t ai = a.id;
  return a.tape->record(std::move(y), {a}, [ai](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_target(ai);
    if (!ga) return;
    const Tensor& g = t.grad(self);
    const Tensor& yv = t.value(self);
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * yv[i];
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += yv[i] * (g[i] - dot);
  });
}

Var concat_channels(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank(av, 3, "concat_channels");
  require_rank(bv, 3, "concat_channels");
  if (av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2))
    throw InvalidArgument("concat_channels: spatial shape mismatch " + shape_string(av.shape()) +
                          " vs " + shape_string(bv.shape()));
  Tensor y({av.dim(0) + bv.dim(0), av.dim(1), av.dim(2)});
  std::copy(av.data().begin(), av.data().end(), y.data().begin());
  std::copy(bv.data().begin(), bv.data().end(), y.data().begin() + static_cast<std::ptrdiff_t>(av.size()));
  const std::size_t ai = a.id, bi = b.id, na = av.size();
  return a.tape->record(std::move(y), {a, b}, [ai, bi, na](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_target(ai))
      for (std::size_t i = 0; i < na; ++i) (*ga)[i] += g[i];
    if (Tensor* gb = t.grad_target(bi))
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += g[na + i];
  });
}

Var slice_channels(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  require_rank(av, 3, "slice_channels");
  if (count == 0 || begin + count > av.dim(0))
    throw InvalidArgument("slice_channels: range out of bounds for " + shape_string(av.shape()));
  const std::size_t plane = av.dim(1) * av.dim(2);
  Tensor y({count, av.dim(1), av.dim(2)});
  std::copy_n(av.data().begin() + static_cast<std::ptrdiff_t>(begin * plane), count * plane,
              y.data().begin());
  const std::size_t ai = a.id, off = begin * plane;
  return a.tape->record(std::move(y), {a}, [ai, off](Tape& t, std::size_t self) {
    if (Tensor* ga = t.grad_target(ai)) {
      const Tensor& g = t.grad(self);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[off + i] += g[i];
    }
  });
}

Var global_avg_pool(Var x) {
  const Tensor& xv = x.value();
  require_rank(xv, 3, "global_avg_pool");
  const std::size_t c = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
  Tensor y({c});
  for (std::size_t k = 0; k < c; ++k) {
    double s = 0.0;
    for (std::size_t p = 0; p < plane; ++p) s += xv[k * plane + p];
    y[k] = s / static_cast<double>(plane);
  }
  const std::size_t xi = x.id;
  return x.tape->record(std::move(y), {x}, [xi, c, plane](Tape& t, std::size_t self) {
    if (Tensor* gx = t.grad_target(xi)) {
      const Tensor& g = t.grad(self);
      for (std::size_t k = 0; k < c; ++k) {
        const double gk = g[k] / static_cast<double>(plane);
        for (std::size_t p = 0; p < plane; ++p) (*gx)[k * plane + p] += gk;
      }
    }
  });
}

Var scale_channels(Var x, Var scales) {
  const Tensor& xv = x.value();
  const Tensor& sv = scales.value();
  require_rank(xv, 3, "scale_channels");
  if (sv.rank() != 1 || sv.dim(0) != xv.dim(0))
    throw InvalidArgument("scale_channels: scales " + shape_string(sv.shape()) +
                          " do not match channels of " + shape_string(xv.shape()));
  const std::size_t c = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
  Tensor y = xv;
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t p = 0; p < plane; ++p) y[k * plane + p] *= sv[k];
  const std::size_t xi = x.id, si = scales.id;
  return x.tape->record(std::move(y), {x, scales}, [xi, si, c, plane](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* gx = t.grad_target(xi)) {
      const Tensor& s = t.value(si);
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t p = 0; p < plane; ++p) (*gx)[k * plane + p] += g[k * plane + p] * s[k];
    }
    if (Tensor* gs = t.grad_target(si)) {
      const Tensor& xv = t.value(xi);
      for (std::size_t k = 0; k < c; ++k) {
        double acc = 0.0;
        for (std::size_t p = 0; p < plane; ++p) acc += g[k * plane + p] * xv[k * plane + p];
        (*gs)[k] += acc;
      }
    }
  });
}

Var avg_pool(Var x, std::size_t ph, std::size_t pw) {
  const Tensor& xv = x.value();
  require_rank(xv, 3, "avg_pool");
  const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  if (ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0)
    throw InvalidArgument("avg_pool: window " + std::to_string(ph) + "x" + std::to_string(pw) +
                          " does not tile " + shape_string(xv.shape()));
  const std::size_t oh = h / ph, ow = w / pw;
  const double inv = 1.0 / static_cast<double>(ph * pw);
  Tensor y({c, oh, ow});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) y.at(k, i / ph, j / pw) += xv.at(k, i, j) * inv;
  const std::size_t xi = x.id;
  return x.tape->record(std::move(y), {x}, [xi, ph, pw, inv](Tape& t, std::size_t self) {
    Tensor* gx = t.grad_target(xi);
    if (!gx) return;
    const Tensor& g = t.grad(self);
    for (std::size_t k = 0; k < gx->dim(0); ++k)
      for (std::size_t i = 0; i < gx->dim(1); ++i)
        for (std::size_t j = 0; j < gx->dim(2); ++j) gx->at(k, i, j) += g.at(k, i / ph, j / pw) * inv;
  });
}

Var upsample_nearest(Var x, std::size_t fh, std::size_t fw) {
  const Tensor& xv = x.value();
  require_rank(xv, 3, "upsample_nearest");
  if (fh == 0 || fw == 0) throw InvalidArgument("upsample_nearest: zero factor");
  const std::size_t c = xv.dim(0), h = xv.dim(1) * fh, w = xv.dim(2) * fw;
  Tensor y({c, h, w});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) y.at(k, i, j) = xv.at(k, i / fh, j / fw);
  const std::size_t xi = x.id;
  return x.tape->record(std::move(y), {x}, [xi, fh, fw](Tape& t, std::size_t self) {
    Tensor* gx = t.grad_target(xi);
    if (!gx) return;
    const Tensor& g = t.grad(self);
    for (std::size_t k = 0; k < g.dim(0); ++k)
      for (std::size_t i = 0; i < g.dim(1); ++i)
        for (std::size_t j = 0; j < g.dim(2); ++j) gx->at(k, i / fh, j / fw) += g.at(k, i, j);
  });
}

Var matvec(Var w, Var v) {
  const Tensor& wv = w.value();
  const Tensor& vv = v.value();
  require_rank(wv, 2, "matvec");
  if (vv.rank() != 1 || vv.dim(0) != wv.dim(1))
    throw InvalidArgument("matvec: " + shape_string(wv.shape()) + " x " + shape_string(vv.shape()));
  const std::size_t rows = wv.dim(0), cols = wv.dim(1);
  Tensor y({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += wv[r * cols + c] * vv[c];
    y[r] = s;
  }
  const std::size_t wi = w.id, vi = v.id;
  return w.tape->record(std::move(y), {w, v}, [wi, vi, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* gw = t.grad_target(wi)) {
      const Tensor& vv = t.value(vi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*gw)[r * cols + c] += g[r] * vv[c];
    }
    if (Tensor* gv = t.grad_target(vi)) {
      const Tensor& wv = t.value(wi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*gv)[c] += g[r] * wv[r * cols + c];
    }
  });
}

namespace {

// Accumulates out[y][x] += k * in[y+oy][x+ox] over the valid region of one
// H x W plane with offset (oy, ox).
inline void shifted_axpy(double* out, const double* in, double k, std::size_t h, std::size_t w,
                         std::ptrdiff_t oy, std::ptrdiff_t ox) {
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -oy), y1 = std::min(H, H - oy);
  const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -ox), x1 = std::min(W, W - ox);
  for (std::ptrdiff_t y = y0; y < y1; ++y) {
    double* orow = out + y * W;
    const double* irow = in + (y + oy) * W + ox;
    for (std::ptrdiff_t x = x0; x < x1; ++x) orow[x] += k * irow[x];
  }
}

// Returns sum over the valid region of a[y][x] * b[y+oy][x+ox].
inline double shifted_dot(const double* a, const double* b, std::size_t h, std::size_t w,
                          std::ptrdiff_t oy, std::ptrdiff_t ox) {
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -oy), y1 = std::min(H, H - oy);
  const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -ox), x1 = std::min(W, W - ox);
  double s = 0.0;
  for (std::ptrdiff_t y = y0; y < y1; ++y) {
    const double* arow = a + y * W;
    const double* brow = b + (y + oy) * W + ox;
    for (std::ptrdiff_t x = x0; x < x1; ++x) s += arow[x] * brow[x];
  }
  return s;
}

void check_odd_kernel(std::size_t kh, std::size_t kw, const char* what) {
  if (kh % 2 == 0 || kw % 2 == 0)
    throw InvalidArgument(std::string(what) + ": kernel extents must be odd, got " +
                          std::to_string(kh) + "x" + std::to_string(kw));
}

}  // namespace

Var conv2d(Var x, Var kernels, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& kv = kernels.value();
  const Tensor& bv = bias.value();
  require_rank(xv, 3, "conv2d input");
  require_rank(kv, 4, "conv2d kernels");
  const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const std::size_t o = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
  if (kv.dim(1) != c)
    throw InvalidArgument("conv2d: input has " + std::to_string(c) + " channels, kernels expect " +
                          std::to_string(kv.dim(1)));
  if (bv.rank() != 1 || bv.dim(0) != o) throw InvalidArgument("conv2d: bias shape mismatch");
  check_odd_kernel(kh, kw, "conv2d");
  const std::size_t plane = h * w;
  const auto rh = static_cast<std::ptrdiff_t>(kh / 2), rw = static_cast<std::ptrdiff_t>(kw / 2);
  Tensor y({o, h, w});
  for (std::size_t oc = 0; oc < o; ++oc) {
    double* out = y.data().data() + oc * plane;
    std::fill(out, out + plane, bv[oc]);
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t dy = 0; dy < kh; ++dy)
        for (std::size_t dx = 0; dx < kw; ++dx) {
          const double k = kv[((oc * c + ic) * kh + dy) * kw + dx];
          if (k != 0.0)
            shifted_axpy(out, xv.data().data() + ic * plane, k, h, w,
                         static_cast<std::ptrdiff_t>(dy) - rh, static_cast<std::ptrdiff_t>(dx) - rw);
        }
  }
  const std::size_t xi = x.id, ki = kernels.id, bi = bias.id;
  return x.tape->record(
      std::move(y), {x, kernels, bias},
      [xi, ki, bi, c, h, w, o, kh, kw, rh, rw](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const std::size_t plane = h * w;
        if (Tensor* gb = t.grad_target(bi))
          for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t p = 0; p < plane; ++p) (*gb)[oc] += g[oc * plane + p];
        Tensor* gx = t.grad_target(xi);
        Tensor* gk = t.grad_target(ki);
        const Tensor& xv = t.value(xi);
        const Tensor& kv = t.value(ki);
        for (std::size_t oc = 0; oc < o; ++oc) {
          const double* gp = g.data().data() + oc * plane;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t dy = 0; dy < kh; ++dy)
              for (std::size_t dx = 0; dx < kw; ++dx) {
                const std::size_t kidx = ((oc * c + ic) * kh + dy) * kw + dx;
                const auto oy = static_cast<std::ptrdiff_t>(dy) - rh;
                const auto ox = static_cast<std::ptrdiff_t>(dx) - rw;
                if (gk) (*gk)[kidx] += shifted_dot(gp, xv.data().data() + ic * plane, h, w, oy, ox);
                // out[y][x] += k in[y+oy][x+ox]  =>  gin[y'][x'] += k g[y'-oy][x'-ox]
                if (gx) shifted_axpy(gx->data().data() + ic * plane, gp, kv[kidx], h, w, -oy, -ox);
              }
        }
      });
}

Var depthwise_conv2d(Var x, Var kernels) {
  const Tensor& xv = x.value();
  const Tensor& kv = kernels.value();
  require_rank(xv, 3, "depthwise_conv2d input");
  require_rank(kv, 3, "depthwise_conv2d kernels");
  const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const std::size_t kh = kv.dim(1), kw = kv.dim(2);
  if (kv.dim(0) != c)
    throw InvalidArgument("depthwise_conv2d: input has " + std::to_string(c) +
                          " channels, kernels expect " + std::to_string(kv.dim(0)));
  check_odd_kernel(kh, kw, "depthwise_conv2d");
  const std::size_t plane = h * w;
  const auto rh = static_cast<std::ptrdiff_t>(kh / 2), rw = static_cast<std::ptrdiff_t>(kw / 2);
  Tensor y({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t dy = 0; dy < kh; ++dy)
      for (std::size_t dx = 0; dx < kw; ++dx)
        shifted_axpy(y.data().data() + ch * plane, xv.data().data() + ch * plane,
                     kv[(ch * kh + dy) * kw + dx], h, w, static_cast<std::ptrdiff_t>(dy) - rh,
                     static_cast<std::ptrdiff_t>(dx) - rw);
  const std::size_t xi = x.id, ki = kernels.id;
  return x.tape->record(std::move(y), {x, kernels},
                        [xi, ki, c, h, w, kh, kw, rh, rw](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad(self);
                          const std::size_t plane = h * w;
                          Tensor* gx = t.grad_target(xi);
                          Tensor* gk = t.grad_target(ki);
                          const Tensor& xv = t.value(xi);
                          const Tensor& kv = t.value(ki);
                          for (std::size_t ch = 0; ch < c; ++ch) {
                            const double* gp = g.data().data() + ch * plane;
                            for (std::size_t dy = 0; dy < kh; ++dy)
                              for (std::size_t dx = 0; dx < kw; ++dx) {
                                const std::size_t kidx = (ch * kh + dy) * kw + dx;
                                const auto oy = static_cast<std::ptrdiff_t>(dy) - rh;
                                const auto ox = static_cast<std::ptrdiff_t>(dx) - rw;
                                if (gk)
                                  (*gk)[kidx] +=
                                      shifted_dot(gp, xv.data().data() + ch * plane, h, w, oy, ox);
                                if (gx)
                                  shifted_axpy(gx->data().data() + ch * plane, gp, kv[kidx], h, w,
                                               -oy, -ox);
                              }
                          }
                        });
}

Var pointwise_conv(Var x, Var weights, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weights.value();
  const Tensor& bv = bias.value();
  require_rank(xv, 3, "pointwise_conv input");
  require_rank(wv, 2, "pointwise_conv weights");
  const std::size_t c = xv.dim(0), plane = xv.dim(1) * xv.dim(2), o = wv.dim(0);
  if (wv.dim(1) != c)
    throw InvalidArgument("pointwise_conv: input has " + std::to_string(c) +
                          " channels, weights expect " + std::to_string(wv.dim(1)));
  if (bv.rank() != 1 || bv.dim(0) != o) throw InvalidArgument("pointwise_conv: bias shape mismatch");
  Tensor y({o, xv.dim(1), xv.dim(2)});
  for (std::size_t oc = 0; oc < o; ++oc) {
    double* out = y.data().data() + oc * plane;
    std::fill(out, out + plane, bv[oc]);
    for (std::size_t ic = 0; ic < c; ++ic) {
      const double k = wv[oc * c + ic];
      const double* in = xv.data().data() + ic * plane;
      for (std::size_t p = 0; p < plane; ++p) out[p] += k * in[p];
    }
  }
  const std::size_t xi = x.id, wi = weights.id, bi = bias.id;
  return x.tape->record(std::move(y), {x, weights, bias},
                        [xi, wi, bi, c, plane, o](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad(self);
                          if (Tensor* gb = t.grad_target(bi))
                            for (std::size_t oc = 0; oc < o; ++oc)
                              for (std::size_t p = 0; p < plane; ++p) (*gb)[oc] += g[oc * plane + p];
                          Tensor* gx = t.grad_target(xi);
                          Tensor* gw = t.grad_target(wi);
                          const Tensor& xv = t.value(xi);
                          const Tensor& wv = t.value(wi);
                          for (std::size_t oc = 0; oc < o; ++oc) {
                            const double* gp = g.data().data() + oc * plane;
                            for (std::size_t ic = 0; ic < c; ++ic) {
                              const double* in = xv.data().data() + ic * plane;
                              if (gw) {
                                double s = 0.0;
                                for (std::size_t p = 0; p < plane; ++p) s += gp[p] * in[p];
                                (*gw)[oc * c + ic] += s;
                              }
                              if (gx) {
                                const double k = wv[oc * c + ic];
                                double* gin = gx->data().data() + ic * plane;
                                for (std::size_t p = 0; p < plane; ++p) gin[p] += k * gp[p];
                              }
                            }
                          }
                        });
}

Var separable_conv(Var x, Var depthwise, Var pointwise, Var bias) {
  return pointwise_conv(depthwise_conv2d(x, depthwise), pointwise, bias);
}

Var se_excitation(Var x, Var w1, Var w2) {
  const Tensor& xv = x.value();
  require_rank(xv, 3, "se_block input");
  const std::size_t c = xv.dim(0);
  const Tensor& a = w1.value();
  const Tensor& b = w2.value();
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != c || b.dim(0) != c || b.dim(1) != a.dim(0))
    throw InvalidArgument("se_block: weights " + shape_string(a.shape()) + ", " +
                          shape_string(b.shape()) + " incompatible with " + std::to_string(c) +
                          " channels");
  return sigmoid(matvec(w2, relu(matvec(w1, global_avg_pool(x)))));
}

Var se_block(Var x, Var w1, Var w2) { return scale_channels(x, se_excitation(x, w1, w2)); }

Var bce_loss(Var pred, const Tensor& target) {
  const Tensor& p = pred.value();
  require_same_shape(p, target, "bce_loss");
  const double n = static_cast<double>(p.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double t = target[i];
    if (t < 0.0 || t > 1.0) throw InvalidArgument("bce_loss: target outside [0,1]");
    const double q = std::clamp(p[i], kLogEpsilon, 1.0 - kLogEpsilon);
    loss -= t * std::log(q) + (1.0 - t) * std::log(1.0 - q);
  }
  const std::size_t pi = pred.id;
  return pred.tape->record(Tensor::scalar(loss / n), {pred},
                           [pi, target, n](Tape& t, std::size_t self) {
                             Tensor* gp = t.grad_target(pi);
                             if (!gp) return;
                             const double g = t.grad(self)[0] / n;
                             const Tensor& p = t.value(pi);
                             for (std::size_t i = 0; i < p.size(); ++i) {
                               const double q = p[i];
                               if (q <= kLogEpsilon || q >= 1.0 - kLogEpsilon) continue;
                               (*gp)[i] += g * (q - target[i]) / (q * (1.0 - q));
                             }
                           });
}

Var kl_loss(Var pred, const Tensor& target) {
  const Tensor& p = pred.value();
  require_same_shape(p, target, "kl_loss");
  double sp = 0.0, st = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || target[i] < 0.0) throw InvalidArgument("kl_loss: negative mass");
    sp += p[i];
    st += target[i];
  }
  if (sp <= 0.0 || st <= 0.0) throw InvalidArgument("kl_loss: cannot normalise an all-zero map");
  Tensor tn = target;
  for (double& v : tn.data()) v /= st;
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (tn[i] <= 0.0) continue;
    const double q = std::max(p[i] / sp, kLogEpsilon);
    loss += tn[i] * std::log(std::max(tn[i], kLogEpsilon) / q);
  }
  const std::size_t pi = pred.id;
  return pred.tape->record(Tensor::scalar(loss), {pred},
                           [pi, tn = std::move(tn), sp](Tape& t, std::size_t self) {
                             Tensor* gp = t.grad_target(pi);
                             if (!gp) return;
                             const double g = t.grad(self)[0];
                             const Tensor& p = t.value(pi);
                             double active_mass = 0.0;
                             for (std::size_t i = 0; i < p.size(); ++i)
                               if (tn[i] > 0.0 && p[i] / sp >= kLogEpsilon) active_mass += tn[i];
                             for (std::size_t i = 0; i < p.size(); ++i) {
                               double d = active_mass / sp;
                               if (tn[i] > 0.0 && p[i] / sp >= kLogEpsilon) d -= tn[i] / p[i];
                               (*gp)[i] += g * d;
                             }
                           });
}

std::size_t conv2d_flops(std::size_t c, std::size_t o, std::size_t h, std::size_t w,
                         std::size_t kh, std::size_t kw) {
  return o * c * kh * kw * h * w;
}

std::size_t separable_conv_flops(std::size_t c, std::size_t o, std::size_t h, std::size_t w,
                                 std::size_t kh, std::size_t kw) {
  return c * kh * kw * h * w + o * c * h * w;
}

}  // namespace tilestream::ad
