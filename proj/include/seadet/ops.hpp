#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "seadet/autodiff.hpp"
#include "seadet/tensor.hpp"

// Differentiable primitives recorded on a TapeT. Feature maps are rank-3
// {H, W, C}; score matrices are rank-2 {N, C}. Backward closures capture the
// forward tensors they need by value.

namespace seadet {

namespace detail {

template <class S>
TapeT<S>& same_tape(VarT<S> a, VarT<S> b) {
  check(a.tape == b.tape && a.tape != nullptr, "operands live on different tapes");
  return *a.tape;
}

}  // namespace detail

// ---- elementwise arithmetic ----

template <class S>
VarT<S> add(VarT<S> a, VarT<S> b) {
  TapeT<S>& t = detail::same_tape(a, b);
  const TensorT<S>&x = t.value(a), &y = t.value(b);
  check(x.same_shape(y), "add: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  TensorT<S> out(x.shape());
  out.data() = x.data() + y.data();
  return t.record(std::move(out), {a, b}, [a, b](TapeT<S>& tp, VarT<S> o) {
    const auto& g = tp.grad_buffer(o).data();
    if (tp.requires_grad(a)) tp.grad_buffer(a).data() += g;
    if (tp.requires_grad(b)) tp.grad_buffer(b).data() += g;
  });
}

template <class S>
VarT<S> sub(VarT<S> a, VarT<S> b) {
  TapeT<S>& t = detail::same_tape(a, b);
  const TensorT<S>&x = t.value(a), &y = t.value(b);
  check(x.same_shape(y), "sub: shape mismatch");
  TensorT<S> out(x.shape());
  out.data() = x.data() - y.data();
  return t.record(std::move(out), {a, b}, [a, b](TapeT<S>& tp, VarT<S> o) {
    const auto& g = tp.grad_buffer(o).data();
    if (tp.requires_grad(a)) tp.grad_buffer(a).data() += g;
    if (tp.requires_grad(b)) tp.grad_buffer(b).data() -= g;
  });
}

template <class S>
VarT<S> mul(VarT<S> a, VarT<S> b) {
  TapeT<S>& t = detail::same_tape(a, b);
  TensorT<S> x = t.value(a), y = t.value(b);
  check(x.same_shape(y), "mul: shape mismatch");
  TensorT<S> out(x.shape());
  out.data() = x.data() * y.data();
  return t.record(std::move(out), {a, b}, [a, b, x, y](TapeT<S>& tp, VarT<S> o) {
    const auto& g = tp.grad_buffer(o).data();
    if (tp.requires_grad(a)) tp.grad_buffer(a).data() += g * y.data();
    if (tp.requires_grad(b)) tp.grad_buffer(b).data() += g * x.data();
  });
}

template <class S>
VarT<S> cmul(VarT<S> a, S k) {
  TapeT<S>& t = *a.tape;
  TensorT<S> out(t.value(a).shape());
  out.data() = t.value(a).data() * k;
  return t.record(std::move(out), {a}, [a, k](TapeT<S>& tp, VarT<S> o) {
    tp.grad_buffer(a).data() += tp.grad_buffer(o).data() * k;
  });
}

template <class S>
VarT<S> cadd(VarT<S> a, S k) {
  TapeT<S>& t = *a.tape;
  TensorT<S> out(t.value(a).shape());
  out.data() = t.value(a).data() + k;
  return t.record(std::move(out), {a}, [a](TapeT<S>& tp, VarT<S> o) {
    tp.grad_buffer(a).data() += tp.grad_buffer(o).data();
  });
}

// elementwise product with a fixed (non-differentiated) tensor
template <class S>
VarT<S> cmul_tensor(VarT<S> a, TensorT<S> w) {
  TapeT<S>& t = *a.tape;
  check(t.value(a).same_shape(w), "cmul_tensor: shape mismatch");
  TensorT<S> out(w.shape());
  out.data() = t.value(a).data() * w.data();
  return t.record(std::move(out), {a}, [a, w](TapeT<S>& tp, VarT<S> o) {
    tp.grad_buffer(a).data() += tp.grad_buffer(o).data() * w.data();
  });
}

// elementwise sum with a fixed tensor (pass a negated tensor to subtract)
template <class S>
VarT<S> cadd_tensor(VarT<S> a, const TensorT<S>& w) {
  TapeT<S>& t = *a.tape;
  check(t.value(a).same_shape(w), "cadd_tensor: shape mismatch");
  TensorT<S> out(w.shape());
  out.data() = t.value(a).data() + w.data();
  return t.record(std::move(out), {a}, [a](TapeT<S>& tp, VarT<S> o) {
    tp.grad_buffer(a).data() += tp.grad_buffer(o).data();
  });
}

// ---- activations ----

template <class S>
VarT<S> relu(VarT<S> a) {
  TapeT<S>& t = *a.tape;
  TensorT<S> x = t.value(a);
  TensorT<S> out(x.shape());
  out.data() = x.data().max(S(0));
  return t.record(std::move(out), {a}, [a, x](TapeT<S>& tp, VarT<S> o) {
    tp.grad_buffer(a).data() +=
        tp.grad_buffer(o).data() * (x.data() > S(0)).template cast<S>();
  });
}

template <class S>
VarT<S> leaky_relu(VarT<S> a, S slope) {
  TapeT<S>& t = *a.tape;
  TensorT<S> x = t.value(a);
  TensorT<S> out(x.shape());
  out.data() = (x.data() > S(0)).select(x.data(), x.data() * slope);
  return t.record(std::move(out), {a}, [a, x, slope](TapeT<S>& tp, VarT<S> o) {
    auto mask = (x.data() > S(0)).template cast<S>();
    tp.grad_buffer(a).data() +=
        tp.grad_buffer(o).data() * (mask + (S(1) - mask) * slope);
  });
}

template <class S>
VarT<S> sigmoid(VarT<S> a) {
  TapeT<S>& t = *a.tape;
  TensorT<S> out(t.value(a).shape());
  out.data() = S(1) / (S(1) + (-t.value(a).data()).exp());
  TensorT<S> y = out;
  return t.record(std::move(out), {a}, [a, y](TapeT<S>& tp, VarT<S> o) {
    tp.grad_buffer(a).data() +=
        tp.grad_buffer(o).data() * y.data() * (S(1) - y.data());
  });
}

// x * sigmoid(beta * x) with a learnable scalar beta
template <class S>
VarT<S> swish(VarT<S> a, VarT<S> beta) {
  TapeT<S>& t = detail::same_tape(a, beta);
  check(t.value(beta).is_scalar(), "swish: beta must be a scalar");
  TensorT<S> x = t.value(a);
  const S b = t.value(beta)[0];
  TensorT<S> s(x.shape());
  s.data() = S(1) / (S(1) + (-b * x.data()).exp());
  TensorT<S> out(x.shape());
  out.data() = x.data() * s.data();
  return t.record(std::move(out), {a, beta}, [a, beta, x, s, b](TapeT<S>& tp, VarT<S> o) {
    const auto& g = tp.grad_buffer(o).data();
    auto sp = s.data() * (S(1) - s.data());  // sigmoid'(b*x)
    if (tp.requires_grad(a))
      tp.grad_buffer(a).data() += g * (s.data() + x.data() * b * sp);
    if (tp.requires_grad(beta))
      tp.grad_buffer(beta).data()[0] += (g * x.data() * x.data() * sp).sum();
  });
}

// softmax over the last axis; rows are all leading axes flattened
template <class S>
VarT<S> softmax_lastdim(VarT<S> a) {
  TapeT<S>& t = *a.tape;
  const TensorT<S>& x = t.value(a);
  check(x.rank() >= 1, "softmax: rank must be >= 1");
  const std::int64_t cols = x.extent(x.rank() - 1);
  const std::int64_t rows = x.numel() / cols;
  TensorT<S> out(x.shape());
  auto xm = x.as_matrix(rows, cols);
  auto ym = out.as_matrix(rows, cols);
  for (std::int64_t r = 0; r < rows; ++r) {
    auto row = xm.row(r).array();
    Eigen::Array<S, 1, Eigen::Dynamic> e = (row - row.maxCoeff()).exp();
    ym.row(r) = (e / e.sum()).matrix();
  }
  TensorT<S> y = out;
  return t.record(std::move(out), {a}, [a, y, rows, cols](TapeT<S>& tp, VarT<S> o) {
    auto gm = tp.grad_buffer(o).as_matrix(rows, cols);
    auto ymv = y.as_matrix(rows, cols);
    auto gx = tp.grad_buffer(a).as_matrix(rows, cols);
    for (std::int64_t r = 0; r < rows; ++r) {
      const S dot = (gm.row(r).array() * ymv.row(r).array()).sum();
      gx.row(r).array() += ymv.row(r).array() * (gm.row(r).array() - dot);
    }
  });
}

// log(x + eps); the clamp keeps vanishing probabilities finite
template <class S>
VarT<S> vlog(VarT<S> a, S eps = S(1e-12)) {
  TapeT<S>& t = *a.tape;
  TensorT<S> x = t.value(a);
  TensorT<S> out(x.shape());
  out.data() = (x.data() + eps).log();
  return t.record(std::move(out), {a}, [a, x, eps](TapeT<S>& tp, VarT<S> o) {
    tp.grad_buffer(a).data() += tp.grad_buffer(o).data() / (x.data() + eps);
  });
}

template <class S>
VarT<S> pow_const(VarT<S> a, S p) {
  TapeT<S>& t = *a.tape;
  TensorT<S> x = t.value(a);
  TensorT<S> out(x.shape());
  out.data() = x.data().pow(p);
  return t.record(std::move(out), {a}, [a, x, p](TapeT<S>& tp, VarT<S> o) {
    if (p == S(0)) return;  // constant output; avoids 0 * x^-1 at x = 0
    tp.grad_buffer(a).data() +=
        tp.grad_buffer(o).data() * p * x.data().pow(p - S(1));
  });
}

// elementwise huber-style penalty: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise
template <class S>
VarT<S> smooth_l1(VarT<S> a) {
  TapeT<S>& t = *a.tape;
  TensorT<S> x = t.value(a);
  TensorT<S> out(x.shape());
  out.data() = (x.data().abs() < S(1))
                   .select(S(0.5) * x.data().square(), x.data().abs() - S(0.5));
  return t.record(std::move(out), {a}, [a, x](TapeT<S>& tp, VarT<S> o) {
    auto inner = (x.data().abs() < S(1)).template cast<S>();
    auto sgn = x.data().sign();
    tp.grad_buffer(a).data() +=
        tp.grad_buffer(o).data() * (inner * x.data() + (S(1) - inner) * sgn);
  });
}

// ---- reductions ----

template <class S>
VarT<S> sum(VarT<S> a) {
  TapeT<S>& t = *a.tape;
  TensorT<S> out = TensorT<S>::scalar(t.value(a).data().sum());
  return t.record(std::move(out), {a}, [a](TapeT<S>& tp, VarT<S> o) {
    tp.grad_buffer(a).data() += tp.grad_buffer(o)[0];
  });
}

template <class S>
VarT<S> mean(VarT<S> a) {
  const std::int64_t n = a.tape->value(a).numel();
  return cmul(sum(a), S(1) / static_cast<S>(n));
}

// ---- shape / indexing ----

template <class S>
VarT<S> reshape(VarT<S> a, Shape shape) {
  TapeT<S>& t = *a.tape;
  check(shape_numel(shape) == t.value(a).numel(), "reshape: element count mismatch");
  TensorT<S> out(std::move(shape), t.value(a).data());
  return t.record(std::move(out), {a}, [a](TapeT<S>& tp, VarT<S> o) {
    tp.grad_buffer(a).data() += tp.grad_buffer(o).data();
  });
}

// pick entries of the flat storage; scatter-adds on the way back
template <class S>
VarT<S> gather_flat(VarT<S> a, std::vector<std::int64_t> idx) {
  TapeT<S>& t = *a.tape;
  const TensorT<S>& x = t.value(a);
  TensorT<S> out({static_cast<int>(idx.size())});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    check(idx[i] >= 0 && idx[i] < x.numel(), "gather_flat: index out of range");
    out[static_cast<std::int64_t>(i)] = x[idx[i]];
  }
  return t.record(std::move(out), {a}, [a, idx](TapeT<S>& tp, VarT<S> o) {
    auto& gx = tp.grad_buffer(a);
    const auto& g = tp.grad_buffer(o);
    for (std::size_t i = 0; i < idx.size(); ++i)
      gx[idx[i]] += g[static_cast<std::int64_t>(i)];
  });
}

// pick rows of a {N, C} matrix; duplicate rows accumulate in backward
template <class S>
VarT<S> gather_rows(VarT<S> a, std::vector<std::int64_t> rows) {
  TapeT<S>& t = *a.tape;
  const TensorT<S>& x = t.value(a);
  check(x.rank() == 2, "gather_rows: rank-2 input expected");
  const std::int64_t n = x.extent(0), c = x.extent(1);
  TensorT<S> out({static_cast<int>(rows.size()), static_cast<int>(c)});
  auto xm = x.as_matrix(n, c);
  auto om = out.as_matrix(static_cast<std::int64_t>(rows.size()), c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    check(rows[i] >= 0 && rows[i] < n, "gather_rows: row out of range");
    om.row(static_cast<std::int64_t>(i)) = xm.row(rows[i]);
  }
  return t.record(std::move(out), {a}, [a, rows, n, c](TapeT<S>& tp, VarT<S> o) {
    auto gx = tp.grad_buffer(a).as_matrix(n, c);
    auto g = tp.grad_buffer(o).as_matrix(static_cast<std::int64_t>(rows.size()), c);
    for (std::size_t i = 0; i < rows.size(); ++i)
      gx.row(rows[i]) += g.row(static_cast<std::int64_t>(i));
  });
}

// {H, W, C_i} maps with equal H, W joined along the channel axis
template <class S>
VarT<S> concat_channels(const std::vector<VarT<S>>& parts) {
  check(!parts.empty(), "concat_channels: no inputs");
  TapeT<S>& t = *parts[0].tape;
  const TensorT<S>& first = t.value(parts[0]);
  check(first.rank() == 3, "concat_channels: rank-3 inputs expected");
  const int h = first.extent(0), w = first.extent(1);
  int ctot = 0;
  std::vector<int> coff;
  for (const auto& p : parts) {
    const TensorT<S>& x = t.value(p);
    check(x.rank() == 3 && x.extent(0) == h && x.extent(1) == w,
          "concat_channels: spatial extents must match");
    coff.push_back(ctot);
    ctot += x.extent(2);
  }
  TensorT<S> out({h, w, ctot});
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const TensorT<S>& x = t.value(parts[pi]);
    const int c = x.extent(2);
    for (int y = 0; y < h; ++y)
      for (int xw = 0; xw < w; ++xw)
        for (int cc = 0; cc < c; ++cc) out.at(y, xw, coff[pi] + cc) = x.at(y, xw, cc);
  }
  std::vector<VarT<S>> ins = parts;
  return t.record(std::move(out), ins, [ins, coff, h, w](TapeT<S>& tp, VarT<S> o) {
    const TensorT<S>& g = tp.grad_buffer(o);
    for (std::size_t pi = 0; pi < ins.size(); ++pi) {
      if (!tp.requires_grad(ins[pi])) continue;
      TensorT<S>& gx = tp.grad_buffer(ins[pi]);
      const int c = gx.extent(2);
      for (int y = 0; y < h; ++y)
        for (int xw = 0; xw < w; ++xw)
          for (int cc = 0; cc < c; ++cc) gx.at(y, xw, cc) += g.at(y, xw, coff[pi] + cc);
    }
  });
}

// {N_i, C} matrices stacked vertically
template <class S>
VarT<S> concat_rows(const std::vector<VarT<S>>& parts) {
  check(!parts.empty(), "concat_rows: no inputs");
  TapeT<S>& t = *parts[0].tape;
  const int c = t.value(parts[0]).extent(1);
  std::int64_t ntot = 0;
  std::vector<std::int64_t> roff;
  for (const auto& p : parts) {
    const TensorT<S>& x = t.value(p);
    check(x.rank() == 2 && x.extent(1) == c, "concat_rows: column counts must match");
    roff.push_back(ntot);
    ntot += x.extent(0);
  }
  TensorT<S> out({static_cast<int>(ntot), c});
  auto om = out.as_matrix(ntot, c);
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const TensorT<S>& x = t.value(parts[pi]);
    om.middleRows(roff[pi], x.extent(0)) = x.as_matrix(x.extent(0), c);
  }
  std::vector<VarT<S>> ins = parts;
  return t.record(std::move(out), ins, [ins, roff, ntot, c](TapeT<S>& tp, VarT<S> o) {
    auto g = tp.grad_buffer(o).as_matrix(ntot, c);
    for (std::size_t pi = 0; pi < ins.size(); ++pi) {
      if (!tp.requires_grad(ins[pi])) continue;
      TensorT<S>& gx = tp.grad_buffer(ins[pi]);
      gx.as_matrix(gx.extent(0), c) += g.middleRows(roff[pi], gx.extent(0));
    }
  });
}

// nearest-neighbour spatial resize of an {H, W, C} map
template <class S>
VarT<S> nearest_resize(VarT<S> a, int h2, int w2) {
  TapeT<S>& t = *a.tape;
  const TensorT<S>& x = t.value(a);
  check(x.rank() == 3, "nearest_resize: rank-3 input expected");
  check(h2 > 0 && w2 > 0, "nearest_resize: output extents must be positive");
  const int h = x.extent(0), w = x.extent(1), c = x.extent(2);
  std::vector<int> src_y(static_cast<std::size_t>(h2)), src_x(static_cast<std::size_t>(w2));
  for (int y = 0; y < h2; ++y)
    src_y[static_cast<std::size_t>(y)] = std::min(h - 1, static_cast<int>(y * static_cast<double>(h) / h2));
  for (int xw = 0; xw < w2; ++xw)
    src_x[static_cast<std::size_t>(xw)] = std::min(w - 1, static_cast<int>(xw * static_cast<double>(w) / w2));
  TensorT<S> out({h2, w2, c});
  for (int y = 0; y < h2; ++y)
    for (int xw = 0; xw < w2; ++xw)
      for (int cc = 0; cc < c; ++cc)
        out.at(y, xw, cc) = x.at(src_y[static_cast<std::size_t>(y)], src_x[static_cast<std::size_t>(xw)], cc);
  return t.record(std::move(out), {a}, [a, src_y, src_x, h2, w2, c](TapeT<S>& tp, VarT<S> o) {
    TensorT<S>& gx = tp.grad_buffer(a);
    const TensorT<S>& g = tp.grad_buffer(o);
    for (int y = 0; y < h2; ++y)
      for (int xw = 0; xw < w2; ++xw)
        for (int cc = 0; cc < c; ++cc)
          gx.at(src_y[static_cast<std::size_t>(y)], src_x[static_cast<std::size_t>(xw)], cc) += g.at(y, xw, cc);
  });
}

// ---- convolutions ----

// per-channel bias on an {H, W, C} map
template <class S>
VarT<S> add_channel_bias(VarT<S> a, VarT<S> bias) {
  TapeT<S>& t = detail::same_tape(a, bias);
  const TensorT<S>& x = t.value(a);
  const TensorT<S>& b = t.value(bias);
  check(x.rank() == 3 && b.rank() == 1 && b.extent(0) == x.extent(2),
        "add_channel_bias: bias length must equal the channel count");
  const std::int64_t hw = static_cast<std::int64_t>(x.extent(0)) * x.extent(1);
  const int c = x.extent(2);
  TensorT<S> out(x.shape());
  out.as_matrix(hw, c) = x.as_matrix(hw, c);
  out.as_matrix(hw, c).rowwise() += b.as_matrix(1, c).row(0);
  return t.record(std::move(out), {a, bias}, [a, bias, hw, c](TapeT<S>& tp, VarT<S> o) {
    auto g = tp.grad_buffer(o).as_matrix(hw, c);
    if (tp.requires_grad(a)) tp.grad_buffer(a).as_matrix(hw, c) += g;
    if (tp.requires_grad(bias))
      tp.grad_buffer(bias).as_matrix(1, c) += g.colwise().sum();
  });
}

// depthwise conv, kernel {D, D, C}, zero padding (D-1)/2, out = (H-1)/s + 1
template <class S>
VarT<S> depthwise_conv(VarT<S> a, VarT<S> kernel, int stride) {
  TapeT<S>& t = detail::same_tape(a, kernel);
  TensorT<S> x = t.value(a);
  TensorT<S> k = t.value(kernel);
  check(x.rank() == 3 && k.rank() == 3, "depthwise_conv: rank-3 input and kernel expected");
  check(k.extent(0) == k.extent(1), "depthwise_conv: square kernel expected");
  check(k.extent(2) == x.extent(2), "depthwise_conv: kernel channels must match input");
  check(stride >= 1, "depthwise_conv: stride must be >= 1");
  const int h = x.extent(0), w = x.extent(1), c = x.extent(2), d = k.extent(0);
  const int pad = (d - 1) / 2;
  const int oh = (h - 1) / stride + 1, ow = (w - 1) / stride + 1;
  TensorT<S> out({oh, ow, c});
  using CVec = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
  using CCVec = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;
  // channel-last layout makes each (y, x) pixel a contiguous c-vector
  for (int y = 0; y < oh; ++y)
    for (int xw = 0; xw < ow; ++xw) {
      CVec o(&out.at(y, xw, 0), c);
      for (int ky = 0; ky < d; ++ky) {
        const int iy = y * stride + ky - pad;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < d; ++kx) {
          const int ix = xw * stride + kx - pad;
          if (ix < 0 || ix >= w) continue;
          o += CCVec(&x.at(iy, ix, 0), c) * CCVec(&k.at(ky, kx, 0), c);
        }
      }
    }
  return t.record(std::move(out), {a, kernel},
                  [a, kernel, x, k, stride, h, w, c, d, pad, oh, ow](TapeT<S>& tp, VarT<S> o) {
    const TensorT<S>& g = tp.grad_buffer(o);
    const bool need_x = tp.requires_grad(a);
    const bool need_k = tp.requires_grad(kernel);
    TensorT<S>* gx = need_x ? &tp.grad_buffer(a) : nullptr;
    TensorT<S>* gk = need_k ? &tp.grad_buffer(kernel) : nullptr;
    for (int y = 0; y < oh; ++y)
      for (int xw = 0; xw < ow; ++xw) {
        CCVec go(&g.at(y, xw, 0), c);
        for (int ky = 0; ky < d; ++ky) {
          const int iy = y * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < d; ++kx) {
            const int ix = xw * stride + kx - pad;
            if (ix < 0 || ix >= w) continue;
            if (need_x) CVec(&gx->at(iy, ix, 0), c) += go * CCVec(&k.at(ky, kx, 0), c);
            if (need_k) CVec(&gk->at(ky, kx, 0), c) += go * CCVec(&x.at(iy, ix, 0), c);
          }
        }
      }
  });
}

// 1x1 conv as a GEMM: {H, W, Cin} x {Cin, Cout} -> {H, W, Cout}
template <class S>
VarT<S> pointwise_conv(VarT<S> a, VarT<S> weight) {
  TapeT<S>& t = detail::same_tape(a, weight);
  TensorT<S> x = t.value(a);
  TensorT<S> wgt = t.value(weight);
  check(x.rank() == 3 && wgt.rank() == 2, "pointwise_conv: map and {Cin, Cout} weight expected");
  check(wgt.extent(0) == x.extent(2), "pointwise_conv: weight rows must equal input channels");
  const std::int64_t hw = static_cast<std::int64_t>(x.extent(0)) * x.extent(1);
  const int cin = x.extent(2), cout = wgt.extent(1);
  TensorT<S> out({x.extent(0), x.extent(1), cout});
  out.as_matrix(hw, cout).noalias() = x.as_matrix(hw, cin) * wgt.as_matrix(cin, cout);
  return t.record(std::move(out), {a, weight},
                  [a, weight, x, wgt, hw, cin, cout](TapeT<S>& tp, VarT<S> o) {
    auto g = tp.grad_buffer(o).as_matrix(hw, cout);
    if (tp.requires_grad(a))
      tp.grad_buffer(a).as_matrix(hw, cin).noalias() += g * wgt.as_matrix(cin, cout).transpose();
    if (tp.requires_grad(weight))
      tp.grad_buffer(weight).as_matrix(cin, cout).noalias() +=
          x.as_matrix(hw, cin).transpose() * g;
  });
}

// transposed conv, kernel {K, K, Cin, Cout}, out = (H-1)*s + K (no padding)
template <class S>
VarT<S> transposed_conv(VarT<S> a, VarT<S> kernel, int stride) {
  TapeT<S>& t = detail::same_tape(a, kernel);
  TensorT<S> x = t.value(a);
  TensorT<S> k = t.value(kernel);
  check(x.rank() == 3 && k.rank() == 4, "transposed_conv: rank-3 input and rank-4 kernel expected");
  check(k.extent(0) == k.extent(1), "transposed_conv: square kernel expected");
  check(k.extent(2) == x.extent(2), "transposed_conv: kernel input channels must match");
  check(stride >= 1, "transposed_conv: stride must be >= 1");
  const int h = x.extent(0), w = x.extent(1), cin = x.extent(2);
  const int d = k.extent(0), cout = k.extent(3);
  const int oh = (h - 1) * stride + d, ow = (w - 1) * stride + d;
  auto kat = [d, cin, cout](const TensorT<S>& kk, int ky, int kx, int ci, int co) -> S {
    return kk[(((static_cast<std::int64_t>(ky) * d + kx) * cin) + ci) * cout + co];
  };
  TensorT<S> out({oh, ow, cout});
  using CVec = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
  using CCVec = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;
  // kernel layout {ky, kx, ci, co} keeps the co run contiguous
  auto krow = [d, cin, cout](const TensorT<S>& kk, int ky, int kx, int ci) -> const S* {
    return kk.data().data() + (((static_cast<std::int64_t>(ky) * d + kx) * cin) + ci) * cout;
  };
  for (int y = 0; y < h; ++y)
    for (int xw = 0; xw < w; ++xw)
      for (int ky = 0; ky < d; ++ky)
        for (int kx = 0; kx < d; ++kx) {
          CVec o(&out.at(y * stride + ky, xw * stride + kx, 0), cout);
          for (int ci = 0; ci < cin; ++ci) {
            const S xv = x.at(y, xw, ci);
            if (xv == S(0)) continue;
            o += xv * CCVec(krow(k, ky, kx, ci), cout);
          }
        }
  return t.record(std::move(out), {a, kernel},
                  [a, kernel, x, k, stride, h, w, cin, d, cout, krow](TapeT<S>& tp, VarT<S> o) {
    const TensorT<S>& g = tp.grad_buffer(o);
    const bool need_x = tp.requires_grad(a);
    const bool need_k = tp.requires_grad(kernel);
    TensorT<S>* gx = need_x ? &tp.grad_buffer(a) : nullptr;
    TensorT<S>* gk = need_k ? &tp.grad_buffer(kernel) : nullptr;
    for (int y = 0; y < h; ++y)
      for (int xw = 0; xw < w; ++xw)
        for (int ky = 0; ky < d; ++ky)
          for (int kx = 0; kx < d; ++kx) {
            CCVec go(&g.at(y * stride + ky, xw * stride + kx, 0), cout);
            for (int ci = 0; ci < cin; ++ci) {
              if (need_x)
                gx->at(y, xw, ci) += (go * CCVec(krow(k, ky, kx, ci), cout)).sum();
              if (need_k)
                CVec(&(*gk)[(((static_cast<std::int64_t>(ky) * d + kx) * cin) + ci) * cout],
                     cout) += go * x.at(y, xw, ci);
            }
          }
  });
}

}  // namespace seadet
