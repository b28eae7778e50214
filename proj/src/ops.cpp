#include "peft/ops.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "peft/errors.hpp"
#include "peft/graph.hpp"
#include "peft/kernels.hpp"

namespace peft {

namespace {

void accumulate(Tensor& t, std::span<const Scalar> g) {
  if (!t.requires_grad()) return;
  auto dst = t.grad();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

template <class F>
void record(Tensor& out, std::initializer_list<const Tensor*> inputs, F&& backward) {
  if (!needs_grad(inputs)) return;
  out.set_requires_grad(true);
  out.set_producer(Graph::active()->push(std::forward<F>(backward)));
}

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

std::size_t resolve_axis(const Tensor& t, int axis) {
  const int r = static_cast<int>(t.rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(t.shape()));
  return static_cast<std::size_t>(a);
}

// (outer, extent, inner) decomposition around an axis.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  Tensor out = Tensor::zeros(a.shape());
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  record(out, {&a}, [a = Tensor(a), out, deriv]() mutable {
    if (!out.has_grad()) return;
    auto dy = out.grad();
    auto x = a.data();
    auto y = out.data();
    auto dx = a.grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * deriv(x[i], y[i]);
  });
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({m, n});
  kernels::gemm({m, n, k, false, false}, a.data(), b.data(), out.data());
  record(out, {&a, &b}, [a = Tensor(a), b = Tensor(b), out, m, k, n]() mutable {
    if (!out.has_grad()) return;
    auto dy = out.grad();
    if (a.requires_grad()) {
      std::vector<Scalar> da(m * k);
      kernels::gemm({m, k, n, false, true}, dy, b.data(), da);
      accumulate(a, da);
    }
    if (b.requires_grad()) {
      std::vector<Scalar> db(k * n);
      kernels::gemm({k, n, m, true, false}, a.data(), dy, db);
      accumulate(b, db);
    }
  });
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out = Tensor::zeros({m, n});
  kernels::gemm({m, n, k, false, true}, a.data(), b.data(), out.data());
  record(out, {&a, &b}, [a = Tensor(a), b = Tensor(b), out, m, k, n]() mutable {
    if (!out.has_grad()) return;
    auto dy = out.grad();
    if (a.requires_grad()) {
      std::vector<Scalar> da(m * k);
      kernels::gemm({m, k, n, false, false}, dy, b.data(), da);
      accumulate(a, da);
    }
    if (b.requires_grad()) {
      std::vector<Scalar> db(n * k);
      kernels::gemm({n, k, m, true, false}, dy, a.data(), db);
      accumulate(b, db);
    }
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out = Tensor::zeros({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
  record(out, {&a}, [a = Tensor(a), out, r, c]() mutable {
    if (!out.has_grad()) return;
    auto dy = out.grad();
    auto dx = a.grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += dy[j * r + i];
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.at(i) + b.at(i);
  record(out, {&a, &b}, [a = Tensor(a), b = Tensor(b), out]() mutable {
    if (!out.has_grad()) return;
    accumulate(a, out.grad());
    accumulate(b, out.grad());
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.at(i) * b.at(i);
  record(out, {&a, &b}, [a = Tensor(a), b = Tensor(b), out]() mutable {
    if (!out.has_grad()) return;
    auto dy = out.grad();
    if (a.requires_grad()) {
      auto da = a.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * b.at(i);
    }
    if (b.requires_grad()) {
      auto db = b.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * a.at(i);
    }
  });
  return out;
}

Tensor scale(const Tensor& a, Scalar factor) {
  return unary(
      a, [factor](Scalar x) { return x * factor; }, [factor](Scalar, Scalar) { return factor; });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("scale_by: factor must have one element, got " + shape_str(s.shape()));
  const Scalar f = s.at(0);
  Tensor out = Tensor::zeros(a.shape());
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.at(i) * f;
  record(out, {&a, &s}, [a = Tensor(a), s = Tensor(s), out]() mutable {
    if (!out.has_grad()) return;
    auto dy = out.grad();
    if (a.requires_grad()) {
      auto da = a.grad();
      const Scalar f = s.at(0);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * f;
    }
    if (s.requires_grad()) {
      Scalar acc = 0;
      for (std::size_t i = 0; i < dy.size(); ++i) acc += dy[i] * a.at(i);
      s.grad()[0] += acc;
    }
  });
  return out;
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](Scalar x) { return std::tanh(x); }, [](Scalar, Scalar y) { return 1 - y * y; });
}

Tensor silu(const Tensor& a) {
  return unary(
      a, [](Scalar x) { return x / (1 + std::exp(-x)); },
      [](Scalar x, Scalar) {
        const Scalar sig = 1 / (1 + std::exp(-x));
        return sig * (1 + x * (1 - sig));
      });
}

Tensor sum(const Tensor& a) {
  Scalar acc = 0;
  for (Scalar v : a.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  record(out, {&a}, [a = Tensor(a), out]() mutable {
    if (!out.has_grad()) return;
    const Scalar g = out.grad()[0];
    auto da = a.grad();
    for (auto& v : da) v += g;
  });
  return out;
}

Tensor rmsnorm(const Tensor& x, const Tensor& weight, Scalar eps) {
  require_2d(x, "rmsnorm");
  const std::size_t n = x.rows(), d = x.cols();
  if (weight.numel() != d)
    throw DimensionError("rmsnorm: weight " + shape_str(weight.shape()) + " does not match rows of width " +
                         std::to_string(d));
  Tensor out = Tensor::zeros({n, d});
  std::vector<Scalar> inv(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Scalar* row = x.ptr() + i * d;
    Scalar ms = 0;
    for (std::size_t j = 0; j < d; ++j) ms += row[j] * row[j];
    inv[i] = 1 / std::sqrt(ms / static_cast<Scalar>(d) + eps);
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = row[j] * inv[i] * weight.at(j);
  }
  record(out, {&x, &weight}, [x = Tensor(x), weight = Tensor(weight), out, inv, n, d]() mutable {
    if (!out.has_grad()) return;
    auto dy = out.grad();
    if (weight.requires_grad()) {
      auto dw = weight.grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) dw[j] += dy[i * d + j] * x.at(i, j) * inv[i];
    }
    if (x.requires_grad()) {
      auto dx = x.grad();
      for (std::size_t i = 0; i < n; ++i) {
        Scalar dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += dy[i * d + j] * weight.at(j) * x.at(i, j);
        const Scalar r = inv[i];
        const Scalar coef = r * r * r * dot / static_cast<Scalar>(d);
        for (std::size_t j = 0; j < d; ++j) dx[i * d + j] += r * dy[i * d + j] * weight.at(j) - coef * x.at(i, j);
      }
    }
  });
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = resolve_axis(x, axis);
  const AxisView v = axis_view(x.shape(), ax);
  if (v.extent == 0) throw DimensionError("softmax over an empty axis");
  for (Scalar s : x.data()) {
    if (std::isnan(s)) throw NumericError("softmax: NaN input");
  }
  Tensor out = Tensor::zeros(x.shape());
  if (v.inner == 1) {
    kernels::softmax_rows(v.outer, v.extent, x.data(), out.data());
  } else {
    std::vector<Scalar> lane(v.extent), res(v.extent);
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t in = 0; in < v.inner; ++in) {
        for (std::size_t e = 0; e < v.extent; ++e) lane[e] = x.at((o * v.extent + e) * v.inner + in);
        kernels::serial::softmax_rows(1, v.extent, lane, res);
        for (std::size_t e = 0; e < v.extent; ++e) out.at((o * v.extent + e) * v.inner + in) = res[e];
      }
  }
  record(out, {&x}, [x = Tensor(x), out, v]() mutable {
    if (!out.has_grad()) return;
    auto dy = out.grad();
    auto y = out.data();
    auto dx = x.grad();
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t in = 0; in < v.inner; ++in) {
        Scalar dot = 0;
        for (std::size_t e = 0; e < v.extent; ++e) {
          const std::size_t idx = (o * v.extent + e) * v.inner + in;
          dot += dy[idx] * y[idx];
        }
        for (std::size_t e = 0; e < v.extent; ++e) {
          const std::size_t idx = (o * v.extent + e) * v.inner + in;
          dx[idx] += y[idx] * (dy[idx] - dot);
        }
      }
  });
  return out;
}

Tensor causal_mask(const Tensor& scores, std::size_t offset) {
  require_2d(scores, "causal_mask");
  const std::size_t r = scores.rows(), c = scores.cols();
  Tensor out = scores.clone();
  out.set_requires_grad(false);
  const Scalar ninf = -std::numeric_limits<Scalar>::infinity();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = i + offset + 1; j < c; ++j) out.at(i, j) = ninf;
  record(out, {&scores}, [scores = Tensor(scores), out, r, c, offset]() mutable {
    if (!out.has_grad()) return;
    auto dy = out.grad();
    auto dx = scores.grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c && j <= i + offset; ++j) dx[i * c + j] += dy[i * c + j];
  });
  return out;
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Tensor& first = parts.front();
  const std::size_t ax = resolve_axis(first, axis);
  Shape shape = first.shape();
  shape[ax] = 0;
  for (const Tensor& p : parts) {
    bool ok = p.rank() == first.rank();
    for (std::size_t i = 0; ok && i < p.rank(); ++i) ok = i == ax || p.dim(i) == first.dim(i);
    if (!ok)
      throw DimensionError("concat: extents of " + shape_str(p.shape()) + " and " + shape_str(first.shape()) +
                           " disagree off axis " + std::to_string(ax));
    shape[ax] += p.dim(ax);
  }
  Tensor out = Tensor::zeros(shape);
  const AxisView ov = axis_view(shape, ax);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(offset);
    const AxisView pv = axis_view(p.shape(), ax);
    const std::size_t chunk = pv.extent * pv.inner;
    for (std::size_t o = 0; o < pv.outer; ++o)
      std::copy_n(p.ptr() + o * chunk, chunk, out.ptr() + o * ov.extent * ov.inner + offset * ov.inner);
    offset += pv.extent;
  }
  if (Graph::active() != nullptr) {
    bool any = false;
    for (const Tensor& p : parts) any = any || p.requires_grad();
    if (any) {
      std::vector<Tensor> inputs(parts.begin(), parts.end());
      out.set_requires_grad(true);
      out.set_producer(Graph::active()->push([inputs, offsets, out, ov, ax]() mutable {
        if (!out.has_grad()) return;
        auto dy = out.grad();
        for (std::size_t t = 0; t < inputs.size(); ++t) {
          Tensor& p = inputs[t];
          if (!p.requires_grad()) continue;
          const AxisView pv = axis_view(p.shape(), ax);
          const std::size_t chunk = pv.extent * pv.inner;
          auto dx = p.grad();
          for (std::size_t o = 0; o < pv.outer; ++o) {
            const Scalar* src = dy.data() + o * ov.extent * ov.inner + offsets[t] * ov.inner;
            for (std::size_t i = 0; i < chunk; ++i) dx[o * chunk + i] += src[i];
          }
        }
      }));
    }
  }
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  const Tensor parts[] = {a, b};
  return concat(parts, axis);
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = resolve_axis(x, axis);
  if (begin > end || end > x.dim(ax))
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                         shape_str(x.shape()) + " on axis " + std::to_string(ax));
  Shape shape = x.shape();
  shape[ax] = end - begin;
  Tensor out = Tensor::zeros(shape);
  const AxisView xv = axis_view(x.shape(), ax);
  const std::size_t chunk = (end - begin) * xv.inner;
  for (std::size_t o = 0; o < xv.outer; ++o)
    std::copy_n(x.ptr() + (o * xv.extent + begin) * xv.inner, chunk, out.ptr() + o * chunk);
  record(out, {&x}, [x = Tensor(x), out, xv, begin, chunk]() mutable {
    if (!out.has_grad()) return;
    auto dy = out.grad();
    auto dx = x.grad();
    for (std::size_t o = 0; o < xv.outer; ++o) {
      Scalar* dst = dx.data() + (o * xv.extent + begin) * xv.inner;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += dy[o * chunk + i];
    }
  });
  return out;
}

Tensor gather_rows(const Tensor& table, std::span<const TokenId> ids) {
  require_2d(table, "gather_rows");
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<TokenId> index(ids.begin(), ids.end());
  for (TokenId id : index) {
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw DimensionError("gather_rows: row " + std::to_string(id) + " out of range for " + shape_str(table.shape()));
  }
  Tensor out = Tensor::zeros({index.size(), d});
  for (std::size_t i = 0; i < index.size(); ++i)
    std::copy_n(table.ptr() + static_cast<std::size_t>(index[i]) * d, d, out.ptr() + i * d);
  record(out, {&table}, [table = Tensor(table), out, index, d]() mutable {
    if (!out.has_grad()) return;
    auto dy = out.grad();
    auto dt = table.grad();
    for (std::size_t i = 0; i < index.size(); ++i) {
      Scalar* dst = dt.data() + static_cast<std::size_t>(index[i]) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += dy[i * d + j];
    }
  });
  return out;
}

Tensor rope(const Tensor& x, std::span<const std::size_t> positions, std::size_t head_dim, Scalar theta) {
  require_2d(x, "rope");
  const std::size_t n = x.rows(), w = x.cols();
  if (positions.size() != n) throw DimensionError("rope: one position per row required");
  if (head_dim % 2 != 0 || w % head_dim != 0)
    throw DimensionError("rope: width " + std::to_string(w) + " is not a multiple of even head_dim " +
                         std::to_string(head_dim));
  const std::size_t half = head_dim / 2;
  std::vector<Scalar> cosv(n * half), sinv(n * half);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < half; ++p) {
      const Scalar freq = std::pow(theta, -static_cast<Scalar>(2 * p) / static_cast<Scalar>(head_dim));
      const Scalar angle = static_cast<Scalar>(positions[i]) * freq;
      cosv[i * half + p] = std::cos(angle);
      sinv[i * half + p] = std::sin(angle);
    }
  Tensor out = Tensor::zeros({n, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t h = 0; h < w; h += head_dim)
      for (std::size_t p = 0; p < half; ++p) {
        const Scalar c = cosv[i * half + p], s = sinv[i * half + p];
        const Scalar x0 = x.at(i, h + 2 * p), x1 = x.at(i, h + 2 * p + 1);
        out.at(i, h + 2 * p) = x0 * c - x1 * s;
        out.at(i, h + 2 * p + 1) = x0 * s + x1 * c;
      }
  record(out, {&x}, [x = Tensor(x), out, cosv, sinv, n, w, head_dim, half]() mutable {
    if (!out.has_grad()) return;
    auto dy = out.grad();
    auto dx = x.grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t h = 0; h < w; h += head_dim)
        for (std::size_t p = 0; p < half; ++p) {
          const Scalar c = cosv[i * half + p], s = sinv[i * half + p];
          const std::size_t i0 = i * w + h + 2 * p;
          const Scalar g0 = dy[i0], g1 = dy[i0 + 1];
          dx[i0] += g0 * c + g1 * s;
          dx[i0 + 1] += -g0 * s + g1 * c;
        }
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets, std::span<const std::uint8_t> mask) {
  require_2d(logits, "cross_entropy");
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n || mask.size() != n)
    throw DimensionError("cross_entropy: need one target and mask entry per row of " + shape_str(logits.shape()));
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    ++count;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v)
      throw DimensionError("cross_entropy: target " + std::to_string(targets[i]) + " out of range");
  }
  if (count == 0) throw DataError("cross_entropy: mask selects no supervised positions");
  std::vector<Scalar> probs(n * v);
  kernels::softmax_rows(n, v, logits.data(), probs);
  Scalar loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    // log-sum-exp form keeps the loss finite when the target probability underflows.
    const Scalar* row = logits.ptr() + i * v;
    Scalar hi = row[0];
    for (std::size_t j = 1; j < v; ++j) hi = std::max(hi, row[j]);
    Scalar z = 0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - hi);
    loss += hi + std::log(z) - row[targets[i]];
  }
  const Scalar denom = static_cast<Scalar>(count);
  Tensor out = Tensor::scalar(loss / denom);
  std::vector<TokenId> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  record(out, {&logits}, [logits = Tensor(logits), out, probs = std::move(probs), tgt, msk, n, v, denom]() mutable {
    if (!out.has_grad()) return;
    const Scalar g = out.grad()[0] / denom;
    auto dx = logits.grad();
    for (std::size_t i = 0; i < n; ++i) {
      if (!msk[i]) continue;
      for (std::size_t j = 0; j < v; ++j) dx[i * v + j] += g * probs[i * v + j];
      dx[i * v + static_cast<std::size_t>(tgt[i])] -= g;
    }
  });
  return out;
}

}  // namespace peft
