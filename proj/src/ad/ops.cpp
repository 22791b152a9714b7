#include "iftpp/ad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "linalg.hpp"

namespace iftpp::ad {
namespace {

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const std::string& want) {
  throw ShapeError(std::string(op) + ": got shape " + to_string(a) + ", expected " + want);
}

enum class Broadcast { same, a_scalar, b_scalar, a_row, b_row };

Broadcast classify(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.rank() == 0) return Broadcast::b_scalar;
  if (a.rank() == 0) return Broadcast::a_scalar;
  if (a.rank() == 2 && b.rank() == 1 && b.shape()[0] == a.shape()[1]) return Broadcast::b_row;
  if (b.rank() == 2 && a.rank() == 1 && a.shape()[0] == b.shape()[1]) return Broadcast::a_row;
  shape_fail(op, a.shape(), b.shape());
}

// Index of the operand element that contributes to output element i.
struct Indexer {
  Broadcast mode;
  std::size_t cols;
  std::size_t a(std::size_t i) const {
    switch (mode) {
      case Broadcast::a_scalar: return 0;
      case Broadcast::a_row: return i % cols;
      default: return i;
    }
  }
  std::size_t b(std::size_t i) const {
    switch (mode) {
      case Broadcast::b_scalar: return 0;
      case Broadcast::b_row: return i % cols;
      default: return i;
    }
  }
};

// Generic broadcasting binary op.  `f` computes the value, `dfa`/`dfb` the
// partial derivatives given (a, b, out).
template <class F, class DA, class DB>
Var binary(const char* op, const Var& av, const Var& bv, F f, DA dfa, DB dfb) {
  const Tensor& a = av.value();
  const Tensor& b = bv.value();
  const Broadcast mode = classify(op, a, b);
  const Shape out_shape =
      (mode == Broadcast::a_scalar || mode == Broadcast::a_row) ? b.shape() : a.shape();
  Tensor out(out_shape);
  const Indexer idx{mode, out.cols()};
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(a[idx.a(i)], b[idx.b(i)]);
  return av.tape().record(op, std::move(out), {av, bv}, [idx, n, dfa, dfb](const BackwardContext& c) {
    const Tensor& a = *c.in_values[0];
    const Tensor& b = *c.in_values[1];
    for (std::size_t i = 0; i < n; ++i) {
      const double g = c.out_grad[i];
      if (g == 0.0) continue;
      const double x = a[idx.a(i)];
      const double y = b[idx.b(i)];
      if (c.in_grads[0] != nullptr) (*c.in_grads[0])[idx.a(i)] += g * dfa(x, y, c.out_value[i]);
      if (c.in_grads[1] != nullptr) (*c.in_grads[1])[idx.b(i)] += g * dfb(x, y, c.out_value[i]);
    }
  });
}

// Elementwise unary op with derivative df(x, out).
template <class F, class DF>
Var unary(const char* op, const Var& av, F f, DF df) {
  const Tensor& a = av.value();
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return av.tape().record(op, std::move(out), {av}, [df](const BackwardContext& c) {
    const Tensor& a = *c.in_values[0];
    Tensor& ga = *c.in_grads[0];
    for (std::size_t i = 0; i < a.size(); ++i) ga[i] += c.out_grad[i] * df(a[i], c.out_value[i]);
  });
}

double stable_softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Row geometry for row-wise reductions: rank-1 inputs are a single row.
struct Rows {
  std::size_t n;
  std::size_t m;
};

Rows row_geometry(const Tensor& t) {
  if (t.rank() == 2) return {t.shape()[0], t.shape()[1]};
  if (t.rank() == 1) return {1, t.shape()[0]};
  return {1, 1};
}

Shape reduced_shape(const Tensor& t) {
  return t.rank() == 2 ? Shape{t.shape()[0]} : Shape{};
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Var add(const Var& a, double b) {
  return unary(
      "add_scalar", a, [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}

Var mul(const Var& a, double b) {
  return unary(
      "mul_scalar", a, [b](double x) { return x * b; }, [b](double, double) { return b; });
}

Var neg(const Var& a) {
  return unary(
      "neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var exp(const Var& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double out) { return out; });
}

Var log(const Var& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(const Var& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double out) { return 1.0 - out * out; });
}

Var sigmoid(const Var& a) {
  return unary(
      "sigmoid", a, stable_sigmoid, [](double, double out) { return out * (1.0 - out); });
}

Var softplus(const Var& a) {
  return unary(
      "softplus", a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Var log_sigmoid(const Var& a) {
  return unary(
      "log_sigmoid", a, [](double x) { return -stable_softplus(-x); },
      [](double x, double) { return stable_sigmoid(-x); });
}

Var square(const Var& a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var pow(const Var& a, double exponent) {
  return unary(
      "pow", a, [exponent](double x) { return std::pow(x, exponent); },
      [exponent](double x, double) { return exponent * std::pow(x, exponent - 1.0); });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var sum(const Var& av) {
  const Tensor& a = av.value();
  double s = 0.0;
  for (double v : a.values()) s += v;
  return av.tape().record("sum", Tensor::scalar(s), {av}, [](const BackwardContext& c) {
    const double g = c.out_grad[0];
    for (double& v : c.in_grads[0]->values()) v += g;
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return mul(sum(a), 1.0 / n);
}

Var sum_rows(const Var& av) {
  const Tensor& a = av.value();
  const Rows r = row_geometry(a);
  Tensor out(reduced_shape(a));
  for (std::size_t i = 0; i < r.n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < r.m; ++j) s += a[i * r.m + j];
    out[i] = s;
  }
  return av.tape().record("sum_rows", std::move(out), {av}, [r](const BackwardContext& c) {
    Tensor& ga = *c.in_grads[0];
    for (std::size_t i = 0; i < r.n; ++i)
      for (std::size_t j = 0; j < r.m; ++j) ga[i * r.m + j] += c.out_grad[i];
  });
}

Var logsumexp(const Var& av) {
  const Tensor& a = av.value();
  const Rows r = row_geometry(a);
  Tensor out(reduced_shape(a));
  for (std::size_t i = 0; i < r.n; ++i) {
    const double* row = a.data() + i * r.m;
    const double mx = *std::max_element(row, row + r.m);
    double s = 0.0;
    for (std::size_t j = 0; j < r.m; ++j) s += std::exp(row[j] - mx);
    out[i] = mx + std::log(s);
  }
  return av.tape().record("logsumexp", std::move(out), {av}, [r](const BackwardContext& c) {
    const Tensor& a = *c.in_values[0];
    Tensor& ga = *c.in_grads[0];
    for (std::size_t i = 0; i < r.n; ++i) {
      const double g = c.out_grad[i];
      const double lse = c.out_value[i];
      for (std::size_t j = 0; j < r.m; ++j) ga[i * r.m + j] += g * std::exp(a[i * r.m + j] - lse);
    }
  });
}

Var softmax(const Var& av) {
  const Tensor& a = av.value();
  const Rows r = row_geometry(a);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < r.n; ++i) {
    const double* row = a.data() + i * r.m;
    double* orow = out.data() + i * r.m;
    const double mx = *std::max_element(row, row + r.m);
    double s = 0.0;
    for (std::size_t j = 0; j < r.m; ++j) s += (orow[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < r.m; ++j) orow[j] /= s;
  }
  return av.tape().record("softmax", std::move(out), {av}, [r](const BackwardContext& c) {
    Tensor& ga = *c.in_grads[0];
    for (std::size_t i = 0; i < r.n; ++i) {
      const double* y = c.out_value.data() + i * r.m;
      const double* g = c.out_grad.data() + i * r.m;
      double dot = 0.0;
      for (std::size_t j = 0; j < r.m; ++j) dot += y[j] * g[j];
      for (std::size_t j = 0; j < r.m; ++j) ga[i * r.m + j] += y[j] * (g[j] - dot);
    }
  });
}

Var log_softmax(const Var& av) {
  const Tensor& a = av.value();
  const Rows r = row_geometry(a);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < r.n; ++i) {
    const double* row = a.data() + i * r.m;
    const double mx = *std::max_element(row, row + r.m);
    double s = 0.0;
    for (std::size_t j = 0; j < r.m; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < r.m; ++j) out[i * r.m + j] = row[j] - lse;
  }
  return av.tape().record("log_softmax", std::move(out), {av}, [r](const BackwardContext& c) {
    Tensor& ga = *c.in_grads[0];
    for (std::size_t i = 0; i < r.n; ++i) {
      const double* y = c.out_value.data() + i * r.m;
      const double* g = c.out_grad.data() + i * r.m;
      double gsum = 0.0;
      for (std::size_t j = 0; j < r.m; ++j) gsum += g[j];
      for (std::size_t j = 0; j < r.m; ++j) ga[i * r.m + j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
}

Var matmul(const Var& av, const Var& bv) {
  const Tensor& a = av.value();
  const Tensor& b = bv.value();
  if (a.rank() != 2 || b.rank() == 0 || a.shape()[1] != b.shape()[0]) {
    shape_fail("matmul", a.shape(), b.shape());
  }
  const std::size_t n = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t m = b.rank() == 2 ? b.shape()[1] : 1;
  Tensor out(b.rank() == 2 ? Shape{n, m} : Shape{n});
  detail::gemm_nn(a.data(), b.data(), out.data(), n, k, m);
  return av.tape().record("matmul", std::move(out), {av, bv}, [n, k, m](const BackwardContext& c) {
    if (c.in_grads[0] != nullptr)
      detail::gemm_nt(c.out_grad.data(), c.in_values[1]->data(), c.in_grads[0]->data(), n, m, k);
    if (c.in_grads[1] != nullptr)
      detail::gemm_tn(c.in_values[0]->data(), c.out_grad.data(), c.in_grads[1]->data(), k, n, m);
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
  const Tensor& first = parts.front().value();
  if (axis == 1) {
    if (first.rank() != 2) shape_fail("concat", first.shape(), "rank-2 inputs for axis 1");
    const std::size_t n = first.shape()[0];
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Var& p : parts) {
      const Tensor& t = p.value();
      if (t.rank() != 2 || t.shape()[0] != n) shape_fail("concat", first.shape(), t.shape());
      widths.push_back(t.shape()[1]);
      total += t.shape()[1];
    }
    Tensor out(Shape{n, total});
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const Tensor& t = parts[p].value();
      for (std::size_t i = 0; i < n; ++i)
        std::copy_n(t.data() + i * widths[p], widths[p], out.data() + i * total + offset);
      offset += widths[p];
    }
    return parts.front().tape().record(
        "concat", std::move(out), parts, [n, widths, total](const BackwardContext& c) {
          std::size_t off = 0;
          for (std::size_t p = 0; p < widths.size(); ++p) {
            if (c.in_grads[p] != nullptr) {
              double* g = c.in_grads[p]->data();
              for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < widths[p]; ++j)
                  g[i * widths[p] + j] += c.out_grad[i * total + off + j];
            }
            off += widths[p];
          }
        });
  }
  // axis 0
  std::vector<std::size_t> sizes;
  std::size_t rows = 0;
  for (const Var& p : parts) {
    const Tensor& t = p.value();
    if (t.rank() != first.rank() || t.rank() == 0 ||
        (t.rank() == 2 && t.shape()[1] != first.shape()[1])) {
      shape_fail("concat", first.shape(), t.shape());
    }
    sizes.push_back(t.size());
    rows += t.shape()[0];
  }
  Tensor out(first.rank() == 2 ? Shape{rows, first.shape()[1]} : Shape{rows});
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    std::copy_n(parts[p].value().data(), sizes[p], out.data() + offset);
    offset += sizes[p];
  }
  return parts.front().tape().record("concat", std::move(out), parts,
                                     [sizes](const BackwardContext& c) {
                                       std::size_t off = 0;
                                       for (std::size_t p = 0; p < sizes.size(); ++p) {
                                         if (c.in_grads[p] != nullptr) {
                                           double* g = c.in_grads[p]->data();
                                           for (std::size_t i = 0; i < sizes[p]; ++i)
                                             g[i] += c.out_grad[off + i];
                                         }
                                         off += sizes[p];
                                       }
                                     });
}

Var gather_rows(const Var& tv, std::span<const std::size_t> indices) {
  const Tensor& t = tv.value();
  if (t.rank() != 2) shape_fail("gather_rows", t.shape(), "a rank-2 table");
  const std::size_t v = t.shape()[0];
  const std::size_t e = t.shape()[1];
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Tensor out(Shape{idx.size(), e});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= v) {
      throw ShapeError("gather_rows: index " + std::to_string(idx[i]) + " out of range for table " +
                       to_string(t.shape()));
    }
    std::copy_n(t.data() + idx[i] * e, e, out.data() + i * e);
  }
  return tv.tape().record("gather_rows", std::move(out), {tv}, [idx, e](const BackwardContext& c) {
    double* g = c.in_grads[0]->data();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < e; ++j) g[idx[i] * e + j] += c.out_grad[i * e + j];
  });
}

Var gather_cols(const Var& av, std::span<const std::size_t> indices) {
  const Tensor& a = av.value();
  if (a.rank() != 2 || a.shape()[0] != indices.size()) {
    shape_fail("gather_cols", a.shape(), "[" + std::to_string(indices.size()) + "xm]");
  }
  const std::size_t m = a.shape()[1];
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Tensor out(Shape{idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= m) {
      throw ShapeError("gather_cols: index " + std::to_string(idx[i]) + " out of range for " +
                       to_string(a.shape()));
    }
    out[i] = a[i * m + idx[i]];
  }
  return av.tape().record("gather_cols", std::move(out), {av}, [idx, m](const BackwardContext& c) {
    for (std::size_t i = 0; i < idx.size(); ++i) (*c.in_grads[0])[i * m + idx[i]] += c.out_grad[i];
  });
}

Var slice_cols(const Var& av, std::size_t begin, std::size_t end) {
  const Tensor& a = av.value();
  if (a.rank() != 2 || begin >= end || end > a.shape()[1]) {
    shape_fail("slice_cols", a.shape(),
               "columns [" + std::to_string(begin) + "," + std::to_string(end) + ") in range");
  }
  const std::size_t n = a.shape()[0];
  const std::size_t m = a.shape()[1];
  const std::size_t w = end - begin;
  Tensor out(Shape{n, w});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(a.data() + i * m + begin, w, out.data() + i * w);
  return av.tape().record("slice_cols", std::move(out), {av}, [n, m, w, begin](const BackwardContext& c) {
    double* g = c.in_grads[0]->data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * m + begin + j] += c.out_grad[i * w + j];
  });
}

Var column(const Var& av, std::size_t j) {
  const Tensor& a = av.value();
  if (a.rank() != 2 || j >= a.shape()[1]) {
    shape_fail("column", a.shape(), "a matrix with more than " + std::to_string(j) + " columns");
  }
  const std::size_t n = a.shape()[0];
  const std::size_t m = a.shape()[1];
  Tensor out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i * m + j];
  return av.tape().record("column", std::move(out), {av}, [n, m, j](const BackwardContext& c) {
    for (std::size_t i = 0; i < n; ++i) (*c.in_grads[0])[i * m + j] += c.out_grad[i];
  });
}

Var repeat_cols(const Var& vv, std::size_t m) {
  const Tensor& v = vv.value();
  if (v.rank() != 1) shape_fail("repeat_cols", v.shape(), "a rank-1 vector");
  const std::size_t n = v.shape()[0];
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i) std::fill_n(out.data() + i * m, m, v[i]);
  return vv.tape().record("repeat_cols", std::move(out), {vv}, [n, m](const BackwardContext& c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += c.out_grad[i * m + j];
      (*c.in_grads[0])[i] += s;
    }
  });
}

Var reshape(const Var& av, Shape shape) {
  const Tensor& a = av.value();
  if (element_count(shape) != a.size()) shape_fail("reshape", a.shape(), to_string(shape));
  Tensor out(std::move(shape), std::vector<double>(a.values().begin(), a.values().end()));
  return av.tape().record("reshape", std::move(out), {av}, [](const BackwardContext& c) {
    double* g = c.in_grads[0]->data();
    for (std::size_t i = 0; i < c.out_grad.size(); ++i) g[i] += c.out_grad[i];
  });
}

Var transpose(const Var& av) {
  const Tensor& a = av.value();
  if (a.rank() != 2) shape_fail("transpose", a.shape(), "a matrix");
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(j, i) = a.at(i, j);
  return av.tape().record("transpose", std::move(out), {av}, [n, m](const BackwardContext& c) {
    double* g = c.in_grads[0]->data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) g[i * m + j] += c.out_grad[j * n + i];
  });
}

Var straight_through(const Tensor& hard, const Var& soft) {
  if (hard.shape() != soft.shape()) shape_fail("straight_through", hard.shape(), soft.shape());
  return soft.tape().record("straight_through", hard, {soft}, [](const BackwardContext& c) {
    double* g = c.in_grads[0]->data();
    for (std::size_t i = 0; i < c.out_grad.size(); ++i) g[i] += c.out_grad[i];
  });
}

Var stop_gradient(const Var& a) { return a.tape().constant(a.value()); }

Var gru_cell(const Var& xv, const Var& hv, const Var& wiv, const Var& whv, const Var& biv,
             const Var& bhv) {
  const Tensor& x = xv.value();
  const Tensor& h = hv.value();
  const Tensor& wi = wiv.value();
  const Tensor& wh = whv.value();
  const Tensor& bi = biv.value();
  const Tensor& bh = bhv.value();
  if (x.rank() != 2 || h.rank() != 2 || x.shape()[0] != h.shape()[0]) {
    shape_fail("gru_cell", x.shape(), h.shape());
  }
  const std::size_t batch = x.shape()[0];
  const std::size_t in = x.shape()[1];
  const std::size_t hid = h.shape()[1];
  const std::size_t g3 = 3 * hid;
  if (wi.shape() != Shape{in, g3}) shape_fail("gru_cell", wi.shape(), to_string(Shape{in, g3}));
  if (wh.shape() != Shape{hid, g3}) shape_fail("gru_cell", wh.shape(), to_string(Shape{hid, g3}));
  if (bi.shape() != Shape{g3}) shape_fail("gru_cell", bi.shape(), to_string(Shape{g3}));
  if (bh.shape() != Shape{g3}) shape_fail("gru_cell", bh.shape(), to_string(Shape{g3}));

  // gx = x Wi + bi, gh = h Wh + bh
  std::vector<double> gx(batch * g3), gh(batch * g3);
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(bi.data(), g3, gx.data() + b * g3);
    std::copy_n(bh.data(), g3, gh.data() + b * g3);
  }
  if (in > 0) detail::gemm_nn(x.data(), wi.data(), gx.data(), batch, in, g3);
  detail::gemm_nn(h.data(), wh.data(), gh.data(), batch, hid, g3);

  // Cached activations: r, z, n per unit.
  std::vector<double> cache(batch * g3);
  Tensor out(Shape{batch, hid});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < hid; ++j) {
      const std::size_t o = b * g3;
      const double r = stable_sigmoid(gx[o + j] + gh[o + j]);
      const double z = stable_sigmoid(gx[o + hid + j] + gh[o + hid + j]);
      const double n = std::tanh(gx[o + 2 * hid + j] + r * gh[o + 2 * hid + j]);
      cache[o + j] = r;
      cache[o + hid + j] = z;
      cache[o + 2 * hid + j] = n;
      out[b * hid + j] = (1.0 - z) * n + z * h[b * hid + j];
    }
  }

  return xv.tape().record(
      "gru_cell", std::move(out), {xv, hv, wiv, whv, biv, bhv},
      [batch, in, hid, g3, cache = std::move(cache), ghn = std::move(gh)](const BackwardContext& c) {
        const Tensor& x = *c.in_values[0];
        const Tensor& h = *c.in_values[1];
        const Tensor& wi = *c.in_values[2];
        const Tensor& wh = *c.in_values[3];
        std::vector<double> dgx(batch * g3), dgh(batch * g3);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t o = b * g3;
          for (std::size_t j = 0; j < hid; ++j) {
            const double r = cache[o + j];
            const double z = cache[o + hid + j];
            const double n = cache[o + 2 * hid + j];
            const double dout = c.out_grad[b * hid + j];
            const double dn = dout * (1.0 - z);
            const double dz = dout * (h[b * hid + j] - n);
            const double dan = dn * (1.0 - n * n);
            const double dr = dan * ghn[o + 2 * hid + j];
            const double daz = dz * z * (1.0 - z);
            const double dar = dr * r * (1.0 - r);
            dgx[o + j] = dar;
            dgh[o + j] = dar;
            dgx[o + hid + j] = daz;
            dgh[o + hid + j] = daz;
            dgx[o + 2 * hid + j] = dan;
            dgh[o + 2 * hid + j] = dan * r;
          }
        }
        if (c.in_grads[0] != nullptr && in > 0)
          detail::gemm_nt(dgx.data(), wi.data(), c.in_grads[0]->data(), batch, g3, in);
        if (c.in_grads[1] != nullptr) {
          double* dh = c.in_grads[1]->data();
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t j = 0; j < hid; ++j)
              dh[b * hid + j] += c.out_grad[b * hid + j] * cache[b * g3 + hid + j];
          detail::gemm_nt(dgh.data(), wh.data(), dh, batch, g3, hid);
        }
        if (c.in_grads[2] != nullptr && in > 0)
          detail::gemm_tn(x.data(), dgx.data(), c.in_grads[2]->data(), in, batch, g3);
        if (c.in_grads[3] != nullptr)
          detail::gemm_tn(h.data(), dgh.data(), c.in_grads[3]->data(), hid, batch, g3);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t j = 0; j < g3; ++j) {
            if (c.in_grads[4] != nullptr) (*c.in_grads[4])[j] += dgx[b * g3 + j];
            if (c.in_grads[5] != nullptr) (*c.in_grads[5])[j] += dgh[b * g3 + j];
          }
        }
      });
}

}  // namespace iftpp::ad
