#include "promptkd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "promptkd/errors.hpp"
#include "promptkd/kernels.hpp"

namespace promptkd {

namespace {

using detail::Node;

// Gradient buffer of parent i, or nullptr when it does not take gradient.
std::vector<double>* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

const std::vector<double>& parent_values(const Node& self, std::size_t i) {
  return self.parents[i]->values;
}

void require_2d(const Tensor& t, const char* op) {
  if (t.dim() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-d tensor, got " +
                         shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  auto in = a.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return Tensor::make_result(a.shape(), std::move(out), {a}, [deriv](Node& self) {
    auto* ga = parent_grad(self, 0);
    if (!ga) return;
    const auto& x = parent_values(self, 0);
    for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += self.grad[i] * deriv(x[i], self.values[i]);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::gemm_nn(a.values(), b.values(), out, m, k, n, false);
  return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    if (auto* ga = parent_grad(self, 0)) {
      kernels::gemm_nt(self.grad, parent_values(self, 1), *ga, m, n, k, true);
    }
    if (auto* gb = parent_grad(self, 1)) {
      kernels::gemm_tn(parent_values(self, 0), self.grad, *gb, k, m, n, true);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  auto in = a.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return Tensor::make_result({c, r}, std::move(out), {a}, [r, c](Node& self) {
    auto* ga = parent_grad(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*ga)[i * c + j] += self.grad[j * r + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto x = a.values(), y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = parent_grad(self, p))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto x = a.values(), y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto x = a.values(), y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = parent_values(self, 0);
    const auto& y = parent_values(self, 1);
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * y[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * x[i];
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.values()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive input " + std::to_string(v));
  }
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor gelu(const Tensor& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](double x, double) {
        const double th = std::tanh(c * (x + k * x * x * x));
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * c * (1.0 + 3.0 * k * x * x);
      });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_2d(x, "add_bias");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (bias.numel() != c) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not fit " +
                         shape_string(x.shape()));
  }
  auto in = x.values(), b = bias.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = in[i * c + j] + b[j];
  return Tensor::make_result(x.shape(), std::move(out), {x, bias}, [r, c](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*g)[j] += self.grad[i * c + j];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return Tensor::make_result({1}, {s}, {a}, [](Node& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    for (auto& v : *g) v += self.grad[0];
  });
}

Tensor row_sum(const Tensor& a) {
  require_2d(a, "row_sum");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  auto in = a.values();
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += in[i * c + j];
  return Tensor::make_result({r}, std::move(out), {a}, [r, c](Node& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += self.grad[i];
  });
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t v = x.shape().back();
  const std::size_t r = x.numel() / v;
  auto in = x.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = &in[i * v];
    double mx = -INFINITY;
    for (std::size_t j = 0; j < v; ++j) {
      if (!std::isfinite(row[j])) throw NumericError("log_softmax: non-finite input");
      mx = std::max(mx, row[j]);
    }
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < v; ++j) out[i * v + j] = row[j] - lse;
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [r, v](Node& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < r; ++i) {
      const double* gy = &self.grad[i * v];
      const double* y = &self.values[i * v];
      double gs = 0.0;
      for (std::size_t j = 0; j < v; ++j) gs += gy[j];
      for (std::size_t j = 0; j < v; ++j) (*g)[i * v + j] += gy[j] - std::exp(y[j]) * gs;
    }
  });
}

Tensor causal_attention(const Tensor& qkv, std::size_t n_heads) {
  require_2d(qkv, "causal_attention");
  const std::size_t len = qkv.shape()[0];
  const std::size_t w = qkv.shape()[1];
  if (n_heads == 0 || w % 3 != 0 || (w / 3) % n_heads != 0) {
    throw DimensionError("causal_attention: width " + std::to_string(w) +
                         " is not 3 * d with d divisible by " + std::to_string(n_heads));
  }
  const std::size_t d = w / 3, hd = d / n_heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(hd));
  auto in = qkv.values();

  // probs[h][t][j], j <= t
  auto probs = std::make_shared<std::vector<double>>(n_heads * len * len, 0.0);
  std::vector<double> out(len * d, 0.0);
  for (std::size_t h = 0; h < n_heads; ++h) {
    for (std::size_t t = 0; t < len; ++t) {
      const double* q = &in[t * w + h * hd];
      double* a = &(*probs)[(h * len + t) * len];
      double mx = -INFINITY;
      for (std::size_t j = 0; j <= t; ++j) {
        const double* k = &in[j * w + d + h * hd];
        double s = 0.0;
        for (std::size_t e = 0; e < hd; ++e) s += q[e] * k[e];
        a[j] = s * inv;
        mx = std::max(mx, a[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= t; ++j) {
        a[j] = std::exp(a[j] - mx);
        z += a[j];
      }
      double* o = &out[t * d + h * hd];
      for (std::size_t j = 0; j <= t; ++j) {
        a[j] /= z;
        const double* vv = &in[j * w + 2 * d + h * hd];
        for (std::size_t e = 0; e < hd; ++e) o[e] += a[j] * vv[e];
      }
    }
  }

  return Tensor::make_result(
      {len, d}, std::move(out), {qkv}, [probs, len, d, w, hd, n_heads, inv](Node& self) {
        auto* g = parent_grad(self, 0);
        if (!g) return;
        const auto& x = parent_values(self, 0);
        std::vector<double> da(len);
        for (std::size_t h = 0; h < n_heads; ++h) {
          for (std::size_t t = 0; t < len; ++t) {
            const double* go = &self.grad[t * d + h * hd];
            const double* a = &(*probs)[(h * len + t) * len];
            double dot = 0.0;
            for (std::size_t j = 0; j <= t; ++j) {
              const double* vv = &x[j * w + 2 * d + h * hd];
              double* gv = &(*g)[j * w + 2 * d + h * hd];
              double s = 0.0;
              for (std::size_t e = 0; e < hd; ++e) {
                s += go[e] * vv[e];
                gv[e] += a[j] * go[e];
              }
              da[j] = s;
              dot += a[j] * s;
            }
            const double* q = &x[t * w + h * hd];
            double* gq = &(*g)[t * w + h * hd];
            for (std::size_t j = 0; j <= t; ++j) {
              const double ds = a[j] * (da[j] - dot) * inv;
              if (ds == 0.0) continue;
              const double* k = &x[j * w + d + h * hd];
              double* gk = &(*g)[j * w + d + h * hd];
              for (std::size_t e = 0; e < hd; ++e) {
                gq[e] += ds * k[e];
                gk[e] += ds * q[e];
              }
            }
          }
        }
      });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  require_2d(table, "embedding_lookup");
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  if (ids.empty()) throw ContractError("embedding_lookup: empty id list");
  std::vector<int> id_copy(ids.begin(), ids.end());
  for (int id : id_copy) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("embedding_lookup: id " + std::to_string(id) + " outside [0," +
                       std::to_string(vocab) + ")");
    }
  }
  auto in = table.values();
  const std::size_t n = id_copy.size();
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(&in[static_cast<std::size_t>(id_copy[i]) * d], d, &out[i * d]);
  }
  return Tensor::make_result({n, d}, std::move(out), {table},
                             [ids = std::move(id_copy), d](Node& self) {
                               auto* g = parent_grad(self, 0);
                               if (!g) return;
                               for (std::size_t i = 0; i < ids.size(); ++i) {
                                 double* row = &(*g)[static_cast<std::size_t>(ids[i]) * d];
                                 for (std::size_t e = 0; e < d; ++e) row[e] += self.grad[i * d + e];
                               }
                             });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_2d(x, "layer_norm");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (gain.numel() != c || bias.numel() != c) {
    throw DimensionError("layer_norm: gain/bias do not fit " + shape_string(x.shape()));
  }
  auto in = x.values(), gv = gain.values(), bv = bias.values();
  auto xhat = std::make_shared<std::vector<double>>(r * c);
  auto inv_std = std::make_shared<std::vector<double>>(r);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = &in[i * c];
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double xh = (row[j] - mean) * is;
      (*xhat)[i * c + j] = xh;
      out[i * c + j] = xh * gv[j] + bv[j];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gain, bias}, [xhat, inv_std, r, c](Node& self) {
        const auto& gv = parent_values(self, 1);
        if (auto* gx = parent_grad(self, 0)) {
          const double n = static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = self.grad[i * c + j] * gv[j];
              m1 += dxh;
              m2 += dxh * (*xhat)[i * c + j];
            }
            m1 /= n;
            m2 /= n;
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = self.grad[i * c + j] * gv[j];
              (*gx)[i * c + j] += (*inv_std)[i] * (dxh - m1 - (*xhat)[i * c + j] * m2);
            }
          }
        }
        if (auto* gg = parent_grad(self, 1))
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) (*gg)[j] += self.grad[i * c + j] * (*xhat)[i * c + j];
        if (auto* gb = parent_grad(self, 2))
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) (*gb)[j] += self.grad[i * c + j];
      });
}

Tensor concat_rows(const Tensor& top, const Tensor& bottom) {
  require_2d(top, "concat_rows");
  require_2d(bottom, "concat_rows");
  const std::size_t c = top.shape()[1];
  if (bottom.shape()[1] != c) {
    throw DimensionError("concat_rows: column mismatch " + shape_string(top.shape()) + " vs " +
                         shape_string(bottom.shape()));
  }
  const std::size_t r1 = top.shape()[0], r2 = bottom.shape()[0];
  std::vector<double> out(top.values().begin(), top.values().end());
  out.insert(out.end(), bottom.values().begin(), bottom.values().end());
  return Tensor::make_result({r1 + r2, c}, std::move(out), {top, bottom}, [r1, c](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < r1 * c; ++i) (*g)[i] += self.grad[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[r1 * c + i];
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_2d(x, "slice_rows");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (count == 0 || begin + count > r) {
    throw IndexError("slice_rows: rows [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") outside " + shape_string(x.shape()));
  }
  auto in = x.values();
  std::vector<double> out(in.begin() + static_cast<std::ptrdiff_t>(begin * c),
                          in.begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
  return Tensor::make_result({count, c}, std::move(out), {x}, [begin, c](Node& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[begin * c + i] += self.grad[i];
  });
}

}  // namespace promptkd
