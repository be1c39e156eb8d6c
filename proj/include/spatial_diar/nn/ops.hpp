#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spatial_diar/nn/tensor.hpp"

namespace spatial_diar::nn {

namespace kernel {

// C (n x m) += A (n x k) * B (k x m)
template <typename T>
void gemm_nn(const T* A, const T* B, T* C, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    T* c = C + i * m;
    const T* a = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[p];
      const T* b = B + p * m;
      for (std::size_t j = 0; j < m; ++j) c[j] += av * b[j];
    }
  }
}

// C (n x k) += A (n x m) * B^T, B is (k x m)
template <typename T>
void gemm_nt(const T* A, const T* B, T* C, std::size_t n, std::size_t m, std::size_t k) {
  // transposing B keeps the inner loop contiguous and vectorizable
  std::vector<T> bt(m * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < m; ++j) bt[j * k + p] = B[p * m + j];
  }
  gemm_nn(A, bt.data(), C, n, m, k);
}

// C (k x m) += A^T * B, A is (n x k), B is (n x m)
template <typename T>
void gemm_tn(const T* A, const T* B, T* C, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* a = A + i * k;
    const T* b = B + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[p];
      T* c = C + p * m;
      for (std::size_t j = 0; j < m; ++j) c[j] += av * b[j];
    }
  }
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace kernel

template <typename T>
void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

template <typename T>
Var<T> constant(Matrix<T> m) {
  return Var<T>(std::move(m), false);
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require<T>(a.cols() == b.rows(), "matmul: inner dimensions differ");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Matrix<T> out(n, m);
  kernel::gemm_nn(a.value().data.data(), b.value().data.data(), out.data.data(), n, k, m);
  return make_op<T>(std::move(out), {a, b}, [n, k, m](Node<T>& self) {
    const auto& A = self.parents[0]->value;
    const auto& B = self.parents[1]->value;
    if (auto* gA = parent_grad(self, 0)) kernel::gemm_nt(self.grad.data.data(), B.data.data(), gA->data.data(), n, m, k);
    if (auto* gB = parent_grad(self, 1)) kernel::gemm_tn(A.data.data(), self.grad.data.data(), gB->data.data(), n, k, m);
  });
}

/// y = x W + b with W (d_in x d_out) and b (1 x d_out).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& W, const Var<T>& b) {
  require<T>(x.cols() == W.rows(), "linear: input width does not match weight rows");
  require<T>(b.rows() == 1 && b.cols() == W.cols(), "linear: bias shape mismatch");
  const std::size_t n = x.rows(), k = x.cols(), m = W.cols();
  Matrix<T> out(n, m);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(b.value().data.data(), m, out.row(i));
  kernel::gemm_nn(x.value().data.data(), W.value().data.data(), out.data.data(), n, k, m);
  return make_op<T>(std::move(out), {x, W, b}, [n, k, m](Node<T>& self) {
    const auto& X = self.parents[0]->value;
    const auto& Wv = self.parents[1]->value;
    const T* g = self.grad.data.data();
    if (auto* gX = parent_grad(self, 0)) kernel::gemm_nt(g, Wv.data.data(), gX->data.data(), n, m, k);
    if (auto* gW = parent_grad(self, 1)) kernel::gemm_tn(X.data.data(), g, gW->data.data(), n, k, m);
    if (auto* gb = parent_grad(self, 2)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) gb->data[j] += g[i * m + j];
      }
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require<T>(a.value().same_shape(b.value()), "add: shape mismatch");
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += self.grad.data[i];
      }
    }
  });
}

/// a + s * b
template <typename T>
Var<T> add_scaled(const Var<T>& a, const Var<T>& b, T s) {
  require<T>(a.value().same_shape(b.value()), "add_scaled: shape mismatch");
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += s * b.value().data[i];
  return make_op<T>(std::move(out), {a, b}, [s](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += self.grad.data[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += s * self.grad.data[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require<T>(a.value().same_shape(b.value()), "mul: shape mismatch");
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& A = self.parents[0]->value;
    const auto& B = self.parents[1]->value;
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += self.grad.data[i] * B.data[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += self.grad.data[i] * A.data[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Matrix<T> out = a.value();
  for (auto& v : out.data) v *= s;
  return make_op<T>(std::move(out), {a}, [s](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += s * self.grad.data[i];
    }
  });
}

/// x + c for a constant (non-differentiable) matrix c, broadcasting a single row if c has one.
template <typename T>
Var<T> add_constant(const Var<T>& x, const Matrix<T>& c) {
  require<T>(c.cols == x.cols() && (c.rows == x.rows() || c.rows == 1 || c.rows >= x.rows()),
             "add_constant: shape mismatch");
  Matrix<T> out = x.value();
  for (std::size_t i = 0; i < out.rows; ++i) {
    const T* cr = c.rows == 1 ? c.row(0) : c.row(i);
    for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += cr[j];
  }
  return make_op<T>(std::move(out), {x}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += self.grad.data[i];
    }
  });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  Matrix<T> out = x.value();
  for (auto& v : out.data) v = v * kernel::sigmoid(v);
  return make_op<T>(std::move(out), {x}, [](Node<T>& self) {
    const auto& X = self.parents[0]->value;
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        T s = kernel::sigmoid(X.data[i]);
        g->data[i] += self.grad.data[i] * s * (T(1) + X.data[i] * (T(1) - s));
      }
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Matrix<T> out = x.value();
  for (auto& v : out.data) v = kernel::sigmoid(v);
  return make_op<T>(out, {x}, [y = out](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += self.grad.data[i] * y.data[i] * (T(1) - y.data[i]);
    }
  });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  Matrix<T> out = x.value();
  for (auto& v : out.data) v = std::tanh(v);
  return make_op<T>(out, {x}, [y = out](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += self.grad.data[i] * (T(1) - y.data[i] * y.data[i]);
    }
  });
}

/// Row-wise layer normalization over the trailing axis, then gain/bias (each 1 x d).
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  const std::size_t n = x.rows(), d = x.cols();
  require<T>(gain.cols() == d && bias.cols() == d, "layer_norm: gain/bias width mismatch");
  Matrix<T> xhat(n, d), out(n, d);
  std::vector<T> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* r = x.value().row(i);
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += r[j];
    mean /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (r[j] - mean) * (r[j] - mean);
    var /= T(d);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (r[j] - mean) * inv_std[i];
      out(i, j) = xhat(i, j) * gain.value().data[j] + bias.value().data[j];
    }
  }
  return make_op<T>(std::move(out), {x, gain, bias},
                    [xhat = std::move(xhat), inv_std = std::move(inv_std), n, d](Node<T>& self) {
    const auto& G = self.parents[1]->value;
    const auto& dy = self.grad;
    auto* gx = parent_grad(self, 0);
    auto* gg = parent_grad(self, 1);
    auto* gb = parent_grad(self, 2);
    for (std::size_t i = 0; i < n; ++i) {
      const T* dyr = dy.row(i);
      const T* xh = xhat.row(i);
      if (gg || gb) {
        for (std::size_t j = 0; j < d; ++j) {
          if (gg) gg->data[j] += dyr[j] * xh[j];
          if (gb) gb->data[j] += dyr[j];
        }
      }
      if (gx) {
        T m1 = 0, m2 = 0;
        for (std::size_t j = 0; j < d; ++j) {
          T dxh = dyr[j] * G.data[j];
          m1 += dxh;
          m2 += dxh * xh[j];
        }
        m1 /= T(d);
        m2 /= T(d);
        T* gr = gx->row(i);
        for (std::size_t j = 0; j < d; ++j) gr[j] += inv_std[i] * (dyr[j] * G.data[j] - m1 - xh[j] * m2);
      }
    }
  });
}

/// Row-wise softmax (differentiable).
template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  Matrix<T> out = x.value();
  for (std::size_t i = 0; i < out.rows; ++i) {
    T* r = out.row(i);
    T mx = *std::max_element(r, r + out.cols);
    T sum = 0;
    for (std::size_t j = 0; j < out.cols; ++j) sum += (r[j] = std::exp(r[j] - mx));
    for (std::size_t j = 0; j < out.cols; ++j) r[j] /= sum;
  }
  return make_op<T>(out, {x}, [y = out](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < y.rows; ++i) {
        const T* yr = y.row(i);
        const T* dy = self.grad.row(i);
        T dot = 0;
        for (std::size_t j = 0; j < y.cols; ++j) dot += dy[j] * yr[j];
        T* gr = g->row(i);
        for (std::size_t j = 0; j < y.cols; ++j) gr[j] += yr[j] * (dy[j] - dot);
      }
    }
  });
}

/// Multi-head scaled dot-product attention over the full sequence. q, k, v are (T x d);
/// head h uses columns [h*d/heads, (h+1)*d/heads).
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads) {
  const std::size_t n = q.rows(), d = q.cols();
  require<T>(heads > 0 && d % std::size_t(heads) == 0, "attention: width not divisible by head count");
  require<T>(k.rows() == n && v.rows() == n && k.cols() == d && v.cols() == d, "attention: q/k/v shape mismatch");
  const std::size_t H = std::size_t(heads), dh = d / H;
  const T sc = T(1) / std::sqrt(T(dh));
  // per-head slices: (n x dh) row-major, and transposed (dh x n)
  auto slice = [n, dh](const Matrix<T>& m, std::size_t h, T* dst) {
    for (std::size_t i = 0; i < n; ++i) std::copy_n(m.row(i) + h * dh, dh, dst + i * dh);
  };
  auto slice_t = [n, dh](const Matrix<T>& m, std::size_t h, T* dst) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < dh; ++c) dst[c * n + i] = m(i, h * dh + c);
    }
  };
  std::vector<T> probs(H * n * n);
  Matrix<T> out(n, d);
  std::vector<T> qh(n * dh), kt(dh * n), vh(n * dh), oh(n * dh);
  for (std::size_t h = 0; h < H; ++h) {
    slice(q.value(), h, qh.data());
    slice_t(k.value(), h, kt.data());
    slice(v.value(), h, vh.data());
    T* P = probs.data() + h * n * n;
    kernel::gemm_nn(qh.data(), kt.data(), P, n, dh, n);
    for (std::size_t i = 0; i < n; ++i) {
      T* p = P + i * n;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, p[j] *= sc);
      T sum = 0;
      for (std::size_t j = 0; j < n; ++j) sum += (p[j] = std::exp(p[j] - mx));
      const T inv = T(1) / sum;
      for (std::size_t j = 0; j < n; ++j) p[j] *= inv;
    }
    std::fill(oh.begin(), oh.end(), T(0));
    kernel::gemm_nn(P, vh.data(), oh.data(), n, n, dh);
    for (std::size_t i = 0; i < n; ++i) std::copy_n(oh.data() + i * dh, dh, out.row(i) + h * dh);
  }
  return make_op<T>(std::move(out), {q, k, v}, [probs = std::move(probs), n, dh, H, sc, slice, slice_t](Node<T>& self) {
    const auto& Q = self.parents[0]->value;
    const auto& K = self.parents[1]->value;
    const auto& V = self.parents[2]->value;
    auto* gQ = parent_grad(self, 0);
    auto* gK = parent_grad(self, 1);
    auto* gV = parent_grad(self, 2);
    std::vector<T> go(n * dh), vt(dh * n), qh(n * dh), kh(n * dh), dp(n * n), buf(n * dh);
    for (std::size_t h = 0; h < H; ++h) {
      const T* P = probs.data() + h * n * n;
      slice(self.grad, h, go.data());
      auto scatter = [&](Matrix<T>* g) {
        for (std::size_t i = 0; i < n; ++i) {
          T* dst = g->row(i) + h * dh;
          for (std::size_t c = 0; c < dh; ++c) dst[c] += buf[i * dh + c];
        }
      };
      if (gV) {
        std::fill(buf.begin(), buf.end(), T(0));
        kernel::gemm_tn(P, go.data(), buf.data(), n, n, dh);
        scatter(gV);
      }
      if (!gQ && !gK) continue;
      // dP = go V^T ; dS = P * (dP - rowsum(P * dP)) * scale
      slice_t(V, h, vt.data());
      std::fill(dp.begin(), dp.end(), T(0));
      kernel::gemm_nn(go.data(), vt.data(), dp.data(), n, dh, n);
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = P + i * n;
        T* r = dp.data() + i * n;
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += p[j] * r[j];
        for (std::size_t j = 0; j < n; ++j) r[j] = p[j] * (r[j] - dot) * sc;
      }
      if (gQ) {
        slice(K, h, kh.data());
        std::fill(buf.begin(), buf.end(), T(0));
        kernel::gemm_nn(dp.data(), kh.data(), buf.data(), n, n, dh);
        scatter(gQ);
      }
      if (gK) {
        slice(Q, h, qh.data());
        std::fill(buf.begin(), buf.end(), T(0));
        kernel::gemm_tn(dp.data(), qh.data(), buf.data(), n, n, dh);
        scatter(gK);
      }
    }
  });
}

/// Gated linear unit over columns: first half * sigmoid(second half).
template <typename T>
Var<T> glu(const Var<T>& x) {
  require<T>(x.cols() % 2 == 0, "glu: odd width");
  const std::size_t n = x.rows(), d = x.cols() / 2;
  Matrix<T> out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const T* r = x.value().row(i);
    for (std::size_t j = 0; j < d; ++j) out(i, j) = r[j] * kernel::sigmoid(r[j + d]);
  }
  return make_op<T>(std::move(out), {x}, [n, d](Node<T>& self) {
    const auto& X = self.parents[0]->value;
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) {
        const T* r = X.row(i);
        const T* dy = self.grad.row(i);
        T* gr = g->row(i);
        for (std::size_t j = 0; j < d; ++j) {
          T s = kernel::sigmoid(r[j + d]);
          gr[j] += dy[j] * s;
          gr[j + d] += dy[j] * r[j] * s * (T(1) - s);
        }
      }
    }
  });
}

/// Depthwise temporal convolution with centered ("same") zero padding.
/// x (T x d), kernel (K x d), bias (1 x d): y[t,c] = b[c] + sum_j w[j,c] x[t + j - K/2, c].
template <typename T>
Var<T> depthwise_conv1d(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const std::size_t n = x.rows(), d = x.cols(), K = w.rows();
  require<T>(w.cols() == d && b.cols() == d && K % 2 == 1, "depthwise_conv1d: shape mismatch or even kernel");
  const long half = long(K / 2);
  Matrix<T> out(n, d);
  for (std::size_t t = 0; t < n; ++t) {
    T* o = out.row(t);
    std::copy_n(b.value().data.data(), d, o);
    for (std::size_t j = 0; j < K; ++j) {
      long src = long(t) + long(j) - half;
      if (src < 0 || src >= long(n)) continue;
      const T* xr = x.value().row(std::size_t(src));
      const T* wr = w.value().row(j);
      for (std::size_t c = 0; c < d; ++c) o[c] += wr[c] * xr[c];
    }
  }
  return make_op<T>(std::move(out), {x, w, b}, [n, d, K, half](Node<T>& self) {
    const auto& X = self.parents[0]->value;
    const auto& W = self.parents[1]->value;
    auto* gx = parent_grad(self, 0);
    auto* gw = parent_grad(self, 1);
    auto* gb = parent_grad(self, 2);
    for (std::size_t t = 0; t < n; ++t) {
      const T* dy = self.grad.row(t);
      if (gb) {
        for (std::size_t c = 0; c < d; ++c) gb->data[c] += dy[c];
      }
      for (std::size_t j = 0; j < K; ++j) {
        long src = long(t) + long(j) - half;
        if (src < 0 || src >= long(n)) continue;
        if (gx) {
          T* g = gx->row(std::size_t(src));
          const T* wr = W.row(j);
          for (std::size_t c = 0; c < d; ++c) g[c] += dy[c] * wr[c];
        }
        if (gw) {
          T* g = gw->row(j);
          const T* xr = X.row(std::size_t(src));
          for (std::size_t c = 0; c < d; ++c) g[c] += dy[c] * xr[c];
        }
      }
    }
  });
}

template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  require<T>(a.rows() == b.rows(), "concat_cols: row mismatch");
  const std::size_t n = a.rows(), da = a.cols(), db = b.cols();
  Matrix<T> out(n, da + db);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.value().row(i), da, out.row(i));
    std::copy_n(b.value().row(i), db, out.row(i) + da);
  }
  return make_op<T>(std::move(out), {a, b}, [n, da, db](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < da; ++j) g->row(i)[j] += self.grad.row(i)[j];
      }
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < db; ++j) g->row(i)[j] += self.grad.row(i)[da + j];
      }
    }
  });
}

/// Element-wise mean of same-shape tensors, summed in list order.
template <typename T>
Var<T> mean_of(const std::vector<Var<T>>& xs) {
  require<T>(!xs.empty(), "mean_of: empty list");
  Matrix<T> out(xs[0].rows(), xs[0].cols());
  for (const auto& x : xs) {
    require<T>(x.value().same_shape(out), "mean_of: shape mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += x.value().data[i];
  }
  const T inv = T(1) / T(xs.size());
  for (auto& v : out.data) v *= inv;
  return make_op<T>(std::move(out), xs, [inv](Node<T>& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      if (auto* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += inv * self.grad.data[i];
      }
    }
  });
}

/// Convex combination sum_l softmax(logits)_l * layers_l, logits (1 x L).
template <typename T>
Var<T> weighted_layer_sum(const std::vector<Var<T>>& layers, const Var<T>& logits) {
  require<T>(!layers.empty(), "weighted_layer_sum: empty layer list");
  const std::size_t L = layers.size();
  require<T>(logits.rows() == 1 && logits.cols() == L, "weighted_layer_sum: logits length mismatch");
  std::vector<T> w(L);
  T mx = *std::max_element(logits.value().data.begin(), logits.value().data.end());
  T sum = 0;
  for (std::size_t l = 0; l < L; ++l) sum += (w[l] = std::exp(logits.value().data[l] - mx));
  for (auto& v : w) v /= sum;
  Matrix<T> out(layers[0].rows(), layers[0].cols());
  for (std::size_t l = 0; l < L; ++l) {
    require<T>(layers[l].value().same_shape(out), "weighted_layer_sum: layer shape mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += w[l] * layers[l].value().data[i];
  }
  std::vector<Var<T>> parents = layers;
  parents.push_back(logits);
  return make_op<T>(std::move(out), parents, [w, L](Node<T>& self) {
    std::vector<T> dots(L, T(0));
    for (std::size_t l = 0; l < L; ++l) {
      const auto& X = self.parents[l]->value;
      T s = 0;
      for (std::size_t i = 0; i < X.size(); ++i) s += self.grad.data[i] * X.data[i];
      dots[l] = s;
      if (auto* g = parent_grad(self, l)) {
        for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += w[l] * self.grad.data[i];
      }
    }
    if (auto* g = parent_grad(self, L)) {
      T avg = 0;
      for (std::size_t l = 0; l < L; ++l) avg += w[l] * dots[l];
      for (std::size_t l = 0; l < L; ++l) g->data[l] += w[l] * (dots[l] - avg);
    }
  });
}

/// Feature-wise modulation y = (1 + gamma_hat) * x + beta, all (T x d).
template <typename T>
Var<T> film_modulate(const Var<T>& x, const Var<T>& gamma_hat, const Var<T>& beta) {
  require<T>(x.value().same_shape(gamma_hat.value()) && x.value().same_shape(beta.value()), "film: shape mismatch");
  Matrix<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = (T(1) + gamma_hat.value().data[i]) * out.data[i] + beta.value().data[i];
  }
  return make_op<T>(std::move(out), {x, gamma_hat, beta}, [](Node<T>& self) {
    const auto& X = self.parents[0]->value;
    const auto& G = self.parents[1]->value;
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += self.grad.data[i] * (T(1) + G.data[i]);
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += self.grad.data[i] * X.data[i];
    }
    if (auto* g = parent_grad(self, 2)) {
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += self.grad.data[i];
    }
  });
}

/// Mean over unmasked frames of -log softmax(logits)[target]. mask empty means all frames.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> targets, std::span<const std::uint8_t> mask = {}) {
  const std::size_t n = logits.rows(), C = logits.cols();
  require<T>(targets.size() == n, "cross_entropy: target count mismatch");
  require<T>(mask.empty() || mask.size() == n, "cross_entropy: mask length mismatch");
  Matrix<T> probs(n, C);
  T loss = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || std::size_t(targets[i]) >= C) throw std::invalid_argument("cross_entropy: target out of range");
    const T* r = logits.value().row(i);
    T mx = *std::max_element(r, r + C);
    T sum = 0;
    for (std::size_t j = 0; j < C; ++j) sum += (probs(i, j) = std::exp(r[j] - mx));
    for (std::size_t j = 0; j < C; ++j) probs(i, j) /= sum;
    if (!mask.empty() && !mask[i]) continue;
    loss += -(r[std::size_t(targets[i])] - mx - std::log(sum));
    ++count;
  }
  const T inv = count ? T(1) / T(count) : T(0);
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<std::uint8_t> mk(mask.begin(), mask.end());
  return make_op<T>(Matrix<T>(1, 1, loss * inv), {logits},
                    [probs = std::move(probs), tg = std::move(tg), mk = std::move(mk), inv, n, C](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      const T go = self.grad.data[0] * inv;
      for (std::size_t i = 0; i < n; ++i) {
        if (!mk.empty() && !mk[i]) continue;
        T* gr = g->row(i);
        for (std::size_t j = 0; j < C; ++j) gr[j] += go * probs(i, j);
        gr[std::size_t(tg[i])] -= go;
      }
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s = 0;
  for (T v : x.value().data) s += v;
  return make_op<T>(Matrix<T>(1, 1, s), {x}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (auto& v : g->data) v += self.grad.data[0];
    }
  });
}

/// sum(x * w) for a constant weight matrix; used to reduce tensors to scalars with
/// non-degenerate gradients.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Matrix<T>& w) {
  require<T>(x.value().same_shape(w), "weighted_sum: shape mismatch");
  T s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) s += x.value().data[i] * w.data[i];
  return make_op<T>(Matrix<T>(1, 1, s), {x}, [w](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += self.grad.data[0] * w.data[i];
    }
  });
}

/// Non-differentiable row softmax of a value matrix.
template <typename T>
Matrix<T> softmax_values(const Matrix<T>& x) {
  NoGradGuard guard;
  return softmax_rows(Var<T>(x)).value();
}

}  // namespace spatial_diar::nn
