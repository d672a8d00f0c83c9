#include "mcs/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

extern "C" void openblas_set_num_threads(int);

namespace mcs {

namespace {

// Keeps BLAS single-threaded: reductions then have one fixed accumulation
// order and concurrent task rollouts do not oversubscribe the machine.
struct BlasSetup {
  BlasSetup() { openblas_set_num_threads(1); }
};
const BlasSetup g_blas_setup;

constexpr double kMaskedLogit = -1e30;

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void mark_output(Tensor& out) {
  out.set_requires_grad(true);
  out.set_tape_tag(Tape::active());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  }
}

void require_rank2(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got " +
                                a.shape_str());
  }
}

void dgemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k, double alpha,
           const double* a, int lda, const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// Row-wise softmax into out (same buffer allowed).
void softmax_rows(const double* x, double* out, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const double* xi = x + static_cast<std::size_t>(r) * cols;
    double* yi = out + static_cast<std::size_t>(r) * cols;
    double m = xi[0];
    for (int j = 1; j < cols; ++j) m = std::max(m, xi[j]);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      yi[j] = std::exp(xi[j] - m);
      z += yi[j];
    }
    for (int j = 0; j < cols; ++j) yi[j] /= z;
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.values(), bv = b.values(), ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (recording({&a, &b})) {
    mark_output(out);
    Tape::active()->record([a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.values(), bv = b.values(), ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  if (recording({&a, &b})) {
    mark_output(out);
    Tape::active()->record([a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.values(), bv = b.values(), ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (recording({&a, &b})) {
    mark_output(out);
    Tape::active()->record([a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        auto bv2 = b.values();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        auto av2 = a.values();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
      }
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.values(), ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + s;
  if (recording({&a})) {
    mark_output(out);
    Tape::active()->record([a, out]() mutable {
      auto g = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

Tensor mul_scalar(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.values(), ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * s;
  if (recording({&a})) {
    mark_output(out);
    Tape::active()->record([a, out, s]() mutable {
      auto g = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
  }
  return out;
}

Tensor one_minus(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.values(), ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = 1.0 - av[i];
  if (recording({&a})) {
    mark_output(out);
    Tape::active()->record([a, out]() mutable {
      auto g = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: inner extents disagree " + a.shape_str() + " vs " +
                                b.shape_str());
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  dgemm(CblasNoTrans, CblasNoTrans, m, n, k, 1.0, a.values().data(), k, b.values().data(), n, 0.0,
        out.values().data(), n);
  if (recording({&a, &b})) {
    mark_output(out);
    Tape::active()->record([a, b, out, m, n, k]() mutable {
      const double* g = out.grad().data();
      if (a.requires_grad()) {
        // dA += dC * B^T
        dgemm(CblasNoTrans, CblasTrans, m, k, n, 1.0, g, n, b.values().data(), n, 1.0,
              a.grad().data(), k);
      }
      if (b.requires_grad()) {
        // dB += A^T * dC
        dgemm(CblasTrans, CblasNoTrans, k, n, m, 1.0, a.values().data(), k, g, n, 1.0,
              b.grad().data(), n);
      }
    });
  }
  return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& bias) {
  require_rank2(a, "add_rowvec");
  const int m = a.dim(0), n = a.dim(1);
  if (bias.size() != n) {
    throw std::invalid_argument("add_rowvec: bias " + bias.shape_str() + " does not match " +
                                a.shape_str());
  }
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.values(), bv = bias.values(), ov = out.values();
  for (int r = 0; r < m; ++r) {
    for (int j = 0; j < n; ++j) {
      ov[static_cast<std::size_t>(r) * n + j] = av[static_cast<std::size_t>(r) * n + j] + bv[j];
    }
  }
  if (recording({&a, &bias})) {
    mark_output(out);
    Tape::active()->record([a, bias, out, m, n]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (int r = 0; r < m; ++r) {
          for (int j = 0; j < n; ++j) gb[j] += g[static_cast<std::size_t>(r) * n + j];
        }
      }
    });
  }
  return out;
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  require_rank2(x, "scale_rows");
  const int m = x.dim(0), n = x.dim(1);
  if (s.size() != m) {
    throw std::invalid_argument("scale_rows: scale " + s.shape_str() + " does not match rows of " +
                                x.shape_str());
  }
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values(), sv = s.values(), ov = out.values();
  for (int r = 0; r < m; ++r) {
    const double f = sv[r];
    for (int j = 0; j < n; ++j) {
      ov[static_cast<std::size_t>(r) * n + j] = xv[static_cast<std::size_t>(r) * n + j] * f;
    }
  }
  if (recording({&x, &s})) {
    mark_output(out);
    Tape::active()->record([x, s, out, m, n]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        auto sv2 = s.values();
        for (int r = 0; r < m; ++r) {
          for (int j = 0; j < n; ++j) {
            gx[static_cast<std::size_t>(r) * n + j] +=
                g[static_cast<std::size_t>(r) * n + j] * sv2[r];
          }
        }
      }
      if (s.requires_grad()) {
        auto gs = s.grad();
        auto xv2 = x.values();
        for (int r = 0; r < m; ++r) {
          double acc = 0.0;
          for (int j = 0; j < n; ++j) {
            acc += g[static_cast<std::size_t>(r) * n + j] *
                   xv2[static_cast<std::size_t>(r) * n + j];
          }
          gs[r] += acc;
        }
      }
    });
  }
  return out;
}

namespace {

template <typename Fwd, typename Dydx>
Tensor elementwise(const Tensor& a, Fwd fwd, Dydx dydx_from_out) {
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.values(), ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i]);
  if (recording({&a})) {
    mark_output(out);
    Tape::active()->record([a, out, dydx_from_out]() mutable {
      auto g = out.grad();
      auto ga = a.grad();
      auto ov2 = out.values();
      auto av2 = a.values();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dydx_from_out(av2[i], ov2[i]);
    });
  }
  return out;
}

}  // namespace

Tensor tanh(const Tensor& a) {
  return elementwise(a, [](double x) { return std::tanh(x); },
                     [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return elementwise(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                     [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return elementwise(a, [](double x) { return x > 0.0 ? x : 0.0; },
                     [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return elementwise(a, [](double x) { return std::exp(x); },
                     [](double, double y) { return y; });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (recording({&a})) {
    mark_output(out);
    Tape::active()->record([a, out]() mutable {
      const double g = out.grad()[0];
      auto ga = a.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  Tensor out = Tensor::scalar(acc * inv);
  if (recording({&a})) {
    mark_output(out);
    Tape::active()->record([a, out, inv]() mutable {
      const double g = out.grad()[0] * inv;
      auto ga = a.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor sum_rows(const Tensor& a) {
  require_rank2(a, "sum_rows");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros({m, 1});
  auto av = a.values(), ov = out.values();
  for (int r = 0; r < m; ++r) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += av[static_cast<std::size_t>(r) * n + j];
    ov[r] = acc;
  }
  if (recording({&a})) {
    mark_output(out);
    Tape::active()->record([a, out, m, n]() mutable {
      auto g = out.grad();
      auto ga = a.grad();
      for (int r = 0; r < m; ++r) {
        for (int j = 0; j < n; ++j) ga[static_cast<std::size_t>(r) * n + j] += g[r];
      }
    });
  }
  return out;
}

namespace {

// Sums column j over a block of rows in ascending value order; ties keep row
// order. Gives permutation-independent bit-exact pooling.
double sorted_column_sum(const double* base, int rows, int cols, int col,
                         std::vector<double>& scratch) {
  scratch.clear();
  for (int r = 0; r < rows; ++r) scratch.push_back(base[static_cast<std::size_t>(r) * cols + col]);
  std::sort(scratch.begin(), scratch.end());
  double acc = 0.0;
  for (double v : scratch) acc += v;
  return acc;
}

}  // namespace

Tensor mean_pool(const Tensor& x) {
  require_rank2(x, "mean_pool");
  const int e = x.dim(0), d = x.dim(1);
  if (e < 1) throw std::invalid_argument("mean_pool: empty entity axis");
  Tensor out = Tensor::zeros({d});
  auto xv = x.values(), ov = out.values();
  std::vector<double> scratch;
  for (int j = 0; j < d; ++j) ov[j] = sorted_column_sum(xv.data(), e, d, j, scratch) / e;
  if (recording({&x})) {
    mark_output(out);
    Tape::active()->record([x, out, e, d]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      const double inv = 1.0 / e;
      for (int r = 0; r < e; ++r) {
        for (int j = 0; j < d; ++j) gx[static_cast<std::size_t>(r) * d + j] += g[j] * inv;
      }
    });
  }
  return out;
}

Tensor segment_mean_rows(const Tensor& x, int seg_len) {
  require_rank2(x, "segment_mean_rows");
  const int rows = x.dim(0), d = x.dim(1);
  if (seg_len < 1 || rows % seg_len != 0) {
    throw std::invalid_argument("segment_mean_rows: row count " + x.shape_str() +
                                " not divisible by segment length");
  }
  const int b = rows / seg_len;
  Tensor out = Tensor::zeros({b, d});
  auto xv = x.values(), ov = out.values();
  std::vector<double> scratch;
  for (int s = 0; s < b; ++s) {
    const double* base = xv.data() + static_cast<std::size_t>(s) * seg_len * d;
    for (int j = 0; j < d; ++j) {
      ov[static_cast<std::size_t>(s) * d + j] =
          sorted_column_sum(base, seg_len, d, j, scratch) / seg_len;
    }
  }
  if (recording({&x})) {
    mark_output(out);
    Tape::active()->record([x, out, b, seg_len, d]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      const double inv = 1.0 / seg_len;
      for (int s = 0; s < b; ++s) {
        for (int r = 0; r < seg_len; ++r) {
          for (int j = 0; j < d; ++j) {
            gx[(static_cast<std::size_t>(s) * seg_len + r) * d + j] +=
                g[static_cast<std::size_t>(s) * d + j] * inv;
          }
        }
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (shape_numel(shape) != x.size()) {
    throw std::invalid_argument("reshape: cannot view " + x.shape_str() + " with new extents");
  }
  Tensor out = Tensor::from(std::move(shape), {x.values().begin(), x.values().end()});
  if (recording({&x})) {
    mark_output(out);
    Tape::active()->record([x, out]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: empty input list");
  const int d = xs[0].cols();
  int rows = 0;
  for (const auto& t : xs) {
    if (t.cols() != d) {
      throw std::invalid_argument("concat_rows: column mismatch " + t.shape_str());
    }
    rows += t.rows();
  }
  Tensor out = Tensor::zeros({rows, d});
  auto ov = out.values();
  std::size_t off = 0;
  bool needs = false;
  for (const auto& t : xs) {
    std::memcpy(ov.data() + off, t.values().data(), t.values().size() * sizeof(double));
    off += t.values().size();
    needs = needs || t.requires_grad();
  }
  if (Tape::active() && needs) {
    mark_output(out);
    auto inputs = xs;
    Tape::active()->record([inputs, out]() mutable {
      auto g = out.grad();
      std::size_t pos = 0;
      for (auto& t : inputs) {
        const std::size_t n = t.values().size();
        if (t.requires_grad()) {
          auto gt = t.grad();
          for (std::size_t i = 0; i < n; ++i) gt[i] += g[pos + i];
        }
        pos += n;
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int first, int count) {
  require_rank2(x, "slice_rows");
  const int m = x.dim(0), d = x.dim(1);
  if (first < 0 || count < 1 || first + count > m) {
    throw std::invalid_argument("slice_rows: range out of bounds for " + x.shape_str());
  }
  Tensor out = Tensor::zeros({count, d});
  std::memcpy(out.values().data(), x.values().data() + static_cast<std::size_t>(first) * d,
              static_cast<std::size_t>(count) * d * sizeof(double));
  if (recording({&x})) {
    mark_output(out);
    Tape::active()->record([x, out, first, count, d]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < static_cast<std::size_t>(count) * d; ++i) {
        gx[static_cast<std::size_t>(first) * d + i] += g[i];
      }
    });
  }
  return out;
}

Tensor slice_rows_strided(const Tensor& x, int offset, int stride, int count) {
  require_rank2(x, "slice_rows_strided");
  const int m = x.dim(0), d = x.dim(1);
  if (offset < 0 || stride < 1 || count < 1 || offset + (count - 1) * stride >= m) {
    throw std::invalid_argument("slice_rows_strided: range out of bounds for " + x.shape_str());
  }
  Tensor out = Tensor::zeros({count, d});
  auto xv = x.values(), ov = out.values();
  for (int t = 0; t < count; ++t) {
    std::memcpy(ov.data() + static_cast<std::size_t>(t) * d,
                xv.data() + (static_cast<std::size_t>(offset) + static_cast<std::size_t>(t) * stride) * d,
                static_cast<std::size_t>(d) * sizeof(double));
  }
  if (recording({&x})) {
    mark_output(out);
    Tape::active()->record([x, out, offset, stride, count, d]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (int t = 0; t < count; ++t) {
        for (int j = 0; j < d; ++j) {
          gx[(static_cast<std::size_t>(offset) + static_cast<std::size_t>(t) * stride) * d + j] +=
              g[static_cast<std::size_t>(t) * d + j];
        }
      }
    });
  }
  return out;
}

Tensor interleave_rows(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("interleave_rows: empty input list");
  const int b = xs[0].rows(), d = xs[0].cols();
  const int n = static_cast<int>(xs.size());
  for (const auto& t : xs) {
    if (t.rows() != b || t.cols() != d) {
      throw std::invalid_argument("interleave_rows: shape mismatch " + t.shape_str());
    }
  }
  Tensor out = Tensor::zeros({b * n, d});
  auto ov = out.values();
  bool needs = false;
  for (int j = 0; j < n; ++j) {
    auto xv = xs[j].values();
    for (int r = 0; r < b; ++r) {
      std::memcpy(ov.data() + (static_cast<std::size_t>(r) * n + j) * d,
                  xv.data() + static_cast<std::size_t>(r) * d,
                  static_cast<std::size_t>(d) * sizeof(double));
    }
    needs = needs || xs[j].requires_grad();
  }
  if (Tape::active() && needs) {
    mark_output(out);
    auto inputs = xs;
    Tape::active()->record([inputs, out, b, n, d]() mutable {
      auto g = out.grad();
      for (int j = 0; j < n; ++j) {
        if (!inputs[j].requires_grad()) continue;
        auto gx = inputs[j].grad();
        for (int r = 0; r < b; ++r) {
          for (int c = 0; c < d; ++c) {
            gx[static_cast<std::size_t>(r) * d + c] +=
                g[(static_cast<std::size_t>(r) * n + j) * d + c];
          }
        }
      }
    });
  }
  return out;
}

Tensor broadcast_row(const Tensor& row, int count) {
  if (row.rows() != 1) {
    throw std::invalid_argument("broadcast_row: expected a single row, got " + row.shape_str());
  }
  const int d = row.cols();
  Tensor out = Tensor::zeros({count, d});
  auto rv = row.values(), ov = out.values();
  for (int r = 0; r < count; ++r) {
    std::memcpy(ov.data() + static_cast<std::size_t>(r) * d, rv.data(),
                static_cast<std::size_t>(d) * sizeof(double));
  }
  if (recording({&row})) {
    mark_output(out);
    Tape::active()->record([row, out, count, d]() mutable {
      auto g = out.grad();
      auto gr = row.grad();
      for (int r = 0; r < count; ++r) {
        for (int j = 0; j < d; ++j) gr[j] += g[static_cast<std::size_t>(r) * d + j];
      }
    });
  }
  return out;
}

Tensor select(const Tensor& x, const std::vector<int>& idx) {
  require_rank2(x, "select");
  const int m = x.dim(0), n = x.dim(1);
  if (static_cast<int>(idx.size()) != m) {
    throw std::invalid_argument("select: index count does not match rows of " + x.shape_str());
  }
  for (int i : idx) {
    if (i < 0 || i >= n) throw std::invalid_argument("select: index out of range");
  }
  Tensor out = Tensor::zeros({m});
  auto xv = x.values(), ov = out.values();
  for (int r = 0; r < m; ++r) ov[r] = xv[static_cast<std::size_t>(r) * n + idx[r]];
  if (recording({&x})) {
    mark_output(out);
    Tape::active()->record([x, out, idx, n]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t r = 0; r < g.size(); ++r) gx[r * n + idx[r]] += g[r];
    });
  }
  return out;
}

Tensor slice_col(const Tensor& x, int col) {
  require_rank2(x, "slice_col");
  const int m = x.dim(0), n = x.dim(1);
  if (col < 0 || col >= n) throw std::invalid_argument("slice_col: column out of range");
  Tensor out = Tensor::zeros({m, 1});
  auto xv = x.values(), ov = out.values();
  for (int r = 0; r < m; ++r) ov[r] = xv[static_cast<std::size_t>(r) * n + col];
  if (recording({&x})) {
    mark_output(out);
    Tape::active()->record([x, out, col, n]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t r = 0; r < g.size(); ++r) gx[r * n + col] += g[r];
    });
  }
  return out;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo greater than hi");
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values(), ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::min(std::max(xv[i], lo), hi);
  if (recording({&x})) {
    mark_output(out);
    Tape::active()->record([x, out, lo, hi]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      auto xv2 = x.values();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xv2[i] > lo && xv2[i] < hi) gx[i] += g[i];
      }
    });
  }
  return out;
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "minimum");
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.values(), bv = b.values(), ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::min(av[i], bv[i]);
  if (recording({&a, &b})) {
    mark_output(out);
    Tape::active()->record([a, b, out]() mutable {
      auto g = out.grad();
      auto av2 = a.values();
      auto bv2 = b.values();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (av2[i] <= bv2[i]) {
          if (a.requires_grad()) a.grad()[i] += g[i];
        } else if (b.requires_grad()) {
          b.grad()[i] += g[i];
        }
      }
    });
  }
  return out;
}

Tensor pad_mask_logits(const Tensor& x, int valid_cols) {
  require_rank2(x, "pad_mask_logits");
  const int m = x.dim(0), n = x.dim(1);
  if (valid_cols < 1 || valid_cols > n) {
    throw std::invalid_argument("pad_mask_logits: invalid width for " + x.shape_str());
  }
  Tensor out = Tensor::zeros({m, n});
  auto xv = x.values(), ov = out.values();
  for (int r = 0; r < m; ++r) {
    for (int j = 0; j < n; ++j) {
      ov[static_cast<std::size_t>(r) * n + j] =
          j < valid_cols ? xv[static_cast<std::size_t>(r) * n + j] : kMaskedLogit;
    }
  }
  if (recording({&x})) {
    mark_output(out);
    Tape::active()->record([x, out, m, n, valid_cols]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (int r = 0; r < m; ++r) {
        for (int j = 0; j < valid_cols; ++j) {
          gx[static_cast<std::size_t>(r) * n + j] += g[static_cast<std::size_t>(r) * n + j];
        }
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  const int rows = x.rows(), cols = x.cols();
  Tensor out = Tensor::zeros(x.shape());
  softmax_rows(x.values().data(), out.values().data(), rows, cols);
  if (recording({&x})) {
    mark_output(out);
    Tape::active()->record([x, out, rows, cols]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      auto y = out.values();
      for (int r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * cols;
        double dot = 0.0;
        for (int j = 0; j < cols; ++j) dot += g[base + j] * y[base + j];
        for (int j = 0; j < cols; ++j) gx[base + j] += y[base + j] * (g[base + j] - dot);
      }
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& x) {
  const int rows = x.rows(), cols = x.cols();
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values(), ov = out.values();
  for (int r = 0; r < rows; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * cols;
    double m = xv[base];
    for (int j = 1; j < cols; ++j) m = std::max(m, xv[base + j]);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) z += std::exp(xv[base + j] - m);
    const double lse = m + std::log(z);
    for (int j = 0; j < cols; ++j) ov[base + j] = xv[base + j] - lse;
  }
  if (recording({&x})) {
    mark_output(out);
    Tape::active()->record([x, out, rows, cols]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      auto ls = out.values();
      for (int r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * cols;
        double gsum = 0.0;
        for (int j = 0; j < cols; ++j) gsum += g[base + j];
        for (int j = 0; j < cols; ++j) {
          gx[base + j] += g[base + j] - std::exp(ls[base + j]) * gsum;
        }
      }
    });
  }
  return out;
}

Tensor gumbel_softmax(const Tensor& logits, double temperature, RngStream& rng) {
  if (temperature <= 0.0) {
    throw std::invalid_argument("gumbel_softmax: temperature must be positive");
  }
  if (logits.rank() != 1) {
    throw std::invalid_argument("gumbel_softmax: expected rank-1 logits, got " +
                                logits.shape_str());
  }
  const int n = logits.dim(0);
  Tensor out = Tensor::zeros({n});
  auto lv = logits.values(), ov = out.values();
  std::vector<double> z(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) z[j] = (lv[j] + rng.gumbel()) / temperature;
  softmax_rows(z.data(), ov.data(), 1, n);
  if (recording({&logits})) {
    mark_output(out);
    Tape::active()->record([logits, out, n, temperature]() mutable {
      auto g = out.grad();
      auto gl = logits.grad();
      auto y = out.values();
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += g[j] * y[j];
      for (int j = 0; j < n; ++j) gl[j] += y[j] * (g[j] - dot) / temperature;
    });
  }
  return out;
}

Tensor gumbel_sigmoid(const Tensor& s, const Tensor& noise_diff, double temperature) {
  if (temperature <= 0.0) {
    throw std::invalid_argument("gumbel_sigmoid: temperature must be positive");
  }
  require_same_shape(s, noise_diff, "gumbel_sigmoid");
  Tensor out = Tensor::zeros(s.shape());
  auto sv = s.values(), nv = noise_diff.values(), ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    ov[i] = 1.0 / (1.0 + std::exp(-(sv[i] + nv[i]) / temperature));
  }
  if (recording({&s})) {
    mark_output(out);
    Tape::active()->record([s, out, temperature]() mutable {
      auto g = out.grad();
      auto gs = s.grad();
      auto y = out.values();
      for (std::size_t i = 0; i < g.size(); ++i) {
        gs[i] += g[i] * y[i] * (1.0 - y[i]) / temperature;
      }
    });
  }
  return out;
}

Tensor threshold_gate(const Tensor& alpha, double threshold) {
  if (threshold < 0.0 || threshold > 1.0) {
    throw std::invalid_argument("threshold_gate: threshold must lie in [0,1]");
  }
  Tensor out = Tensor::zeros(alpha.shape());
  auto av = alpha.values(), ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > threshold ? av[i] : 0.0;
  if (recording({&alpha})) {
    mark_output(out);
    Tape::active()->record([alpha, out, threshold]() mutable {
      auto g = out.grad();
      auto ga = alpha.grad();
      auto av2 = alpha.values();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (av2[i] > threshold) ga[i] += g[i];
      }
    });
  }
  return out;
}

Tensor set_diag_one(const Tensor& x) {
  require_rank2(x, "set_diag_one");
  const int n = x.dim(0);
  if (x.dim(1) != n) {
    throw std::invalid_argument("set_diag_one: expected square matrix, got " + x.shape_str());
  }
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values(), ov = out.values();
  for (int r = 0; r < n; ++r) {
    for (int j = 0; j < n; ++j) {
      ov[static_cast<std::size_t>(r) * n + j] = r == j ? 1.0 : xv[static_cast<std::size_t>(r) * n + j];
    }
  }
  if (recording({&x})) {
    mark_output(out);
    Tape::active()->record([x, out, n]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (int r = 0; r < n; ++r) {
        for (int j = 0; j < n; ++j) {
          if (r != j) gx[static_cast<std::size_t>(r) * n + j] += g[static_cast<std::size_t>(r) * n + j];
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank2(x, "layer_norm");
  const int m = x.dim(0), d = x.dim(1);
  if (gain.size() != d || bias.size() != d) {
    throw std::invalid_argument("layer_norm: gain/bias width does not match " + x.shape_str());
  }
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values(), gv = gain.values(), bv = bias.values(), ov = out.values();
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m) * d);
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
  for (int r = 0; r < m; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xv[base + j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = xv[base + j] - mean;
      var += c * c;
    }
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int j = 0; j < d; ++j) {
      const double xh = (xv[base + j] - mean) * is;
      (*xhat)[base + j] = xh;
      ov[base + j] = xh * gv[j] + bv[j];
    }
  }
  if (recording({&x, &gain, &bias})) {
    mark_output(out);
    Tape::active()->record([x, gain, bias, out, xhat, inv_std, m, d]() mutable {
      auto g = out.grad();
      auto gv2 = gain.values();
      for (int r = 0; r < m; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * d;
        if (gain.requires_grad()) {
          auto gg = gain.grad();
          for (int j = 0; j < d; ++j) gg[j] += g[base + j] * (*xhat)[base + j];
        }
        if (bias.requires_grad()) {
          auto gb = bias.grad();
          for (int j = 0; j < d; ++j) gb[j] += g[base + j];
        }
        if (x.requires_grad()) {
          auto gx = x.grad();
          double mean_gy = 0.0, mean_gy_xh = 0.0;
          for (int j = 0; j < d; ++j) {
            const double gy = g[base + j] * gv2[j];
            mean_gy += gy;
            mean_gy_xh += gy * (*xhat)[base + j];
          }
          mean_gy /= d;
          mean_gy_xh /= d;
          const double is = (*inv_std)[r];
          for (int j = 0; j < d; ++j) {
            const double gy = g[base + j] * gv2[j];
            gx[base + j] += is * (gy - mean_gy - (*xhat)[base + j] * mean_gy_xh);
          }
        }
      }
    });
  }
  return out;
}

Tensor attention_segments(const Tensor& q, const Tensor& k, const Tensor& v, int heads, int q_seg,
                          int kv_seg, std::vector<double>* out_weights) {
  require_rank2(q, "attention_segments");
  require_rank2(k, "attention_segments");
  require_rank2(v, "attention_segments");
  const int d_model = q.dim(1);
  if (k.dim(1) != d_model || v.dim(1) != d_model) {
    throw std::invalid_argument("attention_segments: column mismatch between q/k/v");
  }
  if (heads < 1 || d_model % heads != 0) {
    throw std::invalid_argument("attention_segments: model width not divisible by head count");
  }
  if (q_seg < 1 || kv_seg < 1 || q.dim(0) % q_seg != 0 || k.dim(0) % kv_seg != 0 ||
      k.shape() != v.shape()) {
    throw std::invalid_argument("attention_segments: bad segment layout");
  }
  const int b = q.dim(0) / q_seg;
  if (k.dim(0) / kv_seg != b) {
    throw std::invalid_argument("attention_segments: q and k segment counts differ");
  }
  const int dh = d_model / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor out = Tensor::zeros(q.shape());
  auto qv = q.values(), kv2 = k.values(), vv = v.values(), ov = out.values();
  auto weights = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(b) * heads * q_seg * kv_seg);

  std::vector<double> scores(static_cast<std::size_t>(q_seg) * kv_seg);
  for (int s = 0; s < b; ++s) {
    const double* qb = qv.data() + static_cast<std::size_t>(s) * q_seg * d_model;
    const double* kb = kv2.data() + static_cast<std::size_t>(s) * kv_seg * d_model;
    const double* vb = vv.data() + static_cast<std::size_t>(s) * kv_seg * d_model;
    double* ob = ov.data() + static_cast<std::size_t>(s) * q_seg * d_model;
    for (int h = 0; h < heads; ++h) {
      const int c0 = h * dh;
      for (int i = 0; i < q_seg; ++i) {
        for (int j = 0; j < kv_seg; ++j) {
          double dot = 0.0;
          const double* qr = qb + static_cast<std::size_t>(i) * d_model + c0;
          const double* kr = kb + static_cast<std::size_t>(j) * d_model + c0;
          for (int c = 0; c < dh; ++c) dot += qr[c] * kr[c];
          scores[static_cast<std::size_t>(i) * kv_seg + j] = dot * scale;
        }
      }
      double* mu = weights->data() +
                   (static_cast<std::size_t>(s) * heads + h) * q_seg * kv_seg;
      softmax_rows(scores.data(), mu, q_seg, kv_seg);
      for (int i = 0; i < q_seg; ++i) {
        double* orow = ob + static_cast<std::size_t>(i) * d_model + c0;
        for (int c = 0; c < dh; ++c) orow[c] = 0.0;
        for (int j = 0; j < kv_seg; ++j) {
          const double w = mu[static_cast<std::size_t>(i) * kv_seg + j];
          const double* vrow = vb + static_cast<std::size_t>(j) * d_model + c0;
          for (int c = 0; c < dh; ++c) orow[c] += w * vrow[c];
        }
      }
    }
  }
  if (out_weights) *out_weights = *weights;

  if (recording({&q, &k, &v})) {
    mark_output(out);
    Tape::active()->record([q, k, v, out, weights, b, heads, q_seg, kv_seg, dh, d_model,
                            scale]() mutable {
      auto g = out.grad();
      auto qv2 = q.values(), kv3 = k.values(), vv2 = v.values();
      const bool need_q = q.requires_grad(), need_k = k.requires_grad(),
                 need_v = v.requires_grad();
      std::span<double> gq, gk, gv;
      if (need_q) gq = q.grad();
      if (need_k) gk = k.grad();
      if (need_v) gv = v.grad();
      std::vector<double> dmu(static_cast<std::size_t>(kv_seg));
      std::vector<double> ds(static_cast<std::size_t>(kv_seg));
      for (int s = 0; s < b; ++s) {
        const std::size_t qoff = static_cast<std::size_t>(s) * q_seg * d_model;
        const std::size_t koff = static_cast<std::size_t>(s) * kv_seg * d_model;
        for (int h = 0; h < heads; ++h) {
          const int c0 = h * dh;
          const double* mu = weights->data() +
                             (static_cast<std::size_t>(s) * heads + h) * q_seg * kv_seg;
          for (int i = 0; i < q_seg; ++i) {
            const double* grow = g.data() + qoff + static_cast<std::size_t>(i) * d_model + c0;
            const double* murow = mu + static_cast<std::size_t>(i) * kv_seg;
            // dV and dmu
            double dot_dmu_mu = 0.0;
            for (int j = 0; j < kv_seg; ++j) {
              const double* vrow = vv2.data() + koff + static_cast<std::size_t>(j) * d_model + c0;
              double acc = 0.0;
              for (int c = 0; c < dh; ++c) acc += grow[c] * vrow[c];
              dmu[j] = acc;
              dot_dmu_mu += acc * murow[j];
              if (need_v) {
                double* gvrow = gv.data() + koff + static_cast<std::size_t>(j) * d_model + c0;
                const double w = murow[j];
                for (int c = 0; c < dh; ++c) gvrow[c] += w * grow[c];
              }
            }
            // softmax backward then score backward
            for (int j = 0; j < kv_seg; ++j) ds[j] = murow[j] * (dmu[j] - dot_dmu_mu) * scale;
            if (need_q) {
              double* gqrow = gq.data() + qoff + static_cast<std::size_t>(i) * d_model + c0;
              for (int j = 0; j < kv_seg; ++j) {
                const double* krow = kv3.data() + koff + static_cast<std::size_t>(j) * d_model + c0;
                const double f = ds[j];
                for (int c = 0; c < dh; ++c) gqrow[c] += f * krow[c];
              }
            }
            if (need_k) {
              const double* qrow = qv2.data() + qoff + static_cast<std::size_t>(i) * d_model + c0;
              for (int j = 0; j < kv_seg; ++j) {
                double* gkrow = gk.data() + koff + static_cast<std::size_t>(j) * d_model + c0;
                const double f = ds[j];
                for (int c = 0; c < dh; ++c) gkrow[c] += f * qrow[c];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

double global_grad_norm(const std::vector<Tensor>& params) {
  double acc = 0.0;
  for (const Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) acc += g * g;
  }
  return std::sqrt(acc);
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (!std::isfinite(norm)) throw std::runtime_error("clip_grad_norm: gradient norm is non-finite");
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (Tensor& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.grad()) g *= scale;
    }
  }
  return norm;
}

}  // namespace mcs
