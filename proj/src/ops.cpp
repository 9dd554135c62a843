#include "marge/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <thread>

namespace marge {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
  }
}

void check_matrix(const Tensor& x, const char* op) {
  if (x.rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " +
                                shape_str(x.shape));
  }
}

// Split [0, m) into contiguous chunks and run fn(begin, end) on worker threads.
// Per-row work is independent and reduction order within a row is fixed, so
// results are identical to the serial path.
template <typename F>
void parallel_rows(int m, size_t flops, F&& fn) {
  const int threads = std::min(max_threads(), m);
  if (threads <= 1 || flops < (1u << 18)) {
    fn(0, m);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  const int chunk = (m + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const int begin = t * chunk;
    const int end = std::min(m, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& th : pool) th.join();
}

// C[m,n] += A[m,k] · B[k,n]
void gemm_nn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  parallel_rows(m, static_cast<size_t>(m) * k * n, [=](int i0, int i1) {
    for (int i = i0; i < i1; ++i) {
      double* crow = c + static_cast<size_t>(i) * n;
      const double* arow = a + static_cast<size_t>(i) * k;
      for (int p = 0; p < k; ++p) {
        const double av = arow[p];
        if (av == 0.0) continue;
        const double* brow = b + static_cast<size_t>(p) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

// C[m,n] += A[m,k] · B[n,k]ᵀ
void gemm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  parallel_rows(m, static_cast<size_t>(m) * k * n, [=](int i0, int i1) {
    for (int i = i0; i < i1; ++i) {
      const double* arow = a + static_cast<size_t>(i) * k;
      double* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* brow = b + static_cast<size_t>(j) * k;
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
        crow[j] += acc;
      }
    }
  });
}

// C[m,n] += A[k,m]ᵀ · B[k,n]
void gemm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  parallel_rows(m, static_cast<size_t>(m) * k * n, [=](int i0, int i1) {
    for (int i = i0; i < i1; ++i) {
      double* crow = c + static_cast<size_t>(i) * n;
      for (int p = 0; p < k; ++p) {
        const double av = a[static_cast<size_t>(p) * m + i];
        if (av == 0.0) continue;
        const double* brow = b + static_cast<size_t>(p) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

template <typename Fwd, typename Dfdx>
Tensor unary_ew(const char* name, const Tensor& x, Fwd fwd, Dfdx dfdx) {
  Tensor out = make_op_output(name, x.shape, {x});
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = fwd((*x.data)[i]);
  if (out.node) {
    out.node->backward = [dfdx](Tensor& o) {
      Tensor& px = o.node->parents[0];
      if (!px.requires_grad) return;
      const size_t n2 = o.numel();
      for (size_t i = 0; i < n2; ++i) (*px.grad)[i] += (*o.grad)[i] * dfdx((*px.data)[i]);
    };
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = make_op_output("add", a.shape, {a, b});
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  if (out.node) {
    out.node->backward = [](Tensor& o) {
      const size_t n2 = o.numel();
      for (Tensor& p : o.node->parents) {
        if (!p.requires_grad) continue;
        for (size_t i = 0; i < n2; ++i) (*p.grad)[i] += (*o.grad)[i];
      }
    };
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = make_op_output("sub", a.shape, {a, b});
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
  if (out.node) {
    out.node->backward = [](Tensor& o) {
      Tensor& pa = o.node->parents[0];
      Tensor& pb = o.node->parents[1];
      const size_t n2 = o.numel();
      if (pa.requires_grad)
        for (size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i];
      if (pb.requires_grad)
        for (size_t i = 0; i < n2; ++i) (*pb.grad)[i] -= (*o.grad)[i];
    };
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = make_op_output("mul", a.shape, {a, b});
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
  if (out.node) {
    out.node->backward = [](Tensor& o) {
      Tensor& pa = o.node->parents[0];
      Tensor& pb = o.node->parents[1];
      const size_t n2 = o.numel();
      if (pa.requires_grad)
        for (size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i] * (*pb.data)[i];
      if (pb.requires_grad)
        for (size_t i = 0; i < n2; ++i) (*pb.grad)[i] += (*o.grad)[i] * (*pa.data)[i];
    };
  }
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  Tensor out = make_op_output("div", a.shape, {a, b});
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] / (*b.data)[i];
  if (out.node) {
    out.node->backward = [](Tensor& o) {
      Tensor& pa = o.node->parents[0];
      Tensor& pb = o.node->parents[1];
      const size_t n2 = o.numel();
      for (size_t i = 0; i < n2; ++i) {
        const double bv = (*pb.data)[i];
        const double g = (*o.grad)[i];
        if (pa.requires_grad) (*pa.grad)[i] += g / bv;
        if (pb.requires_grad) (*pb.grad)[i] -= g * (*pa.data)[i] / (bv * bv);
      }
    };
  }
  return out;
}

Tensor scale(const Tensor& x, double c) {
  return unary_ew("scale", x, [c](double v) { return v * c; }, [c](double) { return c; });
}

Tensor sqrt_ew(const Tensor& x) {
  return unary_ew("sqrt", x, [](double v) { return std::sqrt(v); },
                  [](double v) { return 0.5 / std::sqrt(v); });
}

Tensor relu(const Tensor& x) {
  return unary_ew("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                  [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary_ew(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v) {
        return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) +
               v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Tensor mul_scalar(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) {
    throw std::invalid_argument("mul_scalar: scalar operand has shape " + shape_str(s.shape));
  }
  Tensor out = make_op_output("mul_scalar", x.shape, {x, s});
  const double sv = (*s.data)[0];
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] * sv;
  if (out.node) {
    out.node->backward = [](Tensor& o) {
      Tensor& px = o.node->parents[0];
      Tensor& ps = o.node->parents[1];
      const double sv2 = (*ps.data)[0];
      const size_t n2 = o.numel();
      if (px.requires_grad)
        for (size_t i = 0; i < n2; ++i) (*px.grad)[i] += (*o.grad)[i] * sv2;
      if (ps.requires_grad) {
        double acc = 0.0;
        for (size_t i = 0; i < n2; ++i) acc += (*o.grad)[i] * (*px.data)[i];
        (*ps.grad)[0] += acc;
      }
    };
  }
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  check_matrix(x, "add_rowvec");
  if (v.rank() != 1 || v.dim(0) != x.dim(1)) {
    throw std::invalid_argument("add_rowvec: vector " + shape_str(v.shape) +
                                " does not match row width of " + shape_str(x.shape));
  }
  const int rows = x.dim(0), cols = x.dim(1);
  Tensor out = make_op_output("add_rowvec", x.shape, {x, v});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      (*out.data)[static_cast<size_t>(i) * cols + j] =
          (*x.data)[static_cast<size_t>(i) * cols + j] + (*v.data)[j];
  if (out.node) {
    out.node->backward = [rows, cols](Tensor& o) {
      Tensor& px = o.node->parents[0];
      Tensor& pv = o.node->parents[1];
      if (px.requires_grad) {
        const size_t n2 = o.numel();
        for (size_t i = 0; i < n2; ++i) (*px.grad)[i] += (*o.grad)[i];
      }
      if (pv.requires_grad) {
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < cols; ++j)
            (*pv.grad)[j] += (*o.grad)[static_cast<size_t>(i) * cols + j];
      }
    };
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matrix(a, "matmul");
  check_matrix(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: inner dimensions disagree " + shape_str(a.shape) +
                                " x " + shape_str(b.shape));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = make_op_output("matmul", {m, n}, {a, b});
  gemm_nn_acc(a.data->data(), b.data->data(), out.data->data(), m, k, n);
  if (out.node) {
    out.node->backward = [m, k, n](Tensor& o) {
      Tensor& pa = o.node->parents[0];
      Tensor& pb = o.node->parents[1];
      // dA = dC · Bᵀ ; dB = Aᵀ · dC
      if (pa.requires_grad)
        gemm_nt_acc(o.grad->data(), pb.data->data(), pa.grad->data(), m, n, k);
      if (pb.requires_grad)
        gemm_tn_acc(pa.data->data(), o.grad->data(), pb.grad->data(), k, m, n);
    };
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_matrix(a, "matmul_nt");
  check_matrix(b, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw std::invalid_argument("matmul_nt: inner dimensions disagree " + shape_str(a.shape) +
                                " x " + shape_str(b.shape) + "ᵀ");
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out = make_op_output("matmul_nt", {m, n}, {a, b});
  gemm_nt_acc(a.data->data(), b.data->data(), out.data->data(), m, k, n);
  if (out.node) {
    out.node->backward = [m, k, n](Tensor& o) {
      Tensor& pa = o.node->parents[0];
      Tensor& pb = o.node->parents[1];
      // C = A·Bᵀ: dA = dC · B ; dB = dCᵀ · A
      if (pa.requires_grad)
        gemm_nn_acc(o.grad->data(), pb.data->data(), pa.grad->data(), m, n, k);
      if (pb.requires_grad)
        gemm_tn_acc(o.grad->data(), pa.data->data(), pb.grad->data(), n, m, k);
    };
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  check_matrix(x, "transpose");
  const int m = x.dim(0), n = x.dim(1);
  Tensor out = make_op_output("transpose", {n, m}, {x});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      (*out.data)[static_cast<size_t>(j) * m + i] = (*x.data)[static_cast<size_t>(i) * n + j];
  if (out.node) {
    out.node->backward = [m, n](Tensor& o) {
      Tensor& px = o.node->parents[0];
      if (!px.requires_grad) return;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          (*px.grad)[static_cast<size_t>(i) * n + j] +=
              (*o.grad)[static_cast<size_t>(j) * m + i];
    };
  }
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1 || x.shape.back() < 1) {
    throw std::invalid_argument("softmax_lastdim: last dimension must be >= 1, shape " +
                                shape_str(x.shape));
  }
  const int cols = x.shape.back();
  const size_t rows = x.numel() / static_cast<size_t>(cols);
  Tensor out = make_op_output("softmax", x.shape, {x});
  for (size_t r = 0; r < rows; ++r) {
    const double* in = x.data->data() + r * cols;
    double* o = out.data->data() + r * cols;
    double mx = in[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (int j = 0; j < cols; ++j) o[j] /= z;
  }
  if (out.node) {
    out.node->backward = [cols, rows](Tensor& o) {
      Tensor& px = o.node->parents[0];
      if (!px.requires_grad) return;
      for (size_t r = 0; r < rows; ++r) {
        const double* y = o.data->data() + r * cols;
        const double* dy = o.grad->data() + r * cols;
        double* dx = px.grad->data() + r * cols;
        double dot = 0.0;
        for (int j = 0; j < cols; ++j) dot += y[j] * dy[j];
        for (int j = 0; j < cols; ++j) dx[j] += y[j] * (dy[j] - dot);
      }
    };
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw std::invalid_argument("layer_norm: rank-0 input");
  const int cols = x.shape.back();
  if (gain.rank() != 1 || gain.dim(0) != cols || bias.rank() != 1 || bias.dim(0) != cols) {
    throw std::invalid_argument("layer_norm: gain/bias must be [" + std::to_string(cols) +
                                "], got " + shape_str(gain.shape) + " and " +
                                shape_str(bias.shape));
  }
  const size_t rows = x.numel() / static_cast<size_t>(cols);
  Tensor out = make_op_output("layer_norm", x.shape, {x, gain, bias});
  for (size_t r = 0; r < rows; ++r) {
    const double* in = x.data->data() + r * cols;
    double* o = out.data->data() + r * cols;
    double mu = 0.0;
    for (int j = 0; j < cols; ++j) mu += in[j];
    mu /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= cols;
    const double s = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < cols; ++j)
      o[j] = (in[j] - mu) * s * (*gain.data)[j] + (*bias.data)[j];
  }
  if (out.node) {
    out.node->backward = [cols, rows, eps](Tensor& o) {
      Tensor& px = o.node->parents[0];
      Tensor& pg = o.node->parents[1];
      Tensor& pb = o.node->parents[2];
      std::vector<double> xhat(static_cast<size_t>(cols));
      std::vector<double> u(static_cast<size_t>(cols));
      for (size_t r = 0; r < rows; ++r) {
        const double* in = px.data->data() + r * cols;
        const double* dy = o.grad->data() + r * cols;
        double mu = 0.0;
        for (int j = 0; j < cols; ++j) mu += in[j];
        mu /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= cols;
        const double s = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < cols; ++j) xhat[j] = (in[j] - mu) * s;
        if (pg.requires_grad)
          for (int j = 0; j < cols; ++j) (*pg.grad)[j] += dy[j] * xhat[j];
        if (pb.requires_grad)
          for (int j = 0; j < cols; ++j) (*pb.grad)[j] += dy[j];
        if (px.requires_grad) {
          double mean_u = 0.0, mean_ux = 0.0;
          for (int j = 0; j < cols; ++j) {
            u[j] = dy[j] * (*pg.data)[j];
            mean_u += u[j];
            mean_ux += u[j] * xhat[j];
          }
          mean_u /= cols;
          mean_ux /= cols;
          double* dx = px.grad->data() + r * cols;
          for (int j = 0; j < cols; ++j)
            dx[j] += s * (u[j] - mean_u - xhat[j] * mean_ux);
        }
      }
    };
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  check_matrix(table, "embedding_lookup");
  const int rows = table.dim(0), width = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= rows) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) +
                              " out of range for table " + shape_str(table.shape));
    }
  }
  const int n = static_cast<int>(ids.size());
  Tensor out = make_op_output("embedding_lookup", {n, width}, {table});
  for (int i = 0; i < n; ++i)
    std::copy_n(table.data->data() + static_cast<size_t>(ids[i]) * width, width,
                out.data->data() + static_cast<size_t>(i) * width);
  if (out.node) {
    out.node->backward = [ids, width](Tensor& o) {
      Tensor& pt = o.node->parents[0];
      if (!pt.requires_grad) return;
      const int n2 = static_cast<int>(ids.size());
      for (int i = 0; i < n2; ++i) {
        double* row = pt.grad->data() + static_cast<size_t>(ids[i]) * width;
        const double* g = o.grad->data() + static_cast<size_t>(i) * width;
        for (int j = 0; j < width; ++j) row[j] += g[j];
      }
    };
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& tensors, int axis) {
  if (tensors.empty()) throw std::invalid_argument("concat: empty tensor list");
  const int rank = tensors[0].rank();
  if ((rank != 1 && rank != 2) || (axis != 0 && axis != 1) || (rank == 1 && axis == 1)) {
    throw std::invalid_argument("concat: unsupported rank " + std::to_string(rank) +
                                " / axis " + std::to_string(axis));
  }
  for (const Tensor& t : tensors) {
    if (t.rank() != rank) throw std::invalid_argument("concat: rank mismatch");
    if (rank == 2) {
      const int fixed = axis == 0 ? 1 : 0;
      if (t.dim(fixed) != tensors[0].dim(fixed)) {
        throw std::invalid_argument("concat: mismatched extents " + shape_str(t.shape) +
                                    " vs " + shape_str(tensors[0].shape));
      }
    }
  }

  std::vector<int> out_shape = tensors[0].shape;
  int total = 0;
  for (const Tensor& t : tensors) total += t.dim(axis);
  out_shape[static_cast<size_t>(axis)] = total;

  bool need = false;
  if (grad_enabled())
    for (const Tensor& t : tensors) need = need || t.requires_grad;
  Tensor out = Tensor::zeros(out_shape, need);
  if (need) {
    out.node = std::make_shared<Node>();
    out.node->op = "concat";
    out.node->parents = tensors;
  }

  if (axis == 0 || rank == 1) {
    size_t off = 0;
    for (const Tensor& t : tensors) {
      std::copy(t.data->begin(), t.data->end(), out.data->begin() + off);
      off += t.numel();
    }
    if (out.node) {
      out.node->backward = [](Tensor& o) {
        size_t off2 = 0;
        for (Tensor& p : o.node->parents) {
          if (p.requires_grad) {
            const size_t n = p.numel();
            for (size_t i = 0; i < n; ++i) (*p.grad)[i] += (*o.grad)[off2 + i];
          }
          off2 += p.numel();
        }
      };
    }
  } else {
    const int rows = out_shape[0], out_cols = out_shape[1];
    int col_off = 0;
    for (const Tensor& t : tensors) {
      const int c = t.dim(1);
      for (int i = 0; i < rows; ++i)
        std::copy_n(t.data->data() + static_cast<size_t>(i) * c, c,
                    out.data->data() + static_cast<size_t>(i) * out_cols + col_off);
      col_off += c;
    }
    if (out.node) {
      out.node->backward = [rows, out_cols](Tensor& o) {
        int off2 = 0;
        for (Tensor& p : o.node->parents) {
          const int c = p.dim(1);
          if (p.requires_grad) {
            for (int i = 0; i < rows; ++i) {
              const double* g = o.grad->data() + static_cast<size_t>(i) * out_cols + off2;
              double* pg = p.grad->data() + static_cast<size_t>(i) * c;
              for (int j = 0; j < c; ++j) pg[j] += g[j];
            }
          }
          off2 += c;
        }
      };
    }
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int offset, int len) {
  check_matrix(x, "slice_rows");
  if (offset < 0 || len <= 0 || offset + len > x.dim(0)) {
    throw std::out_of_range("slice_rows: [" + std::to_string(offset) + "," +
                            std::to_string(offset + len) + ") out of " + shape_str(x.shape));
  }
  const int cols = x.dim(1);
  Tensor out = make_op_output("slice_rows", {len, cols}, {x});
  std::copy_n(x.data->data() + static_cast<size_t>(offset) * cols,
              static_cast<size_t>(len) * cols, out.data->data());
  if (out.node) {
    out.node->backward = [offset, len, cols](Tensor& o) {
      Tensor& px = o.node->parents[0];
      if (!px.requires_grad) return;
      double* dst = px.grad->data() + static_cast<size_t>(offset) * cols;
      const double* g = o.grad->data();
      for (size_t i = 0; i < static_cast<size_t>(len) * cols; ++i) dst[i] += g[i];
    };
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int offset, int len) {
  check_matrix(x, "slice_cols");
  if (offset < 0 || len <= 0 || offset + len > x.dim(1)) {
    throw std::out_of_range("slice_cols: [" + std::to_string(offset) + "," +
                            std::to_string(offset + len) + ") out of " + shape_str(x.shape));
  }
  const int rows = x.dim(0), cols = x.dim(1);
  Tensor out = make_op_output("slice_cols", {rows, len}, {x});
  for (int i = 0; i < rows; ++i)
    std::copy_n(x.data->data() + static_cast<size_t>(i) * cols + offset, len,
                out.data->data() + static_cast<size_t>(i) * len);
  if (out.node) {
    out.node->backward = [offset, len, rows, cols](Tensor& o) {
      Tensor& px = o.node->parents[0];
      if (!px.requires_grad) return;
      for (int i = 0; i < rows; ++i) {
        double* dst = px.grad->data() + static_cast<size_t>(i) * cols + offset;
        const double* g = o.grad->data() + static_cast<size_t>(i) * len;
        for (int j = 0; j < len; ++j) dst[j] += g[j];
      }
    };
  }
  return out;
}

Tensor reshape(const Tensor& x, const std::vector<int>& shape) {
  Tensor out = make_op_output("reshape", shape, {x});
  if (out.numel() != x.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape) + " as " +
                                shape_str(shape));
  }
  std::copy(x.data->begin(), x.data->end(), out.data->begin());
  if (out.node) {
    out.node->backward = [](Tensor& o) {
      Tensor& px = o.node->parents[0];
      if (!px.requires_grad) return;
      const size_t n = o.numel();
      for (size_t i = 0; i < n; ++i) (*px.grad)[i] += (*o.grad)[i];
    };
  }
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make_op_output("sum", {1}, {x});
  double acc = 0.0;
  for (double v : *x.data) acc += v;
  (*out.data)[0] = acc;
  if (out.node) {
    out.node->backward = [](Tensor& o) {
      Tensor& px = o.node->parents[0];
      if (!px.requires_grad) return;
      const double g = (*o.grad)[0];
      for (double& gv : *px.grad) gv += g;
    };
  }
  return out;
}

Tensor expand_segments(const Tensor& v, const std::vector<int>& lengths) {
  if (v.rank() != 1 || static_cast<size_t>(v.dim(0)) != lengths.size()) {
    throw std::invalid_argument("expand_segments: " + std::to_string(lengths.size()) +
                                " segments vs values " + shape_str(v.shape));
  }
  int total = 0;
  for (int len : lengths) {
    if (len <= 0) throw std::invalid_argument("expand_segments: non-positive segment length");
    total += len;
  }
  Tensor out = make_op_output("expand_segments", {total}, {v});
  size_t off = 0;
  for (size_t j = 0; j < lengths.size(); ++j) {
    std::fill_n(out.data->data() + off, lengths[j], (*v.data)[j]);
    off += static_cast<size_t>(lengths[j]);
  }
  if (out.node) {
    out.node->backward = [lengths](Tensor& o) {
      Tensor& pv = o.node->parents[0];
      if (!pv.requires_grad) return;
      size_t off2 = 0;
      for (size_t j = 0; j < lengths.size(); ++j) {
        double acc = 0.0;
        for (int i = 0; i < lengths[j]; ++i) acc += (*o.grad)[off2 + i];
        (*pv.grad)[j] += acc;
        off2 += static_cast<size_t>(lengths[j]);
      }
    };
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     Reduction reduction) {
  check_matrix(logits, "cross_entropy");
  const int rows = logits.dim(0), vocab = logits.dim(1);
  if (static_cast<int>(targets.size()) != rows) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(rows) + " rows");
  }
  for (int t : targets) {
    if (t < 0 || t >= vocab) {
      throw std::out_of_range("cross_entropy: target id " + std::to_string(t) +
                              " outside vocab of " + std::to_string(vocab));
    }
  }
  Tensor out = make_op_output("cross_entropy", {1}, {logits});
  const double denom = reduction == Reduction::Mean ? static_cast<double>(rows) : 1.0;
  double total = 0.0;
  for (int i = 0; i < rows; ++i) {
    const double* row = logits.data->data() + static_cast<size_t>(i) * vocab;
    double mx = row[0];
    for (int j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    total += mx + std::log(z) - row[targets[static_cast<size_t>(i)]];
  }
  (*out.data)[0] = total / denom;
  if (out.node) {
    out.node->backward = [targets, rows, vocab, denom](Tensor& o) {
      Tensor& pl = o.node->parents[0];
      if (!pl.requires_grad) return;
      const double g = (*o.grad)[0] / denom;
      for (int i = 0; i < rows; ++i) {
        const double* row = pl.data->data() + static_cast<size_t>(i) * vocab;
        double* drow = pl.grad->data() + static_cast<size_t>(i) * vocab;
        double mx = row[0];
        for (int j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
        for (int j = 0; j < vocab; ++j) drow[j] += g * std::exp(row[j] - mx) / z;
        drow[targets[static_cast<size_t>(i)]] -= g;
      }
    };
  }
  return out;
}

}  // namespace marge
