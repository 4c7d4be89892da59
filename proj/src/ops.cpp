#include "taco/ops.hpp"

#include <cblas.h>

#include <atomic>
#include <cmath>
#include <cstring>

namespace taco {
namespace ops {

using ag::make_op;
using ag::Node;

namespace {

void check_same_shape(const Variable& a, const Variable& b, const char* op) {
  TACO_CHECK(a.value().same_shape(b.value()), ShapeError,
             std::string(op) + ": shape mismatch " + a.value().shape_str() + " vs " +
                 b.value().shape_str());
}

std::atomic<std::int64_t> g_zero_norm_events{0};

}  // namespace

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
          double alpha, const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
          double beta, double* c, std::int64_t ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
              beta, c, static_cast<int>(ldc));
}

Variable add(const Variable& a, const Variable& b) {
  check_same_shape(a, b, "add");
  Tensor out = a.value().clone();
  const double* pb = b.value().data();
  double* po = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) po[i] += pb[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    a.node()->accumulate(n.grad);
    b.node()->accumulate(n.grad);
  });
}

Variable sub(const Variable& a, const Variable& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a.value().clone();
  const double* pb = b.value().data();
  double* po = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) po[i] -= pb[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    a.node()->accumulate(n.grad);
    Tensor gneg = n.grad.clone();
    double* p = gneg.data();
    for (std::int64_t i = 0; i < gneg.size(); ++i) p[i] = -p[i];
    b.node()->accumulate(gneg);
  });
}

Variable mul(const Variable& a, const Variable& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a.value().clone();
  const double* pb = b.value().data();
  double* po = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) po[i] *= pb[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    Tensor ga(n.grad.shape()), gb(n.grad.shape());
    const double* g = n.grad.data();
    const double* pa = a.value().data();
    const double* pb2 = b.value().data();
    for (std::int64_t i = 0; i < n.grad.size(); ++i) {
      ga[i] = g[i] * pb2[i];
      gb[i] = g[i] * pa[i];
    }
    a.node()->accumulate(ga);
    b.node()->accumulate(gb);
  });
}

Variable add_scalar(const Variable& a, double c) {
  Tensor out = a.value().clone();
  double* p = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) p[i] += c;
  return make_op(std::move(out), {a}, [a](Node& n) { a.node()->accumulate(n.grad); });
}

Variable mul_scalar(const Variable& a, double c) {
  Tensor out = a.value().clone();
  double* p = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) p[i] *= c;
  return make_op(std::move(out), {a}, [a, c](Node& n) {
    Tensor g = n.grad.clone();
    double* pg = g.data();
    for (std::int64_t i = 0; i < g.size(); ++i) pg[i] *= c;
    a.node()->accumulate(g);
  });
}

Variable neg(const Variable& a) { return mul_scalar(a, -1.0); }

Variable relu(const Variable& a) {
  Tensor out = a.value().clone();
  double* p = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) {
    if (p[i] < 0.0) p[i] = 0.0;
  }
  return make_op(std::move(out), {a}, [a](Node& n) {
    Tensor g(n.grad.shape());
    const double* pg = n.grad.data();
    const double* pa = a.value().data();
    double* pd = g.data();
    for (std::int64_t i = 0; i < g.size(); ++i) pd[i] = pa[i] > 0.0 ? pg[i] : 0.0;
    a.node()->accumulate(g);
  });
}

Variable abs(const Variable& a) {
  Tensor out = a.value().clone();
  double* p = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) p[i] = std::fabs(p[i]);
  return make_op(std::move(out), {a}, [a](Node& n) {
    // subgradient 0 at the kink
    Tensor g(n.grad.shape());
    const double* pg = n.grad.data();
    const double* pa = a.value().data();
    double* pd = g.data();
    for (std::int64_t i = 0; i < g.size(); ++i) {
      pd[i] = pa[i] > 0.0 ? pg[i] : (pa[i] < 0.0 ? -pg[i] : 0.0);
    }
    a.node()->accumulate(g);
  });
}

Variable mul_mask(const Variable& a, const Tensor& mask) {
  TACO_CHECK(a.value().same_shape(mask), ShapeError,
             "mul_mask: mask shape " + mask.shape_str() + " vs " + a.value().shape_str());
  Tensor out = a.value().clone();
  const double* pm = mask.data();
  double* p = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) p[i] *= pm[i];
  return make_op(std::move(out), {a}, [a, mask](Node& n) {
    Tensor g(n.grad.shape());
    const double* pg = n.grad.data();
    const double* pm2 = mask.data();
    double* pd = g.data();
    for (std::int64_t i = 0; i < g.size(); ++i) pd[i] = pg[i] * pm2[i];
    a.node()->accumulate(g);
  });
}

Variable sum_all(const Variable& a) {
  double s = 0.0;
  const double* p = a.value().data();
  for (std::int64_t i = 0; i < a.size(); ++i) s += p[i];
  return make_op(Tensor::scalar(s), {a}, [a](Node& n) {
    a.node()->accumulate(Tensor::full(a.value().shape(), n.grad[0]));
  });
}

Variable mean_all(const Variable& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  double s = 0.0;
  const double* p = a.value().data();
  for (std::int64_t i = 0; i < a.size(); ++i) s += p[i];
  return make_op(Tensor::scalar(s * inv), {a}, [a, inv](Node& n) {
    a.node()->accumulate(Tensor::full(a.value().shape(), n.grad[0] * inv));
  });
}

Variable reshape(const Variable& a, std::vector<std::int64_t> shape) {
  Tensor out = a.value().reshaped(shape);
  return make_op(std::move(out), {a}, [a](Node& n) {
    a.node()->accumulate(n.grad.reshaped(a.value().shape()));
  });
}

Variable sub_scalar_var(const Variable& a, const Variable& s) {
  TACO_CHECK(s.size() == 1, ShapeError, "sub_scalar_var: subtrahend must be size 1");
  Tensor out = a.value().clone();
  const double c = s.value()[0];
  double* p = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) p[i] -= c;
  return make_op(std::move(out), {a, s}, [a, s](Node& n) {
    a.node()->accumulate(n.grad);
    double total = 0.0;
    const double* pg = n.grad.data();
    for (std::int64_t i = 0; i < n.grad.size(); ++i) total += pg[i];
    s.node()->accumulate(Tensor::scalar(-total));
  });
}

Variable linear(const Variable& x, const Variable& w, const Variable& b) {
  TACO_CHECK(x.value().rank() == 2 && w.value().rank() == 2, ShapeError,
             "linear expects rank-2 input and weight");
  const std::int64_t n = x.value().dim(0), in = x.value().dim(1);
  const std::int64_t in_w = w.value().dim(0), out_dim = w.value().dim(1);
  TACO_CHECK(in == in_w, ShapeError,
             "linear: input features " + std::to_string(in) + " vs weight rows " +
                 std::to_string(in_w));
  TACO_CHECK(b.value().rank() == 1 && b.value().dim(0) == out_dim, ShapeError,
             "linear: bias shape mismatch");

  Tensor y({n, out_dim});
  gemm(false, false, n, out_dim, in, 1.0, x.value().data(), in, w.value().data(), out_dim, 0.0,
       y.data(), out_dim);
  const double* pb = b.value().data();
  double* py = y.data();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < out_dim; ++j) py[i * out_dim + j] += pb[j];
  }
  return make_op(std::move(y), {x, w, b}, [x, w, b, n, in, out_dim](Node& nd) {
    const double* g = nd.grad.data();
    if (x.requires_grad()) {
      Tensor gx({n, in});
      gemm(false, true, n, in, out_dim, 1.0, g, out_dim, w.value().data(), out_dim, 0.0,
           gx.data(), in);
      x.node()->accumulate(gx);
    }
    if (w.requires_grad()) {
      Tensor gw({in, out_dim});
      gemm(true, false, in, out_dim, n, 1.0, x.value().data(), in, g, out_dim, 0.0, gw.data(),
           out_dim);
      w.node()->accumulate(gw);
    }
    if (b.requires_grad()) {
      Tensor gb({out_dim});
      double* pgb = gb.data();
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < out_dim; ++j) pgb[j] += g[i * out_dim + j];
      }
      b.node()->accumulate(gb);
    }
  });
}

namespace {

struct ConvDims {
  std::int64_t n, h, w, c, kh, kw, cout, oh, ow, k;
  int stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  TACO_CHECK(x.rank() == 4, ShapeError, "conv2d: input must be (N,H,W,C), got " + x.shape_str());
  TACO_CHECK(w.rank() == 4, ShapeError, "conv2d: weight must be (kh,kw,Cin,Cout)");
  ConvDims d;
  d.n = x.dim(0);
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.c = x.dim(3);
  d.kh = w.dim(0);
  d.kw = w.dim(1);
  TACO_CHECK(w.dim(2) == d.c, ShapeError,
             "conv2d: weight Cin " + std::to_string(w.dim(2)) + " vs input C " +
                 std::to_string(d.c));
  d.cout = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  TACO_CHECK(d.oh > 0 && d.ow > 0, ShapeError, "conv2d: empty output");
  d.k = d.kh * d.kw * d.c;
  return d;
}

// NHWC im2col: rows are output pixels, columns (ky,kx,c).
void im2col(const Tensor& x, const ConvDims& d, Tensor& col) {
  const double* px = x.data();
  double* pc = col.data();
  const std::int64_t row_len = d.k;
  for (std::int64_t n = 0; n < d.n; ++n) {
    const double* xn = px + n * d.h * d.w * d.c;
    for (std::int64_t oy = 0; oy < d.oh; ++oy) {
      for (std::int64_t ox = 0; ox < d.ow; ++ox) {
        double* row = pc + ((n * d.oh + oy) * d.ow + ox) * row_len;
        for (std::int64_t ky = 0; ky < d.kh; ++ky) {
          const std::int64_t iy = oy * d.stride - d.pad + ky;
          for (std::int64_t kx = 0; kx < d.kw; ++kx) {
            const std::int64_t ix = ox * d.stride - d.pad + kx;
            double* dst = row + (ky * d.kw + kx) * d.c;
            if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) {
              std::memset(dst, 0, sizeof(double) * static_cast<std::size_t>(d.c));
            } else {
              std::memcpy(dst, xn + (iy * d.w + ix) * d.c,
                          sizeof(double) * static_cast<std::size_t>(d.c));
            }
          }
        }
      }
    }
  }
}

void col2im_add(const Tensor& col, const ConvDims& d, Tensor& gx) {
  const double* pc = col.data();
  double* px = gx.data();
  for (std::int64_t n = 0; n < d.n; ++n) {
    double* xn = px + n * d.h * d.w * d.c;
    for (std::int64_t oy = 0; oy < d.oh; ++oy) {
      for (std::int64_t ox = 0; ox < d.ow; ++ox) {
        const double* row = pc + ((n * d.oh + oy) * d.ow + ox) * d.k;
        for (std::int64_t ky = 0; ky < d.kh; ++ky) {
          const std::int64_t iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.h) continue;
          for (std::int64_t kx = 0; kx < d.kw; ++kx) {
            const std::int64_t ix = ox * d.stride - d.pad + kx;
            if (ix < 0 || ix >= d.w) continue;
            const double* src = row + (ky * d.kw + kx) * d.c;
            double* dst = xn + (iy * d.w + ix) * d.c;
            for (std::int64_t c = 0; c < d.c; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

}  // namespace

Variable conv2d(const Variable& x, const Variable& w, const Variable& b, int stride, int pad) {
  const ConvDims d = conv_dims(x.value(), w.value(), stride, pad);
  TACO_CHECK(b.value().rank() == 1 && b.value().dim(0) == d.cout, ShapeError,
             "conv2d: bias shape mismatch");

  const std::int64_t rows = d.n * d.oh * d.ow;
  Tensor col({rows, d.k});
  im2col(x.value(), d, col);
  Tensor y({d.n, d.oh, d.ow, d.cout});
  gemm(false, false, rows, d.cout, d.k, 1.0, col.data(), d.k, w.value().data(), d.cout, 0.0,
       y.data(), d.cout);
  const double* pb = b.value().data();
  double* py = y.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t co = 0; co < d.cout; ++co) py[r * d.cout + co] += pb[co];
  }
  // The col buffer is recomputed in backward; keeping it alive for every conv
  // in the graph would dominate peak memory.
  return make_op(std::move(y), {x, w, b}, [x, w, b, d, rows](Node& nd) {
    const double* g = nd.grad.data();
    if (w.requires_grad() || x.requires_grad()) {
      Tensor col2({rows, d.k});
      im2col(x.value(), d, col2);
      if (w.requires_grad()) {
        Tensor gw({d.kh, d.kw, d.c, d.cout});
        gemm(true, false, d.k, d.cout, rows, 1.0, col2.data(), d.k, g, d.cout, 0.0, gw.data(),
             d.cout);
        w.node()->accumulate(gw);
      }
      if (x.requires_grad()) {
        Tensor gcol({rows, d.k});
        gemm(false, true, rows, d.k, d.cout, 1.0, g, d.cout, w.value().data(), d.cout, 0.0,
             gcol.data(), d.k);
        Tensor gx(x.value().shape());
        col2im_add(gcol, d, gx);
        x.node()->accumulate(gx);
      }
    }
    if (b.requires_grad()) {
      Tensor gb({d.cout});
      double* pgb = gb.data();
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t co = 0; co < d.cout; ++co) pgb[co] += g[r * d.cout + co];
      }
      b.node()->accumulate(gb);
    }
  });
}

Variable batch_norm(const Variable& x, const Variable& gamma, const Variable& beta,
                    Tensor& running_mean, Tensor& running_var, double momentum, double eps,
                    bool use_batch_stats, bool update_running) {
  const Tensor& xv = x.value();
  TACO_CHECK(xv.rank() >= 2, ShapeError, "batch_norm: input rank must be >= 2");
  const std::int64_t c = xv.dim(-1);
  const std::int64_t m = xv.size() / c;
  TACO_CHECK(gamma.value().size() == c && beta.value().size() == c, ShapeError,
             "batch_norm: parameter size mismatch");
  TACO_CHECK(running_mean.size() == c && running_var.size() == c, ShapeError,
             "batch_norm: running buffer size mismatch");

  Tensor mean({c}), var({c});
  if (use_batch_stats) {
    double* pm = mean.data();
    double* pv = var.data();
    const double* px = xv.data();
    for (std::int64_t i = 0; i < m; ++i) {
      const double* row = px + i * c;
      for (std::int64_t j = 0; j < c; ++j) pm[j] += row[j];
    }
    for (std::int64_t j = 0; j < c; ++j) pm[j] /= static_cast<double>(m);
    for (std::int64_t i = 0; i < m; ++i) {
      const double* row = px + i * c;
      for (std::int64_t j = 0; j < c; ++j) {
        const double dlt = row[j] - pm[j];
        pv[j] += dlt * dlt;
      }
    }
    for (std::int64_t j = 0; j < c; ++j) pv[j] /= static_cast<double>(m);
    if (update_running) {
      double* prm = running_mean.data();
      double* prv = running_var.data();
      const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
      for (std::int64_t j = 0; j < c; ++j) {
        prm[j] = (1.0 - momentum) * prm[j] + momentum * pm[j];
        prv[j] = (1.0 - momentum) * prv[j] + momentum * pv[j] * unbias;
      }
    }
  } else {
    mean = running_mean.clone();
    var = running_var.clone();
  }

  Tensor inv_std({c});
  for (std::int64_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);

  Tensor xhat(xv.shape());
  Tensor y(xv.shape());
  {
    const double* px = xv.data();
    const double* pg = gamma.value().data();
    const double* pb = beta.value().data();
    double* ph = xhat.data();
    double* py = y.data();
    for (std::int64_t i = 0; i < m; ++i) {
      const double* row = px + i * c;
      double* hrow = ph + i * c;
      double* yrow = py + i * c;
      for (std::int64_t j = 0; j < c; ++j) {
        const double h = (row[j] - mean[j]) * inv_std[j];
        hrow[j] = h;
        yrow[j] = pg[j] * h + pb[j];
      }
    }
  }

  return make_op(std::move(y), {x, gamma, beta},
                 [x, gamma, beta, xhat, inv_std, m, c, use_batch_stats](Node& nd) {
    const double* g = nd.grad.data();
    const double* ph = xhat.data();
    const double* pg = gamma.value().data();

    Tensor ggamma({c}), gbeta({c});
    double* pgg = ggamma.data();
    double* pgb = gbeta.data();
    for (std::int64_t i = 0; i < m; ++i) {
      const double* grow = g + i * c;
      const double* hrow = ph + i * c;
      for (std::int64_t j = 0; j < c; ++j) {
        pgg[j] += grow[j] * hrow[j];
        pgb[j] += grow[j];
      }
    }
    if (gamma.requires_grad()) gamma.node()->accumulate(ggamma);
    if (beta.requires_grad()) beta.node()->accumulate(gbeta);

    if (x.requires_grad()) {
      Tensor gx(x.value().shape());
      double* pgx = gx.data();
      if (use_batch_stats) {
        // d xhat = g * gamma; dx folds the mean/var dependence:
        // dx = inv_std/m * (m*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
        const double invm = 1.0 / static_cast<double>(m);
        for (std::int64_t i = 0; i < m; ++i) {
          const double* grow = g + i * c;
          const double* hrow = ph + i * c;
          double* xrow = pgx + i * c;
          for (std::int64_t j = 0; j < c; ++j) {
            const double dxhat = grow[j] * pg[j];
            xrow[j] = inv_std[j] *
                      (dxhat - invm * pg[j] * pgb[j] - invm * hrow[j] * pg[j] * pgg[j]);
          }
        }
      } else {
        for (std::int64_t i = 0; i < m; ++i) {
          const double* grow = g + i * c;
          double* xrow = pgx + i * c;
          for (std::int64_t j = 0; j < c; ++j) xrow[j] = grow[j] * pg[j] * inv_std[j];
        }
      }
      x.node()->accumulate(gx);
    }
  });
}

Variable global_avg_pool(const Variable& x) {
  const Tensor& xv = x.value();
  TACO_CHECK(xv.rank() == 4, ShapeError, "global_avg_pool expects (N,H,W,C)");
  const std::int64_t n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  const std::int64_t hw = h * w;
  Tensor y({n, c});
  const double* px = xv.data();
  double* py = y.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const double* base = px + i * hw * c;
    double* yrow = py + i * c;
    for (std::int64_t p = 0; p < hw; ++p) {
      const double* row = base + p * c;
      for (std::int64_t j = 0; j < c; ++j) yrow[j] += row[j];
    }
    for (std::int64_t j = 0; j < c; ++j) yrow[j] /= static_cast<double>(hw);
  }
  return make_op(std::move(y), {x}, [x, n, hw, c](Node& nd) {
    Tensor gx(x.value().shape());
    const double* g = nd.grad.data();
    double* pgx = gx.data();
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::int64_t i = 0; i < n; ++i) {
      const double* grow = g + i * c;
      double* base = pgx + i * hw * c;
      for (std::int64_t p = 0; p < hw; ++p) {
        double* row = base + p * c;
        for (std::int64_t j = 0; j < c; ++j) row[j] = grow[j] * inv;
      }
    }
    x.node()->accumulate(gx);
  });
}

namespace {

struct PatchDims {
  std::int64_t n, h, w, c, gh, gw, t, d, cs;
  int patch, heads;
};

PatchDims patch_dims(const std::vector<std::int64_t>& shape, int patch, int heads) {
  PatchDims pd{};
  pd.n = shape[0];
  pd.h = shape[1];
  pd.w = shape[2];
  pd.c = shape[3];
  pd.patch = patch;
  pd.heads = heads;
  TACO_CHECK(patch > 0 && heads > 0, ShapeError, "patchify: patch and heads must be positive");
  TACO_CHECK(pd.h % patch == 0, ShapeError,
             "patchify: H=" + std::to_string(pd.h) + " not divisible by P=" + std::to_string(patch));
  TACO_CHECK(pd.w % patch == 0, ShapeError,
             "patchify: W=" + std::to_string(pd.w) + " not divisible by P=" + std::to_string(patch));
  TACO_CHECK(pd.c % heads == 0, ShapeError,
             "patchify: C=" + std::to_string(pd.c) + " not divisible by heads=" +
                 std::to_string(heads));
  pd.gh = pd.h / patch;
  pd.gw = pd.w / patch;
  pd.t = pd.gh * pd.gw;
  pd.cs = pd.c / heads;
  pd.d = static_cast<std::int64_t>(patch) * patch * pd.cs;
  return pd;
}

// seq[n, l, t, (dy*P+dx)*cs + cc] = x[n, gy*P+dy, gx*P+dx, l*cs + cc]
void scatter_patchify(const PatchDims& pd, const double* x, double* seq, bool forward) {
  for (std::int64_t n = 0; n < pd.n; ++n) {
    for (int l = 0; l < pd.heads; ++l) {
      for (std::int64_t gy = 0; gy < pd.gh; ++gy) {
        for (std::int64_t gx = 0; gx < pd.gw; ++gx) {
          const std::int64_t t = gy * pd.gw + gx;
          for (int dy = 0; dy < pd.patch; ++dy) {
            for (int dx = 0; dx < pd.patch; ++dx) {
              const std::int64_t src_px =
                  ((n * pd.h + gy * pd.patch + dy) * pd.w + gx * pd.patch + dx) * pd.c + l * pd.cs;
              const std::int64_t dst =
                  (((n * pd.heads + l) * pd.t + t) * pd.d) + (dy * pd.patch + dx) * pd.cs;
              if (forward) {
                std::memcpy(seq + dst, x + src_px, sizeof(double) * static_cast<std::size_t>(pd.cs));
              } else {
                std::memcpy(const_cast<double*>(x) + src_px, seq + dst,
                            sizeof(double) * static_cast<std::size_t>(pd.cs));
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Variable patchify(const Variable& x, int patch, int heads) {
  const Tensor& xv = x.value();
  TACO_CHECK(xv.rank() == 4, ShapeError, "patchify expects (N,H,W,C), got " + xv.shape_str());
  const PatchDims pd = patch_dims(xv.shape(), patch, heads);
  Tensor seq({pd.n, pd.heads, pd.t, pd.d});
  scatter_patchify(pd, xv.data(), seq.data(), true);
  return make_op(std::move(seq), {x}, [x, pd](Node& nd) {
    Tensor gx(x.value().shape());
    scatter_patchify(pd, gx.data(), const_cast<double*>(nd.grad.data()), false);
    x.node()->accumulate(gx);
  });
}

Variable unpatchify(const Variable& seq, std::int64_t h, std::int64_t w, int patch) {
  const Tensor& sv = seq.value();
  TACO_CHECK(sv.rank() == 4, ShapeError, "unpatchify expects (N,heads,T,D), got " + sv.shape_str());
  const std::int64_t n = sv.dim(0);
  const int heads = static_cast<int>(sv.dim(1));
  const std::int64_t t = sv.dim(2), d = sv.dim(3);
  TACO_CHECK(patch > 0 && d % (static_cast<std::int64_t>(patch) * patch) == 0, ShapeError,
             "unpatchify: token dim incompatible with patch size");
  const std::int64_t cs = d / (static_cast<std::int64_t>(patch) * patch);
  const std::int64_t c = cs * heads;
  TACO_CHECK(h % patch == 0 && w % patch == 0 && (h / patch) * (w / patch) == t, ShapeError,
             "unpatchify: sequence shape inconsistent with H=" + std::to_string(h) +
                 " W=" + std::to_string(w) + " P=" + std::to_string(patch));
  const PatchDims pd = patch_dims({n, h, w, c}, patch, heads);
  Tensor x({n, h, w, c});
  scatter_patchify(pd, x.data(), const_cast<double*>(sv.data()), false);
  return make_op(std::move(x), {seq}, [seq, pd](Node& nd) {
    Tensor gs({pd.n, pd.heads, pd.t, pd.d});
    scatter_patchify(pd, nd.grad.data(), gs.data(), true);
    seq.node()->accumulate(gs);
  });
}

Variable attention_scores(const Variable& q, const Variable& k, double scale) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  TACO_CHECK(qv.rank() == 4 && kv.rank() == 4 && qv.same_shape(kv), ShapeError,
             "attention_scores: Q/K must be identically shaped (B,h,T,D)");
  const std::int64_t b = qv.dim(0), heads = qv.dim(1), t = qv.dim(2), d = qv.dim(3);
  Tensor s({b, heads, t, t});
  for (std::int64_t i = 0; i < b * heads; ++i) {
    gemm(false, true, t, t, d, scale, qv.data() + i * t * d, d, kv.data() + i * t * d, d, 0.0,
         s.data() + i * t * t, t);
  }
  return make_op(std::move(s), {q, k}, [q, k, b, heads, t, d, scale](Node& nd) {
    const double* g = nd.grad.data();
    if (q.requires_grad()) {
      Tensor gq(q.value().shape());
      for (std::int64_t i = 0; i < b * heads; ++i) {
        gemm(false, false, t, d, t, scale, g + i * t * t, t, k.value().data() + i * t * d, d, 0.0,
             gq.data() + i * t * d, d);
      }
      q.node()->accumulate(gq);
    }
    if (k.requires_grad()) {
      Tensor gk(k.value().shape());
      for (std::int64_t i = 0; i < b * heads; ++i) {
        gemm(true, false, t, d, t, scale, g + i * t * t, t, q.value().data() + i * t * d, d, 0.0,
             gk.data() + i * t * d, d);
      }
      k.node()->accumulate(gk);
    }
  });
}

Variable softmax_lastdim(const Variable& x) {
  const Tensor& xv = x.value();
  TACO_CHECK(xv.rank() >= 1, ShapeError, "softmax_lastdim: rank must be >= 1");
  const std::int64_t cols = xv.dim(-1);
  const std::int64_t rows = xv.size() / cols;
  Tensor y(xv.shape());
  const double* px = xv.data();
  double* py = y.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* in = px + r * cols;
    double* out = py + r * cols;
    double mx = in[0];
    for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) {
      out[j] = std::exp(in[j] - mx);
      sum += out[j];
    }
    for (std::int64_t j = 0; j < cols; ++j) out[j] /= sum;
  }
  Tensor yk = y;  // keep probabilities for backward
  return make_op(std::move(y), {x}, [x, yk, rows, cols](Node& nd) {
    Tensor gx(x.value().shape());
    const double* g = nd.grad.data();
    const double* p = yk.data();
    double* pgx = gx.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* grow = g + r * cols;
      const double* prow = p + r * cols;
      double* xrow = pgx + r * cols;
      double dot = 0.0;
      for (std::int64_t j = 0; j < cols; ++j) dot += grow[j] * prow[j];
      for (std::int64_t j = 0; j < cols; ++j) xrow[j] = prow[j] * (grow[j] - dot);
    }
    x.node()->accumulate(gx);
  });
}

Variable attention_apply(const Variable& a, const Variable& v) {
  const Tensor& av = a.value();
  const Tensor& vv = v.value();
  TACO_CHECK(av.rank() == 4 && vv.rank() == 4, ShapeError, "attention_apply: rank-4 inputs");
  const std::int64_t b = av.dim(0), heads = av.dim(1), t = av.dim(2), d = vv.dim(3);
  TACO_CHECK(av.dim(3) == t && vv.dim(0) == b && vv.dim(1) == heads && vv.dim(2) == t, ShapeError,
             "attention_apply: A " + av.shape_str() + " vs V " + vv.shape_str());
  Tensor o({b, heads, t, d});
  for (std::int64_t i = 0; i < b * heads; ++i) {
    gemm(false, false, t, d, t, 1.0, av.data() + i * t * t, t, vv.data() + i * t * d, d, 0.0,
         o.data() + i * t * d, d);
  }
  return make_op(std::move(o), {a, v}, [a, v, b, heads, t, d](Node& nd) {
    const double* g = nd.grad.data();
    if (a.requires_grad()) {
      Tensor ga(a.value().shape());
      for (std::int64_t i = 0; i < b * heads; ++i) {
        gemm(false, true, t, t, d, 1.0, g + i * t * d, d, v.value().data() + i * t * d, d, 0.0,
             ga.data() + i * t * t, t);
      }
      a.node()->accumulate(ga);
    }
    if (v.requires_grad()) {
      Tensor gv(v.value().shape());
      for (std::int64_t i = 0; i < b * heads; ++i) {
        gemm(true, false, t, d, t, 1.0, a.value().data() + i * t * t, t, g + i * t * d, d, 0.0,
             gv.data() + i * t * d, d);
      }
      v.node()->accumulate(gv);
    }
  });
}

std::int64_t zero_norm_events() { return g_zero_norm_events.load(); }
void reset_zero_norm_events() { g_zero_norm_events.store(0); }

Variable rowwise_neg_cosine(const Variable& x, const Variable& y) {
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  TACO_CHECK(xv.rank() == 2 && yv.rank() == 2 && xv.same_shape(yv), ShapeError,
             "rowwise_neg_cosine: inputs must be identically shaped (N,d)");
  const std::int64_t n = xv.dim(0), dim = xv.dim(1);
  Tensor out({n});
  Tensor nx({n}), ny({n});
  for (std::int64_t i = 0; i < n; ++i) {
    const double* px = xv.data() + i * dim;
    const double* py = yv.data() + i * dim;
    double sx = 0.0, sy = 0.0, dot = 0.0;
    for (std::int64_t j = 0; j < dim; ++j) {
      sx += px[j] * px[j];
      sy += py[j] * py[j];
      dot += px[j] * py[j];
    }
    nx[i] = std::sqrt(sx);
    ny[i] = std::sqrt(sy);
    if (nx[i] == 0.0 || ny[i] == 0.0) {
      out[i] = 0.0;
      g_zero_norm_events.fetch_add(1);
    } else {
      out[i] = -dot / (nx[i] * ny[i]);
    }
  }
  return make_op(std::move(out), {x, y}, [x, y, nx, ny, n, dim](Node& nd) {
    const Tensor& d = nd.value;
    const double* g = nd.grad.data();
    Tensor gx(x.value().shape()), gy(y.value().shape());
    for (std::int64_t i = 0; i < n; ++i) {
      if (nx[i] == 0.0 || ny[i] == 0.0) continue;
      const double* px = x.value().data() + i * dim;
      const double* py = y.value().data() + i * dim;
      double* pgx = gx.data() + i * dim;
      double* pgy = gy.data() + i * dim;
      // with u=x/|x|, v=y/|y|, d=-u.v:  dd/dx = (-v - d u)/|x|
      for (std::int64_t j = 0; j < dim; ++j) {
        const double u = px[j] / nx[i];
        const double v = py[j] / ny[i];
        pgx[j] = g[i] * (-v - d[i] * u) / nx[i];
        pgy[j] = g[i] * (-u - d[i] * v) / ny[i];
      }
    }
    if (x.requires_grad()) x.node()->accumulate(gx);
    if (y.requires_grad()) y.node()->accumulate(gy);
  });
}

Variable kl_uniform(const Variable& p, double eps) {
  const Tensor& pv = p.value();
  TACO_CHECK(pv.rank() == 1, ShapeError, "kl_uniform expects a probability vector");
  const std::int64_t n = pv.dim(0);
  TACO_CHECK(n >= 2, ShapeError, "kl_uniform needs N >= 2");
  const double r = 1.0 / static_cast<double>(n);
  const double logn = std::log(static_cast<double>(n));
  double acc = 0.0;
  Tensor clamped({n});
  for (std::int64_t i = 0; i < n; ++i) {
    clamped[i] = std::max(pv[i], eps);
    acc += std::log(r / clamped[i]);
  }
  // cancellation can leave a tiny negative residue at the uniform point
  const double kl = std::max(0.0, acc * r / logn);
  return make_op(Tensor::scalar(kl), {p}, [p, clamped, n, r, logn](Node& nd) {
    Tensor gp({n});
    const double* pv2 = p.value().data();
    const double go = nd.grad[0];
    for (std::int64_t i = 0; i < n; ++i) {
      gp[i] = pv2[i] >= clamped[i] ? -go * r / (logn * clamped[i]) : 0.0;
    }
    p.node()->accumulate(gp);
  });
}

Variable cross_entropy_logits(const Variable& logits, const std::vector<int>& labels) {
  const Tensor& lv = logits.value();
  TACO_CHECK(lv.rank() == 2, ShapeError, "cross_entropy_logits expects (N,K)");
  const std::int64_t n = lv.dim(0), k = lv.dim(1);
  TACO_CHECK(static_cast<std::int64_t>(labels.size()) == n, ShapeError,
             "cross_entropy_logits: label count mismatch");
  Tensor probs({n, k});
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    TACO_CHECK(labels[static_cast<std::size_t>(i)] >= 0 &&
                   labels[static_cast<std::size_t>(i)] < k,
               DataError,
               "label " + std::to_string(labels[static_cast<std::size_t>(i)]) +
                   " out of range for sample " + std::to_string(i));
    const double* row = lv.data() + i * k;
    double* prow = probs.data() + i * k;
    double mx = row[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < k; ++j) {
      prow[j] = std::exp(row[j] - mx);
      sum += prow[j];
    }
    for (std::int64_t j = 0; j < k; ++j) prow[j] /= sum;
    loss -= std::log(std::max(prow[labels[static_cast<std::size_t>(i)]], 1e-300));
  }
  loss /= static_cast<double>(n);
  return make_op(Tensor::scalar(loss), {logits}, [logits, probs, labels, n, k](Node& nd) {
    Tensor g({n, k});
    const double go = nd.grad[0] / static_cast<double>(n);
    const double* pp = probs.data();
    double* pg = g.data();
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < k; ++j) {
        const double onehot = (j == labels[static_cast<std::size_t>(i)]) ? 1.0 : 0.0;
        pg[i * k + j] = go * (pp[i * k + j] - onehot);
      }
    }
    logits.node()->accumulate(g);
  });
}

}  // namespace ops
}  // namespace taco
