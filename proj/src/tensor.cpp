#include "nmfnet/tensor.hpp"

#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nmfnet {

void Tensor::check_finite(const std::string& who) const {
  for (double v : data_)
    if (!std::isfinite(v)) throw std::runtime_error(who + ": non-finite value produced");
}

void ConvSpec::validate() const {
  if (kernel_h == 0 || kernel_w == 0 || stride == 0 || groups == 0 ||
      in_channels == 0 || out_channels == 0)
    throw std::invalid_argument("ConvSpec: zero field");
  if (in_channels % groups != 0 || out_channels % groups != 0)
    throw std::invalid_argument("ConvSpec: channels not divisible by groups");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: expects rank-2 tensors");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw std::invalid_argument("matmul: inner dimensions disagree (" +
                                std::to_string(k) + " vs " + std::to_string(b.dim(0)) + ")");
  Tensor c({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    double* crow = pc + i * n;
    const double* arow = pa + i * k;
    for (std::size_t p = 0; p < k; ++p) {  // left-to-right over K
      const double av = arow[p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor unfold(const Tensor& x, const ConvSpec& spec, std::size_t c0, std::size_t cg) {
  if (x.rank() != 4) throw std::invalid_argument("unfold: expects [B,C,H,W]");
  const std::size_t b = x.dim(0), h = x.dim(2), w = x.dim(3);
  if (c0 + cg > x.dim(1)) throw std::invalid_argument("unfold: channel range out of bounds");
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w), l = oh * ow;
  const std::size_t s = cg * spec.kernel_h * spec.kernel_w;
  Tensor out({b, l, s});
  const long pad = static_cast<long>(spec.padding);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(b); ++bi) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double* row = out.data() + ((bi * l + oy * ow + ox) * s);
        std::size_t idx = 0;
        for (std::size_t c = 0; c < cg; ++c) {
          for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
            const long iy = static_cast<long>(oy * spec.stride + ky) - pad;
            for (std::size_t kx = 0; kx < spec.kernel_w; ++kx, ++idx) {
              const long ix = static_cast<long>(ox * spec.stride + kx) - pad;
              if (iy >= 0 && iy < static_cast<long>(h) && ix >= 0 && ix < static_cast<long>(w))
                row[idx] = x.at(bi, c0 + c, iy, ix);
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor fold(const Tensor& cols, const ConvSpec& spec, std::size_t cg,
            std::size_t in_h, std::size_t in_w) {
  if (cols.rank() != 3) throw std::invalid_argument("fold: expects [B,L,S]");
  const std::size_t b = cols.dim(0), l = cols.dim(1), s = cols.dim(2);
  const std::size_t oh = spec.out_h(in_h), ow = spec.out_w(in_w);
  if (l != oh * ow || s != cg * spec.kernel_h * spec.kernel_w)
    throw std::invalid_argument("fold: shape inconsistent with spec");
  Tensor out({b, cg, in_h, in_w});
  const long pad = static_cast<long>(spec.padding);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(b); ++bi) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double* row = cols.data() + ((bi * l + oy * ow + ox) * s);
        std::size_t idx = 0;
        for (std::size_t c = 0; c < cg; ++c) {
          for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
            const long iy = static_cast<long>(oy * spec.stride + ky) - pad;
            for (std::size_t kx = 0; kx < spec.kernel_w; ++kx, ++idx) {
              const long ix = static_cast<long>(ox * spec.stride + kx) - pad;
              if (iy >= 0 && iy < static_cast<long>(in_h) && ix >= 0 && ix < static_cast<long>(in_w))
                out.at(bi, c, iy, ix) += row[idx];
            }
          }
        }
      }
    }
  }
  return out;
}

namespace {

// C[m,n] += A[m,k] * B[k,n], row-major, fixed left-to-right order over k.
// Rows of C are independent, so the result does not depend on thread count.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const ConvSpec& spec) {
  spec.validate();
  if (x.rank() != 4) throw std::invalid_argument("conv2d: expects [B,C,H,W]");
  if (x.dim(1) != spec.in_channels)
    throw std::invalid_argument("conv2d: input channels disagree with spec");
  const std::size_t cg = spec.in_channels / spec.groups;
  const std::size_t og = spec.out_channels / spec.groups;
  if (weight.rank() != 4 || weight.dim(0) != spec.out_channels || weight.dim(1) != cg ||
      weight.dim(2) != spec.kernel_h || weight.dim(3) != spec.kernel_w)
    throw std::invalid_argument("conv2d: weight shape disagrees with spec");
  const std::size_t b = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w), l = oh * ow;
  const std::size_t klen = cg * spec.kernel_h * spec.kernel_w;
  Tensor out({b, spec.out_channels, oh, ow});
  std::vector<double> wt(klen * og), y(b * l * og);
  for (std::size_t g = 0; g < spec.groups; ++g) {
    Tensor cols = unfold(x, spec, g * cg, cg);  // [B, L, klen]
    for (std::size_t j = 0; j < og; ++j)
      for (std::size_t p = 0; p < klen; ++p)
        wt[p * og + j] = weight.data()[(g * og + j) * klen + p];
    std::fill(y.begin(), y.end(), 0.0);
    gemm_acc(cols.data(), wt.data(), y.data(), b * l, klen, og);
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t p = 0; p < l; ++p)
        for (std::size_t j = 0; j < og; ++j)
          out.data()[((bi * spec.out_channels + g * og + j) * l) + p] =
              y[(bi * l + p) * og + j];
  }
  return out;
}

Tensor conv2d_grad_input(const Tensor& phi, const Tensor& weight, const ConvSpec& spec,
                         std::size_t in_h, std::size_t in_w) {
  const std::size_t b = phi.dim(0);
  const std::size_t cg = spec.in_channels / spec.groups;
  const std::size_t og = spec.out_channels / spec.groups;
  const std::size_t oh = spec.out_h(in_h), ow = spec.out_w(in_w);
  if (phi.dim(1) != spec.out_channels || phi.dim(2) != oh || phi.dim(3) != ow)
    throw std::invalid_argument("conv2d_grad_input: phi shape disagrees with spec");
  Tensor gx({b, spec.in_channels, in_h, in_w});
  const std::size_t l = oh * ow;
  const std::size_t klen = cg * spec.kernel_h * spec.kernel_w;
  std::vector<double> phig(b * l * og);
  for (std::size_t g = 0; g < spec.groups; ++g) {
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t j = 0; j < og; ++j)
        for (std::size_t p = 0; p < l; ++p)
          phig[(bi * l + p) * og + j] = phi.data()[(bi * spec.out_channels + g * og + j) * l + p];
    Tensor cols_grad({b, l, klen});
    gemm_acc(phig.data(), weight.data() + g * og * klen, cols_grad.data(), b * l, og, klen);
    Tensor slice = fold(cols_grad, spec, cg, in_h, in_w);
    for (std::size_t bi = 0; bi < b; ++bi)
      std::copy_n(slice.data() + bi * cg * in_h * in_w, cg * in_h * in_w,
                  gx.data() + (bi * spec.in_channels + g * cg) * in_h * in_w);
  }
  return gx;
}

Tensor conv2d_grad_weight(const Tensor& phi, const Tensor& x, const ConvSpec& spec) {
  const std::size_t b = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t cg = spec.in_channels / spec.groups;
  const std::size_t og = spec.out_channels / spec.groups;
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w);
  Tensor gw({spec.out_channels, cg, spec.kernel_h, spec.kernel_w});
  const std::size_t l = oh * ow;
  const std::size_t klen = cg * spec.kernel_h * spec.kernel_w;
  std::vector<double> phit(og * b * l);
  for (std::size_t g = 0; g < spec.groups; ++g) {
    Tensor cols = unfold(x, spec, g * cg, cg);  // [B, L, klen]
    for (std::size_t j = 0; j < og; ++j)
      for (std::size_t bi = 0; bi < b; ++bi)
        std::copy_n(phi.data() + (bi * spec.out_channels + g * og + j) * l, l,
                    phit.data() + (j * b + bi) * l);
    gemm_acc(phit.data(), cols.data(), gw.data() + g * og * klen, og, b * l, klen);
  }
  return gw;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  double* p = y.data();
  for (std::size_t i = 0; i < y.size(); ++i) p[i] = p[i] > 0.0 ? p[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& phi, const Tensor& x) {
  if (!phi.same_shape(x)) throw std::invalid_argument("relu_backward: shape mismatch");
  Tensor g = phi;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (x[i] <= 0.0) g[i] = 0.0;
  return g;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax: expects [B,C]");
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  Tensor y({b, c});
  for (std::size_t i = 0; i < b; ++i) {
    double mx = logits.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(logits.at(i, j) - mx);
      y.at(i, j) = e;
      z += e;
    }
    for (std::size_t j = 0; j < c; ++j) y.at(i, j) /= z;
  }
  return y;
}

namespace {
void check_bn_input(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("batch_norm: expects [B,C,H,W]");
  if (x.dim(0) == 0) throw std::invalid_argument("batch_norm: empty batch");
}
}  // namespace

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        Tensor& running_mean, Tensor& running_var, BatchNormCache& cache) {
  check_bn_input(x);
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const double n = static_cast<double>(b * h * w);
  cache.mean = Tensor({c});
  cache.inv_std = Tensor({c});
  Tensor out({b, c, h, w});
  cache.x_hat = Tensor({b, c, h, w});
  for (std::size_t ci = 0; ci < c; ++ci) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) {
          const double v = x.at(bi, ci, y, xx);
          sum += v;
          sq += v * v;
        }
    const double mean = sum / n;
    const double var = std::max(sq / n - mean * mean, 0.0);
    const double inv = 1.0 / std::sqrt(var + kBatchNormEps);
    cache.mean[ci] = mean;
    cache.inv_std[ci] = inv;
    running_mean[ci] = (1.0 - kBatchNormMomentum) * running_mean[ci] + kBatchNormMomentum * mean;
    running_var[ci] = (1.0 - kBatchNormMomentum) * running_var[ci] + kBatchNormMomentum * var;
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) {
          const double xh = (x.at(bi, ci, y, xx) - mean) * inv;
          cache.x_hat.at(bi, ci, y, xx) = xh;
          out.at(bi, ci, y, xx) = gamma[ci] * xh + beta[ci];
        }
  }
  return out;
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const Tensor& running_mean, const Tensor& running_var) {
  check_bn_input(x);
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({b, c, h, w});
  for (std::size_t ci = 0; ci < c; ++ci) {
    const double inv = 1.0 / std::sqrt(running_var[ci] + kBatchNormEps);
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx)
          out.at(bi, ci, y, xx) = gamma[ci] * (x.at(bi, ci, y, xx) - running_mean[ci]) * inv + beta[ci];
  }
  return out;
}

Tensor batch_norm_backward(const Tensor& phi, const Tensor& gamma, const BatchNormCache& cache,
                           Tensor& grad_gamma, Tensor& grad_beta) {
  const std::size_t b = phi.dim(0), c = phi.dim(1), h = phi.dim(2), w = phi.dim(3);
  const double n = static_cast<double>(b * h * w);
  Tensor gx({b, c, h, w});
  for (std::size_t ci = 0; ci < c; ++ci) {
    double sum_phi = 0.0, sum_phi_xhat = 0.0;
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) {
          const double p = phi.at(bi, ci, y, xx);
          sum_phi += p;
          sum_phi_xhat += p * cache.x_hat.at(bi, ci, y, xx);
        }
    grad_gamma[ci] += sum_phi_xhat;
    grad_beta[ci] += sum_phi;
    const double g = gamma[ci], inv = cache.inv_std[ci];
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) {
          const double p = phi.at(bi, ci, y, xx);
          const double xh = cache.x_hat.at(bi, ci, y, xx);
          gx.at(bi, ci, y, xx) = g * inv * (p - sum_phi / n - xh * sum_phi_xhat / n);
        }
  }
  return gx;
}

namespace ref {

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw std::invalid_argument("ref::matmul: inner dimensions disagree");
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a.at(i, p) * b.at(p, j);
      c.at(i, j) = acc;
    }
  return c;
}

Tensor unfold(const Tensor& x, const ConvSpec& spec, std::size_t c0, std::size_t cg) {
  const std::size_t b = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w), l = oh * ow;
  const std::size_t s = cg * spec.kernel_h * spec.kernel_w;
  Tensor out({b, l, s});
  const long pad = static_cast<long>(spec.padding);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t idx = 0;
        for (std::size_t c = 0; c < cg; ++c)
          for (std::size_t ky = 0; ky < spec.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < spec.kernel_w; ++kx, ++idx) {
              const long iy = static_cast<long>(oy * spec.stride + ky) - pad;
              const long ix = static_cast<long>(ox * spec.stride + kx) - pad;
              double v = 0.0;
              if (iy >= 0 && iy < static_cast<long>(h) && ix >= 0 && ix < static_cast<long>(w))
                v = x.at(bi, c0 + c, iy, ix);
              out.data()[(bi * l + oy * ow + ox) * s + idx] = v;
            }
      }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const ConvSpec& spec) {
  // im2col composition: per group, patches x weight-slice.
  const std::size_t b = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w), l = oh * ow;
  const std::size_t cg = spec.in_channels / spec.groups;
  const std::size_t og = spec.out_channels / spec.groups;
  const std::size_t klen = cg * spec.kernel_h * spec.kernel_w;
  Tensor out({b, spec.out_channels, oh, ow});
  for (std::size_t g = 0; g < spec.groups; ++g) {
    Tensor cols = ref::unfold(x, spec, g * cg, cg);
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t oc = 0; oc < og; ++oc) {
        const double* wrow = weight.data() + (g * og + oc) * klen;
        for (std::size_t p = 0; p < l; ++p) {
          const double* row = cols.data() + (bi * l + p) * klen;
          double acc = 0.0;
          for (std::size_t i = 0; i < klen; ++i) acc += wrow[i] * row[i];
          out.data()[((bi * spec.out_channels + g * og + oc) * oh * ow) + p] = acc;
        }
      }
  }
  return out;
}

}  // namespace ref

}  // namespace nmfnet
