#include "nmfnet/backprop.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace nmfnet {

GradMode parse_grad_mode(const std::string& name) {
  if (name == "direct") return GradMode::kDirect;
  if (name == "chain") return GradMode::kChain;
  throw std::invalid_argument("unknown grad mode '" + name + "' (direct|chain)");
}

Tensor backprop_input(const Tensor& phi_out, const NmfForwardState& state, const Tensor& w) {
  const std::size_t m = state.x.dim(0), s = state.x.dim(1), i = w.dim(1);
  if (phi_out.dim(0) != m || phi_out.dim(1) != i)
    throw std::invalid_argument("backprop_input: phi shape disagrees with stored state");
  Tensor phi_in({m, s});
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t row = 0; row < static_cast<std::ptrdiff_t>(m); ++row) {
    const double* hp = state.h_pre.data() + row * i;
    const double* ph = phi_out.data() + row * i;
    const double* rr = state.r.data() + row * s;
    double* out = phi_in.data() + row * s;
    for (std::size_t si = 0; si < s; ++si) {
      const double* wr = w.data() + si * i;
      double acc = 0.0;
      for (std::size_t j = 0; j < i; ++j) acc += ph[j] * wr[j] * hp[j];
      out[si] = acc / rr[si];
    }
  }
  phi_in.check_finite("backprop_input");
  return phi_in;
}

Tensor weight_grad(const Tensor& phi_out, const NmfForwardState& state, const Tensor& w) {
  const std::size_t m = state.x.dim(0), s = state.x.dim(1), i = w.dim(1);
  if (phi_out.dim(0) != m || phi_out.dim(1) != i)
    throw std::invalid_argument("weight_grad: phi shape disagrees with stored state");
  Tensor gw({s, i});
  // fixed-size chunks accumulated in index order: result independent of the
  // number of threads
  const std::size_t chunk = 256;
  const std::size_t n_chunks = (m + chunk - 1) / chunk;
  std::vector<Tensor> partial(n_chunks, Tensor({s, i}));
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(n_chunks); ++c) {
    Tensor& acc = partial[c];
    const std::size_t lo = c * chunk, hi = std::min(m, lo + chunk);
    for (std::size_t row = lo; row < hi; ++row) {
      const double* hp = state.h_pre.data() + row * i;
      const double* ph = phi_out.data() + row * i;
      const double* xr = state.x.data() + row * s;
      const double* rr = state.r.data() + row * s;
      for (std::size_t si = 0; si < s; ++si) {
        if (xr[si] == 0.0) continue;
        const double* wr = w.data() + si * i;
        double p = 0.0;  // sum_j W_sj h_j phi_j
        for (std::size_t j = 0; j < i; ++j) p += wr[j] * hp[j] * ph[j];
        const double xs_over_r = xr[si] / rr[si];
        const double p_over_r = p / rr[si];
        double* grow = acc.data() + si * i;
        for (std::size_t j = 0; j < i; ++j)
          grow[j] += hp[j] * xs_over_r * (ph[j] - p_over_r);
      }
    }
  }
  for (std::size_t c = 0; c < n_chunks; ++c)
    for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += partial[c][k];
  gw.check_finite("weight_grad");
  return gw;
}

Tensor chain_to_u(const Tensor& grad_w, const Tensor& u, GradMode mode) {
  if (!grad_w.same_shape(u)) throw std::invalid_argument("chain_to_u: shape mismatch");
  if (mode == GradMode::kDirect) return grad_w;
  const std::size_t s = u.dim(0), i = u.dim(1);
  Tensor w = derive_w(u);
  Tensor gu({s, i});
  for (std::size_t j = 0; j < i; ++j) {
    double colsum = 0.0, wdot = 0.0;
    for (std::size_t si = 0; si < s; ++si) {
      colsum += std::fabs(u.at(si, j));
      wdot += w.at(si, j) * grad_w.at(si, j);
    }
    for (std::size_t si = 0; si < s; ++si) {
      const double sign = u.at(si, j) > 0.0 ? 1.0 : (u.at(si, j) < 0.0 ? -1.0 : 0.0);
      gu.at(si, j) = sign / colsum * (grad_w.at(si, j) - wdot);
    }
  }
  return gu;
}

UnrolledTape unrolled_forward(const Tensor& x, const Tensor& w, std::size_t n_iters,
                              double epsilon) {
  if (n_iters == 0) throw std::invalid_argument("unrolled_forward: n_iters must be >= 1");
  const std::size_t m = x.dim(0), s = x.dim(1), i = w.dim(1);
  if (w.dim(0) != s) throw std::invalid_argument("unrolled_forward: x/w shape mismatch");
  UnrolledTape tape;
  tape.x = x;
  tape.w = w;
  tape.epsilon = epsilon;
  tape.hist.reserve(n_iters);
  Tensor h = Tensor::full({m, i}, 1.0 / static_cast<double>(i));
  for (std::size_t t = 0; t < n_iters; ++t) {
    tape.hist.push_back(h);
    for (std::size_t row = 0; row < m; ++row) {
      const double* xr = x.data() + row * s;
      double* hr = h.data() + row * i;
      const double* hp = tape.hist.back().data() + row * i;
      std::vector<double> a(i, 0.0);
      for (std::size_t si = 0; si < s; ++si) {
        const double* wr = w.data() + si * i;
        double acc = 0.0;
        for (std::size_t j = 0; j < i; ++j) acc += wr[j] * hp[j];
        if (acc < kEpsDiv) acc = kEpsDiv;
        const double q = xr[si] / acc;
        for (std::size_t j = 0; j < i; ++j) a[j] += q * wr[j];
      }
      for (std::size_t j = 0; j < i; ++j) hr[j] = hp[j] + epsilon * hp[j] * (a[j] - 1.0);
    }
  }
  tape.h_out = std::move(h);
  return tape;
}

UnrolledResult unrolled_reverse(const UnrolledTape& tape, const Tensor& phi_out,
                                const Tensor* u) {
  const Tensor& x = tape.x;
  const Tensor& w = tape.w;
  const double epsilon = tape.epsilon;
  const std::size_t n_iters = tape.hist.size();
  const std::size_t m = x.dim(0), s = x.dim(1), i = w.dim(1);
  if (phi_out.dim(0) != m || phi_out.dim(1) != i)
    throw std::invalid_argument("unrolled_reverse: phi shape mismatch");
  const std::vector<Tensor>& hist = tape.hist;

  UnrolledResult res;
  res.phi_in = Tensor({m, s});
  res.grad_w = Tensor({s, i});
  // reverse sweep, rows independent; grad_w accumulated in fixed row order
  for (std::size_t row = 0; row < m; ++row) {
    const double* xr = x.data() + row * s;
    std::vector<double> gh(phi_out.data() + row * i, phi_out.data() + (row + 1) * i);
    std::vector<double> gh_next(i), pvec(s), rvec(s);
    for (std::size_t t = n_iters; t >= 1; --t) {
      const double* hp = hist[t - 1].data() + row * i;
      // R_s and P_s = sum_i W_si gh_i hp_i at h(t-1)
      std::vector<double> a(i, 0.0);
      for (std::size_t si = 0; si < s; ++si) {
        const double* wr = w.data() + si * i;
        double racc = 0.0, pacc = 0.0;
        for (std::size_t j = 0; j < i; ++j) {
          racc += wr[j] * hp[j];
          pacc += wr[j] * gh[j] * hp[j];
        }
        if (racc < kEpsDiv) racc = kEpsDiv;
        rvec[si] = racc;
        pvec[si] = pacc;
        const double q = xr[si] / racc;
        for (std::size_t j = 0; j < i; ++j) a[j] += q * wr[j];
      }
      for (std::size_t si = 0; si < s; ++si) {
        const double eps_p_over_r = epsilon * pvec[si] / rvec[si];
        res.phi_in.data()[row * s + si] += eps_p_over_r;
        const double coef = epsilon * xr[si] / rvec[si];
        const double p_over_r = pvec[si] / rvec[si];
        double* grow = res.grad_w.data() + si * i;
        for (std::size_t j = 0; j < i; ++j)
          grow[j] += coef * hp[j] * (gh[j] - p_over_r);
      }
      // gh <- dL/dh(t-1)
      for (std::size_t j = 0; j < i; ++j)
        gh_next[j] = gh[j] * (1.0 + epsilon * (a[j] - 1.0));
      for (std::size_t si = 0; si < s; ++si) {
        const double coef = epsilon * xr[si] * pvec[si] / (rvec[si] * rvec[si]);
        const double* wr = w.data() + si * i;
        for (std::size_t j = 0; j < i; ++j) gh_next[j] -= coef * wr[j];
      }
      gh = gh_next;
    }
  }
  if (u) res.grad_u = chain_to_u(res.grad_w, *u, GradMode::kChain);
  res.phi_in.check_finite("unrolled_reverse");
  return res;
}

UnrolledResult unrolled_backward(const Tensor& x, const Tensor& u, std::size_t n_iters,
                                 double epsilon, const Tensor& phi_out, std::size_t budget) {
  const std::size_t m = x.dim(0), s = x.dim(1), i = u.dim(1);
  if (u.dim(0) != s) throw std::invalid_argument("unrolled_backward: x/u shape mismatch");
  if (m * s * i * n_iters > budget)
    throw std::runtime_error("unrolled_backward: instance exceeds the unroll budget");
  const Tensor w = derive_w(u);
  const UnrolledTape tape = unrolled_forward(x, w, n_iters, epsilon);
  return unrolled_reverse(tape, phi_out, &u);
}

}  // namespace nmfnet
