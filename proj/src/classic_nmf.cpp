#include "nmfnet/classic_nmf.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "nmfnet/rng.hpp"

namespace nmfnet {

namespace {
void check_nonneg(const Tensor& t, const char* who) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i] < 0.0) throw std::invalid_argument(std::string(who) + ": negative entry");
}
}  // namespace

double kl_divergence(const Tensor& x, const Tensor& w, const Tensor& h) {
  const std::size_t m = x.dim(0), s = x.dim(1), i = w.dim(1);
  if (w.dim(0) != s || h.dim(0) != m || h.dim(1) != i)
    throw std::invalid_argument("kl_divergence: shape mismatch");
  double d = 0.0;
  for (std::size_t mu = 0; mu < m; ++mu) {
    for (std::size_t si = 0; si < s; ++si) {
      const double xv = x.at(mu, si);
      if (xv == 0.0) continue;  // 0*ln(0/q) = 0
      double r = 0.0;
      for (std::size_t j = 0; j < i; ++j) r += w.at(si, j) * h.at(mu, j);
      if (r <= 0.0)
        throw std::runtime_error("kl_divergence: zero reconstruction at positive X entry");
      d += xv * std::log(xv / r);
    }
  }
  return d;
}

Tensor update_h_classic(const Tensor& x, const Tensor& w, const Tensor& h) {
  check_nonneg(x, "update_h_classic(X)");
  check_nonneg(w, "update_h_classic(W)");
  check_nonneg(h, "update_h_classic(H)");
  const std::size_t m = x.dim(0), s = x.dim(1), i = w.dim(1);
  if (w.dim(0) != s || h.dim(0) != m || h.dim(1) != i)
    throw std::invalid_argument("update_h_classic: shape mismatch");
  Tensor out({m, i});
  std::vector<double> r(s);
  for (std::size_t mu = 0; mu < m; ++mu) {
    for (std::size_t si = 0; si < s; ++si) {
      double acc = 0.0;
      for (std::size_t j = 0; j < i; ++j) acc += w.at(si, j) * h.at(mu, j);
      if (acc <= 0.0 && x.at(mu, si) > 0.0)
        throw std::runtime_error("update_h_classic: zero denominator at positive X entry");
      r[si] = acc < kEpsDiv ? kEpsDiv : acc;
    }
    for (std::size_t j = 0; j < i; ++j) {
      double acc = 0.0;
      for (std::size_t si = 0; si < s; ++si) acc += w.at(si, j) * x.at(mu, si) / r[si];
      out.at(mu, j) = h.at(mu, j) * acc;
    }
  }
  return out;
}

Tensor update_w_classic(const Tensor& x, const Tensor& w, const Tensor& h) {
  const std::size_t m = x.dim(0), s = x.dim(1), i = w.dim(1);
  Tensor out({s, i});
  // ratio[mu][s] = X / R
  Tensor ratio({m, s});
  for (std::size_t mu = 0; mu < m; ++mu)
    for (std::size_t si = 0; si < s; ++si) {
      double r = 0.0;
      for (std::size_t j = 0; j < i; ++j) r += w.at(si, j) * h.at(mu, j);
      if (r < kEpsDiv) r = kEpsDiv;
      ratio.at(mu, si) = x.at(mu, si) / r;
    }
  for (std::size_t j = 0; j < i; ++j) {
    double hsum = 0.0;
    for (std::size_t mu = 0; mu < m; ++mu) hsum += h.at(mu, j);
    if (hsum < kEpsDiv) hsum = kEpsDiv;
    for (std::size_t si = 0; si < s; ++si) {
      double num = 0.0;
      for (std::size_t mu = 0; mu < m; ++mu) num += h.at(mu, j) * ratio.at(mu, si);
      out.at(si, j) = w.at(si, j) * num / hsum;
    }
  }
  return out;
}

std::vector<double> normalize_w(Tensor& w) {
  const std::size_t s = w.dim(0), i = w.dim(1);
  std::vector<double> sums(i, 0.0);
  for (std::size_t j = 0; j < i; ++j) {
    for (std::size_t si = 0; si < s; ++si) sums[j] += w.at(si, j);
    if (sums[j] <= 0.0)
      throw std::runtime_error("normalize_w: all-zero column " + std::to_string(j));
    for (std::size_t si = 0; si < s; ++si) w.at(si, j) /= sums[j];
  }
  return sums;
}

Factorization factorize(const Tensor& x, std::size_t latents, std::size_t iters,
                        std::uint64_t seed) {
  check_nonneg(x, "factorize(X)");
  if (latents == 0) throw std::invalid_argument("factorize: latents must be >= 1");
  const std::size_t m = x.dim(0), s = x.dim(1);
  Rng rng(seed);
  Factorization f;
  f.w = uniform_tensor({s, latents}, rng, 0.1, 1.1);
  f.h = uniform_tensor({m, latents}, rng, 0.1, 1.1);
  normalize_w(f.w);
  f.divergence_history.push_back(kl_divergence(x, f.w, f.h));
  for (std::size_t it = 0; it < iters; ++it) {
    f.h = update_h_classic(x, f.w, f.h);
    f.w = update_w_classic(x, f.w, f.h);
    const std::vector<double> sums = normalize_w(f.w);
    // compensate so the product W H is unchanged
    for (std::size_t j = 0; j < latents; ++j)
      for (std::size_t mu = 0; mu < m; ++mu) f.h.at(mu, j) *= sums[j];
    f.divergence_history.push_back(kl_divergence(x, f.w, f.h));
  }
  return f;
}

}  // namespace nmfnet
