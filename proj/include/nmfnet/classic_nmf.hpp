#ifndef NMFNET_CLASSIC_NMF_HPP_
#define NMFNET_CLASSIC_NMF_HPP_

#include <cstdint>
#include <vector>

#include "nmfnet/tensor.hpp"

namespace nmfnet {

// Floor added to reconstruction denominators before dividing.
constexpr double kEpsDiv = 1e-20;

// Result of an unsupervised Lee-Seung factorization X ~ H W^T.
// X is [M,S], W is [S,I] (columns sum to 1 after normalization), H is [M,I].
struct Factorization {
  Tensor w;
  Tensor h;
  std::vector<double> divergence_history;  // KL at init, then after each round
};

// D(X || W H) = sum_{mu,s} X ln(X / sum_j W_sj h_j), 0*ln(0/q) := 0.
// Throws if some X > 0 has a zero reconstruction.
double kl_divergence(const Tensor& x, const Tensor& w, const Tensor& h);

// Multiplicative latent update: h_i <- h_i * sum_s W_si X_s / R_s.
Tensor update_h_classic(const Tensor& x, const Tensor& w, const Tensor& h);

// Standard Lee-Seung KL weight update:
// W_si <- W_si * (sum_mu h_i X_mus / R_mus) / (sum_mu h_i).
Tensor update_w_classic(const Tensor& x, const Tensor& w, const Tensor& h);

// Column normalization W_si <- W_si / sum_j W_ji. Returns the pre-normalization
// column sums so h can be rescaled to keep W H unchanged. Throws on a dead
// (all-zero) column.
std::vector<double> normalize_w(Tensor& w);

// Alternates h/W updates for `iters` rounds from a seeded positive start.
Factorization factorize(const Tensor& x, std::size_t latents, std::size_t iters,
                        std::uint64_t seed);

}  // namespace nmfnet

#endif  // NMFNET_CLASSIC_NMF_HPP_
