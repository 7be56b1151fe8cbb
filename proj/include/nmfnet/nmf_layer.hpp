#ifndef NMFNET_NMF_LAYER_HPP_
#define NMFNET_NMF_LAYER_HPP_

#include <cstdint>
#include <vector>

#include "nmfnet/classic_nmf.hpp"
#include "nmfnet/tensor.hpp"

namespace nmfnet {

// Trainable parameters of an NMF layer. The optimizer steps on u; w is
// derived from u at every forward pass and never updated directly.
struct NmfParams {
  Tensor u;  // [S,I], unconstrained
  Tensor w;  // [S,I], |u| column-normalized, cached by last derive
};

// W_si = |U_si| / sum_k |U_ki|. Throws naming the dead latent on a zero column.
Tensor derive_w(const Tensor& u);

// Scales each row of a [...,S] tensor to sum 1; an all-zero row maps to the
// uniform vector 1/S. Throws on negative entries.
Tensor normalize_input(const Tensor& x);

// State retained after the iterative forward, sized for the backward pass.
// h_pre is the state the final update was taken from; r holds the final
// update's reconstruction denominators R_s = sum_j W_sj h_pre_j (floored).
struct NmfForwardState {
  Tensor x;      // [M,S] input patches as seen by the iteration
  Tensor h_pre;  // [M,I] h(N-1)
  Tensor h;      // [M,I] h(N), the layer output
  Tensor r;      // [M,S]
  std::size_t n_iters = 0;
  double epsilon = 1.0;
};

// One update: h'_i = h_i + eps*h_i*(sum_s x_s W_si / R_s - 1), R floored.
// x is [M,S], w [S,I], h [M,I].
Tensor h_step(const Tensor& x, const Tensor& w, const Tensor& h, double epsilon);

// Runs h(0)=1/I through n_iters updates; keeps only the final state.
NmfForwardState nmf_forward(const Tensor& x, const Tensor& w, std::size_t n_iters,
                            double epsilon);

// Convolutional NMF: unfold per group, normalize each patch, run the shared
// per-position NMF, reshape h back into a [B,outC,H',W'] map. Per-group final
// states land in `states` when non-null (needed for the network backward).
Tensor cnmf_forward(const Tensor& x, const Tensor& w, const ConvSpec& spec,
                    std::size_t n_iters, double epsilon,
                    std::vector<NmfForwardState>* states = nullptr);

}  // namespace nmfnet

#endif  // NMFNET_NMF_LAYER_HPP_
