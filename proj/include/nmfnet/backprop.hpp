#ifndef NMFNET_BACKPROP_HPP_
#define NMFNET_BACKPROP_HPP_

#include <cstddef>

#include "nmfnet/nmf_layer.hpp"
#include "nmfnet/tensor.hpp"

namespace nmfnet {

// How a W-gradient is forwarded to the trainable matrix U.
enum class GradMode {
  kDirect,  // grad_u = grad_w, treating the normalization as fixed (default)
  kChain,   // exact chain rule through W = |U| / colsum|U|
};

GradMode parse_grad_mode(const std::string& name);

// Error pushed to the layer input, one step, evaluated at the state the final
// update was taken from: Phi_s = sum_i phi_i W_si h_i / R_s.
// phi_out is [M,I]; returns [M,S].
Tensor backprop_input(const Tensor& phi_out, const NmfForwardState& state, const Tensor& w);

// Weight gradient dw_si = h_i x_s / R_s^2 * (phi_i R_s - sum_j W_sj h_j phi_j),
// accumulated over rows in fixed order. Returns [S,I].
Tensor weight_grad(const Tensor& phi_out, const NmfForwardState& state, const Tensor& w);

Tensor chain_to_u(const Tensor& grad_w, const Tensor& u, GradMode mode);

struct UnrolledResult {
  Tensor phi_in;  // exact dL/dx, [M,S]
  Tensor grad_w;  // exact dL/dW, [S,I]
  Tensor grad_u;  // grad_w chained through derive_w
};

// Forward tape for the exact sweep: every iterate h(0..N-1) plus the output.
struct UnrolledTape {
  Tensor x;
  Tensor w;
  Tensor h_out;
  std::vector<Tensor> hist;
  double epsilon = 1.0;
};

UnrolledTape unrolled_forward(const Tensor& x, const Tensor& w, std::size_t n_iters,
                              double epsilon);
// Reverse sweep over a tape. grad_u is left empty unless `u` is non-null.
UnrolledResult unrolled_reverse(const UnrolledTape& tape, const Tensor& phi_out,
                                const Tensor* u = nullptr);

// Exact reverse-mode sweep through all N iterations; stores every h(t).
// Small instances only: M*S*I*N beyond `budget` multiply-adds throws.
UnrolledResult unrolled_backward(const Tensor& x, const Tensor& u, std::size_t n_iters,
                                 double epsilon, const Tensor& phi_out,
                                 std::size_t budget = std::size_t(1) << 33);

}  // namespace nmfnet

#endif  // NMFNET_BACKPROP_HPP_
