#ifndef NMFNET_TENSOR_HPP_
#define NMFNET_TENSOR_HPP_

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace nmfnet {

// Dense row-major tensor of doubles. Batch is always the leading axis.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), 0.0) {}
  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != data_.size())
      throw std::invalid_argument("Tensor: shape/data size mismatch");
  }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  double at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  // Throws if any entry is NaN or infinite.
  void check_finite(const std::string& who) const;

 private:
  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) {
      if (d == 0) throw std::invalid_argument("Tensor: zero extent");
      n *= d;
    }
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Geometry of a (grouped) 2-d convolution.
struct ConvSpec {
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  void validate() const;
  std::size_t out_h(std::size_t in_h) const {
    std::size_t padded = in_h + 2 * padding;
    if (padded < kernel_h) throw std::invalid_argument("ConvSpec: window larger than padded input");
    return (padded - kernel_h) / stride + 1;
  }
  std::size_t out_w(std::size_t in_w) const {
    std::size_t padded = in_w + 2 * padding;
    if (padded < kernel_w) throw std::invalid_argument("ConvSpec: window larger than padded input");
    return (padded - kernel_w) / stride + 1;
  }
  // Patch length per group: (in_channels/groups) * kernel_h * kernel_w.
  std::size_t patch_len() const { return (in_channels / groups) * kernel_h * kernel_w; }
};

// a[MxK] * b[KxN]; fixed left-to-right summation over K.
Tensor matmul(const Tensor& a, const Tensor& b);

// im2col over one channel group. x is [B,C,H,W]; channels [c0, c0+cg) are
// extracted. Result is [B, L, cg*kh*kw] with L = out_h*out_w, zero padding.
Tensor unfold(const Tensor& x, const ConvSpec& spec, std::size_t c0, std::size_t cg);
inline Tensor unfold(const Tensor& x, const ConvSpec& spec) {
  return unfold(x, spec, 0, x.dim(1));
}

// Adjoint of unfold: scatter-adds patch rows back into a [B,cg,H,W] map.
Tensor fold(const Tensor& cols, const ConvSpec& spec, std::size_t cg,
            std::size_t in_h, std::size_t in_w);

// Grouped cross-correlation. weight is [outC, inC/groups, kh, kw].
Tensor conv2d(const Tensor& x, const Tensor& weight, const ConvSpec& spec);
Tensor conv2d_grad_input(const Tensor& phi, const Tensor& weight, const ConvSpec& spec,
                         std::size_t in_h, std::size_t in_w);
Tensor conv2d_grad_weight(const Tensor& phi, const Tensor& x, const ConvSpec& spec);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& phi, const Tensor& x);

// Softmax over the last axis of a [B,C] tensor.
Tensor softmax(const Tensor& logits);

struct BatchNormCache {
  Tensor x_hat;   // normalized pre-affine activations
  Tensor mean;    // per-channel batch mean
  Tensor inv_std; // per-channel 1/sqrt(var+eps)
};

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

// Training-mode forward updates running stats in place and fills the cache.
Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        Tensor& running_mean, Tensor& running_var, BatchNormCache& cache);
Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const Tensor& running_mean, const Tensor& running_var);
// Returns phi_in; accumulates grad_gamma/grad_beta (must be pre-sized).
Tensor batch_norm_backward(const Tensor& phi, const Tensor& gamma, const BatchNormCache& cache,
                           Tensor& grad_gamma, Tensor& grad_beta);

// Serial reference kernels, kept as oracles for the parallel paths.
namespace ref {
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor unfold(const Tensor& x, const ConvSpec& spec, std::size_t c0, std::size_t cg);
Tensor conv2d(const Tensor& x, const Tensor& weight, const ConvSpec& spec);
}  // namespace ref

}  // namespace nmfnet

#endif  // NMFNET_TENSOR_HPP_
