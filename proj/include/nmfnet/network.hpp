#ifndef NMFNET_NETWORK_HPP_
#define NMFNET_NETWORK_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nmfnet/backprop.hpp"
#include "nmfnet/nmf_layer.hpp"
#include "nmfnet/tensor.hpp"

namespace nmfnet {

enum class BlockKind { kCnn, kCnmf };

struct BlockConfig {
  BlockKind kind = BlockKind::kCnmf;
  bool mix_1x1 = true;
  std::size_t out_channels = 32;
  std::size_t kernel_h = 5, kernel_w = 5;
  std::size_t stride = 2, padding = 2;
  std::size_t groups_main = 1, groups_mix = 1;
  bool batch_norm = true;
  bool relu = true;
  std::size_t nmf_iters = 75;  // ignored when kind == kCnn
  double nmf_epsilon = 1.0;
};

struct NetworkConfig {
  std::vector<BlockConfig> blocks;
  std::size_t width_multiplier = 1;
  std::size_t in_channels = 3, in_h = 28, in_w = 28;
  std::size_t class_count = 10;
  GradMode grad_mode = GradMode::kDirect;
};

// Fig-4 style presets: cnn, cnmf, cnn_mix, cnmf_mix. Channel progression
// 32->64->96->class_count scaled by `width` (final block stays class_count);
// `groups` applies per layer where it divides both channel counts, else 1.
NetworkConfig preset_config(const std::string& preset, std::size_t width = 1,
                            std::size_t groups = 1, std::size_t nmf_iters = 75);

struct LossConfig {
  double alpha = 0.5;
};

// L = mean_b [ -sum_i y_i log(yhat_i) + alpha * sum_i (y_i - yhat_i)^2 ].
double loss_value(const Tensor& logits, const std::vector<int>& labels, const LossConfig& cfg);
Tensor loss_grad(const Tensor& logits, const std::vector<int>& labels, const LossConfig& cfg);

struct ParamRef {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
  bool frozen = false;
};

struct ConvLayer {
  ConvSpec spec;
  Tensor w;       // [outC, inC/groups, kh, kw]
  Tensor grad_w;
  Tensor cache_in;
  Tensor forward(const Tensor& x, bool training);
  Tensor backward(const Tensor& phi);
};

struct NmfConvLayer {
  ConvSpec spec;
  NmfParams params;  // u trainable, w derived per forward
  Tensor grad_u;
  std::size_t n_iters = 75;
  double epsilon = 1.0;
  GradMode grad_mode = GradMode::kDirect;
  bool frozen = false;
  std::vector<NmfForwardState> states;  // per group, training mode only
  std::size_t cache_in_h = 0, cache_in_w = 0, cache_batch = 0;
  Tensor forward(const Tensor& x, bool training);
  Tensor backward(const Tensor& phi);
};

struct BnLayer {
  Tensor gamma, beta, running_mean, running_var;
  Tensor grad_gamma, grad_beta;
  BatchNormCache cache;
  Tensor forward(const Tensor& x, bool training);
  Tensor backward(const Tensor& phi);
};

struct Block {
  BlockConfig cfg;
  std::optional<ConvLayer> conv;     // kind == kCnn
  std::optional<NmfConvLayer> nmf;   // kind == kCnmf
  std::optional<ConvLayer> mix;
  std::optional<BnLayer> bn;
  Tensor cache_pre_relu;
  Tensor forward(const Tensor& x, bool training, std::size_t index);
  Tensor backward(const Tensor& phi);
};

class Model {
 public:
  Model() = default;
  const NetworkConfig& config() const { return cfg_; }
  std::vector<Block>& blocks() { return blocks_; }
  const std::vector<Block>& blocks() const { return blocks_; }

  // [B,C,H,W] -> [B,class_count] logits.
  Tensor forward(const Tensor& x, bool training);
  // Fills parameter gradients; returns phi at the network input.
  Tensor backward(const Tensor& phi_logits);
  std::vector<ParamRef> parameters();
  std::size_t parameter_count() const;
  void zero_grads();

  friend Model build(const NetworkConfig& cfg, std::uint64_t seed);

 private:
  NetworkConfig cfg_;
  std::vector<Block> blocks_;
  bool forward_done_ = false;
};

// Validates the spatial path (must end at 1x1) and initializes parameters.
Model build(const NetworkConfig& cfg, std::uint64_t seed);

}  // namespace nmfnet

#endif  // NMFNET_NETWORK_HPP_
