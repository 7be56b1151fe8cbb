#include "nmfnet/network.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

#include "nmfnet/rng.hpp"

namespace nmfnet {

namespace {
constexpr double kLogClamp = 1e-12;

std::size_t effective_groups(std::size_t requested, std::size_t in_c, std::size_t out_c) {
  if (requested > 1 && in_c % requested == 0 && out_c % requested == 0) return requested;
  return 1;
}
}  // namespace

NetworkConfig preset_config(const std::string& preset, std::size_t width,
                            std::size_t groups, std::size_t nmf_iters) {
  BlockKind kind;
  bool mix;
  if (preset == "cnn") {
    kind = BlockKind::kCnn;
    mix = false;
  } else if (preset == "cnmf") {
    kind = BlockKind::kCnmf;
    mix = false;
  } else if (preset == "cnn_mix") {
    kind = BlockKind::kCnn;
    mix = true;
  } else if (preset == "cnmf_mix") {
    kind = BlockKind::kCnmf;
    mix = true;
  } else {
    throw std::invalid_argument("unknown preset '" + preset +
                                "' (cnn|cnmf|cnn_mix|cnmf_mix)");
  }
  NetworkConfig cfg;
  cfg.width_multiplier = width;
  const std::size_t base[4] = {32, 64, 96, 10};
  // spatial path 28 -> 14 -> 7 -> 3 -> 1
  const std::size_t kernels[4] = {5, 5, 5, 3};
  const std::size_t strides[4] = {2, 2, 2, 1};
  const std::size_t paddings[4] = {2, 2, 1, 0};
  std::size_t in_c = cfg.in_channels;
  for (int b = 0; b < 4; ++b) {
    BlockConfig bc;
    bc.kind = kind;
    bc.mix_1x1 = mix;
    bc.out_channels = (b == 3) ? cfg.class_count : base[b] * width;
    bc.kernel_h = bc.kernel_w = kernels[b];
    bc.stride = strides[b];
    bc.padding = paddings[b];
    bc.groups_main = effective_groups(groups, in_c, bc.out_channels);
    bc.groups_mix = effective_groups(groups, bc.out_channels, bc.out_channels);
    bc.batch_norm = b < 2;
    bc.relu = b < 3;  // final block output feeds the classifier directly
    bc.nmf_iters = nmf_iters;
    bc.nmf_epsilon = 1.0;
    cfg.blocks.push_back(bc);
    in_c = bc.out_channels;
  }
  return cfg;
}

double loss_value(const Tensor& logits, const std::vector<int>& labels, const LossConfig& cfg) {
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (labels.size() != b) throw std::invalid_argument("loss: label count mismatch");
  const Tensor yhat = softmax(logits);
  double total = 0.0;
  for (std::size_t bi = 0; bi < b; ++bi) {
    const int lab = labels[bi];
    if (lab < 0 || static_cast<std::size_t>(lab) >= c)
      throw std::invalid_argument("loss: label out of range");
    total -= std::log(std::max(yhat.at(bi, lab), kLogClamp));
    double mse = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double y = (static_cast<std::size_t>(lab) == j) ? 1.0 : 0.0;
      const double d = y - yhat.at(bi, j);
      mse += d * d;
    }
    total += cfg.alpha * mse;
  }
  return total / static_cast<double>(b);
}

Tensor loss_grad(const Tensor& logits, const std::vector<int>& labels, const LossConfig& cfg) {
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  const Tensor yhat = softmax(logits);
  Tensor g({b, c});
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t bi = 0; bi < b; ++bi) {
    const std::size_t lab = static_cast<std::size_t>(labels[bi]);
    // <(yhat - y), yhat> for the softmax chain of the MSE term
    double dot = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double y = (lab == j) ? 1.0 : 0.0;
      dot += (yhat.at(bi, j) - y) * yhat.at(bi, j);
    }
    for (std::size_t j = 0; j < c; ++j) {
      const double y = (lab == j) ? 1.0 : 0.0;
      const double ce = yhat.at(bi, j) - y;
      const double mse = 2.0 * yhat.at(bi, j) * ((yhat.at(bi, j) - y) - dot);
      g.at(bi, j) = inv_b * (ce + cfg.alpha * mse);
    }
  }
  return g;
}

Tensor ConvLayer::forward(const Tensor& x, bool training) {
  if (training) cache_in = x;
  return conv2d(x, w, spec);
}

Tensor ConvLayer::backward(const Tensor& phi) {
  if (cache_in.size() == 0) throw std::runtime_error("conv backward without forward state");
  Tensor gw = conv2d_grad_weight(phi, cache_in, spec);
  for (std::size_t k = 0; k < gw.size(); ++k) grad_w[k] += gw[k];
  return conv2d_grad_input(phi, w, spec, cache_in.dim(2), cache_in.dim(3));
}

Tensor NmfConvLayer::forward(const Tensor& x, bool training) {
#ifndef NDEBUG
  for (std::size_t k = 0; k < x.size(); ++k) assert(x[k] >= 0.0 && "NMF layer input must be non-negative");
#endif
  params.w = derive_w(params.u);
  cache_in_h = x.dim(2);
  cache_in_w = x.dim(3);
  cache_batch = x.dim(0);
  return cnmf_forward(x, params.w, spec, n_iters, epsilon, training ? &states : nullptr);
}

Tensor NmfConvLayer::backward(const Tensor& phi) {
  if (states.empty()) throw std::runtime_error("nmf backward without forward state");
  const std::size_t b = cache_batch;
  const std::size_t og = spec.out_channels / spec.groups;
  const std::size_t cg = spec.in_channels / spec.groups;
  const std::size_t oh = spec.out_h(cache_in_h), ow = spec.out_w(cache_in_w), l = oh * ow;
  const std::size_t s = spec.patch_len();
  Tensor phi_in({b, spec.in_channels, cache_in_h, cache_in_w});
  Tensor grad_w_full({s, spec.out_channels});
  for (std::size_t g = 0; g < spec.groups; ++g) {
    const NmfForwardState& st = states[g];
    // gather the group's error as [M, og]
    Tensor phi_h({b * l, og});
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t j = 0; j < og; ++j)
        for (std::size_t p = 0; p < l; ++p)
          phi_h.at(bi * l + p, j) = phi.data()[((bi * spec.out_channels + g * og + j) * l) + p];
    // group weight slice
    Tensor wg({s, og});
    for (std::size_t si = 0; si < s; ++si)
      for (std::size_t j = 0; j < og; ++j) wg.at(si, j) = params.w.at(si, g * og + j);
    if (!frozen) {
      Tensor gw = weight_grad(phi_h, st, wg);
      for (std::size_t si = 0; si < s; ++si)
        for (std::size_t j = 0; j < og; ++j) grad_w_full.at(si, g * og + j) = gw.at(si, j);
    }
    Tensor phi_patches = backprop_input(phi_h, st, wg);  // [M,S]
    Tensor cols({b, l, s},
                std::vector<double>(phi_patches.data(), phi_patches.data() + phi_patches.size()));
    Tensor folded = fold(cols, spec, cg, cache_in_h, cache_in_w);
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t c = 0; c < cg; ++c)
        for (std::size_t y = 0; y < cache_in_h; ++y)
          for (std::size_t x2 = 0; x2 < cache_in_w; ++x2)
            phi_in.at(bi, g * cg + c, y, x2) = folded.at(bi, c, y, x2);
  }
  if (!frozen) {
    Tensor gu = chain_to_u(grad_w_full, params.u, grad_mode);
    for (std::size_t k = 0; k < gu.size(); ++k) grad_u[k] += gu[k];
  }
  return phi_in;
}

Tensor BnLayer::forward(const Tensor& x, bool training) {
  if (training)
    return batch_norm_train(x, gamma, beta, running_mean, running_var, cache);
  return batch_norm_eval(x, gamma, beta, running_mean, running_var);
}

Tensor BnLayer::backward(const Tensor& phi) {
  if (cache.x_hat.size() == 0) throw std::runtime_error("batch norm backward without forward state");
  return batch_norm_backward(phi, gamma, cache, grad_gamma, grad_beta);
}

Tensor Block::forward(const Tensor& x, bool training, std::size_t index) {
  Tensor y = (cfg.kind == BlockKind::kCnn) ? conv->forward(x, training) : nmf->forward(x, training);
  y.check_finite("block " + std::to_string(index) + " main");
  if (mix) {
    y = mix->forward(y, training);
    y.check_finite("block " + std::to_string(index) + " mix");
  }
  if (bn) {
    y = bn->forward(y, training);
    y.check_finite("block " + std::to_string(index) + " batch norm");
  }
  if (cfg.relu) {
    if (training) cache_pre_relu = y;
    y = relu(y);
  }
  return y;
}

Tensor Block::backward(const Tensor& phi) {
  Tensor g = phi;
  if (cfg.relu) {
    if (cache_pre_relu.size() == 0) throw std::runtime_error("block backward without forward state");
    g = relu_backward(g, cache_pre_relu);
  }
  if (bn) g = bn->backward(g);
  if (mix) g = mix->backward(g);
  return (cfg.kind == BlockKind::kCnn) ? conv->backward(g) : nmf->backward(g);
}

Tensor Model::forward(const Tensor& x, bool training) {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.in_h ||
      x.dim(3) != cfg_.in_w)
    throw std::invalid_argument("Model::forward: input shape disagrees with config");
  Tensor y = x;
  for (std::size_t b = 0; b < blocks_.size(); ++b) y = blocks_[b].forward(y, training, b);
  forward_done_ = training;
  // [B, classes, 1, 1] -> [B, classes]
  return Tensor({y.dim(0), y.dim(1)},
                std::vector<double>(y.data(), y.data() + y.size()));
}

Tensor Model::backward(const Tensor& phi_logits) {
  if (!forward_done_)
    throw std::runtime_error("Model::backward: no training-mode forward state");
  const std::size_t classes = cfg_.blocks.back().out_channels;
  Tensor g({phi_logits.dim(0), classes, 1, 1},
           std::vector<double>(phi_logits.data(), phi_logits.data() + phi_logits.size()));
  for (std::size_t b = blocks_.size(); b-- > 0;) g = blocks_[b].backward(g);
  return g;
}

std::vector<ParamRef> Model::parameters() {
  std::vector<ParamRef> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    Block& blk = blocks_[b];
    const std::string base = "block" + std::to_string(b);
    if (blk.conv) out.push_back({base + ".conv.w", &blk.conv->w, &blk.conv->grad_w, false});
    if (blk.nmf)
      out.push_back({base + ".nmf.u", &blk.nmf->params.u, &blk.nmf->grad_u, blk.nmf->frozen});
    if (blk.mix) out.push_back({base + ".mix.w", &blk.mix->w, &blk.mix->grad_w, false});
    if (blk.bn) {
      out.push_back({base + ".bn.gamma", &blk.bn->gamma, &blk.bn->grad_gamma, false});
      out.push_back({base + ".bn.beta", &blk.bn->beta, &blk.bn->grad_beta, false});
    }
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Block& blk : blocks_) {
    if (blk.conv) n += blk.conv->w.size();
    if (blk.nmf) n += blk.nmf->params.u.size();
    if (blk.mix) n += blk.mix->w.size();
    if (blk.bn) n += blk.bn->gamma.size() + blk.bn->beta.size();
  }
  return n;
}

void Model::zero_grads() {
  for (ParamRef& p : parameters())
    for (std::size_t k = 0; k < p.grad->size(); ++k) (*p.grad)[k] = 0.0;
}

Model build(const NetworkConfig& cfg, std::uint64_t seed) {
  if (cfg.blocks.empty()) throw std::invalid_argument("build: no blocks");
  Model m;
  m.cfg_ = cfg;
  Rng rng(derive_seed(seed, 0));
  std::size_t in_c = cfg.in_channels, h = cfg.in_h, w = cfg.in_w;
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    const BlockConfig& bc = cfg.blocks[b];
    Block blk;
    blk.cfg = bc;
    ConvSpec spec;
    spec.kernel_h = bc.kernel_h;
    spec.kernel_w = bc.kernel_w;
    spec.stride = bc.stride;
    spec.padding = bc.padding;
    spec.groups = bc.groups_main;
    spec.in_channels = in_c;
    spec.out_channels = bc.out_channels;
    spec.validate();
    const std::size_t cg = in_c / spec.groups;
    if (bc.kind == BlockKind::kCnn) {
      ConvLayer conv;
      conv.spec = spec;
      const double stddev = std::sqrt(2.0 / static_cast<double>(cg * bc.kernel_h * bc.kernel_w));
      conv.w = normal_tensor({bc.out_channels, cg, bc.kernel_h, bc.kernel_w}, rng, 0.0, stddev);
      conv.grad_w = Tensor(conv.w.shape());
      blk.conv = std::move(conv);
    } else {
      NmfConvLayer nmf;
      nmf.spec = spec;
      nmf.n_iters = bc.nmf_iters;
      nmf.epsilon = bc.nmf_epsilon;
      nmf.grad_mode = cfg.grad_mode;
      const std::size_t s = spec.patch_len();
      nmf.params.u = normal_tensor({s, bc.out_channels}, rng);
      for (std::size_t k = 0; k < nmf.params.u.size(); ++k)
        nmf.params.u[k] = std::fabs(nmf.params.u[k]) / static_cast<double>(s);
      nmf.params.w = derive_w(nmf.params.u);
      nmf.grad_u = Tensor(nmf.params.u.shape());
      blk.nmf = std::move(nmf);
    }
    if (bc.mix_1x1) {
      ConvLayer mix;
      mix.spec = ConvSpec{1, 1, 1, 0, bc.groups_mix, bc.out_channels, bc.out_channels};
      mix.spec.validate();
      const std::size_t mg = bc.out_channels / bc.groups_mix;
      const double stddev = std::sqrt(2.0 / static_cast<double>(mg));
      mix.w = normal_tensor({bc.out_channels, mg, 1, 1}, rng, 0.0, stddev);
      mix.grad_w = Tensor(mix.w.shape());
      blk.mix = std::move(mix);
    }
    if (bc.batch_norm) {
      BnLayer bn;
      bn.gamma = Tensor::full({bc.out_channels}, 1.0);
      bn.beta = Tensor({bc.out_channels});
      bn.running_mean = Tensor({bc.out_channels});
      bn.running_var = Tensor::full({bc.out_channels}, 1.0);
      bn.grad_gamma = Tensor({bc.out_channels});
      bn.grad_beta = Tensor({bc.out_channels});
      blk.bn = std::move(bn);
    }
    h = spec.out_h(h);
    w = spec.out_w(w);
    in_c = bc.out_channels;
    m.blocks_.push_back(std::move(blk));
  }
  if (h != 1 || w != 1)
    throw std::invalid_argument("build: spatial path ends at " + std::to_string(h) + "x" +
                                std::to_string(w) + " after block " +
                                std::to_string(cfg.blocks.size() - 1) + ", expected 1x1");
  if (in_c != cfg.class_count)
    throw std::invalid_argument("build: final channel count disagrees with class_count");
  return m;
}

}  // namespace nmfnet
