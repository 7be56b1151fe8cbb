#include "nmfnet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace nmfnet {

void AdamState::init(const std::vector<ParamRef>& params) {
  m.clear();
  v.clear();
  step = 0;
  for (const ParamRef& p : params) {
    m.emplace_back(p.value->shape());
    v.emplace_back(p.value->shape());
  }
}

void adam_step(std::vector<ParamRef>& params, AdamState& state, double lr) {
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: state not initialized for these parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (params[p].frozen) continue;
    Tensor& theta = *params[p].value;
    const Tensor& g = *params[p].grad;
    Tensor& mm = state.m[p];
    Tensor& vv = state.v[p];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = g[k];
      if (!std::isfinite(gk))
        throw std::runtime_error("adam_step: non-finite gradient in " + params[p].name);
      mm[k] = state.beta1 * mm[k] + (1.0 - state.beta1) * gk;
      vv[k] = state.beta2 * vv[k] + (1.0 - state.beta2) * gk * gk;
      theta[k] -= lr * (mm[k] / bc1) / (std::sqrt(vv[k] / bc2) + state.eps);
    }
  }
}

double PlateauSchedule::observe(double val_loss) {
  if (val_loss < best_ - 1e-6) {
    best_ = val_loss;
    stale_ = 0;
  } else if (++stale_ >= patience_) {
    lr_ *= factor_;
    stale_ = 0;
  }
  return lr_;
}

namespace {

Tensor crop28(const Tensor& img32, std::size_t oy, std::size_t ox) {
  Tensor out({1, 3, 28, 28});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 28; ++y)
      for (std::size_t x = 0; x < 28; ++x)
        out.at(0, c, y, x) = img32.at(0, c, y + oy, x + ox);
  return out;
}

}  // namespace

Tensor center_crop(const Tensor& img32) { return crop28(img32, 2, 2); }

Tensor augment(const Tensor& img32, Rng& rng, const TrainConfig& cfg) {
  Tensor img = img32;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  if (cfg.hflip && u01(rng) < 0.5) {
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 16; ++x)
          std::swap(img.at(0, c, y, x), img.at(0, c, y, 31 - x));
  }
  const double b = 1.0 + cfg.jitter_brightness * (2.0 * u01(rng) - 1.0);
  const double ctr = 1.0 + cfg.jitter_contrast * (2.0 * u01(rng) - 1.0);
  const double sat = 1.0 + cfg.jitter_saturation * (2.0 * u01(rng) - 1.0);
  double mean = 0.0;
  for (std::size_t k = 0; k < img.size(); ++k) mean += img[k];
  mean /= static_cast<double>(img.size());
  // Unit factors are a true no-op; skip the loop so disabled jitter leaves
  // pixels bit-identical.
  if (b != 1.0 || ctr != 1.0 || sat != 1.0) {
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) {
        const double r = img.at(0, 0, y, x), g = img.at(0, 1, y, x), bl = img.at(0, 2, y, x);
        const double gray = 0.299 * r + 0.587 * g + 0.114 * bl;
        double ch[3] = {r, g, bl};
        for (std::size_t c = 0; c < 3; ++c) {
          double v = gray + (ch[c] - gray) * sat;  // saturation
          v = mean + (v - mean) * ctr;             // contrast
          v *= b;                                  // brightness
          img.at(0, c, y, x) = std::clamp(v, 0.0, 1.0);
        }
      }
  }
  std::size_t oy = 2, ox = 2;
  if (cfg.crop_32_to_28) {
    std::uniform_int_distribution<std::size_t> off(0, 4);
    oy = off(rng);
    ox = off(rng);
  }
  return crop28(img, oy, ox);
}

void write_report_csv(const std::string& path, const TrainingReport& rep) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "epoch,train_loss,val_loss,val_acc,lr,seconds\n";
  f.precision(12);
  for (const EpochRow& r : rep.rows)
    f << r.epoch << "," << r.train_loss << "," << r.val_loss << "," << r.val_acc << ","
      << r.lr << "," << r.seconds << "\n";
}

namespace {

Tensor gather_images(const Dataset& ds, const std::vector<std::size_t>& idx,
                     std::size_t lo, std::size_t hi) {
  Tensor out({hi - lo, 3, 32, 32});
  for (std::size_t k = lo; k < hi; ++k)
    std::copy_n(ds.images.data() + idx[k] * 3072, 3072, out.data() + (k - lo) * 3072);
  return out;
}

// Batched eval-mode forward over a dataset with center crop.
void eval_pass(Model& model, const Dataset& ds, std::size_t batch_size,
               const LossConfig& loss_cfg, double* out_loss, double* out_acc) {
  double total_loss = 0.0;
  std::size_t correct = 0;
  const std::size_t n = ds.size();
  for (std::size_t lo = 0; lo < n; lo += batch_size) {
    const std::size_t hi = std::min(n, lo + batch_size);
    Tensor batch({hi - lo, 3, 28, 28});
    for (std::size_t k = lo; k < hi; ++k) {
      Tensor img({1, 3, 32, 32},
                 std::vector<double>(ds.images.data() + k * 3072,
                                     ds.images.data() + (k + 1) * 3072));
      Tensor c = center_crop(img);
      std::copy_n(c.data(), c.size(), batch.data() + (k - lo) * 3 * 28 * 28);
    }
    std::vector<int> labels(ds.labels.begin() + lo, ds.labels.begin() + hi);
    Tensor logits = model.forward(batch, false);
    total_loss += loss_value(logits, labels, loss_cfg) * static_cast<double>(hi - lo);
    for (std::size_t k = 0; k < labels.size(); ++k) {
      std::size_t arg = 0;
      for (std::size_t j = 1; j < logits.dim(1); ++j)
        if (logits.at(k, j) > logits.at(k, arg)) arg = j;
      if (static_cast<int>(arg) == labels[k]) ++correct;
    }
  }
  if (out_loss) *out_loss = total_loss / static_cast<double>(n);
  if (out_acc) *out_acc = static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace

double evaluate_accuracy(Model& model, const Dataset& ds, std::size_t batch_size) {
  double acc = 0.0;
  eval_pass(model, ds, batch_size, LossConfig{}, nullptr, &acc);
  return acc;
}

double evaluate_loss(Model& model, const Dataset& ds, std::size_t batch_size,
                     const LossConfig& loss_cfg) {
  double loss = 0.0;
  eval_pass(model, ds, batch_size, loss_cfg, &loss, nullptr);
  return loss;
}

TrainingReport fit(Model& model, const Dataset& train_set, const TrainConfig& cfg,
                   const std::string& out_dir, const Dataset* test_set, bool verbose) {
  if (train_set.size() == 0) throw std::invalid_argument("fit: empty dataset");
  if (cfg.batch_size == 0) throw std::invalid_argument("fit: batch_size must be >= 1");

  // stratified validation split, seeded
  Rng split_rng(derive_seed(cfg.seed, 1));
  std::vector<std::vector<std::size_t>> per_class(10);
  for (std::size_t k = 0; k < train_set.size(); ++k) per_class[train_set.labels[k]].push_back(k);
  std::vector<std::size_t> train_idx, val_idx;
  for (auto& cls : per_class) {
    std::shuffle(cls.begin(), cls.end(), split_rng);
    const std::size_t n_val = static_cast<std::size_t>(cfg.val_fraction * cls.size());
    for (std::size_t k = 0; k < cls.size(); ++k)
      (k < n_val ? val_idx : train_idx).push_back(cls[k]);
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  Dataset val;
  val.split = "val";
  if (!val_idx.empty()) {
    val.images = gather_images(train_set, val_idx, 0, val_idx.size());
    for (std::size_t k : val_idx) val.labels.push_back(train_set.labels[k]);
  }

  LossConfig loss_cfg{cfg.alpha};
  PlateauSchedule sched(cfg.lr0, cfg.plateau_patience, cfg.lr_factor, cfg.lr_floor);
  auto params = model.parameters();
  AdamState adam;
  adam.init(params);

  Rng shuffle_rng(derive_seed(cfg.seed, 2));
  Rng aug_rng(derive_seed(cfg.seed, 3));

  TrainingReport rep;
  double best_val = -1.0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order = train_idx;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      Tensor batch({hi - lo, 3, 28, 28});
      std::vector<int> labels(hi - lo);
      for (std::size_t k = lo; k < hi; ++k) {
        Tensor img({1, 3, 32, 32},
                   std::vector<double>(train_set.images.data() + order[k] * 3072,
                                       train_set.images.data() + (order[k] + 1) * 3072));
        Tensor a = augment(img, aug_rng, cfg);
        std::copy_n(a.data(), a.size(), batch.data() + (k - lo) * 3 * 28 * 28);
        labels[k - lo] = train_set.labels[order[k]];
      }
      model.zero_grads();
      Tensor logits = model.forward(batch, true);
      epoch_loss += loss_value(logits, labels, loss_cfg) * static_cast<double>(hi - lo);
      seen += hi - lo;
      model.backward(loss_grad(logits, labels, loss_cfg));
      adam_step(params, adam, sched.lr());
    }
    double val_loss = 0.0, val_acc = 0.0;
    if (!val_idx.empty()) eval_pass(model, val, cfg.batch_size, loss_cfg, &val_loss, &val_acc);
    const double lr_used = sched.lr();
    sched.observe(val_loss);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.rows.push_back({epoch, epoch_loss / static_cast<double>(seen), val_loss, val_acc,
                        lr_used, secs});
    if (verbose)
      std::printf("epoch %zu train_loss %.4f val_loss %.4f val_acc %.4f lr %.2e (%.1fs)\n",
                  epoch, rep.rows.back().train_loss, val_loss, val_acc, lr_used, secs);
    if (val_acc > best_val) {
      best_val = val_acc;
      if (!out_dir.empty()) save_checkpoint(out_dir + "/best.ckpt", model, cfg);
    }
    if (sched.should_stop()) {
      rep.stop_reason = "lr below floor";
      break;
    }
  }
  if (rep.stop_reason.empty()) rep.stop_reason = "max epochs";
  rep.best_val_acc = best_val;
  if (test_set) rep.test_acc = evaluate_accuracy(model, *test_set, cfg.batch_size);
  if (!out_dir.empty()) write_report_csv(out_dir + "/report.csv", rep);
  return rep;
}

}  // namespace nmfnet
