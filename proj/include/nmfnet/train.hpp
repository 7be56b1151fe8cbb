#ifndef NMFNET_TRAIN_HPP_
#define NMFNET_TRAIN_HPP_

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "nmfnet/data_io.hpp"
#include "nmfnet/network.hpp"
#include "nmfnet/rng.hpp"

namespace nmfnet {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<Tensor> m;  // first moments, one per parameter
  std::vector<Tensor> v;  // second moments

  void init(const std::vector<ParamRef>& params);
};

// Bias-corrected Adam over all non-frozen parameters. Throws on a non-finite
// gradient. The step counter advances even for zero gradients.
void adam_step(std::vector<ParamRef>& params, AdamState& state, double lr);

// Reduce-on-plateau: lr *= factor when no new minimum (improvement below
// 1e-6 absolute) has been seen for `patience` epochs.
class PlateauSchedule {
 public:
  PlateauSchedule(double lr0, std::size_t patience, double factor, double floor)
      : lr_(lr0), patience_(patience), factor_(factor), floor_(floor) {}

  // Feeds one epoch's validation loss; returns the (possibly reduced) lr.
  double observe(double val_loss);
  double lr() const { return lr_; }
  bool should_stop() const { return lr_ < floor_; }

 private:
  double lr_;
  std::size_t patience_;
  double factor_;
  double floor_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t stale_ = 0;
};

// 32x32 -> 28x28 training augmentation: 50% hflip, channel color jitter,
// uniform random crop. Eval path: center crop only.
Tensor augment(const Tensor& img32, Rng& rng, const TrainConfig& cfg);
Tensor center_crop(const Tensor& img32);

struct EpochRow {
  std::size_t epoch;
  double train_loss;
  double val_loss;
  double val_acc;
  double lr;
  double seconds;
};

struct TrainingReport {
  std::vector<EpochRow> rows;
  double best_val_acc = 0.0;
  double test_acc = -1.0;
  std::string stop_reason;
};

void write_report_csv(const std::string& path, const TrainingReport& rep);

double evaluate_accuracy(Model& model, const Dataset& ds, std::size_t batch_size);
double evaluate_loss(Model& model, const Dataset& ds, std::size_t batch_size,
                     const LossConfig& loss_cfg);

// Full loop: stratified val split, augmentation, Adam, plateau LR schedule,
// best-val checkpointing when out_dir is non-empty.
TrainingReport fit(Model& model, const Dataset& train_set, const TrainConfig& cfg,
                   const std::string& out_dir = "", const Dataset* test_set = nullptr,
                   bool verbose = false);

}  // namespace nmfnet

#endif  // NMFNET_TRAIN_HPP_
