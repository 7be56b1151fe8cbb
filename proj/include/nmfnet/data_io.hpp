#ifndef NMFNET_DATA_IO_HPP_
#define NMFNET_DATA_IO_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nmfnet/network.hpp"
#include "nmfnet/tensor.hpp"

namespace nmfnet {

struct Dataset {
  Tensor images;            // [N,3,32,32] in [0,1]
  std::vector<int> labels;  // 0..9
  std::string split;
  std::size_t size() const { return labels.size(); }
};

// One CIFAR-10 binary file: per record 1 label byte + 3072 pixel bytes
// (channel-major R,G,B; row-major within channel). Pixels scaled by 1/255.
// File size must be a multiple of 3073 bytes.
Dataset read_cifar_batch(const std::string& path);
void write_cifar_batch(const std::string& path, const Dataset& ds);

// Standard layout: data_batch_1..5.bin (10000 records each) + test_batch.bin.
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir);

// Stratified subset: the first `per_class` records of each class.
Dataset subset_per_class(const Dataset& ds, std::size_t per_class);

// Offline CIFAR-10 stand-in: 10 classes of oriented color gratings with
// random phase, position jitter and pixel noise.
Dataset synthetic_cifar(std::size_t n, std::uint64_t seed, const std::string& split = "train");

// CSV matrix (comma separated, optional non-numeric header line).
Tensor read_csv_matrix(const std::string& path);
void write_csv_matrix(const std::string& path, const Tensor& m);

struct TrainConfig {
  double lr0 = 1e-3;
  std::size_t plateau_patience = 10;
  double lr_factor = 0.1;
  double lr_floor = 1e-9;
  std::size_t max_epochs = 500;
  std::size_t batch_size = 50;
  std::uint64_t seed = 1;
  bool hflip = true;
  double jitter_brightness = 0.1;
  double jitter_contrast = 0.1;
  double jitter_saturation = 0.1;
  bool crop_32_to_28 = true;
  double alpha = 0.5;
  double val_fraction = 0.1;
};

// Key-value config with [blockN] / [train] sections; unknown keys rejected
// with line numbers. An empty file yields the cnmf_mix width-1 preset.
std::pair<NetworkConfig, TrainConfig> parse_config(const std::string& text);
std::pair<NetworkConfig, TrainConfig> parse_config_file(const std::string& path);
std::string serialize_config(const NetworkConfig& net, const TrainConfig& train);

/// Versioned binary checkpoint: config text, all parameter tensors and BN
// running stats, bit-exact on round trip.
void save_checkpoint(const std::string& path, const Model& model, const TrainConfig& train);
std::pair<Model, TrainConfig> load_checkpoint(const std::string& path);

}  // namespace nmfnet

#endif  // NMFNET_DATA_IO_HPP_
