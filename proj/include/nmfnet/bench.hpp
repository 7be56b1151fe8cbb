#ifndef NMFNET_BENCH_HPP_
#define NMFNET_BENCH_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "nmfnet/tensor.hpp"

namespace nmfnet {

// One benchmarked backward arm of the dense reference layer.
struct BenchArm {
  std::string name;             // cnn | nmf_unrolled | nmf_approx
  std::size_t n_iters = 0;      // 0 for the cnn arm
  double forward_ns = 0.0;      // median
  double backward_ns = 0.0;     // median
  double backward_mad = 0.0;    // median absolute deviation of backward times
  std::size_t memory_bytes = 0; // retained-for-backward + transient buffers
  bool unstable = false;        // MAD/median >= 0.2
  double time_ratio_vs_cnn = 0.0;
  double mem_ratio_vs_cnn = 0.0;
};

struct BenchReport {
  std::size_t s = 0, i = 0, batch = 0;
  std::size_t repetitions = 0;
  int threads = 1;
  std::vector<BenchArm> arms;
  double grad_cosine = -2.0;  // approx vs unrolled input gradients, when both ran
};

struct BenchSpec {
  std::size_t s = 1600;
  std::size_t i = 64;
  std::size_t batch = 32;
  std::vector<std::size_t> n_iters = {75};
  std::size_t repetitions = 11;
  std::size_t warmups = 3;
  std::uint64_t seed = 7;
  std::vector<std::string> arms = {"cnn", "unrolled", "approx"};
};

// Runs forward once per arm, then times only the backward pass. Memory is
// explicit buffer accounting (bytes retained for backward plus transient
// backward scratch), not process RSS.
BenchReport bench_backward(const BenchSpec& spec);

void emit_report(const BenchReport& report, const std::string& csv_path);
std::string format_report(const BenchReport& report);
BenchReport parse_report_csv(const std::string& csv_path);

}  // namespace nmfnet

#endif  // NMFNET_BENCH_HPP_
