#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "nmfnet/bench.hpp"

using namespace nmfnet;

namespace {
BenchSpec small_spec() {
  BenchSpec spec;
  spec.s = 48;
  spec.i = 8;
  spec.batch = 4;
  spec.n_iters = {5};
  spec.repetitions = 5;
  spec.warmups = 1;
  return spec;
}
}  // namespace

TEST_CASE("empty arm list is rejected") {
  BenchSpec spec = small_spec();
  spec.arms.clear();
  CHECK_THROWS(bench_backward(spec));
  BenchSpec few = small_spec();
  few.repetitions = 2;
  CHECK_THROWS(bench_backward(few));
  BenchSpec unknown = small_spec();
  unknown.arms = {"tpu"};
  CHECK_THROWS(bench_backward(unknown));
}

TEST_CASE("small run produces sane medians and memory accounting") {
  BenchSpec spec = small_spec();
  spec.n_iters = {40};  // deep enough that the unrolled history dominates
  BenchReport rep = bench_backward(spec);
  REQUIRE(rep.arms.size() == 3);  // cnn + unrolled + approx at one N
  for (const auto& arm : rep.arms) {
    CHECK(arm.backward_ns > 0.0);
    CHECK(arm.memory_bytes > 0);
  }
  CHECK(rep.grad_cosine >= -1.0);
  CHECK(rep.grad_cosine <= 1.0);

  // Approx retains O(1)-in-N state; unrolled retains the whole history.
  const BenchArm* approx = nullptr;
  const BenchArm* unrolled = nullptr;
  for (const auto& arm : rep.arms) {
    if (arm.name == "nmf_approx") approx = &arm;
    if (arm.name == "nmf_unrolled") unrolled = &arm;
  }
  REQUIRE(approx);
  REQUIRE(unrolled);
  CHECK(unrolled->memory_bytes > approx->memory_bytes);
}

TEST_CASE("unrolled memory grows with N while approx memory does not") {
  BenchSpec spec = small_spec();
  spec.n_iters = {5, 20};
  BenchReport rep = bench_backward(spec);
  std::size_t approx5 = 0, approx20 = 0, unrolled5 = 0, unrolled20 = 0;
  for (const auto& arm : rep.arms) {
    if (arm.name == "nmf_approx" && arm.n_iters == 5) approx5 = arm.memory_bytes;
    if (arm.name == "nmf_approx" && arm.n_iters == 20) approx20 = arm.memory_bytes;
    if (arm.name == "nmf_unrolled" && arm.n_iters == 5) unrolled5 = arm.memory_bytes;
    if (arm.name == "nmf_unrolled" && arm.n_iters == 20) unrolled20 = arm.memory_bytes;
  }
  CHECK(approx5 == approx20);
  CHECK(unrolled20 > unrolled5);
}

TEST_CASE("report format golden check") {
  BenchReport rep;
  rep.s = 48;
  rep.i = 8;
  rep.batch = 4;
  rep.repetitions = 5;
  rep.threads = 1;
  rep.grad_cosine = 0.9876;
  rep.arms.push_back({"cnn", 0, 1000.0, 2000.0, 10.0, 4096, false, 1.0, 1.0});
  rep.arms.push_back({"nmf_approx", 5, 3000.0, 5000.0, 2000.0, 8192, true, 2.5, 2.0});
  const std::string text = format_report(rep);
  CHECK(text.find("cnn") != std::string::npos);
  CHECK(text.find("nmf_approx") != std::string::npos);
  CHECK(text.find("unstable") != std::string::npos);
  CHECK(text.find("0.988") != std::string::npos);
}

TEST_CASE("csv round trip preserves the report") {
  BenchReport rep = bench_backward(small_spec());
  const std::string path = "/tmp/nmfnet_test_bench.csv";
  emit_report(rep, path);
  BenchReport back = parse_report_csv(path);
  CHECK(back.s == rep.s);
  CHECK(back.i == rep.i);
  CHECK(back.batch == rep.batch);
  CHECK(back.repetitions == rep.repetitions);
  CHECK(back.threads == rep.threads);
  CHECK(back.grad_cosine == doctest::Approx(rep.grad_cosine).epsilon(1e-12));
  REQUIRE(back.arms.size() == rep.arms.size());
  for (std::size_t k = 0; k < rep.arms.size(); ++k) {
    CHECK(back.arms[k].name == rep.arms[k].name);
    CHECK(back.arms[k].n_iters == rep.arms[k].n_iters);
    CHECK(back.arms[k].backward_ns == doctest::Approx(rep.arms[k].backward_ns));
    CHECK(back.arms[k].memory_bytes == rep.arms[k].memory_bytes);
    CHECK(back.arms[k].unstable == rep.arms[k].unstable);
  }
  std::filesystem::remove(path);
}
