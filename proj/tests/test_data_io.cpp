#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "nmfnet/data_io.hpp"
#include "nmfnet/rng.hpp"

using namespace nmfnet;

namespace {
const std::string kTmp = "/tmp/nmfnet_test_io";

struct TmpDir {
  TmpDir() { std::filesystem::create_directories(kTmp); }
  ~TmpDir() { std::filesystem::remove_all(kTmp); }
};
}  // namespace

TEST_CASE("cifar batch bytes decode to k/255 doubles") {
  TmpDir tmp;
  const std::string path = kTmp + "/two.bin";
  std::ofstream out(path, std::ios::binary);
  // Record 0: label 3, pixels 0,1,2,...; record 1: label 9, pixels 255,254,...
  out.put(3);
  for (int k = 0; k < 3072; ++k) out.put(char(k % 256));
  out.put(9);
  for (int k = 0; k < 3072; ++k) out.put(char(255 - k % 256));
  out.close();

  Dataset ds = read_cifar_batch(path);
  REQUIRE(ds.size() == 2);
  CHECK(ds.labels[0] == 3);
  CHECK(ds.labels[1] == 9);
  CHECK(ds.images.at(0, 0, 0, 0) == 0.0);
  CHECK(ds.images.at(0, 0, 0, 5) == doctest::Approx(5.0 / 255.0));
  // Channel-major layout: pixel 1024 of record 0 is G(0,0).
  CHECK(ds.images.at(0, 1, 0, 0) == doctest::Approx((1024 % 256) / 255.0));
  CHECK(ds.images.at(1, 0, 0, 0) == 1.0);
}

TEST_CASE("truncated cifar file reports expected and actual sizes") {
  TmpDir tmp;
  const std::string path = kTmp + "/short.bin";
  std::ofstream out(path, std::ios::binary);
  for (int k = 0; k < 100; ++k) out.put(char(k));
  out.close();
  try {
    read_cifar_batch(path);
    FAIL("expected a size error");
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    CHECK(msg.find("3073") != std::string::npos);
    CHECK(msg.find("100") != std::string::npos);
  }
}

TEST_CASE("cifar batch round trip is exact") {
  TmpDir tmp;
  Dataset ds = synthetic_cifar(20, 17, "train");
  const std::string path = kTmp + "/round.bin";
  write_cifar_batch(path, ds);
  Dataset back = read_cifar_batch(path);
  REQUIRE(back.size() == 20);
  CHECK(back.labels == ds.labels);
  // Quantization to bytes happened at write time; re-reading is bit-exact.
  write_cifar_batch(kTmp + "/round2.bin", back);
  std::ifstream a(path, std::ios::binary), b(kTmp + "/round2.bin", std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {});
  std::string sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
}

TEST_CASE("label byte out of range is rejected with its offset") {
  TmpDir tmp;
  const std::string path = kTmp + "/badlabel.bin";
  std::ofstream out(path, std::ios::binary);
  out.put(11);
  for (int k = 0; k < 3072; ++k) out.put(0);
  out.close();
  CHECK_THROWS(read_cifar_batch(path));
}

TEST_CASE("synthetic dataset is balanced, deterministic and in range") {
  Dataset a = synthetic_cifar(100, 7, "train");
  Dataset b = synthetic_cifar(100, 7, "train");
  REQUIRE(a.size() == 100);
  std::vector<int> counts(10, 0);
  for (int label : a.labels) {
    REQUIRE(label >= 0);
    REQUIRE(label <= 9);
    ++counts[label];
  }
  for (int c : counts) CHECK(c == 10);
  for (std::size_t k = 0; k < a.images.size(); ++k) {
    CHECK(a.images[k] >= 0.0);
    CHECK(a.images[k] <= 1.0);
    CHECK(a.images[k] == b.images[k]);
  }
  Dataset other = synthetic_cifar(100, 8, "train");
  bool differs = false;
  for (std::size_t k = 0; k < a.images.size() && !differs; ++k)
    if (a.images[k] != other.images[k]) differs = true;
  CHECK(differs);
}

TEST_CASE("per-class subset keeps the first records of each class") {
  Dataset ds = synthetic_cifar(100, 3, "train");
  Dataset sub = subset_per_class(ds, 4);
  REQUIRE(sub.size() == 40);
  std::vector<int> counts(10, 0);
  for (int label : sub.labels) ++counts[label];
  for (int c : counts) CHECK(c == 4);
}

TEST_CASE("csv matrix round trip with header tolerance") {
  TmpDir tmp;
  const std::string path = kTmp + "/m.csv";
  Rng rng(44);
  Tensor m = normal_tensor({5, 3}, rng);
  write_csv_matrix(path, m);
  Tensor back = read_csv_matrix(path);
  REQUIRE(back.shape() == m.shape());
  for (std::size_t k = 0; k < m.size(); ++k) CHECK(back[k] == doctest::Approx(m[k]).epsilon(1e-14));

  std::ofstream out(kTmp + "/h.csv");
  out << "a,b\n1,2\n3,4\n";
  out.close();
  Tensor h = read_csv_matrix(kTmp + "/h.csv");
  REQUIRE(h.shape() == std::vector<std::size_t>{2, 2});
  CHECK(h.at(1, 1) == 4.0);
}

TEST_CASE("ragged csv rows are rejected with a line number") {
  TmpDir tmp;
  std::ofstream out(kTmp + "/ragged.csv");
  out << "1,2\n3\n";
  out.close();
  try {
    read_csv_matrix(kTmp + "/ragged.csv");
    FAIL("expected a shape error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
}

TEST_CASE("empty config yields the default topology") {
  auto [net, train] = parse_config("");
  REQUIRE(net.blocks.size() == 4);
  CHECK(net.blocks[0].kind == BlockKind::kCnmf);
  CHECK(net.blocks[0].mix_1x1);
  CHECK(net.width_multiplier == 1);
  CHECK(train.lr0 == 1e-3);
  CHECK(train.batch_size == 50);
  CHECK(train.plateau_patience == 10);
}

TEST_CASE("cnn preset gives the plain convolutional topology") {
  auto [net, train] = parse_config("preset=cnn\n");
  (void)train;
  for (const auto& b : net.blocks) {
    CHECK(b.kind == BlockKind::kCnn);
    CHECK(!b.mix_1x1);
  }
  CHECK(net.blocks[0].kernel_h == 5);
  CHECK(net.blocks[0].stride == 2);
  CHECK(net.blocks[3].kernel_h == 3);
  CHECK(net.blocks[3].out_channels == 10);
}

TEST_CASE("config sections override fields and bad keys carry line numbers") {
  const std::string text =
      "preset=cnmf_mix\n"
      "width=2\n"
      "\n"
      "[train]\n"
      "lr0=0.01\n"
      "batch_size=32\n"
      "\n"
      "[block0]\n"
      "nmf_iters=20\n";
  auto [net, train] = parse_config(text);
  CHECK(net.width_multiplier == 2);
  CHECK(net.blocks[0].out_channels == 64);
  CHECK(net.blocks[0].nmf_iters == 20);
  CHECK(net.blocks[1].nmf_iters == 75);
  CHECK(train.lr0 == 0.01);
  CHECK(train.batch_size == 32);

  try {
    parse_config("preset=cnn\nbogus_key=1\n");
    FAIL("expected an unknown-key error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
  CHECK_THROWS(parse_config("[train]\nlr_factor=1.5\n"));
}

TEST_CASE("config serialization round trips") {
  auto [net, train] = parse_config("preset=cnn_mix\nwidth=2\n[train]\nlr0=0.005\n");
  const std::string text = serialize_config(net, train);
  auto [net2, train2] = parse_config(text);
  CHECK(net2.width_multiplier == net.width_multiplier);
  REQUIRE(net2.blocks.size() == net.blocks.size());
  for (std::size_t b = 0; b < net.blocks.size(); ++b) {
    CHECK(net2.blocks[b].kind == net.blocks[b].kind);
    CHECK(net2.blocks[b].mix_1x1 == net.blocks[b].mix_1x1);
    CHECK(net2.blocks[b].out_channels == net.blocks[b].out_channels);
  }
  CHECK(train2.lr0 == train.lr0);
}

TEST_CASE("checkpoint round trip preserves the eval forward bit-exactly") {
  TmpDir tmp;
  NetworkConfig net = preset_config("cnmf_mix");
  for (auto& b : net.blocks) b.nmf_iters = 4;
  Model model = build(net, 31);
  TrainConfig train;
  train.lr0 = 0.002;

  // Move BN stats off their init values so the round trip is non-trivial.
  Rng rng(45);
  Tensor warm = uniform_tensor({2, 3, 28, 28}, rng);
  model.forward(warm, true);

  const std::string path = kTmp + "/model.ckpt";
  save_checkpoint(path, model, train);
  auto [back, train2] = load_checkpoint(path);
  CHECK(train2.lr0 == 0.002);

  Tensor probe = uniform_tensor({2, 3, 28, 28}, rng);
  Tensor ya = model.forward(probe, false);
  Tensor yb = back.forward(probe, false);
  for (std::size_t k = 0; k < ya.size(); ++k) CHECK(ya[k] == yb[k]);
}

TEST_CASE("corrupt checkpoints are rejected") {
  TmpDir tmp;
  const std::string path = kTmp + "/bad.ckpt";
  std::ofstream out(path, std::ios::binary);
  out << "not a checkpoint";
  out.close();
  CHECK_THROWS(load_checkpoint(path));
  CHECK_THROWS(load_checkpoint(kTmp + "/missing.ckpt"));
}
