// Command-line front end: factorize | gradcheck | train | bench | synth.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "nmfnet/backprop.hpp"
#include "nmfnet/rng.hpp"
#include "nmfnet/bench.hpp"
#include "nmfnet/classic_nmf.hpp"
#include "nmfnet/data_io.hpp"
#include "nmfnet/train.hpp"

using namespace nmfnet;

namespace {

double cosine(const Tensor& a, const Tensor& b) {
  double num = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    num += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return num / std::sqrt(na * nb);
}

int run_factorize(const std::string& input, const std::string& w_out, const std::string& h_out,
                  std::size_t latents, std::size_t iters, std::uint64_t seed) {
  Tensor x = read_csv_matrix(input);
  Factorization f = factorize(x, latents, iters, seed);
  if (!w_out.empty()) write_csv_matrix(w_out, f.w);
  if (!h_out.empty()) write_csv_matrix(h_out, f.h);
  std::printf("# round (0 = initialization), divergence\n");
  for (std::size_t t = 0; t < f.divergence_history.size(); ++t)
    std::printf("%zu, %.10g\n", t, f.divergence_history[t]);
  return 0;
}

int run_gradcheck(std::size_t trials, std::uint64_t seed) {
  std::printf("%-28s %-8s %-14s %-10s\n", "layer", "mode", "max_rel_err", "cosine");
  bool ok = true;

  // Exact paths first: unrolled reverse sweep vs central finite differences.
  for (std::uint64_t trial = 0; trial < trials; ++trial) {
    Rng rng(derive_seed(seed, trial));
    std::uniform_int_distribution<std::size_t> s_pick(3, 8), i_pick(2, 5), n_pick(1, 20);
    const std::size_t s = s_pick(rng), i = i_pick(rng), n = n_pick(rng), m = 2;
    Tensor u = normal_tensor({s, i}, rng);
    Tensor x = normalize_input(uniform_tensor({m, s}, rng, 0.0, 1.0));
    Tensor phi = normal_tensor({m, i}, rng);
    UnrolledResult exact = unrolled_backward(x, u, n, 1.0, phi);
    auto objective = [&](const Tensor& xx, const Tensor& uu) {
      NmfForwardState st = nmf_forward(xx, derive_w(uu), n, 1.0);
      double acc = 0.0;
      for (std::size_t k = 0; k < st.h.size(); ++k) acc += st.h[k] * phi[k];
      return acc;
    };
    double worst = 0.0;
    const double hstep = 1e-6;
    for (std::size_t k = 0; k < u.size(); ++k) {
      Tensor up = u, um = u;
      up[k] += hstep;
      um[k] -= hstep;
      const double fd = (objective(x, up) - objective(x, um)) / (2 * hstep);
      worst = std::max(worst, std::fabs(exact.grad_u[k] - fd) /
                                  std::max({std::fabs(fd), std::fabs(exact.grad_u[k]), 1e-6}));
    }
    // Approximate backward on the same instance, compared by direction.
    NmfForwardState st = nmf_forward(x, derive_w(u), n, 1.0);
    Tensor approx = backprop_input(phi, st, derive_w(u));
    const double cs = cosine(approx, exact.phi_in);
    char name[64];
    std::snprintf(name, sizeof(name), "nmf S=%zu I=%zu N=%zu", s, i, n);
    std::printf("%-28s %-8s %-14.3e %-10.4f\n", name, "chain", worst, cs);
    if (worst > 1e-4) ok = false;
  }
  if (!ok) std::fprintf(stderr, "gradcheck: tolerance exceeded\n");
  return ok ? 0 : 1;
}

int run_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& synth_arg, bool verbose) {
  auto [net, train_cfg] =
      config_path.empty() ? parse_config("") : parse_config_file(config_path);
  Model model = build(net, train_cfg.seed);

  Dataset train_set, test_set;
  if (!synth_arg.empty()) {
    const std::size_t n = std::stoul(synth_arg);
    train_set = synthetic_cifar(n, train_cfg.seed, "train");
    test_set = synthetic_cifar(std::max<std::size_t>(n / 5, 10), train_cfg.seed + 9999, "test");
  } else {
    auto pair = load_cifar10(data_dir);
    train_set = std::move(pair.first);
    test_set = std::move(pair.second);
  }

  std::filesystem::create_directories(out_dir);
  TrainingReport rep = fit(model, train_set, train_cfg, out_dir, &test_set, verbose);
  std::printf("stopped: %s\n", rep.stop_reason.c_str());
  std::printf("best val acc %.4f, test acc %.4f\n", rep.best_val_acc, rep.test_acc);
  return 0;
}

int run_bench(const std::string& layer, const std::string& arms, const std::string& out,
              std::size_t reps, int threads) {
  BenchSpec spec;
  spec.repetitions = reps;
  // --layer S=...,I=...,N=...[,B=...]
  std::string token;
  std::vector<std::size_t> n_list;
  for (std::size_t pos = 0; pos <= layer.size(); ++pos) {
    if (pos < layer.size() && layer[pos] != ',') {
      token += layer[pos];
      continue;
    }
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("bad --layer token: " + token);
    const std::string key = token.substr(0, eq);
    const std::size_t value = std::stoul(token.substr(eq + 1));
    if (key == "S")
      spec.s = value;
    else if (key == "I")
      spec.i = value;
    else if (key == "N")
      n_list.push_back(value);
    else if (key == "B")
      spec.batch = value;
    else
      throw std::invalid_argument("unknown --layer key: " + key);
    token.clear();
  }
  if (!n_list.empty()) spec.n_iters = n_list;

  if (!arms.empty()) {
    spec.arms.clear();
    std::string arm;
    for (std::size_t pos = 0; pos <= arms.size(); ++pos) {
      if (pos < arms.size() && arms[pos] != ',') {
        arm += arms[pos];
        continue;
      }
      if (!arm.empty()) spec.arms.push_back(arm);
      arm.clear();
    }
  }

#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
  BenchReport rep = bench_backward(spec);
  std::printf("%s", format_report(rep).c_str());
  if (!out.empty()) emit_report(rep, out);
  return 0;
}

int run_synth(const std::string& out, std::size_t n, std::uint64_t seed) {
  Dataset ds = synthetic_cifar(n, seed, "train");
  write_cifar_batch(out, ds);
  std::printf("wrote %zu records to %s\n", ds.size(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NMF layers with one-step approximate backprop"};
  app.require_subcommand(1);

  auto* factorize_cmd = app.add_subcommand("factorize", "KL-NMF of a CSV matrix");
  std::string f_input, f_w = "w.csv", f_h = "h.csv";
  std::size_t f_latents = 4, f_iters = 100;
  std::uint64_t f_seed = 1;
  factorize_cmd->add_option("--input", f_input, "CSV matrix, rows are samples")->required();
  factorize_cmd->add_option("--w-out", f_w, "output CSV for the basis");
  factorize_cmd->add_option("--h-out", f_h, "output CSV for the activations");
  factorize_cmd->add_option("--latents", f_latents, "number of basis vectors");
  factorize_cmd->add_option("--iters", f_iters, "alternating update rounds");
  factorize_cmd->add_option("--seed", f_seed, "init seed");

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "gradient fidelity table");
  std::size_t g_trials = 10;
  std::uint64_t g_seed = 7;
  gradcheck_cmd->add_option("--trials", g_trials, "random instances");
  gradcheck_cmd->add_option("--seed", g_seed, "instance seed");

  auto* train_cmd = app.add_subcommand("train", "train a model");
  std::string t_config, t_data, t_out = "out", t_synth;
  bool t_verbose = false;
  train_cmd->add_option("--config", t_config, "config file (empty = defaults)");
  train_cmd->add_option("--data", t_data, "directory with CIFAR-10 binary batches");
  train_cmd->add_option("--synth", t_synth, "train on N generated images instead of --data");
  train_cmd->add_option("--out", t_out, "output directory (report.csv, best.ckpt)");
  train_cmd->add_flag("--verbose", t_verbose, "print per-epoch rows");

  auto* bench_cmd = app.add_subcommand("bench", "backward-pass time/memory comparison");
  std::string b_layer = "S=1600,I=64,N=75", b_arms = "cnn,unrolled,approx", b_out;
  std::size_t b_reps = 11;
  int b_threads = 1;
  bench_cmd->add_option("--layer", b_layer, "S=...,I=...,N=...[,B=...]; repeat N for sweeps");
  bench_cmd->add_option("--arms", b_arms, "comma list: cnn,unrolled,approx");
  bench_cmd->add_option("--out", b_out, "CSV report path");
  bench_cmd->add_option("--reps", b_reps, "timing repetitions");
  bench_cmd->add_option("--threads", b_threads, "OpenMP threads (default 1 for stable timings)");

  auto* synth_cmd = app.add_subcommand("synth", "write a generated dataset batch");
  std::string s_out = "synthetic_batch.bin";
  std::size_t s_n = 10000;
  std::uint64_t s_seed = 42;
  synth_cmd->add_option("--out", s_out, "output .bin path");
  synth_cmd->add_option("--n", s_n, "record count");
  synth_cmd->add_option("--seed", s_seed, "generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*factorize_cmd) return run_factorize(f_input, f_w, f_h, f_latents, f_iters, f_seed);
    if (*gradcheck_cmd) return run_gradcheck(g_trials, g_seed);
    if (*train_cmd) {
      if (t_data.empty() && t_synth.empty())
        throw std::invalid_argument("train needs --data or --synth");
      return run_train(t_config, t_data, t_out, t_synth, t_verbose);
    }
    if (*bench_cmd) return run_bench(b_layer, b_arms, b_out, b_reps, b_threads);
    if (*synth_cmd) return run_synth(s_out, s_n, s_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
