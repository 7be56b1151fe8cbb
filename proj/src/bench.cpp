#include "nmfnet/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "nmfnet/backprop.hpp"
#include "nmfnet/nmf_layer.hpp"
#include "nmfnet/rng.hpp"

namespace nmfnet {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mad(const std::vector<double>& v, double med) {
  std::vector<double> dev;
  dev.reserve(v.size());
  for (double x : v) dev.push_back(std::fabs(x - med));
  return median(dev);
}

using Clock = std::chrono::steady_clock;

template <typename F>
std::vector<double> time_reps(std::size_t warmups, std::size_t reps, F&& fn) {
  for (std::size_t k = 0; k < warmups; ++k) fn();
  std::vector<double> ns;
  ns.reserve(reps);
  for (std::size_t k = 0; k < reps; ++k) {
    const auto t0 = Clock::now();
    fn();
    ns.push_back(std::chrono::duration<double, std::nano>(Clock::now() - t0).count());
  }
  return ns;
}

double cosine(const Tensor& a, const Tensor& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

BenchReport bench_backward(const BenchSpec& spec) {
  if (spec.arms.empty()) throw std::invalid_argument("bench_backward: empty arm list");
  if (spec.repetitions < 5) throw std::invalid_argument("bench_backward: repetitions must be >= 5");
  for (const std::string& a : spec.arms)
    if (a != "cnn" && a != "unrolled" && a != "approx")
      throw std::invalid_argument("bench_backward: unknown arm '" + a + "'");
  BenchReport rep;
  rep.s = spec.s;
  rep.i = spec.i;
  rep.batch = spec.batch;
  rep.repetitions = spec.repetitions;
#ifdef _OPENMP
  rep.threads = omp_get_max_threads();
#else
  rep.threads = 1;
#endif

  const std::size_t m = spec.batch, s = spec.s, i = spec.i;
  Rng rng(spec.seed);
  const Tensor x = normalize_input(uniform_tensor({m, s}, rng, 0.05, 1.0));
  Tensor u = uniform_tensor({s, i}, rng, 0.05, 1.0);
  const Tensor w = derive_w(u);
  const Tensor phi = normal_tensor({m, i}, rng);

  auto has_arm = [&](const std::string& a) {
    return std::find(spec.arms.begin(), spec.arms.end(), a) != spec.arms.end();
  };

  BenchArm* cnn_arm = nullptr;
  if (has_arm("cnn")) {
    // dense linear layer of the same shape: y = x W
    BenchArm arm;
    arm.name = "cnn";
    Tensor y;
    auto fwd = time_reps(spec.warmups, spec.repetitions, [&] { y = matmul(x, w); });
    Tensor gx({m, s}), gw({s, i});
    auto bwd = time_reps(spec.warmups, spec.repetitions, [&] {
      gx = Tensor({m, s});
      gw = Tensor({s, i});
      for (std::size_t row = 0; row < m; ++row)
        for (std::size_t si = 0; si < s; ++si) {
          const double* wr = w.data() + si * i;
          const double* pr = phi.data() + row * i;
          double acc = 0.0;
          for (std::size_t j = 0; j < i; ++j) acc += wr[j] * pr[j];
          gx.at(row, si) = acc;
          const double xv = x.at(row, si);
          double* gr = gw.data() + si * i;
          for (std::size_t j = 0; j < i; ++j) gr[j] += xv * pr[j];
        }
    });
    arm.forward_ns = median(fwd);
    arm.backward_ns = median(bwd);
    arm.backward_mad = mad(bwd, arm.backward_ns);
    arm.unstable = arm.backward_mad / arm.backward_ns >= 0.2;
    arm.memory_bytes = sizeof(double) * (m * s /*x*/ + m * s /*gx*/ + s * i /*gw*/);
    rep.arms.push_back(arm);
    cnn_arm = &rep.arms.back();
  }

  Tensor approx_phi_in, unrolled_phi_in;
  for (std::size_t n : spec.n_iters) {
    if (has_arm("approx")) {
      BenchArm arm;
      arm.name = "nmf_approx";
      arm.n_iters = n;
      NmfForwardState st;
      auto fwd = time_reps(spec.warmups >= 1 ? 1 : 0, std::max<std::size_t>(spec.repetitions / 2, 5),
                           [&] { st = nmf_forward(x, w, n, 1.0); });
      Tensor phi_in, gw;
      auto bwd = time_reps(spec.warmups, spec.repetitions, [&] {
        phi_in = backprop_input(phi, st, w);
        gw = weight_grad(phi, st, w);
      });
      approx_phi_in = phi_in;
      arm.forward_ns = median(fwd);
      arm.backward_ns = median(bwd);
      arm.backward_mad = mad(bwd, arm.backward_ns);
      arm.unstable = arm.backward_mad / arm.backward_ns >= 0.2;
      // retained: x, h_pre, h, r; transient: phi_in, grad_w, scratch
      arm.memory_bytes = sizeof(double) * (m * s + 2 * m * i + m * s  /*retained*/
                                           + m * s + s * i + s + i    /*transient*/);
      rep.arms.push_back(arm);
    }
    if (has_arm("unrolled")) {
      BenchArm arm;
      arm.name = "nmf_unrolled";
      arm.n_iters = n;
      UnrolledTape tape;
      auto fwd = time_reps(0, 5, [&] { tape = unrolled_forward(x, w, n, 1.0); });
      UnrolledResult res;
      auto bwd = time_reps(spec.warmups, spec.repetitions, [&] {
        res = unrolled_reverse(tape, phi);
      });
      unrolled_phi_in = res.phi_in;
      arm.forward_ns = median(fwd);
      arm.backward_ns = median(bwd);
      arm.backward_mad = mad(bwd, arm.backward_ns);
      arm.unstable = arm.backward_mad / arm.backward_ns >= 0.2;
      // retained: x plus all n iterates and the output; transient: phi_in,
      // grad_w, per-row scratch
      arm.memory_bytes = sizeof(double) * (m * s + (n + 1) * m * i            /*retained*/
                                           + m * s + s * i + 2 * s + 2 * i);  /*transient*/
      rep.arms.push_back(arm);
    }
  }
  if (approx_phi_in.size() > 0 && unrolled_phi_in.size() > 0)
    rep.grad_cosine = cosine(approx_phi_in, unrolled_phi_in);
  if (cnn_arm) {
    for (BenchArm& a : rep.arms) {
      a.time_ratio_vs_cnn = a.backward_ns / cnn_arm->backward_ns;
      a.mem_ratio_vs_cnn =
          static_cast<double>(a.memory_bytes) / static_cast<double>(cnn_arm->memory_bytes);
    }
  }
  return rep;
}

namespace {
std::string sig3(double v) {
  std::ostringstream ss;
  ss.precision(3);
  ss << v;
  return ss.str();
}
}  // namespace

void emit_report(const BenchReport& rep, const std::string& csv_path) {
  std::ofstream f(csv_path);
  if (!f) throw std::runtime_error("cannot write " + csv_path);
  f.precision(17);
  f << "# s=" << rep.s << " i=" << rep.i << " batch=" << rep.batch
    << " repetitions=" << rep.repetitions << " threads=" << rep.threads
    << " grad_cosine=" << rep.grad_cosine << "\n";
  f << "arm,n_iters,forward_ns,backward_ns,backward_mad,memory_bytes,unstable,"
       "time_ratio_vs_cnn,mem_ratio_vs_cnn\n";
  for (const BenchArm& a : rep.arms)
    f << a.name << "," << a.n_iters << "," << a.forward_ns << "," << a.backward_ns << ","
      << a.backward_mad << "," << a.memory_bytes << "," << (a.unstable ? 1 : 0) << ","
      << a.time_ratio_vs_cnn << "," << a.mem_ratio_vs_cnn << "\n";
}

std::string format_report(const BenchReport& rep) {
  std::ostringstream out;
  out << "backward bench  S=" << rep.s << " I=" << rep.i << " batch=" << rep.batch
      << " reps=" << rep.repetitions << " threads=" << rep.threads << "\n";
  out << "arm             N    backward(ms)  mem(MiB)  time_vs_cnn  mem_vs_cnn\n";
  for (const BenchArm& a : rep.arms) {
    char line[160];
    std::snprintf(line, sizeof line, "%-14s %4zu  %12.3f  %8.2f  %11s  %10s%s\n", a.name.c_str(),
                  a.n_iters, a.backward_ns / 1e6, a.memory_bytes / (1024.0 * 1024.0),
                  sig3(a.time_ratio_vs_cnn).c_str(), sig3(a.mem_ratio_vs_cnn).c_str(),
                  a.unstable ? "  [unstable]" : "");
    out << line;
  }
  if (rep.grad_cosine >= -1.0)
    out << "approx-vs-unrolled input-gradient cosine: " << sig3(rep.grad_cosine) << "\n";
  return out.str();
}

BenchReport parse_report_csv(const std::string& csv_path) {
  std::ifstream f(csv_path);
  if (!f) throw std::runtime_error("cannot open " + csv_path);
  BenchReport rep;
  std::string line;
  if (!std::getline(f, line) || line.rfind("# ", 0) != 0)
    throw std::runtime_error(csv_path + ": missing metadata line");
  {
    std::istringstream ss(line.substr(2));
    std::string tok;
    while (ss >> tok) {
      const auto eq = tok.find('=');
      const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
      if (key == "s") rep.s = std::stoul(val);
      else if (key == "i") rep.i = std::stoul(val);
      else if (key == "batch") rep.batch = std::stoul(val);
      else if (key == "repetitions") rep.repetitions = std::stoul(val);
      else if (key == "threads") rep.threads = std::stoi(val);
      else if (key == "grad_cosine") rep.grad_cosine = std::stod(val);
    }
  }
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    BenchArm a;
    std::getline(ss, a.name, ',');
    std::getline(ss, cell, ','); a.n_iters = std::stoul(cell);
    std::getline(ss, cell, ','); a.forward_ns = std::stod(cell);
    std::getline(ss, cell, ','); a.backward_ns = std::stod(cell);
    std::getline(ss, cell, ','); a.backward_mad = std::stod(cell);
    std::getline(ss, cell, ','); a.memory_bytes = std::stoul(cell);
    std::getline(ss, cell, ','); a.unstable = cell == "1";
    std::getline(ss, cell, ','); a.time_ratio_vs_cnn = std::stod(cell);
    std::getline(ss, cell, ','); a.mem_ratio_vs_cnn = std::stod(cell);
    rep.arms.push_back(a);
  }
  return rep;
}

}  // namespace nmfnet
