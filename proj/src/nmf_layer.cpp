#include "nmfnet/nmf_layer.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace nmfnet {

Tensor derive_w(const Tensor& u) {
  if (u.rank() != 2) throw std::invalid_argument("derive_w: expects [S,I]");
  const std::size_t s = u.dim(0), i = u.dim(1);
  Tensor w({s, i});
  for (std::size_t j = 0; j < i; ++j) {
    double sum = 0.0;
    for (std::size_t si = 0; si < s; ++si) sum += std::fabs(u.at(si, j));
    if (sum <= 0.0)
      throw std::runtime_error("derive_w: dead latent (|U| column " + std::to_string(j) +
                               " sums to zero)");
    for (std::size_t si = 0; si < s; ++si) w.at(si, j) = std::fabs(u.at(si, j)) / sum;
  }
  return w;
}

Tensor normalize_input(const Tensor& x) {
  if (x.rank() < 1) throw std::invalid_argument("normalize_input: scalar input");
  const std::size_t s = x.shape().back();
  const std::size_t rows = x.size() / s;
  Tensor out = x;
  double* p = out.data();
  for (std::size_t r = 0; r < rows; ++r, p += s) {
    double sum = 0.0;
    for (std::size_t k = 0; k < s; ++k) {
      if (p[k] < 0.0) throw std::invalid_argument("normalize_input: negative entry");
      sum += p[k];
    }
    if (sum > 0.0) {
      const double inv = 1.0 / sum;
      for (std::size_t k = 0; k < s; ++k) p[k] *= inv;
    } else {
      const double v = 1.0 / static_cast<double>(s);
      for (std::size_t k = 0; k < s; ++k) p[k] = v;
    }
  }
  return out;
}

namespace {

constexpr std::size_t kLanes = 8;

// One in-place update of eight rows given per-lane row pointers. The latent
// axis is transposed into block-local scratch so each pass over W feeds all
// lanes at once (W is streamed once per block instead of once per row, and
// the lane loops vectorize). A ragged tail is padded with dummy rows that
// point outside the real data, so every row goes through identical
// arithmetic no matter where it lands in the batch.
void step_block(const double* const* xr, double* const* hr, double* const* rr, bool want_r,
                const double* __restrict w, std::size_t s, std::size_t i, double epsilon,
                double* __restrict ht, double* __restrict qt, double* __restrict at) {
  for (std::size_t j = 0; j < i; ++j)
    for (std::size_t b = 0; b < kLanes; ++b) ht[j * kLanes + b] = hr[b][j];
  for (std::size_t si = 0; si < s; ++si) {
    const double* wr = w + si * i;
    // Four independent accumulators; a single one serialises on FMA latency.
    double a0[kLanes] = {}, a1[kLanes] = {}, a2[kLanes] = {}, a3[kLanes] = {};
    std::size_t j = 0;
    for (; j + 4 <= i; j += 4) {
      const double* hj = ht + j * kLanes;
      const double w0 = wr[j], w1 = wr[j + 1], w2 = wr[j + 2], w3 = wr[j + 3];
      for (std::size_t b = 0; b < kLanes; ++b) a0[b] += w0 * hj[b];
      for (std::size_t b = 0; b < kLanes; ++b) a1[b] += w1 * hj[kLanes + b];
      for (std::size_t b = 0; b < kLanes; ++b) a2[b] += w2 * hj[2 * kLanes + b];
      for (std::size_t b = 0; b < kLanes; ++b) a3[b] += w3 * hj[3 * kLanes + b];
    }
    for (; j < i; ++j) {
      const double wj = wr[j];
      const double* hj = ht + j * kLanes;
      for (std::size_t b = 0; b < kLanes; ++b) a0[b] += wj * hj[b];
    }
    for (std::size_t b = 0; b < kLanes; ++b) {
      double r = (a0[b] + a1[b]) + (a2[b] + a3[b]);
      if (r < kEpsDiv) r = kEpsDiv;
      if (want_r) rr[b][si] = r;
      qt[si * kLanes + b] = xr[b][si] / r;
    }
  }
  for (std::size_t j = 0; j < i * kLanes; ++j) at[j] = 0.0;
  std::size_t si = 0;
  // Four W rows per accumulator update: one load/store of at per four FMAs.
  for (; si + 4 <= s; si += 4) {
    const double *w0 = w + si * i, *w1 = w0 + i, *w2 = w1 + i, *w3 = w2 + i;
    const double* qv = qt + si * kLanes;
    for (std::size_t j = 0; j < i; ++j) {
      double* aj = at + j * kLanes;
      for (std::size_t b = 0; b < kLanes; ++b)
        aj[b] += ((w0[j] * qv[b] + w1[j] * qv[kLanes + b]) +
                  (w2[j] * qv[2 * kLanes + b] + w3[j] * qv[3 * kLanes + b]));
    }
  }
  for (; si < s; ++si) {
    const double* wr = w + si * i;
    const double* qv = qt + si * kLanes;
    for (std::size_t j = 0; j < i; ++j) {
      const double wj = wr[j];
      double* aj = at + j * kLanes;
      for (std::size_t b = 0; b < kLanes; ++b) aj[b] += wj * qv[b];
    }
  }
  for (std::size_t j = 0; j < i; ++j)
    for (std::size_t b = 0; b < kLanes; ++b) {
      double& hv = hr[b][j];
      hv += epsilon * hv * (at[j * kLanes + b] - 1.0);
    }
}

// One in-place update over all rows.
void step_rows(const double* __restrict x, const double* __restrict w,
               double* __restrict h, std::size_t m, std::size_t s, std::size_t i,
               double epsilon, double* r_out) {
  const std::size_t n_blocks = (m + kLanes - 1) / kLanes;
  const bool want_r = r_out != nullptr;
#pragma omp parallel
  {
    std::vector<double> ht(i * kLanes), qt(s * kLanes), at(i * kLanes);
    std::vector<double> x_pad(s, 0.0), h_pad, r_pad;
#pragma omp for schedule(static)
    for (std::ptrdiff_t blk = 0; blk < static_cast<std::ptrdiff_t>(n_blocks); ++blk) {
      const std::size_t row0 = static_cast<std::size_t>(blk) * kLanes;
      const std::size_t live = std::min(kLanes, m - row0);
      const double* xr[kLanes];
      double* hr[kLanes];
      double* rr[kLanes];
      if (live < kLanes) {  // pad dead lanes with dummy rows (x=0, h=1)
        if (h_pad.empty()) {
          h_pad.assign(i * kLanes, 1.0);
          if (want_r) r_pad.resize(s);
        }
        std::copy(h + row0 * i, h + m * i, h_pad.begin());
      }
      for (std::size_t b = 0; b < kLanes; ++b) {
        const bool on = b < live;
        xr[b] = on ? x + (row0 + b) * s : x_pad.data();
        hr[b] = live < kLanes ? h_pad.data() + b * i : h + (row0 + b) * i;
        rr[b] = want_r ? (on ? r_out + (row0 + b) * s : r_pad.data()) : nullptr;
      }
      step_block(xr, hr, rr, want_r, w, s, i, epsilon, ht.data(), qt.data(), at.data());
      if (live < kLanes) std::copy(h_pad.begin(), h_pad.begin() + live * i, h + row0 * i);
    }
  }
}

}  // namespace

Tensor h_step(const Tensor& x, const Tensor& w, const Tensor& h, double epsilon) {
  if (x.rank() != 2 || w.rank() != 2 || h.rank() != 2)
    throw std::invalid_argument("h_step: expects rank-2 tensors");
  const std::size_t m = x.dim(0), s = x.dim(1), i = w.dim(1);
  if (w.dim(0) != s || h.dim(0) != m || h.dim(1) != i)
    throw std::invalid_argument("h_step: shape mismatch");
  Tensor out = h;
  step_rows(x.data(), w.data(), out.data(), m, s, i, epsilon, nullptr);
  out.check_finite("h_step");
  return out;
}

NmfForwardState nmf_forward(const Tensor& x, const Tensor& w, std::size_t n_iters,
                            double epsilon) {
  if (n_iters == 0) throw std::invalid_argument("nmf_forward: n_iters must be >= 1");
  const std::size_t m = x.dim(0), s = x.dim(1), i = w.dim(1);
  if (w.dim(0) != s) throw std::invalid_argument("nmf_forward: x/w shape mismatch");
  NmfForwardState st;
  st.n_iters = n_iters;
  st.epsilon = epsilon;
  st.x = x;
  st.h = Tensor::full({m, i}, 1.0 / static_cast<double>(i));
  st.r = Tensor({m, s});
  for (std::size_t t = 1; t + 1 <= n_iters; ++t)
    step_rows(x.data(), w.data(), st.h.data(), m, s, i, epsilon, nullptr);
  st.h_pre = st.h;  // state the final update is taken from
  step_rows(x.data(), w.data(), st.h.data(), m, s, i, epsilon, st.r.data());
  st.h.check_finite("nmf_forward");
  return st;
}

Tensor cnmf_forward(const Tensor& x, const Tensor& w, const ConvSpec& spec,
                    std::size_t n_iters, double epsilon,
                    std::vector<NmfForwardState>* states) {
  spec.validate();
  if (x.dim(1) != spec.in_channels)
    throw std::invalid_argument("cnmf_forward: input channels disagree with spec");
  const std::size_t b = x.dim(0), h = x.dim(2), wdt = x.dim(3);
  const std::size_t cg = spec.in_channels / spec.groups;
  const std::size_t og = spec.out_channels / spec.groups;
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(wdt), l = oh * ow;
  const std::size_t s = spec.patch_len();
  if (w.dim(0) != s || w.dim(1) != spec.out_channels)
    throw std::invalid_argument("cnmf_forward: weight shape disagrees with spec");
  Tensor out({b, spec.out_channels, oh, ow});
  if (states) states->clear();
  for (std::size_t g = 0; g < spec.groups; ++g) {
    Tensor cols = unfold(x, spec, g * cg, cg);          // [B,L,S]
    Tensor patches({b * l, s}, std::vector<double>(cols.data(), cols.data() + cols.size()));
    Tensor xn = normalize_input(patches);
    // weight columns of this group, contiguous [S, og]
    Tensor wg({s, og});
    for (std::size_t si = 0; si < s; ++si)
      for (std::size_t j = 0; j < og; ++j) wg.at(si, j) = w.at(si, g * og + j);
    NmfForwardState st = nmf_forward(xn, wg, n_iters, epsilon);
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t j = 0; j < og; ++j)
        for (std::size_t p = 0; p < l; ++p)
          out.data()[((bi * spec.out_channels + g * og + j) * l) + p] =
              st.h.at(bi * l + p, j);
    if (states) states->push_back(std::move(st));
  }
  return out;
}

}  // namespace nmfnet
