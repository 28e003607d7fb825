#include "amplifier/spectral.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>

namespace amp::spectral {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;

// Direct-evaluation matrices are used up to this length; beyond it the
// quadratic loop avoids an O(L^2) table.
constexpr std::size_t kDenseLimit = 1024;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// cos/sin of 2*pi*j/len for j in [0, len).
struct Twiddles {
  std::vector<double> c;
  std::vector<double> s;
};

const Twiddles& twiddles(std::size_t len) {
  thread_local std::map<std::size_t, Twiddles> cache;
  auto it = cache.find(len);
  if (it != cache.end()) return it->second;
  Twiddles t;
  t.c.resize(len);
  t.s.resize(len);
  for (std::size_t j = 0; j < len; ++j) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(len);
    t.c[j] = std::cos(angle);
    t.s[j] = std::sin(angle);
  }
  return cache.emplace(len, std::move(t)).first->second;
}

struct DenseBasis {
  RowMat cos;
  RowMat sin;
};

const DenseBasis& dense_basis(std::size_t len) {
  thread_local std::map<std::size_t, DenseBasis> cache;
  auto it = cache.find(len);
  if (it != cache.end()) return it->second;
  const Twiddles& t = twiddles(len);
  DenseBasis b{RowMat(len, len), RowMat(len, len)};
  for (std::size_t n = 0; n < len; ++n) {
    for (std::size_t k = 0; k < len; ++k) {
      const std::size_t j = (n * k) % len;
      b.cos(n, k) = t.c[j];
      b.sin(n, k) = t.s[j];
    }
  }
  return cache.emplace(len, std::move(b)).first->second;
}

void fft_pow2(double* re, double* im, std::size_t n, bool inverse) {
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  const Twiddles& t = twiddles(n);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t size = 2; size <= n; size <<= 1) {
    const std::size_t half = size / 2;
    const std::size_t step = n / size;
    for (std::size_t start = 0; start < n; start += size) {
      for (std::size_t k = 0; k < half; ++k) {
        const double wr = t.c[k * step];
        const double wi = sign * t.s[k * step];
        const std::size_t a = start + k;
        const std::size_t b = a + half;
        const double tr = re[b] * wr - im[b] * wi;
        const double ti = re[b] * wi + im[b] * wr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
      }
    }
  }
}

void direct_loop(double* re, double* im, std::size_t n, bool inverse) {
  const Twiddles& t = twiddles(n);
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<double> out_re(n, 0.0), out_im(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double sr = 0.0, si = 0.0;
    for (std::size_t m = 0; m < n; ++m) {
      const std::size_t j = (k * m) % n;
      const double wr = t.c[j];
      const double wi = sign * t.s[j];
      sr += re[m] * wr - im[m] * wi;
      si += re[m] * wi + im[m] * wr;
    }
    out_re[k] = sr;
    out_im[k] = si;
  }
  std::copy(out_re.begin(), out_re.end(), re);
  std::copy(out_im.begin(), out_im.end(), im);
}

void direct_dense(double* re, double* im, std::size_t rows, std::size_t n, bool inverse) {
  const DenseBasis& b = dense_basis(n);
  MapMat xr(re, rows, n);
  MapMat xi(im, rows, n);
  RowMat out_re(rows, n);
  RowMat out_im(rows, n);
  if (inverse) {
    out_re.noalias() = xr * b.cos;
    out_re.noalias() -= xi * b.sin;
    out_im.noalias() = xi * b.cos;
    out_im.noalias() += xr * b.sin;
  } else {
    out_re.noalias() = xr * b.cos;
    out_re.noalias() += xi * b.sin;
    out_im.noalias() = xi * b.cos;
    out_im.noalias() -= xr * b.sin;
  }
  xr = out_re;
  xi = out_im;
}

void check_spectrum(const Spectrum& s, const char* who) {
  if (s.re.shape() != s.im.shape() || s.re.rank() < 1) {
    throw std::invalid_argument(std::string(who) + ": re/im shapes differ: " +
                                shape_str(s.re.shape()) + " vs " + shape_str(s.im.shape()));
  }
}

// Transform over the last axis of (re, im), returned packed as [..., 2L]
// with the real part first. The adjoint of the unnormalised forward map is
// L times the inverse map and vice versa, so backward reuses transform_rows.
Tensor packed_transform(const Tensor& re, const Tensor& im, bool inverse) {
  if (re.shape() != im.shape() || re.rank() < 1) {
    throw std::invalid_argument("dft: re/im shapes differ: " + shape_str(re.shape()) + " vs " +
                                shape_str(im.shape()));
  }
  const std::size_t len = re.shape().back();
  const std::size_t rows = len == 0 ? 0 : re.numel() / len;
  std::vector<double> wr = re.to_vector();
  std::vector<double> wi = im.to_vector();
  transform_rows(wr, wi, rows, len, inverse);
  std::vector<double> packed(rows * 2 * len);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(wr.data() + r * len, len, packed.data() + r * 2 * len);
    std::copy_n(wi.data() + r * len, len, packed.data() + r * 2 * len + len);
  }
  Shape shape = re.shape();
  shape.back() = 2 * len;
  return record_op(inverse ? "idft" : "dft", std::move(shape), std::move(packed), {re, im},
                   [rows, len, inverse](std::span<const double> g, std::span<std::span<double>> in) {
                     std::vector<double> gr(rows * len), gi(rows * len);
                     for (std::size_t r = 0; r < rows; ++r) {
                       std::copy_n(g.data() + r * 2 * len, len, gr.data() + r * len);
                       std::copy_n(g.data() + r * 2 * len + len, len, gi.data() + r * len);
                     }
                     transform_rows(gr, gi, rows, len, !inverse);
                     const double factor =
                         inverse ? 1.0 / static_cast<double>(len) : static_cast<double>(len);
                     for (std::size_t i = 0; i < in[0].size(); ++i) in[0][i] += factor * gr[i];
                     for (std::size_t i = 0; i < in[1].size(); ++i) in[1][i] += factor * gi[i];
                   });
}

Spectrum unpack(const Tensor& packed, std::size_t len) {
  const std::size_t axis = packed.rank() - 1;
  return Spectrum{slice(packed, axis, 0, len), slice(packed, axis, len, 2 * len), len};
}

}  // namespace

void transform_rows(std::span<double> re, std::span<double> im, std::size_t rows, std::size_t len,
                    bool inverse) {
  if (re.size() != rows * len || im.size() != rows * len) {
    throw std::invalid_argument("transform_rows: buffer size does not match rows x len");
  }
  if (len <= 1 || rows == 0) return;
  if (is_pow2(len)) {
    for (std::size_t r = 0; r < rows; ++r) fft_pow2(re.data() + r * len, im.data() + r * len, len, inverse);
  } else if (len <= kDenseLimit) {
    direct_dense(re.data(), im.data(), rows, len, inverse);
  } else {
    for (std::size_t r = 0; r < rows; ++r) direct_loop(re.data() + r * len, im.data() + r * len, len, inverse);
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(len);
    for (double& v : re) v *= inv;
    for (double& v : im) v *= inv;
  }
}

Spectrum dft(const Tensor& x) {
  if (x.rank() < 1 || x.shape().back() == 0) {
    throw std::invalid_argument("dft: need a non-empty trailing axis, got " + shape_str(x.shape()));
  }
  return dft(x, Tensor::zeros(x.shape()));
}

Spectrum dft(const Tensor& re, const Tensor& im) {
  const std::size_t len = re.shape().back();
  return unpack(packed_transform(re, im, false), len);
}

InverseResult idft(const Spectrum& s) {
  check_spectrum(s, "idft");
  const std::size_t len = s.bins();
  Spectrum out = unpack(packed_transform(s.re, s.im, true), len);
  double residue = 0.0;
  for (double v : out.im.data()) residue = std::max(residue, std::abs(v));
  return {out.re, residue};
}

Spectrum flip_spectrum(const Spectrum& s) {
  check_spectrum(s, "flip_spectrum");
  const std::size_t len = s.bins();
  std::vector<std::size_t> index(len);
  for (std::size_t k = 0; k < len; ++k) index[k] = (len - k) % len;
  return Spectrum{gather_last(s.re, index), gather_last(s.im, index), s.length};
}

Energy energy(const Spectrum& s) {
  check_spectrum(s, "energy");
  Energy e;
  e.bins = s.bins();
  const std::size_t rows = e.bins == 0 ? 0 : s.re.numel() / e.bins;
  auto re = s.re.data();
  auto im = s.im.data();
  e.per_bin.resize(re.size());
  e.total.assign(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < e.bins; ++k) {
      const std::size_t i = r * e.bins + k;
      e.per_bin[i] = re[i] * re[i] + im[i] * im[i];
      e.total[r] += e.per_bin[i];
    }
  }
  return e;
}

Amplified amplify(const Tensor& x) {
  Spectrum spec = dft(x);
  Spectrum flipped = flip_spectrum(spec);
  Spectrum sum{add(spec.re, flipped.re), add(spec.im, flipped.im), spec.length};
  return {idft(sum).real, flipped};
}

// ---------------------------------------------------------------------------
// Bands

BandPartition::BandPartition(std::size_t length, std::vector<std::size_t> high,
                             std::vector<std::size_t> low, double energy_fraction)
    : length_(length),
      high_(std::move(high)),
      low_(std::move(low)),
      mask_(length, false),
      energy_fraction_(energy_fraction) {
  if (length_ == 0) throw std::invalid_argument("BandPartition: empty band set");
  std::vector<int> seen(length_, 0);
  for (std::size_t k : high_) {
    if (k >= length_) throw std::invalid_argument("BandPartition: bin out of range");
    ++seen[k];
    mask_[k] = true;
  }
  for (std::size_t k : low_) {
    if (k >= length_) throw std::invalid_argument("BandPartition: bin out of range");
    ++seen[k];
  }
  for (std::size_t k = 0; k < length_; ++k) {
    if (seen[k] != 1) {
      throw std::invalid_argument("BandPartition: bin " + std::to_string(k) +
                                  (seen[k] == 0 ? " is not covered" : " appears twice"));
    }
  }
  std::sort(high_.begin(), high_.end());
  std::sort(low_.begin(), low_.end());
}

namespace {

// Conjugate-pair units over bins 1..L-1: (k, L-k), with the Nyquist bin alone.
std::vector<std::vector<std::size_t>> pair_units(std::size_t len, bool include_dc) {
  std::vector<std::vector<std::size_t>> units;
  if (include_dc) units.push_back({0});
  for (std::size_t k = 1; 2 * k < len; ++k) units.push_back({k, len - k});
  if (len % 2 == 0 && len >= 2) units.push_back({len / 2});
  return units;
}

double unit_energy(const std::vector<std::size_t>& unit, std::span<const double> e) {
  double total = 0.0;
  for (std::size_t k : unit) total += e[k];
  return total;
}

// Units by descending mean per-bin energy; ties keep index order.
void rank_units(std::vector<std::vector<std::size_t>>& units, std::span<const double> e) {
  std::stable_sort(units.begin(), units.end(), [&](const auto& a, const auto& b) {
    return unit_energy(a, e) / static_cast<double>(a.size()) >
           unit_energy(b, e) / static_cast<double>(b.size());
  });
}

}  // namespace

BandPartition BandPartition::by_energy(std::span<const double> bin_energy, double fraction) {
  const std::size_t len = bin_energy.size();
  if (len == 0) throw std::invalid_argument("BandPartition: empty band set");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("BandPartition: energy fraction must lie in (0, 1]");
  }
  auto units = pair_units(len, false);
  rank_units(units, bin_energy);
  double total = 0.0;
  for (std::size_t k = 1; k < len; ++k) total += bin_energy[k];
  std::vector<std::size_t> high, low;
  double acc = 0.0;
  for (const auto& unit : units) {
    if (total > 0.0 && acc < fraction * total) {
      acc += unit_energy(unit, bin_energy);
      high.insert(high.end(), unit.begin(), unit.end());
    } else {
      low.insert(low.end(), unit.begin(), unit.end());
    }
  }
  double min_high = std::numeric_limits<double>::infinity();
  for (std::size_t k : high) min_high = std::min(min_high, bin_energy[k]);
  if (!high.empty() && bin_energy[0] >= min_high) {
    high.push_back(0);
  } else {
    low.push_back(0);
  }
  return BandPartition(len, std::move(high), std::move(low), fraction);
}

LossSplit parseval_loss_split(const Tensor& err, const BandPartition& bands) {
  if (bands.length() == 0) throw std::invalid_argument("parseval_loss_split: empty band set");
  if (err.rank() < 1 || err.shape().back() != bands.length()) {
    throw std::invalid_argument("parseval_loss_split: error horizon " + shape_str(err.shape()) +
                                " does not match band length " + std::to_string(bands.length()));
  }
  const std::size_t len = bands.length();
  const std::size_t rows = err.numel() / len;
  std::vector<double> re = err.to_vector();
  std::vector<double> im(re.size(), 0.0);
  transform_rows(re, im, rows, len, false);
  LossSplit out;
  const double inv = 1.0 / static_cast<double>(len);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < len; ++k) {
      const std::size_t i = r * len + k;
      const double e = (re[i] * re[i] + im[i] * im[i]) * inv;
      (bands.is_high(k) ? out.loss_high : out.loss_low) += e;
    }
  }
  const double total = out.total();
  if (total > 0.0) {
    out.share_high = out.loss_high / total;
    out.share_low = out.loss_low / total;
  } else {
    out.share_high = out.share_low = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

Tensor band_filter(const Tensor& x, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw std::invalid_argument("band_filter: keep fraction must lie in (0, 1]");
  }
  if (x.rank() < 1) throw std::invalid_argument("band_filter: need at least one axis");
  if (keep_fraction == 1.0) return x.detach();
  const std::size_t len = x.shape().back();
  const std::size_t rows = len == 0 ? 0 : x.numel() / len;
  std::vector<double> re = x.to_vector();
  std::vector<double> im(re.size(), 0.0);
  transform_rows(re, im, rows, len, false);
  const auto target = static_cast<std::size_t>(
      std::ceil(keep_fraction * static_cast<double>(len) - 1e-9));
  const auto base_units = pair_units(len, true);
  std::vector<double> e(len);
  for (std::size_t r = 0; r < rows; ++r) {
    double* rr = re.data() + r * len;
    double* ri = im.data() + r * len;
    for (std::size_t k = 0; k < len; ++k) e[k] = rr[k] * rr[k] + ri[k] * ri[k];
    auto units = base_units;
    rank_units(units, e);
    std::size_t kept = 0;
    for (const auto& unit : units) {
      if (kept < target) {
        kept += unit.size();
        continue;
      }
      for (std::size_t k : unit) rr[k] = ri[k] = 0.0;
    }
  }
  transform_rows(re, im, rows, len, true);
  return Tensor::from(x.shape(), std::move(re));
}

std::vector<double> mean_bin_energy(const Tensor& x) {
  if (x.rank() < 1) throw std::invalid_argument("mean_bin_energy: need at least one axis");
  const std::size_t len = x.shape().back();
  const std::size_t rows = len == 0 ? 0 : x.numel() / len;
  std::vector<double> re = x.to_vector();
  std::vector<double> im(re.size(), 0.0);
  transform_rows(re, im, rows, len, false);
  std::vector<double> out(len, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < len; ++k) {
      const std::size_t i = r * len + k;
      out[k] += re[i] * re[i] + im[i] * im[i];
    }
  }
  if (rows > 0) {
    for (double& v : out) v /= static_cast<double>(rows);
  }
  return out;
}

}  // namespace amp::spectral
