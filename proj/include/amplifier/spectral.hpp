#pragma once

// Discrete Fourier transforms over the trailing axis, energy accounting,
// spectrum flipping and frequency-band bookkeeping.
//
// Convention: the forward transform is unnormalised,
//   X[k] = sum_n x[n] exp(-2 pi i k n / L),
// and the inverse carries the 1/L factor. Transforms use an iterative radix-2
// FFT when L is a power of two and a direct O(L^2) evaluation otherwise.

#include <cstddef>
#include <span>
#include <vector>

#include "amplifier/tensor.hpp"

namespace amp::spectral {

// In-place complex transform of `rows` contiguous rows of length `len`.
void transform_rows(std::span<double> re, std::span<double> im, std::size_t rows, std::size_t len,
                    bool inverse);

// Complex bins as a pair of real tensors of identical shape [..., K].
struct Spectrum {
  Tensor re;
  Tensor im;
  std::size_t length = 0;  // time length the bins came from

  std::size_t bins() const { return re.shape().back(); }
};

Spectrum dft(const Tensor& x);
// Complex-input forward transform; used by restoration and tests.
Spectrum dft(const Tensor& re, const Tensor& im);

struct InverseResult {
  Tensor real;
  // Largest |imag| discarded; nonzero only for spectra that are not
  // conjugate-symmetric.
  double max_imag_residue = 0.0;
};

InverseResult idft(const Spectrum& s);

// out[k] = s[(L - k) mod L]; bin 0 maps to itself.
Spectrum flip_spectrum(const Spectrum& s);

struct Energy {
  std::vector<double> per_bin;  // rows x K, row-major, |X|^2
  std::vector<double> total;    // one entry per row (channel)
  std::size_t bins = 0;
};

Energy energy(const Spectrum& s);

struct Amplified {
  Tensor x_amp;
  Spectrum flipped;
};

// X_amp = X + flip(X), x_amp = IDFT(X_amp). Differentiable end to end.
Amplified amplify(const Tensor& x);

// Partition of the bins [0, length) into a high-energy and a low-energy set.
class BandPartition {
 public:
  BandPartition() = default;
  // Throws std::invalid_argument unless the sets are disjoint and cover [0, length).
  BandPartition(std::size_t length, std::vector<std::size_t> high, std::vector<std::size_t> low,
                double energy_fraction = 0.0);

  // Ranks conjugate pairs (k, L-k) of bins 1..L-1 by energy and takes the
  // smallest prefix holding `fraction` of the non-DC energy as the high set.
  // DC joins whichever set keeps min(high) >= max(low).
  static BandPartition by_energy(std::span<const double> bin_energy, double fraction = 0.99);

  std::size_t length() const { return length_; }
  const std::vector<std::size_t>& high() const { return high_; }
  const std::vector<std::size_t>& low() const { return low_; }
  double energy_fraction() const { return energy_fraction_; }
  bool is_high(std::size_t bin) const { return mask_.at(bin); }

 private:
  std::size_t length_ = 0;
  std::vector<std::size_t> high_;
  std::vector<std::size_t> low_;
  std::vector<bool> mask_;
  double energy_fraction_ = 0.0;
};

struct LossSplit {
  double loss_high = 0.0;
  double loss_low = 0.0;
  double share_high = 0.0;  // NaN when the total is zero
  double share_low = 0.0;
  double total() const { return loss_high + loss_low; }
};

// Splits the time-domain sum of squared errors of err [..., tau] by band
// using Parseval: SSE = (1/tau) sum_k |E[k]|^2.
LossSplit parseval_loss_split(const Tensor& err, const BandPartition& bands);

// Zeroes the lowest-energy (1 - keep_fraction) of each row's bins, keeping
// conjugate pairs together, and returns the inverse transform.
Tensor band_filter(const Tensor& x, double keep_fraction);

// Mean per-bin energy over all rows of x [..., L]; the usual reference
// spectrum for BandPartition::by_energy.
std::vector<double> mean_bin_energy(const Tensor& x);

}  // namespace amp::spectral
