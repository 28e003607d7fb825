#pragma once

// CSV ingestion, chronological splits, standardisation and sliding windows.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "amplifier/random.hpp"
#include "amplifier/tensor.hpp"

namespace amp {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Channels x rows, row-major by channel.
struct SeriesFrame {
  std::vector<std::string> timestamps;
  std::vector<std::string> channel_names;
  std::vector<double> values;

  std::size_t channels() const { return channel_names.size(); }
  std::size_t length() const { return timestamps.size(); }
  double& at(std::size_t c, std::size_t n) { return values[c * length() + n]; }
  double at(std::size_t c, std::size_t n) const { return values[c * length() + n]; }

  // Rows [begin, end).
  SeriesFrame rows(std::size_t begin, std::size_t end) const;
  // [C, N]
  Tensor as_tensor() const;
};

// Header "date,<channel>,..."; every other cell numeric. Errors carry 1-based
// line and column numbers.
SeriesFrame load_csv(const std::filesystem::path& path);
void write_csv(const SeriesFrame& frame, const std::filesystem::path& path);

struct RowRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

struct SplitRanges {
  RowRange train;
  RowRange val;
  RowRange test;
};

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

// train = [0, floor(N*train)), test = [N - floor(N*test) - L, N), val in between
// and extended back by L rows. Each segment must hold at least L + tau rows.
SplitRanges ratio_split(std::size_t rows, SplitRatios ratios, std::size_t lookback,
                        std::size_t horizon);

// Named protocols:
//   "ratio"       ratio_split with the given ratios
//   "ett-hour"    12/4/4 months of hourly rows (8640/2880/2880)
//   "ett-minute"  the same months at 15-minute resolution
//   "auto"        ett-hour / ett-minute for files named ETTh* / ETTm*, else ratio
SplitRanges named_split(const std::string& protocol, const std::string& dataset_name,
                        std::size_t rows, SplitRatios ratios, std::size_t lookback,
                        std::size_t horizon);

struct ScalerStats {
  std::vector<double> mean;
  std::vector<double> std;  // population std, floored at 1e-8

  static ScalerStats fit(const SeriesFrame& frame);
  SeriesFrame apply(const SeriesFrame& frame) const;
  SeriesFrame invert(const SeriesFrame& frame) const;
};

struct WindowBatch {
  Tensor inputs;   // [B, C, L]
  Tensor targets;  // [B, C, tau]
  std::vector<std::size_t> starts;
};

// All windows [t, t+L) -> [t+L, t+L+tau) of one segment.
class WindowSet {
 public:
  WindowSet(SeriesFrame frame, std::size_t lookback, std::size_t horizon);

  std::size_t size() const { return count_; }
  std::size_t channels() const { return frame_.channels(); }
  std::size_t lookback() const { return lookback_; }
  std::size_t horizon() const { return horizon_; }
  const SeriesFrame& frame() const { return frame_; }

  WindowBatch batch(std::span<const std::size_t> starts) const;
  // Start indices grouped into batches; the last one may be short. With a
  // generator the order is a permutation drawn from it, otherwise ascending.
  std::vector<std::vector<std::size_t>> batches(std::size_t batch_size, Rng* shuffle = nullptr) const;

 private:
  SeriesFrame frame_;
  std::size_t lookback_;
  std::size_t horizon_;
  std::size_t count_;
};

}  // namespace amp
