#include "amplifier/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include "amplifier/keyvalues.hpp"

namespace amp {

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view strip(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string where(const std::filesystem::path& path, std::size_t line, std::size_t column) {
  return path.string() + ":" + std::to_string(line) + ": column " + std::to_string(column);
}

void check_segment(const char* name, RowRange r, std::size_t lookback, std::size_t horizon) {
  if (r.end <= r.begin || r.size() < lookback + horizon) {
    throw DataError(std::string(name) + " segment [" + std::to_string(r.begin) + ", " +
                    std::to_string(r.end) + ") is shorter than lookback + horizon = " +
                    std::to_string(lookback + horizon));
  }
}

SplitRanges border_split(std::size_t rows, std::size_t train_rows, std::size_t val_rows,
                         std::size_t test_rows, std::size_t lookback, std::size_t horizon) {
  const std::size_t total = train_rows + val_rows + test_rows;
  if (rows < total) {
    throw DataError("dataset has " + std::to_string(rows) + " rows, protocol needs " +
                    std::to_string(total));
  }
  if (train_rows < lookback) throw DataError("train segment shorter than lookback");
  SplitRanges s;
  s.train = {0, train_rows};
  s.val = {train_rows - lookback, train_rows + val_rows};
  s.test = {train_rows + val_rows - lookback, total};
  check_segment("train", s.train, lookback, horizon);
  check_segment("val", s.val, lookback, horizon);
  check_segment("test", s.test, lookback, horizon);
  return s;
}

}  // namespace

SeriesFrame SeriesFrame::rows(std::size_t begin, std::size_t end) const {
  if (begin > end || end > length()) {
    throw std::out_of_range("SeriesFrame::rows: [" + std::to_string(begin) + ", " +
                            std::to_string(end) + ") outside " + std::to_string(length()));
  }
  SeriesFrame out;
  out.channel_names = channel_names;
  out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                        timestamps.begin() + static_cast<std::ptrdiff_t>(end));
  out.values.reserve(channels() * (end - begin));
  for (std::size_t c = 0; c < channels(); ++c) {
    const auto row = values.begin() + static_cast<std::ptrdiff_t>(c * length());
    out.values.insert(out.values.end(), row + static_cast<std::ptrdiff_t>(begin),
                      row + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Tensor SeriesFrame::as_tensor() const { return Tensor::from({channels(), length()}, values); }

SeriesFrame load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  const auto header = split_commas(strip(line));
  if (header.size() < 2 || strip(header[0]) != "date") {
    throw DataError(path.string() + ":1: header must start with 'date' followed by channel names");
  }

  SeriesFrame frame;
  for (std::size_t i = 1; i < header.size(); ++i) frame.channel_names.emplace_back(strip(header[i]));
  const std::size_t channels = frame.channel_names.size();

  std::vector<std::vector<double>> columns(channels);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = strip(line);
    if (text.empty()) continue;
    const auto cells = split_commas(text);
    if (cells.size() != channels + 1) {
      throw DataError(where(path, line_no, std::min(cells.size(), channels + 1) + 1) + ": expected " +
                      std::to_string(channels + 1) + " cells, found " + std::to_string(cells.size()));
    }
    frame.timestamps.emplace_back(strip(cells[0]));
    for (std::size_t c = 0; c < channels; ++c) {
      const std::string_view cell = strip(cells[c + 1]);
      if (cell.empty()) throw DataError(where(path, line_no, c + 2) + ": blank cell");
      double v = 0.0;
      const char* first = cell.data();
      if (cell.front() == '+') ++first;
      auto [ptr, ec] = std::from_chars(first, cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw DataError(where(path, line_no, c + 2) + ": non-numeric cell '" + std::string(cell) + "'");
      }
      columns[c].push_back(v);
    }
  }
  if (frame.timestamps.empty()) throw DataError(path.string() + ": no data rows");

  frame.values.reserve(channels * frame.length());
  for (const auto& col : columns) frame.values.insert(frame.values.end(), col.begin(), col.end());
  return frame;
}

void write_csv(const SeriesFrame& frame, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "date";
  for (const auto& name : frame.channel_names) out << ',' << name;
  out << '\n';
  for (std::size_t n = 0; n < frame.length(); ++n) {
    out << frame.timestamps[n];
    for (std::size_t c = 0; c < frame.channels(); ++c) out << ',' << format_double(frame.at(c, n));
    out << '\n';
  }
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

SplitRanges ratio_split(std::size_t rows, SplitRatios ratios, std::size_t lookback,
                        std::size_t horizon) {
  if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0) {
    throw DataError("split ratios must all be positive (got " + format_double(ratios.train) + ", " +
                    format_double(ratios.val) + ", " + format_double(ratios.test) + ")");
  }
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw DataError("split ratios must sum to 1");
  }
  const double n = static_cast<double>(rows);
  const auto train_rows = static_cast<std::size_t>(std::floor(n * ratios.train));
  const auto test_rows = static_cast<std::size_t>(std::floor(n * ratios.test));
  if (train_rows + test_rows >= rows) throw DataError("split leaves no validation rows");
  return border_split(rows, train_rows, rows - train_rows - test_rows, test_rows, lookback, horizon);
}

SplitRanges named_split(const std::string& protocol, const std::string& dataset_name,
                        std::size_t rows, SplitRatios ratios, std::size_t lookback,
                        std::size_t horizon) {
  std::string p = protocol;
  if (p == "auto") {
    if (dataset_name.rfind("ETTh", 0) == 0) p = "ett-hour";
    else if (dataset_name.rfind("ETTm", 0) == 0) p = "ett-minute";
    else p = "ratio";
  }
  constexpr std::size_t kMonth = 30 * 24;
  if (p == "ett-hour") return border_split(rows, 12 * kMonth, 4 * kMonth, 4 * kMonth, lookback, horizon);
  if (p == "ett-minute") {
    return border_split(rows, 48 * kMonth, 16 * kMonth, 16 * kMonth, lookback, horizon);
  }
  if (p == "ratio") return ratio_split(rows, ratios, lookback, horizon);
  throw DataError("unknown split protocol '" + protocol + "' (valid: auto, ratio, ett-hour, ett-minute)");
}

ScalerStats ScalerStats::fit(const SeriesFrame& frame) {
  if (frame.length() == 0) throw DataError("cannot fit scaler on an empty segment");
  ScalerStats s;
  const double n = static_cast<double>(frame.length());
  for (std::size_t c = 0; c < frame.channels(); ++c) {
    double mu = 0.0;
    for (std::size_t t = 0; t < frame.length(); ++t) mu += frame.at(c, t);
    mu /= n;
    double var = 0.0;
    for (std::size_t t = 0; t < frame.length(); ++t) var += (frame.at(c, t) - mu) * (frame.at(c, t) - mu);
    s.mean.push_back(mu);
    s.std.push_back(std::max(std::sqrt(var / n), 1e-8));
  }
  return s;
}

SeriesFrame ScalerStats::apply(const SeriesFrame& frame) const {
  if (frame.channels() != mean.size()) throw DataError("scaler channel count mismatch");
  SeriesFrame out = frame;
  for (std::size_t c = 0; c < out.channels(); ++c) {
    for (std::size_t t = 0; t < out.length(); ++t) out.at(c, t) = (frame.at(c, t) - mean[c]) / std[c];
  }
  return out;
}

SeriesFrame ScalerStats::invert(const SeriesFrame& frame) const {
  if (frame.channels() != mean.size()) throw DataError("scaler channel count mismatch");
  SeriesFrame out = frame;
  for (std::size_t c = 0; c < out.channels(); ++c) {
    for (std::size_t t = 0; t < out.length(); ++t) out.at(c, t) = frame.at(c, t) * std[c] + mean[c];
  }
  return out;
}

WindowSet::WindowSet(SeriesFrame frame, std::size_t lookback, std::size_t horizon)
    : frame_(std::move(frame)), lookback_(lookback), horizon_(horizon) {
  if (lookback == 0 || horizon == 0) throw DataError("lookback and horizon must be positive");
  if (frame_.length() < lookback + horizon) {
    throw DataError("segment of " + std::to_string(frame_.length()) +
                    " rows is shorter than lookback + horizon = " + std::to_string(lookback + horizon));
  }
  count_ = frame_.length() - lookback - horizon + 1;
}

WindowBatch WindowSet::batch(std::span<const std::size_t> starts) const {
  const std::size_t b = starts.size();
  const std::size_t c_count = channels();
  std::vector<double> x(b * c_count * lookback_);
  std::vector<double> y(b * c_count * horizon_);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t t = starts[i];
    if (t >= count_) throw std::out_of_range("window start " + std::to_string(t) + " out of range");
    for (std::size_t c = 0; c < c_count; ++c) {
      const double* row = frame_.values.data() + c * frame_.length();
      std::copy(row + t, row + t + lookback_, x.begin() + static_cast<std::ptrdiff_t>((i * c_count + c) * lookback_));
      std::copy(row + t + lookback_, row + t + lookback_ + horizon_,
                y.begin() + static_cast<std::ptrdiff_t>((i * c_count + c) * horizon_));
    }
  }
  return {Tensor::from({b, c_count, lookback_}, std::move(x)),
          Tensor::from({b, c_count, horizon_}, std::move(y)),
          {starts.begin(), starts.end()}};
}

std::vector<std::vector<std::size_t>> WindowSet::batches(std::size_t batch_size, Rng* shuffle) const {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::vector<std::size_t> order(count_);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) shuffle->shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace amp
