#pragma once

// Dataset and temperature-history types shared by every selection stage,
// plus CSV ingestion, train/test splitting and column standardization.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "corealloc/error.hpp"
#include "corealloc/random.hpp"

namespace corealloc {

/// Named-column observation matrix (n rows, d columns). Optionally designates
/// one column as the response.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;

  FeatureMatrix(std::vector<std::string> column_names, Eigen::MatrixXd rows,
                std::optional<std::string> target_name = std::nullopt)
      : names_(std::move(column_names)), rows_(std::move(rows)), target_(std::move(target_name)) {
    if (names_.empty()) throw DataError("feature matrix needs at least one column");
    if (rows_.rows() < 1) throw DataError("feature matrix needs at least one row");
    if (static_cast<std::size_t>(rows_.cols()) != names_.size()) {
      throw DataError("column count " + std::to_string(rows_.cols()) + " does not match " +
                      std::to_string(names_.size()) + " column names");
    }
    std::unordered_set<std::string> seen;
    for (const auto& name : names_) {
      if (!seen.insert(name).second) throw DataError("duplicate column name '" + name + "'");
    }
    if (!rows_.allFinite()) throw DataError("feature matrix contains non-finite values");
    if (target_ && !has_column(*target_)) {
      throw DataError("target column '" + *target_ + "' not present");
    }
  }

  std::size_t rows() const noexcept { return static_cast<std::size_t>(rows_.rows()); }
  std::size_t cols() const noexcept { return names_.size(); }
  const std::vector<std::string>& column_names() const noexcept { return names_; }
  const Eigen::MatrixXd& values() const noexcept { return rows_; }
  const std::optional<std::string>& target_name() const noexcept { return target_; }

  bool has_column(std::string_view name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
  }

  std::size_t column_index(std::string_view name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw DataError("missing column '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - names_.begin());
  }

  Eigen::VectorXd column(std::string_view name) const { return rows_.col(column_index(name)); }

  FeatureMatrix with_target(std::string target) const {
    return FeatureMatrix(names_, rows_, std::move(target));
  }

  /// Rows picked by index (repeats allowed), keeping names and target.
  FeatureMatrix select_rows(std::span<const std::size_t> idx) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), rows_.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      out.row(static_cast<Eigen::Index>(r)) = rows_.row(static_cast<Eigen::Index>(idx[r]));
    }
    return FeatureMatrix(names_, std::move(out), target_);
  }

  /// Column subset in the given order. The target is kept only if selected.
  FeatureMatrix select_columns(const std::vector<std::string>& names) const {
    Eigen::MatrixXd out(rows_.rows(), static_cast<Eigen::Index>(names.size()));
    for (std::size_t c = 0; c < names.size(); ++c) {
      out.col(static_cast<Eigen::Index>(c)) = rows_.col(static_cast<Eigen::Index>(column_index(names[c])));
    }
    std::optional<std::string> target;
    if (target_ && std::find(names.begin(), names.end(), *target_) != names.end()) target = target_;
    return FeatureMatrix(names, std::move(out), std::move(target));
  }

  /// Every column except the target, in file order.
  std::vector<std::string> feature_names() const {
    std::vector<std::string> out;
    for (const auto& n : names_) {
      if (!target_ || n != *target_) out.push_back(n);
    }
    return out;
  }

  Eigen::MatrixXd features() const { return select_columns(feature_names()).values(); }

  Eigen::VectorXd target() const {
    if (!target_) throw DataError("no target column designated");
    return column(*target_);
  }

 private:
  std::vector<std::string> names_;
  Eigen::MatrixXd rows_;
  std::optional<std::string> target_;
};

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view cell) {
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  const auto* first = cell.data();
  const auto* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return value;
}

}  // namespace detail

struct LoadResult {
  FeatureMatrix matrix;
  std::size_t dropped_rows = 0;
};

/// Parses header + numeric rows. Rows with a wrong cell count, an unparsable
/// cell, or a non-finite value are dropped and counted.
inline LoadResult parse_trace(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": missing header row");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
  std::vector<std::string> names;
  for (auto cell : detail::split_commas(line)) names.emplace_back(cell);
  {
    std::unordered_set<std::string> seen;
    for (const auto& n : names) {
      if (n.empty()) throw DataError(source + ": empty column name in header");
      if (!seen.insert(n).second) throw DataError(source + ": duplicate column name '" + n + "'");
    }
  }

  std::vector<double> flat;
  std::size_t kept = 0;
  std::size_t dropped = 0;
  std::vector<double> row(names.size());
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_commas(line);
    bool ok = cells.size() == names.size();
    for (std::size_t c = 0; ok && c < cells.size(); ++c) {
      const auto v = detail::parse_double(cells[c]);
      ok = v.has_value() && std::isfinite(*v);
      if (ok) row[c] = *v;
    }
    if (!ok) {
      ++dropped;
      continue;
    }
    flat.insert(flat.end(), row.begin(), row.end());
    ++kept;
  }
  if (kept == 0) throw DataError(source + ": empty after filtering");

  Eigen::MatrixXd m(static_cast<Eigen::Index>(kept), static_cast<Eigen::Index>(names.size()));
  for (std::size_t r = 0; r < kept; ++r) {
    for (std::size_t c = 0; c < names.size(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = flat[r * names.size() + c];
    }
  }
  return {FeatureMatrix(std::move(names), std::move(m)), dropped};
}

inline LoadResult load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trace file '" + path + "'");
  return parse_trace(in, path);
}

/// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline void write_csv(std::ostream& out, const FeatureMatrix& m) {
  const auto& names = m.column_names();
  for (std::size_t c = 0; c < names.size(); ++c) out << (c ? "," : "") << names[c];
  out << '\n';
  const auto& v = m.values();
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    for (Eigen::Index c = 0; c < v.cols(); ++c) out << (c ? "," : "") << format_double(v(r, c));
    out << '\n';
  }
}

inline void save_trace(const std::string& path, const FeatureMatrix& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_csv(out, m);
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Shuffled partition; train gets floor(n * fraction) rows.
inline SplitIndices split_indices(std::size_t n, const SplitSpec& spec) {
  if (n < 2) throw DataError("split needs at least 2 rows, got " + std::to_string(n));
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw DataError("train fraction must lie in (0, 1)");
  }
  Rng rng(spec.seed);
  auto idx = shuffled_indices(n, rng);
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.train_fraction));
  if (n_train == 0 || n_train == n) {
    throw DataError("split of " + std::to_string(n) + " rows leaves an empty partition");
  }
  SplitIndices out;
  out.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  return out;
}

inline std::pair<FeatureMatrix, FeatureMatrix> split(const FeatureMatrix& m, const SplitSpec& spec) {
  const auto idx = split_indices(m.rows(), spec);
  return {m.select_rows(idx.train), m.select_rows(idx.test)};
}

// ---------------------------------------------------------------------------
// Standardization

/// Per-column affine scaling to zero mean and unit population variance.
/// Zero-variance columns are only centred, and flagged.
struct Scaler {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
  std::vector<bool> zero_variance;

  static Scaler fit(const Eigen::MatrixXd& x) {
    Scaler s;
    const auto d = x.cols();
    s.mean = Eigen::VectorXd::Zero(d);
    s.scale = Eigen::VectorXd::Ones(d);
    s.zero_variance.assign(static_cast<std::size_t>(d), false);
    const double n = static_cast<double>(x.rows());
    for (Eigen::Index c = 0; c < d; ++c) {
      const double mu = x.col(c).mean();
      const double var = (x.col(c).array() - mu).square().sum() / n;
      const double sd = std::sqrt(var);
      s.mean(c) = mu;
      if (!(sd > 1e-12 * std::max(1.0, std::abs(mu)))) {
        s.zero_variance[static_cast<std::size_t>(c)] = true;
      } else {
        s.scale(c) = sd;
      }
    }
    return s;
  }

  Eigen::MatrixXd transform(const Eigen::MatrixXd& x) const {
    return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }

  Eigen::MatrixXd inverse_transform(const Eigen::MatrixXd& z) const {
    return (z.array().rowwise() * scale.transpose().array()).matrix().rowwise() + mean.transpose();
  }
};

inline std::pair<FeatureMatrix, Scaler> standardize(const FeatureMatrix& m) {
  auto scaler = Scaler::fit(m.values());
  return {FeatureMatrix(m.column_names(), scaler.transform(m.values()), m.target_name()), scaler};
}

// ---------------------------------------------------------------------------
// Temperature history

/// Bounded ring of per-core temperature samples (degrees C). Oldest sample is
/// evicted first once capacity is reached.
class TemperatureBuffer {
 public:
  static constexpr std::size_t kDefaultCapacity = 10'000;

  explicit TemperatureBuffer(std::vector<int> core_ids, std::size_t capacity = kDefaultCapacity)
      : core_ids_(std::move(core_ids)), capacity_(capacity) {
    if (core_ids_.empty()) throw DataError("temperature buffer needs at least one core");
    if (capacity_ == 0) throw DataError("temperature buffer capacity must be positive");
    storage_.resize(capacity_ * core_ids_.size());
  }

  static TemperatureBuffer for_cores(std::size_t m, std::size_t capacity = kDefaultCapacity) {
    std::vector<int> ids(m);
    std::iota(ids.begin(), ids.end(), 0);
    return TemperatureBuffer(std::move(ids), capacity);
  }

  std::size_t cores() const noexcept { return core_ids_.size(); }
  std::size_t size() const noexcept { return size_; }
  std::size_t capacity() const noexcept { return capacity_; }
  bool empty() const noexcept { return size_ == 0; }
  const std::vector<int>& core_ids() const noexcept { return core_ids_; }
  /// Number of samples ever pushed; the step index of sample k is
  /// total_pushed() - size() + k.
  std::uint64_t total_pushed() const noexcept { return pushed_; }

  void push(std::span<const double> reading) {
    if (reading.size() != core_ids_.size()) {
      throw DataError("temperature reading has " + std::to_string(reading.size()) +
                      " values, buffer tracks " + std::to_string(core_ids_.size()) + " cores");
    }
    const std::size_t slot = (head_ + size_) % capacity_;
    std::copy(reading.begin(), reading.end(), storage_.begin() + static_cast<std::ptrdiff_t>(slot * cores()));
    if (size_ < capacity_) {
      ++size_;
    } else {
      head_ = (head_ + 1) % capacity_;
    }
    ++pushed_;
  }

  /// k-th retained sample, oldest first.
  std::span<const double> sample(std::size_t k) const {
    const std::size_t slot = (head_ + k) % capacity_;
    return {storage_.data() + slot * cores(), cores()};
  }

  /// Series of one core over the last `window` samples (0 = all).
  std::vector<double> series(std::size_t core, std::size_t window = 0) const {
    const std::size_t w = (window == 0 || window > size_) ? size_ : window;
    std::vector<double> out(w);
    for (std::size_t k = 0; k < w; ++k) out[k] = sample(size_ - w + k)[core];
    return out;
  }

 private:
  std::vector<int> core_ids_;
  std::size_t capacity_;
  std::vector<double> storage_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
  std::uint64_t pushed_ = 0;
};

inline void push_temperature(TemperatureBuffer& buffer, std::span<const double> reading) {
  buffer.push(reading);
}

/// Temperature trace CSV: `step, core_0..core_{m-1}`.
inline void write_temperature_csv(std::ostream& out, const TemperatureBuffer& buffer) {
  out << "step";
  for (int id : buffer.core_ids()) out << ",core_" << id;
  out << '\n';
  const std::uint64_t first_step = buffer.total_pushed() - buffer.size();
  for (std::size_t k = 0; k < buffer.size(); ++k) {
    out << first_step + k;
    for (double t : buffer.sample(k)) out << ',' << format_double(t);
    out << '\n';
  }
}

/// Reads a temperature trace CSV. Every column named `core_<id>` becomes a
/// tracked core; the `step` column is optional.
inline TemperatureBuffer temperature_buffer_from(const FeatureMatrix& trace,
                                                 std::size_t capacity = TemperatureBuffer::kDefaultCapacity) {
  std::vector<int> ids;
  std::vector<std::size_t> cols;
  const auto& names = trace.column_names();
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (names[c].rfind("core_", 0) != 0) continue;
    int id = 0;
    const auto digits = std::string_view(names[c]).substr(5);
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), id);
    if (ec != std::errc() || ptr != digits.data() + digits.size()) {
      throw DataError("bad core column name '" + names[c] + "'");
    }
    ids.push_back(id);
    cols.push_back(c);
  }
  if (ids.empty()) throw DataError("temperature trace has no core_<id> columns");
  TemperatureBuffer buffer(ids, capacity);
  std::vector<double> reading(ids.size());
  for (std::size_t r = 0; r < trace.rows(); ++r) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      reading[j] = trace.values()(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(cols[j]));
    }
    buffer.push(reading);
  }
  return buffer;
}

}  // namespace corealloc
