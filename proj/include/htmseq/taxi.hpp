#pragma once

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "htmseq/binary_io.hpp"
#include "htmseq/classifiers.hpp"
#include "htmseq/encoders.hpp"
#include "htmseq/error.hpp"
#include "htmseq/metrics.hpp"
#include "htmseq/random.hpp"
#include "htmseq/temporal_memory.hpp"

namespace htmseq {

inline constexpr std::chrono::minutes kBinWidth{30};
inline constexpr std::size_t kBinsPerWeek = 7 * 48;

struct TaxiRow {
  Timestamp time;
  std::int64_t count = 0;
  friend bool operator==(const TaxiRow&, const TaxiRow&) = default;
};

namespace detail {

inline bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '"' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t begin = 0;
  bool quoted = false;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i < line.size() && line[i] == '"') quoted = !quoted;
    if (i == line.size() || (line[i] == ',' && !quoted)) {
      out.push_back(trim(line.substr(begin, i - begin)));
      begin = i + 1;
    }
  }
  return out;
}

}  // namespace detail

// Accepts YYYY-MM-DDTHH:MM[:SS] (a space may replace the T). Seconds are
// truncated; no zone designator is accepted since times are local.
inline std::optional<Timestamp> parse_iso8601(std::string_view s) {
  if (s.size() != 16 && s.size() != 19) return std::nullopt;
  if (s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':') return std::nullopt;
  int y, mo, d, h, mi, sec = 0;
  if (!detail::parse_int(s.substr(0, 4), y) || !detail::parse_int(s.substr(5, 2), mo) ||
      !detail::parse_int(s.substr(8, 2), d) || !detail::parse_int(s.substr(11, 2), h) ||
      !detail::parse_int(s.substr(14, 2), mi)) {
    return std::nullopt;
  }
  if (s.size() == 19 && (s[16] != ':' || !detail::parse_int(s.substr(17, 2), sec) || sec < 0 || sec > 59)) {
    return std::nullopt;
  }
  if (mo < 1 || d < 1) return std::nullopt;
  try {
    return make_timestamp(y, static_cast<unsigned>(mo), static_cast<unsigned>(d), h, mi);
  } catch (const Error&) {
    return std::nullopt;
  }
}

inline std::string format_iso8601(Timestamp ts) {
  const auto day = std::chrono::floor<std::chrono::days>(ts);
  const std::chrono::year_month_day ymd{day};
  const auto mins = (ts - day).count();
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(mins / 60), static_cast<int>(mins % 60));
  return buf;
}

inline Timestamp bin_start(Timestamp ts) { return std::chrono::floor<std::chrono::minutes>(ts) - (ts.time_since_epoch() % kBinWidth); }

struct IngestReport {
  std::vector<TaxiRow> rows;
  std::size_t rows_read = 0;
  std::size_t rows_skipped = 0;
  std::size_t gaps = 0;  // missing 30-minute bins between the first and last
};

/// Reads a headered CSV, sums `value_column` into 30-minute bins keyed by
/// `timestamp_column`, and returns the bins in time order. Rows that fail to
/// parse are skipped and counted.
inline IngestReport ingest_csv(std::istream& in, std::string_view timestamp_column = "timestamp",
                               std::string_view value_column = "passenger_count") {
  std::string line;
  if (!std::getline(in, line)) throw DataError("csv: missing header row");
  const auto header = detail::split_csv(line);
  std::optional<std::size_t> ts_idx, val_idx;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == timestamp_column) ts_idx = i;
    if (header[i] == value_column) val_idx = i;
  }
  if (!ts_idx) throw DataError("csv: no column named '" + std::string(timestamp_column) + "'");
  if (!val_idx) throw DataError("csv: no column named '" + std::string(value_column) + "'");

  IngestReport report;
  std::map<Timestamp, std::int64_t> bins;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++report.rows_read;
    const auto fields = detail::split_csv(line);
    if (fields.size() <= std::max(*ts_idx, *val_idx)) {
      ++report.rows_skipped;
      continue;
    }
    const auto ts = parse_iso8601(fields[*ts_idx]);
    std::int64_t value = 0;
    const auto v = fields[*val_idx];
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), value);
    if (!ts || v.empty() || ec != std::errc{} || p != v.data() + v.size() || value < 0) {
      ++report.rows_skipped;
      continue;
    }
    bins[bin_start(*ts)] += value;
  }
  if (bins.empty()) throw DataError("csv: no valid rows");
  report.rows.reserve(bins.size());
  for (const auto& [t, c] : bins) report.rows.push_back({t, c});
  const auto span = (report.rows.back().time - report.rows.front().time) / kBinWidth + 1;
  report.gaps = static_cast<std::size_t>(span) - report.rows.size();
  return report;
}

inline IngestReport ingest_csv_file(const std::string& path, std::string_view timestamp_column = "timestamp",
                                    std::string_view value_column = "passenger_count") {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return ingest_csv(in, timestamp_column, value_column);
}

inline void write_csv(std::ostream& out, const std::vector<TaxiRow>& rows) {
  out << "timestamp,passenger_count\n";
  for (const auto& r : rows) out << format_iso8601(r.time) << ',' << r.count << '\n';
}

/// Multiplies counts in bins whose local start time falls in
/// [start_minute, end_minute) of the day, from `start` onwards.
struct PerturbationWindow {
  bool weekdays_only = true;
  int start_minute = 7 * 60;
  int end_minute = 11 * 60;
  double factor = 0.8;
  Timestamp start{};
};

// The morning -20% / night +20% weekday change.
inline std::vector<PerturbationWindow> standard_perturbation(Timestamp start) {
  return {{true, 7 * 60, 11 * 60, 0.8, start}, {true, 21 * 60, 23 * 60, 1.2, start}};
}

inline std::vector<TaxiRow> perturb(std::vector<TaxiRow> series, const std::vector<PerturbationWindow>& spec) {
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const auto& w = spec[i];
    if (w.start_minute < 0 || w.end_minute > 24 * 60 || w.start_minute >= w.end_minute) {
      throw Error("perturb: window must satisfy 0 <= start < end <= 1440 minutes");
    }
    if (!(w.factor >= 0.0) || !std::isfinite(w.factor)) throw Error("perturb: factor must be finite and >= 0");
    for (std::size_t j = 0; j < i; ++j) {
      if (w.start_minute < spec[j].end_minute && spec[j].start_minute < w.end_minute) {
        throw Error("perturb: overlapping windows");
      }
    }
  }
  for (auto& row : series) {
    const int minute = static_cast<int>(DatetimeEncoder::hours_of_day(row.time) * 60.0 + 0.5);
    const bool weekday = DatetimeEncoder::iso_weekday_index(row.time) < 5;
    for (const auto& w : spec) {
      if (row.time < w.start || (w.weekdays_only && !weekday)) continue;
      if (minute >= w.start_minute && minute < w.end_minute) {
        row.count = static_cast<std::int64_t>(std::nearbyint(static_cast<double>(row.count) * w.factor));
      }
    }
  }
  return series;
}

struct SyntheticTaxiSpec {
  Timestamp start = make_timestamp(2015, 1, 5, 0, 0);  // a Monday
  std::size_t weeks = 12;
  double base = 14000.0;
  double noise = 0.08;  // sd of the multiplicative noise
  std::uint64_t seed = 1;
};

// Noise-free daily+weekly demand profile at a timestamp.
inline double synthetic_profile(const SyntheticTaxiSpec& spec, Timestamp ts) {
  constexpr double pi = 3.14159265358979323846;
  static constexpr double kDay[7] = {0.92, 0.97, 1.0, 1.04, 1.1, 1.0, 0.85};
  const double h = DatetimeEncoder::hours_of_day(ts);
  const unsigned d = DatetimeEncoder::iso_weekday_index(ts);
  const bool weekend = d >= 5;
  // Weekdays have a morning and an evening peak; weekends one late peak.
  double shape = 1.0 - 0.55 * std::cos(2.0 * pi * (h - 3.5) / 24.0);
  if (!weekend) shape += 0.3 * std::exp(-0.5 * std::pow((h - 8.5) / 1.2, 2.0));
  shape += (weekend ? 0.35 : 0.25) * std::exp(-0.5 * std::pow((h - (weekend ? 21.0 : 19.0)) / 1.8, 2.0));
  return spec.base * kDay[d] * shape;
}

// Contiguous 30-minute series following synthetic_profile with seeded
// multiplicative Gaussian noise.
inline std::vector<TaxiRow> synthetic_taxi(const SyntheticTaxiSpec& spec) {
  if (spec.weeks == 0) throw Error("synthetic series needs at least one week");
  Rng rng(derive_seed(spec.seed, 0x7a1));
  std::vector<TaxiRow> rows;
  rows.reserve(spec.weeks * kBinsPerWeek);
  for (std::size_t i = 0; i < spec.weeks * kBinsPerWeek; ++i) {
    const Timestamp t = spec.start + kBinWidth * static_cast<int>(i);
    const double v = synthetic_profile(spec, t) * (1.0 + spec.noise * rng.normal());
    rows.push_back({t, static_cast<std::int64_t>(std::max(0.0, std::nearbyint(v)))});
  }
  return rows;
}

inline std::vector<double> counts_of(const std::vector<TaxiRow>& rows) {
  std::vector<double> y;
  y.reserve(rows.size());
  for (const auto& r : rows) y.push_back(static_cast<double>(r.count));
  return y;
}

struct BaselineScore {
  double mape = 0.0;
  std::size_t count = 0;
};

// Scores y[t] against y[t - lag] for every t >= max(eval_start, lag).
// The previous-value predictor uses lag = horizon; the seasonal one lag = 336.
inline BaselineScore lag_baseline(std::span<const double> y, std::size_t lag, std::size_t eval_start) {
  if (y.size() <= lag) throw DataError("series is shorter than the baseline lag");
  const std::size_t first = std::max(eval_start, lag);
  if (first >= y.size()) throw DataError("evaluation start is past the end of the series");
  std::vector<double> obs(y.begin() + static_cast<std::ptrdiff_t>(first), y.end());
  std::vector<double> pred(y.begin() + static_cast<std::ptrdiff_t>(first - lag),
                           y.end() - static_cast<std::ptrdiff_t>(lag));
  return {mape(obs, pred), obs.size()};
}

struct TaxiSetup {
  ScalarEncoderParams value{0.0, 40000.0, 400, 21, true, false};
  DatetimeEncoderParams datetime;
  std::size_t num_active_columns = 40;
  double potential_fraction = 0.5;
  std::uint64_t pooler_seed = 1;
  TmParams tm;
  double learning_rate = 0.001;
  std::size_t num_buckets = 22;
  std::size_t horizon = 5;
  PointEstimate estimate = PointEstimate::argmax;
  std::size_t eval_start = 4 * kBinsPerWeek;
  std::size_t trailing_window = kBinsPerWeek;
  std::optional<Timestamp> perturbation_start;
};

struct TaxiStepRecord {
  std::size_t index = 0;
  Timestamp time{};
  double observed = 0.0;
  std::optional<double> predicted;          // made `horizon` steps ago for this step
  std::optional<double> probability;        // given then to this step's bucket
  std::vector<double> distribution;         // for step index + horizon
  double forecast = 0.0;                    // point value for step index + horizon
  bool evaluated = false;
  std::optional<double> trailing_mape;
  std::size_t bursting_columns = 0;
};

/// Online five-step-ahead forecaster: encode value and time, pool, run the
/// temporal memory, and decode the active cells with a softmax classifier
/// trained on the value that arrives `horizon` steps later.
class TaxiExperiment {
 public:
  static constexpr std::uint32_t kSnapshotVersion = 1;

  explicit TaxiExperiment(const TaxiSetup& setup)
      : setup_(setup),
        value_encoder_(setup.value),
        datetime_encoder_(setup.datetime),
        pooler_(SpatialPoolerParams{setup.value.width + setup.datetime.time_of_day_width +
                                        setup.datetime.day_of_week_width,
                                    setup.tm.num_columns, setup.num_active_columns, setup.potential_fraction,
                                    true, setup.pooler_seed}),
        tm_(setup.tm),
        buckets_(setup.value.min, setup.value.max, setup.num_buckets),
        classifier_(setup.tm.num_cells(), setup.num_buckets, setup.learning_rate, setup.horizon),
        overall_(0),
        trailing_(setup.trailing_window),
        pre_(0),
        post_(0) {
    if (setup.horizon == 0) throw Error("horizon must be at least 1");
    if (setup.trailing_window == 0) throw Error("trailing window must be positive");
  }

  TaxiStepRecord step(const TaxiRow& row) {
    if (last_time_ && row.time <= *last_time_) throw DataError("rows must be strictly increasing in time");
    TaxiStepRecord rec;
    rec.index = steps_;
    rec.time = row.time;
    rec.observed = static_cast<double>(row.count);
    const std::size_t bucket = buckets_.bucketize(rec.observed);

    if (pending_.size() == setup_.horizon) {
      const auto& [forecast, dist] = pending_.front();
      rec.predicted = forecast;
      rec.probability = dist[bucket];
      if (steps_ >= setup_.eval_start) {
        rec.evaluated = true;
        overall_.add(rec.observed, forecast, dist[bucket]);
        trailing_.add(rec.observed, forecast, dist[bucket]);
        auto& split = setup_.perturbation_start && row.time >= *setup_.perturbation_start ? post_ : pre_;
        split.add(rec.observed, forecast, dist[bucket]);
        rec.trailing_mape = trailing_.window_mape();
      }
      pending_.pop_front();
    }

    const auto [tod, dow] = datetime_encoder_.encode(row.time);
    const Sdr parts[3] = {value_encoder_.encode(rec.observed), tod, dow};
    const Sdr columns = pooler_.pool(concatenate(parts));
    const auto& st = tm_.step(columns, learning_);
    rec.bursting_columns = st.bursting_columns.size();
    const Sdr cells = tm_.active_cells_sdr();
    if (learning_) classifier_.train(cells, bucket);
    rec.distribution = classifier_.infer(cells);
    rec.forecast = point_prediction(buckets_, rec.distribution, setup_.estimate);
    pending_.emplace_back(rec.forecast, rec.distribution);
    last_time_ = row.time;
    ++steps_;
    return rec;
  }

  void set_learning(bool on) noexcept { learning_ = on; }
  std::size_t steps() const noexcept { return steps_; }
  const MetricAccumulator& overall() const noexcept { return overall_; }
  const MetricAccumulator& trailing() const noexcept { return trailing_; }
  const MetricAccumulator& pre_perturbation() const noexcept { return pre_; }
  const MetricAccumulator& post_perturbation() const noexcept { return post_; }
  const TemporalMemory& tm() const noexcept { return tm_; }
  const SoftmaxClassifier& classifier() const noexcept { return classifier_; }
  const Bucketizer& buckets() const noexcept { return buckets_; }
  const TaxiSetup& setup() const noexcept { return setup_; }

  void write_payload(io::Writer& w) const {
    w.u64(steps_);
    w.u8(learning_ ? 1 : 0);
    w.u8(last_time_ ? 1 : 0);
    if (last_time_) w.u64(static_cast<std::uint64_t>(last_time_->time_since_epoch().count()));
    w.u64(pending_.size());
    for (const auto& [forecast, dist] : pending_) {
      w.f64(forecast);
      w.u64(dist.size());
      for (double p : dist) w.f64(p);
    }
    overall_.write_payload(w);
    trailing_.write_payload(w);
    pre_.write_payload(w);
    post_.write_payload(w);
    classifier_.write_payload(w);
    tm_.write_payload(w);
  }

  static TaxiExperiment restore(const TaxiSetup& setup, io::Reader& r) {
    TaxiExperiment ex(setup);
    ex.steps_ = r.u64();
    ex.learning_ = r.u8() != 0;
    if (r.u8() != 0) ex.last_time_ = Timestamp(std::chrono::minutes(static_cast<std::int64_t>(r.u64())));
    const auto n = r.length(16);
    for (std::size_t i = 0; i < n; ++i) {
      const double forecast = r.f64();
      std::vector<double> dist(r.length(8));
      for (double& p : dist) p = r.f64();
      ex.pending_.emplace_back(forecast, std::move(dist));
    }
    ex.overall_ = MetricAccumulator::read_payload(r);
    ex.trailing_ = MetricAccumulator::read_payload(r);
    ex.pre_ = MetricAccumulator::read_payload(r);
    ex.post_ = MetricAccumulator::read_payload(r);
    ex.classifier_ = SoftmaxClassifier::read_payload(r);
    ex.tm_ = TemporalMemory::read_payload(r);
    if (ex.tm_.params() != setup.tm) throw SnapshotError("snapshot was taken with different tm parameters");
    if (ex.classifier_.num_classes() != setup.num_buckets || ex.classifier_.lookahead() != setup.horizon) {
      throw SnapshotError("snapshot was taken with a different classifier geometry");
    }
    return ex;
  }

 private:
  TaxiSetup setup_;
  ScalarEncoder value_encoder_;
  DatetimeEncoder datetime_encoder_;
  SpatialPooler pooler_;
  TemporalMemory tm_;
  Bucketizer buckets_;
  SoftmaxClassifier classifier_;
  MetricAccumulator overall_;
  MetricAccumulator trailing_;
  MetricAccumulator pre_;
  MetricAccumulator post_;
  std::deque<std::pair<double, std::vector<double>>> pending_;
  std::optional<Timestamp> last_time_;
  std::size_t steps_ = 0;
  bool learning_ = true;
};

}  // namespace htmseq
