#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "htmseq/error.hpp"
#include "htmseq/random.hpp"
#include "htmseq/sdr.hpp"

namespace htmseq {

using Timestamp = std::chrono::sys_time<std::chrono::minutes>;

inline Timestamp make_timestamp(int year, unsigned month, unsigned day, int hour, int minute) {
  const std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{month},
                                        std::chrono::day{day}};
  if (!ymd.ok() || hour < 0 || hour > 23 || minute < 0 || minute > 59) {
    throw Error("invalid calendar datetime " + std::to_string(year) + "-" + std::to_string(month) +
                "-" + std::to_string(day) + " " + std::to_string(hour) + ":" +
                std::to_string(minute));
  }
  return std::chrono::sys_days{ymd} + std::chrono::hours{hour} + std::chrono::minutes{minute};
}

// Random SDR per symbol, drawn once and memoized.
class CategoryEncoder {
 public:
  explicit CategoryEncoder(std::uint64_t seed, std::size_t width = 2048, std::size_t num_active = 40)
      : seed_(seed), width_(width), num_active_(num_active) {
    if (num_active_ == 0 || num_active_ > width_) throw Error("category encoder: bad geometry");
  }

  // The draw depends only on (seed, symbol), so the result is independent of
  // the order in which symbols are first seen.
  const Sdr& encode(std::string_view symbol) {
    auto it = memo_.find(std::string(symbol));
    if (it != memo_.end()) return it->second;
    auto sdr = random_sdr(width_, num_active_, derive_seed(seed_, fnv1a64(symbol)));
    return memo_.emplace(std::string(symbol), std::move(sdr)).first->second;
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t num_active() const noexcept { return num_active_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t memo_size() const noexcept { return memo_.size(); }

 private:
  std::uint64_t seed_;
  std::size_t width_;
  std::size_t num_active_;
  std::unordered_map<std::string, Sdr> memo_;
};

struct ScalarEncoderParams {
  double min = 0.0;
  double max = 1.0;
  std::size_t width = 400;
  std::size_t active_bits = 21;
  bool clip = true;
  // Periodic encoders treat [min, max) as a circle and let the run wrap.
  bool periodic = false;
};

/// Contiguous run of `active_bits` ON bits whose position tracks the value.
///
/// Non-periodic: the run start is round((v - min) / (max - min) * (width - active_bits)),
/// so `min` starts at bit 0 and `max` ends at bit width - 1. Two values whose starts
/// differ by at least active_bits share no bits.
class ScalarEncoder {
 public:
  explicit ScalarEncoder(ScalarEncoderParams p) : p_(p) {
    if (!(p_.max > p_.min)) throw Error("scalar encoder: max must exceed min");
    if (p_.active_bits == 0 || p_.active_bits > p_.width) {
      throw Error("scalar encoder: active_bits must be in [1, width]");
    }
  }

  Sdr encode(double value) const {
    if (!std::isfinite(value)) throw Error("scalar encoder: non-finite value");
    return p_.periodic ? encode_periodic(value) : encode_linear(value);
  }

  std::size_t start_of(double value) const {
    const double span = p_.max - p_.min;
    if (p_.periodic) {
      double frac = std::fmod(value - p_.min, span) / span;
      if (frac < 0) frac += 1.0;
      auto start = static_cast<std::size_t>(std::floor(frac * static_cast<double>(p_.width)));
      return start % p_.width;
    }
    double v = value;
    if (v < p_.min || v > p_.max) {
      if (!p_.clip) throw Error("scalar encoder: value " + std::to_string(value) + " out of range");
      v = std::clamp(v, p_.min, p_.max);
    }
    const double slots = static_cast<double>(p_.width - p_.active_bits);
    return static_cast<std::size_t>(std::llround((v - p_.min) / span * slots));
  }

  const ScalarEncoderParams& params() const noexcept { return p_; }
  std::size_t width() const noexcept { return p_.width; }

 private:
  Sdr encode_linear(double value) const {
    const std::size_t start = start_of(value);
    std::vector<Sdr::Index> bits(p_.active_bits);
    std::iota(bits.begin(), bits.end(), static_cast<Sdr::Index>(start));
    return Sdr(p_.width, std::move(bits));
  }

  Sdr encode_periodic(double value) const {
    const std::size_t start = start_of(value);
    std::vector<Sdr::Index> bits;
    bits.reserve(p_.active_bits);
    for (std::size_t k = 0; k < p_.active_bits; ++k) {
      bits.push_back(static_cast<Sdr::Index>((start + k) % p_.width));
    }
    return Sdr::from_unsorted(p_.width, std::move(bits));
  }

  ScalarEncoderParams p_;
};

struct DatetimeEncoderParams {
  std::size_t time_of_day_width = 288;
  std::size_t time_of_day_active = 21;
  std::size_t day_of_week_width = 168;
  std::size_t day_of_week_active = 21;
};

// Encodes time of day over [0, 24) hours and day of week over [0, 7) days
// (Monday = 0, fractional by hour), both periodic.
class DatetimeEncoder {
 public:
  explicit DatetimeEncoder(DatetimeEncoderParams p = {})
      : time_of_day_({0.0, 24.0, p.time_of_day_width, p.time_of_day_active, true, true}),
        day_of_week_({0.0, 7.0, p.day_of_week_width, p.day_of_week_active, true, true}) {}

  static double hours_of_day(Timestamp ts) {
    const auto day = std::chrono::floor<std::chrono::days>(ts);
    return static_cast<double>((ts - day).count()) / 60.0;
  }

  // Monday = 0 .. Sunday = 6.
  static unsigned iso_weekday_index(Timestamp ts) {
    const std::chrono::weekday wd{std::chrono::floor<std::chrono::days>(ts)};
    return wd.iso_encoding() - 1;
  }

  std::pair<Sdr, Sdr> encode(Timestamp ts) const {
    const double hours = hours_of_day(ts);
    const double day = static_cast<double>(iso_weekday_index(ts)) + hours / 24.0;
    return {time_of_day_.encode(hours), day_of_week_.encode(day)};
  }

  const ScalarEncoder& time_of_day() const noexcept { return time_of_day_; }
  const ScalarEncoder& day_of_week() const noexcept { return day_of_week_; }

 private:
  ScalarEncoder time_of_day_;
  ScalarEncoder day_of_week_;
};

struct SpatialPoolerParams {
  std::size_t input_width = 0;
  std::size_t num_columns = 2048;
  std::size_t num_active_columns = 40;
  double potential_fraction = 0.5;
  bool empty_input_is_error = true;
  std::uint64_t seed = 1;
};

// Fixed random proximal wiring plus global top-k inhibition. No learning.
class SpatialPooler {
 public:
  explicit SpatialPooler(SpatialPoolerParams p) : p_(p) {
    if (p_.input_width == 0) throw Error("spatial pooler: input_width must be positive");
    if (p_.num_active_columns == 0 || p_.num_active_columns > p_.num_columns) {
      throw Error("spatial pooler: num_active_columns must be in [1, num_columns]");
    }
    if (!(p_.potential_fraction > 0.0 && p_.potential_fraction <= 1.0)) {
      throw Error("spatial pooler: potential_fraction must be in (0, 1]");
    }
    const auto per_column = static_cast<std::size_t>(
        std::llround(p_.potential_fraction * static_cast<double>(p_.input_width)));
    potential_.reserve(p_.num_columns);
    inputs_to_columns_.resize(p_.input_width);
    for (std::size_t c = 0; c < p_.num_columns; ++c) {
      potential_.push_back(random_sdr(p_.input_width, std::max<std::size_t>(per_column, 1),
                                      derive_seed(p_.seed, c)));
      for (auto bit : potential_.back().active()) {
        inputs_to_columns_[bit].push_back(static_cast<std::uint32_t>(c));
      }
    }
  }

  std::vector<std::uint32_t> scores(const Sdr& input) const {
    if (input.width() != p_.input_width) throw WidthMismatch(p_.input_width, input.width());
    std::vector<std::uint32_t> score(p_.num_columns, 0);
    for (auto bit : input.active()) {
      for (auto c : inputs_to_columns_[bit]) ++score[c];
    }
    return score;
  }

  // Top num_active_columns by score; equal scores go to the lower column index.
  Sdr pool(const Sdr& input) const {
    if (input.width() != p_.input_width) throw WidthMismatch(p_.input_width, input.width());
    if (input.empty()) {
      if (p_.empty_input_is_error) throw Error("spatial pooler: empty input");
      return Sdr(p_.num_columns);
    }
    const auto score = scores(input);
    std::vector<std::uint32_t> order(p_.num_columns);
    std::iota(order.begin(), order.end(), 0u);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(p_.num_active_columns),
                      order.end(), [&](std::uint32_t a, std::uint32_t b) {
                        return score[a] != score[b] ? score[a] > score[b] : a < b;
                      });
    order.resize(p_.num_active_columns);
    return Sdr::from_unsorted(p_.num_columns, std::move(order));
  }

  const Sdr& potential(std::size_t column) const { return potential_.at(column); }
  const SpatialPoolerParams& params() const noexcept { return p_; }

 private:
  SpatialPoolerParams p_;
  std::vector<Sdr> potential_;
  std::vector<std::vector<std::uint32_t>> inputs_to_columns_;
};

}  // namespace htmseq
