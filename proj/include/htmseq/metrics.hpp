#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include "htmseq/binary_io.hpp"
#include "htmseq/error.hpp"

namespace htmseq {

// Probabilities below this are floored before taking the log.
inline constexpr double kProbabilityFloor = 1e-10;

// sum|y - yhat| / sum|y|, the ratio form (not a mean of per-point percentages).
inline double mape(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size()) throw Error("mape: series lengths differ");
  double err = 0.0, mag = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    err += std::abs(y[t] - yhat[t]);
    mag += std::abs(y[t]);
  }
  if (!(mag > 0.0)) throw Error("mape: observed series sums to zero");
  return err / mag;
}

inline double checked_log_probability(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error("nll: probability outside [0, 1]");
  return std::log(std::max(p, kProbabilityFloor));
}

// Mean negative natural log of the probabilities given to realized outcomes.
inline double nll(std::span<const double> probabilities) {
  if (probabilities.empty()) throw Error("nll: empty series");
  double sum = 0.0;
  for (double p : probabilities) sum += checked_log_probability(p);
  return -sum / static_cast<double>(probabilities.size());
}

// Mean of the trailing `window` flags at each position; the first window-1
// positions average over the available prefix.
inline std::vector<double> moving_accuracy(const std::vector<bool>& correct, std::size_t window = 100) {
  if (window == 0) throw Error("moving_accuracy: window must be positive");
  std::vector<double> out;
  out.reserve(correct.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < correct.size(); ++i) {
    hits += correct[i] ? 1 : 0;
    if (i >= window) hits -= correct[i - window] ? 1 : 0;
    const std::size_t n = i + 1 < window ? i + 1 : window;
    out.push_back(static_cast<double>(hits) / static_cast<double>(n));
  }
  return out;
}

/// Streaming MAPE / NLL over all records plus a trailing window.
///
/// Window sums are recomputed from the buffered entries on demand rather than
/// kept as running differences, so they match batch evaluation exactly.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::size_t window = 0) : window_(window) {}

  void add(double observed, double predicted, double probability) {
    const double log_p = checked_log_probability(probability);
    abs_error_ += std::abs(observed - predicted);
    abs_observed_ += std::abs(observed);
    log_prob_ += log_p;
    ++count_;
    if (window_ > 0) {
      recent_.push_back({observed, predicted, log_p});
      if (recent_.size() > window_) recent_.pop_front();
    }
  }

  std::size_t count() const noexcept { return count_; }
  std::size_t window_count() const noexcept { return recent_.size(); }
  std::size_t window() const noexcept { return window_; }

  double mape() const {
    if (!(abs_observed_ > 0.0)) throw Error("mape: observed series sums to zero");
    return abs_error_ / abs_observed_;
  }
  double nll() const {
    if (count_ == 0) throw Error("nll: empty series");
    return -log_prob_ / static_cast<double>(count_);
  }

  double window_mape() const {
    double err = 0.0, mag = 0.0;
    for (const auto& e : recent_) {
      err += std::abs(e.observed - e.predicted);
      mag += std::abs(e.observed);
    }
    if (!(mag > 0.0)) throw Error("mape: observed series sums to zero");
    return err / mag;
  }
  double window_nll() const {
    if (recent_.empty()) throw Error("nll: empty series");
    double s = 0.0;
    for (const auto& e : recent_) s += e.log_p;
    return -s / static_cast<double>(recent_.size());
  }

  void write_payload(io::Writer& w) const {
    w.u64(window_);
    w.f64(abs_error_);
    w.f64(abs_observed_);
    w.f64(log_prob_);
    w.u64(count_);
    w.u64(recent_.size());
    for (const auto& e : recent_) {
      w.f64(e.observed);
      w.f64(e.predicted);
      w.f64(e.log_p);
    }
  }

  static MetricAccumulator read_payload(io::Reader& r) {
    MetricAccumulator m(r.u64());
    m.abs_error_ = r.f64();
    m.abs_observed_ = r.f64();
    m.log_prob_ = r.f64();
    m.count_ = r.u64();
    const auto n = r.length(24);
    for (std::size_t i = 0; i < n; ++i) {
      Entry e;
      e.observed = r.f64();
      e.predicted = r.f64();
      e.log_p = r.f64();
      m.recent_.push_back(e);
    }
    return m;
  }

 private:
  struct Entry {
    double observed;
    double predicted;
    double log_p;
  };
  std::size_t window_;
  double abs_error_ = 0.0;
  double abs_observed_ = 0.0;
  double log_prob_ = 0.0;
  std::size_t count_ = 0;
  std::deque<Entry> recent_;
};

}  // namespace htmseq
