#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "htmseq/binary_io.hpp"
#include "htmseq/error.hpp"
#include "htmseq/sdr.hpp"

namespace htmseq {

// Column-level SDR of every observed symbol, in first-seen order.
class SymbolTable {
 public:
  // Returns false if the symbol was already present.
  bool add(std::string_view symbol, const Sdr& sdr) {
    if (!entries_.empty() && sdr.width() != entries_.front().second.width()) {
      throw WidthMismatch(entries_.front().second.width(), sdr.width());
    }
    auto [it, inserted] = index_.emplace(std::string(symbol), entries_.size());
    if (inserted) entries_.emplace_back(std::string(symbol), sdr);
    return inserted;
  }

  bool contains(std::string_view symbol) const { return index_.contains(std::string(symbol)); }
  const Sdr& at(std::string_view symbol) const { return entries_.at(index_.at(std::string(symbol))).second; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<std::pair<std::string, Sdr>>& entries() const noexcept { return entries_; }

 private:
  std::vector<std::pair<std::string, Sdr>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ScoredSymbol {
  std::string symbol;
  std::size_t overlap = 0;
  friend bool operator==(const ScoredSymbol&, const ScoredSymbol&) = default;
};

/// Ranks table symbols by overlap with `predicted`, descending; equal overlaps
/// keep first-seen order. Returns at most k entries.
inline std::vector<ScoredSymbol> classify_topk(const Sdr& predicted, const SymbolTable& table,
                                               std::size_t k) {
  if (k == 0) throw Error("classify_topk: k must be at least 1");
  if (table.empty()) return {};
  const std::size_t width = table.entries().front().second.width();
  if (predicted.width() != width) throw WidthMismatch(width, predicted.width());

  std::vector<std::uint8_t> dense(width, 0);
  for (auto b : predicted.active()) dense[b] = 1;
  std::vector<std::size_t> scores(table.size(), 0);
  for (std::size_t i = 0; i < table.size(); ++i) {
    for (auto b : table.entries()[i].second.active()) scores[i] += dense[b];
  }
  std::vector<std::size_t> order(table.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t n = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
                    });
  std::vector<ScoredSymbol> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back({table.entries()[order[i]].first, scores[order[i]]});
  return out;
}

// Uniform partition of [min, max] into num_buckets; out-of-range values clamp.
class Bucketizer {
 public:
  Bucketizer(double min, double max, std::size_t num_buckets = 22)
      : min_(min), max_(max), n_(num_buckets) {
    if (!(max > min) || num_buckets == 0) throw Error("bucketizer: need max > min and buckets > 0");
  }

  std::size_t bucketize(double value) const {
    if (!std::isfinite(value)) throw Error("bucketizer: non-finite value");
    if (value <= min_) return 0;
    const auto idx = static_cast<std::size_t>(std::floor((value - min_) / bucket_width()));
    return std::min(idx, n_ - 1);
  }

  double bucket_center(std::size_t idx) const {
    if (idx >= n_) throw Error("bucketizer: bucket index out of range");
    return min_ + (static_cast<double>(idx) + 0.5) * bucket_width();
  }

  double bucket_width() const noexcept { return (max_ - min_) / static_cast<double>(n_); }
  std::size_t num_buckets() const noexcept { return n_; }
  double min() const noexcept { return min_; }
  double max() const noexcept { return max_; }

 private:
  double min_;
  double max_;
  std::size_t n_;
};

enum class PointEstimate { argmax, expectation };

// Bucket center of the most probable bucket (ties to the lower bucket), or
// the probability-weighted mean of bucket centers.
inline double point_prediction(const Bucketizer& buckets, std::span<const double> distribution,
                               PointEstimate mode = PointEstimate::argmax) {
  if (distribution.size() != buckets.num_buckets()) throw Error("distribution length mismatch");
  if (mode == PointEstimate::expectation) {
    double v = 0.0;
    for (std::size_t k = 0; k < distribution.size(); ++k) v += distribution[k] * buckets.bucket_center(k);
    return v;
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < distribution.size(); ++k) {
    if (distribution[k] > distribution[best]) best = k;
  }
  return buckets.bucket_center(best);
}

/// Single-layer softmax over buckets, fed by a binary activation pattern.
///
/// Logits are a_j = sum of w_ij over active inputs i; training follows the
/// negative log-likelihood gradient, w_ij -= rate * (y_j - z_j) for active i,
/// so only the active rows change. `train` associates the pattern seen
/// `lookahead` calls earlier with the current target.
class SoftmaxClassifier {
 public:
  SoftmaxClassifier(std::size_t input_width, std::size_t num_classes, double learning_rate = 0.001,
                    std::size_t lookahead = 0)
      : input_width_(input_width),
        k_(num_classes),
        rate_(learning_rate),
        lookahead_(lookahead),
        weights_(input_width * num_classes, 0.0) {
    if (input_width == 0 || num_classes == 0) throw Error("softmax classifier: empty geometry");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw Error("softmax classifier: learning rate must be positive");
    }
  }

  std::vector<double> infer(const Sdr& x) const {
    check_width(x);
    std::vector<double> logits(k_, 0.0);
    for (auto i : x.active()) {
      const double* row = &weights_[static_cast<std::size_t>(i) * k_];
      for (std::size_t j = 0; j < k_; ++j) logits[j] += row[j];
    }
    return softmax(logits);
  }

  static std::vector<double> softmax(std::span<const double> logits) {
    const double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> y(logits.size());
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) {
      y[j] = std::exp(logits[j] - top);
      sum += y[j];
    }
    for (double& v : y) v /= sum;
    return y;
  }

  // One gradient step on (x, target) with no delay.
  void train_pattern(const Sdr& x, std::size_t target) {
    check_width(x);
    if (target >= k_) throw Error("softmax classifier: target bucket out of range");
    const auto y = infer(x);
    for (auto i : x.active()) {
      double* row = &weights_[static_cast<std::size_t>(i) * k_];
      for (std::size_t j = 0; j < k_; ++j) {
        const double z = j == target ? 1.0 : 0.0;
        row[j] -= rate_ * (y[j] - z);
      }
    }
  }

  // Trains the pattern from `lookahead` calls ago against `target`, then
  // remembers `x`. Returns true if an update was applied.
  bool train(const Sdr& x, std::size_t target) {
    check_width(x);
    if (target >= k_) throw Error("softmax classifier: target bucket out of range");
    bool updated = false;
    if (history_.size() == lookahead_) {
      train_pattern(lookahead_ == 0 ? x : history_.front(), target);
      updated = true;
    }
    if (lookahead_ > 0) {
      history_.push_back(x);
      if (history_.size() > lookahead_) history_.pop_front();
    }
    return updated;
  }

  double weight(std::size_t input, std::size_t cls) const { return weights_.at(input * k_ + cls); }
  void set_weight(std::size_t input, std::size_t cls, double w) { weights_.at(input * k_ + cls) = w; }

  std::size_t input_width() const noexcept { return input_width_; }
  std::size_t num_classes() const noexcept { return k_; }
  double learning_rate() const noexcept { return rate_; }
  std::size_t lookahead() const noexcept { return lookahead_; }

  void write_payload(io::Writer& w) const {
    w.u64(input_width_);
    w.u64(k_);
    w.f64(rate_);
    w.u64(lookahead_);
    std::vector<std::uint32_t> rows;
    for (std::size_t i = 0; i < input_width_; ++i) {
      for (std::size_t j = 0; j < k_; ++j) {
        if (weights_[i * k_ + j] != 0.0) {
          rows.push_back(static_cast<std::uint32_t>(i));
          break;
        }
      }
    }
    w.u32s(rows);
    for (auto i : rows) {
      for (std::size_t j = 0; j < k_; ++j) w.f64(weights_[i * k_ + j]);
    }
    w.u64(history_.size());
    for (const auto& h : history_) w.str(h.to_string());
  }

  static SoftmaxClassifier read_payload(io::Reader& r) {
    const auto width = r.u64();
    const auto k = r.u64();
    const auto rate = r.f64();
    const auto lookahead = r.u64();
    if (width == 0 || k == 0 || width > (1u << 26) || k > 4096 || lookahead > 1000000) {
      throw SnapshotError("classifier geometry invalid");
    }
    SoftmaxClassifier c(width, k, rate, lookahead);
    for (auto i : r.u32s<std::uint32_t>()) {
      if (i >= width) throw SnapshotError("classifier row out of range");
      for (std::size_t j = 0; j < k; ++j) c.weights_[i * k + j] = r.f64();
    }
    const auto n = r.length();
    for (std::size_t h = 0; h < n; ++h) c.history_.push_back(Sdr::parse(r.str()));
    return c;
  }

  friend bool operator==(const SoftmaxClassifier&, const SoftmaxClassifier&) = default;

 private:
  void check_width(const Sdr& x) const {
    if (x.width() != input_width_) throw WidthMismatch(input_width_, x.width());
  }

  std::size_t input_width_;
  std::size_t k_;
  double rate_;
  std::size_t lookahead_;
  std::vector<double> weights_;  // row-major, input_width x num_classes
  std::deque<Sdr> history_;
};

}  // namespace htmseq
