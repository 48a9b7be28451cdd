#pragma once

#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "htmseq/error.hpp"
#include "htmseq/random.hpp"

namespace htmseq {

/// High-order sequences with shared subsequences.
///
/// Each group has two start symbols that share one middle subsequence of
/// order-1 symbols; each start owns `endings_per_context` distinct endings. A
/// group therefore holds 2 * endings sequences of length order + 1, laid out as
/// all of start 0's sequences followed by start 1's in matching ending order.
struct HighOrderDataset {
  std::vector<std::vector<std::string>> sequences;
  std::vector<std::vector<std::size_t>> groups;  // sequence indices per group
  std::vector<std::size_t> order_of;             // per sequence
  std::size_t endings_per_context = 1;

  std::size_t size() const noexcept { return sequences.size(); }
  friend bool operator==(const HighOrderDataset&, const HighOrderDataset&) = default;
};

struct DatasetSpec {
  std::vector<std::size_t> orders{6, 7};
  std::size_t groups_per_order = 2;
  std::size_t endings = 1;
  std::uint64_t seed = 1;
};

inline HighOrderDataset gen_dataset(const DatasetSpec& spec) {
  if (spec.orders.empty()) throw Error("dataset: no orders given");
  for (auto o : spec.orders) {
    if (o < 2) throw Error("dataset: order must be at least 2");
  }
  if (spec.endings != 1 && spec.endings != 2 && spec.endings != 4) {
    throw Error("dataset: endings must be 1, 2 or 4");
  }
  if (spec.groups_per_order == 0) throw Error("dataset: groups_per_order must be positive");

  std::size_t n_edge = 0, n_middle = 0;
  for (auto o : spec.orders) {
    n_edge += spec.groups_per_order * (2 + 2 * spec.endings);
    n_middle += spec.groups_per_order * (o - 1);
  }
  // Start/ending symbols and middle symbols come from disjoint, seeded pools.
  auto pool = [&](std::size_t n, char prefix, std::uint64_t tag) {
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    Rng rng(derive_seed(spec.seed, tag));
    rng.shuffle(std::span<std::size_t>(ids));
    std::vector<std::string> names;
    names.reserve(n);
    for (auto id : ids) names.push_back(prefix + std::to_string(id));
    return names;
  };
  const auto edges = pool(n_edge, 'E', 1);
  const auto middles = pool(n_middle, 'M', 2);
  std::size_t next_edge = 0, next_middle = 0;

  HighOrderDataset ds;
  ds.endings_per_context = spec.endings;
  for (auto order : spec.orders) {
    for (std::size_t g = 0; g < spec.groups_per_order; ++g) {
      const std::string starts[2] = {edges[next_edge], edges[next_edge + 1]};
      next_edge += 2;
      std::vector<std::string> middle(middles.begin() + static_cast<std::ptrdiff_t>(next_middle),
                                      middles.begin() + static_cast<std::ptrdiff_t>(next_middle + order - 1));
      next_middle += order - 1;
      std::vector<std::size_t> members;
      for (const auto& start : starts) {
        for (std::size_t e = 0; e < spec.endings; ++e) {
          std::vector<std::string> seq{start};
          seq.insert(seq.end(), middle.begin(), middle.end());
          seq.push_back(edges[next_edge++]);
          members.push_back(ds.sequences.size());
          ds.sequences.push_back(std::move(seq));
          ds.order_of.push_back(order);
        }
      }
      ds.groups.push_back(std::move(members));
    }
  }
  return ds;
}

inline HighOrderDataset gen_dataset(std::size_t order, std::size_t endings, std::size_t groups,
                                    std::uint64_t seed) {
  return gen_dataset(DatasetSpec{{order}, groups, endings, seed});
}

/// Exchanges the last elements of paired sequences: within each group, the
/// k-th sequence of the first start swaps with the k-th of the second.
inline HighOrderDataset swap_endings(HighOrderDataset ds) {
  for (const auto& members : ds.groups) {
    if (members.size() % 2 != 0) throw Error("swap_endings: group has an odd number of sequences");
    const std::size_t half = members.size() / 2;
    for (std::size_t k = 0; k < half; ++k) {
      std::swap(ds.sequences[members[k]].back(), ds.sequences[members[k + half]].back());
    }
  }
  return ds;
}

// Accuracy on every sequence ending of a model that predicts the ending from
// the preceding `context` symbols, using the majority ending per context
// (ties to the ending listed first). Independent check that a dataset needs
// high-order context.
inline double ngram_ending_accuracy(const HighOrderDataset& ds, std::size_t context) {
  std::map<std::vector<std::string>, std::map<std::string, std::size_t>> table;
  std::map<std::vector<std::string>, std::vector<std::string>> first_seen;
  auto key_of = [&](const std::vector<std::string>& seq) {
    const std::size_t end = seq.size() - 1;
    const std::size_t begin = end >= context ? end - context : 0;
    return std::vector<std::string>(seq.begin() + static_cast<std::ptrdiff_t>(begin),
                                    seq.begin() + static_cast<std::ptrdiff_t>(end));
  };
  for (const auto& seq : ds.sequences) {
    auto key = key_of(seq);
    if (++table[key][seq.back()] == 1) first_seen[key].push_back(seq.back());
  }
  std::size_t hits = 0;
  for (const auto& seq : ds.sequences) {
    const auto key = key_of(seq);
    const auto& counts = table[key];
    std::vector<std::string> ranked = first_seen[key];
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](const std::string& a, const std::string& b) { return counts.at(a) > counts.at(b); });
    // A multi-ending dataset is scored top-K, K = endings per context.
    const std::size_t k = std::min(ranked.size(), ds.endings_per_context);
    for (std::size_t i = 0; i < k; ++i) {
      if (ranked[i] == seq.back()) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

enum class TemporalNoise { off, from_start, after_element };

struct StreamConfig {
  std::uint64_t seed = 1;
  std::size_t noise_pool_size = 50000;
  std::optional<std::size_t> swap_point;
  TemporalNoise temporal_noise = TemporalNoise::off;
  std::size_t temporal_noise_after = 12000;
  double temporal_noise_probability = 1.0;
};

struct StreamElement {
  std::size_t index = 0;
  std::string symbol;
  std::optional<std::size_t> sequence;  // empty for separator noise
  std::size_t position = 0;
  bool is_sequence_end = false;
  bool is_noise = false;
  bool is_temporal_noise = false;
};

/// Endless stream: a uniformly chosen sequence, then one noise symbol, repeat.
/// No start or end markers. Noise symbols are drawn without replacement until
/// the pool is exhausted, then with replacement.
class SequenceStream {
 public:
  SequenceStream(HighOrderDataset ds, StreamConfig cfg)
      : ds_(std::move(ds)),
        cfg_(cfg),
        choice_rng_(derive_seed(cfg.seed, 0x5e9)),
        noise_rng_(derive_seed(cfg.seed, 0x401)),
        temporal_rng_(derive_seed(cfg.seed, 0x7e3)) {
    if (ds_.sequences.empty()) throw Error("stream: empty dataset");
    if (cfg_.noise_pool_size == 0) throw Error("stream: noise pool must be nonempty");
    if (!(cfg_.temporal_noise_probability >= 0.0 && cfg_.temporal_noise_probability <= 1.0)) {
      throw Error("stream: temporal noise probability must be in [0, 1]");
    }
  }

  StreamElement next() {
    if (pending_.empty()) begin_sequence();
    StreamElement e = std::move(pending_.front());
    pending_.erase(pending_.begin());
    e.index = emitted_++;
    return e;
  }

  std::size_t emitted() const noexcept { return emitted_; }
  std::size_t sequences_started() const noexcept { return sequences_started_; }
  bool swapped() const noexcept { return swapped_; }
  const HighOrderDataset& dataset() const noexcept { return ds_; }

 private:
  void begin_sequence() {
    if (cfg_.swap_point && !swapped_ && emitted_ >= *cfg_.swap_point) {
      ds_ = swap_endings(std::move(ds_));
      swapped_ = true;
    }
    const auto s = static_cast<std::size_t>(choice_rng_.below(ds_.size()));
    const auto& seq = ds_.sequences[s];
    ++sequences_started_;

    std::optional<std::size_t> noisy_position;
    const bool noisy_phase =
        cfg_.temporal_noise == TemporalNoise::from_start ||
        (cfg_.temporal_noise == TemporalNoise::after_element && emitted_ >= cfg_.temporal_noise_after);
    if (noisy_phase && cfg_.temporal_noise_probability > 0.0) {
      const auto pos = 1 + static_cast<std::size_t>(temporal_rng_.below(3));
      if (temporal_rng_.uniform() < cfg_.temporal_noise_probability && pos + 1 < seq.size()) {
        noisy_position = pos;
      }
    }
    for (std::size_t i = 0; i < seq.size(); ++i) {
      StreamElement e;
      e.sequence = s;
      e.position = i;
      e.is_sequence_end = i + 1 == seq.size();
      if (noisy_position && *noisy_position == i) {
        e.symbol = draw_noise();
        e.is_temporal_noise = true;
      } else {
        e.symbol = seq[i];
      }
      pending_.push_back(std::move(e));
    }
    StreamElement sep;
    sep.symbol = draw_noise();
    sep.is_noise = true;
    pending_.push_back(std::move(sep));
  }

  std::string draw_noise() {
    std::size_t id;
    if (noise_cursor_ < cfg_.noise_pool_size) {
      // Lazy Fisher-Yates over the pool: slot i holds the value for position i.
      const auto j = noise_cursor_ + static_cast<std::size_t>(noise_rng_.below(cfg_.noise_pool_size - noise_cursor_));
      const auto vj = lookup(j);
      noise_perm_[j] = lookup(noise_cursor_);
      id = vj;
      ++noise_cursor_;
    } else {
      id = static_cast<std::size_t>(noise_rng_.below(cfg_.noise_pool_size));
    }
    return "N" + std::to_string(id);
  }

  std::size_t lookup(std::size_t i) const {
    auto it = noise_perm_.find(i);
    return it == noise_perm_.end() ? i : it->second;
  }

  HighOrderDataset ds_;
  StreamConfig cfg_;
  Rng choice_rng_;
  Rng noise_rng_;
  Rng temporal_rng_;
  std::map<std::size_t, std::size_t> noise_perm_;
  std::size_t noise_cursor_ = 0;
  std::size_t emitted_ = 0;
  std::size_t sequences_started_ = 0;
  bool swapped_ = false;
  std::vector<StreamElement> pending_;
};

}  // namespace htmseq
