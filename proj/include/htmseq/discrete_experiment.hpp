#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "htmseq/binary_io.hpp"
#include "htmseq/classifiers.hpp"
#include "htmseq/encoders.hpp"
#include "htmseq/sequences.hpp"
#include "htmseq/temporal_memory.hpp"

namespace htmseq {

struct CategoryEncoderParams {
  std::size_t width = 2048;
  std::size_t num_active = 40;
  std::uint64_t seed = 1;
};

struct DiscreteSetup {
  TmParams tm;
  CategoryEncoderParams encoder;
  DatasetSpec dataset;
  StreamConfig stream;
  std::size_t top_k = 1;
  std::size_t accuracy_window = 100;
};

struct StepRecord {
  std::size_t index = 0;
  std::string symbol;
  bool is_sequence_end = false;
  bool is_noise = false;
  bool is_temporal_noise = false;
  std::vector<ScoredSymbol> top_k;  // filled at sequence ends only
  std::optional<bool> correct;
  std::optional<double> accuracy_ma;  // moving accuracy after this ending
  std::size_t bursting_columns = 0;
  std::size_t active_cells = 0;
};

/// Streams a high-order dataset through a category encoder and a temporal
/// memory, scoring the top-K decoded prediction at every sequence ending
/// before the ending is shown to the model.
class DiscreteExperiment {
 public:
  static constexpr std::uint32_t kSnapshotVersion = 1;

  explicit DiscreteExperiment(const DiscreteSetup& setup)
      : setup_(setup),
        encoder_(setup.encoder.seed, setup.encoder.width, setup.encoder.num_active),
        tm_(setup.tm),
        stream_(gen_dataset(setup.dataset), setup.stream) {
    if (setup.encoder.width != setup.tm.num_columns) {
      throw Error("encoder width must equal the number of columns");
    }
    if (setup.top_k == 0) throw Error("top_k must be at least 1");
    if (setup.accuracy_window == 0) throw Error("accuracy window must be positive");
  }

  StepRecord step() {
    const StreamElement e = stream_.next();
    StepRecord rec;
    rec.index = e.index;
    rec.symbol = e.symbol;
    rec.is_sequence_end = e.is_sequence_end;
    rec.is_noise = e.is_noise;
    rec.is_temporal_noise = e.is_temporal_noise;

    if (e.is_sequence_end) {
      rec.top_k = classify_topk(tm_.predicted_columns(), table_, setup_.top_k);
      bool hit = false;
      for (const auto& s : rec.top_k) hit = hit || s.symbol == e.symbol;
      rec.correct = hit;
      push_outcome(hit);
      rec.accuracy_ma = accuracy();
    }

    const Sdr& columns = encoder_.encode(e.symbol);
    table_.add(e.symbol, columns);
    const auto& st = tm_.step(columns, learning_);
    rec.active_cells = st.active_cells.size();
    rec.bursting_columns = st.bursting_columns.size();
    return rec;
  }

  // Moving accuracy over the trailing window of sequence endings.
  double accuracy() const {
    return recent_.empty() ? 0.0 : static_cast<double>(recent_hits_) / static_cast<double>(recent_.size());
  }

  std::size_t kill_cells(double fraction, std::uint64_t seed) { return tm_.kill_cells(fraction, seed); }
  void set_learning(bool on) noexcept { learning_ = on; }
  bool learning() const noexcept { return learning_; }

  std::size_t elements_seen() const noexcept { return stream_.emitted(); }
  std::size_t endings_seen() const noexcept { return endings_seen_; }
  const TemporalMemory& tm() const noexcept { return tm_; }
  TemporalMemory& tm() noexcept { return tm_; }
  const SymbolTable& symbols() const noexcept { return table_; }
  const SequenceStream& stream() const noexcept { return stream_; }
  const DiscreteSetup& setup() const noexcept { return setup_; }

  void write_payload(io::Writer& w) const {
    w.u64(stream_.emitted());
    w.u8(learning_ ? 1 : 0);
    w.u64(endings_seen_);
    w.u64(recent_.size());
    for (bool b : recent_) w.u8(b ? 1 : 0);
    w.u64(table_.size());
    for (const auto& [symbol, sdr] : table_.entries()) w.str(symbol);
    tm_.write_payload(w);
  }

  // Rebuilds the harness from `setup` and a payload written by write_payload.
  // The stream is replayed to its saved position; symbol SDRs are re-derived
  // from the encoder seed.
  static DiscreteExperiment restore(const DiscreteSetup& setup, io::Reader& r) {
    DiscreteExperiment ex(setup);
    const auto emitted = r.u64();
    if (emitted > (std::uint64_t{1} << 40)) throw SnapshotError("implausible stream position");
    for (std::uint64_t i = 0; i < emitted; ++i) ex.stream_.next();
    ex.learning_ = r.u8() != 0;
    ex.endings_seen_ = r.u64();
    const auto n = r.length();
    for (std::size_t i = 0; i < n; ++i) ex.push_outcome(r.u8() != 0, false);
    const auto symbols = r.length(8);
    for (std::size_t i = 0; i < symbols; ++i) {
      const auto name = r.str();
      ex.table_.add(name, ex.encoder_.encode(name));
    }
    ex.tm_ = TemporalMemory::read_payload(r);
    if (ex.tm_.params() != setup.tm) throw SnapshotError("snapshot was taken with different tm parameters");
    return ex;
  }

 private:
  void push_outcome(bool hit, bool count = true) {
    recent_.push_back(hit);
    recent_hits_ += hit ? 1 : 0;
    if (recent_.size() > setup_.accuracy_window) {
      recent_hits_ -= recent_.front() ? 1 : 0;
      recent_.pop_front();
    }
    if (count) ++endings_seen_;
  }

  DiscreteSetup setup_;
  CategoryEncoder encoder_;
  TemporalMemory tm_;
  SequenceStream stream_;
  SymbolTable table_;
  bool learning_ = true;
  std::deque<bool> recent_;
  std::size_t recent_hits_ = 0;
  std::size_t endings_seen_ = 0;
};

// Index (0-based, over sequence endings) of the first ending from which the
// next `window` endings are at least `threshold` correct; nullopt if never.
inline std::optional<std::size_t> sequences_to_perfection(const std::vector<bool>& outcomes,
                                                          double threshold = 0.98,
                                                          std::size_t window = 100) {
  if (outcomes.size() < window) return std::nullopt;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < window; ++i) hits += outcomes[i];
  for (std::size_t start = 0;; ++start) {
    if (static_cast<double>(hits) >= threshold * static_cast<double>(window)) return start;
    if (start + window >= outcomes.size()) return std::nullopt;
    hits += outcomes[start + window];
    hits -= outcomes[start];
  }
}

struct FaultInjectionResult {
  double fraction = 0.0;
  std::size_t cells_killed = 0;
  double accuracy = 0.0;  // mean correctness over endings in the evaluation span
  std::size_t endings = 0;
};

/// Damages a copy of a trained experiment, freezes learning, and measures
/// ending accuracy over the next `eval_elements` stream elements.
inline FaultInjectionResult run_fault_injection(const DiscreteExperiment& trained, double fraction,
                                                std::uint64_t kill_seed,
                                                std::size_t eval_elements = 5000) {
  DiscreteExperiment ex = trained;
  FaultInjectionResult r;
  r.fraction = fraction;
  r.cells_killed = ex.kill_cells(fraction, kill_seed);
  ex.set_learning(false);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < eval_elements; ++i) {
    const auto rec = ex.step();
    if (rec.correct) {
      ++r.endings;
      hits += *rec.correct ? 1 : 0;
    }
  }
  r.accuracy = r.endings ? static_cast<double>(hits) / static_cast<double>(r.endings) : 0.0;
  return r;
}

}  // namespace htmseq
