#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "htmseq/binary_io.hpp"
#include "htmseq/error.hpp"
#include "htmseq/random.hpp"
#include "htmseq/sdr.hpp"

namespace htmseq {

using CellIndex = std::uint32_t;
using SegmentIndex = std::uint32_t;

/// Synaptic permanence in fixed point, 1e-4 per tick, always within [0, 1].
///
/// Fixed point keeps learning arithmetic exact (0.45 + 0.1 is exactly 0.55) and
/// lets a snapshot reproduce a network bit for bit.
class Permanence {
 public:
  static constexpr std::int32_t kScale = 10000;

  constexpr Permanence() = default;

  static constexpr Permanence from_ticks(std::int32_t ticks) {
    Permanence p;
    p.ticks_ = std::clamp(ticks, 0, kScale);
    return p;
  }

  static Permanence from_real(double value) {
    if (!(value >= 0.0 && value <= 1.0)) throw Error("permanence must be in [0, 1]");
    return from_ticks(static_cast<std::int32_t>(std::llround(value * kScale)));
  }

  constexpr std::int32_t ticks() const noexcept { return ticks_; }
  constexpr double value() const noexcept { return static_cast<double>(ticks_) / kScale; }

  constexpr auto operator<=>(const Permanence&) const = default;

 private:
  std::int32_t ticks_ = 0;
};

// Which inactive synapses a reinforced segment decrements.
enum class DecrementScope : std::uint8_t {
  connected = 0,  // only connected synapses whose presynaptic cell was inactive
  positive = 1,   // every synapse whose presynaptic cell was inactive
};

struct TmParams {
  std::uint32_t num_columns = 2048;
  std::uint32_t cells_per_column = 32;
  std::uint32_t activation_threshold = 15;
  std::uint32_t matching_threshold = 6;
  Permanence initial_permanence = Permanence::from_ticks(2100);
  Permanence connected_threshold = Permanence::from_ticks(5000);
  Permanence permanence_increment = Permanence::from_ticks(1000);
  Permanence permanence_decrement = Permanence::from_ticks(1000);
  Permanence predicted_decrement = Permanence::from_ticks(100);
  std::uint32_t max_segments_per_cell = 128;
  std::uint32_t max_synapses_per_segment = 128;
  std::uint32_t max_new_synapses = 32;
  DecrementScope decrement_scope = DecrementScope::connected;
  std::uint64_t seed = 42;

  std::uint32_t num_cells() const noexcept { return num_columns * cells_per_column; }

  void validate() const {
    if (num_columns == 0 || cells_per_column == 0) throw Error("tm: empty geometry");
    if (std::uint64_t{num_columns} * cells_per_column > std::numeric_limits<CellIndex>::max()) {
      throw Error("tm: too many cells");
    }
    if (!(initial_permanence.ticks() > 0 && initial_permanence < connected_threshold)) {
      throw Error("tm: need 0 < initial_permanence < connected_threshold");
    }
    if (activation_threshold == 0) throw Error("tm: activation_threshold must be positive");
    if (matching_threshold == 0 || matching_threshold > activation_threshold) {
      throw Error("tm: need 0 < matching_threshold <= activation_threshold");
    }
    if (max_segments_per_cell == 0 || max_synapses_per_segment == 0) {
      throw Error("tm: segment and synapse caps must be positive");
    }
    if (max_new_synapses == 0 || max_new_synapses > max_synapses_per_segment) {
      throw Error("tm: need 0 < max_new_synapses <= max_synapses_per_segment");
    }
  }

  friend bool operator==(const TmParams&, const TmParams&) = default;
};

struct CellId {
  std::uint32_t column = 0;
  std::uint32_t cell = 0;
  friend bool operator==(const CellId&, const CellId&) = default;
};

struct Synapse {
  CellIndex presynaptic = 0;
  Permanence permanence;
  friend bool operator==(const Synapse&, const Synapse&) = default;
};

struct Segment {
  CellIndex owner = 0;
  std::vector<Synapse> synapses;  // sorted by presynaptic cell
  std::uint64_t last_active = 0;
  bool alive = false;
  friend bool operator==(const Segment&, const Segment&) = default;
};

// Network state after one step. Cell and column lists are sorted ascending;
// segment lists are ordered by (owner cell, segment index).
struct TmState {
  std::uint64_t timestep = 0;
  std::vector<std::uint32_t> active_columns;
  std::vector<std::uint32_t> bursting_columns;
  std::vector<CellIndex> active_cells;
  std::vector<CellIndex> winner_cells;
  std::vector<CellIndex> predictive_cells;
  std::vector<SegmentIndex> active_segments;
  std::vector<SegmentIndex> matching_segments;
  // Positive-permanence synapses onto active cells, parallel to matching_segments.
  std::vector<std::uint32_t> matching_potential;

  friend bool operator==(const TmState&, const TmState&) = default;
};

struct DendriteActivity {
  std::vector<CellIndex> predictive_cells;
  std::vector<SegmentIndex> active_segments;
  std::vector<SegmentIndex> matching_segments;
  std::vector<std::uint32_t> matching_potential;
};

// How one active column resolved under the activation rule.
struct ColumnActivation {
  std::uint32_t column = 0;
  bool bursting = false;
  // Predicted column: the previously active segments in it. Bursting column:
  // at most one best-matching segment.
  std::vector<SegmentIndex> learning_segments;
  // Bursting column with no matching segment: the least-used cell that will
  // receive a new segment.
  std::optional<CellIndex> new_segment_cell;
};

struct Activation {
  std::vector<CellIndex> active_cells;
  std::vector<CellIndex> winner_cells;
  std::vector<ColumnActivation> columns;
};

/// Column / cell / distal-segment sequence memory with Hebbian permanence learning.
///
/// A step runs, in order: cell activation from the previous predictive state,
/// learning (if enabled), and the predictive state for the next step. One
/// instance is single-writer; const queries on a quiescent instance are safe
/// to share.
class TemporalMemory {
 public:
  static constexpr std::uint32_t kSnapshotVersion = 1;

  explicit TemporalMemory(TmParams params) : p_(params), rng_(derive_seed(params.seed, 0x746d)) {
    p_.validate();
    const auto n = p_.num_cells();
    cell_segments_.resize(n);
    presynaptic_segments_.resize(n);
    dead_.assign(n, 0);
    prev_active_mask_.assign(n, 0);
  }

  const TmParams& params() const noexcept { return p_; }
  const TmState& state() const noexcept { return state_; }

  CellId cell_id(CellIndex c) const { return {c / p_.cells_per_column, c % p_.cells_per_column}; }
  CellIndex cell_index(CellId id) const {
    if (id.column >= p_.num_columns || id.cell >= p_.cells_per_column) throw Error("cell id out of range");
    return id.column * p_.cells_per_column + id.cell;
  }
  std::uint32_t column_of(CellIndex c) const noexcept { return c / p_.cells_per_column; }

  /// Runs one timestep on the active columns and returns the new state.
  const TmState& step(const Sdr& active_columns, bool learn) {
    if (active_columns.width() != p_.num_columns) {
      throw WidthMismatch(p_.num_columns, active_columns.width());
    }
    ++timestep_;
    Activation act = activate_cells(active_columns.active());
    if (learn) this->learn(act);
    finish_step(active_columns.active(), std::move(act), learn);
    return state_;
  }

  /// Segments whose connected synapses onto `active_cells` reach the activation
  /// threshold are active; segments whose positive synapses reach the matching
  /// threshold are matching. Owners of active segments are predictive.
  DendriteActivity compute_predictive(std::span<const CellIndex> active_cells) const {
    std::vector<std::uint32_t> connected(segments_.size(), 0);
    std::vector<std::uint32_t> potential(segments_.size(), 0);
    return compute_into(active_cells, connected, potential);
  }

  /// Active and winner cells for this step's columns, from the previous step's
  /// predictive state. Previously predictive cells in an active column fire
  /// alone and are winners; a column with no predictive cell bursts and picks
  /// one winner (best matching segment, else least-used cell).
  Activation activate_cells(std::span<const std::uint32_t> active_columns) {
    Activation act;
    const auto& prev_active = state_.active_segments;
    const auto& prev_matching = state_.matching_segments;
    for (std::uint32_t column : active_columns) {
      if (column >= p_.num_columns) throw Error("active column out of range");
      ColumnActivation col;
      col.column = column;
      const CellIndex lo = column * p_.cells_per_column;
      const CellIndex hi = lo + p_.cells_per_column;

      auto [a_begin, a_end] = segments_in_cells(prev_active, lo, hi);
      if (a_begin != a_end) {
        for (auto it = a_begin; it != a_end; ++it) {
          const CellIndex owner = segments_[*it].owner;
          if (act.active_cells.empty() || act.active_cells.back() != owner) {
            act.active_cells.push_back(owner);
            act.winner_cells.push_back(owner);
          }
          col.learning_segments.push_back(*it);
        }
        act.columns.push_back(std::move(col));
        continue;
      }

      col.bursting = true;
      bool any_alive = false;
      for (CellIndex c = lo; c < hi; ++c) {
        if (!dead_[c]) {
          act.active_cells.push_back(c);
          any_alive = true;
        }
      }
      if (!any_alive) {
        // Nothing can fire or learn here, but the column is still unpredicted.
        act.columns.push_back(std::move(col));
        continue;
      }

      auto [m_begin, m_end] = segments_in_cells(prev_matching, lo, hi);
      if (m_begin != m_end) {
        std::size_t best = static_cast<std::size_t>(m_begin - prev_matching.begin());
        for (auto it = m_begin; it != m_end; ++it) {
          const auto k = static_cast<std::size_t>(it - prev_matching.begin());
          if (state_.matching_potential[k] > state_.matching_potential[best]) best = k;
        }
        col.learning_segments.push_back(prev_matching[best]);
        act.winner_cells.push_back(segments_[prev_matching[best]].owner);
      } else {
        const CellIndex winner = least_used_cell(lo, hi);
        col.new_segment_cell = winner;
        act.winner_cells.push_back(winner);
      }
      act.columns.push_back(std::move(col));
    }
    // Column iteration is ascending, but a bursting column pushes its winner
    // after all of its cells, so only the winner list can be out of order.
    std::sort(act.winner_cells.begin(), act.winner_cells.end());
    return act;
  }

  /// Applies reinforcement, synapse growth, segment creation and the
  /// predicted-inactive decay for one step. `act` must come from
  /// activate_cells on the current previous-state.
  void learn(const Activation& act) {
    for (CellIndex c : state_.active_cells) prev_active_mask_[c] = 1;

    std::vector<std::uint8_t> column_active(p_.num_columns, 0);
    for (const auto& col : act.columns) column_active[col.column] = 1;

    for (const auto& col : act.columns) {
      for (SegmentIndex s : col.learning_segments) {
        adapt_segment(s);
        const std::uint32_t have = potential_of(s);
        if (have < p_.max_new_synapses) grow_synapses(s, p_.max_new_synapses - have);
        segments_[s].last_active = timestep_;
      }
      if (col.new_segment_cell && !state_.winner_cells.empty()) {
        const SegmentIndex s = create_segment(*col.new_segment_cell);
        grow_synapses(s, p_.max_new_synapses);
      }
    }

    for (SegmentIndex s : state_.active_segments) {
      if (!segments_[s].alive || column_active[column_of(segments_[s].owner)]) continue;
      punish_segment(s);
    }

    for (CellIndex c : state_.active_cells) prev_active_mask_[c] = 0;
    destroy_empty_segments();
  }

  Sdr predicted_columns() const {
    std::vector<Sdr::Index> cols;
    for (CellIndex c : state_.predictive_cells) {
      const auto col = column_of(c);
      if (cols.empty() || cols.back() != col) cols.push_back(col);
    }
    return Sdr(p_.num_columns, std::move(cols));
  }

  Sdr active_cells_sdr() const { return Sdr(p_.num_cells(), state_.active_cells); }

  /// Kills floor(fraction * cells) uniformly chosen living cells: their
  /// segments and every synapse from them are removed, and they never fire
  /// or predict again. Returns the number of cells killed.
  std::size_t kill_cells(double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error("kill fraction must be in [0, 1]");
    std::vector<CellIndex> alive;
    for (CellIndex c = 0; c < p_.num_cells(); ++c) {
      if (!dead_[c]) alive.push_back(c);
    }
    const auto count = std::min<std::size_t>(
        alive.size(), static_cast<std::size_t>(std::floor(fraction * p_.num_cells())));
    Rng rng(seed);
    rng.partial_shuffle(std::span<CellIndex>(alive), count);
    std::vector<CellIndex> victims(alive.begin(), alive.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(victims.begin(), victims.end());

    for (CellIndex c : victims) {
      dead_[c] = 1;
      const auto owned = cell_segments_[c];
      for (SegmentIndex s : owned) destroy_segment(s);
    }
    for (CellIndex c : victims) {
      const auto targets = presynaptic_segments_[c];
      for (SegmentIndex s : targets) {
        auto& syn = segments_[s].synapses;
        std::erase_if(syn, [c](const Synapse& x) { return x.presynaptic == c; });
        if (syn.empty()) maybe_empty_.push_back(s);
      }
      presynaptic_segments_[c].clear();
    }
    destroy_empty_segments();

    auto drop_dead = [&](std::vector<CellIndex>& cells) {
      std::erase_if(cells, [&](CellIndex c) { return dead_[c] != 0; });
    };
    drop_dead(state_.active_cells);
    drop_dead(state_.winner_cells);
    refresh_dendrites();
    return count;
  }

  /// Clears the activity state. Learned segments are kept.
  void reset() {
    const auto t = state_.timestep;
    state_ = TmState{};
    state_.timestep = t;
  }

  // Introspection and manual wiring (fixtures, oracles).

  std::size_t num_segments() const noexcept { return segments_.size() - free_.size(); }
  std::size_t num_synapses() const {
    std::size_t n = 0;
    for (const auto& s : segments_) n += s.alive ? s.synapses.size() : 0;
    return n;
  }
  std::size_t segment_capacity() const noexcept { return segments_.size(); }
  const Segment& segment(SegmentIndex s) const { return segments_.at(s); }
  std::span<const SegmentIndex> segments_for_cell(CellIndex c) const { return cell_segments_.at(c); }
  bool is_dead(CellIndex c) const { return dead_.at(c) != 0; }
  std::size_t num_dead() const { return static_cast<std::size_t>(std::count(dead_.begin(), dead_.end(), 1)); }
  std::uint64_t timestep() const noexcept { return timestep_; }

  SegmentIndex create_segment(CellIndex owner) {
    if (owner >= p_.num_cells()) throw Error("segment owner out of range");
    auto& owned = cell_segments_[owner];
    if (owned.size() >= p_.max_segments_per_cell) {
      SegmentIndex victim = owned.front();
      for (SegmentIndex s : owned) {
        if (segments_[s].last_active < segments_[victim].last_active) victim = s;
      }
      destroy_segment(victim);
    }
    SegmentIndex s;
    if (!free_.empty()) {
      s = *free_.begin();
      free_.erase(free_.begin());
    } else {
      s = static_cast<SegmentIndex>(segments_.size());
      segments_.emplace_back();
    }
    segments_[s] = Segment{owner, {}, timestep_, true};
    owned.insert(std::upper_bound(owned.begin(), owned.end(), s), s);
    maybe_empty_.push_back(s);
    return s;
  }

  void create_synapse(SegmentIndex s, CellIndex presynaptic, Permanence permanence) {
    auto& seg = segments_.at(s);
    if (!seg.alive) throw Error("synapse on a destroyed segment");
    if (presynaptic >= p_.num_cells()) throw Error("presynaptic cell out of range");
    if (presynaptic == seg.owner) throw Error("segment cannot synapse onto its own cell");
    if (permanence.ticks() <= 0) throw Error("new synapse needs positive permanence");
    auto it = std::lower_bound(seg.synapses.begin(), seg.synapses.end(), presynaptic,
                               [](const Synapse& a, CellIndex c) { return a.presynaptic < c; });
    if (it != seg.synapses.end() && it->presynaptic == presynaptic) {
      throw Error("duplicate synapse on segment");
    }
    if (seg.synapses.size() >= p_.max_synapses_per_segment) throw Error("segment synapse cap reached");
    seg.synapses.insert(it, Synapse{presynaptic, permanence});
    presynaptic_segments_[presynaptic].push_back(s);
  }

  // Recomputes predictive/active/matching segments from the current active
  // cells. Needed after manual wiring.
  void refresh_dendrites() {
    scratch_connected_.resize(segments_.size(), 0);
    scratch_potential_.resize(segments_.size(), 0);
    auto d = compute_into(state_.active_cells, scratch_connected_, scratch_potential_);
    state_.predictive_cells = std::move(d.predictive_cells);
    state_.active_segments = std::move(d.active_segments);
    state_.matching_segments = std::move(d.matching_segments);
    state_.matching_potential = std::move(d.matching_potential);
  }

  // Sets the activity (as if these cells had just fired) and recomputes the
  // predictive state. Test and fixture helper.
  void set_active_cells(std::vector<CellIndex> active, std::vector<CellIndex> winners) {
    std::sort(active.begin(), active.end());
    std::sort(winners.begin(), winners.end());
    state_.active_cells = std::move(active);
    state_.winner_cells = std::move(winners);
    state_.active_columns.clear();
    state_.bursting_columns.clear();
    for (CellIndex c : state_.active_cells) {
      const auto col = column_of(c);
      if (state_.active_columns.empty() || state_.active_columns.back() != col) {
        state_.active_columns.push_back(col);
      }
    }
    refresh_dendrites();
  }

  void save(std::ostream& out) const {
    io::Writer w;
    write_payload(w);
    io::write_framed(out, kMagic, kSnapshotVersion, w);
  }

  static TemporalMemory load(std::istream& in) {
    const auto payload = io::read_framed(in, kMagic, kSnapshotVersion);
    io::Reader r(payload);
    auto tm = read_payload(r);
    if (!r.done()) throw SnapshotError("trailing bytes in temporal memory snapshot");
    return tm;
  }

  void write_payload(io::Writer& w) const {
    w.u32(p_.num_columns);
    w.u32(p_.cells_per_column);
    w.u32(p_.activation_threshold);
    w.u32(p_.matching_threshold);
    w.i32(p_.initial_permanence.ticks());
    w.i32(p_.connected_threshold.ticks());
    w.i32(p_.permanence_increment.ticks());
    w.i32(p_.permanence_decrement.ticks());
    w.i32(p_.predicted_decrement.ticks());
    w.u32(p_.max_segments_per_cell);
    w.u32(p_.max_synapses_per_segment);
    w.u32(p_.max_new_synapses);
    w.u8(static_cast<std::uint8_t>(p_.decrement_scope));
    w.u64(p_.seed);
    w.u64(timestep_);
    w.str(rng_.state());

    std::vector<CellIndex> dead;
    for (CellIndex c = 0; c < p_.num_cells(); ++c) {
      if (dead_[c]) dead.push_back(c);
    }
    w.u32s(dead);

    w.u64(segments_.size());
    for (const auto& seg : segments_) {
      w.u8(seg.alive ? 1 : 0);
      if (!seg.alive) continue;
      w.u32(seg.owner);
      w.u64(seg.last_active);
      w.u64(seg.synapses.size());
      for (const auto& syn : seg.synapses) {
        w.u32(syn.presynaptic);
        w.i32(syn.permanence.ticks());
      }
    }
    w.u64(state_.timestep);
    w.u32s(state_.active_columns);
    w.u32s(state_.bursting_columns);
    w.u32s(state_.active_cells);
    w.u32s(state_.winner_cells);
  }

  static TemporalMemory read_payload(io::Reader& r) {
    TmParams p;
    p.num_columns = r.u32();
    p.cells_per_column = r.u32();
    p.activation_threshold = r.u32();
    p.matching_threshold = r.u32();
    p.initial_permanence = Permanence::from_ticks(r.i32());
    p.connected_threshold = Permanence::from_ticks(r.i32());
    p.permanence_increment = Permanence::from_ticks(r.i32());
    p.permanence_decrement = Permanence::from_ticks(r.i32());
    p.predicted_decrement = Permanence::from_ticks(r.i32());
    p.max_segments_per_cell = r.u32();
    p.max_synapses_per_segment = r.u32();
    p.max_new_synapses = r.u32();
    const auto scope = r.u8();
    if (scope > 1) throw SnapshotError("bad decrement scope in snapshot");
    p.decrement_scope = static_cast<DecrementScope>(scope);
    p.seed = r.u64();
    try {
      p.validate();
    } catch (const Error& e) {
      throw SnapshotError(std::string("snapshot parameters invalid: ") + e.what());
    }

    TemporalMemory tm(p);
    tm.timestep_ = r.u64();
    tm.rng_.set_state(r.str());
    for (CellIndex c : r.u32s<CellIndex>()) {
      if (c >= p.num_cells()) throw SnapshotError("dead cell out of range");
      tm.dead_[c] = 1;
    }
    const auto n_segments = r.length();
    tm.segments_.resize(n_segments);
    for (SegmentIndex s = 0; s < n_segments; ++s) {
      auto& seg = tm.segments_[s];
      seg.alive = r.u8() != 0;
      if (!seg.alive) {
        tm.free_.insert(s);
        continue;
      }
      seg.owner = r.u32();
      seg.last_active = r.u64();
      if (seg.owner >= p.num_cells()) throw SnapshotError("segment owner out of range");
      const auto n_syn = r.length(8);
      if (n_syn > p.max_synapses_per_segment) throw SnapshotError("segment exceeds synapse cap");
      for (std::size_t k = 0; k < n_syn; ++k) {
        Synapse syn;
        syn.presynaptic = r.u32();
        const auto ticks = r.i32();
        if (syn.presynaptic >= p.num_cells() || syn.presynaptic == seg.owner || ticks <= 0 ||
            ticks > Permanence::kScale ||
            (!seg.synapses.empty() && seg.synapses.back().presynaptic >= syn.presynaptic)) {
          throw SnapshotError("invalid synapse in snapshot");
        }
        syn.permanence = Permanence::from_ticks(ticks);
        seg.synapses.push_back(syn);
        tm.presynaptic_segments_[syn.presynaptic].push_back(s);
      }
      tm.cell_segments_[seg.owner].push_back(s);
      if (tm.cell_segments_[seg.owner].size() > p.max_segments_per_cell) {
        throw SnapshotError("cell exceeds segment cap");
      }
    }
    tm.state_.timestep = r.u64();
    tm.state_.active_columns = r.u32s<std::uint32_t>();
    tm.state_.bursting_columns = r.u32s<std::uint32_t>();
    tm.state_.active_cells = r.u32s<CellIndex>();
    tm.state_.winner_cells = r.u32s<CellIndex>();
    for (CellIndex c : tm.state_.active_cells) {
      if (c >= p.num_cells()) throw SnapshotError("active cell out of range");
    }
    for (CellIndex c : tm.state_.winner_cells) {
      if (c >= p.num_cells()) throw SnapshotError("winner cell out of range");
    }
    tm.refresh_dendrites();
    return tm;
  }

  // Equal learned structure, activity and generator state.
  friend bool operator==(const TemporalMemory& a, const TemporalMemory& b) {
    return a.p_ == b.p_ && a.timestep_ == b.timestep_ && a.rng_ == b.rng_ && a.dead_ == b.dead_ &&
           a.segments_ == b.segments_ && a.state_ == b.state_;
  }

 private:
  static constexpr std::string_view kMagic = "HTMSEQTM";

  // `connected` and `potential` must be zeroed and sized to segment_capacity();
  // they are returned zeroed.
  DendriteActivity compute_into(std::span<const CellIndex> active_cells,
                                std::vector<std::uint32_t>& connected,
                                std::vector<std::uint32_t>& potential) const {
    std::vector<SegmentIndex> touched;
    for (CellIndex cell : active_cells) {
      if (cell >= p_.num_cells()) throw Error("active cell out of range");
      for (SegmentIndex s : presynaptic_segments_[cell]) {
        const auto& syn = segments_[s].synapses;
        auto it = std::lower_bound(syn.begin(), syn.end(), cell,
                                   [](const Synapse& a, CellIndex c) { return a.presynaptic < c; });
        if (potential[s]++ == 0) touched.push_back(s);
        if (it->permanence >= p_.connected_threshold) ++connected[s];
      }
    }
    // Only segments past a threshold need ordering; most touched ones are not.
    std::vector<SegmentIndex> candidates;
    for (SegmentIndex s : touched) {
      if (connected[s] >= p_.activation_threshold || potential[s] >= p_.matching_threshold) {
        candidates.push_back(s);
      }
    }
    sort_by_owner(candidates);
    DendriteActivity out;
    for (SegmentIndex s : candidates) {
      if (connected[s] >= p_.activation_threshold) {
        out.active_segments.push_back(s);
        const CellIndex owner = segments_[s].owner;
        if (out.predictive_cells.empty() || out.predictive_cells.back() != owner) {
          out.predictive_cells.push_back(owner);
        }
      }
      if (potential[s] >= p_.matching_threshold) {
        out.matching_segments.push_back(s);
        out.matching_potential.push_back(potential[s]);
      }
    }
    for (SegmentIndex s : touched) {
      connected[s] = 0;
      potential[s] = 0;
    }
    return out;
  }

  void sort_by_owner(std::vector<SegmentIndex>& segs) const {
    std::sort(segs.begin(), segs.end(), [&](SegmentIndex a, SegmentIndex b) {
      const auto oa = segments_[a].owner, ob = segments_[b].owner;
      return oa != ob ? oa < ob : a < b;
    });
  }

  // Range of a (owner, index)-ordered segment list whose owners lie in [lo, hi).
  using SegmentIter = std::vector<SegmentIndex>::const_iterator;
  std::pair<SegmentIter, SegmentIter> segments_in_cells(const std::vector<SegmentIndex>& segs,
                                                        CellIndex lo, CellIndex hi) const {
    auto begin = std::lower_bound(segs.begin(), segs.end(), lo,
                                  [&](SegmentIndex s, CellIndex c) { return segments_[s].owner < c; });
    auto end = std::lower_bound(begin, segs.end(), hi,
                                [&](SegmentIndex s, CellIndex c) { return segments_[s].owner < c; });
    return {begin, end};
  }

  CellIndex least_used_cell(CellIndex lo, CellIndex hi) {
    std::size_t fewest = std::numeric_limits<std::size_t>::max();
    std::vector<CellIndex> candidates;
    for (CellIndex c = lo; c < hi; ++c) {
      if (dead_[c]) continue;
      const auto n = cell_segments_[c].size();
      if (n < fewest) {
        fewest = n;
        candidates.clear();
      }
      if (n == fewest) candidates.push_back(c);
    }
    return candidates[rng_.below(candidates.size())];
  }

  std::uint32_t potential_of(SegmentIndex s) const {
    std::uint32_t n = 0;
    for (const auto& syn : segments_[s].synapses) n += prev_active_mask_[syn.presynaptic];
    return n;
  }

  // +increment on synapses from previously active cells, -decrement on the
  // others (connected ones only, or all, per decrement_scope).
  void adapt_segment(SegmentIndex s) {
    const auto inc = p_.permanence_increment.ticks();
    const auto dec = p_.permanence_decrement.ticks();
    for (auto& syn : segments_[s].synapses) {
      if (prev_active_mask_[syn.presynaptic]) {
        syn.permanence = Permanence::from_ticks(syn.permanence.ticks() + inc);
      } else if (p_.decrement_scope == DecrementScope::positive ||
                 syn.permanence >= p_.connected_threshold) {
        syn.permanence = Permanence::from_ticks(syn.permanence.ticks() - dec);
      }
    }
    prune_zero_synapses(s);
  }

  void punish_segment(SegmentIndex s) {
    const auto dec = p_.predicted_decrement.ticks();
    for (auto& syn : segments_[s].synapses) {
      if (prev_active_mask_[syn.presynaptic]) {
        syn.permanence = Permanence::from_ticks(syn.permanence.ticks() - dec);
      }
    }
    prune_zero_synapses(s);
  }

  void prune_zero_synapses(SegmentIndex s) {
    auto& syn = segments_[s].synapses;
    for (const auto& x : syn) {
      if (x.permanence.ticks() == 0) unlink_presynaptic(x.presynaptic, s);
    }
    std::erase_if(syn, [](const Synapse& x) { return x.permanence.ticks() == 0; });
    if (syn.empty()) maybe_empty_.push_back(s);
  }

  void unlink_presynaptic(CellIndex presynaptic, SegmentIndex s) {
    auto& list = presynaptic_segments_[presynaptic];
    auto it = std::find(list.begin(), list.end(), s);
    if (it != list.end()) {
      *it = list.back();
      list.pop_back();
    }
  }

  // Grows up to `count` synapses at initial permanence to a seeded sample of
  // the previous winner cells not yet presynaptic to the segment.
  void grow_synapses(SegmentIndex s, std::uint32_t count) {
    auto& seg = segments_[s];
    std::vector<CellIndex> candidates;
    for (CellIndex c : state_.winner_cells) {
      if (c == seg.owner || dead_[c]) continue;
      auto it = std::lower_bound(seg.synapses.begin(), seg.synapses.end(), c,
                                 [](const Synapse& a, CellIndex x) { return a.presynaptic < x; });
      if (it == seg.synapses.end() || it->presynaptic != c) candidates.push_back(c);
    }
    std::size_t n = std::min<std::size_t>(count, candidates.size());
    if (n == 0) return;
    rng_.partial_shuffle(std::span<CellIndex>(candidates), n);
    candidates.resize(n);

    const std::size_t cap = p_.max_synapses_per_segment;
    if (seg.synapses.size() + n > cap) {
      // Make room by dropping the weakest synapses onto cells that were not
      // just active; the fresh sample never displaces a live context.
      std::vector<std::size_t> order;
      for (std::size_t k = 0; k < seg.synapses.size(); ++k) {
        if (!prev_active_mask_[seg.synapses[k].presynaptic]) order.push_back(k);
      }
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return seg.synapses[a].permanence < seg.synapses[b].permanence;
      });
      const std::size_t excess = seg.synapses.size() + n - cap;
      order.resize(std::min(order.size(), excess));
      std::sort(order.begin(), order.end());
      for (auto k = order.rbegin(); k != order.rend(); ++k) {
        unlink_presynaptic(seg.synapses[*k].presynaptic, s);
        seg.synapses.erase(seg.synapses.begin() + static_cast<std::ptrdiff_t>(*k));
      }
      n = std::min(n, cap - seg.synapses.size());
      candidates.resize(n);
    }
    for (CellIndex c : candidates) create_synapse(s, c, p_.initial_permanence);
  }

  void destroy_segment(SegmentIndex s) {
    auto& seg = segments_[s];
    if (!seg.alive) return;
    for (const auto& syn : seg.synapses) unlink_presynaptic(syn.presynaptic, s);
    auto& owned = cell_segments_[seg.owner];
    owned.erase(std::find(owned.begin(), owned.end(), s));
    seg = Segment{};
    free_.insert(s);
    // Keep stored state lists consistent for the rest of this step.
    std::erase(state_.active_segments, s);
    auto it = std::find(state_.matching_segments.begin(), state_.matching_segments.end(), s);
    if (it != state_.matching_segments.end()) {
      const auto k = it - state_.matching_segments.begin();
      state_.matching_segments.erase(it);
      state_.matching_potential.erase(state_.matching_potential.begin() + k);
    }
  }

  void destroy_empty_segments() {
    std::sort(maybe_empty_.begin(), maybe_empty_.end());
    maybe_empty_.erase(std::unique(maybe_empty_.begin(), maybe_empty_.end()), maybe_empty_.end());
    for (SegmentIndex s : maybe_empty_) {
      if (segments_[s].alive && segments_[s].synapses.empty()) destroy_segment(s);
    }
    maybe_empty_.clear();
  }

  void finish_step(std::span<const std::uint32_t> columns, Activation act, bool learn) {
    state_.timestep = timestep_;
    state_.active_columns.assign(columns.begin(), columns.end());
    state_.bursting_columns.clear();
    for (const auto& col : act.columns) {
      if (col.bursting) state_.bursting_columns.push_back(col.column);
    }
    state_.active_cells = std::move(act.active_cells);
    state_.winner_cells = std::move(act.winner_cells);
    refresh_dendrites();
    if (learn) {
      for (SegmentIndex s : state_.active_segments) segments_[s].last_active = timestep_;
    }
  }

  TmParams p_;
  Rng rng_;
  std::uint64_t timestep_ = 0;
  std::vector<Segment> segments_;
  std::set<SegmentIndex> free_;
  std::vector<std::vector<SegmentIndex>> cell_segments_;
  std::vector<std::vector<SegmentIndex>> presynaptic_segments_;
  std::vector<std::uint8_t> dead_;
  std::vector<std::uint8_t> prev_active_mask_;
  std::vector<SegmentIndex> maybe_empty_;
  std::vector<std::uint32_t> scratch_connected_;
  std::vector<std::uint32_t> scratch_potential_;
  TmState state_;
};

}  // namespace htmseq
