#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "htmseq/binary_io.hpp"
#include "htmseq/config.hpp"
#include "htmseq/discrete_experiment.hpp"
#include "htmseq/taxi.hpp"

namespace htmseq {

inline constexpr const char* kFormatVersion = "htmseq-run/1";

inline json step_json(const StepRecord& r) {
  json j = {{"i", r.index},
            {"symbol", r.symbol},
            {"end", r.is_sequence_end},
            {"noise", r.is_noise},
            {"temporal_noise", r.is_temporal_noise},
            {"bursting", r.bursting_columns},
            {"active_cells", r.active_cells}};
  if (r.correct) {
    json top = json::array();
    for (const auto& s : r.top_k) top.push_back({s.symbol, s.overlap});
    j["top_k"] = top;
    j["correct"] = *r.correct;
    j["accuracy_ma100"] = *r.accuracy_ma;
  }
  return j;
}

inline json step_json(const TaxiStepRecord& r) {
  json j = {{"i", r.index},
            {"time", format_iso8601(r.time)},
            {"observed", r.observed},
            {"forecast", r.forecast},
            {"distribution", r.distribution},
            {"bursting", r.bursting_columns},
            {"evaluated", r.evaluated}};
  j["predicted"] = r.predicted ? json(*r.predicted) : json(nullptr);
  j["probability"] = r.probability ? json(*r.probability) : json(nullptr);
  if (r.trailing_mape) j["trailing_mape"] = *r.trailing_mape;
  return j;
}

// Input series for a taxi config: the CSV (or the synthetic fixture), with the
// configured perturbation applied.
struct TaxiSeries {
  std::vector<TaxiRow> rows;
  std::size_t rows_skipped = 0;
  std::size_t gaps = 0;
};

inline TaxiSeries load_taxi_series(const RunConfig& cfg) {
  TaxiSeries s;
  if (cfg.taxi_source.csv) {
    auto rep = ingest_csv_file(*cfg.taxi_source.csv, cfg.taxi_source.timestamp_column, cfg.taxi_source.value_column);
    s.rows = std::move(rep.rows);
    s.rows_skipped = rep.rows_skipped;
    s.gaps = rep.gaps;
  } else {
    s.rows = synthetic_taxi(cfg.taxi_source.synthetic);
  }
  if (!cfg.taxi_source.perturbation.empty()) s.rows = perturb(std::move(s.rows), cfg.taxi_source.perturbation);
  return s;
}

/// One configured experiment, advanced in steps. Records go to an optional
/// JSONL sink, one flushed line per step.
class Run {
 public:
  static constexpr std::string_view kMagic = "HTMSEQRN";
  static constexpr std::uint32_t kSnapshotVersion = 1;

  explicit Run(RunConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.task == TaskKind::discrete) {
      discrete_.emplace(cfg_.discrete);
    } else {
      series_ = load_taxi_series(cfg_);
      if (cfg_.elements == 0 || cfg_.elements > series_.rows.size()) cfg_.elements = series_.rows.size();
      taxi_.emplace(cfg_.taxi);
    }
  }

  const RunConfig& config() const noexcept { return cfg_; }
  std::size_t budget() const noexcept { return cfg_.elements; }
  std::size_t position() const noexcept { return discrete_ ? discrete_->elements_seen() : taxi_->steps(); }
  bool done() const noexcept { return position() >= budget(); }

  // Changes the element budget of a resumed run; taxi budgets cap at the series.
  void set_budget(std::size_t elements) {
    if (elements < position()) throw ConfigError("elements", "before the current position");
    if (taxi_ && elements > series_.rows.size()) throw ConfigError("elements", "beyond the end of the series");
    cfg_.elements = elements;
  }

  const DiscreteExperiment* discrete() const noexcept { return discrete_ ? &*discrete_ : nullptr; }
  const TaxiExperiment* taxi() const noexcept { return taxi_ ? &*taxi_ : nullptr; }
  const std::vector<bool>& outcomes() const noexcept { return outcomes_; }

  json header() const {
    return {{"type", "header"}, {"format", kFormatVersion}, {"seed", cfg_.seed}, {"config", to_json(cfg_)}};
  }

  // Advances up to `n` steps, bounded by the budget.
  void advance(std::size_t n, std::ostream* sink = nullptr) {
    for (std::size_t i = 0; i < n && !done(); ++i) {
      json line;
      if (discrete_) {
        if (cfg_.kill && !kill_applied_ && discrete_->elements_seen() == cfg_.kill->at_element) {
          killed_ = discrete_->kill_cells(cfg_.kill->fraction, derive_seed(cfg_.seed, kSeedKill));
          if (cfg_.kill->freeze_learning) discrete_->set_learning(false);
          kill_applied_ = true;
          if (sink) write_line(*sink, json{{"type", "kill"}, {"at", discrete_->elements_seen()}, {"cells", killed_}});
        }
        const auto rec = discrete_->step();
        if (rec.correct) {
          outcomes_.push_back(*rec.correct);
          ending_elements_.push_back(rec.index);
        }
        if (sink) line = step_json(rec);
      } else {
        const auto rec = taxi_->step(series_.rows[taxi_->steps()]);
        if (sink) line = step_json(rec);
      }
      if (sink) write_line(*sink, line);
    }
  }

  void run_to_end(std::ostream* sink = nullptr) { advance(budget() - std::min(budget(), position()), sink); }

  json summary() const {
    json s = {{"format", kFormatVersion}, {"seed", cfg_.seed}, {"config", to_json(cfg_)}, {"elements", position()}};
    s["mape"] = nullptr;
    s["nll"] = nullptr;
    s["accuracy_ma100"] = nullptr;
    if (discrete_) {
      s["endings"] = outcomes_.size();
      if (!outcomes_.empty()) s["accuracy_ma100"] = discrete_->accuracy();
      const auto window = cfg_.discrete.accuracy_window;
      const auto stp = sequences_to_perfection(outcomes_, 0.98, window);
      s["sequences_to_perfection"] = stp ? json(*stp) : json(nullptr);
      s["elements_to_perfection"] = stp ? json(ending_elements_[*stp + window - 1] + 1) : json(nullptr);
      s["segments"] = discrete_->tm().num_segments();
      s["synapses"] = discrete_->tm().num_synapses();
      s["symbols"] = discrete_->symbols().size();
      s["swapped"] = discrete_->stream().swapped();
      if (kill_applied_) s["cells_killed"] = killed_;
    } else {
      const auto& ex = *taxi_;
      auto metrics = [](const MetricAccumulator& m) {
        json j = {{"count", m.count()}, {"mape", nullptr}, {"nll", nullptr}};
        if (m.count() > 0) {
          j["mape"] = finite_or_null([&] { return m.mape(); });
          j["nll"] = m.nll();
        }
        return j;
      };
      const auto all = metrics(ex.overall());
      s["mape"] = all["mape"];
      s["nll"] = all["nll"];
      s["evaluated"] = ex.overall().count();
      if (ex.trailing().window_count() > 0) {
        s["trailing_mape"] = finite_or_null([&] { return ex.trailing().window_mape(); });
        s["trailing_nll"] = ex.trailing().window_nll();
      }
      if (cfg_.taxi.perturbation_start) {
        s["pre_perturbation"] = metrics(ex.pre_perturbation());
        s["post_perturbation"] = metrics(ex.post_perturbation());
      }
      s["rows"] = series_.rows.size();
      s["rows_skipped"] = series_.rows_skipped;
      s["gaps"] = series_.gaps;
      s["probability_floor"] = kProbabilityFloor;
    }
    return s;
  }

  void save(std::ostream& out) const {
    io::Writer w;
    w.str(to_json(cfg_).dump());
    w.u64(outcomes_.size());
    for (std::size_t i = 0; i < outcomes_.size(); ++i) {
      w.u8(outcomes_[i] ? 1 : 0);
      w.u64(ending_elements_[i]);
    }
    w.u8(kill_applied_ ? 1 : 0);
    w.u64(killed_);
    if (discrete_) {
      discrete_->write_payload(w);
    } else {
      taxi_->write_payload(w);
    }
    io::write_framed(out, kMagic, kSnapshotVersion, w);
  }

  static Run load(std::istream& in) {
    const std::string payload = io::read_framed(in, kMagic, kSnapshotVersion);
    io::Reader r(payload);
    RunConfig cfg;
    try {
      cfg = parse_run_config_text(r.str());
    } catch (const ConfigError& e) {
      throw SnapshotError(std::string("snapshot config invalid: ") + e.what());
    }
    Run run(cfg);
    const auto n = r.length(9);
    for (std::size_t i = 0; i < n; ++i) {
      run.outcomes_.push_back(r.u8() != 0);
      run.ending_elements_.push_back(r.u64());
    }
    run.kill_applied_ = r.u8() != 0;
    run.killed_ = r.u64();
    if (run.discrete_) {
      run.discrete_.emplace(DiscreteExperiment::restore(run.cfg_.discrete, r));
    } else {
      run.taxi_.emplace(TaxiExperiment::restore(run.cfg_.taxi, r));
      if (run.taxi_->steps() > run.series_.rows.size()) throw SnapshotError("snapshot is past the end of the series");
    }
    if (!r.done()) throw SnapshotError("trailing bytes in snapshot");
    return run;
  }

  void save_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    save(out);
  }

  static Run load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    return load(in);
  }

 private:
  static void write_line(std::ostream& out, const json& j) { out << j.dump() << '\n' << std::flush; }

  template <class F>
  static json finite_or_null(F f) {
    try {
      const double v = f();
      return std::isfinite(v) ? json(v) : json(nullptr);
    } catch (const Error&) {
      return nullptr;
    }
  }

  RunConfig cfg_;
  std::optional<DiscreteExperiment> discrete_;
  std::optional<TaxiExperiment> taxi_;
  TaxiSeries series_;
  std::vector<bool> outcomes_;
  std::vector<std::size_t> ending_elements_;
  bool kill_applied_ = false;
  std::size_t killed_ = 0;
};

// Mean and sample standard deviation of each numeric key shared by all
// replica summaries.
inline json aggregate_summaries(const std::vector<json>& summaries) {
  json out = json::object();
  if (summaries.empty()) return out;
  for (const char* key : {"mape", "nll", "accuracy_ma100", "sequences_to_perfection", "elements_to_perfection"}) {
    std::vector<double> xs;
    for (const auto& s : summaries) {
      if (s.contains(key) && s[key].is_number()) xs.push_back(s[key].get<double>());
    }
    if (xs.size() != summaries.size()) {
      out[key] = nullptr;
      continue;
    }
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double sd = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
    out[key] = {{"mean", mean}, {"sd", sd}, {"n", xs.size()}};
  }
  return out;
}

}  // namespace htmseq
