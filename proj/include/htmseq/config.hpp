#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "htmseq/discrete_experiment.hpp"
#include "htmseq/error.hpp"
#include "htmseq/taxi.hpp"

namespace htmseq {

using json = nlohmann::json;

enum class TaskKind { discrete, taxi };

struct KillSchedule {
  std::size_t at_element = 0;
  double fraction = 0.0;
  bool freeze_learning = true;
};

struct TaxiSource {
  std::optional<std::string> csv;  // synthetic fixture when absent
  std::string timestamp_column = "timestamp";
  std::string value_column = "passenger_count";
  SyntheticTaxiSpec synthetic;
  std::vector<PerturbationWindow> perturbation;
};

/// Everything a run needs. Sub-seeds not given explicitly derive from `seed`.
struct RunConfig {
  TaskKind task = TaskKind::discrete;
  std::uint64_t seed = 1;
  std::size_t elements = 20000;  // taxi: 0 streams the whole series
  TmParams tm;
  DiscreteSetup discrete;
  std::optional<KillSchedule> kill;
  TaxiSetup taxi;
  TaxiSource taxi_source;
  bool write_records = true;

  std::optional<std::uint64_t> dataset_seed;  // explicit override only
};

// Sub-seed tags.
inline constexpr std::uint64_t kSeedTm = 1, kSeedEncoder = 2, kSeedDataset = 3, kSeedStream = 4,
                               kSeedPooler = 5, kSeedSynthetic = 6, kSeedKill = 7;

namespace detail {

// Walks one JSON object, recording which keys were read so that leftovers can
// be reported as unknown fields.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <class T>
  void get(const std::string& key, T& out) {
    const json* v = find(key);
    if (v) out = convert<T>(*v, at(key));
  }

  template <class T>
  void get_optional(const std::string& key, std::optional<T>& out) {
    const json* v = find(key);
    if (!v) return;
    if (v->is_null()) {
      out.reset();
    } else {
      out = convert<T>(*v, at(key));
    }
  }

  void permanence(const std::string& key, Permanence& out) {
    double v = out.value();
    get(key, v);
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(at(key), "must be in [0, 1]");
    out = Permanence::from_real(v);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.contains(it.key())) throw ConfigError(at(it.key()), "unknown field");
    }
  }

  template <class T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path, "expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      // Values built in code may hold a signed integer even when nonnegative.
      if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        throw ConfigError(path, "expected a nonnegative integer");
      }
      const auto u = v.get<std::uint64_t>();
      if (u > static_cast<std::uint64_t>(std::numeric_limits<T>::max())) throw ConfigError(path, "value too large");
      return static_cast<T>(u);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path, "expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path, "expected a string");
      return v.get<std::string>();
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline int parse_clock(const std::string& text, const std::string& path) {
  int h = 0, m = 0;
  if (text.size() != 5 || text[2] != ':' || !parse_int(std::string_view(text).substr(0, 2), h) ||
      !parse_int(std::string_view(text).substr(3, 2), m) || h < 0 || h > 24 || m < 0 || m > 59 ||
      (h == 24 && m != 0)) {
    throw ConfigError(path, "expected HH:MM");
  }
  return h * 60 + m;
}

inline std::string format_clock(int minutes) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02d:%02d", minutes / 60, minutes % 60);
  return buf;
}

inline Timestamp parse_time_field(const std::string& text, const std::string& path) {
  auto ts = parse_iso8601(text);
  if (!ts && text.size() == 10) ts = parse_iso8601(text + "T00:00");
  if (!ts) throw ConfigError(path, "expected an ISO-8601 date or datetime");
  return *ts;
}

template <class E>
E parse_enum(const std::string& text, const std::string& path,
             std::initializer_list<std::pair<const char*, E>> options) {
  std::string names;
  for (const auto& [name, value] : options) {
    if (text == name) return value;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError(path, "expected one of: " + names);
}

inline void parse_tm(const json& j, const std::string& path, TmParams& tm) {
  Fields f(j, path);
  f.get("num_columns", tm.num_columns);
  f.get("cells_per_column", tm.cells_per_column);
  f.get("activation_threshold", tm.activation_threshold);
  f.get("matching_threshold", tm.matching_threshold);
  f.permanence("initial_permanence", tm.initial_permanence);
  f.permanence("connected_threshold", tm.connected_threshold);
  f.permanence("permanence_increment", tm.permanence_increment);
  f.permanence("permanence_decrement", tm.permanence_decrement);
  f.permanence("predicted_decrement", tm.predicted_decrement);
  f.get("max_segments_per_cell", tm.max_segments_per_cell);
  f.get("max_synapses_per_segment", tm.max_synapses_per_segment);
  f.get("max_new_synapses", tm.max_new_synapses);
  std::string scope = tm.decrement_scope == DecrementScope::connected ? "connected" : "positive";
  f.get("decrement_scope", scope);
  tm.decrement_scope = parse_enum<DecrementScope>(
      scope, f.at("decrement_scope"), {{"connected", DecrementScope::connected}, {"positive", DecrementScope::positive}});
  std::optional<std::uint64_t> seed;
  f.get_optional("seed", seed);
  if (seed) tm.seed = *seed;
  f.finish();
  try {
    tm.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
}

inline void parse_discrete(const json& j, const std::string& path, RunConfig& cfg) {
  Fields f(j, path);
  auto& d = cfg.discrete;
  if (const json* ds = f.find("dataset")) {
    Fields g(*ds, f.at("dataset"));
    std::vector<std::size_t> orders;
    if (const json* o = g.find("orders")) {
      if (!o->is_array() || o->empty()) throw ConfigError(g.at("orders"), "expected a nonempty array");
      for (std::size_t i = 0; i < o->size(); ++i) {
        const auto v = Fields::convert<std::size_t>((*o)[i], g.at("orders") + "[" + std::to_string(i) + "]");
        if (v < 2) throw ConfigError(g.at("orders") + "[" + std::to_string(i) + "]", "order must be at least 2");
        orders.push_back(v);
      }
      d.dataset.orders = orders;
    }
    g.get("groups_per_order", d.dataset.groups_per_order);
    if (d.dataset.groups_per_order == 0) throw ConfigError(g.at("groups_per_order"), "must be positive");
    g.get("endings", d.dataset.endings);
    if (d.dataset.endings != 1 && d.dataset.endings != 2 && d.dataset.endings != 4) {
      throw ConfigError(g.at("endings"), "must be 1, 2 or 4");
    }
    g.get_optional("seed", cfg.dataset_seed);
    g.finish();
  }
  if (const json* st = f.find("stream")) {
    Fields g(*st, f.at("stream"));
    g.get("noise_pool_size", d.stream.noise_pool_size);
    if (d.stream.noise_pool_size == 0) throw ConfigError(g.at("noise_pool_size"), "must be positive");
    g.get_optional("swap_point", d.stream.swap_point);
    std::string tn = "off";
    g.get("temporal_noise", tn);
    d.stream.temporal_noise =
        parse_enum<TemporalNoise>(tn, g.at("temporal_noise"),
                                  {{"off", TemporalNoise::off},
                                   {"from_start", TemporalNoise::from_start},
                                   {"after_element", TemporalNoise::after_element}});
    g.get("temporal_noise_after", d.stream.temporal_noise_after);
    g.get("temporal_noise_probability", d.stream.temporal_noise_probability);
    if (!(d.stream.temporal_noise_probability >= 0.0 && d.stream.temporal_noise_probability <= 1.0)) {
      throw ConfigError(g.at("temporal_noise_probability"), "must be in [0, 1]");
    }
    g.finish();
  }
  if (const json* enc = f.find("encoder")) {
    Fields g(*enc, f.at("encoder"));
    g.get("num_active", d.encoder.num_active);
    std::optional<std::uint64_t> seed;
    g.get_optional("seed", seed);
    if (seed) d.encoder.seed = *seed;
    g.finish();
  }
  std::optional<std::size_t> top_k;
  f.get_optional("top_k", top_k);
  d.top_k = top_k ? *top_k : d.dataset.endings;
  if (d.top_k == 0) throw ConfigError(f.at("top_k"), "must be at least 1");
  f.get("accuracy_window", d.accuracy_window);
  if (d.accuracy_window == 0) throw ConfigError(f.at("accuracy_window"), "must be positive");
  if (const json* k = f.find("kill")) {
    if (!k->is_null()) {
      Fields g(*k, f.at("kill"));
      KillSchedule ks;
      g.get("at_element", ks.at_element);
      g.get("fraction", ks.fraction);
      if (!(ks.fraction >= 0.0 && ks.fraction <= 1.0)) throw ConfigError(g.at("fraction"), "must be in [0, 1]");
      g.get("freeze_learning", ks.freeze_learning);
      g.finish();
      cfg.kill = ks;
    }
  }
  f.finish();
}

inline void parse_taxi(const json& j, const std::string& path, RunConfig& cfg) {
  Fields f(j, path);
  auto& t = cfg.taxi;
  auto& src = cfg.taxi_source;
  f.get_optional("csv", src.csv);
  f.get("timestamp_column", src.timestamp_column);
  f.get("value_column", src.value_column);
  if (const json* s = f.find("synthetic")) {
    Fields g(*s, f.at("synthetic"));
    if (const json* st = g.find("start")) {
      src.synthetic.start = parse_time_field(Fields::convert<std::string>(*st, g.at("start")), g.at("start"));
    }
    g.get("weeks", src.synthetic.weeks);
    if (src.synthetic.weeks == 0) throw ConfigError(g.at("weeks"), "must be positive");
    g.get("base", src.synthetic.base);
    g.get("noise", src.synthetic.noise);
    if (!(src.synthetic.base > 0.0)) throw ConfigError(g.at("base"), "must be positive");
    if (!(src.synthetic.noise >= 0.0)) throw ConfigError(g.at("noise"), "must be nonnegative");
    std::optional<std::uint64_t> seed;
    g.get_optional("seed", seed);
    if (seed) src.synthetic.seed = *seed;
    g.finish();
  }
  if (const json* v = f.find("value_encoder")) {
    Fields g(*v, f.at("value_encoder"));
    g.get("min", t.value.min);
    g.get("max", t.value.max);
    g.get("width", t.value.width);
    g.get("active_bits", t.value.active_bits);
    g.get("clip", t.value.clip);
    if (!(t.value.max > t.value.min)) throw ConfigError(g.at("max"), "must exceed min");
    if (t.value.active_bits == 0 || t.value.active_bits >= t.value.width) {
      throw ConfigError(g.at("active_bits"), "must be in [1, width)");
    }
    g.finish();
  }
  if (const json* v = f.find("datetime_encoder")) {
    Fields g(*v, f.at("datetime_encoder"));
    g.get("time_of_day_width", t.datetime.time_of_day_width);
    g.get("time_of_day_active", t.datetime.time_of_day_active);
    g.get("day_of_week_width", t.datetime.day_of_week_width);
    g.get("day_of_week_active", t.datetime.day_of_week_active);
    if (t.datetime.time_of_day_active == 0 || t.datetime.time_of_day_active >= t.datetime.time_of_day_width) {
      throw ConfigError(g.at("time_of_day_active"), "must be in [1, time_of_day_width)");
    }
    if (t.datetime.day_of_week_active == 0 || t.datetime.day_of_week_active >= t.datetime.day_of_week_width) {
      throw ConfigError(g.at("day_of_week_active"), "must be in [1, day_of_week_width)");
    }
    g.finish();
  }
  if (const json* v = f.find("pooler")) {
    Fields g(*v, f.at("pooler"));
    g.get("num_active_columns", t.num_active_columns);
    g.get("potential_fraction", t.potential_fraction);
    if (!(t.potential_fraction > 0.0 && t.potential_fraction <= 1.0)) {
      throw ConfigError(g.at("potential_fraction"), "must be in (0, 1]");
    }
    std::optional<std::uint64_t> seed;
    g.get_optional("seed", seed);
    if (seed) t.pooler_seed = *seed;
    g.finish();
  }
  f.get("learning_rate", t.learning_rate);
  if (!(t.learning_rate > 0.0)) throw ConfigError(f.at("learning_rate"), "must be positive");
  f.get("num_buckets", t.num_buckets);
  if (t.num_buckets == 0) throw ConfigError(f.at("num_buckets"), "must be positive");
  f.get("horizon", t.horizon);
  if (t.horizon == 0) throw ConfigError(f.at("horizon"), "must be at least 1");
  std::string est = t.estimate == PointEstimate::argmax ? "argmax" : "expectation";
  f.get("point_estimate", est);
  t.estimate = parse_enum<PointEstimate>(est, f.at("point_estimate"),
                                         {{"argmax", PointEstimate::argmax}, {"expectation", PointEstimate::expectation}});
  f.get("eval_start", t.eval_start);
  f.get("trailing_window", t.trailing_window);
  if (t.trailing_window == 0) throw ConfigError(f.at("trailing_window"), "must be positive");
  if (const json* p = f.find("perturbation")) {
    if (!p->is_null()) {
      Fields g(*p, f.at("perturbation"));
      const json* st = g.find("start");
      if (!st) throw ConfigError(g.at("start"), "required");
      const Timestamp start = parse_time_field(Fields::convert<std::string>(*st, g.at("start")), g.at("start"));
      t.perturbation_start = start;
      const json* ws = g.find("windows");
      if (!ws) {
        src.perturbation = standard_perturbation(start);
      } else {
        if (!ws->is_array()) throw ConfigError(g.at("windows"), "expected an array");
        for (std::size_t i = 0; i < ws->size(); ++i) {
          const std::string wp = g.at("windows") + "[" + std::to_string(i) + "]";
          Fields w((*ws)[i], wp);
          PerturbationWindow pw;
          pw.start = start;
          w.get("weekdays_only", pw.weekdays_only);
          std::string from = "07:00", to = "11:00";
          w.get("from", from);
          w.get("to", to);
          pw.start_minute = parse_clock(from, w.at("from"));
          pw.end_minute = parse_clock(to, w.at("to"));
          if (pw.start_minute >= pw.end_minute) throw ConfigError(w.at("to"), "must be later than from");
          w.get("factor", pw.factor);
          if (!(pw.factor >= 0.0)) throw ConfigError(w.at("factor"), "must be nonnegative");
          w.finish();
          for (const auto& other : src.perturbation) {
            if (pw.start_minute < other.end_minute && other.start_minute < pw.end_minute) {
              throw ConfigError(wp, "overlaps an earlier window");
            }
          }
          src.perturbation.push_back(pw);
        }
      }
      g.finish();
    }
  }
  f.finish();
}

}  // namespace detail

/// Parses and validates a run config. Errors name the offending field path.
inline RunConfig parse_run_config(const json& j) {
  RunConfig cfg;
  detail::Fields f(j, "");
  std::string task = "discrete";
  f.get("task", task);
  cfg.task = detail::parse_enum<TaskKind>(task, "task", {{"discrete", TaskKind::discrete}, {"taxi", TaskKind::taxi}});
  f.get("seed", cfg.seed);
  cfg.elements = cfg.task == TaskKind::taxi ? 0 : cfg.elements;
  f.get("elements", cfg.elements);
  if (cfg.task == TaskKind::discrete && cfg.elements == 0) throw ConfigError("elements", "must be positive");
  f.get("write_records", cfg.write_records);

  // Derived seeds first; explicit sub-seeds below override them.
  cfg.tm.seed = derive_seed(cfg.seed, kSeedTm);
  cfg.discrete.encoder.seed = derive_seed(cfg.seed, kSeedEncoder);
  cfg.discrete.stream.seed = derive_seed(cfg.seed, kSeedStream);
  cfg.taxi.pooler_seed = derive_seed(cfg.seed, kSeedPooler);
  cfg.taxi_source.synthetic.seed = derive_seed(cfg.seed, kSeedSynthetic);

  if (const json* tm = f.find("tm")) detail::parse_tm(*tm, "tm", cfg.tm);
  const json* discrete = f.find("discrete");
  const json* taxi = f.find("taxi");
  if (discrete && cfg.task != TaskKind::discrete) throw ConfigError("discrete", "only valid for task \"discrete\"");
  if (taxi && cfg.task != TaskKind::taxi) throw ConfigError("taxi", "only valid for task \"taxi\"");
  if (discrete) detail::parse_discrete(*discrete, "discrete", cfg);
  if (cfg.task == TaskKind::discrete && !discrete) cfg.discrete.top_k = cfg.discrete.dataset.endings;
  if (taxi) detail::parse_taxi(*taxi, "taxi", cfg);
  f.finish();

  cfg.discrete.dataset.seed = cfg.dataset_seed ? *cfg.dataset_seed : derive_seed(cfg.seed, kSeedDataset);
  cfg.discrete.tm = cfg.tm;
  cfg.discrete.encoder.width = cfg.tm.num_columns;
  cfg.taxi.tm = cfg.tm;
  if (cfg.kill && cfg.kill->at_element > cfg.elements) throw ConfigError("discrete.kill.at_element", "beyond the element budget");
  return cfg;
}

inline RunConfig parse_run_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  return parse_run_config(j);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config_text(ss.str());
}

// Fully resolved form; parse_run_config(to_json(c)) reproduces c.
inline json to_json(const RunConfig& c) {
  json j;
  j["task"] = c.task == TaskKind::discrete ? "discrete" : "taxi";
  j["seed"] = c.seed;
  j["elements"] = c.elements;
  j["write_records"] = c.write_records;
  const auto& tm = c.tm;
  j["tm"] = {{"num_columns", tm.num_columns},
             {"cells_per_column", tm.cells_per_column},
             {"activation_threshold", tm.activation_threshold},
             {"matching_threshold", tm.matching_threshold},
             {"initial_permanence", tm.initial_permanence.value()},
             {"connected_threshold", tm.connected_threshold.value()},
             {"permanence_increment", tm.permanence_increment.value()},
             {"permanence_decrement", tm.permanence_decrement.value()},
             {"predicted_decrement", tm.predicted_decrement.value()},
             {"max_segments_per_cell", tm.max_segments_per_cell},
             {"max_synapses_per_segment", tm.max_synapses_per_segment},
             {"max_new_synapses", tm.max_new_synapses},
             {"decrement_scope", tm.decrement_scope == DecrementScope::connected ? "connected" : "positive"},
             {"seed", tm.seed}};
  if (c.task == TaskKind::discrete) {
    const auto& d = c.discrete;
    json stream = {{"noise_pool_size", d.stream.noise_pool_size},
                   {"swap_point", d.stream.swap_point ? json(*d.stream.swap_point) : json(nullptr)},
                   {"temporal_noise", d.stream.temporal_noise == TemporalNoise::off          ? "off"
                                      : d.stream.temporal_noise == TemporalNoise::from_start ? "from_start"
                                                                                             : "after_element"},
                   {"temporal_noise_after", d.stream.temporal_noise_after},
                   {"temporal_noise_probability", d.stream.temporal_noise_probability}};
    j["discrete"] = {{"dataset",
                      {{"orders", d.dataset.orders},
                       {"groups_per_order", d.dataset.groups_per_order},
                       {"endings", d.dataset.endings},
                       {"seed", d.dataset.seed}}},
                     {"stream", stream},
                     {"encoder", {{"num_active", d.encoder.num_active}, {"seed", d.encoder.seed}}},
                     {"top_k", d.top_k},
                     {"accuracy_window", d.accuracy_window},
                     {"kill", c.kill ? json{{"at_element", c.kill->at_element},
                                            {"fraction", c.kill->fraction},
                                            {"freeze_learning", c.kill->freeze_learning}}
                                     : json(nullptr)}};
  } else {
    const auto& t = c.taxi;
    const auto& s = c.taxi_source;
    json taxi = {{"csv", s.csv ? json(*s.csv) : json(nullptr)},
                 {"timestamp_column", s.timestamp_column},
                 {"value_column", s.value_column},
                 {"synthetic",
                  {{"start", format_iso8601(s.synthetic.start)},
                   {"weeks", s.synthetic.weeks},
                   {"base", s.synthetic.base},
                   {"noise", s.synthetic.noise},
                   {"seed", s.synthetic.seed}}},
                 {"value_encoder",
                  {{"min", t.value.min},
                   {"max", t.value.max},
                   {"width", t.value.width},
                   {"active_bits", t.value.active_bits},
                   {"clip", t.value.clip}}},
                 {"datetime_encoder",
                  {{"time_of_day_width", t.datetime.time_of_day_width},
                   {"time_of_day_active", t.datetime.time_of_day_active},
                   {"day_of_week_width", t.datetime.day_of_week_width},
                   {"day_of_week_active", t.datetime.day_of_week_active}}},
                 {"pooler",
                  {{"num_active_columns", t.num_active_columns},
                   {"potential_fraction", t.potential_fraction},
                   {"seed", t.pooler_seed}}},
                 {"learning_rate", t.learning_rate},
                 {"num_buckets", t.num_buckets},
                 {"horizon", t.horizon},
                 {"point_estimate", t.estimate == PointEstimate::argmax ? "argmax" : "expectation"},
                 {"eval_start", t.eval_start},
                 {"trailing_window", t.trailing_window}};
    if (t.perturbation_start) {
      json windows = json::array();
      for (const auto& w : s.perturbation) {
        windows.push_back({{"weekdays_only", w.weekdays_only},
                           {"from", detail::format_clock(w.start_minute)},
                           {"to", detail::format_clock(w.end_minute)},
                           {"factor", w.factor}});
      }
      taxi["perturbation"] = {{"start", format_iso8601(*t.perturbation_start)}, {"windows", windows}};
    } else {
      taxi["perturbation"] = nullptr;
    }
    j["taxi"] = taxi;
  }
  return j;
}

}  // namespace htmseq
