// htmseq command-line harness: dataset generation, runs, baselines,
// snapshots and perturbation of taxi series.

#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "htmseq/config.hpp"
#include "htmseq/runner.hpp"
#include "htmseq/sequences.hpp"
#include "htmseq/taxi.hpp"

namespace fs = std::filesystem;
using htmseq::json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3 };

std::string default_output_dir() {
  if (const char* env = std::getenv("HTMSEQ_OUTPUT_DIR"); env && *env) return env;
  return "htmseq-out";
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw htmseq::ConfigError("<file>", "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw htmseq::ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
}

// Applies "a.b.c=value" overrides; the value is read as JSON, else as a string.
void apply_overrides(json& j, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw htmseq::ConfigError(s, "override must look like path=value");
    const std::string path = s.substr(0, eq), text = s.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::parse_error&) {
      value = text;
    }
    json* node = &j;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
      node = &(*node)[parts[i]];
      if (!node->is_object()) throw htmseq::ConfigError(path, "cannot descend into a non-object");
    }
    (*node)[parts.back()] = value;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw htmseq::Error("cannot write " + path.string());
  out << text;
}

json run_one(const htmseq::RunConfig& cfg, const fs::path& dir, const std::string& snapshot) {
  fs::create_directories(dir);
  htmseq::Run run(cfg);
  std::unique_ptr<std::ofstream> records;
  if (cfg.write_records) {
    records = std::make_unique<std::ofstream>(dir / "records.jsonl");
    *records << run.header().dump() << '\n' << std::flush;
  }
  run.run_to_end(records.get());
  const json summary = run.summary();
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  if (!snapshot.empty()) run.save_file(snapshot);
  return summary;
}

void print_brief(const json& s) {
  std::cout << "elements " << s["elements"];
  for (const char* k : {"accuracy_ma100", "mape", "nll", "sequences_to_perfection"}) {
    if (s.contains(k) && !s[k].is_null()) std::cout << "  " << k << " " << s[k];
  }
  std::cout << '\n';
}

struct CommonRunOptions {
  std::string config;
  std::string out = default_output_dir();
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> elements;
};

void add_common(CLI::App* cmd, CommonRunOptions& o) {
  cmd->add_option("-c,--config", o.config, "run config (JSON)")->required();
  cmd->add_option("-o,--out", o.out, "output directory (default $HTMSEQ_OUTPUT_DIR or ./htmseq-out)");
  cmd->add_option("--set", o.sets, "override a config field, e.g. --set discrete.stream.swap_point=10000");
  cmd->add_option("--seed", o.seed, "override the master seed");
  cmd->add_option("--elements", o.elements, "override the element budget");
}

htmseq::RunConfig resolve(const CommonRunOptions& o) {
  json j = read_json_file(o.config);
  apply_overrides(j, o.sets);
  if (o.seed) j["seed"] = *o.seed;
  if (o.elements) j["elements"] = *o.elements;
  return htmseq::parse_run_config(j);
}

int dispatch(int argc, char** argv) {
  CLI::App app{"htmseq: HTM sequence memory experiments"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "emit a high-order dataset (JSON) or a synthetic taxi series (CSV)");
  std::string gen_kind = "discrete", gen_out;
  std::vector<std::size_t> gen_orders{6, 7};
  std::size_t gen_endings = 1, gen_groups = 2, gen_weeks = 12;
  std::uint64_t gen_seed = 1;
  double gen_base = 14000.0, gen_noise = 0.08;
  gen->add_option("--kind", gen_kind, "discrete or taxi")->check(CLI::IsMember({"discrete", "taxi"}));
  gen->add_option("--order", gen_orders, "sequence orders (repeatable)");
  gen->add_option("--endings", gen_endings, "endings per context (1, 2 or 4)");
  gen->add_option("--groups", gen_groups, "shared-subsequence groups per order");
  gen->add_option("--weeks", gen_weeks, "weeks of synthetic taxi data");
  gen->add_option("--base", gen_base, "synthetic taxi base level");
  gen->add_option("--noise", gen_noise, "synthetic taxi multiplicative noise sd");
  gen->add_option("--seed", gen_seed, "seed");
  gen->add_option("-o,--out", gen_out, "output file (default stdout)");

  // run
  auto* run = app.add_subcommand("run", "run an experiment and write records.jsonl and summary.json");
  CommonRunOptions run_opts;
  std::size_t replicas = 1;
  std::string run_snapshot;
  add_common(run, run_opts);
  run->add_option("--replicas", replicas, "run k seeded replicas (seeds seed..seed+k-1) and aggregate")
      ->check(CLI::PositiveNumber);
  run->add_option("--snapshot", run_snapshot, "write a snapshot at the end of the run");

  // baseline
  auto* baseline = app.add_subcommand("baseline", "score previous-value and seasonal-naive predictors");
  CommonRunOptions base_opts;
  add_common(baseline, base_opts);

  // save
  auto* save = app.add_subcommand("save", "run a config up to --at elements and write a snapshot");
  CommonRunOptions save_opts;
  std::size_t save_at = 0;
  std::string save_path;
  add_common(save, save_opts);
  save->add_option("--at", save_at, "element count at which to snapshot")->required();
  save->add_option("--snapshot", save_path, "snapshot file")->required();

  // load
  auto* load = app.add_subcommand("load", "resume a snapshot and continue to the end of its budget");
  std::string load_path, load_out = default_output_dir();
  std::optional<std::size_t> load_elements;
  load->add_option("--snapshot", load_path, "snapshot file")->required();
  load->add_option("-o,--out", load_out, "output directory");
  load->add_option("--elements", load_elements, "extend or shorten the element budget");

  // perturb
  auto* pert = app.add_subcommand("perturb", "apply the weekday morning -20% / night +20% change to a CSV");
  std::string pert_in, pert_out, pert_start, pert_ts = "timestamp", pert_val = "passenger_count";
  pert->add_option("-i,--input", pert_in, "input CSV")->required();
  pert->add_option("-o,--output", pert_out, "output CSV")->required();
  pert->add_option("--start", pert_start, "first date the change applies (YYYY-MM-DD)")->required();
  pert->add_option("--timestamp-column", pert_ts, "timestamp column");
  pert->add_option("--value-column", pert_val, "count column");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  if (*gen) {
    std::ofstream file;
    std::ostream* out = &std::cout;
    if (!gen_out.empty()) {
      file.open(gen_out);
      if (!file) throw htmseq::Error("cannot write " + gen_out);
      out = &file;
    }
    if (gen_kind == "discrete") {
      const auto ds = htmseq::gen_dataset(htmseq::DatasetSpec{gen_orders, gen_groups, gen_endings, gen_seed});
      json j = {{"sequences", ds.sequences}, {"groups", ds.groups}, {"order_of", ds.order_of},
                {"endings_per_context", ds.endings_per_context}, {"seed", gen_seed}};
      *out << j.dump(2) << '\n';
    } else {
      htmseq::SyntheticTaxiSpec spec;
      spec.weeks = gen_weeks;
      spec.base = gen_base;
      spec.noise = gen_noise;
      spec.seed = gen_seed;
      htmseq::write_csv(*out, htmseq::synthetic_taxi(spec));
    }
    return kOk;
  }

  if (*run) {
    const auto cfg = resolve(run_opts);
    const fs::path dir(run_opts.out);
    if (replicas == 1) {
      print_brief(run_one(cfg, dir, run_snapshot));
      return kOk;
    }
    if (!run_snapshot.empty()) throw htmseq::ConfigError("--snapshot", "not supported with --replicas");
    std::vector<json> summaries(replicas);
    std::vector<std::exception_ptr> errors(replicas);
    {
      std::vector<std::jthread> workers;
      for (std::size_t i = 0; i < replicas; ++i) {
        workers.emplace_back([&, i] {
          try {
            json j = read_json_file(run_opts.config);
            apply_overrides(j, run_opts.sets);
            j["seed"] = cfg.seed + i;
            if (run_opts.elements) j["elements"] = *run_opts.elements;
            summaries[i] = run_one(htmseq::parse_run_config(j), dir / ("replica-" + std::to_string(i)), "");
          } catch (...) {
            errors[i] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    json agg = htmseq::aggregate_summaries(summaries);
    agg["replicas"] = summaries;
    agg["config"] = htmseq::to_json(cfg);
    agg["seed"] = cfg.seed;
    write_text(dir / "summary.json", agg.dump(2) + "\n");
    for (const char* k : {"accuracy_ma100", "mape", "nll", "sequences_to_perfection"}) {
      if (!agg[k].is_null()) std::cout << k << " " << agg[k]["mean"] << " +- " << agg[k]["sd"] << '\n';
    }
    return kOk;
  }

  if (*baseline) {
    const auto cfg = resolve(base_opts);
    if (cfg.task != htmseq::TaskKind::taxi) throw htmseq::ConfigError("task", "baselines need a taxi config");
    const auto series = htmseq::load_taxi_series(cfg);
    const auto y = htmseq::counts_of(series.rows);
    json j = {{"format", htmseq::kFormatVersion}, {"seed", cfg.seed}, {"config", htmseq::to_json(cfg)}};
    const auto naive = htmseq::lag_baseline(y, cfg.taxi.horizon, cfg.taxi.eval_start);
    j["naive"] = {{"mape", naive.mape}, {"count", naive.count}};
    try {
      const auto seasonal = htmseq::lag_baseline(y, htmseq::kBinsPerWeek, cfg.taxi.eval_start);
      j["seasonal"] = {{"mape", seasonal.mape}, {"count", seasonal.count}};
    } catch (const htmseq::DataError& e) {
      j["seasonal"] = {{"error", e.what()}};
      std::cerr << "seasonal baseline: " << e.what() << '\n';
    }
    fs::create_directories(base_opts.out);
    write_text(fs::path(base_opts.out) / "baseline.json", j.dump(2) + "\n");
    std::cout << "naive mape " << j["naive"]["mape"];
    if (j["seasonal"].contains("mape")) std::cout << "  seasonal mape " << j["seasonal"]["mape"];
    std::cout << '\n';
    return j["seasonal"].contains("mape") ? kOk : kDataError;
  }

  if (*save) {
    auto cfg = resolve(save_opts);
    htmseq::Run r(cfg);
    if (save_at > r.budget()) throw htmseq::ConfigError("--at", "beyond the element budget");
    r.advance(save_at);
    r.save_file(save_path);
    std::cout << "saved at element " << r.position() << " to " << save_path << '\n';
    return kOk;
  }

  if (*load) {
    htmseq::Run r = htmseq::Run::load_file(load_path);
    if (load_elements) r.set_budget(*load_elements);
    const fs::path dir(load_out);
    fs::create_directories(dir);
    std::ofstream records;
    if (r.config().write_records) {
      records.open(dir / "records.jsonl");
      json h = r.header();
      h["resumed_at"] = r.position();
      records << h.dump() << '\n' << std::flush;
    }
    r.run_to_end(r.config().write_records ? &records : nullptr);
    const json summary = r.summary();
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    print_brief(summary);
    return kOk;
  }

  if (*pert) {
    auto rep = htmseq::ingest_csv_file(pert_in, pert_ts, pert_val);
    const auto start = htmseq::detail::parse_time_field(pert_start, "--start");
    const auto rows = htmseq::perturb(std::move(rep.rows), htmseq::standard_perturbation(start));
    std::ofstream out(pert_out);
    if (!out) throw htmseq::Error("cannot write " + pert_out);
    htmseq::write_csv(out, rows);
    std::cout << rows.size() << " bins written, " << rep.rows_skipped << " rows skipped, " << rep.gaps
              << " gaps\n";
    return kOk;
  }
  return kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const htmseq::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const htmseq::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
