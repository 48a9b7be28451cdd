// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails. Pass criterion numbers as arguments
// to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "htmseq/config.hpp"
#include "htmseq/runner.hpp"
#include "oracles.hpp"

using namespace htmseq;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double mean_of(const std::vector<double>& xs) { return std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size(); }

double sd_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

RunConfig config_of(const json& j) { return parse_run_config(j); }

// Per-ending trace of one discrete run.
struct Trace {
  std::vector<bool> outcomes;
  std::vector<double> ma;             // moving accuracy after each ending
  std::vector<std::size_t> element;   // stream index of each ending
};

Trace run_discrete(const DiscreteSetup& setup, std::size_t elements, DiscreteExperiment* keep = nullptr) {
  DiscreteExperiment ex(setup);
  Trace t;
  for (std::size_t i = 0; i < elements; ++i) {
    const auto r = ex.step();
    if (!r.correct) continue;
    t.outcomes.push_back(*r.correct);
    t.ma.push_back(*r.accuracy_ma);
    t.element.push_back(r.index);
  }
  if (keep) *keep = std::move(ex);
  return t;
}

// First ending (at or after `from`) whose full-window moving accuracy is >= level.
std::optional<std::size_t> first_reaching(const Trace& t, double level, std::size_t window, std::size_t from = 0) {
  for (std::size_t i = std::max(from, window - 1); i < t.ma.size(); ++i) {
    if (t.ma[i] >= level) return i;
  }
  return std::nullopt;
}

constexpr std::size_t kWindow = 100;

// Fig. 4 stream with a swap at 10000, shared by criteria 1 and 2.
const std::vector<Trace>& swap_runs() {
  static const std::vector<Trace> runs = [] {
    std::vector<Trace> out;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto cfg = config_of({{"seed", seed}, {"discrete", {{"stream", {{"swap_point", 10000}}}}}});
      out.push_back(run_discrete(cfg.discrete, 15000));
    }
    return out;
  }();
  return runs;
}

Verdict criterion1() {
  Verdict v{true, ""};
  for (std::size_t s = 0; s < swap_runs().size(); ++s) {
    const auto& t = swap_runs()[s];
    const auto hit = first_reaching(t, 0.98, kWindow);
    const bool ok = hit && t.element[*hit] < 10000;
    v.pass &= ok;
    v.detail += fmt("seed %zu: %s; ", s + 1, ok ? fmt("0.98 at element %zu", t.element[*hit]).c_str() : "not reached");
  }
  return v;
}

Verdict criterion2() {
  Verdict v{true, ""};
  for (std::size_t s = 0; s < swap_runs().size(); ++s) {
    const auto& t = swap_runs()[s];
    const auto swap = static_cast<std::size_t>(
        std::lower_bound(t.element.begin(), t.element.end(), std::size_t{10000}) - t.element.begin());
    const auto low = std::min_element(t.ma.begin() + swap, t.ma.end()) - t.ma.begin();
    const auto initial = first_reaching(t, 0.95, kWindow);
    const auto recovered = first_reaching(t, 0.95, kWindow, low);
    const bool collapsed = t.ma[low] < 0.3;
    const bool in_time = recovered && t.element[*recovered] < 15000;
    const bool faster = in_time && initial && *recovered - swap < *initial + 1;
    v.pass &= collapsed && in_time && faster;
    v.detail += fmt("seed %zu: min %.3f, initial %s, recovery %s; ", s + 1, t.ma[low],
                    initial ? std::to_string(*initial + 1).c_str() : "never",
                    in_time ? std::to_string(*recovered - swap).c_str() : "not within 5000 elements");
  }
  v.detail += "(presentations counted in sequence endings to MA >= 0.95)";
  return v;
}

Verdict criterion3() {
  Verdict v{true, ""};
  for (std::size_t endings : {2u, 4u}) {
    const std::size_t budget = 12000;
    std::vector<double> final_ma, reach;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto cfg = config_of({{"seed", seed}, {"discrete", {{"dataset", {{"endings", endings}}}, {"top_k", endings}}}});
      const auto t = run_discrete(cfg.discrete, budget);
      const auto hit = first_reaching(t, 0.95, kWindow);
      v.pass &= hit.has_value();
      final_ma.push_back(t.ma.back());
      if (hit) reach.push_back(static_cast<double>(t.element[*hit]));
    }
    v.detail += fmt("endings %zu: final top-%zu accuracy %.3f +- %.3f, %zu/3 seeds reach 0.95", endings, endings,
                    mean_of(final_ma), sd_of(final_ma), reach.size());
    if (!reach.empty()) v.detail += fmt(" at element %.0f +- %.0f", mean_of(reach), sd_of(reach));
    v.detail += "; ";
  }
  return v;
}

Verdict criterion4() {
  Verdict v{true, ""};
  std::vector<double> xs, ys;
  for (std::size_t order : {10u, 20u, 40u}) {
    std::vector<double> stp;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto cfg = config_of({{"seed", seed}, {"discrete", {{"dataset", {{"orders", {order}}}}}}});
      const auto t = run_discrete(cfg.discrete, (order + 2) * 1500);
      const auto n = sequences_to_perfection(t.outcomes, 0.98, kWindow);
      v.pass &= n.has_value();
      if (n) stp.push_back(static_cast<double>(*n));
    }
    if (!stp.empty()) {
      xs.push_back(static_cast<double>(order));
      ys.push_back(mean_of(stp));
    }
    v.detail += fmt("order %zu: %zu/3 perfect, sequences %.0f +- %.0f; ", order, stp.size(),
                    stp.empty() ? 0.0 : mean_of(stp), sd_of(stp));
  }
  if (xs.size() < 3) return {false, v.detail + "no line fit"};
  const double mx = mean_of(xs), my = mean_of(ys);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  const double r2 = syy > 0 ? sxy * sxy / (sxx * syy) : 0.0;
  v.pass &= r2 >= 0.9;
  v.detail += fmt("slope %.2f sequences per order, R^2 %.4f", sxy / sxx, r2);
  return v;
}

Verdict criterion5() {
  Verdict v{true, ""};
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto cfg = config_of(
        {{"seed", seed}, {"discrete", {{"stream", {{"temporal_noise", "after_element"}, {"temporal_noise_after", 12000}}}}}});
    const auto t = run_discrete(cfg.discrete, 24000);
    // Steady state: every ending in the last 6000 elements.
    std::size_t hits = 0, n = 0;
    for (std::size_t i = 0; i < t.outcomes.size(); ++i) {
      if (t.element[i] < 18000) continue;
      ++n;
      hits += t.outcomes[i];
    }
    const auto pre = first_reaching(t, 0.98, kWindow);
    const double acc = static_cast<double>(hits) / static_cast<double>(n);
    v.pass &= std::abs(acc - 0.5) <= 0.1;
    v.detail += fmt("seed %llu: %s, post-noise accuracy %.3f over %zu endings; ", static_cast<unsigned long long>(seed),
                    pre && t.element[*pre] < 12000 ? "perfect before noise" : "not perfect before noise", acc, n);
  }
  return v;
}

Verdict criterion6() {
  Verdict v{true, ""};
  const double fractions[] = {0.1, 0.2, 0.3, 0.6};
  std::vector<std::vector<double>> drops(4);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto cfg = config_of({{"seed", seed}});
    DiscreteExperiment trained(cfg.discrete);
    run_discrete(cfg.discrete, 10000, &trained);
    const double base = run_fault_injection(trained, 0.0, 0).accuracy;
    v.detail += fmt("seed %llu: intact %.3f", static_cast<unsigned long long>(seed), base);
    for (std::size_t k = 0; k < 4; ++k) {
      const auto r = run_fault_injection(trained, fractions[k], derive_seed(seed, kSeedKill));
      const double drop = base - r.accuracy;
      drops[k].push_back(drop);
      v.pass &= fractions[k] < 0.5 ? drop <= 0.02 : drop > 0.1;
      v.detail += fmt(", %.0f%% -> %.3f", 100 * fractions[k], r.accuracy);
    }
    v.detail += "; ";
  }
  return v;
}

Verdict criterion7() {
  Verdict v{true, ""};
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto cfg = config_of({{"task", "taxi"}, {"seed", seed}, {"taxi", {{"synthetic", {{"weeks", 12}}}}}});
    const auto series = load_taxi_series(cfg);
    TaxiExperiment ex(cfg.taxi);
    for (const auto& row : series.rows) ex.step(row);
    const auto y = counts_of(series.rows);
    const double htm = ex.overall().mape(), nll = ex.overall().nll();
    const double naive = lag_baseline(y, cfg.taxi.horizon, cfg.taxi.eval_start).mape;
    const double seasonal = lag_baseline(y, kBinsPerWeek, cfg.taxi.eval_start).mape;
    const bool ok = htm < naive && htm <= 1.25 * seasonal && std::isfinite(nll) && nll < std::log(22.0);
    v.pass &= ok;
    v.detail += fmt("seed %llu: HTM MAPE %.4f, previous-value %.4f, seasonal %.4f, NLL %.3f (ln 22 = %.3f); ",
                    static_cast<unsigned long long>(seed), htm, naive, seasonal, nll, std::log(22.0));
  }
  return v;
}

Verdict criterion8() {
  Verdict v{true, ""};
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto cfg = config_of(
        {{"task", "taxi"},
         {"seed", seed},
         {"taxi",
          {{"synthetic", {{"weeks", 16}}},
           {"perturbation",
            {{"start", "2015-03-16"},
             {"windows",
              {{{"weekdays_only", true}, {"from", "07:00"}, {"to", "11:00"}, {"factor", 0.8}},
               {{"weekdays_only", true}, {"from", "21:00"}, {"to", "23:00"}, {"factor", 1.2}}}}}}}}});
    const auto series = load_taxi_series(cfg);
    TaxiExperiment ex(cfg.taxi);
    const auto start = *cfg.taxi.perturbation_start;
    double pre = 0.0, peak = 0.0;
    std::optional<std::size_t> back;
    std::size_t first_post = 0, peak_at = 0;
    for (std::size_t i = 0; i < series.rows.size(); ++i) {
      const auto r = ex.step(series.rows[i]);
      if (!r.trailing_mape) continue;
      if (series.rows[i].time < start) {
        pre = *r.trailing_mape;
        first_post = i + 1;
        continue;
      }
      if (i - first_post >= 3 * kBinsPerWeek) break;
      if (*r.trailing_mape > peak) {
        peak = *r.trailing_mape;
        peak_at = i;
        back.reset();
      }
      if (!back && peak > 1.1 * pre && *r.trailing_mape <= 1.1 * pre) back = i;
    }
    const bool spiked = peak > 1.1 * pre;
    v.pass &= spiked && back.has_value();
    v.detail += fmt("seed %llu: pre %.4f, peak %.4f after %.1f days, ", static_cast<unsigned long long>(seed), pre, peak,
                    (peak_at - first_post) / 48.0);
    v.detail += back ? fmt("back within 110%% after %.1f days; ", (*back - first_post) / 48.0)
                     : std::string("not back within 3 weeks; ");
  }
  return v;
}

Verdict criterion9() {
  Rng rng(9);
  std::size_t predictive_bad = 0, activation_bad = 0;
  const std::size_t networks = 2000;
  for (std::size_t trial = 0; trial < networks; ++trial) {
    auto tm = oracle::random_network(rng);
    const auto& p = tm.params();
    const auto prev = oracle::random_cells(rng, p.num_cells());
    predictive_bad += !oracle::dendrite_mismatch(tm, prev, tm.compute_predictive(prev)).empty();
    tm.set_active_cells(prev, prev);
    const auto before = oracle::dendrites(tm, prev);
    std::vector<std::uint32_t> cols;
    for (std::uint32_t c = 0; c < p.num_columns; ++c) {
      if (rng.below(2) == 0) cols.push_back(c);
    }
    activation_bad += !oracle::activation_mismatch(tm, before, cols, tm.activate_cells(cols)).empty();
  }
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) worst = std::max(worst, oracle::gradient_relative_error(rng));
  return {predictive_bad == 0 && activation_bad == 0 && worst <= 1e-5,
          fmt("%zu networks: %zu predictive-state and %zu activation mismatches; worst gradient relative error %.2e "
              "over 100 cases",
              networks, predictive_bad, activation_bad, worst)};
}

Verdict criterion10() {
  constexpr std::size_t width = 2048, active = 40, members = 20, theta = 15, trials = 100000;
  Rng rng(10);
  std::size_t false_positives = 0;
  double exact = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<Sdr> sdrs;
    for (std::size_t m = 0; m < members; ++m) sdrs.push_back(random_sdr(width, active, rng.next()));
    const Sdr u = sdr_union(sdrs);
    const Sdr probe = random_sdr(width, active, rng.next());
    false_positives += overlap(probe, u) >= theta;
    exact += oracle::hypergeom_tail(width, u.size(), active, theta);
  }
  const double rate = static_cast<double>(false_positives) / trials;
  return {rate < 1e-3, fmt("empirical %.4f, hypergeometric %.4f over %zu trials (2048 columns, 40 active)", rate,
                           exact / trials, trials)};
}

Verdict criterion11() {
  Verdict v{true, ""};
  for (const json& j : {json{{"seed", 11}, {"elements", 3000}, {"discrete", {{"stream", {{"swap_point", 1500}}}}}},
                        json{{"task", "taxi"}, {"seed", 11}, {"taxi", {{"synthetic", {{"weeks", 2}}}}}}}) {
    const auto cfg = config_of(j);
    std::ostringstream a, b, tail;
    Run(cfg).run_to_end(&a);
    Run(cfg).run_to_end(&b);
    const bool identical = a.str() == b.str();

    Run first(cfg);
    std::ostringstream head;
    first.advance(first.budget() / 2, &head);
    std::stringstream snap;
    first.save(snap);
    Run resumed = Run::load(snap);
    resumed.run_to_end(&tail);
    const bool same_summary = [&] {
      Run whole(cfg);
      whole.run_to_end();
      return whole.summary() == resumed.summary();
    }();
    const bool resumes = head.str() + tail.str() == a.str() && same_summary;
    v.pass &= identical && resumes;
    v.detail += fmt("%s: repeat %s, save/load %s; ", j.value("task", "discrete").c_str(),
                    identical ? "byte-identical" : "differs", resumes ? "identical trajectory" : "diverged");
  }
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Verdict()>> criteria = {criterion1, criterion2, criterion3,  criterion4,
                                                          criterion5, criterion6, criterion7,  criterion8,
                                                          criterion9, criterion10, criterion11};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    const auto v = criteria[k]();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !v.pass;
    std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << " | " << v.detail
              << fmt(" [%.0fs]", secs) << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
