#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "htmseq/taxi.hpp"

using namespace htmseq;

namespace {

IngestReport ingest_text(const std::string& text) {
  std::istringstream in(text);
  return ingest_csv(in);
}

TaxiRow row(int y, unsigned mo, unsigned d, int h, int mi, std::int64_t count) {
  return {make_timestamp(y, mo, d, h, mi), count};
}

std::vector<TaxiRow> constant_series(std::size_t n, std::int64_t value) {
  std::vector<TaxiRow> rows;
  const auto start = make_timestamp(2015, 1, 5, 0, 0);
  for (std::size_t i = 0; i < n; ++i) rows.push_back({start + kBinWidth * static_cast<int>(i), value});
  return rows;
}

TaxiSetup quick_setup() {
  TaxiSetup s;
  s.eval_start = 48;
  s.trailing_window = 48;
  return s;
}

}  // namespace

TEST(Iso8601, ParsesAndRejects) {
  EXPECT_EQ(parse_iso8601("2015-01-05T08:15"), make_timestamp(2015, 1, 5, 8, 15));
  EXPECT_EQ(parse_iso8601("2015-01-05 08:15:59"), make_timestamp(2015, 1, 5, 8, 15));
  EXPECT_EQ(format_iso8601(make_timestamp(2016, 2, 29, 23, 30)), "2016-02-29T23:30");
  for (const char* bad : {"2015-13-01T00:00", "2015-02-30T00:00", "2015-01-05T24:00", "2015-01-05T08:60",
                          "2015-01-05T08:15Z", "2015/01/05T08:15", "20150105T0815", "", "2015-01-05T08:15:61"}) {
    EXPECT_FALSE(parse_iso8601(bad).has_value()) << bad;
  }
}

TEST(Ingest, SameBinRowsAreSummed) {
  const auto r = ingest_text("timestamp,passenger_count\n2015-01-05T08:01,3\n2015-01-05T08:29,4\n");
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0], row(2015, 1, 5, 8, 0, 7));
  EXPECT_EQ(r.rows_read, 2u);
  EXPECT_EQ(r.gaps, 0u);
}

TEST(Ingest, OutOfOrderRowsAreSortedAndGapsCounted) {
  const auto r = ingest_text(
      "vendor,passenger_count,timestamp\n"
      "a,2,2015-01-05T10:45\n"
      "b,1,2015-01-05T08:10\n"
      "c,5,\"2015-01-05 09:00\"\n");
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.rows[0], row(2015, 1, 5, 8, 0, 1));
  EXPECT_EQ(r.rows[1], row(2015, 1, 5, 9, 0, 5));
  EXPECT_EQ(r.rows[2], row(2015, 1, 5, 10, 30, 2));
  EXPECT_EQ(r.gaps, 3u);  // 08:30, 09:30 and 10:00
}

TEST(Ingest, MalformedRowsSkippedAndCounted) {
  const auto r = ingest_text(
      "timestamp,passenger_count\n"
      "2015-01-05T08:00,2\n"
      "not a time,3\n"
      "2015-01-05T08:30,-1\n"
      "2015-01-05T08:30,1.5\n"
      "2015-01-05T08:30\n"
      "\n"
      "2015-01-05T08:30,4\n");
  EXPECT_EQ(r.rows_read, 6u);
  EXPECT_EQ(r.rows_skipped, 4u);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.rows[1].count, 4);
}

TEST(Ingest, CustomColumnsAndErrors) {
  std::istringstream custom("when,riders\n2015-01-05T08:00,9\n");
  EXPECT_EQ(ingest_csv(custom, "when", "riders").rows.at(0).count, 9);
  EXPECT_THROW(ingest_text(""), DataError);
  EXPECT_THROW(ingest_text("time,passenger_count\n2015-01-05T08:00,1\n"), DataError);
  EXPECT_THROW(ingest_text("timestamp,passenger_count\nbad,1\n"), DataError);
  EXPECT_THROW(ingest_csv_file("/nonexistent/taxi.csv"), DataError);
}

TEST(Ingest, SyntheticRoundTripReproducesGenerator) {
  SyntheticTaxiSpec spec;
  spec.weeks = 3;
  const auto series = synthetic_taxi(spec);
  std::stringstream csv;
  write_csv(csv, series);
  const auto back = ingest_csv(csv);
  EXPECT_EQ(back.rows, series);
  EXPECT_EQ(back.gaps, 0u);
  EXPECT_EQ(back.rows_skipped, 0u);
}

TEST(Synthetic, ContiguousDeterministicAndNoisy) {
  SyntheticTaxiSpec spec;
  spec.weeks = 4;
  const auto a = synthetic_taxi(spec);
  EXPECT_EQ(a, synthetic_taxi(spec));
  ASSERT_EQ(a.size(), 4 * kBinsPerWeek);
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_EQ(a[i].time - a[i - 1].time, kBinWidth);
  // E|z| for a standard normal is sqrt(2/pi).
  double dev = 0.0;
  for (const auto& r : a) dev += std::abs(r.count / synthetic_profile(spec, r.time) - 1.0);
  EXPECT_NEAR(dev / static_cast<double>(a.size()), spec.noise * std::sqrt(2.0 / 3.14159265358979), 0.005);
  spec.seed = 2;
  EXPECT_NE(a, synthetic_taxi(spec));
}

TEST(Perturb, Examples) {
  const auto start = make_timestamp(2015, 1, 1, 0, 0);
  const std::vector<TaxiRow> rows{
      row(2015, 1, 5, 8, 0, 1000),   // Monday morning
      row(2015, 1, 10, 8, 0, 1000),  // Saturday morning
      row(2015, 1, 5, 21, 30, 1000),
      row(2015, 1, 5, 7, 0, 500),
      row(2015, 1, 5, 11, 0, 500),  // window end is exclusive
      row(2014, 12, 29, 8, 0, 1000),  // before the start date
  };
  const auto out = perturb(rows, standard_perturbation(start));
  EXPECT_EQ(out[0].count, 800);
  EXPECT_EQ(out[1].count, 1000);
  EXPECT_EQ(out[2].count, 1200);
  EXPECT_EQ(out[3].count, 400);
  EXPECT_EQ(out[4].count, 500);
  EXPECT_EQ(out[5].count, 1000);
  EXPECT_EQ(perturb(rows, {{true, 0, 1440, 1.0, start}}), rows);
}

TEST(Perturb, RoundsHalfToEven) {
  const auto start = make_timestamp(2015, 1, 1, 0, 0);
  std::vector<TaxiRow> rows{row(2015, 1, 5, 8, 0, 5), row(2015, 1, 5, 8, 30, 7), row(2015, 1, 5, 9, 0, 3)};
  const auto out = perturb(rows, {{false, 0, 1440, 0.5, start}});
  EXPECT_EQ(out[0].count, 2);
  EXPECT_EQ(out[1].count, 4);
  EXPECT_EQ(out[2].count, 2);
}

TEST(Perturb, RejectsBadSpecs) {
  const std::vector<TaxiRow> rows{row(2015, 1, 5, 8, 0, 5)};
  const Timestamp t{};
  EXPECT_THROW(perturb(rows, {{true, 60, 120, 1.1, t}, {true, 90, 180, 0.9, t}}), Error);
  EXPECT_THROW(perturb(rows, {{true, 120, 60, 1.1, t}}), Error);
  EXPECT_THROW(perturb(rows, {{true, 0, 1441, 1.1, t}}), Error);
  EXPECT_THROW(perturb(rows, {{true, 0, 60, -1.0, t}}), Error);
  EXPECT_NO_THROW(perturb(rows, {{true, 60, 120, 1.1, t}, {true, 120, 180, 0.9, t}}));
}

TEST(Baseline, ConstantAndWeeklyPeriodic) {
  const auto flat = counts_of(constant_series(800, 1234));
  EXPECT_EQ(lag_baseline(flat, 5, 0).mape, 0.0);
  EXPECT_EQ(lag_baseline(flat, kBinsPerWeek, 0).mape, 0.0);

  SyntheticTaxiSpec spec;
  spec.weeks = 3;
  spec.noise = 0.0;
  const auto periodic = counts_of(synthetic_taxi(spec));
  EXPECT_EQ(lag_baseline(periodic, kBinsPerWeek, 0).mape, 0.0);
  EXPECT_GT(lag_baseline(periodic, 5, 0).mape, 0.05);
  EXPECT_THROW(lag_baseline(std::vector<double>(100, 1.0), kBinsPerWeek, 0), DataError);
  EXPECT_THROW(lag_baseline(std::vector<double>(100, 1.0), 5, 100), DataError);
}

TEST(Baseline, MatchesDirectComputation) {
  SyntheticTaxiSpec spec;
  spec.weeks = 2;
  const auto y = counts_of(synthetic_taxi(spec));
  const auto score = lag_baseline(y, 5, 100);
  double err = 0.0, mag = 0.0;
  for (std::size_t t = 100; t < y.size(); ++t) {
    err += std::abs(y[t] - y[t - 5]);
    mag += y[t];
  }
  EXPECT_EQ(score.count, y.size() - 100);
  EXPECT_NEAR(score.mape, err / mag, 1e-12);
}

TEST(TaxiExperiment, ConstantSeriesErrorVanishes) {
  TaxiExperiment ex(quick_setup());
  const auto value = static_cast<std::int64_t>(ex.buckets().bucket_center(5));
  for (const auto& r : constant_series(kBinsPerWeek, value)) ex.step(r);
  EXPECT_NEAR(ex.trailing().window_mape(), 0.0, 1e-3);
  EXPECT_LT(ex.trailing().window_nll(), std::log(22.0));
}

TEST(TaxiExperiment, PredictionsArriveHorizonStepsLater) {
  SyntheticTaxiSpec spec;
  spec.weeks = 1;
  const auto series = synthetic_taxi(spec);
  TaxiExperiment ex(quick_setup());
  std::vector<TaxiStepRecord> recs;
  for (std::size_t i = 0; i < 200; ++i) recs.push_back(ex.step(series[i]));
  for (std::size_t i = 0; i < recs.size(); ++i) {
    ASSERT_EQ(recs[i].predicted.has_value(), i >= 5);
    EXPECT_EQ(recs[i].evaluated, i >= 48);
    EXPECT_EQ(recs[i].distribution.size(), 22u);
    if (i < 5) continue;
    EXPECT_EQ(*recs[i].predicted, recs[i - 5].forecast);
    const auto bucket = ex.buckets().bucketize(recs[i].observed);
    EXPECT_EQ(*recs[i].probability, recs[i - 5].distribution[bucket]);
  }
  EXPECT_EQ(ex.overall().count(), 200u - 48u);
  EXPECT_EQ(ex.trailing().window_count(), 48u);
}

TEST(TaxiExperiment, PrefixIsIndependentOfLaterInput) {
  SyntheticTaxiSpec spec;
  spec.weeks = 1;
  const auto series = synthetic_taxi(spec);
  TaxiExperiment a(quick_setup()), b(quick_setup());
  std::vector<TaxiStepRecord> ra;
  for (std::size_t i = 0; i < 150; ++i) ra.push_back(a.step(series[i]));
  for (std::size_t i = 0; i < 250; ++i) {
    const auto r = b.step(series[i]);
    if (i >= ra.size()) continue;
    EXPECT_EQ(r.forecast, ra[i].forecast);
    EXPECT_EQ(r.distribution, ra[i].distribution);
    EXPECT_EQ(r.bursting_columns, ra[i].bursting_columns);
  }
}

TEST(TaxiExperiment, SnapshotResumeMatchesUninterruptedRun) {
  SyntheticTaxiSpec spec;
  spec.weeks = 1;
  const auto series = synthetic_taxi(spec);
  const auto setup = quick_setup();
  TaxiExperiment straight(setup);
  for (std::size_t i = 0; i < 120; ++i) straight.step(series[i]);
  io::Writer w;
  straight.write_payload(w);
  io::Reader r(w.bytes());
  auto resumed = TaxiExperiment::restore(setup, r);
  EXPECT_TRUE(r.done());
  for (std::size_t i = 120; i < 240; ++i) {
    const auto x = straight.step(series[i]);
    const auto y = resumed.step(series[i]);
    EXPECT_EQ(x.forecast, y.forecast);
    EXPECT_EQ(x.distribution, y.distribution);
    EXPECT_EQ(x.trailing_mape, y.trailing_mape);
  }
  EXPECT_EQ(straight.overall().nll(), resumed.overall().nll());
  EXPECT_TRUE(straight.tm() == resumed.tm());

  auto other = setup;
  other.horizon = 4;
  io::Reader again(w.bytes());
  EXPECT_THROW(TaxiExperiment::restore(other, again), SnapshotError);
}

TEST(TaxiExperiment, PerturbationSplitAndTimeOrdering) {
  SyntheticTaxiSpec spec;
  spec.weeks = 1;
  const auto series = synthetic_taxi(spec);
  auto setup = quick_setup();
  setup.perturbation_start = series[100].time;
  TaxiExperiment ex(setup);
  for (std::size_t i = 0; i < 160; ++i) ex.step(series[i]);
  EXPECT_EQ(ex.pre_perturbation().count(), 100u - 48u);
  EXPECT_EQ(ex.post_perturbation().count(), 60u);
  EXPECT_THROW(ex.step(series[159]), DataError);
  EXPECT_THROW(ex.step(series[10]), DataError);

  auto bad = quick_setup();
  bad.horizon = 0;
  EXPECT_THROW(TaxiExperiment{bad}, Error);
}
