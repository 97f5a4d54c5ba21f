#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "ngd/archive.hpp"

using namespace ngd;

namespace {

// Synthetic archive: replication r has loss_gap(t) = (r + 1) * t^-slope for t >= 1.
RunArchive power_law_archive(double slope, int reps, int T) {
  RunArchive a;
  a.header = {{"experiment", "synthetic"}, {"master_seed", "3"}};
  for (int r = 0; r < reps; ++r)
    for (int t = 0; t <= T; ++t) {
      ArchiveRow row;
      row.experiment = "synthetic";
      row.replication = r;
      row.t = t;
      row.loss_gap = (r + 1) * std::pow(std::max(t, 1), -slope);
      row.loss = row.loss_gap + 1e-3;
      row.step_size = t < T ? 0.1 : std::numeric_limits<double>::quiet_NaN();
      row.seed = 1000u + static_cast<std::uint64_t>(t);
      a.rows.push_back(row);
    }
  a.summary = summarize(a);
  return a;
}

}  // namespace

TEST(FormatDouble, RoundTripsExactly) {
  for (double v : {0.0, -0.0, 1.0 / 3.0, 1e-300, 6.02214076e23, std::nextafter(1.0, 2.0)}) {
    EXPECT_EQ(parse_double(format_double(v)), v);
  }
  EXPECT_EQ(format_double(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(format_double(-std::numeric_limits<double>::infinity()), "-inf");
  EXPECT_EQ(format_double(std::nan("")), "nan");
  EXPECT_TRUE(std::isnan(parse_double("nan")));
  EXPECT_THROW(parse_double("1.5x"), InvalidArgument);
}

TEST(FitRate, RecoversPowerLawSlope) {
  const RunArchive a = power_law_archive(1.0, 3, 1000);
  const RateFit fit = fit_rate(a, 100, 1000);
  EXPECT_NEAR(fit.slope, -1.0, 1e-12);
  EXPECT_NEAR(fit.first_half_slope, -1.0, 1e-12);
  EXPECT_NEAR(fit.second_half_slope, -1.0, 1e-12);
  EXPECT_FALSE(fit.super_algebraic);
  EXPECT_EQ(fit.points, 901);
}

TEST(FitRate, FlagsGeometricDecayAsSuperAlgebraic) {
  std::vector<double> gap(201);
  for (int t = 0; t <= 200; ++t) gap[static_cast<std::size_t>(t)] = std::pow(0.9, t);
  const RateFit fit = fit_rate(gap, 10, 200);
  EXPECT_TRUE(fit.super_algebraic);
  EXPECT_LT(fit.second_half_slope, fit.first_half_slope);
}

TEST(FitRate, InvalidWindows) {
  const RunArchive a = power_law_archive(1.0, 1, 50);
  EXPECT_THROW(fit_rate(a, 0, 10), InvalidArgument);
  EXPECT_THROW(fit_rate(a, 10, 10), InvalidArgument);
  EXPECT_THROW(fit_rate(a, 10, 51), InvalidArgument);
  std::vector<double> gap = {1.0, 1.0, 0.0, 1.0};
  EXPECT_THROW(fit_rate(gap, 1, 3), InvalidArgument);
}

TEST(MeanLossGap, AveragesAcrossReplications) {
  const RunArchive a = power_law_archive(0.5, 4, 10);
  const std::vector<double> m = mean_loss_gap(a);
  ASSERT_EQ(m.size(), 11u);
  EXPECT_NEAR(m[4], 2.5 * 0.5, 1e-15);
}

TEST(Summarize, TerminalStatistics) {
  RunArchive a = power_law_archive(1.0, 3, 100);
  const ArchiveSummary& s = a.summary;
  EXPECT_EQ(s.replications, 3);
  EXPECT_EQ(s.diverged, 0);
  EXPECT_NEAR(s.final_loss_gap_mean, 2.0 / 100.0, 1e-15);
  EXPECT_NEAR(s.final_loss_gap_median, 2.0 / 100.0, 1e-15);
  EXPECT_NEAR(s.final_loss_gap_min, 1.0 / 100.0, 1e-15);
  EXPECT_NEAR(s.final_loss_gap_max, 3.0 / 100.0, 1e-15);
  EXPECT_EQ(s.slope_window_begin, 10);
  EXPECT_EQ(s.slope_window_end, 100);
  EXPECT_NEAR(s.slope, -1.0, 1e-12);

  a.rows.back().loss = std::numeric_limits<double>::infinity();
  a.rows.back().loss_gap = std::numeric_limits<double>::infinity();
  const ArchiveSummary d = summarize(a);
  EXPECT_EQ(d.diverged, 1);
  EXPECT_TRUE(std::isnan(d.slope));
}

TEST(ArchiveIo, WriteReadRoundTrip) {
  RunArchive a = power_law_archive(0.7, 2, 20);
  a.events.push_back("replication 1: something happened");
  std::stringstream ss;
  write_archive(ss, a);
  const std::string text = ss.str();
  EXPECT_NE(text.find(kArchiveColumns), std::string::npos);
  EXPECT_NE(text.find("# summary.slope: "), std::string::npos);

  const RunArchive b = read_archive(ss);
  EXPECT_EQ(b.header, a.header);
  EXPECT_EQ(b.events, a.events);
  ASSERT_EQ(b.rows.size(), a.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(format_row(b.rows[i]), format_row(a.rows[i]));
  const auto fa = summary_fields(a.summary), fb = summary_fields(b.summary), fc = summary_fields(summarize(b));
  EXPECT_EQ(fa, fb);
  EXPECT_EQ(fb, fc);
  EXPECT_EQ(b.replications(), 2);
  EXPECT_EQ(b.steps(), 20);
  EXPECT_EQ(b.replication_rows(1).size(), 21u);
  EXPECT_EQ(b.header_value("master_seed"), "3");
  EXPECT_EQ(b.header_value("missing"), "");
}

TEST(ArchiveIo, RejectsMalformedInput) {
  std::stringstream no_columns("# experiment: x\n");
  EXPECT_THROW(read_archive(no_columns), InvalidArgument);
  std::stringstream wrong_columns("a,b,c\n");
  EXPECT_THROW(read_archive(wrong_columns), InvalidArgument);
  std::stringstream short_row(std::string(kArchiveColumns) + "\nx,0,0,1\n");
  EXPECT_THROW(read_archive(short_row), InvalidArgument);
  EXPECT_THROW(load_archive("/nonexistent/dir/archive.csv"), InvalidArgument);
}
