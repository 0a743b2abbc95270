#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "taca/analysis.hpp"
#include "taca/csv.hpp"

using namespace taca;

namespace {

BlockLogits<double> iid_logits(Index n_txt, Index n_vis, Rng& rng) {
  return {randn(n_txt, n_txt, rng), randn(n_txt, n_vis, rng), randn(n_vis, n_txt, rng),
          randn(n_vis, n_vis, rng)};
}

double mc_mass(Index n_txt, Index n_vis, double gamma, int trials, std::uint64_t seed,
               double vt_shift = 0.0, bool abs_vt = false) {
  Rng rng(seed);
  double total = 0.0;
  for (int i = 0; i < trials; ++i) {
    auto lg = iid_logits(n_txt, n_vis, rng);
    if (abs_vt) lg.vt = lg.vt.cwiseAbs();
    lg.vt.array() += vt_shift;
    total += vis_txt_mass_from_logits(lg, gamma, 1.0).mean();
  }
  return total / trials;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("taca_test_" + name);
}

}  // namespace

TEST(VisTxtMass, BalancedLayoutGivesOneHalf) {
  EXPECT_NEAR(mc_mass(16, 16, 1.0, 1000, 42), 0.5, 0.02);
}

TEST(VisTxtMass, EightToOneImbalanceGivesOneNinth) {
  EXPECT_NEAR(mc_mass(8, 64, 1.0, 1000, 42), 1.0 / 9.0, 0.01);
}

TEST(VisTxtMass, TemperatureRaisesMassOnSameDraws) {
  const double base = mc_mass(8, 64, 1.0, 1000, 42);
  const double scaled = mc_mass(8, 64, 1.2, 1000, 42);
  RecordProperty("mass_gamma_1", std::to_string(base));
  RecordProperty("mass_gamma_1_2", std::to_string(scaled));
  EXPECT_GT(scaled, base);
}

TEST(VisTxtMass, QkRouteMatchesLogitRoute) {
  Rng rng(3);
  const TokenLayout lay{3, 10, 2, 4};
  const MatrixD q = randn(13, 8, rng), k = randn(13, 8, rng);
  const MatrixD mass = vis_txt_mass(q, k, 1.2, 1.0, lay);
  for (Index h = 0; h < 2; ++h) {
    const MatrixD p = attention_probs(q, k, lay, h, 1.2, 1.0);
    const VectorD direct = p.bottomLeftCorner(10, 3).rowwise().sum();
    EXPECT_LE((mass.row(h).transpose() - direct).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SuppressionRatio, TypicalCrossAttentionMassIsOne) {
  Rng rng(4);
  const TokenLayout lay{4, 32, 2, 8};
  const MatrixD q = randn(36, 16, rng), k = randn(36, 16, rng);
  const auto r = suppression_ratio(q, k, lay);
  EXPECT_LE((r.typical_mass.array() - 1.0).abs().maxCoeff(), 1e-12);
  EXPECT_GT(r.mean_ratio, 0.0);
  EXPECT_LT(r.mean_ratio, 1.0);
  EXPECT_NEAR(r.mean_ratio, r.unified_mass.mean(), 1e-12);
}

TEST(SuppressionRatio, IidImbalanceGivesOneNinth) {
  Rng rng(42);
  const TokenLayout lay{8, 64, 1, 1};
  double total = 0.0;
  for (int i = 0; i < 1000; ++i) {
    total += suppression_from_logits<double>({iid_logits(8, 64, rng)}, lay).mean_ratio;
  }
  EXPECT_NEAR(total / 1000, 1.0 / 9.0, 0.01);
}

TEST(SuppressionRatio, LargeTextAdvantageApproachesOne) {
  // 4 visual queries, 2 text + 16 visual keys, vt logits 10 above vv logits.
  Rng rng(5);
  const TokenLayout lay{2, 16, 1, 1};
  BlockLogits<double> lg = iid_logits(2, 16, rng);
  lg.vv = 0.1 * randn(16, 16, rng);
  lg.vt = lg.vv.leftCols(2).array() + 10.0;
  const auto r = suppression_from_logits<double>({lg}, lay);
  // Brute force: softmax over the concatenated row.
  double expected = 0.0;
  for (Index i = 0; i < 16; ++i) {
    double num = 0.0, den = 0.0;
    for (Index j = 0; j < 2; ++j) num += std::exp(lg.vt(i, j));
    den = num;
    for (Index j = 0; j < 16; ++j) den += std::exp(lg.vv(i, j));
    expected += num / den / 16.0;
  }
  EXPECT_NEAR(r.mean_ratio, expected, 1e-12);
  EXPECT_GT(r.mean_ratio, 0.99);
}

TEST(SuppressionRatio, GammaSweepIncreasesForNonNegativeVtLogits) {
  double prev = 0.0;
  for (double gamma : {1.0, 1.1, 1.2, 1.3}) {
    const double mass = mc_mass(8, 64, gamma, 1000, 7, 0.0, true);
    EXPECT_GT(mass, prev);
    prev = mass;
  }
}

TEST(SuppressionRatio, MoreVisualTokensMeansMoreSuppression) {
  double prev = 1.0;
  for (Index n_vis : {64, 128, 256}) {
    const double mass = mc_mass(32, n_vis, 1.0, 200, 11);
    EXPECT_LT(mass, prev);
    prev = mass;
  }
}

TEST(AttentionMapDiffTest, GammaOneIsZero) {
  Rng rng(8);
  const TokenLayout lay{3, 12, 2, 4};
  const MatrixD q = randn(15, 8, rng), k = randn(15, 8, rng), v = randn(15, 8, rng);
  const auto d = attention_map_diff(q, k, v, 1.0, 1.0, lay, 4);
  for (const auto& m : d.vt_diff) EXPECT_EQ(m.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(d.output_max_delta, 0.0);
}

TEST(AttentionMapDiffTest, MassMovesFromVisualToTextKeys) {
  Rng rng(9);
  const TokenLayout lay{3, 12, 2, 4};
  const MatrixD q = randn(15, 8, rng), k = randn(15, 8, rng), v = randn(15, 8, rng);
  const auto d = attention_map_diff(q, k, v, 1.2, 1.0, lay, 4);
  EXPECT_LE(d.max_row_sum_error, 1e-6);
  for (Index h = 0; h < 2; ++h) {
    const MatrixD full = d.taca[h] - d.baseline[h];
    EXPECT_GT(d.vt_diff[h].sum(), 0.0);
    EXPECT_EQ(full.topRows(3).cwiseAbs().maxCoeff(), 0.0);
    for (Index i = 0; i < 12; ++i) {
      const double vt = full.row(3 + i).head(3).sum();
      const double vv = full.row(3 + i).tail(12).sum();
      EXPECT_NEAR(vt, -vv, 1e-12);
    }
  }
}

TEST(AttentionMapDiffTest, StatisticsMatchRecomputation) {
  Rng rng(42);
  const TokenLayout lay{4, 16, 2, 4};
  const MatrixD q = randn(20, 8, rng), k = randn(20, 8, rng), v = randn(20, 8, rng);
  const auto d = attention_map_diff(q, k, v, 1.2, 1.0, lay, 4);
  for (Index h = 0; h < 2; ++h) {
    // Recompute both softmaxes from the raw logits.
    MatrixD s = q.middleCols(h * 4, 4) * k.middleCols(h * 4, 4).transpose() / 2.0;
    MatrixD st = s;
    st.bottomLeftCorner(16, 4) *= 1.2;
    const MatrixD diff = (softmax_rows(st) - softmax_rows(s)).bottomLeftCorner(16, 4);
    EXPECT_NEAR(d.mean_diff(h), diff.mean(), 1e-12);
    EXPECT_NEAR(d.max_diff(h), diff.maxCoeff(), 1e-12);
    for (Index b = 0; b < 4; ++b) {
      EXPECT_NEAR(d.bucket_mean(h, b), diff.middleRows(b * 4, 4).mean(), 1e-12);
      EXPECT_NEAR(d.bucket_max(h, b), diff.middleRows(b * 4, 4).maxCoeff(), 1e-12);
    }
  }
}

TEST(ExportStats, EmptyReportWritesHeaderOnly) {
  const auto path = temp_path("empty.csv");
  export_stats(std::vector<SuppressionRow>{}, path);
  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 1);
  EXPECT_TRUE(read_suppression_csv(path).empty());
}

TEST(ExportStats, TwoRowsGiveThreeLinesAndRoundTrip) {
  Rng rng(10);
  const TokenLayout lay{2, 16, 1, 4};
  const MatrixD q = randn(18, 4, rng), k = randn(18, 4, rng);
  const auto rows = suppression_rows(suppression_ratio(q, k, lay, 1.2));
  ASSERT_EQ(rows.size(), 2u);
  const auto path = temp_path("two.csv");
  export_stats(rows, path);
  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 3);
  const auto back = read_suppression_csv(path);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].head, rows[i].head);
    EXPECT_EQ(back[i].n_vis, rows[i].n_vis);
    EXPECT_NEAR(back[i].mean_mass, rows[i].mean_mass, 1e-12 * std::abs(rows[i].mean_mass));
    EXPECT_NEAR(back[i].ratio, rows[i].ratio, 1e-12 * std::abs(rows[i].ratio));
    EXPECT_EQ(back[i].gamma, rows[i].gamma);
  }
}

TEST(ExportStats, AttnDiffColumns) {
  Rng rng(11);
  const TokenLayout lay{2, 8, 2, 2};
  const MatrixD q = randn(10, 4, rng), k = randn(10, 4, rng), v = randn(10, 4, rng);
  const auto path = temp_path("diff.csv");
  export_stats(attention_map_diff(q, k, v, 1.2, 1.0, lay, 4), path);
  const CsvTable t = read_csv(path);
  EXPECT_EQ(t.header, (std::vector<std::string>{"head", "query_bucket", "mean_diff", "max_diff"}));
  EXPECT_EQ(t.rows.size(), 8u);
}

TEST(ExportStats, UnwritablePathNamesThePath) {
  try {
    export_stats(std::vector<SuppressionRow>{}, "/nonexistent-dir/x/suppression.csv");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent-dir/x/suppression.csv"), std::string::npos);
  }
}

TEST(Csv, NumbersRoundTripExactly) {
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    const double x = rng.normal() * std::pow(10.0, rng.uniform(-12, 12));
    EXPECT_EQ(parse_number(format_number(x)), x);
  }
  EXPECT_THROW(parse_number("1,5"), DomainError);
}
