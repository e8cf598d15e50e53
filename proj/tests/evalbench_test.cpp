#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "freeevent/errors.hpp"
#include "freeevent/evalbench.hpp"
#include "support.hpp"

using namespace freeevent;

namespace {

Image formula_image(int h, int w, bool second) {
  Image img(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!second) {
        img.at(y, x, 0) = ((3 * y + 5 * x) % 17) / 16.0;
        img.at(y, x, 1) = ((7 * y + 2 * x) % 13) / 12.0;
        img.at(y, x, 2) = ((y * x) % 11) / 10.0;
      } else {
        img.at(y, x, 0) = ((y + 2 * x) % 9) / 8.0;
        img.at(y, x, 1) = ((5 * y) % 7) / 6.0;
        img.at(y, x, 2) = ((x * x + y) % 5) / 4.0;
      }
    }
  return img;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

std::vector<double> random_unit(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> n;
  std::vector<double> v(static_cast<std::size_t>(d));
  double s = 0;
  for (double& x : v) {
    x = n(rng);
    s += x * x;
  }
  for (double& x : v) x /= std::sqrt(s);
  return v;
}

}  // namespace

// Frozen from tests/oracles/retrieval_oracle.py.
TEST(Encoder, DownsampleFeaturesMatchOracle) {
  const auto fa = downsample_features(formula_image(20, 20, false));
  const auto fb = downsample_features(formula_image(24, 24, true));
  ASSERT_EQ(fa.size(), 256u);
  EXPECT_NEAR(fa[0], -0.21993588456728075, 1e-12);
  EXPECT_NEAR(fa[37], -0.0440292022835088, 1e-12);
  EXPECT_NEAR(fa[255], -0.008483135841097115, 1e-12);
  EXPECT_NEAR(fb[0], -0.11729878733359562, 1e-12);
  EXPECT_NEAR(fb[100], -0.03379462997971254, 1e-12);
  EXPECT_NEAR(cosine(fa, fb), 0.056996352730470407, 1e-12);
}

TEST(Encoder, ConstantImageAndRegistry) {
  const auto v = embed_image(Image(16, 16, 3, 0.4));
  for (double x : v) EXPECT_DOUBLE_EQ(x, 1.0 / 16);
  EXPECT_THROW(embed_image(Image(16, 16, 3), "clip-vit"), ConfigError);
  register_encoder("first-pixel", [](const Image& im) { return std::vector<double>{im.data[0], 1.0}; });
  const auto e = embed_image(Image(4, 4, 3, 1.0), "first-pixel");
  EXPECT_NEAR(e[0], std::sqrt(0.5), 1e-15);
  const auto names = encoder_names();
  EXPECT_NE(std::find(names.begin(), names.end(), "downsample16"), names.end());
}

TEST(Retrieval, SelfRetrievalIsPerfectAndMonotone) {
  std::mt19937_64 rng(3);
  std::vector<RetrievalItem> refs;
  for (int c = 0; c < 4; ++c)
    for (int r = 0; r < 10; ++r) refs.push_back({random_unit(rng, 16), "c" + std::to_string(c) + "_" + std::to_string(r), "class" + std::to_string(c)});
  const RetrievalReport rep = recall_at_k(refs, refs, {1, 5, 10});
  EXPECT_EQ(rep.n_queries, 40);
  EXPECT_EQ(rep.recall_at.at(1), 1.0);
  EXPECT_EQ(rep.recall_at.at(10), 1.0);
  EXPECT_EQ(rep.per_class.size(), 4u);
}

TEST(Retrieval, TiesBreakByAscendingId) {
  const std::vector<RetrievalItem> refs{{{1, 0}, "b", "x"}, {{1, 0}, "a", "x"}, {{0, 1}, "c", "x"}, {{1, 0}, "z", "y"}};
  const RetrievalItem target{{2, 0}, "b", "x"};
  EXPECT_EQ(rank_references(target, refs), (std::vector<std::string>{"a", "b", "c"}));
  const RetrievalReport rep = recall_at_k({target}, refs, {1, 2});
  EXPECT_EQ(rep.recall_at.at(1), 0.0);
  EXPECT_EQ(rep.recall_at.at(2), 1.0);
}

// Random embeddings: Recall@k is k / pool size in expectation.
TEST(Retrieval, ChanceLevelForRandomEmbeddings) {
  std::mt19937_64 rng(8);
  std::vector<RetrievalItem> refs, targets;
  for (int c = 0; c < 10; ++c)
    for (int r = 0; r < 20; ++r) {
      const std::string id = std::to_string(c) + "_" + std::to_string(r);
      refs.push_back({random_unit(rng, 32), id, std::to_string(c)});
      for (int q = 0; q < 10; ++q) targets.push_back({random_unit(rng, 32), id, std::to_string(c)});
    }
  const RetrievalReport rep = recall_at_k(targets, refs, {1, 5, 10}, 3);
  // 2000 queries: binomial standard errors 0.005 / 0.010 / 0.011
  EXPECT_NEAR(rep.recall_at.at(1), 0.05, 0.02);
  EXPECT_NEAR(rep.recall_at.at(5), 0.25, 0.04);
  EXPECT_NEAR(rep.recall_at.at(10), 0.50, 0.045);
  EXPECT_LE(rep.recall_at.at(1), rep.recall_at.at(5));
  EXPECT_LE(rep.recall_at.at(5), rep.recall_at.at(10));
  const RetrievalReport serial = recall_at_k(targets, refs, {1, 5, 10}, 1);
  EXPECT_EQ(serial.recall_at, rep.recall_at);
  EXPECT_EQ(serial.per_class, rep.per_class);
  EXPECT_EQ(format_report_kv(serial), format_report_kv(rep));
}

TEST(Retrieval, Errors) {
  const std::vector<RetrievalItem> refs{{{1, 0}, "a", "x"}};
  EXPECT_ANY_THROW(recall_at_k({{{1, 0}, "nope", "x"}}, refs, {1}));
  EXPECT_ANY_THROW(recall_at_k({{{1, 0, 0}, "a", "x"}}, refs, {1}));
  EXPECT_ANY_THROW(recall_at_k({{{1, 0}, "a", "x"}}, refs, {0}));
}

TEST(Benchmark, MakeAndIngest) {
  fe_test::TempDir dir;
  make_toy_benchmark(dir.path(), 3, 4, 1);
  const BenchmarkIngest in = ingest_benchmark(dir.path());
  EXPECT_TRUE(in.errors.empty());
  ASSERT_EQ(in.samples.size(), 12u);
  for (const auto& s : in.samples) {
    EXPECT_TRUE(std::filesystem::exists(s.image));
    EXPECT_GE(s.entities.size(), 2u);
    for (const auto& e : s.entities) {
      EXPECT_FALSE(e.nouns.empty());
      EXPECT_GT(e.bbox.width(), 0);
      EXPECT_TRUE(std::filesystem::exists(e.mask));
    }
  }
  // a second generation is identical
  fe_test::TempDir again;
  make_toy_benchmark(again.path(), 3, 4, 1);
  std::ifstream a(dir / "manifest.tsv"), b(again / "manifest.tsv");
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(a), {}), std::string(std::istreambuf_iterator<char>(b), {}));
}

TEST(Benchmark, BadRowsAreReportedAndSkipped) {
  fe_test::TempDir dir;
  make_toy_benchmark(dir.path(), 2, 2, 1);
  std::string header, first_row;
  {
    std::ifstream in(dir / "manifest.tsv");
    std::getline(in, header);
    std::getline(in, first_row);
  }
  {
    std::ofstream out(dir / "manifest.tsv", std::ios::app);
    out << first_row << '\n';  // duplicate id
    out << "c99_r000\timages/none.png\tghost\t1\t0:0:2:2\tmasks/none.png\n";  // missing files
    out << "c99_r001\n";  // too few fields
  }
  const BenchmarkIngest in = ingest_benchmark(dir.path());
  EXPECT_EQ(in.samples.size(), 4u);
  EXPECT_EQ(in.errors.size(), 3u);
  EXPECT_THROW(ingest_benchmark(dir / "absent"), IoError);
  fe_test::TempDir empty;
  { std::ofstream(empty / "manifest.tsv") << "c0_r000\tmissing.png\tx\n"; }
  EXPECT_THROW(ingest_benchmark(empty.path()), DataError);
}
