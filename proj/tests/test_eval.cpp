#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <random>
#include <sstream>

#include "alm/error.hpp"
#include "alm/eval.hpp"
#include "test_util.hpp"

namespace alm {
namespace {

BatchItem predicted(std::size_t index) {
  BatchItem item;
  AttributionResult r;
  r.predicted_index = index;
  item.result = r;
  return item;
}

BatchItem unscorable() {
  BatchItem item;
  item.error = "questioned text too short";
  return item;
}

std::vector<std::string> names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("author_" + std::to_string(i));
  return out;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> row;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

TEST(Summarize, MacroAverageOfTwoAuthors) {
  const auto authors = names(2);
  const std::vector<std::size_t> truth{0, 0, 1, 1}, tokens{5, 5, 5, 5};
  const EvaluationReport r = summarize(authors, truth, tokens, {predicted(0), predicted(0), predicted(1), predicted(0)});
  ASSERT_EQ(r.per_author.size(), 2u);
  EXPECT_EQ(r.per_author[0].accuracy, 1.0);
  EXPECT_EQ(r.per_author[1].accuracy, 0.5);
  EXPECT_EQ(r.macro_avg_accuracy, 0.75);
  EXPECT_EQ(r.confusion, (std::vector<std::vector<std::size_t>>{{2, 0}, {1, 1}}));
}

TEST(Summarize, UnscorableCountsAsIncorrect) {
  const auto authors = names(2);
  const std::vector<std::size_t> truth{0, 0, 1}, tokens{1, 9, 4};
  const EvaluationReport r = summarize(authors, truth, tokens, {unscorable(), predicted(0), predicted(1)});
  EXPECT_EQ(r.per_author[0].accuracy, 0.5);
  EXPECT_EQ(r.per_author[0].skipped, 1u);
  EXPECT_EQ(r.unscored, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(r.total_skipped(), 1u);
  EXPECT_EQ(r.per_author[0].token_count, 10u);
  EXPECT_EQ(r.per_author[0].mean_tokens_per_text, 5.0);
}

TEST(Summarize, PropertiesOnRandomPredictions) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 6, texts = n + rng() % 60;
    std::vector<std::size_t> truth(texts), tokens(texts);
    std::vector<BatchItem> preds;
    for (std::size_t i = 0; i < texts; ++i) {
      truth[i] = i < n ? i : rng() % n;
      tokens[i] = rng() % 50;
      preds.push_back(rng() % 10 == 0 ? unscorable() : predicted(rng() % n));
    }
    const EvaluationReport r = summarize(names(n), truth, tokens, preds);

    double sum = 0.0;
    for (const auto& row : r.per_author) sum += static_cast<double>(row.correct) / static_cast<double>(row.text_count);
    ASSERT_EQ(r.macro_avg_accuracy, sum / static_cast<double>(r.per_author.size()));

    std::size_t cells = r.total_skipped();
    for (std::size_t a = 0; a < n; ++a) {
      std::size_t row_sum = r.unscored[a];
      for (std::size_t c : r.confusion[a]) row_sum += c;
      ASSERT_EQ(row_sum, static_cast<std::size_t>(std::count(truth.begin(), truth.end(), a)));
      cells += row_sum - r.unscored[a];
    }
    ASSERT_EQ(cells, texts);

    std::vector<std::size_t> order(texts);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> t2, k2;
    std::vector<BatchItem> p2;
    for (std::size_t i : order) {
      t2.push_back(truth[i]);
      k2.push_back(tokens[i]);
      p2.push_back(preds[i]);
    }
    const EvaluationReport shuffled = summarize(names(n), t2, k2, p2);
    ASSERT_EQ(shuffled.macro_avg_accuracy, r.macro_avg_accuracy);
    ASSERT_EQ(shuffled.confusion, r.confusion);
  }
}

TEST(ReportCsv, MacroRowRecomputesExactlyFromAuthorRows) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + rng() % 5;
    std::vector<std::size_t> truth, tokens;
    std::vector<BatchItem> preds;
    for (std::size_t i = 0; i < 7 * n; ++i) {
      truth.push_back(i % n);
      tokens.push_back(1 + rng() % 100);
      preds.push_back(predicted(rng() % 3 == 0 ? (i + 1) % n : i % n));
    }
    std::ostringstream out;
    write_report_csv(summarize(names(n), truth, tokens, preds), out);
    const auto rows = parse_csv(out.str());
    ASSERT_EQ(rows.size(), n + 2);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"author", "text_count", "token_count", "mean_tokens_per_text",
                                                 "accuracy_pct", "skipped"}));
    double sum = 0.0;
    for (std::size_t i = 1; i <= n; ++i) sum += std::strtod(rows[i][4].c_str(), nullptr);
    ASSERT_EQ(rows.back()[0], "MACRO_AVG");
    EXPECT_EQ(std::strtod(rows.back()[4].c_str(), nullptr), sum / static_cast<double>(n));
  }
}

TEST(ReportCsv, RepresentsPerAuthorExtremes) {
  // 199/200 = 99.5% and 7/50 = 14%.
  std::vector<std::size_t> truth, tokens;
  std::vector<BatchItem> preds;
  for (std::size_t i = 0; i < 200; ++i) {
    truth.push_back(0);
    tokens.push_back(122);
    preds.push_back(predicted(i == 0 ? 1 : 0));
  }
  for (std::size_t i = 0; i < 50; ++i) {
    truth.push_back(1);
    tokens.push_back(506);
    preds.push_back(predicted(i < 7 ? 1 : 0));
  }
  std::ostringstream out;
  write_report_csv(summarize(names(2), truth, tokens, preds), out);
  const auto rows = parse_csv(out.str());
  EXPECT_EQ(rows[1], (std::vector<std::string>{"author_0", "200", "24400", "122", "99.5", "0"}));
  EXPECT_EQ(rows[2], (std::vector<std::string>{"author_1", "50", "25300", "506", "14", "0"}));
  EXPECT_EQ(rows[3][4], "56.75");
}

TEST(ConfusionCsv, HeaderAndUnscoredColumn) {
  const EvaluationReport clean = summarize(names(2), std::vector<std::size_t>{0, 1}, std::vector<std::size_t>{3, 3},
                                           {predicted(1), predicted(1)});
  std::ostringstream a;
  write_confusion_csv(clean, a);
  EXPECT_EQ(a.str(), "true\\predicted,author_0,author_1\nauthor_0,0,1\nauthor_1,0,1\n");
  const EvaluationReport dirty = summarize(names(2), std::vector<std::size_t>{0, 1}, std::vector<std::size_t>{3, 1},
                                           {predicted(0), unscorable()});
  std::ostringstream b;
  write_confusion_csv(dirty, b);
  EXPECT_EQ(b.str(), "true\\predicted,author_0,author_1,UNSCORED\nauthor_0,1,0,0\nauthor_1,0,0,1\n");
}

TEST(AblationCsv, Format) {
  AblationCurve c{{2, 8}, {0.25, 1.0}, {1, 1}};
  std::ostringstream out;
  write_ablation_csv(c, out);
  EXPECT_EQ(out.str(), "length,macro_avg_accuracy,skipped\n2,0.25,1\n8,1,1\n");
}

TEST(Stats, SingleTextArithmetic) {
  const Dataset d({{"a", Split::kTrain, "0123456789"}});
  const DatasetStats s = dataset_stats(d, Vocab{});
  EXPECT_EQ(s.authors, 1u);
  EXPECT_EQ(s.texts, 1u);
  EXPECT_EQ(s.tokens, 10u);
  EXPECT_EQ(s.texts_per_author, 1.0);
  EXPECT_EQ(s.mean_test_tokens, 0.0);
  std::ostringstream out;
  write_stats_csv(s, out);
  EXPECT_EQ(out.str(), "A,T,TK,T/A,TTL\n1,1,10,1,0\n");
}

TEST(Stats, MeanTestLengthUsesTestSplitOnly) {
  const Dataset d({{"a", Split::kTrain, "xxxxxxxxxxxxxxxxxxxx"},
                   {"a", Split::kTest, "abcd"},
                   {"b", Split::kTest, "ab"},
                   {"b", Split::kTrain, "q"}});
  const DatasetStats s = dataset_stats(d, Vocab{});
  EXPECT_EQ(s.tokens, 27u);
  EXPECT_EQ(s.mean_test_tokens, 3.0);
  EXPECT_EQ(s.texts_per_author, 2.0);
}

TEST(Spearman, Basics) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{10, 20, 30, 40, 50}), 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{5, 4, 3, 2, 1}), -1.0);
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{1, 1, 1, 1, 1}), 0.0);
  // Average ranks for ties: y ranks {1, 2.5, 2.5, 4, 5}.
  EXPECT_NEAR(spearman(x, std::vector<double>{0.1, 0.5, 0.5, 0.7, 0.9}), 0.9746794344808963, 1e-12);
}

TEST(Grid, ParseAndDefaults) {
  EXPECT_EQ(parse_grid("2,5,10"), (std::vector<std::size_t>{2, 5, 10}));
  EXPECT_THROW(parse_grid(""), Error);
  EXPECT_THROW(parse_grid("2,,5"), Error);
  EXPECT_THROW(parse_grid("2,x"), Error);
  for (std::size_t v : {20u, 40u, 70u, 400u}) {
    EXPECT_NE(std::find(kDefaultAblationGrid.begin(), kDefaultAblationGrid.end(), v), kDefaultAblationGrid.end());
  }
  EXPECT_TRUE(std::is_sorted(kDefaultAblationGrid.begin(), kDefaultAblationGrid.end()));
}

// Three authors over disjoint letters; trained long enough that each model is
// an oracle for its own author.
class Disjoint : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    std::mt19937_64 rng(1);
    const std::string alphabets[3] = {"abcd", "efgh", "ijkl"};
    std::vector<Record> records;
    for (int a = 0; a < 3; ++a) {
      for (int t = 0; t < 8; ++t) {
        std::string text;
        const std::size_t len = 20 + rng() % 40;
        for (std::size_t i = 0; i < len; ++i) {
          text += alphabets[a][rng() % 4];
          if (rng() % 4 == 0) text += ' ';
        }
        records.push_back({"author_" + std::to_string(a), t < 6 ? Split::kTrain : Split::kTest, text});
      }
    }
    records.push_back({"author_2", Split::kTest, "i"});
    dataset_ = new Dataset(std::move(records));
    TrainingConfig c;
    c.vocab_size = 280;
    c.context_len = 32;
    c.d_model = 16;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_ff = 32;
    c.pretrain_epochs = 5;
    c.finetune_epochs = 15;
    c.lr_pretrain = c.lr_finetune = 3e-3;
    alms_ = new AlmSet(build_alm_set(*dataset_, c));
  }
  static void TearDownTestSuite() {
    delete alms_;
    delete dataset_;
  }
  static Dataset* dataset_;
  static AlmSet* alms_;
};
Dataset* Disjoint::dataset_ = nullptr;
AlmSet* Disjoint::alms_ = nullptr;

TEST_F(Disjoint, OracleModelsGiveDiagonalConfusion) {
  const auto test = test_set(*dataset_);
  const EvaluationReport r = evaluate(*alms_, test);
  // The one-byte text cannot be scored and counts against author_2.
  EXPECT_EQ(r.unscored, (std::vector<std::size_t>{0, 0, 1}));
  EXPECT_EQ(r.confusion, (std::vector<std::vector<std::size_t>>{{2, 0, 0}, {0, 2, 0}, {0, 0, 2}}));
  EXPECT_EQ(r.per_author[2].accuracy, 2.0 / 3.0);

  std::vector<LabelledText> scorable(test.begin(), test.end() - 1);
  const EvaluationReport clean = evaluate(*alms_, scorable);
  EXPECT_EQ(clean.macro_avg_accuracy, 1.0);
}

TEST_F(Disjoint, AblationAtFullLengthReproducesEvaluate) {
  const auto test = test_set(*dataset_);
  const EvaluationReport full = evaluate(*alms_, test);
  std::size_t longest = 0;
  for (const auto& t : test) longest = std::max(longest, alms_->vocab.encode(t.text).size());
  const std::vector<std::size_t> grid{2, 4, longest, longest + 100};
  const AblationCurve curve = ablate(*alms_, test, grid);
  EXPECT_EQ(curve.points[2], full.macro_avg_accuracy);
  EXPECT_EQ(curve.points[3], full.macro_avg_accuracy);
  for (std::size_t s : curve.skipped) EXPECT_EQ(s, 1u);
  for (double p : curve.points) {
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
}

TEST_F(Disjoint, JobsDoNotChangeReport) {
  const auto test = test_set(*dataset_);
  const EvaluationReport a = evaluate(*alms_, test, 1), b = evaluate(*alms_, test, 4);
  EXPECT_EQ(a.macro_avg_accuracy, b.macro_avg_accuracy);
  EXPECT_EQ(a.confusion, b.confusion);
  for (std::size_t i = 0; i < a.predictions.size(); ++i) EXPECT_EQ(a.predictions[i].result, b.predictions[i].result);
}

TEST_F(Disjoint, Errors) {
  const std::vector<LabelledText> stranger{{"nobody", "abcd abcd"}};
  try {
    evaluate(*alms_, stranger);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("nobody"), std::string::npos);
  }
  const auto test = test_set(*dataset_);
  EXPECT_THROW(ablate(*alms_, test, std::vector<std::size_t>{}), Error);
  EXPECT_THROW(ablate(*alms_, test, std::vector<std::size_t>{1, 4}), Error);
  EXPECT_THROW(ablate(*alms_, test, std::vector<std::size_t>{8, 4}), Error);
}

}  // namespace
}  // namespace alm
