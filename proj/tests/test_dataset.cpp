#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "alm/dataset.hpp"
#include "alm/error.hpp"
#include "test_util.hpp"

namespace alm {
namespace {

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

TEST(LoadDataset, TwoAuthorsFourRecords) {
  testing::TempDir dir;
  write(dir / "d.jsonl",
        R"({"author": "ann", "split": "train", "text": "hello there"})" "\n"
        R"({"author": "bob", "split": "train", "text": "good day"})" "\n"
        "\n"
        R"({"author": "ann", "split": "test", "text": "hi \"you\"\n"})" "\n"
        R"({"author": "bob", "split": "test", "text": "g'day"})" "\n");
  const Dataset d = load_dataset(dir / "d.jsonl");
  EXPECT_EQ(d.authors(), (std::vector<std::string>{"ann", "bob"}));
  EXPECT_EQ(d.records().size(), 4u);
  EXPECT_EQ(d.records()[2].text, "hi \"you\"\n");
  EXPECT_EQ(d.records()[2].split, Split::kTest);
  EXPECT_EQ(load_dataset(dir / "d.jsonl").fingerprint(), d.fingerprint());
  EXPECT_EQ(d.texts("bob", Split::kTest), (std::vector<std::string>{"g'day"}));
  EXPECT_EQ(d.count("ann", Split::kTrain), 1u);
}

TEST(LoadDataset, Errors) {
  testing::TempDir dir;
  write(dir / "empty.jsonl", "");
  EXPECT_NE(error_of([&] { load_dataset(dir / "empty.jsonl"); }).find("no records"), std::string::npos);

  write(dir / "bad.jsonl", R"({"author": "a", "split": "train", "text": "x"})" "\n{oops\n");
  EXPECT_NE(error_of([&] { load_dataset(dir / "bad.jsonl"); }).find("line 2"), std::string::npos);

  write(dir / "split.jsonl", R"({"author": "a", "split": "dev", "text": "x"})" "\n");
  const std::string e = error_of([&] { load_dataset(dir / "split.jsonl"); });
  EXPECT_NE(e.find("line 1"), std::string::npos);
  EXPECT_NE(e.find("dev"), std::string::npos);

  write(dir / "field.jsonl", R"({"author": "a", "split": "train"})" "\n");
  EXPECT_NE(error_of([&] { load_dataset(dir / "field.jsonl"); }).find("text"), std::string::npos);

  EXPECT_THROW(load_dataset(dir / "missing.jsonl"), Error);
}

TEST(LoadDataset, WarnsAboutAuthorsWithoutTraining) {
  std::istringstream in(R"({"author": "a", "split": "train", "text": "x"})" "\n"
                        R"({"author": "b", "split": "test", "text": "y"})" "\n");
  std::ostringstream warnings;
  const Dataset d = parse_dataset(in, &warnings);
  EXPECT_EQ(d.authors_without_training(), (std::vector<std::string>{"b"}));
  EXPECT_NE(warnings.str().find("'b'"), std::string::npos);
}

TEST(SaveDataset, RoundTrip) {
  testing::TempDir dir;
  const Dataset d = synth_corpus(3, 5, 1);
  save_dataset(d, dir / "s.jsonl");
  const Dataset back = load_dataset(dir / "s.jsonl");
  EXPECT_EQ(back, d);
  EXPECT_EQ(back.fingerprint(), d.fingerprint());
  EXPECT_EQ(back.authors(), d.authors());
}

TEST(Fingerprint, OrderFreeButContentSensitive) {
  std::vector<Record> r{{"a", Split::kTrain, "one"}, {"b", Split::kTest, "two"}, {"a", Split::kTest, "three"}};
  const std::string base = dataset_fingerprint(r);
  std::vector<Record> shuffled{r[2], r[0], r[1]};
  EXPECT_EQ(dataset_fingerprint(shuffled), base);
  for (std::size_t i = 0; i < r.size(); ++i) {
    auto changed = r;
    changed[i].text += "!";
    EXPECT_NE(dataset_fingerprint(changed), base);
    changed = r;
    changed[i].split = changed[i].split == Split::kTrain ? Split::kTest : Split::kTrain;
    EXPECT_NE(dataset_fingerprint(changed), base);
  }
  // Length prefixes keep field boundaries unambiguous.
  EXPECT_NE(dataset_fingerprint({{"ab", Split::kTrain, "c"}}), dataset_fingerprint({{"a", Split::kTrain, "bc"}}));
}

TEST(SynthCorpus, DeterministicWithSplit) {
  const Dataset a = synth_corpus(4, 20, 9), b = synth_corpus(4, 20, 9);
  EXPECT_EQ(a, b);
  EXPECT_NE(synth_corpus(4, 20, 10), a);
  EXPECT_EQ(a.authors().size(), 4u);
  for (const auto& author : a.authors()) {
    EXPECT_EQ(a.count(author, Split::kTrain), 16u);
    EXPECT_EQ(a.count(author, Split::kTest), 4u);
  }
  EXPECT_EQ(a.authors()[0], "author_0");
  EXPECT_THROW(synth_corpus(1, 10, 0), Error);
}

TEST(SynthCorpus, InventoriesOverlapLessThanHalf) {
  const std::size_t n = 6;
  std::vector<std::set<std::string>> inv;
  for (std::size_t a = 0; a < n; ++a) {
    const auto words = synth_author_inventory(a, 7);
    inv.emplace_back(words.begin(), words.end());
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      std::size_t common = 0;
      for (const auto& w : inv[i]) common += inv[j].count(w);
      const double jaccard = static_cast<double>(common) / static_cast<double>(inv[i].size() + inv[j].size() - common);
      EXPECT_LT(jaccard, 0.5) << i << " vs " << j;
      EXPECT_NE(inv[i], inv[j]);
    }
  }
}

TEST(SynthCorpus, TextsUseOnlyTheAuthorsInventory) {
  const Dataset d = synth_corpus(3, 10, 2);
  for (std::size_t a = 0; a < 3; ++a) {
    const auto words = synth_author_inventory(a, 2);
    std::set<std::string> inv;
    for (std::string w : words) {
      inv.insert(w);
      w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
      inv.insert(w);
    }
    for (Split split : {Split::kTrain, Split::kTest}) {
      for (const std::string& text : d.texts("author_" + std::to_string(a), split)) {
        std::istringstream in(text);
        for (std::string tok; in >> tok;) {
          while (!tok.empty() && (tok.back() == '.' || tok.back() == ',')) tok.pop_back();
          ASSERT_TRUE(inv.count(tok)) << tok;
        }
      }
    }
  }
}

TEST(Downsample, CeilingCountsAndPreservesTest) {
  const Dataset d = synth_corpus(3, 13, 4);  // 10 train + 3 test per author
  const Dataset half = downsample(d, 0.5, 1);
  for (const auto& a : d.authors()) {
    EXPECT_EQ(half.count(a, Split::kTrain), 5u);
    EXPECT_EQ(half.texts(a, Split::kTest), d.texts(a, Split::kTest));
  }
  EXPECT_EQ(downsample(d, 0.31, 1).count("author_0", Split::kTrain), 4u);
  EXPECT_EQ(downsample(d, 0.3, 1).count("author_0", Split::kTrain), 3u);
  EXPECT_EQ(downsample(d, 0.01, 1).count("author_0", Split::kTrain), 1u);
}

TEST(Downsample, FullFractionIsIdentity) {
  const Dataset d = synth_corpus(3, 10, 4);
  const Dataset same = downsample(d, 1.0, 3);
  EXPECT_EQ(same, d);
  EXPECT_EQ(same.fingerprint(), d.fingerprint());
}

TEST(Downsample, SeedsChooseDifferentSubsetsOfEqualSize) {
  const Dataset d = synth_corpus(3, 50, 4);
  const Dataset a = downsample(d, 0.5, 1), b = downsample(d, 0.5, 2);
  EXPECT_EQ(a.records().size(), b.records().size());
  EXPECT_NE(a, b);
  EXPECT_EQ(downsample(d, 0.5, 1), a);
  // Kept texts stay in their original relative order.
  const auto all = d.texts("author_1", Split::kTrain);
  const auto kept = a.texts("author_1", Split::kTrain);
  auto it = all.begin();
  for (const auto& t : kept) {
    it = std::find(it, all.end(), t);
    ASSERT_NE(it, all.end());
  }
}

TEST(Downsample, Rejections) {
  const Dataset d = synth_corpus(2, 10, 4);
  EXPECT_THROW(downsample(d, 0.0, 1), Error);
  EXPECT_THROW(downsample(d, 1.5, 1), Error);
  const Dataset no_train({{"a", Split::kTrain, "x"}, {"b", Split::kTest, "y"}});
  EXPECT_THROW(downsample(no_train, 0.5, 1), Error);
}

TEST(ImportCsv, HeaderColumnsAndQuoting) {
  std::istringstream in("id,text,label\n"
                        "1,plain text,alice\n"
                        "2,\"with, comma and \"\"quotes\"\"\nand newline\",bob\r\n"
                        "3,,alice\n");
  const auto records = read_labelled_csv(in, Split::kTest);
  ASSERT_EQ(records.size(), 3u);
  EXPECT_EQ(records[0], (Record{"alice", Split::kTest, "plain text"}));
  EXPECT_EQ(records[1].text, "with, comma and \"quotes\"\nand newline");
  EXPECT_EQ(records[1].author, "bob");
  EXPECT_EQ(records[2].text, "");
}

TEST(ImportCsv, Errors) {
  std::istringstream no_label("text,author\nx,y\n");
  EXPECT_THROW(read_labelled_csv(no_label, Split::kTrain), Error);
  std::istringstream unterminated("text,label\n\"open,a\n");
  EXPECT_THROW(read_labelled_csv(unterminated, Split::kTrain), Error);
  std::istringstream short_row("text,label\nonly\n");
  EXPECT_THROW(read_labelled_csv(short_row, Split::kTrain), Error);
  std::istringstream empty("");
  EXPECT_THROW(read_labelled_csv(empty, Split::kTrain), Error);
}

}  // namespace
}  // namespace alm
