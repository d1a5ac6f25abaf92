#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alm/dataset.hpp"
#include "alm/scoring.hpp"
#include "alm/training.hpp"

namespace alm {

struct LabelledText {
  std::string author;
  std::string text;
};

// Test-split records in dataset order.
std::vector<LabelledText> test_set(const Dataset& dataset);

struct AuthorAccuracy {
  std::string author;
  std::size_t text_count = 0;
  std::size_t token_count = 0;
  double mean_tokens_per_text = 0.0;
  std::size_t correct = 0;
  std::size_t skipped = 0;  // unscorable texts, counted as incorrect
  double accuracy = 0.0;    // correct / text_count
};

struct EvaluationReport {
  // One row per ALM-set author that has test texts, in ALM-set order.
  std::vector<AuthorAccuracy> per_author;
  double macro_avg_accuracy = 0.0;
  // confusion[true][predicted] over all ALM-set authors; unscorable texts land
  // in unscored[true] instead.
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<std::size_t> unscored;
  std::vector<std::string> authors;
  std::vector<BatchItem> predictions;  // test order

  std::size_t total_skipped() const;
};

// Aggregates finished predictions. truth[i] indexes `authors`; an item without
// a result counts as an unscored, incorrect text.
EvaluationReport summarize(std::span<const std::string> authors, std::span<const std::size_t> truth,
                           std::span<const std::size_t> token_counts, std::vector<BatchItem> predictions);

EvaluationReport evaluate(const AlmSet& alms, std::span<const LabelledText> test, int jobs = 1);

// Same over encoded texts; `labels[i]` is the true author of `sequences[i]`.
EvaluationReport evaluate_tokens(const AlmSet& alms, std::span<const std::string> labels,
                                 std::span<const TokenSequence> sequences, int jobs = 1);

inline const std::vector<std::size_t> kDefaultAblationGrid = {2, 5, 10, 20, 40, 70, 100, 200, 400, 800};

struct AblationCurve {
  std::vector<std::size_t> grid;
  std::vector<double> points;         // macro-average accuracy per length
  std::vector<std::size_t> skipped;   // texts with fewer than 2 tokens per length
};

// Each test text is cut to its first min(L, t) tokens before evaluation.
AblationCurve ablate(const AlmSet& alms, std::span<const LabelledText> test,
                     std::span<const std::size_t> grid, int jobs = 1);

struct DatasetStats {
  std::size_t authors = 0;       // A
  std::size_t texts = 0;         // T
  std::size_t tokens = 0;        // TK
  double texts_per_author = 0.0; // T/A
  double mean_test_tokens = 0.0; // TTL, 0 when there is no test split
};

DatasetStats dataset_stats(const Dataset& dataset, const Vocab& vocab);

// Average-rank Spearman correlation; 0 when either side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

// CSV writers. Floating values use the shortest round-trip representation.
void write_report_csv(const EvaluationReport& report, std::ostream& out);
void write_confusion_csv(const EvaluationReport& report, std::ostream& out);
void write_ablation_csv(const AblationCurve& curve, std::ostream& out);
void write_stats_csv(const DatasetStats& stats, std::ostream& out);

std::vector<std::size_t> parse_grid(std::string_view text);

}  // namespace alm
