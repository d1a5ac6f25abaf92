#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alm/model.hpp"
#include "alm/training.hpp"

namespace alm {

// Mean CE above this many nats is reported as an overflow sentinel instead of
// exp() saturating to infinity.
inline constexpr double kOverflowCe = 700.0;

struct MeanNll {
  double mean_ce = 0.0;           // token-weighted over every scored position
  std::size_t scored_tokens = 0;  // t − windows
  std::size_t windows = 0;
  std::vector<double> window_ce;  // per-window mean, for windows with ≥ 2 tokens
};

// Splits tokens into consecutive non-overlapping windows of context_len and
// scores positions 1.. of each. A trailing one-token window counts as a window
// with nothing to score.
MeanNll mean_nll(const CausalLm& model, std::span<const TokenId> tokens);

struct PerplexityScore {
  double value = 0.0;  // exp(mean_ce), or the sentinel when overflow is set
  double mean_ce = 0.0;
  std::size_t token_count = 0;
  std::size_t windows = 0;
  bool overflow = false;

  friend bool operator==(const PerplexityScore&, const PerplexityScore&) = default;
};

PerplexityScore perplexity(const CausalLm& model, std::span<const TokenId> tokens);

struct AttributionResult {
  std::string query_id;
  std::vector<std::string> authors;
  std::vector<PerplexityScore> scores;  // aligned with authors
  std::size_t predicted_index = 0;
  std::string predicted_author;
  double margin = 0.0;  // second-lowest minus lowest perplexity

  friend bool operator==(const AttributionResult&, const AttributionResult&) = default;
};

// Lowest perplexity wins; ties go to the earliest author.
AttributionResult rank_authors(std::vector<PerplexityScore> scores,
                               std::span<const std::string> authors, std::string query_id);

// Scores one token sequence under every model.
AttributionResult attribute_tokens(std::span<const CausalLm* const> models,
                                   std::span<const std::string> authors,
                                   std::span<const TokenId> tokens, std::string query_id = {});

AttributionResult attribute(const AlmSet& alms, std::string_view query, std::string query_id = {});

struct Query {
  std::string id;
  std::string text;
};

struct BatchItem {
  std::string query_id;
  std::optional<AttributionResult> result;
  std::string error;  // set when result is empty
};

// Element-wise attribute. (query, model) pairs are scored on up to `jobs`
// threads; the output does not depend on `jobs`.
std::vector<BatchItem> attribute_batch(const AlmSet& alms, std::span<const Query> queries,
                                       int jobs = 1);

// Same, over already-encoded sequences.
std::vector<BatchItem> attribute_batch_tokens(const AlmSet& alms,
                                              std::span<const TokenSequence> sequences,
                                              std::span<const std::string> ids, int jobs = 1);

// One JSON object (no trailing newline): query_id, predicted_author, margin,
// authors, perplexities, mean_ce; or query_id + error.
std::string to_jsonl(const BatchItem& item);

}  // namespace alm
