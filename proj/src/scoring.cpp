#include "alm/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "alm/error.hpp"

namespace alm {
namespace {

// Σ −log softmax(logits[i])[tokens[i+1]] over the window.
double window_nll_sum(const LogitsMatrix& logits, std::span<const TokenId> tokens) {
  const std::size_t V = logits.cols();
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    const TokenId target = tokens[i + 1];
    if (target >= V) throw Error("token id " + std::to_string(target) + " outside model vocab");
    total += (mx + std::log(sum)) - row[target];
  }
  return total;
}

}  // namespace

MeanNll mean_nll(const CausalLm& model, std::span<const TokenId> tokens) {
  if (tokens.size() < 2) throw Error("questioned text too short to score (need at least 2 tokens)");
  const std::size_t window = model.context_len();
  MeanNll out;
  double total = 0.0;
  for (std::size_t start = 0; start < tokens.size(); start += window) {
    const auto w = tokens.subspan(start, std::min(window, tokens.size() - start));
    ++out.windows;
    if (w.size() < 2) continue;
    const double sum = window_nll_sum(model.forward(w), w);
    total += sum;
    out.scored_tokens += w.size() - 1;
    out.window_ce.push_back(sum / static_cast<double>(w.size() - 1));
  }
  out.mean_ce = total / static_cast<double>(out.scored_tokens);
  return out;
}

PerplexityScore perplexity(const CausalLm& model, std::span<const TokenId> tokens) {
  const MeanNll nll = mean_nll(model, tokens);
  PerplexityScore s;
  s.mean_ce = nll.mean_ce;
  s.token_count = nll.scored_tokens;
  s.windows = nll.windows;
  if (!(nll.mean_ce <= kOverflowCe)) {
    s.overflow = true;
    s.value = std::numeric_limits<double>::max();
  } else {
    s.value = std::exp(nll.mean_ce);
  }
  return s;
}

AttributionResult rank_authors(std::vector<PerplexityScore> scores,
                               std::span<const std::string> authors, std::string query_id) {
  if (scores.size() != authors.size()) throw Error("score count does not match author count");
  if (scores.size() < 2) throw Error("attribution needs at least 2 candidate authors");
  if (std::all_of(scores.begin(), scores.end(), [](const auto& s) { return s.overflow; })) {
    throw Error("questioned text is unscorable: every author model overflowed");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i].value < scores[best].value) best = i;
  }
  double second = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i != best) second = std::min(second, scores[i].value);
  }
  AttributionResult r;
  r.query_id = std::move(query_id);
  r.authors.assign(authors.begin(), authors.end());
  r.predicted_index = best;
  r.predicted_author = authors[best];
  r.margin = second - scores[best].value;
  r.scores = std::move(scores);
  return r;
}

AttributionResult attribute_tokens(std::span<const CausalLm* const> models,
                                   std::span<const std::string> authors,
                                   std::span<const TokenId> tokens, std::string query_id) {
  if (tokens.size() < 2) throw Error("questioned text too short (need at least 2 tokens)");
  std::vector<PerplexityScore> scores;
  scores.reserve(models.size());
  for (const CausalLm* m : models) scores.push_back(perplexity(*m, tokens));
  return rank_authors(std::move(scores), authors, std::move(query_id));
}

AttributionResult attribute(const AlmSet& alms, std::string_view query, std::string query_id) {
  const TokenSequence tokens = alms.vocab.encode(query);
  std::vector<const CausalLm*> models;
  for (const Model& m : alms.models) models.push_back(&m);
  return attribute_tokens(models, alms.authors, tokens.span(), std::move(query_id));
}

std::vector<BatchItem> attribute_batch_tokens(const AlmSet& alms,
                                              std::span<const TokenSequence> sequences,
                                              std::span<const std::string> ids, int jobs) {
  if (ids.size() != sequences.size()) throw Error("query id count does not match query count");
  const std::size_t nq = sequences.size(), nm = alms.models.size();
  std::vector<BatchItem> out(nq);
  if (nq == 0) return out;
  if (nm < 2) throw Error("attribution needs at least 2 candidate authors");

  std::vector<PerplexityScore> grid(nq * nm);
  std::vector<std::string> pair_errors(nq * nm);
  const auto pairs = static_cast<long>(nq * nm);
#pragma omp parallel for schedule(dynamic, 1) num_threads(std::max(jobs, 1))
  for (long p = 0; p < pairs; ++p) {
    const auto idx = static_cast<std::size_t>(p);
    const std::size_t q = idx / nm, m = idx % nm;
    if (sequences[q].size() < 2) continue;
    try {
      grid[idx] = perplexity(alms.models[m], sequences[q].span());
    } catch (const std::exception& e) {
      pair_errors[idx] = e.what();
    }
  }

  for (std::size_t q = 0; q < nq; ++q) {
    out[q].query_id = ids[q];
    if (sequences[q].size() < 2) {
      out[q].error = "questioned text too short (need at least 2 tokens)";
      continue;
    }
    const auto first_error = std::find_if(pair_errors.begin() + static_cast<std::ptrdiff_t>(q * nm),
                                          pair_errors.begin() + static_cast<std::ptrdiff_t>((q + 1) * nm),
                                          [](const std::string& e) { return !e.empty(); });
    if (first_error != pair_errors.begin() + static_cast<std::ptrdiff_t>((q + 1) * nm)) {
      out[q].error = *first_error;
      continue;
    }
    try {
      std::vector<PerplexityScore> scores(grid.begin() + static_cast<std::ptrdiff_t>(q * nm),
                                          grid.begin() + static_cast<std::ptrdiff_t>((q + 1) * nm));
      out[q].result = rank_authors(std::move(scores), alms.authors, ids[q]);
    } catch (const Error& e) {
      out[q].error = e.what();
    }
  }
  return out;
}

std::vector<BatchItem> attribute_batch(const AlmSet& alms, std::span<const Query> queries,
                                       int jobs) {
  std::vector<TokenSequence> seqs(queries.size());
  std::vector<std::string> ids(queries.size());
  const auto n = static_cast<long>(queries.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(std::max(jobs, 1))
  for (long i = 0; i < n; ++i) seqs[static_cast<std::size_t>(i)] = alms.vocab.encode(queries[static_cast<std::size_t>(i)].text);
  for (std::size_t i = 0; i < queries.size(); ++i) ids[i] = queries[i].id;
  return attribute_batch_tokens(alms, seqs, ids, jobs);
}

std::string to_jsonl(const BatchItem& item) {
  nlohmann::ordered_json j;
  j["query_id"] = item.query_id;
  if (!item.result) {
    j["error"] = item.error;
    return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
  }
  const AttributionResult& r = *item.result;
  j["predicted_author"] = r.predicted_author;
  j["margin"] = r.margin;
  j["authors"] = r.authors;
  auto& ppl = j["perplexities"] = nlohmann::ordered_json::array();
  auto& ce = j["mean_ce"] = nlohmann::ordered_json::array();
  for (const PerplexityScore& s : r.scores) {
    ppl.push_back(s.value);
    ce.push_back(s.mean_ce);
  }
  j["scored_tokens"] = r.scores.empty() ? 0 : r.scores.front().token_count;
  j["windows"] = r.scores.empty() ? 0 : r.scores.front().windows;
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

}  // namespace alm
