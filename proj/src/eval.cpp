#include "alm/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <ostream>

#include "alm/error.hpp"

namespace alm {
namespace {

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

std::vector<LabelledText> test_set(const Dataset& dataset) {
  std::vector<LabelledText> out;
  for (const Record* r : dataset.records_of(Split::kTest)) out.push_back({r->author, r->text});
  return out;
}

std::size_t EvaluationReport::total_skipped() const {
  return std::accumulate(unscored.begin(), unscored.end(), std::size_t{0});
}

EvaluationReport evaluate_tokens(const AlmSet& alms, std::span<const std::string> labels,
                                 std::span<const TokenSequence> sequences, int jobs) {
  if (labels.size() != sequences.size()) throw Error("label count does not match text count");
  std::vector<std::size_t> truth(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = std::find(alms.authors.begin(), alms.authors.end(), labels[i]);
    if (it == alms.authors.end()) throw Error("test author '" + labels[i] + "' has no model in the ALM set");
    truth[i] = static_cast<std::size_t>(it - alms.authors.begin());
  }

  std::vector<std::string> ids(labels.size());
  std::vector<std::size_t> token_counts(labels.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ids[i] = "test_" + std::to_string(i);
    token_counts[i] = sequences[i].size();
  }
  return summarize(alms.authors, truth, token_counts, attribute_batch_tokens(alms, sequences, ids, jobs));
}

EvaluationReport summarize(std::span<const std::string> authors, std::span<const std::size_t> truth,
                           std::span<const std::size_t> token_counts, std::vector<BatchItem> predictions) {
  if (truth.size() != predictions.size() || token_counts.size() != predictions.size()) {
    throw Error("prediction count does not match text count");
  }
  const std::size_t n = authors.size();
  EvaluationReport report;
  report.authors.assign(authors.begin(), authors.end());
  report.predictions = std::move(predictions);
  report.confusion.assign(n, std::vector<std::size_t>(n, 0));
  report.unscored.assign(n, 0);

  std::vector<AuthorAccuracy> rows(n);
  for (std::size_t a = 0; a < n; ++a) rows[a].author = authors[a];
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= n) throw Error("true author index out of range");
    AuthorAccuracy& row = rows[truth[i]];
    ++row.text_count;
    row.token_count += token_counts[i];
    const BatchItem& item = report.predictions[i];
    if (!item.result) {
      ++row.skipped;
      ++report.unscored[truth[i]];
      continue;
    }
    const std::size_t pred = item.result->predicted_index;
    if (pred >= n) throw Error("predicted author index out of range");
    ++report.confusion[truth[i]][pred];
    if (pred == truth[i]) ++row.correct;
  }

  double sum = 0.0;
  for (AuthorAccuracy& row : rows) {
    if (row.text_count == 0) continue;
    row.accuracy = static_cast<double>(row.correct) / static_cast<double>(row.text_count);
    row.mean_tokens_per_text = static_cast<double>(row.token_count) / static_cast<double>(row.text_count);
    sum += row.accuracy;
    report.per_author.push_back(row);
  }
  if (report.per_author.empty()) throw Error("no test texts to evaluate");
  report.macro_avg_accuracy = sum / static_cast<double>(report.per_author.size());
  return report;
}

EvaluationReport evaluate(const AlmSet& alms, std::span<const LabelledText> test, int jobs) {
  std::vector<std::string> labels(test.size());
  std::vector<TokenSequence> seqs(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    labels[i] = test[i].author;
    seqs[i] = alms.vocab.encode(test[i].text);
  }
  return evaluate_tokens(alms, labels, seqs, jobs);
}

AblationCurve ablate(const AlmSet& alms, std::span<const LabelledText> test, std::span<const std::size_t> grid,
                     int jobs) {
  if (grid.empty()) throw Error("ablation grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 2) throw Error("ablation lengths must be at least 2");
    if (i > 0 && grid[i] <= grid[i - 1]) throw Error("ablation grid must be strictly ascending");
  }
  std::vector<std::string> labels(test.size());
  std::vector<TokenSequence> full(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    labels[i] = test[i].author;
    full[i] = alms.vocab.encode(test[i].text);
  }
  AblationCurve curve;
  curve.grid.assign(grid.begin(), grid.end());
  for (std::size_t L : grid) {
    std::vector<TokenSequence> cut(full.size());
    for (std::size_t i = 0; i < full.size(); ++i) cut[i] = full[i].prefix(L);
    const EvaluationReport r = evaluate_tokens(alms, labels, cut, jobs);
    curve.points.push_back(r.macro_avg_accuracy);
    curve.skipped.push_back(r.total_skipped());
  }
  return curve;
}

DatasetStats dataset_stats(const Dataset& dataset, const Vocab& vocab) {
  DatasetStats s;
  s.authors = dataset.authors().size();
  s.texts = dataset.records().size();
  std::size_t test_texts = 0, test_tokens = 0;
  for (const Record& r : dataset.records()) {
    const std::size_t t = vocab.encode(r.text).size();
    s.tokens += t;
    if (r.split == Split::kTest) {
      ++test_texts;
      test_tokens += t;
    }
  }
  if (s.authors > 0) s.texts_per_author = static_cast<double>(s.texts) / static_cast<double>(s.authors);
  if (test_texts > 0) s.mean_test_tokens = static_cast<double>(test_tokens) / static_cast<double>(test_texts);
  return s;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("spearman: length mismatch");
  if (x.size() < 2) return 0.0;
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

void write_report_csv(const EvaluationReport& report, std::ostream& out) {
  out << "author,text_count,token_count,mean_tokens_per_text,accuracy_pct,skipped\n";
  double pct_sum = 0.0;
  std::size_t texts = 0, tokens = 0, skipped = 0;
  for (const AuthorAccuracy& row : report.per_author) {
    const double pct = 100.0 * static_cast<double>(row.correct) / static_cast<double>(row.text_count);
    pct_sum += pct;
    texts += row.text_count;
    tokens += row.token_count;
    skipped += row.skipped;
    out << csv_field(row.author) << ',' << row.text_count << ',' << row.token_count << ','
        << fmt(row.mean_tokens_per_text) << ',' << fmt(pct) << ',' << row.skipped << '\n';
  }
  const double macro_pct = report.per_author.empty() ? 0.0 : pct_sum / static_cast<double>(report.per_author.size());
  const double mean_tokens = texts == 0 ? 0.0 : static_cast<double>(tokens) / static_cast<double>(texts);
  out << "MACRO_AVG," << texts << ',' << tokens << ',' << fmt(mean_tokens) << ',' << fmt(macro_pct) << ','
      << skipped << '\n';
}

void write_confusion_csv(const EvaluationReport& report, std::ostream& out) {
  const bool any_unscored = report.total_skipped() > 0;
  out << "true\\predicted";
  for (const std::string& a : report.authors) out << ',' << csv_field(a);
  if (any_unscored) out << ",UNSCORED";
  out << '\n';
  for (std::size_t i = 0; i < report.authors.size(); ++i) {
    out << csv_field(report.authors[i]);
    for (std::size_t c : report.confusion[i]) out << ',' << c;
    if (any_unscored) out << ',' << report.unscored[i];
    out << '\n';
  }
}

void write_ablation_csv(const AblationCurve& curve, std::ostream& out) {
  out << "length,macro_avg_accuracy,skipped\n";
  for (std::size_t i = 0; i < curve.grid.size(); ++i) {
    out << curve.grid[i] << ',' << fmt(curve.points[i]) << ',' << curve.skipped[i] << '\n';
  }
}

void write_stats_csv(const DatasetStats& s, std::ostream& out) {
  out << "A,T,TK,T/A,TTL\n";
  out << s.authors << ',' << s.texts << ',' << s.tokens << ',' << fmt(s.texts_per_author) << ','
      << fmt(s.mean_test_tokens) << '\n';
}

std::vector<std::size_t> parse_grid(std::string_view text) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string_view item = text.substr(pos, comma - pos);
    std::size_t v = 0;
    const auto r = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || r.ec != std::errc{} || r.ptr != item.data() + item.size()) {
      throw Error("bad grid entry '" + std::string(item) + "'");
    }
    out.push_back(v);
    pos = comma + 1;
  }
  return out;
}

}  // namespace alm
