#include "alm/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "alm/error.hpp"
#include "alm/hash.hpp"

namespace alm {
namespace {

void append_len_prefixed(std::string& out, std::string_view s) {
  const std::uint64_t n = s.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((n >> (8 * i)) & 0xffu));
  out += s;
}

Split parse_split(std::string_view s, std::size_t line) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw Error("line " + std::to_string(line) + ": unknown split '" + std::string(s) +
              "' (expected train or test)");
}

constexpr std::array<std::string_view, 40> kFunctionWords = {
    "the",  "of",   "and",  "to",    "a",    "in",   "that", "is",   "was",  "it",
    "for",  "on",   "with", "as",    "but",  "at",   "by",   "from", "this", "be",
    "or",   "not",  "are",  "his",   "her",  "they", "we",   "you",  "had",  "have",
    "which", "one", "all",  "there", "when", "so",   "if",   "an",   "were", "what"};

constexpr std::array<std::string_view, 20> kOnsets = {"b", "c", "d", "f", "g", "h", "j", "k", "l", "m",
                                                      "n", "p", "r", "s", "t", "v", "w", "z", "st", "tr"};
constexpr std::array<std::string_view, 8> kVowels = {"a", "e", "i", "o", "u", "ai", "ou", "ea"};
constexpr std::array<std::string_view, 8> kCodas = {"", "", "n", "r", "l", "s", "th", "nd"};

std::vector<std::string> content_pool(std::uint64_t seed, std::size_t size) {
  std::mt19937_64 rng(seed ^ 0x5eedc0de5eedc0deULL);
  std::set<std::string> seen(kFunctionWords.begin(), kFunctionWords.end());
  std::vector<std::string> pool;
  while (pool.size() < size) {
    const std::size_t syllables = 1 + rng() % 3;
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) {
      w += kOnsets[rng() % kOnsets.size()];
      w += kVowels[rng() % kVowels.size()];
    }
    w += kCodas[rng() % kCodas.size()];
    if (seen.insert(w).second) pool.push_back(std::move(w));
  }
  return pool;
}

std::mt19937_64 author_rng(std::uint64_t seed, std::size_t author) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(author), 0x41u};
  return std::mt19937_64(seq);
}

// One author's generative process.
struct AuthorProcess {
  std::vector<std::string> words;  // function words first, then content words
  std::vector<std::discrete_distribution<std::size_t>> next;
  std::discrete_distribution<std::size_t> start;
  double comma_rate = 0.0;
  double sentence_end_rate = 0.0;
};

AuthorProcess make_process(std::size_t author, std::uint64_t seed, const SynthOptions& o,
                           const std::vector<std::string>& pool) {
  std::mt19937_64 rng = author_rng(seed, author);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::gamma_distribution<double> sparse(0.4, 1.0);

  AuthorProcess p;
  const std::size_t nf = std::min(o.shared_function_words, kFunctionWords.size());
  for (std::size_t i = 0; i < nf; ++i) p.words.emplace_back(kFunctionWords[i]);
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t nc = std::min(o.content_per_author, pool.size());
  for (std::size_t i = 0; i < nc; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
    p.words.push_back(pool[idx[i]]);
  }

  const std::size_t n = p.words.size();
  const double function_rate = 0.35 + 0.2 * unit(rng);
  std::vector<double> function_w(nf), content_w(nc);
  for (auto& w : function_w) w = sparse(rng) + 1e-3;
  for (std::size_t i = 0; i < nc; ++i) content_w[i] = 1.0 / static_cast<double>(i + 1);
  const double fsum = std::accumulate(function_w.begin(), function_w.end(), 0.0);
  const double csum = std::accumulate(content_w.begin(), content_w.end(), 0.0);

  for (std::size_t w = 0; w < n; ++w) {
    std::vector<double> weights(n, 0.0);
    const double rest = 1.0 - o.successor_mass;
    for (std::size_t i = 0; i < nf; ++i) weights[i] = rest * function_rate * function_w[i] / fsum;
    for (std::size_t i = 0; i < nc; ++i) weights[nf + i] = rest * (1.0 - function_rate) * content_w[i] / csum;
    for (int k = 0; k < 3; ++k) weights[rng() % n] += o.successor_mass / 3.0;
    p.next.emplace_back(weights.begin(), weights.end());
  }
  std::vector<double> start(n);
  for (auto& s : start) s = sparse(rng) + 1e-3;
  p.start = std::discrete_distribution<std::size_t>(start.begin(), start.end());
  p.comma_rate = 0.03 + 0.12 * unit(rng);
  p.sentence_end_rate = 0.05 + 0.1 * unit(rng);
  return p;
}

std::string generate_text(AuthorProcess& p, std::mt19937_64& rng, std::size_t words) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::string out;
  std::size_t w = p.start(rng);
  bool sentence_start = true;
  for (std::size_t i = 0; i < words; ++i) {
    std::string word = p.words[w];
    if (sentence_start) word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
    if (!out.empty()) out += ' ';
    out += word;
    sentence_start = false;
    if (i + 1 == words || unit(rng) < p.sentence_end_rate) {
      out += '.';
      sentence_start = true;
      w = p.start(rng);
      continue;
    }
    if (unit(rng) < p.comma_rate) out += ',';
    w = p.next[w](rng);
  }
  return out;
}

std::vector<std::string> parse_csv_row(std::istream& in, bool& ok) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false, any = false;
  ok = false;
  for (int c; (c = in.get()) != EOF;) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          field += '"';
          in.get();
        } else {
          quoted = false;
        }
      } else {
        field += static_cast<char>(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      fields.push_back(std::move(field));
      ok = true;
      return fields;
    } else if (c != '\r') {
      field += static_cast<char>(c);
    }
  }
  if (quoted) throw Error("csv: unterminated quoted field");
  if (any) {
    fields.push_back(std::move(field));
    ok = true;
  }
  return fields;
}

}  // namespace

std::string_view split_name(Split s) noexcept { return s == Split::kTrain ? "train" : "test"; }

Dataset::Dataset(std::vector<Record> records) : records_(std::move(records)) {
  std::set<std::string_view> seen;
  for (const Record& r : records_) {
    if (seen.insert(r.author).second) authors_.push_back(r.author);
  }
  fingerprint_ = dataset_fingerprint(records_);
}

std::vector<std::string> Dataset::texts(std::string_view author, Split split) const {
  std::vector<std::string> out;
  for (const Record& r : records_) {
    if (r.author == author && r.split == split) out.push_back(r.text);
  }
  return out;
}

std::vector<const Record*> Dataset::records_of(Split split) const {
  std::vector<const Record*> out;
  for (const Record& r : records_) {
    if (r.split == split) out.push_back(&r);
  }
  return out;
}

std::size_t Dataset::count(std::string_view author, Split split) const {
  return static_cast<std::size_t>(std::count_if(records_.begin(), records_.end(), [&](const Record& r) {
    return r.author == author && r.split == split;
  }));
}

std::vector<std::string> Dataset::authors_without_training() const {
  std::vector<std::string> out;
  for (const std::string& a : authors_) {
    if (count(a, Split::kTrain) == 0) out.push_back(a);
  }
  return out;
}

std::string dataset_fingerprint(const std::vector<Record>& records) {
  std::vector<std::string> canon;
  canon.reserve(records.size());
  for (const Record& r : records) {
    std::string c;
    append_len_prefixed(c, r.author);
    append_len_prefixed(c, split_name(r.split));
    append_len_prefixed(c, r.text);
    canon.push_back(std::move(c));
  }
  std::sort(canon.begin(), canon.end());
  Fnv1a64 h;
  for (const std::string& c : canon) h.update(c);
  return "fnv1a64:" + to_hex(h.digest());
}

Dataset parse_dataset(std::istream& in, std::ostream* warnings) {
  std::vector<Record> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error("line " + std::to_string(lineno) + ": malformed JSON");
    }
    if (!j.is_object()) throw Error("line " + std::to_string(lineno) + ": expected a JSON object");
    auto field = [&](const char* key) -> std::string {
      auto it = j.find(key);
      if (it == j.end() || !it->is_string()) {
        throw Error("line " + std::to_string(lineno) + ": missing string field '" + key + "'");
      }
      return it->get<std::string>();
    };
    Record r;
    r.author = field("author");
    r.split = parse_split(field("split"), lineno);
    r.text = field("text");
    if (r.author.empty()) throw Error("line " + std::to_string(lineno) + ": empty author label");
    records.push_back(std::move(r));
  }
  if (records.empty()) throw Error("no records");
  Dataset ds(std::move(records));
  if (warnings) {
    for (const std::string& a : ds.authors_without_training()) {
      *warnings << "warning: author '" << a << "' has no training records\n";
    }
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, std::ostream* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset " + path.string());
  try {
    return parse_dataset(in, warnings);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_dataset(const Dataset& dataset, std::ostream& out) {
  for (const Record& r : dataset.records()) {
    nlohmann::ordered_json j;
    j["author"] = r.author;
    j["split"] = split_name(r.split);
    j["text"] = r.text;
    out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  }
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  write_dataset(dataset, out);
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<std::string> synth_author_inventory(std::size_t author, std::uint64_t seed,
                                                const SynthOptions& options) {
  return make_process(author, seed, options, content_pool(seed, options.content_pool)).words;
}

Dataset synth_corpus(std::size_t n_authors, std::size_t texts_per_author, std::uint64_t seed,
                     const SynthOptions& o) {
  if (n_authors < 2) throw Error("synth_corpus: need at least 2 authors");
  if (o.min_words < 1 || o.max_words < o.min_words) throw Error("synth_corpus: bad text length range");
  const auto pool = content_pool(seed, o.content_pool);
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(texts_per_author) * o.test_fraction));
  std::vector<Record> records;
  records.reserve(n_authors * texts_per_author);
  for (std::size_t a = 0; a < n_authors; ++a) {
    AuthorProcess proc = make_process(a, seed, o, pool);
    std::mt19937_64 rng = author_rng(seed, a + 0x10000);
    std::uniform_int_distribution<std::size_t> length(o.min_words, o.max_words);
    const std::string label = "author_" + std::to_string(a);
    for (std::size_t t = 0; t < texts_per_author; ++t) {
      const Split split = t < texts_per_author - n_test ? Split::kTrain : Split::kTest;
      records.push_back({label, split, generate_text(proc, rng, length(rng))});
    }
  }
  return Dataset(std::move(records));
}

Dataset downsample(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("downsample: fraction must be in (0, 1]");
  std::mt19937_64 rng(seed);
  std::vector<bool> keep(dataset.records().size(), true);
  for (const std::string& author : dataset.authors()) {
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < dataset.records().size(); ++i) {
      const Record& r = dataset.records()[i];
      if (r.author == author && r.split == Split::kTrain) train.push_back(i);
    }
    const auto target = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(train.size()) - 1e-9));
    if (target == 0) throw Error("downsample: fraction leaves author '" + author + "' without training texts");
    // Partial Fisher-Yates; the first `target` entries are the sample.
    for (std::size_t i = 0; i < target; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, train.size() - 1);
      std::swap(train[i], train[pick(rng)]);
    }
    for (std::size_t i = target; i < train.size(); ++i) keep[train[i]] = false;
  }
  std::vector<Record> out;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i]) out.push_back(dataset.records()[i]);
  }
  return Dataset(std::move(out));
}

std::vector<Record> read_labelled_csv(std::istream& in, Split split) {
  bool ok = false;
  const auto header = parse_csv_row(in, ok);
  if (!ok) throw Error("csv: empty input");
  std::size_t text_col = header.size(), label_col = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    std::string h = header[i];
    if (i == 0 && h.starts_with("\xEF\xBB\xBF")) h.erase(0, 3);
    if (h == "text") text_col = i;
    if (h == "label") label_col = i;
  }
  if (text_col == header.size() || label_col == header.size()) {
    throw Error("csv: header must contain 'text' and 'label' columns");
  }
  std::vector<Record> out;
  std::size_t row = 1;
  while (true) {
    auto fields = parse_csv_row(in, ok);
    if (!ok) break;
    ++row;
    if (fields.size() == 1 && fields[0].empty()) continue;
    if (fields.size() <= std::max(text_col, label_col)) {
      throw Error("csv: row " + std::to_string(row) + " has " + std::to_string(fields.size()) + " fields");
    }
    if (fields[label_col].empty()) throw Error("csv: row " + std::to_string(row) + " has an empty label");
    out.push_back({fields[label_col], split, fields[text_col]});
  }
  return out;
}

std::vector<Record> import_csv(const std::filesystem::path& path, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return read_labelled_csv(in, split);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace alm
