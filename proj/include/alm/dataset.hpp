#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace alm {

enum class Split { kTrain, kTest };

std::string_view split_name(Split s) noexcept;

struct Record {
  std::string author;
  Split split = Split::kTrain;
  std::string text;

  friend bool operator==(const Record&, const Record&) = default;
};

// Labelled texts with authors in first-appearance order and an order-free
// content fingerprint.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<Record> records);

  const std::vector<std::string>& authors() const noexcept { return authors_; }
  const std::vector<Record>& records() const noexcept { return records_; }
  const std::string& fingerprint() const noexcept { return fingerprint_; }

  std::vector<std::string> texts(std::string_view author, Split split) const;
  std::vector<const Record*> records_of(Split split) const;
  std::size_t count(std::string_view author, Split split) const;
  // Authors with no training record, in author order.
  std::vector<std::string> authors_without_training() const;

  friend bool operator==(const Dataset& a, const Dataset& b) { return a.records_ == b.records_; }

 private:
  std::vector<std::string> authors_;
  std::vector<Record> records_;
  std::string fingerprint_;
};

// Hash of the sorted, length-prefixed (author, split, text) triples.
std::string dataset_fingerprint(const std::vector<Record>& records);

// JSONL: {"author": ..., "split": "train"|"test", "text": ...} per line.
// Warnings (authors without training data) go to `warnings` when non-null.
Dataset load_dataset(const std::filesystem::path& path, std::ostream* warnings = nullptr);
Dataset parse_dataset(std::istream& in, std::ostream* warnings = nullptr);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
void write_dataset(const Dataset& dataset, std::ostream& out);

struct SynthOptions {
  std::size_t shared_function_words = 24;
  std::size_t content_pool = 200;    // pseudo-words all authors draw from
  std::size_t content_per_author = 100;
  double successor_mass = 0.25;  // transition mass on each word's preferred successors
  std::size_t min_words = 40;
  std::size_t max_words = 120;
  double test_fraction = 0.2;
};

// Author-specific first-order Markov processes over a shared function-word
// pool and per-author content-word inventories; the first 80% of each
// author's texts are train, the rest test. Deterministic per seed.
Dataset synth_corpus(std::size_t n_authors, std::size_t texts_per_author, std::uint64_t seed,
                     const SynthOptions& options = {});

// Word inventory an author's process draws from (for overlap checks).
std::vector<std::string> synth_author_inventory(std::size_t author, std::uint64_t seed,
                                                const SynthOptions& options = {});

// Keeps ceil(fraction · n) training texts per author (seeded uniform sample,
// original order preserved); test records untouched.
Dataset downsample(const Dataset& dataset, double fraction, std::uint64_t seed);

// CSV with a header containing `text` and `label` columns (RFC 4180 quoting).
std::vector<Record> read_labelled_csv(std::istream& in, Split split);
std::vector<Record> import_csv(const std::filesystem::path& path, Split split);

}  // namespace alm
