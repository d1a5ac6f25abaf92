#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "alm/model.hpp"
#include "alm/tokenizer.hpp"

namespace alm {

class Dataset;

inline constexpr int kAlmSetFormatVersion = 1;

struct TrainingConfig {
  std::uint32_t vocab_size = 512;  // BPE target; the trained vocab may be smaller
  std::uint32_t context_len = 128;
  std::uint32_t d_model = 64;
  std::uint32_t n_layers = 2;
  std::uint32_t n_heads = 4;
  std::uint32_t d_ff = 256;

  std::uint32_t pretrain_epochs = 4;
  std::uint32_t finetune_epochs = 100;
  std::uint32_t batch_size = 8;  // windows per optimizer step
  double lr_pretrain = 3e-4;
  double lr_finetune = 3e-4;
  std::uint64_t seed = 0;
  std::uint32_t stride = 0;  // packing stride in tokens; 0 means context_len

  void validate() const;
  ModelConfig model_config(std::uint32_t actual_vocab_size) const;
  std::uint32_t effective_stride() const { return stride == 0 ? context_len : stride; }

  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

// JSON object with one key per TrainingConfig field.
std::string training_config_to_json(const TrainingConfig& config);
// Overrides the fields present in `json` (an object); unknown keys and wrong
// types are errors.
TrainingConfig merge_training_config(TrainingConfig base, std::string_view json);

// Per-epoch progress lines go here when non-null.
struct TrainingHooks {
  std::ostream* log = nullptr;
  int jobs = 1;
};

// The author models plus everything needed to score against them.
struct AlmSet {
  std::vector<std::string> authors;
  std::vector<Model> models;  // index-aligned with authors
  Vocab vocab;
  Model base;
  TrainingConfig config;
  std::string dataset_fingerprint;

  std::size_t size() const noexcept { return authors.size(); }
  std::size_t author_index(std::string_view label) const;  // throws if unknown
};

// Non-overlapping (or `stride`-spaced) windows of at most `window` tokens over
// the concatenation of `texts`; windows shorter than 2 tokens are dropped.
std::vector<TokenSequence> pack_windows(std::span<const TokenSequence> texts, std::size_t window,
                                        std::size_t stride);

// Mean next-token CE over packed windows, token-weighted.
double corpus_cross_entropy(const Model& model, std::span<const TokenSequence> texts,
                            std::size_t stride = 0);

// Shared starting point for every author: init_model(seed) trained for
// pretrain_epochs on the pooled corpus.
Model pretrain_base(std::span<const TokenSequence> pooled, const ModelConfig& model_config,
                    const TrainingConfig& config, const TrainingHooks& hooks = {});

// Copy of base trained for finetune_epochs on one author's packed stream,
// shuffled with seed ^ author_index. The base is not modified.
Model finetune_author(const Model& base, std::span<const TokenSequence> corpus,
                      const TrainingConfig& config, std::size_t author_index,
                      std::string_view author_label, const TrainingHooks& hooks = {});

// Vocab (unless given) → base → one fine-tune per dataset author, in dataset
// author order.
AlmSet build_alm_set(const Dataset& dataset, const TrainingConfig& config,
                     const TrainingHooks& hooks = {}, std::optional<Vocab> vocab = std::nullopt);

// Directory with vocab.almvocab, base.almm, author_<label>.almm and
// manifest.json. Output bytes depend only on the set's contents.
void save_alm_set(const AlmSet& alms, const std::filesystem::path& dir);
AlmSet load_alm_set(const std::filesystem::path& dir);

// File name used for an author's model inside the directory.
std::string author_model_filename(std::string_view label);

}  // namespace alm
