#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace alm {

using TokenId = std::uint32_t;

inline constexpr std::size_t kByteTokens = 256;

// Ordered token ids produced under one vocab.
struct TokenSequence {
  std::vector<TokenId> ids;

  std::size_t size() const noexcept { return ids.size(); }
  bool empty() const noexcept { return ids.empty(); }
  std::span<const TokenId> span() const noexcept { return ids; }

  // First min(n, size()) tokens.
  TokenSequence prefix(std::size_t n) const;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

struct Merge {
  TokenId left = 0;
  TokenId right = 0;
  TokenId id = 0;

  friend bool operator==(const Merge&, const Merge&) = default;
};

// Byte-level BPE vocabulary: 256 byte tokens plus an ordered merge table.
// Immutable once built; encode/decode are safe to call concurrently.
class Vocab {
 public:
  // Byte-only vocab (no merges).
  Vocab();

  // Validates that merge i creates id 256 + i from two existing ids.
  static Vocab from_merges(std::vector<Merge> merges);

  std::size_t size() const noexcept { return kByteTokens + merges_.size(); }
  const std::vector<Merge>& merges() const noexcept { return merges_; }
  const std::string& token_bytes(TokenId id) const { return bytes_.at(id); }

  // Applies merges in learned order until no learned pair remains.
  TokenSequence encode(std::string_view text) const;

  // Throws alm::Error naming the first out-of-range position.
  std::string decode(const TokenSequence& tokens) const;

  // Vocab restricted to its first k merges.
  Vocab with_first_merges(std::size_t k) const;

  // "ALMVOCAB 1" text format.
  std::string serialize() const;
  static Vocab parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.merges_ == b.merges_; }

 private:
  std::vector<Merge> merges_;
  std::vector<std::string> bytes_;
  std::unordered_map<std::uint64_t, std::uint32_t> rank_;
};

// Greedy BPE training on raw bytes. Picks the most frequent adjacent pair each
// round; ties go to the lexicographically smaller merged byte string. Stops at
// target_vocab_size or when no pair occurs at least twice.
Vocab train_bpe(std::span<const std::string> corpus, std::size_t target_vocab_size);

}  // namespace alm
