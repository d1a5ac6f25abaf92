#include "alm/tokenizer.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <queue>
#include <sstream>

#include "alm/error.hpp"

namespace alm {
namespace {

constexpr std::string_view kVocabMagic = "ALMVOCAB 1";

inline std::uint64_t pair_key(TokenId left, TokenId right) noexcept {
  return (static_cast<std::uint64_t>(left) << 32) | right;
}

// Replaces every non-overlapping (left, right) occurrence, scanning left to right.
void merge_in_place(std::vector<TokenId>& seq, TokenId left, TokenId right, TokenId id) {
  std::size_t out = 0;
  for (std::size_t i = 0; i < seq.size();) {
    if (i + 1 < seq.size() && seq[i] == left && seq[i + 1] == right) {
      seq[out++] = id;
      i += 2;
    } else {
      seq[out++] = seq[i++];
    }
  }
  seq.resize(out);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TokenSequence TokenSequence::prefix(std::size_t n) const {
  TokenSequence out;
  out.ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(n, ids.size())));
  return out;
}

Vocab::Vocab() {
  bytes_.reserve(kByteTokens);
  for (std::size_t b = 0; b < kByteTokens; ++b) bytes_.emplace_back(1, static_cast<char>(b));
}

Vocab Vocab::from_merges(std::vector<Merge> merges) {
  Vocab v;
  v.merges_.reserve(merges.size());
  for (std::size_t i = 0; i < merges.size(); ++i) {
    const Merge& m = merges[i];
    const auto expected = static_cast<TokenId>(kByteTokens + i);
    if (m.id != expected) {
      throw Error("merge " + std::to_string(i) + " creates id " + std::to_string(m.id) +
                  ", expected " + std::to_string(expected));
    }
    if (m.left >= expected || m.right >= expected) {
      throw Error("merge " + std::to_string(i) + " references an undefined token");
    }
    if (!v.rank_.emplace(pair_key(m.left, m.right), static_cast<std::uint32_t>(i)).second) {
      throw Error("merge " + std::to_string(i) + " repeats an earlier pair");
    }
    v.bytes_.push_back(v.bytes_[m.left] + v.bytes_[m.right]);
    v.merges_.push_back(m);
  }
  return v;
}

Vocab Vocab::with_first_merges(std::size_t k) const {
  k = std::min(k, merges_.size());
  return from_merges({merges_.begin(), merges_.begin() + static_cast<std::ptrdiff_t>(k)});
}

TokenSequence Vocab::encode(std::string_view text) const {
  TokenSequence out;
  const std::size_t n = text.size();
  if (n == 0) return out;

  // Linked list over byte positions; a min-heap of (rank, left position)
  // reproduces applying merges in rank order, each left to right.
  std::vector<TokenId> tok(n);
  std::vector<std::size_t> next(n), prev(n);
  std::vector<char> alive(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    tok[i] = static_cast<unsigned char>(text[i]);
    next[i] = i + 1;
    prev[i] = i == 0 ? n : i - 1;
  }

  using Candidate = std::pair<std::uint32_t, std::size_t>;
  std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> heap;
  auto push = [&](std::size_t i) {
    if (i >= n || next[i] >= n) return;
    auto it = rank_.find(pair_key(tok[i], tok[next[i]]));
    if (it != rank_.end()) heap.emplace(it->second, i);
  };
  for (std::size_t i = 0; i + 1 < n; ++i) push(i);

  while (!heap.empty()) {
    const auto [rank, i] = heap.top();
    heap.pop();
    if (!alive[i] || next[i] >= n) continue;
    const Merge& m = merges_[rank];
    const std::size_t j = next[i];
    if (tok[i] != m.left || tok[j] != m.right) continue;
    tok[i] = m.id;
    alive[j] = 0;
    next[i] = next[j];
    if (next[j] < n) prev[next[j]] = i;
    if (prev[i] < n) push(prev[i]);
    push(i);
  }

  for (std::size_t i = 0; i < n; i = next[i]) out.ids.push_back(tok[i]);
  return out;
}

std::string Vocab::decode(const TokenSequence& tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    const TokenId id = tokens.ids[i];
    if (id >= bytes_.size()) {
      throw Error("token id " + std::to_string(id) + " at position " + std::to_string(i) +
                  " is outside vocab of size " + std::to_string(bytes_.size()));
    }
    out += bytes_[id];
  }
  return out;
}

std::string Vocab::serialize() const {
  std::string out;
  out.reserve(16 + merges_.size() * 16);
  out += kVocabMagic;
  out += '\n';
  out += std::to_string(merges_.size());
  out += '\n';
  for (const Merge& m : merges_) {
    out += std::to_string(m.left) + ' ' + std::to_string(m.right) + ' ' + std::to_string(m.id);
    out += '\n';
  }
  return out;
}

Vocab Vocab::parse(std::string_view text) {
  std::vector<std::string_view> lines;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    lines.push_back(text.substr(0, nl));
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
  if (lines.empty() || lines[0] != kVocabMagic) throw Error("vocab: bad header, expected 'ALMVOCAB 1'");
  if (lines.size() < 2) throw Error("vocab: missing merge count");

  auto parse_u32 = [](std::string_view s, std::size_t line) {
    std::uint32_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
      throw Error("vocab: line " + std::to_string(line) + ": bad integer '" + std::string(s) + "'");
    }
    return v;
  };
  const std::uint32_t count = parse_u32(lines[1], 2);
  if (lines.size() != 2 + static_cast<std::size_t>(count)) {
    throw Error("vocab: expected " + std::to_string(count) + " merges, found " +
                std::to_string(lines.size() - 2));
  }
  std::vector<Merge> merges;
  merges.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::string_view line = lines[2 + i];
    const std::size_t lineno = 3 + i;
    const auto s1 = line.find(' ');
    const auto s2 = s1 == std::string_view::npos ? s1 : line.find(' ', s1 + 1);
    if (s2 == std::string_view::npos) throw Error("vocab: line " + std::to_string(lineno) + ": expected 3 fields");
    merges.push_back({parse_u32(line.substr(0, s1), lineno),
                      parse_u32(line.substr(s1 + 1, s2 - s1 - 1), lineno),
                      parse_u32(line.substr(s2 + 1), lineno)});
  }
  return from_merges(std::move(merges));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << serialize();
  if (!out) throw Error("write failed: " + path.string());
}

Vocab Vocab::load(const std::filesystem::path& path) { return parse(read_file(path)); }

Vocab train_bpe(std::span<const std::string> corpus, std::size_t target_vocab_size) {
  if (corpus.empty()) throw Error("train_bpe: corpus is empty");
  if (target_vocab_size < kByteTokens) {
    throw Error("train_bpe: target vocab size " + std::to_string(target_vocab_size) +
                " is below the 256-token byte floor");
  }

  std::vector<std::vector<TokenId>> seqs;
  seqs.reserve(corpus.size());
  for (const std::string& text : corpus) {
    seqs.emplace_back(text.begin(), text.end());
    for (auto& t : seqs.back()) t &= 0xffu;
  }

  std::vector<Merge> merges;
  std::vector<std::string> bytes;
  for (std::size_t b = 0; b < kByteTokens; ++b) bytes.emplace_back(1, static_cast<char>(b));

  // Dense counts while the table stays small, hashed counts beyond that.
  const bool dense = target_vocab_size <= 2048;
  std::vector<std::uint32_t> dense_counts(dense ? target_vocab_size * target_vocab_size : 0);
  std::unordered_map<std::uint64_t, std::uint64_t> sparse_counts;

  while (kByteTokens + merges.size() < target_vocab_size) {
    std::uint64_t best_count = 0;
    TokenId best_left = 0, best_right = 0;
    std::string best_bytes;
    auto consider = [&](TokenId l, TokenId r, std::uint64_t c) {
      if (c < best_count) return;
      std::string merged = bytes[l] + bytes[r];
      if (c > best_count || merged < best_bytes) {
        best_count = c;
        best_left = l;
        best_right = r;
        best_bytes = std::move(merged);
      }
    };

    const std::size_t cur = kByteTokens + merges.size();
    if (dense) {
      std::fill(dense_counts.begin(), dense_counts.end(), 0u);
      for (const auto& s : seqs) {
        for (std::size_t i = 0; i + 1 < s.size(); ++i) ++dense_counts[s[i] * target_vocab_size + s[i + 1]];
      }
      for (std::size_t l = 0; l < cur; ++l) {
        for (std::size_t r = 0; r < cur; ++r) {
          const std::uint32_t c = dense_counts[l * target_vocab_size + r];
          if (c >= 2 && c >= best_count) consider(static_cast<TokenId>(l), static_cast<TokenId>(r), c);
        }
      }
    } else {
      sparse_counts.clear();
      for (const auto& s : seqs) {
        for (std::size_t i = 0; i + 1 < s.size(); ++i) ++sparse_counts[pair_key(s[i], s[i + 1])];
      }
      for (const auto& [key, c] : sparse_counts) {
        if (c >= 2 && c >= best_count) {
          consider(static_cast<TokenId>(key >> 32), static_cast<TokenId>(key & 0xffffffffu), c);
        }
      }
    }

    if (best_count < 2) break;
    const auto id = static_cast<TokenId>(cur);
    merges.push_back({best_left, best_right, id});
    bytes.push_back(std::move(best_bytes));
    for (auto& s : seqs) merge_in_place(s, best_left, best_right, id);
  }
  return Vocab::from_merges(std::move(merges));
}

}  // namespace alm
