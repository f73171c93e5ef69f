// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tbps {

inline constexpr std::size_t kMaxTokens = 77;

struct TokenSeq {
  std::vector<std::string> tokens;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;
};

/// Lowercases, turns punctuation into whitespace and splits.
TokenSeq tokenize(std::string_view text);
std::string join_tokens(const TokenSeq& seq);
/// Truncates to kMaxTokens.
TokenSeq truncate(TokenSeq seq, std::size_t max_len = kMaxTokens);

/// Word -> synonyms map with case-insensitive lookup.
///
/// File format: one entry per line, `word<TAB>syn1,syn2,...`; blank lines and
/// lines starting with '#' are ignored.
class Lexicon {
 public:
  Lexicon() = default;

  static Lexicon parse(std::istream& in);
  static Lexicon load(const std::string& path);
  /// Small lexicon covering the synthetic corpus vocabulary.
  static Lexicon builtin();

  void add(std::string_view word, std::span<const std::string> synonyms);
  /// Empty span when the word has no synonyms.
  std::span<const std::string> synonyms(std::string_view word) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, std::vector<std::string>, std::less<>> entries_;
};

/// Token vocabulary; id 0 is reserved for unknown tokens.
class Vocab {
 public:
  static constexpr std::size_t kUnk = 0;
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocab();
  /// Sorted distinct tokens of the corpus, after the UNK entry.
  static Vocab build(std::span<const TokenSeq> corpus);
  static Vocab from_words(std::vector<std::string> words);

  std::size_t id(std::string_view token) const;
  std::vector<std::size_t> encode(const TokenSeq& seq) const;
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.words_ == b.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace tbps
