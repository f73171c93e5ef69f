// SPDX-License-Identifier: Apache-2.0
#include "tbps/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "tbps/error.hpp"

namespace tbps {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

TokenSeq tokenize(std::string_view text) {
  TokenSeq seq;
  std::string cur;
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isalnum(uc) || uc >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!cur.empty()) {
      seq.tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) seq.tokens.push_back(std::move(cur));
  return seq;
}

std::string join_tokens(const TokenSeq& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += seq.tokens[i];
  }
  return out;
}

TokenSeq truncate(TokenSeq seq, std::size_t max_len) {
  if (seq.tokens.size() > max_len) seq.tokens.resize(max_len);
  return seq;
}

void Lexicon::add(std::string_view word, std::span<const std::string> synonyms) {
  const std::string key = lower(word);
  auto& list = entries_[key];
  for (const auto& s : synonyms) {
    std::string syn = lower(trim(s));
    if (syn.empty() || syn == key) continue;
    if (std::find(list.begin(), list.end(), syn) == list.end()) list.push_back(syn);
  }
  if (list.empty()) entries_.erase(key);
}

std::span<const std::string> Lexicon::synonyms(std::string_view word) const {
  const auto it = entries_.find(lower(word));
  if (it == entries_.end()) return {};
  return it->second;
}

Lexicon Lexicon::parse(std::istream& in) {
  Lexicon lex;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw Error(ErrorCode::ParseError,
                  "lexicon line " + std::to_string(line_no) + ": expected word<TAB>synonyms");
    std::vector<std::string> syns;
    std::stringstream ss(line.substr(tab + 1));
    std::string item;
    while (std::getline(ss, item, ',')) syns.push_back(item);
    lex.add(trim(line.substr(0, tab)), syns);
  }
  return lex;
}

Lexicon Lexicon::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open lexicon '" + path + "'");
  return parse(in);
}

Lexicon Lexicon::builtin() {
  static constexpr std::string_view kEntries =
      "person\tindividual,pedestrian,figure\n"
      "pedestrian\tperson,walker\n"
      "man\tguy,gentleman\n"
      "woman\tlady,female\n"
      "wearing\twears,sporting,dressed in\n"
      "wears\tis wearing,has on\n"
      "carrying\tholding,toting\n"
      "shirt\ttee,top\n"
      "jacket\twindbreaker,blazer\n"
      "coat\tovercoat,parka\n"
      "pants\ttrousers,slacks\n"
      "shorts\ttrunks\n"
      "skirt\tkilt\n"
      "backpack\tknapsack,rucksack\n"
      "hat\tcap,beanie\n"
      "handbag\tpurse,bag\n"
      "shoes\tsneakers,footwear\n"
      "red\tcrimson,scarlet\n"
      "blue\tnavy,azure\n"
      "green\temerald,olive\n"
      "yellow\tgolden,lemon\n"
      "black\tdark,ebony\n"
      "white\tpale,ivory\n"
      "purple\tviolet,lilac\n"
      "orange\tamber,tangerine\n"
      "short\tbrief,small\n"
      "long\tlengthy\n";
  std::istringstream in{std::string(kEntries)};
  return parse(in);
}

Vocab::Vocab() : words_{std::string(kUnkToken)} { index_.emplace(words_[0], kUnk); }

Vocab Vocab::build(std::span<const TokenSeq> corpus) {
  std::set<std::string> distinct;
  for (const auto& seq : corpus)
    for (const auto& t : seq.tokens) distinct.insert(t);
  distinct.erase(std::string(kUnkToken));
  return from_words(std::vector<std::string>(distinct.begin(), distinct.end()));
}

Vocab Vocab::from_words(std::vector<std::string> words) {
  Vocab v;
  for (auto& w : words) {
    if (w == kUnkToken || v.index_.count(w)) continue;
    v.index_.emplace(w, v.words_.size());
    v.words_.push_back(std::move(w));
  }
  return v;
}

std::size_t Vocab::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::size_t> Vocab::encode(const TokenSeq& seq) const {
  std::vector<std::size_t> ids;
  ids.reserve(seq.tokens.size());
  for (const auto& t : seq.tokens) ids.push_back(id(t));
  return ids;
}

}  // namespace tbps
