#include "mefa/encoders/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <system_error>

#include "mefa/errors.hpp"

namespace mefa {

Vocabulary::Vocabulary() {
  words_.emplace_back(kUnkToken);
  index_.emplace(words_.back(), kUnk);
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  Vocabulary v;
  for (const auto& w : words) {
    if (w == kUnkToken || v.index_.count(w)) continue;
    v.index_.emplace(w, v.words_.size());
    v.words_.push_back(w);
  }
  return v;
}

Vocabulary Vocabulary::from_captions(const std::vector<Caption>& captions) {
  std::set<std::string> unique;
  for (const auto& c : captions) unique.insert(c.tokens.begin(), c.tokens.end());
  return from_words(std::vector<std::string>(unique.begin(), unique.end()));
}

std::size_t Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::system_error(errno, std::generic_category(), "cannot write " + path);
  for (const auto& w : words_) out << w << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::system_error(errno, std::generic_category(), "cannot open " + path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) words.push_back(line);
  }
  if (words.empty() || words[0] != kUnkToken) throw InputError(path + ": vocabulary must start with " + std::string(kUnkToken));
  return from_words(words);
}

}  // namespace mefa
