#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mefa/encoders/caption.hpp"

namespace mefa {

/// Token ↔ id table. Id 0 is the reserved unknown-word slot.
class Vocabulary {
 public:
  static constexpr std::size_t kUnk = 0;
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();
  /// Sorted unique tokens of the given captions.
  static Vocabulary from_captions(const std::vector<Caption>& captions);
  static Vocabulary from_words(const std::vector<std::string>& words);

  std::size_t size() const { return words_.size(); }
  std::size_t id(std::string_view token) const;
  const std::string& word(std::size_t id) const { return words_.at(id); }
  const std::vector<std::string>& words() const { return words_; }

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace mefa
