// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dsner/corpus.hpp"

namespace dsner {

// Typed phrase list used for distant labeling. Entry order is significant:
// it breaks ties between equally long matches.
class Gazetteer {
 public:
  struct Entry {
    std::vector<std::string> phrase;
    std::string type;
  };

  // Duplicate (phrase, type) pairs are collapsed; returns false in that case.
  bool add(std::vector<std::string> phrase, std::string type);

  // "phrase TAB type" per line; phrase tokens separated by spaces.
  static Gazetteer load(const std::filesystem::path& path);
  static Gazetteer parse(std::string_view text, const std::string& source);

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Entry indices whose first token equals `token` (lowercased key when !case_sensitive).
  const std::vector<std::size_t>& candidates(const std::string& token,
                                             bool case_sensitive) const;

  std::vector<std::string> types() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_first_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_first_lower_;
};

std::string ascii_lower(std::string_view s);

// Greedy leftmost-longest matching. Tokens inside a match take the entry's
// type, all others get O. Throws SchemaError if a gazetteer type is not in
// the scheme.
std::vector<LabelAssignment> match_gazetteer(std::span<const Sentence> corpus,
                                             const Gazetteer& gaz, const TagScheme& scheme,
                                             bool case_sensitive = true);

struct AmbiguousPhrase {
  std::string phrase;
  std::vector<std::string> types;
};

// Phrases listed under more than one type, most conflicting first.
std::vector<AmbiguousPhrase> ambiguity_report(const Gazetteer& gaz);

}  // namespace dsner
