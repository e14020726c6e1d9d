// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dsner {

// A tokenized input sequence with per-token surface flags.
struct Sentence {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<std::uint8_t> is_capitalized;
  std::vector<std::uint8_t> is_subword;

  std::size_t size() const { return tokens.size(); }

  // Builds flags from surface forms; is_subword defaults to false.
  static Sentence from_tokens(std::string id, std::vector<std::string> tokens);
};

// True if the first code point of `token` is an uppercase letter.
bool is_capitalized(std::string_view token);

// IO tag set. Class 0 is always "O"; entity type k maps to class k + 1.
class TagScheme {
 public:
  static constexpr int kOutside = 0;
  static constexpr std::string_view kOutsideName = "O";

  TagScheme() = default;
  explicit TagScheme(std::vector<std::string> entity_types);

  std::size_t class_count() const { return entity_types_.size() + 1; }
  std::size_t entity_count() const { return entity_types_.size(); }
  const std::vector<std::string>& entity_types() const { return entity_types_; }

  // Throws SchemaError for unknown names.
  int index_of(std::string_view name) const;
  std::optional<int> find(std::string_view name) const;
  const std::string& name(int cls) const;
  static bool is_entity(int cls) { return cls != kOutside; }

  bool operator==(const TagScheme& other) const {
    return entity_types_ == other.entity_types_;
  }

 private:
  std::vector<std::string> entity_types_;
  std::unordered_map<std::string, int> index_;
  std::string outside_name_{kOutsideName};
};

// Per-token labels, removal weights w_i in {0,1}, and the inclusion flag set by
// non-entity dropping. Tokens with included == 0 never contribute to a loss.
struct LabelAssignment {
  std::vector<int> labels;
  std::vector<std::uint8_t> weight;
  std::vector<std::uint8_t> included;

  std::size_t size() const { return labels.size(); }
  static LabelAssignment from_labels(std::vector<int> labels);
  bool contributes(std::size_t i) const { return weight[i] != 0 && included[i] != 0; }
};

struct LabeledSentence {
  Sentence sentence;
  std::optional<LabelAssignment> labels;
};

// Column format: one token per line with an optional TAB-separated label,
// blank line between sequences. max_length == 0 disables the length check.
std::vector<LabeledSentence> read_column_corpus(const std::filesystem::path& path,
                                                const TagScheme& scheme,
                                                std::size_t max_length = 0);

// Same, from an in-memory buffer; `source` names the buffer in errors and ids.
std::vector<LabeledSentence> parse_column_corpus(std::string_view text,
                                                 const std::string& source,
                                                 const TagScheme& scheme,
                                                 std::size_t max_length = 0);

void write_column_corpus(std::span<const LabeledSentence> seqs,
                         const std::filesystem::path& path, const TagScheme& scheme);

// Entity type names found in the label column, in first-seen order.
std::vector<std::string> scan_entity_types(const std::filesystem::path& path);

std::vector<Sentence> sentences_of(std::span<const LabeledSentence> seqs);

}  // namespace dsner
