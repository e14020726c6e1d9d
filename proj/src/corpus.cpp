// SPDX-License-Identifier: Apache-2.0
#include "dsner/corpus.hpp"

#include <fstream>
#include <sstream>

#include "dsner/error.hpp"

namespace dsner {

namespace {

// Decodes the first UTF-8 code point; returns 0 on malformed input.
char32_t first_code_point(std::string_view s) {
  if (s.empty()) return 0;
  const auto b0 = static_cast<unsigned char>(s[0]);
  if (b0 < 0x80) return b0;
  int extra = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    extra = 1;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    extra = 2;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    extra = 3;
    cp = b0 & 0x07;
  } else {
    return 0;
  }
  if (s.size() < static_cast<std::size_t>(extra) + 1) return 0;
  for (int k = 1; k <= extra; ++k) {
    const auto b = static_cast<unsigned char>(s[k]);
    if ((b & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (b & 0x3F);
  }
  return cp;
}

bool is_upper_code_point(char32_t c) {
  if (c >= U'A' && c <= U'Z') return true;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return true;    // Latin-1
  if (c >= 0x100 && c <= 0x17F) return (c % 2) == 0;       // Latin Extended-A pairs
  if (c >= 0x391 && c <= 0x3AB && c != 0x3A2) return true; // Greek
  if (c >= 0x400 && c <= 0x42F) return true;               // Cyrillic
  return false;
}

}  // namespace

bool is_capitalized(std::string_view token) {
  return is_upper_code_point(first_code_point(token));
}

Sentence Sentence::from_tokens(std::string id, std::vector<std::string> tokens) {
  Sentence s;
  s.id = std::move(id);
  s.is_capitalized.reserve(tokens.size());
  for (const auto& t : tokens) s.is_capitalized.push_back(dsner::is_capitalized(t) ? 1 : 0);
  s.is_subword.assign(tokens.size(), 0);
  s.tokens = std::move(tokens);
  return s;
}

TagScheme::TagScheme(std::vector<std::string> entity_types)
    : entity_types_(std::move(entity_types)) {
  for (std::size_t k = 0; k < entity_types_.size(); ++k) {
    const auto& name = entity_types_[k];
    if (name.empty()) throw SchemaError("empty entity type name");
    if (name == kOutsideName) throw SchemaError("'O' cannot be an entity type");
    if (!index_.emplace(name, static_cast<int>(k) + 1).second) {
      throw SchemaError("duplicate entity type '" + name + "'");
    }
  }
}

std::optional<int> TagScheme::find(std::string_view name) const {
  if (name == kOutsideName) return kOutside;
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int TagScheme::index_of(std::string_view name) const {
  auto cls = find(name);
  if (!cls) throw SchemaError("unknown label '" + std::string(name) + "'");
  return *cls;
}

const std::string& TagScheme::name(int cls) const {
  if (cls == kOutside) return outside_name_;
  if (cls < 0 || static_cast<std::size_t>(cls) > entity_types_.size()) {
    throw SchemaError("class index " + std::to_string(cls) + " out of range");
  }
  return entity_types_[static_cast<std::size_t>(cls) - 1];
}

LabelAssignment LabelAssignment::from_labels(std::vector<int> labels) {
  LabelAssignment a;
  a.weight.assign(labels.size(), 1);
  a.included.assign(labels.size(), 1);
  a.labels = std::move(labels);
  return a;
}

std::vector<LabeledSentence> parse_column_corpus(std::string_view text,
                                                 const std::string& source,
                                                 const TagScheme& scheme,
                                                 std::size_t max_length) {
  std::vector<LabeledSentence> out;
  std::vector<std::string> tokens;
  std::vector<int> labels;
  std::size_t labeled_rows = 0;
  std::size_t first_line = 0;

  auto flush = [&]() {
    if (tokens.empty()) return;
    if (labeled_rows != 0 && labeled_rows != tokens.size()) {
      throw ParseError(source, first_line, "sequence mixes labeled and unlabeled rows");
    }
    if (max_length != 0 && tokens.size() > max_length) {
      throw LengthError(source + ":" + std::to_string(first_line) + ": sequence of " +
                        std::to_string(tokens.size()) + " tokens exceeds max length " +
                        std::to_string(max_length));
    }
    LabeledSentence ls;
    ls.sentence =
        Sentence::from_tokens(source + ":" + std::to_string(out.size()), std::move(tokens));
    if (labeled_rows != 0) ls.labels = LabelAssignment::from_labels(std::move(labels));
    out.push_back(std::move(ls));
    tokens.clear();
    labels.clear();
    labeled_rows = 0;
  };

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      flush();
    } else {
      if (tokens.empty()) first_line = line_no;
      const std::size_t tab = line.find('\t');
      if (tab == std::string_view::npos) {
        tokens.emplace_back(line);
      } else {
        std::string_view token = line.substr(0, tab);
        std::string_view label = line.substr(tab + 1);
        if (label.find('\t') != std::string_view::npos) {
          throw ParseError(source, line_no, "more than 2 columns");
        }
        if (token.empty()) throw ParseError(source, line_no, "empty token");
        auto cls = scheme.find(label);
        if (!cls) {
          throw SchemaError(source + ":" + std::to_string(line_no) + ": unknown label '" +
                            std::string(label) + "'");
        }
        tokens.emplace_back(token);
        labels.push_back(*cls);
        ++labeled_rows;
      }
    }
    if (end == text.size()) break;
    pos = end + 1;
  }
  flush();
  return out;
}

std::vector<LabeledSentence> read_column_corpus(const std::filesystem::path& path,
                                                const TagScheme& scheme,
                                                std::size_t max_length) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_column_corpus(buf.str(), path.filename().string(), scheme, max_length);
}

void write_column_corpus(std::span<const LabeledSentence> seqs,
                         const std::filesystem::path& path, const TagScheme& scheme) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  bool first = true;
  for (const auto& ls : seqs) {
    if (ls.labels && ls.labels->size() != ls.sentence.size()) {
      throw ShapeError("sequence '" + ls.sentence.id + "' has " +
                       std::to_string(ls.sentence.size()) + " tokens but " +
                       std::to_string(ls.labels->size()) + " labels");
    }
    if (ls.sentence.size() == 0) continue;
    if (!first) out << '\n';
    first = false;
    for (std::size_t i = 0; i < ls.sentence.size(); ++i) {
      out << ls.sentence.tokens[i];
      if (ls.labels) out << '\t' << scheme.name(ls.labels->labels[i]);
      out << '\n';
    }
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::vector<std::string> scan_entity_types(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::string> types;
  std::unordered_map<std::string, bool> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    std::string label = line.substr(tab + 1);
    if (label.empty() || label == TagScheme::kOutsideName) continue;
    if (label.find('\t') != std::string::npos) continue;
    if (seen.emplace(label, true).second) types.push_back(label);
  }
  return types;
}

std::vector<Sentence> sentences_of(std::span<const LabeledSentence> seqs) {
  std::vector<Sentence> out;
  out.reserve(seqs.size());
  for (const auto& ls : seqs) out.push_back(ls.sentence);
  return out;
}

}  // namespace dsner
