// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dsner/corpus.hpp"
#include "dsner/rng.hpp"

namespace dsner {

class SyntheticGrammar;

inline constexpr std::string_view kMaskToken = "<mask>";

// Continuation pieces of a split word carry a leading "##".
bool is_subword_piece(std::string_view token);

struct MaskedSequence {
  Sentence original;
  std::vector<std::size_t> positions;  // ascending, distinct
  std::vector<std::string> view;       // tokens with kMaskToken at masked positions
};

// Masks max(1, round(rate * n)) uniformly chosen positions. Throws
// ParameterError for an empty sentence or a rate outside (0, 1).
MaskedSequence mask_sequence(const Sentence& sentence, double rate, Rng& rng);

struct Candidate {
  std::string token;
  double prob = 0.0;
};

// One ranked candidate list per masked position, most probable first.
struct MlmDistribution {
  std::vector<std::vector<Candidate>> candidates;

  void validate(std::size_t positions) const;  // SchemaError
};

enum class Provenance : std::uint8_t { kUnmasked, kKept, kReplaced };

struct AugmentedSequence {
  Sentence sentence;
  std::vector<Provenance> provenance;
  std::vector<int> rank;  // 1-based candidate rank of a replacement, 0 otherwise
};

// Truncates each list to top_k, drops candidates whose capitalization or
// subword status differs from the original token, renormalizes and samples.
// An emptied list keeps the original token. Throws ParameterError if top_k < 1.
AugmentedSequence sample_replacements(const MaskedSequence& masked, const MlmDistribution& dist,
                                      std::size_t top_k, Rng& rng);

class MlmAdapter {
 public:
  virtual ~MlmAdapter() = default;
  virtual std::string name() const = 0;
  // Throws on failure; augment_corpus skips the sequence.
  virtual MlmDistribution query(const MaskedSequence& masked) = 0;
};

// Count-based masked-token model fitted on a corpus: interpolates
// (left, right), left-only, right-only and unigram context counts.
class CorpusMlm : public MlmAdapter {
 public:
  explicit CorpusMlm(std::span<const Sentence> corpus, std::size_t max_candidates = 20);
  std::string name() const override { return "corpus"; }
  MlmDistribution query(const MaskedSequence& masked) override;

 private:
  using Counts = std::unordered_map<std::string, std::unordered_map<std::string, double>>;
  Counts both_, left_, right_;
  std::unordered_map<std::string, double> unigram_;
  std::vector<std::pair<std::string, double>> top_unigrams_;
  double total_ = 0.0;
  std::size_t max_candidates_;
};

// Proposes words from the original token's grammar category, so every
// replacement keeps the generator's label.
class OracleMlm : public MlmAdapter {
 public:
  explicit OracleMlm(const SyntheticGrammar& grammar, std::size_t max_candidates = 8,
                     std::uint64_t seed = 0);
  std::string name() const override { return "oracle"; }
  MlmDistribution query(const MaskedSequence& masked) override;

 private:
  const SyntheticGrammar& grammar_;
  std::size_t max_candidates_;
  std::uint64_t seed_;
};

// Child process speaking one JSON object per line. Request:
//   {"tokens": ["a", "<mask>", ...], "mask": [1, ...]}
// Response:
//   {"candidates": [[["tok", 0.4], ["other", 0.2], ...], ...]}
class ExternalMlm : public MlmAdapter {
 public:
  explicit ExternalMlm(const std::string& command);
  ~ExternalMlm() override;
  ExternalMlm(const ExternalMlm&) = delete;
  ExternalMlm& operator=(const ExternalMlm&) = delete;

  std::string name() const override { return "external"; }
  MlmDistribution query(const MaskedSequence& masked) override;

  // Command from DSNER_MLM_ADAPTER; throws ConfigError when unset.
  static std::unique_ptr<ExternalMlm> from_environment();

 private:
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

struct AugmentedCorpus {
  std::vector<std::optional<AugmentedSequence>> pairs;  // aligned with the input corpus
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

// One augmentation per sequence with seed base_seed ^ index. When `audit` is
// set, writes one line per masked position.
AugmentedCorpus augment_corpus(std::span<const Sentence> corpus, MlmAdapter& adapter, double rate,
                               std::size_t top_k, std::uint64_t base_seed,
                               std::ostream* audit = nullptr);

}  // namespace dsner
