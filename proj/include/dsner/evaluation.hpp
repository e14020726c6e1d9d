// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dsner/corpus.hpp"

namespace dsner {

// Half-open token span [start, end) with an entity class index.
struct EntitySpan {
  int start = 0;
  int end = 0;
  int type = 0;

  auto operator<=>(const EntitySpan&) const = default;
};

// Maximal runs of one entity class under IO tagging. Adjacent same-type
// entities cannot be told apart and merge into one span.
std::vector<EntitySpan> decode_entities(std::span<const int> labels);
std::vector<int> encode_entities(std::span<const EntitySpan> spans, std::size_t length);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positives = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
};

Prf prf_from_counts(std::size_t tp, std::size_t predicted, std::size_t gold);

// Exact-match span scoring: boundaries and type must both agree.
Prf score(std::span<const EntitySpan> pred, std::span<const EntitySpan> gold);

// Micro-averaged entity scores over a corpus of label rows.
Prf score_corpus(std::span<const std::vector<int>> pred, std::span<const std::vector<int>> gold);

// Token-level micro F1 over entity tokens (a token is a hit if both sides
// assign the same entity class).
Prf token_scores(std::span<const std::vector<int>> pred, std::span<const std::vector<int>> gold);

struct EvaluationReport {
  Prf overall;
  std::vector<std::pair<std::string, Prf>> per_type;
  std::size_t sequences = 0;
};

EvaluationReport evaluate_labels(std::span<const std::vector<int>> pred,
                                 std::span<const std::vector<int>> gold, const TagScheme& scheme);

std::string render_report_table(const EvaluationReport& report);
std::string render_report_kv(const EvaluationReport& report);

}  // namespace dsner
