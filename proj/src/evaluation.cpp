// SPDX-License-Identifier: Apache-2.0
#include "dsner/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "dsner/error.hpp"
#include "dsner/util.hpp"

namespace dsner {

std::vector<EntitySpan> decode_entities(std::span<const int> labels) {
  std::vector<EntitySpan> spans;
  std::size_t i = 0;
  while (i < labels.size()) {
    if (!TagScheme::is_entity(labels[i])) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < labels.size() && labels[j] == labels[i]) ++j;
    spans.push_back({static_cast<int>(i), static_cast<int>(j), labels[i]});
    i = j;
  }
  return spans;
}

std::vector<int> encode_entities(std::span<const EntitySpan> spans, std::size_t length) {
  std::vector<int> labels(length, TagScheme::kOutside);
  for (const auto& s : spans) {
    if (s.start < 0 || s.end > static_cast<int>(length) || s.start >= s.end) {
      throw ShapeError("span out of range");
    }
    std::fill(labels.begin() + s.start, labels.begin() + s.end, s.type);
  }
  return labels;
}

Prf prf_from_counts(std::size_t tp, std::size_t predicted, std::size_t gold) {
  Prf r;
  r.true_positives = tp;
  r.predicted = predicted;
  r.gold = gold;
  r.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
  r.recall = gold ? static_cast<double>(tp) / static_cast<double>(gold) : 0.0;
  const double denom = r.precision + r.recall;
  r.f1 = denom > 0.0 ? 2.0 * r.precision * r.recall / denom : 0.0;
  return r;
}

namespace {

std::size_t count_matches(std::span<const EntitySpan> pred, std::span<const EntitySpan> gold) {
  std::set<EntitySpan> g(gold.begin(), gold.end());
  std::size_t tp = 0;
  for (const auto& s : std::set<EntitySpan>(pred.begin(), pred.end())) tp += g.count(s);
  return tp;
}

void check_rows(std::span<const std::vector<int>> pred, std::span<const std::vector<int>> gold) {
  if (pred.size() != gold.size()) throw ShapeError("prediction and gold corpora differ in length");
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (pred[k].size() != gold[k].size()) {
      throw ShapeError("sequence " + std::to_string(k) + " length differs between prediction and gold");
    }
  }
}

}  // namespace

Prf score(std::span<const EntitySpan> pred, std::span<const EntitySpan> gold) {
  return prf_from_counts(count_matches(pred, gold), pred.size(), gold.size());
}

Prf score_corpus(std::span<const std::vector<int>> pred, std::span<const std::vector<int>> gold) {
  check_rows(pred, gold);
  std::size_t tp = 0, np = 0, ng = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const auto p = decode_entities(pred[k]);
    const auto g = decode_entities(gold[k]);
    tp += count_matches(p, g);
    np += p.size();
    ng += g.size();
  }
  return prf_from_counts(tp, np, ng);
}

Prf token_scores(std::span<const std::vector<int>> pred, std::span<const std::vector<int>> gold) {
  check_rows(pred, gold);
  std::size_t tp = 0, np = 0, ng = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    for (std::size_t i = 0; i < pred[k].size(); ++i) {
      const bool pe = TagScheme::is_entity(pred[k][i]);
      const bool ge = TagScheme::is_entity(gold[k][i]);
      np += pe;
      ng += ge;
      tp += pe && ge && pred[k][i] == gold[k][i];
    }
  }
  return prf_from_counts(tp, np, ng);
}

EvaluationReport evaluate_labels(std::span<const std::vector<int>> pred,
                                 std::span<const std::vector<int>> gold, const TagScheme& scheme) {
  EvaluationReport report;
  report.overall = score_corpus(pred, gold);
  report.sequences = pred.size();
  for (std::size_t t = 1; t <= scheme.entity_count(); ++t) {
    std::size_t tp = 0, np = 0, ng = 0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
      auto p = decode_entities(pred[k]);
      auto g = decode_entities(gold[k]);
      std::erase_if(p, [t](const EntitySpan& s) { return s.type != static_cast<int>(t); });
      std::erase_if(g, [t](const EntitySpan& s) { return s.type != static_cast<int>(t); });
      tp += count_matches(p, g);
      np += p.size();
      ng += g.size();
    }
    report.per_type.emplace_back(scheme.name(static_cast<int>(t)), prf_from_counts(tp, np, ng));
  }
  return report;
}

std::string render_report_table(const EvaluationReport& report) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %9s %9s %9s %8s %8s\n", "type", "precision", "recall",
                "f1", "pred", "gold");
  out << line;
  auto row = [&](const std::string& name, const Prf& p) {
    std::snprintf(line, sizeof line, "%-12s %9.4f %9.4f %9.4f %8zu %8zu\n", name.c_str(),
                  p.precision, p.recall, p.f1, p.predicted, p.gold);
    out << line;
  };
  for (const auto& [name, p] : report.per_type) row(name, p);
  row("overall", report.overall);
  return out.str();
}

std::string render_report_kv(const EvaluationReport& report) {
  std::ostringstream out;
  out << "sequences=" << report.sequences << '\n';
  auto emit = [&](const std::string& prefix, const Prf& p) {
    out << prefix << ".precision=" << format_double(p.precision) << '\n'
        << prefix << ".recall=" << format_double(p.recall) << '\n'
        << prefix << ".f1=" << format_double(p.f1) << '\n'
        << prefix << ".predicted=" << p.predicted << '\n'
        << prefix << ".gold=" << p.gold << '\n';
  };
  emit("overall", report.overall);
  for (const auto& [name, p] : report.per_type) emit("type." + name, p);
  return out.str();
}

}  // namespace dsner
