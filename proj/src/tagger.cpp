// SPDX-License-Identifier: Apache-2.0
#include "dsner/tagger.hpp"

#include <algorithm>
#include <cmath>

#include "dsner/checkpoint.hpp"
#include "dsner/error.hpp"
#include "dsner/util.hpp"

namespace dsner {

std::size_t TaggerModel::parameter_count() const {
  std::size_t n = 0;
  visit_params([&](const std::string&, const nn::Param& p) { n += static_cast<std::size_t>(p.value.size()); });
  return n;
}

void TaggerModel::zero_grad() {
  visit_params([](const std::string&, nn::Param& p) { p.zero_grad(); });
}

TaggerModel create_tagger(const EncoderSpec& spec, const TagScheme& scheme, Vocabulary vocab,
                          std::uint64_t encoder_seed, std::uint64_t head_seed,
                          std::shared_ptr<const FeatureStore> features) {
  if (scheme.entity_count() == 0) throw SchemaError("tag scheme needs at least one entity type");
  Rng enc_rng(encoder_seed);
  Rng head_rng(head_seed);
  TaggerModel m;
  m.spec = spec;
  m.scheme = scheme;
  m.vocab = std::move(vocab);
  m.encoder = make_encoder(spec, m.vocab.size(), enc_rng, std::move(features));
  m.binary_head.init(spec.hidden, 1, head_rng);
  m.type_head.init(spec.hidden, static_cast<Eigen::Index>(scheme.entity_count()), head_rng);
  return m;
}

std::shared_ptr<const FeatureStore> adapter_features(const TaggerModel& model) {
  if (const auto* a = std::get_if<AdapterEncoder>(&model.encoder)) return a->features;
  return nullptr;
}

ForwardResult forward(const TaggerModel& model, const Sentence& sentence, Rng* rng) {
  if (sentence.size() > static_cast<std::size_t>(model.spec.max_length)) {
    throw LengthError("sequence '" + sentence.id + "' has " + std::to_string(sentence.size()) +
                      " tokens, max length is " + std::to_string(model.spec.max_length));
  }
  ForwardResult fwd;
  fwd.input = encode_input(model.vocab, sentence);
  const auto n = static_cast<Eigen::Index>(sentence.size());
  const auto e = static_cast<Eigen::Index>(model.scheme.entity_count());
  if (n == 0) {
    fwd.pred.probs.resize(0, e + 1);
    fwd.pred.p_entity.resize(0);
    fwd.pred.type_dist.resize(0, e);
    return fwd;
  }
  fwd.hidden = std::visit(
      [&](const auto& enc) -> Mat {
        using E = std::decay_t<decltype(enc)>;
        auto& cache = fwd.cache.emplace<typename E::Cache>();
        return enc.forward(model.spec, fwd.input, rng, cache);
      },
      model.encoder);
  fwd.head_mask = nn::dropout_mask(n, model.spec.hidden, model.spec.dropout, rng);
  nn::apply_mask(fwd.hidden, fwd.head_mask);

  const Mat z = model.binary_head.forward(fwd.hidden);
  Mat u = model.type_head.forward(fwd.hidden);
  nn::softmax_rows(u);
  auto& pred = fwd.pred;
  pred.type_dist = std::move(u);
  pred.p_entity.resize(n);
  pred.probs.resize(n, e + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = nn::sigmoid(z(i, 0));
    pred.p_entity(i) = p;
    pred.probs(i, 0) = nn::sigmoid(-z(i, 0));
    pred.probs.row(i).tail(e) = p * pred.type_dist.row(i);
  }
  return fwd;
}

Prediction predict(const TaggerModel& model, const Sentence& sentence) {
  return forward(model, sentence, nullptr).pred;
}

HeadGrad HeadGrad::zeros(std::size_t n, std::size_t entity_types) {
  return {Vec::Zero(static_cast<Eigen::Index>(n)),
          Mat::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(entity_types))};
}

void backward(TaggerModel& model, const ForwardResult& fwd, const HeadGrad& grad) {
  if (fwd.hidden.rows() == 0) return;
  Mat dh = model.binary_head.backward(fwd.hidden, grad.d_binary);
  dh += model.type_head.backward(fwd.hidden, grad.d_type);
  nn::apply_mask(dh, fwd.head_mask);
  std::visit(
      [&](auto& enc) {
        using E = std::decay_t<decltype(enc)>;
        enc.backward(model.spec, fwd.input, std::get<typename E::Cache>(fwd.cache), dh);
      },
      model.encoder);
}

HeadGrad combined_to_head_grad(const Prediction& pred, const Mat& d_probs) {
  const auto n = pred.probs.rows();
  const auto e = pred.type_dist.cols();
  HeadGrad g = HeadGrad::zeros(static_cast<std::size_t>(n), static_cast<std::size_t>(e));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = pred.p_entity(i);
    const auto tau = pred.type_dist.row(i);
    const auto d_types = d_probs.row(i).tail(e);
    const double d_p = -d_probs(i, 0) + d_types.dot(tau);
    g.d_binary(i) = d_p * p * pred.probs(i, 0);
    const Eigen::RowVectorXd d_tau = p * d_types;
    g.d_type.row(i) = tau.array() * (d_tau.array() - d_tau.dot(tau));
  }
  return g;
}

namespace {

double loss_term(LossKind kind, double f, double q) {
  switch (kind) {
    case LossKind::kCe:
      return ce_term(f);
    case LossKind::kMae:
      return mae_term(f);
    case LossKind::kGce:
      return gce_term(f, q);
  }
  return 0.0;
}

double loss_grad(LossKind kind, double f, double q) {
  switch (kind) {
    case LossKind::kCe:
      return ce_term_grad(f);
    case LossKind::kMae:
      return mae_term_grad(f);
    case LossKind::kGce:
      return gce_term_grad(f, q);
  }
  return 0.0;
}

void check_aligned(const Prediction& pred, const LabelAssignment& labels) {
  if (labels.size() != static_cast<std::size_t>(pred.probs.rows())) {
    throw ShapeError("label count " + std::to_string(labels.size()) + " != token count " +
                     std::to_string(pred.probs.rows()));
  }
}

}  // namespace

ExampleLoss two_head_label_loss(const LabelAssignment& labels, LossKind kind, double q) {
  return [&labels, kind, q](const Prediction& pred) {
    check_aligned(pred, labels);
    LossTerm t;
    t.grad = HeadGrad::zeros(labels.size(), static_cast<std::size_t>(pred.type_dist.cols()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!labels.contributes(i)) continue;
      const auto r = static_cast<Eigen::Index>(i);
      const int y = labels.labels[i];
      const double p = pred.p_entity(r);
      const double pq = p * pred.probs(r, 0);
      const bool entity = TagScheme::is_entity(y);
      const double fb = entity ? p : pred.probs(r, 0);
      t.loss_sum += loss_term(kind, fb, q);
      t.grad.d_binary(r) = loss_grad(kind, fb, q) * (entity ? pq : -pq);
      if (entity) {
        const Eigen::Index c = y - 1;
        const double ft = pred.type_dist(r, c);
        t.loss_sum += loss_term(kind, ft, q);
        const double gt = loss_grad(kind, ft, q);
        t.grad.d_type.row(r) = -gt * ft * pred.type_dist.row(r);
        t.grad.d_type(r, c) += gt * ft;
      }
      t.count += 1.0;
    }
    return t;
  };
}

ExampleLoss combined_label_loss(const LabelAssignment& labels, LossKind kind, double q) {
  return [&labels, kind, q](const Prediction& pred) {
    check_aligned(pred, labels);
    LossTerm t;
    Mat d = Mat::Zero(pred.probs.rows(), pred.probs.cols());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!labels.contributes(i)) continue;
      const auto r = static_cast<Eigen::Index>(i);
      const double f = pred.probs(r, labels.labels[i]);
      t.loss_sum += loss_term(kind, f, q);
      d(r, labels.labels[i]) = loss_grad(kind, f, q);
      t.count += 1.0;
    }
    t.grad = combined_to_head_grad(pred, d);
    return t;
  };
}

ExampleLoss combined_kl_loss(Mat targets) {
  return [targets = std::move(targets)](const Prediction& pred) {
    if (targets.rows() != pred.probs.rows() || targets.cols() != pred.probs.cols()) {
      throw ShapeError("distillation target shape does not match prediction");
    }
    LossTerm t;
    Mat d(targets.rows(), targets.cols());
    for (Eigen::Index i = 0; i < targets.rows(); ++i) {
      t.loss_sum += kl_divergence(targets.row(i), pred.probs.row(i));
      for (Eigen::Index j = 0; j < targets.cols(); ++j) {
        d(i, j) = -targets(i, j) / clamp_prob(pred.probs(i, j));
      }
    }
    t.count = static_cast<double>(targets.rows());
    t.grad = combined_to_head_grad(pred, d);
    return t;
  };
}

AdamOptimizer::AdamOptimizer(const TaggerModel& model, double peak_lr, std::size_t total_steps,
                             double beta1, double beta2, double eps)
    : peak_lr_(peak_lr),
      total_steps_(std::max<std::size_t>(total_steps, 1)),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  if (!(peak_lr >= 0.0)) throw ParameterError("learning rate must be non-negative");
  model.visit_params([&](const std::string&, const nn::Param& p) {
    m_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
  });
}

double AdamOptimizer::current_lr() const {
  const double frac = static_cast<double>(step_) / static_cast<double>(total_steps_);
  return peak_lr_ * std::max(0.0, 1.0 - frac);
}

void AdamOptimizer::step(TaggerModel& model) {
  const double lr = current_lr();
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  std::size_t k = 0;
  model.visit_params([&](const std::string&, nn::Param& p) {
    Mat& m = m_[k];
    Mat& v = v_[k];
    ++k;
    m = beta1_ * m + (1.0 - beta1_) * p.grad;
    v = beta2_ * v + (1.0 - beta2_) * p.grad.cwiseAbs2();
    if (lr == 0.0) return;
    p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    nn::snap_to_float(p.value);
  });
}

double train_step(TaggerModel& model, std::span<const Example> batch, AdamOptimizer& opt,
                  Rng& rng) {
  model.zero_grad();
  double loss_sum = 0.0;
  double count = 0.0;
  for (const auto& ex : batch) {
    const ForwardResult fwd = forward(model, *ex.sentence, &rng);
    const LossTerm term = ex.loss(fwd.pred);
    if (!std::isfinite(term.loss_sum)) {
      throw DivergenceError(ex.sentence->id, "non-finite loss");
    }
    if (!term.grad.d_binary.allFinite() || !term.grad.d_type.allFinite()) {
      throw DivergenceError(ex.sentence->id, "non-finite gradient");
    }
    loss_sum += term.loss_sum;
    count += term.count;
    backward(model, fwd, term.grad);
  }
  if (count <= 0.0) return 0.0;
  const double scale = 1.0 / count;
  bool finite = true;
  model.visit_params([&](const std::string&, nn::Param& p) {
    p.grad *= scale;
    finite = finite && p.grad.allFinite();
  });
  if (!finite) {
    throw DivergenceError(batch.empty() ? std::string() : batch.front().sentence->id,
                          "non-finite parameter gradient in batch");
  }
  opt.step(model);
  return loss_sum / count;
}

std::vector<ProbTable> predict_corpus(const TaggerModel& model, std::span<const Sentence> corpus) {
  std::vector<ProbTable> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) out.emplace_back(predict(model, s).probs);
  return out;
}

std::vector<Prediction> predict_heads(const TaggerModel& model, std::span<const Sentence> corpus) {
  std::vector<Prediction> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) out.push_back(predict(model, s));
  return out;
}

std::vector<int> decode_argmax(const Mat& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    probs.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void require_plain(const std::string& token, const char* what) {
  if (token.find_first_of("\t\n") != std::string::npos) {
    throw SchemaError(std::string(what) + " '" + token + "' contains TAB or newline");
  }
}

}  // namespace

void save_model(const TaggerModel& model, const CheckpointMeta& meta,
                const std::filesystem::path& path) {
  Checkpoint ckpt;
  auto& mf = ckpt.manifest;
  mf["format"] = "dsner-tagger";
  mf["encoder.kind"] = to_string(model.spec.kind);
  mf["encoder.hidden"] = std::to_string(model.spec.hidden);
  mf["encoder.layers"] = std::to_string(model.spec.layers);
  mf["encoder.heads"] = std::to_string(model.spec.heads);
  mf["encoder.ffn"] = std::to_string(model.spec.ffn);
  mf["encoder.max_length"] = std::to_string(model.spec.max_length);
  mf["encoder.dropout"] = format_double(model.spec.dropout);
  mf["encoder.feature_dim"] = std::to_string(model.spec.feature_dim);
  for (const auto& t : model.scheme.entity_types()) require_plain(t, "entity type");
  mf["scheme.types"] = join(model.scheme.entity_types(), "\t");
  for (const auto& t : model.vocab.tokens()) require_plain(t, "token");
  mf["vocab.tokens"] = join(model.vocab.tokens(), "\t");
  mf["meta.seed"] = std::to_string(meta.seed);
  mf["meta.stage"] = meta.stage;
  mf["meta.iteration"] = std::to_string(meta.iteration);
  for (const auto& [k, v] : meta.recipe) mf["recipe." + k] = v;

  model.visit_params([&](const std::string& name, const nn::Param& p) {
    NamedArray a;
    a.name = name;
    a.rows = static_cast<std::uint32_t>(p.value.rows());
    a.cols = static_cast<std::uint32_t>(p.value.cols());
    a.data.reserve(static_cast<std::size_t>(p.value.size()));
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) a.data.push_back(static_cast<float>(p.value(r, c)));
    }
    ckpt.arrays.push_back(std::move(a));
  });
  save_checkpoint(ckpt, path);
}

LoadedModel load_model(const std::filesystem::path& path,
                       std::shared_ptr<const FeatureStore> features) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.meta("format") != "dsner-tagger") throw SchemaError(path.string() + ": not a tagger checkpoint");
  EncoderSpec spec;
  spec.kind = encoder_kind_from_string(ckpt.meta("encoder.kind"));
  spec.hidden = static_cast<int>(parse_int(ckpt.meta("encoder.hidden")));
  spec.layers = static_cast<int>(parse_int(ckpt.meta("encoder.layers")));
  spec.heads = static_cast<int>(parse_int(ckpt.meta("encoder.heads")));
  spec.ffn = static_cast<int>(parse_int(ckpt.meta("encoder.ffn")));
  spec.max_length = static_cast<int>(parse_int(ckpt.meta("encoder.max_length")));
  spec.dropout = parse_double(ckpt.meta("encoder.dropout"));
  spec.feature_dim = static_cast<int>(parse_int(ckpt.meta("encoder.feature_dim")));
  TagScheme scheme(split(ckpt.meta("scheme.types"), '\t'));
  Vocabulary vocab = Vocabulary::from_tokens(split(ckpt.meta("vocab.tokens"), '\t'));

  LoadedModel out{create_tagger(spec, scheme, std::move(vocab), 0, 0, std::move(features)), {}};
  std::size_t matched = 0;
  out.model.visit_params([&](const std::string& name, nn::Param& p) {
    const NamedArray& a = ckpt.array(name);
    if (a.rows != p.value.rows() || a.cols != p.value.cols()) {
      throw ShapeError(path.string() + ": array '" + name + "' has the wrong shape");
    }
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) p.value(r, c) = static_cast<double>(a.data[k++]);
    }
    ++matched;
  });
  if (matched != ckpt.arrays.size()) throw SchemaError(path.string() + ": unexpected extra arrays");

  out.meta.seed = std::stoull(ckpt.meta("meta.seed"));
  out.meta.stage = ckpt.meta("meta.stage");
  out.meta.iteration = std::stoull(ckpt.meta("meta.iteration"));
  for (const auto& [k, v] : ckpt.manifest) {
    if (k.rfind("recipe.", 0) == 0) out.meta.recipe[k.substr(7)] = v;
  }
  return out;
}

}  // namespace dsner
