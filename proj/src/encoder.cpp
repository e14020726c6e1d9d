// SPDX-License-Identifier: Apache-2.0
#include "dsner/encoder.hpp"

#include <fstream>
#include <sstream>

#include "dsner/error.hpp"

namespace dsner {

using nn::Mat;
using nn::Vec;

std::string to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::kTinyTransformer:
      return "tiny-transformer";
    case EncoderKind::kRecurrentBidirectional:
      return "recurrent-bidirectional";
    case EncoderKind::kPretrainedAdapter:
      return "pretrained-adapter";
  }
  return "?";
}

EncoderKind encoder_kind_from_string(const std::string& name) {
  if (name == "tiny-transformer") return EncoderKind::kTinyTransformer;
  if (name == "recurrent-bidirectional") return EncoderKind::kRecurrentBidirectional;
  if (name == "pretrained-adapter") return EncoderKind::kPretrainedAdapter;
  throw ParameterError("unknown encoder kind '" + name + "'");
}

void EncoderSpec::validate() const {
  if (hidden <= 0) throw ParameterError("encoder hidden size must be positive");
  if (max_length <= 0) throw ParameterError("encoder max length must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ParameterError("dropout must lie in [0, 1)");
  switch (kind) {
    case EncoderKind::kTinyTransformer:
      if (layers < 1 || heads < 1 || ffn < 1) throw ParameterError("transformer needs layers, heads, ffn >= 1");
      if (hidden % heads != 0) throw ParameterError("hidden size must be divisible by heads");
      break;
    case EncoderKind::kRecurrentBidirectional:
      if (hidden % 2 != 0) throw ParameterError("recurrent encoder needs an even hidden size");
      break;
    case EncoderKind::kPretrainedAdapter:
      if (feature_dim <= 0) throw ParameterError("adapter encoder needs feature_dim > 0");
      break;
  }
}

Vocabulary::Vocabulary() { add(std::string(kUnkToken)); }

void Vocabulary::add(const std::string& token) {
  if (index_.emplace(token, static_cast<int>(tokens_.size())).second) tokens_.push_back(token);
}

Vocabulary Vocabulary::build(std::span<const Sentence> corpus) {
  Vocabulary v;
  for (const auto& s : corpus) {
    for (const auto& t : s.tokens) v.add(t);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  if (tokens.empty() || tokens.front() != kUnkToken) {
    throw SchemaError("vocabulary must start with the unknown-token entry");
  }
  Vocabulary v;
  for (std::size_t i = 1; i < tokens.size(); ++i) v.add(tokens[i]);
  if (v.size() != tokens.size()) throw SchemaError("vocabulary has duplicate tokens");
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

FeatureStore FeatureStore::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  FeatureStore store;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream header(line);
    std::string id;
    long n = 0, dim = 0;
    if (!std::getline(header, id, '\t') || !(header >> n >> dim) || n <= 0 || dim <= 0) {
      throw ParseError(path.string(), line_no, "expected 'id<TAB>n<TAB>dim' header");
    }
    Mat m(n, dim);
    for (long i = 0; i < n; ++i) {
      if (!std::getline(in, line)) throw ParseError(path.string(), line_no, "truncated feature block");
      ++line_no;
      std::istringstream row(line);
      for (long j = 0; j < dim; ++j) {
        if (!(row >> m(i, j))) throw ParseError(path.string(), line_no, "bad feature row");
      }
    }
    store.put(id, std::move(m));
  }
  return store;
}

void FeatureStore::put(const std::string& id, nn::Mat features) {
  if (dim_ == 0) dim_ = static_cast<int>(features.cols());
  if (features.cols() != dim_) throw ShapeError("feature dim mismatch for '" + id + "'");
  table_[id] = std::move(features);
}

const nn::Mat& FeatureStore::get(const std::string& id) const {
  auto it = table_.find(id);
  if (it == table_.end()) throw SchemaError("no features for sequence '" + id + "'");
  return it->second;
}

EncodedInput encode_input(const Vocabulary& vocab, const Sentence& s) {
  EncodedInput in;
  in.ids.reserve(s.size());
  in.caps.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    in.ids.push_back(vocab.id(s.tokens[i]));
    in.caps.push_back(s.is_capitalized.empty() ? 0 : s.is_capitalized[i]);
  }
  in.sequence_id = &s.id;
  return in;
}

// ---------------------------------------------------------------------------
// Transformer

void TransformerBlock::init(int hidden, int ffn, Rng& rng) {
  ln1.init(hidden);
  ln2.init(hidden);
  wq.init(hidden, hidden, rng);
  wk.init(hidden, hidden, rng);
  wv.init(hidden, hidden, rng);
  wo.init(hidden, hidden, rng);
  ffn_in.init(hidden, ffn, rng);
  ffn_out.init(ffn, hidden, rng);
}

Mat TransformerBlock::forward(const Mat& x, int heads, double dropout, Rng* rng, Cache& c) const {
  const Eigen::Index n = x.rows();
  const Eigen::Index hidden = x.cols();
  const Eigen::Index d = hidden / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  c.a = ln1.forward(x, c.c1);
  c.q = wq.forward(c.a);
  c.k = wk.forward(c.a);
  c.v = wv.forward(c.a);
  c.o.resize(n, hidden);
  c.attn.resize(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Mat s = (c.q.middleCols(h * d, d) * c.k.middleCols(h * d, d).transpose()) * scale;
    nn::softmax_rows(s);
    c.o.middleCols(h * d, d) = s * c.v.middleCols(h * d, d);
    c.attn[static_cast<std::size_t>(h)] = std::move(s);
  }
  Mat attn_out = wo.forward(c.o);
  c.attn_mask = nn::dropout_mask(n, hidden, dropout, rng);
  nn::apply_mask(attn_out, c.attn_mask);
  c.h = x + attn_out;

  c.b = ln2.forward(c.h, c.c2);
  c.z1 = ffn_in.forward(c.b);
  c.g = c.z1.unaryExpr([](double v) { return nn::gelu(v); });
  Mat z2 = ffn_out.forward(c.g);
  c.ffn_mask = nn::dropout_mask(n, hidden, dropout, rng);
  nn::apply_mask(z2, c.ffn_mask);
  return c.h + z2;
}

Mat TransformerBlock::backward(const Cache& c, int heads, const Mat& dy) {
  const Eigen::Index hidden = dy.cols();
  const Eigen::Index d = hidden / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  Mat dz2 = dy;
  nn::apply_mask(dz2, c.ffn_mask);
  Mat dg = ffn_out.backward(c.g, dz2);
  Mat dz1 = dg.array() * c.z1.unaryExpr([](double v) { return nn::gelu_grad(v); }).array();
  Mat dh = dy + ln2.backward(c.c2, ffn_in.backward(c.b, dz1));

  Mat dattn = dh;
  nn::apply_mask(dattn, c.attn_mask);
  Mat d_o = wo.backward(c.o, dattn);
  Mat dq(dy.rows(), hidden), dk(dy.rows(), hidden), dv(dy.rows(), hidden);
  for (int h = 0; h < heads; ++h) {
    const Mat& p = c.attn[static_cast<std::size_t>(h)];
    const auto d_oh = d_o.middleCols(h * d, d);
    dv.middleCols(h * d, d) = p.transpose() * d_oh;
    Mat dp = d_oh * c.v.middleCols(h * d, d).transpose();
    Vec row_dot = (dp.array() * p.array()).rowwise().sum();
    Mat ds = p.array() * (dp.colwise() - row_dot).array();
    dq.middleCols(h * d, d) = (ds * c.k.middleCols(h * d, d)) * scale;
    dk.middleCols(h * d, d) = (ds.transpose() * c.q.middleCols(h * d, d)) * scale;
  }
  Mat da = wq.backward(c.a, dq);
  da += wk.backward(c.a, dk);
  da += wv.backward(c.a, dv);
  return dh + ln1.backward(c.c1, da);
}

void TransformerEncoder::init(const EncoderSpec& spec, std::size_t vocab, Rng& rng) {
  tokens.init(static_cast<Eigen::Index>(vocab), spec.hidden, 0.1, rng);
  positions.init(spec.max_length, spec.hidden, 0.1, rng);
  caps.init(2, spec.hidden, 0.1, rng);
  blocks.resize(static_cast<std::size_t>(spec.layers));
  for (auto& b : blocks) b.init(spec.hidden, spec.ffn, rng);
  final_norm.init(spec.hidden);
}

Mat TransformerEncoder::forward(const EncoderSpec& spec, const EncodedInput& in, Rng* rng,
                                Cache& c) const {
  const auto n = static_cast<Eigen::Index>(in.ids.size());
  Mat x = tokens.forward(in.ids) + positions.table.value.topRows(n) + caps.forward(in.caps);
  c.embed_mask = nn::dropout_mask(n, spec.hidden, spec.dropout, rng);
  nn::apply_mask(x, c.embed_mask);
  c.blocks.resize(blocks.size());
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    x = blocks[l].forward(x, spec.heads, spec.dropout, rng, c.blocks[l]);
  }
  return final_norm.forward(x, c.final_cache);
}

void TransformerEncoder::backward(const EncoderSpec& spec, const EncodedInput& in,
                                  const Cache& c, const Mat& dy) {
  Mat dx = final_norm.backward(c.final_cache, dy);
  for (std::size_t l = blocks.size(); l-- > 0;) {
    dx = blocks[l].backward(c.blocks[l], spec.heads, dx);
  }
  nn::apply_mask(dx, c.embed_mask);
  tokens.backward(in.ids, dx);
  positions.table.grad.topRows(dx.rows()) += dx;
  caps.backward(in.caps, dx);
}

// ---------------------------------------------------------------------------
// Bidirectional recurrent

void RecurrentEncoder::init(const EncoderSpec& spec, std::size_t vocab, Rng& rng) {
  const int half = spec.hidden / 2;
  tokens.init(static_cast<Eigen::Index>(vocab), spec.hidden, 0.1, rng);
  caps.init(2, spec.hidden, 0.1, rng);
  fwd_in.init(spec.hidden, half, rng);
  bwd_in.init(spec.hidden, half, rng);
  fwd_rec.resize(half, half);
  bwd_rec.resize(half, half);
  nn::init_normal(fwd_rec, 1.0 / std::sqrt(static_cast<double>(half)), rng);
  nn::init_normal(bwd_rec, 1.0 / std::sqrt(static_cast<double>(half)), rng);
}

Mat RecurrentEncoder::forward(const EncoderSpec& spec, const EncodedInput& in, Rng* rng,
                              Cache& c) const {
  const auto n = static_cast<Eigen::Index>(in.ids.size());
  const Eigen::Index half = spec.hidden / 2;
  c.x = tokens.forward(in.ids) + caps.forward(in.caps);
  c.embed_mask = nn::dropout_mask(n, spec.hidden, spec.dropout, rng);
  nn::apply_mask(c.x, c.embed_mask);
  const Mat pf = fwd_in.forward(c.x);
  const Mat pb = bwd_in.forward(c.x);
  c.hf.resize(n, half);
  c.hb.resize(n, half);
  for (Eigen::Index t = 0; t < n; ++t) {
    Eigen::RowVectorXd pre = pf.row(t);
    if (t > 0) pre += c.hf.row(t - 1) * fwd_rec.value;
    c.hf.row(t) = pre.array().tanh();
  }
  for (Eigen::Index t = n; t-- > 0;) {
    Eigen::RowVectorXd pre = pb.row(t);
    if (t + 1 < n) pre += c.hb.row(t + 1) * bwd_rec.value;
    c.hb.row(t) = pre.array().tanh();
  }
  Mat out(n, spec.hidden);
  out << c.hf, c.hb;
  return out;
}

void RecurrentEncoder::backward(const EncoderSpec& spec, const EncodedInput& in, const Cache& c,
                                const Mat& dy) {
  const Eigen::Index n = dy.rows();
  const Eigen::Index half = spec.hidden / 2;
  Mat dpf(n, half), dpb(n, half);
  Eigen::RowVectorXd carry = Eigen::RowVectorXd::Zero(half);
  for (Eigen::Index t = n; t-- > 0;) {
    Eigen::RowVectorXd dh = dy.row(t).leftCols(half) + carry;
    dpf.row(t) = dh.array() * (1.0 - c.hf.row(t).array().square());
    if (t > 0) {
      fwd_rec.grad.noalias() += c.hf.row(t - 1).transpose() * dpf.row(t);
      carry = dpf.row(t) * fwd_rec.value.transpose();
    }
  }
  carry.setZero();
  for (Eigen::Index t = 0; t < n; ++t) {
    Eigen::RowVectorXd dh = dy.row(t).rightCols(half) + carry;
    dpb.row(t) = dh.array() * (1.0 - c.hb.row(t).array().square());
    if (t + 1 < n) {
      bwd_rec.grad.noalias() += c.hb.row(t + 1).transpose() * dpb.row(t);
      carry = dpb.row(t) * bwd_rec.value.transpose();
    }
  }
  Mat dx = fwd_in.backward(c.x, dpf);
  dx += bwd_in.backward(c.x, dpb);
  nn::apply_mask(dx, c.embed_mask);
  tokens.backward(in.ids, dx);
  caps.backward(in.caps, dx);
}

// ---------------------------------------------------------------------------
// Adapter

void AdapterEncoder::init(const EncoderSpec& spec, Rng& rng) {
  proj.init(spec.feature_dim, spec.hidden, rng);
}

Mat AdapterEncoder::forward(const EncoderSpec& spec, const EncodedInput& in, Rng* rng,
                            Cache& c) const {
  if (!features) throw SchemaError("adapter encoder has no feature store attached");
  const Mat& f = features->get(in.sequence_id ? *in.sequence_id : std::string());
  if (f.rows() != static_cast<Eigen::Index>(in.ids.size()) || f.cols() != spec.feature_dim) {
    throw ShapeError("feature block shape does not match sequence");
  }
  c.x = f;
  nn::apply_mask(c.x, nn::dropout_mask(c.x.rows(), c.x.cols(), spec.dropout, rng));
  c.y = proj.forward(c.x).array().tanh();
  return c.y;
}

void AdapterEncoder::backward(const EncoderSpec&, const EncodedInput&, const Cache& c,
                              const Mat& dy) {
  Mat dpre = dy.array() * (1.0 - c.y.array().square());
  proj.backward(c.x, dpre);
}

Encoder make_encoder(const EncoderSpec& spec, std::size_t vocab, Rng& rng,
                     std::shared_ptr<const FeatureStore> features) {
  spec.validate();
  switch (spec.kind) {
    case EncoderKind::kTinyTransformer: {
      TransformerEncoder e;
      e.init(spec, vocab, rng);
      return e;
    }
    case EncoderKind::kRecurrentBidirectional: {
      RecurrentEncoder e;
      e.init(spec, vocab, rng);
      return e;
    }
    case EncoderKind::kPretrainedAdapter: {
      AdapterEncoder e;
      e.features = std::move(features);
      e.init(spec, rng);
      return e;
    }
  }
  throw ParameterError("unknown encoder kind");
}

}  // namespace dsner
