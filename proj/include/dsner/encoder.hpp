// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "dsner/corpus.hpp"
#include "dsner/nn.hpp"

namespace dsner {

enum class EncoderKind { kTinyTransformer, kRecurrentBidirectional, kPretrainedAdapter };

std::string to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& name);

struct EncoderSpec {
  EncoderKind kind = EncoderKind::kTinyTransformer;
  int hidden = 64;
  int layers = 2;
  int heads = 4;
  int ffn = 128;
  int max_length = 150;
  double dropout = 0.1;
  int feature_dim = 0;  // pretrained-adapter only

  void validate() const;
};

// Token -> id map; id 0 is the unknown-token entry.
class Vocabulary {
 public:
  static constexpr int kUnk = 0;
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();
  static Vocabulary build(std::span<const Sentence> corpus);
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);  // tokens[0] must be <unk>

  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  void add(const std::string& token);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Per-token feature vectors produced by an external encoder, keyed by
// sequence id. File format: a "<sequence id> TAB <n> TAB <dim>" header line
// followed by n lines of dim space-separated floats, per sequence.
class FeatureStore {
 public:
  static FeatureStore load(const std::filesystem::path& path);
  void put(const std::string& id, nn::Mat features);
  const nn::Mat& get(const std::string& id) const;
  int dim() const { return dim_; }
  std::size_t size() const { return table_.size(); }

 private:
  std::map<std::string, nn::Mat> table_;
  int dim_ = 0;
};

struct EncodedInput {
  std::vector<int> ids;
  std::vector<int> caps;
  const std::string* sequence_id = nullptr;
};

EncodedInput encode_input(const Vocabulary& vocab, const Sentence& s);

// Pre-norm transformer block.
struct TransformerBlock {
  nn::LayerNorm ln1, ln2;
  nn::Linear wq, wk, wv, wo;
  nn::Linear ffn_in, ffn_out;

  struct Cache {
    nn::LayerNorm::Cache c1, c2;
    nn::Mat a, q, k, v, o, attn_mask, h, b, z1, g, ffn_mask;
    std::vector<nn::Mat> attn;  // per head, n x n
  };

  void init(int hidden, int ffn, Rng& rng);
  nn::Mat forward(const nn::Mat& x, int heads, double dropout, Rng* rng, Cache& c) const;
  nn::Mat backward(const Cache& c, int heads, const nn::Mat& dy);

  template <class F>
  void visit(const std::string& p, F&& f) {
    ln1.visit(p + ".ln1", f);
    wq.visit(p + ".wq", f);
    wk.visit(p + ".wk", f);
    wv.visit(p + ".wv", f);
    wo.visit(p + ".wo", f);
    ln2.visit(p + ".ln2", f);
    ffn_in.visit(p + ".ffn_in", f);
    ffn_out.visit(p + ".ffn_out", f);
  }
};

struct TransformerEncoder {
  nn::Embedding tokens, positions, caps;
  std::vector<TransformerBlock> blocks;
  nn::LayerNorm final_norm;

  struct Cache {
    nn::Mat embed_mask;
    std::vector<TransformerBlock::Cache> blocks;
    nn::LayerNorm::Cache final_cache;
  };

  void init(const EncoderSpec& spec, std::size_t vocab, Rng& rng);
  nn::Mat forward(const EncoderSpec& spec, const EncodedInput& in, Rng* rng, Cache& c) const;
  void backward(const EncoderSpec& spec, const EncodedInput& in, const Cache& c, const nn::Mat& dy);

  template <class F>
  void visit(F&& f) {
    tokens.visit("enc.tokens", f);
    positions.visit("enc.positions", f);
    caps.visit("enc.caps", f);
    for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].visit("enc.block" + std::to_string(l), f);
    final_norm.visit("enc.final_norm", f);
  }
};

// Elman RNN in both directions; output is [forward state, backward state].
struct RecurrentEncoder {
  nn::Embedding tokens, caps;
  nn::Linear fwd_in, bwd_in;
  nn::Param fwd_rec, bwd_rec;

  struct Cache {
    nn::Mat x, embed_mask, hf, hb;
  };

  void init(const EncoderSpec& spec, std::size_t vocab, Rng& rng);
  nn::Mat forward(const EncoderSpec& spec, const EncodedInput& in, Rng* rng, Cache& c) const;
  void backward(const EncoderSpec& spec, const EncodedInput& in, const Cache& c, const nn::Mat& dy);

  template <class F>
  void visit(F&& f) {
    tokens.visit("enc.tokens", f);
    caps.visit("enc.caps", f);
    fwd_in.visit("enc.fwd_in", f);
    f("enc.fwd_rec", fwd_rec);
    bwd_in.visit("enc.bwd_in", f);
    f("enc.bwd_rec", bwd_rec);
  }
};

// Trainable projection over externally computed token features.
struct AdapterEncoder {
  std::shared_ptr<const FeatureStore> features;
  nn::Linear proj;

  struct Cache {
    nn::Mat x, y;
  };

  void init(const EncoderSpec& spec, Rng& rng);
  nn::Mat forward(const EncoderSpec& spec, const EncodedInput& in, Rng* rng, Cache& c) const;
  void backward(const EncoderSpec& spec, const EncodedInput& in, const Cache& c, const nn::Mat& dy);

  template <class F>
  void visit(F&& f) {
    proj.visit("enc.proj", f);
  }
};

using Encoder = std::variant<TransformerEncoder, RecurrentEncoder, AdapterEncoder>;
using EncoderCache =
    std::variant<TransformerEncoder::Cache, RecurrentEncoder::Cache, AdapterEncoder::Cache>;

Encoder make_encoder(const EncoderSpec& spec, std::size_t vocab, Rng& rng,
                     std::shared_ptr<const FeatureStore> features = nullptr);

}  // namespace dsner
