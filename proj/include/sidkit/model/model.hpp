#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "sidkit/model/layers.hpp"
#include "sidkit/schema.hpp"

namespace sidkit {

struct ModelConfig {
  int height = 64, width = 32;  // expected input size
  // one conv block per entry (3x3, stride 2, BN, ReLU); the last block is
  // duplicated into the global/local branches
  std::vector<int> channels = {16, 32, 64, 128};
  int embed_dim = 64;  // d
  double sigma = 5.0;  // alignment row-score threshold
  // PAP band split points as fractions of the aligned map height
  std::array<double, 2> band_fractions = {1.0 / 3.0, 2.0 / 3.0};
  bool align_enabled = true;

  int feature_height() const {
    int h = height;
    for (size_t i = 0; i < channels.size(); ++i) h = (h + 1) / 2;
    return h;
  }
  int feature_width() const {
    int w = width;
    for (size_t i = 0; i < channels.size(); ++i) w = (w + 1) / 2;
    return w;
  }
};

// The five per-group embeddings for a batch, before and after each head's
// normalization layer ([B, d] each, GroupRole order).
struct RepresentationSet {
  std::array<Tensor, kNumGroups> pre;
  std::array<Tensor, kNumGroups> post;
};

// Learnable SID prototypes and the per-group residual bases.
class PrototypeBank {
 public:
  PrototypeBank(const AttributeSchema& schema, int dim);
  void init(RngStream& rng);  // He-normal prototypes, zero residual basis

  int dim() const { return dim_; }
  long sid_count(GroupRole role) const { return counts_[static_cast<size_t>(role)]; }
  int basis_size(GroupRole role) const { return basis_rows_[static_cast<size_t>(role)]; }

  Param& prototypes(GroupRole role) { return protos_[static_cast<size_t>(role)]; }
  const Param& prototypes(GroupRole role) const { return protos_[static_cast<size_t>(role)]; }
  Param& residual_basis(GroupRole role) { return basis_[static_cast<size_t>(role)]; }
  const Param& residual_basis(GroupRole role) const { return basis_[static_cast<size_t>(role)]; }

  // row view of one prototype; throws on out-of-range sid
  const double* prototype(GroupRole role, long sid) const;

  std::vector<NamedParam> parameters();

 private:
  int dim_;
  std::array<long, kNumGroups> counts_{};
  std::array<int, kNumGroups> basis_rows_{};
  std::array<Param, kNumGroups> protos_;  // [|S^G|, d]
  std::array<Param, kNumGroups> basis_;   // [vector_length(G), d]
};

// Backbone + alignment + pooling + per-group heads + prototype bank.
//
// Trunk blocks are shared; the final block exists twice (global branch for
// identity/carrying, local branch for head/upper/lower). The local branch
// starts as an exact copy of the global one. Head/upper/lower embeddings
// come from equal-thirds bands of the aligned local map; identity/carrying
// from global average pooling of the global map. Each head is a projection
// (no bias) followed by batch normalization; both the pre- and
// post-normalization features are exposed.
class EmbeddingModel {
 public:
  EmbeddingModel(const ModelConfig& cfg, const AttributeSchema& schema);
  void init(uint64_t seed);

  RepresentationSet forward(const Tensor& images, bool train);
  // dpre/dpost: loss gradients w.r.t. both feature views ([B, d] per group,
  // zero tensors when unused). Accumulates parameter gradients.
  void backward(const std::array<Tensor, kNumGroups>& dpre,
                const std::array<Tensor, kNumGroups>& dpost);

  // backbone only: (F_g, F_l), each [B, C_last, H', W']
  std::pair<Tensor, Tensor> feature_maps(const Tensor& images, bool train);
  // alignment bounds/scores of the samples in the last forward
  const std::vector<AlignmentInfo>& last_alignment() const { return align_.info(); }

  std::vector<NamedParam> parameters();  // includes the prototype bank
  std::vector<NamedBuffer> buffers();
  void zero_grads();
  long parameter_count();

  PrototypeBank& bank() { return bank_; }
  const PrototypeBank& bank() const { return bank_; }
  const ModelConfig& config() const { return cfg_; }

 private:
  struct Block {
    Block(int in_ch, int out_ch) : conv(in_ch, out_ch, 2), bn(out_ch, true) {}
    Conv3x3 conv;
    BatchNorm bn;
    ReLU relu;
    Tensor forward(const Tensor& x, bool train) {
      return relu.forward(bn.forward(conv.forward(x), train));
    }
    Tensor backward(const Tensor& dy) {
      return conv.backward(bn.backward(relu.backward(dy)));
    }
  };
  struct Head {
    Head(int in_dim, int d) : fc(in_dim, d, false), bn(d, false) {}
    Linear fc;
    BatchNorm bn;
  };

  ModelConfig cfg_;
  std::vector<std::unique_ptr<Block>> trunk_;
  std::unique_ptr<Block> branch_g_, branch_l_;
  AlignCrop align_;
  GlobalAvgPool gap_;
  std::array<BandAvgPool, 3> bands_;
  std::array<int, 4> band_rows_{};  // [0, r0, r1, H']
  std::vector<std::unique_ptr<Head>> heads_;  // GroupRole order
  PrototypeBank bank_;
};

// One linear ID classifier per group over the train identities (used by the
// identification loss; not part of inference).
class IdClassifiers {
 public:
  IdClassifiers(int dim, int num_ids);
  void init(RngStream& rng);

  int num_ids() const { return num_ids_; }
  Tensor logits(GroupRole role, const Tensor& feats);           // [B, num_ids]
  Tensor backward(GroupRole role, const Tensor& dlogits);       // -> dfeats
  std::vector<NamedParam> parameters();

 private:
  int num_ids_;
  std::vector<Linear> fc_;
};

}  // namespace sidkit
