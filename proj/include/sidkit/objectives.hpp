#pragma once

#include <array>
#include <vector>

#include "sidkit/core/tensor.hpp"
#include "sidkit/dataset.hpp"
#include "sidkit/model/model.hpp"
#include "sidkit/schema.hpp"

namespace sidkit {

// Loss mixing weights plus the margin-curve parameters.
struct LossWeights {
  double lambda_sem = 5.0;
  double lambda_id = 1.0;
  double lambda_reg = 0.001;
  double alpha = 0.4;  // margin slope
  double beta = 1.8;   // margin bias

  void validate() const;  // all >= 0 and alpha + beta > 0
};

// m = ln(alpha * count_g / count_total + beta). Monotone nondecreasing in
// count_g, bounded by [ln(beta), ln(alpha + beta)].
double boundary_margin(long count_g, long count_total, double alpha, double beta);

// Per-SID margins, computed once from the train split's person counts and
// then frozen (they are a dataset statistic, not a batch statistic).
class MarginTable {
 public:
  MarginTable() = default;
  MarginTable(const AttributeSchema& schema, const DatasetSplit& train,
              double alpha, double beta);
  static MarginTable from_values(std::array<std::vector<double>, kNumGroups> values);

  double margin(GroupRole role, long sid) const;  // throws on out-of-range sid
  const std::array<std::vector<double>, kNumGroups>& values() const { return m_; }
  bool empty() const;

 private:
  std::array<std::vector<double>, kNumGroups> m_;
};

// Per-batch values of one loss family, unweighted. by_group entries are the
// per-head means; the scalar is their average.
struct SemanticGuidanceResult {
  double value = 0.0;
  std::array<double, kNumGroups> by_group{};
  long zero_norm_count = 0;  // cosine inputs that hit the epsilon guard
};

struct IdentificationResult {
  double ce = 0.0;
  double triplet = 0.0;
  std::array<double, kNumGroups> ce_by_group{};
  std::array<double, kNumGroups> triplet_by_group{};
};

struct RegularizationResult {
  double value = 0.0;
  std::array<double, kNumGroups> by_group{};
};

// Hinge on cosine similarity between each representation and its SID
// prototype: mean over (sample, group) of max(1 - m - s, 0).
//
// feats: [B, d] per group. sid_index: per sample, the SID index per group.
// When dfeats is non-null, `weight * d(value)` is accumulated into *dfeats
// and into the bank's prototype gradients; a null dfeats evaluates only.
SemanticGuidanceResult semantic_guidance_loss(
    const std::array<Tensor, kNumGroups>& feats, PrototypeBank& bank,
    const std::vector<std::array<long, kNumGroups>>& sid_index,
    const MarginTable& margins, double weight,
    std::array<Tensor, kNumGroups>* dfeats);

// Cross-entropy over per-group ID classifiers plus a soft-margin triplet
// with batch-hard mining (farthest positive, nearest negative, Euclidean),
// averaged over groups and anchors.
//
// ce_feats and trip_feats may be the same tensors (the default training
// setup) or different views of the batch; gradients flow to the matching
// sink. labels are contiguous class indices in [0, classifiers.num_ids()).
// Requires a PK structure: >= 2 distinct labels, every label >= 2 samples.
// When the d*(feat) sinks are non-null, classifier parameter gradients are
// accumulated as well.
IdentificationResult identification_loss(
    const std::array<Tensor, kNumGroups>& ce_feats,
    const std::array<Tensor, kNumGroups>& trip_feats, IdClassifiers& classifiers,
    const std::vector<int>& labels, double weight,
    std::array<Tensor, kNumGroups>* d_ce_feats,
    std::array<Tensor, kNumGroups>* d_trip_feats);

// r = sum_l basis[l] * (a_m[l] - a_n[l]); antisymmetric in (m, n).
// basis: [L, d] with L == a_m.size() == a_n.size().
std::vector<double> residual_vector(const std::vector<double>& a_m,
                                    const std::vector<double>& a_n,
                                    const Tensor& basis);

// Mean over groups of sum over ordered prototype pairs (m, n), diagonal
// included, of ||p_m - p_n - r_{m,n}||^2. Zero exactly when every group's
// prototypes are affine in their attribute vectors. Gradients (scaled by
// weight) go to the bank's prototypes and residual bases when with_grad.
RegularizationResult regularization_loss(const AttributeSchema& schema,
                                         PrototypeBank& bank, double weight,
                                         bool with_grad);

// One training step's loss values. total is the weighted composition; the
// component fields stay unweighted.
struct LossReport {
  double total = 0.0;
  double sem = 0.0;
  double id_ce = 0.0;
  double id_triplet = 0.0;
  double reg = 0.0;
  std::array<double, kNumGroups> sem_by_group{};
  std::array<double, kNumGroups> ce_by_group{};
  std::array<double, kNumGroups> triplet_by_group{};
  std::array<double, kNumGroups> reg_by_group{};
};

LossReport total_loss(const SemanticGuidanceResult& sem,
                      const IdentificationResult& id,
                      const RegularizationResult& reg, const LossWeights& w);

}  // namespace sidkit
