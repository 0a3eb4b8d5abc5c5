#include "sidkit/objectives.hpp"

#include <cmath>
#include <cstddef>
#include <string>

#include "sidkit/kernels.hpp"

namespace sidkit {
namespace {

constexpr double kCosEps = 1e-12;

// stable log(1 + exp(x))
double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_batch_shape(const std::array<Tensor, kNumGroups>& feats,
                       const char* what) {
  const auto& shape0 = feats[0].shape();
  if (shape0.size() != 2) throw Error(std::string(what) + ": features must be [B, d]");
  for (int g = 1; g < kNumGroups; ++g)
    if (!(feats[g].shape() == shape0))
      throw Error(std::string(what) + ": per-group feature shapes differ");
}

}  // namespace

void LossWeights::validate() const {
  if (lambda_sem < 0 || lambda_id < 0 || lambda_reg < 0 || alpha < 0 || beta < 0)
    throw Error("loss weights must be nonnegative");
  if (alpha + beta <= 0)
    throw Error("margin parameters need alpha + beta > 0");
}

double boundary_margin(long count_g, long count_total, double alpha, double beta) {
  if (count_total <= 0) throw Error("boundary margin: total person count must be positive");
  if (count_g < 0 || count_g > count_total)
    throw Error("boundary margin: SID person count outside [0, total]");
  const double arg = alpha * (static_cast<double>(count_g) / static_cast<double>(count_total)) + beta;
  if (arg <= 0.0) throw Error("boundary margin: log argument must be positive");
  return std::log(arg);
}

MarginTable::MarginTable(const AttributeSchema& schema, const DatasetSplit& train,
                         double alpha, double beta) {
  const long total = train.num_persons();
  for (int g = 0; g < kNumGroups; ++g) {
    const AttributeGroup& group = schema.group(static_cast<GroupRole>(g));
    const std::vector<long> counts = train.sid_person_counts(group);
    auto& row = m_[static_cast<size_t>(g)];
    row.reserve(counts.size());
    for (long c : counts) row.push_back(boundary_margin(c, total, alpha, beta));
  }
}

MarginTable MarginTable::from_values(std::array<std::vector<double>, kNumGroups> values) {
  MarginTable t;
  t.m_ = std::move(values);
  return t;
}

double MarginTable::margin(GroupRole role, long sid) const {
  const auto& row = m_[static_cast<size_t>(role)];
  if (sid < 0 || sid >= static_cast<long>(row.size()))
    throw Error("margin table: SID index " + std::to_string(sid) + " out of range for " +
                std::string(role_name(role)));
  return row[static_cast<size_t>(sid)];
}

bool MarginTable::empty() const {
  for (const auto& row : m_)
    if (!row.empty()) return false;
  return true;
}

SemanticGuidanceResult semantic_guidance_loss(
    const std::array<Tensor, kNumGroups>& feats, PrototypeBank& bank,
    const std::vector<std::array<long, kNumGroups>>& sid_index,
    const MarginTable& margins, double weight,
    std::array<Tensor, kNumGroups>* dfeats) {
  namespace k = kernels;
  check_batch_shape(feats, "semantic guidance");
  const int batch = feats[0].shape()[0];
  const int dim = feats[0].shape()[1];
  if (dim != bank.dim()) throw Error("semantic guidance: feature/prototype dimension mismatch");
  if (static_cast<int>(sid_index.size()) != batch)
    throw Error("semantic guidance: one SID tuple per sample required");

  SemanticGuidanceResult res;
  for (int g = 0; g < kNumGroups; ++g) {
    const GroupRole role = static_cast<GroupRole>(g);
    Param& protos = bank.prototypes(role);
    const long sids = bank.sid_count(role);
    double group_sum = 0.0;
    for (int b = 0; b < batch; ++b) {
      const long sid = sid_index[static_cast<size_t>(b)][static_cast<size_t>(g)];
      if (sid < 0 || sid >= sids)
        throw Error("semantic guidance: SID index out of range for " +
                    std::string(role_name(role)));
      const double* f = feats[g].data() + static_cast<size_t>(b) * dim;
      const double* p = protos.value.data() + static_cast<size_t>(sid) * dim;

      const double nf = std::sqrt(k::sumsq(dim, f));
      const double np = std::sqrt(k::sumsq(dim, p));
      if (nf < kCosEps) ++res.zero_norm_count;
      if (np < kCosEps) ++res.zero_norm_count;
      const double nf_g = std::max(nf, kCosEps);
      const double np_g = std::max(np, kCosEps);
      const double s = k::dot(dim, f, p) / (nf_g * np_g);

      const double m = margins.margin(role, sid);
      const double c = 1.0 - m - s;
      if (c <= 0.0) continue;  // hinge inactive (boundary inclusive)
      group_sum += c;

      if (dfeats != nullptr) {
        // d(c)/ds = -1; ds/df = p/(|f||p|) - s f/|f|^2, symmetrically for p
        const double scale = -weight / (kNumGroups * static_cast<double>(batch));
        double* df = (*dfeats)[g].data() + static_cast<size_t>(b) * dim;
        double* dp = protos.grad.data() + static_cast<size_t>(sid) * dim;
        const double inv_fp = 1.0 / (nf_g * np_g);
        k::axpy(dim, scale * inv_fp, p, df);
        k::axpy(dim, -scale * s / (nf_g * nf_g), f, df);
        k::axpy(dim, scale * inv_fp, f, dp);
        k::axpy(dim, -scale * s / (np_g * np_g), p, dp);
      }
    }
    res.by_group[static_cast<size_t>(g)] = group_sum / batch;
    res.value += res.by_group[static_cast<size_t>(g)];
  }
  res.value /= kNumGroups;
  return res;
}

IdentificationResult identification_loss(
    const std::array<Tensor, kNumGroups>& ce_feats,
    const std::array<Tensor, kNumGroups>& trip_feats, IdClassifiers& classifiers,
    const std::vector<int>& labels, double weight,
    std::array<Tensor, kNumGroups>* d_ce_feats,
    std::array<Tensor, kNumGroups>* d_trip_feats) {
  namespace k = kernels;
  check_batch_shape(ce_feats, "identification");
  check_batch_shape(trip_feats, "identification");
  if (!(ce_feats[0].shape() == trip_feats[0].shape()))
    throw Error("identification: classifier/triplet feature shapes differ");
  const int batch = ce_feats[0].shape()[0];
  const int dim = ce_feats[0].shape()[1];
  const int num_ids = classifiers.num_ids();
  if (static_cast<int>(labels.size()) != batch)
    throw Error("identification: one label per sample required");

  // PK check: triplet mining needs a positive and a negative for every anchor
  std::vector<int> label_count(static_cast<size_t>(num_ids), 0);
  int distinct = 0;
  for (int y : labels) {
    if (y < 0 || y >= num_ids) throw Error("identification: label outside classifier range");
    if (label_count[static_cast<size_t>(y)]++ == 0) ++distinct;
  }
  if (distinct < 2) throw Error("identification: batch needs >= 2 distinct persons");
  for (int y : labels)
    if (label_count[static_cast<size_t>(y)] < 2)
      throw Error("identification: every person in the batch needs >= 2 samples");

  IdentificationResult res;
  const double anchor_scale = 1.0 / (kNumGroups * static_cast<double>(batch));

  Tensor dist({batch, batch});
  std::vector<double> diff(static_cast<size_t>(dim));
  for (int g = 0; g < kNumGroups; ++g) {
    const GroupRole role = static_cast<GroupRole>(g);

    // --- cross entropy over this group's ID classifier ---
    Tensor logits = classifiers.logits(role, ce_feats[g]);
    Tensor dlogits({batch, num_ids});
    double ce_sum = 0.0;
    for (int b = 0; b < batch; ++b) {
      const double* z = logits.data() + static_cast<size_t>(b) * num_ids;
      double zmax = z[0];
      for (int j = 1; j < num_ids; ++j) zmax = std::max(zmax, z[j]);
      double sum_exp = 0.0;
      for (int j = 0; j < num_ids; ++j) sum_exp += std::exp(z[j] - zmax);
      const double lse = zmax + std::log(sum_exp);
      const int y = labels[static_cast<size_t>(b)];
      ce_sum += lse - z[y];
      if (d_ce_feats != nullptr) {
        double* dz = dlogits.data() + static_cast<size_t>(b) * num_ids;
        for (int j = 0; j < num_ids; ++j)
          dz[j] = weight * anchor_scale * std::exp(z[j] - lse);
        dz[y] -= weight * anchor_scale;
      }
    }
    res.ce_by_group[static_cast<size_t>(g)] = ce_sum / batch;
    res.ce += res.ce_by_group[static_cast<size_t>(g)];
    if (d_ce_feats != nullptr) {
      Tensor dx = classifiers.backward(role, dlogits);
      k::axpy(static_cast<int>(dx.numel()), 1.0, dx.data(), (*d_ce_feats)[g].data());
    }

    // --- batch-hard soft-margin triplet ---
    const double* feats = trip_feats[g].data();
    for (int a = 0; a < batch; ++a) {
      dist.at(a, a) = 0.0;
      for (int b = a + 1; b < batch; ++b) {
        k::vsub(dim, feats + static_cast<size_t>(a) * dim,
                feats + static_cast<size_t>(b) * dim, diff.data());
        const double d = std::sqrt(k::sumsq(dim, diff.data()));
        dist.at(a, b) = d;
        dist.at(b, a) = d;
      }
    }

    double trip_sum = 0.0;
    for (int a = 0; a < batch; ++a) {
      const int ya = labels[static_cast<size_t>(a)];
      int hard_p = -1, hard_n = -1;
      for (int b = 0; b < batch; ++b) {
        if (b == a) continue;
        if (labels[static_cast<size_t>(b)] == ya) {
          if (hard_p < 0 || dist.at(a, b) > dist.at(a, hard_p)) hard_p = b;
        } else {
          if (hard_n < 0 || dist.at(a, b) < dist.at(a, hard_n)) hard_n = b;
        }
      }
      const double dp = dist.at(a, hard_p);
      const double dn = dist.at(a, hard_n);
      trip_sum += softplus(dp - dn);

      if (d_trip_feats != nullptr) {
        const double gfac = weight * anchor_scale * sigmoid(dp - dn);
        double* da = (*d_trip_feats)[g].data() + static_cast<size_t>(a) * dim;
        const double* fa = feats + static_cast<size_t>(a) * dim;
        if (dp > 0.0) {  // d(dp)/da = (a - p)/dp; zero distance has no direction
          const double* fp = feats + static_cast<size_t>(hard_p) * dim;
          double* dpos = (*d_trip_feats)[g].data() + static_cast<size_t>(hard_p) * dim;
          const double c = gfac / dp;
          k::axpy(dim, c, fa, da);
          k::axpy(dim, -c, fp, da);
          k::axpy(dim, -c, fa, dpos);
          k::axpy(dim, c, fp, dpos);
        }
        if (dn > 0.0) {
          const double* fn = feats + static_cast<size_t>(hard_n) * dim;
          double* dneg = (*d_trip_feats)[g].data() + static_cast<size_t>(hard_n) * dim;
          const double c = gfac / dn;
          k::axpy(dim, -c, fa, da);
          k::axpy(dim, c, fn, da);
          k::axpy(dim, c, fa, dneg);
          k::axpy(dim, -c, fn, dneg);
        }
      }
    }
    res.triplet_by_group[static_cast<size_t>(g)] = trip_sum / batch;
    res.triplet += res.triplet_by_group[static_cast<size_t>(g)];
  }
  res.ce /= kNumGroups;
  res.triplet /= kNumGroups;
  return res;
}

std::vector<double> residual_vector(const std::vector<double>& a_m,
                                    const std::vector<double>& a_n,
                                    const Tensor& basis) {
  if (basis.shape().size() != 2) throw Error("residual vector: basis must be [L, d]");
  const int rows = basis.shape()[0];
  const int dim = basis.shape()[1];
  if (static_cast<int>(a_m.size()) != rows || static_cast<int>(a_n.size()) != rows)
    throw Error("residual vector: attribute vector length does not match basis rows");

  std::vector<double> r(static_cast<size_t>(dim), 0.0);
  for (int l = 0; l < rows; ++l) {
    const double delta = a_m[static_cast<size_t>(l)] - a_n[static_cast<size_t>(l)];
    if (delta == 0.0) continue;
    kernels::axpy(dim, delta, basis.data() + static_cast<size_t>(l) * dim, r.data());
  }
  return r;
}

RegularizationResult regularization_loss(const AttributeSchema& schema,
                                         PrototypeBank& bank, double weight,
                                         bool with_grad) {
  namespace k = kernels;
  const int dim = bank.dim();
  RegularizationResult res;

  std::vector<double> e(static_cast<size_t>(dim));
  for (int g = 0; g < kNumGroups; ++g) {
    const GroupRole role = static_cast<GroupRole>(g);
    const AttributeGroup& group = schema.group(role);
    const long sids = bank.sid_count(role);
    if (sids != group.sid_count())
      throw Error("regularization: bank does not cover the group's SID enumeration");
    const int rows = group.vector_length();

    // attribute vectors, flattened [S, L]
    std::vector<double> attrs(static_cast<size_t>(sids) * rows);
    for (long i = 0; i < sids; ++i) {
      const std::vector<double> a = attribute_vector(group, sid_from_index(group, i));
      std::copy(a.begin(), a.end(), attrs.begin() + static_cast<size_t>(i) * rows);
    }

    Param& protos = bank.prototypes(role);
    Param& basis = bank.residual_basis(role);

    // c_i = p_i - sum_l v_l * A_i(l); every pair term is c_m - c_n
    Tensor centered({static_cast<int>(sids), dim});
    for (long i = 0; i < sids; ++i) {
      double* c = centered.data() + static_cast<size_t>(i) * dim;
      std::copy_n(protos.value.data() + static_cast<size_t>(i) * dim, dim, c);
      const double* a = attrs.data() + static_cast<size_t>(i) * rows;
      for (int l = 0; l < rows; ++l) {
        if (a[l] == 0.0) continue;
        k::axpy(dim, -a[l], basis.value.data() + static_cast<size_t>(l) * dim, c);
      }
    }

    Tensor dc({static_cast<int>(sids), dim});
    double group_sum = 0.0;
    for (long m = 0; m < sids; ++m) {
      const double* cm = centered.data() + static_cast<size_t>(m) * dim;
      for (long n = 0; n < sids; ++n) {
        if (n == m) continue;  // diagonal terms are identically zero
        const double* cn = centered.data() + static_cast<size_t>(n) * dim;
        k::vsub(dim, cm, cn, e.data());
        group_sum += k::sumsq(dim, e.data());
        if (with_grad) {
          k::axpy(dim, 2.0, e.data(), dc.data() + static_cast<size_t>(m) * dim);
          k::axpy(dim, -2.0, e.data(), dc.data() + static_cast<size_t>(n) * dim);
        }
      }
    }
    res.by_group[static_cast<size_t>(g)] = group_sum;
    res.value += group_sum;

    if (with_grad) {
      const double w = weight / kNumGroups;
      k::axpy(static_cast<int>(dc.numel()), w, dc.data(), protos.grad.data());
      for (long i = 0; i < sids; ++i) {
        const double* a = attrs.data() + static_cast<size_t>(i) * rows;
        const double* dci = dc.data() + static_cast<size_t>(i) * dim;
        for (int l = 0; l < rows; ++l) {
          if (a[l] == 0.0) continue;
          k::axpy(dim, -w * a[l], dci,
                  basis.grad.data() + static_cast<size_t>(l) * dim);
        }
      }
    }
  }
  res.value /= kNumGroups;
  return res;
}

LossReport total_loss(const SemanticGuidanceResult& sem,
                      const IdentificationResult& id,
                      const RegularizationResult& reg, const LossWeights& w) {
  LossReport r;
  r.sem = sem.value;
  r.id_ce = id.ce;
  r.id_triplet = id.triplet;
  r.reg = reg.value;
  r.sem_by_group = sem.by_group;
  r.ce_by_group = id.ce_by_group;
  r.triplet_by_group = id.triplet_by_group;
  r.reg_by_group = reg.by_group;
  r.total = w.lambda_sem * r.sem + w.lambda_id * (r.id_ce + r.id_triplet) +
            w.lambda_reg * r.reg;
  return r;
}

}  // namespace sidkit
