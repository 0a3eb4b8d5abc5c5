#include "sidkit/model/model.hpp"

#include <cmath>

#include "sidkit/kernels.hpp"

namespace sidkit {

// ---------------------------------------------------------------------------
// PrototypeBank

PrototypeBank::PrototypeBank(const AttributeSchema& schema, int dim) : dim_(dim) {
  for (const auto& g : schema.groups()) {
    const auto r = static_cast<size_t>(g.role);
    counts_[r] = g.sid_count();
    basis_rows_[r] = g.vector_length();
    protos_[r].resize({static_cast<int>(g.sid_count()), dim});
    basis_[r].resize({g.vector_length(), dim});
  }
}

void PrototypeBank::init(RngStream& rng) {
  const double std = std::sqrt(2.0 / dim_);
  for (auto& p : protos_) {
    for (auto& v : p.value.vec()) v = rng.normal(0.0, std);
    p.grad.zero();
  }
  for (auto& b : basis_) {
    b.value.zero();  // residual directions start neutral and are learned
    b.grad.zero();
  }
}

const double* PrototypeBank::prototype(GroupRole role, long sid) const {
  const auto r = static_cast<size_t>(role);
  if (sid < 0 || sid >= counts_[r])
    throw Error("prototype index " + std::to_string(sid) + " out of range for group '" +
                role_name(role) + "'");
  return protos_[r].value.data() + static_cast<size_t>(sid) * dim_;
}

std::vector<NamedParam> PrototypeBank::parameters() {
  std::vector<NamedParam> out;
  for (int g = 0; g < kNumGroups; ++g) {
    const std::string role = role_name(static_cast<GroupRole>(g));
    out.push_back({"proto." + role + ".p", &protos_[static_cast<size_t>(g)]});
    out.push_back({"proto." + role + ".v", &basis_[static_cast<size_t>(g)]});
  }
  return out;
}

// ---------------------------------------------------------------------------
// EmbeddingModel

EmbeddingModel::EmbeddingModel(const ModelConfig& cfg, const AttributeSchema& schema)
    : cfg_(cfg), align_(cfg.sigma), bank_(schema, cfg.embed_dim) {
  if (cfg_.channels.size() < 2) throw Error("model needs at least two conv blocks");
  if (cfg_.sigma <= 0.0) throw Error("alignment threshold must be positive");

  int in_ch = 3;
  for (size_t i = 0; i + 1 < cfg_.channels.size(); ++i) {
    trunk_.push_back(std::make_unique<Block>(in_ch, cfg_.channels[i]));
    in_ch = cfg_.channels[i];
  }
  const int out_ch = cfg_.channels.back();
  branch_g_ = std::make_unique<Block>(in_ch, out_ch);
  branch_l_ = std::make_unique<Block>(in_ch, out_ch);

  const int fh = cfg_.feature_height();
  const int r0 = static_cast<int>(fh * cfg_.band_fractions[0]);
  const int r1 = static_cast<int>(fh * cfg_.band_fractions[1]);
  band_rows_ = {0, r0, r1, fh};
  for (int bandid = 0; bandid < 3; ++bandid)
    if (band_rows_[static_cast<size_t>(bandid)] >= band_rows_[static_cast<size_t>(bandid) + 1])
      throw Error("feature map of height " + std::to_string(fh) +
                  " cannot be split into three bands; use a taller input");

  for (int g = 0; g < kNumGroups; ++g)
    heads_.push_back(std::make_unique<Head>(out_ch, cfg_.embed_dim));
}

void EmbeddingModel::init(uint64_t seed) {
  RngForest forest(seed);
  for (size_t i = 0; i < trunk_.size(); ++i) {
    auto s = forest.stream("init.trunk" + std::to_string(i));
    trunk_[i]->conv.init(s);
    trunk_[i]->bn.init();
  }
  {
    auto s = forest.stream("init.branch");
    branch_g_->conv.init(s);
    branch_g_->bn.init();
    // the local branch starts as an exact copy of the global branch
    branch_l_->conv.w.value = branch_g_->conv.w.value;
    branch_l_->conv.w.grad.zero();
    branch_l_->bn.init();
  }
  for (int g = 0; g < kNumGroups; ++g) {
    auto s = forest.stream(std::string("init.head.") + role_name(static_cast<GroupRole>(g)));
    heads_[static_cast<size_t>(g)]->fc.init(s);
    heads_[static_cast<size_t>(g)]->bn.init();
  }
  auto s = forest.stream("init.bank");
  bank_.init(s);
}

std::pair<Tensor, Tensor> EmbeddingModel::feature_maps(const Tensor& images, bool train) {
  if (images.ndim() != 4 || images.dim(1) != 3 || images.dim(2) != cfg_.height ||
      images.dim(3) != cfg_.width)
    throw Error("model expects [B, 3, " + std::to_string(cfg_.height) + ", " +
                std::to_string(cfg_.width) + "] images");
  Tensor x = images;
  for (auto& block : trunk_) x = block->forward(x, train);
  Tensor fg = branch_g_->forward(x, train);
  Tensor fl = branch_l_->forward(x, train);
  return {std::move(fg), std::move(fl)};
}

RepresentationSet EmbeddingModel::forward(const Tensor& images, bool train) {
  auto [fg, fl] = feature_maps(images, train);
  const Tensor aligned = cfg_.align_enabled ? align_.forward(fl) : fl;

  const Tensor pooled_global = gap_.forward(fg);
  std::array<Tensor, 3> pooled_band;
  for (int bandid = 0; bandid < 3; ++bandid)
    pooled_band[static_cast<size_t>(bandid)] =
        bands_[static_cast<size_t>(bandid)].forward(aligned,
                                                    band_rows_[static_cast<size_t>(bandid)],
                                                    band_rows_[static_cast<size_t>(bandid) + 1]);

  RepresentationSet reps;
  for (int g = 0; g < kNumGroups; ++g) {
    const auto role = static_cast<GroupRole>(g);
    const Tensor& pooled =
        (role == GroupRole::kIdentity || role == GroupRole::kCarrying)
            ? pooled_global
            : pooled_band[static_cast<size_t>(g)];  // head/upper/lower = bands 0/1/2
    auto& head = *heads_[static_cast<size_t>(g)];
    reps.pre[static_cast<size_t>(g)] = head.fc.forward(pooled);
    reps.post[static_cast<size_t>(g)] = head.bn.forward(reps.pre[static_cast<size_t>(g)], train);
  }
  return reps;
}

void EmbeddingModel::backward(const std::array<Tensor, kNumGroups>& dpre,
                              const std::array<Tensor, kNumGroups>& dpost) {
  Tensor dglobal_pooled;  // accumulated [B, C]
  std::array<Tensor, 3> dband_pooled;

  for (int g = 0; g < kNumGroups; ++g) {
    const auto role = static_cast<GroupRole>(g);
    auto& head = *heads_[static_cast<size_t>(g)];
    Tensor dpre_total = head.bn.backward(dpost[static_cast<size_t>(g)]);
    kernels::axpy(static_cast<int>(dpre_total.numel()), 1.0,
                  dpre[static_cast<size_t>(g)].data(), dpre_total.data());
    Tensor dpooled = head.fc.backward(dpre_total);
    if (role == GroupRole::kIdentity || role == GroupRole::kCarrying) {
      if (dglobal_pooled.empty())
        dglobal_pooled = std::move(dpooled);
      else
        kernels::axpy(static_cast<int>(dpooled.numel()), 1.0, dpooled.data(),
                      dglobal_pooled.data());
    } else {
      dband_pooled[static_cast<size_t>(g)] = std::move(dpooled);
    }
  }

  Tensor daligned;
  for (int bandid = 0; bandid < 3; ++bandid) {
    Tensor d = bands_[static_cast<size_t>(bandid)].backward(
        dband_pooled[static_cast<size_t>(bandid)]);
    if (daligned.empty())
      daligned = std::move(d);
    else
      kernels::axpy(static_cast<int>(d.numel()), 1.0, d.data(), daligned.data());
  }
  const Tensor dfl = cfg_.align_enabled ? align_.backward(daligned) : daligned;
  const Tensor dfg = gap_.backward(dglobal_pooled);

  Tensor dtrunk = branch_g_->backward(dfg);
  Tensor dtrunk_l = branch_l_->backward(dfl);
  kernels::axpy(static_cast<int>(dtrunk_l.numel()), 1.0, dtrunk_l.data(), dtrunk.data());
  for (size_t i = trunk_.size(); i-- > 0;) dtrunk = trunk_[i]->backward(dtrunk);
}

std::vector<NamedParam> EmbeddingModel::parameters() {
  std::vector<NamedParam> out;
  auto add_block = [&out](const std::string& prefix, Block& b) {
    out.push_back({prefix + ".conv.w", &b.conv.w});
    out.push_back({prefix + ".bn.gamma", &b.bn.gamma});
    out.push_back({prefix + ".bn.beta", &b.bn.beta});
  };
  for (size_t i = 0; i < trunk_.size(); ++i)
    add_block("trunk." + std::to_string(i), *trunk_[i]);
  add_block("branch_g", *branch_g_);
  add_block("branch_l", *branch_l_);
  for (int g = 0; g < kNumGroups; ++g) {
    const std::string prefix = std::string("head.") + role_name(static_cast<GroupRole>(g));
    out.push_back({prefix + ".fc.w", &heads_[static_cast<size_t>(g)]->fc.w});
    out.push_back({prefix + ".bn.gamma", &heads_[static_cast<size_t>(g)]->bn.gamma});
    out.push_back({prefix + ".bn.beta", &heads_[static_cast<size_t>(g)]->bn.beta});
  }
  for (auto& p : bank_.parameters()) out.push_back(p);
  return out;
}

std::vector<NamedBuffer> EmbeddingModel::buffers() {
  std::vector<NamedBuffer> out;
  auto add_bn = [&out](const std::string& prefix, BatchNorm& bn) {
    out.push_back({prefix + ".running_mean", &bn.running_mean});
    out.push_back({prefix + ".running_var", &bn.running_var});
  };
  for (size_t i = 0; i < trunk_.size(); ++i)
    add_bn("trunk." + std::to_string(i) + ".bn", trunk_[i]->bn);
  add_bn("branch_g.bn", branch_g_->bn);
  add_bn("branch_l.bn", branch_l_->bn);
  for (int g = 0; g < kNumGroups; ++g)
    add_bn(std::string("head.") + role_name(static_cast<GroupRole>(g)) + ".bn",
           heads_[static_cast<size_t>(g)]->bn);
  return out;
}

void EmbeddingModel::zero_grads() {
  for (auto& p : parameters()) p.param->grad.zero();
}

long EmbeddingModel::parameter_count() {
  long n = 0;
  for (auto& p : parameters()) n += static_cast<long>(p.param->value.numel());
  return n;
}

// ---------------------------------------------------------------------------
// IdClassifiers

IdClassifiers::IdClassifiers(int dim, int num_ids) : num_ids_(num_ids) {
  for (int g = 0; g < kNumGroups; ++g) fc_.emplace_back(dim, num_ids, true);
}

void IdClassifiers::init(RngStream& rng) {
  for (auto& fc : fc_) fc.init(rng);
}

Tensor IdClassifiers::logits(GroupRole role, const Tensor& feats) {
  return fc_[static_cast<size_t>(role)].forward(feats);
}

Tensor IdClassifiers::backward(GroupRole role, const Tensor& dlogits) {
  return fc_[static_cast<size_t>(role)].backward(dlogits);
}

std::vector<NamedParam> IdClassifiers::parameters() {
  std::vector<NamedParam> out;
  for (int g = 0; g < kNumGroups; ++g) {
    const std::string prefix = std::string("classifier.") + role_name(static_cast<GroupRole>(g));
    out.push_back({prefix + ".w", &fc_[static_cast<size_t>(g)].w});
    out.push_back({prefix + ".b", &fc_[static_cast<size_t>(g)].b});
  }
  return out;
}

}  // namespace sidkit
