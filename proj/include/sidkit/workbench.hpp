#pragma once

#include <array>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "sidkit/dataset.hpp"
#include "sidkit/evaluation.hpp"
#include "sidkit/model/model.hpp"
#include "sidkit/objectives.hpp"
#include "sidkit/retrieval.hpp"

namespace sidkit {

// Piecewise learning-rate schedule: linear warmup from lr_start to lr_peak
// over warmup_iters, then half-cosine decay to zero at total_iters.
struct LrSchedule {
  double lr_start = 3.5e-6;
  double lr_peak = 3.5e-4;
  long warmup_iters = 2000;
  long total_iters = 24000;

  // value used for the update at (0-based) iteration `iter`
  double at(long iter) const;
  void validate() const;
};

// Adaptive-moment gradient descent over a fixed parameter list
// (bias-corrected first/second moments, no weight decay).
class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::vector<NamedParam> params, double beta1 = 0.9,
                         double beta2 = 0.999, double eps = 1e-8);

  void step(double lr);

  long steps_taken() const { return t_; }
  void set_steps_taken(long t) { t_ = t; }
  // moment tensors in parameter order, named "<param>.m" / "<param>.v"
  std::vector<std::pair<std::string, Tensor*>> state();

 private:
  std::vector<NamedParam> params_;
  std::vector<Tensor> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

// Everything a run needs, loadable from a JSON file. Exactly one data source
// is set: either dataset_root (+ annotations_path) for an on-disk dataset or
// a synthetic spec.
struct RunConfig {
  std::string schema_path;

  std::string dataset_root;
  std::string annotations_path;
  std::optional<SyntheticSpec> synthetic;

  ModelConfig model;
  int persons_per_batch = 16;   // P
  int images_per_person = 4;    // K
  bool augment = true;          // horizontal flip + random erasing
  LrSchedule schedule;
  LossWeights weights;
  uint64_t seed = 0;
  long report_every = 50;       // JSONL log cadence (0 = final only)
  long checkpoint_every = 0;    // intermediate checkpoints (0 = final only)
  std::string output_dir = "runs/out";

  // numeric invariants + (optionally) that referenced paths exist
  void validate(bool check_paths = true) const;

  static RunConfig from_json_text(const std::string& text);
  static RunConfig load(const std::string& path);
  std::string to_json_text() const;  // canonical; parses back to an equal config
};

// Serializable training state. save -> load -> save is byte-stable.
struct Checkpoint {
  std::string config_text;  // RunConfig JSON, stored verbatim
  std::string schema_text;  // canonical schema JSON
  uint64_t schema_hash = 0;
  uint64_t iteration = 0;
  long adam_steps = 0;
  int num_ids = 0;
  std::array<std::vector<double>, kNumGroups> margins;
  // parameters, normalization buffers, and optimizer moments, in a fixed order
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::string sampler_rng;  // serialized sampler stream
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// materialize the [B, 3, H, W] input tensor for one sampled batch,
// applying each item's flip first and erase box second
Tensor assemble_batch(const DatasetBundle& data, const DatasetSplit& split,
                      const std::vector<BatchItem>& items);

// Owns the model, classifiers, optimizer, and data for one run. step()
// performs sample -> forward -> losses -> backward -> update; successive
// steps from the same seed form one deterministic stream.
class Trainer {
 public:
  explicit Trainer(const RunConfig& cfg);   // fresh initialization
  explicit Trainer(const Checkpoint& ck);   // resume

  LossReport step();
  Checkpoint snapshot() const;

  long iteration() const { return iter_; }
  double learning_rate(long iter) const { return cfg_.schedule.at(iter); }

  EmbeddingModel& model() { return *model_; }
  IdClassifiers& classifiers() { return *classifiers_; }
  const AttributeSchema& schema() const { return schema_; }
  const DatasetBundle& data() const { return data_; }
  const MarginTable& margins() const { return margins_; }
  const RunConfig& config() const { return cfg_; }
  int person_class(int person_id) const;  // contiguous train label

 private:
  void build_from_state();  // shared tail of both constructors

  RunConfig cfg_;
  std::string config_text_;
  std::string schema_text_;
  AttributeSchema schema_;
  DatasetBundle data_;
  std::unique_ptr<EmbeddingModel> model_;
  std::unique_ptr<IdClassifiers> classifiers_;
  std::unique_ptr<PkSampler> sampler_;
  std::unique_ptr<AdamOptimizer> adam_;
  MarginTable margins_;
  std::vector<int> train_person_ids_;  // sorted distinct
  long iter_ = 0;
};

// Full run: steps the trainer to schedule.total_iters, appends one JSON line
// per report_every iterations to <output_dir>/train_log.jsonl, writes the
// final checkpoint to <output_dir>/final.ckpt, and returns it. A non-finite
// loss aborts with Error after writing <output_dir>/diagnostic.ckpt and
// diagnostic.json. `progress`, when given, receives the same JSON lines.
// The Trainer overload continues from wherever the trainer stands (fresh or
// resumed from a checkpoint).
Checkpoint train(Trainer& trainer, std::ostream* progress = nullptr);
Checkpoint train(const RunConfig& cfg, std::ostream* progress = nullptr);

// Embed every record of a split with the model in inference mode (batched)
// and collect the post-normalization features into a gallery index.
GalleryIndex embed_split(EmbeddingModel& model, const AttributeSchema& schema,
                         const DatasetBundle& data, const DatasetSplit& split,
                         int batch_size = 32);

// distinct full five-group attribute queries present in a split, ordered by
// first appearance
std::vector<AttributeQuery> distinct_full_queries(const DatasetSplit& split);

}  // namespace sidkit
