#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sidkit/core/rng.hpp"
#include "sidkit/core/tensor.hpp"
#include "sidkit/schema.hpp"

namespace sidkit {

// One image of one person. Attributes are annotated per identity, so every
// image of a person carries the same five SIDs (one per group, indexed by
// GroupRole order).
struct PersonRecord {
  std::string image_ref;  // source path or synthetic tag
  int image_index = -1;   // into DatasetBundle::images
  int person_id = 0;
  int camera_id = 0;
  std::array<SemanticId, kNumGroups> sids;
};

enum class SplitRole { kTrain, kQuery, kGallery };

struct DatasetSplit {
  SplitRole role = SplitRole::kTrain;
  std::vector<PersonRecord> records;

  // distinct persons in the split
  int num_persons() const;
  // distinct persons per SID index of `group` (the N^G_g statistics; sums to
  // num_persons() since each person has exactly one SID per group)
  std::vector<long> sid_person_counts(const AttributeGroup& group) const;
};

// Splits plus the shared decoded-image pool they index into.
struct DatasetBundle {
  std::vector<Tensor> images;  // each [3, H, W], values on the 1/255 grid
  int height = 0, width = 0;
  DatasetSplit train, query, gallery;
};

// ---------------------------------------------------------------------------
// Loading from disk
//
// Layout: <root>/{train,query,gallery}/<personID>_<cameraID>_*.ppm (cameraID
// may be written with or without a leading 'c'). The annotation table is
// delimited text (comma or tab): header `person_id` + one column per schema
// attribute; one row per person; labels shared by all images of the person.
struct LoadOptions {
  // if > 0, loading fails unless the train split has exactly this many
  // distinct annotated identities
  int expected_train_identities = 0;
};

DatasetBundle load_dataset(const std::string& root, const AttributeSchema& schema,
                           const std::string& annotations_path,
                           const LoadOptions& options = {});

// ---------------------------------------------------------------------------
// Synthetic data
//
// Procedurally rendered persons: each group's SID drives a visible cue
// (head band color/shape, torso block, leg block, side blob for carrying,
// global tint + body width for identity) and every person gets a unique
// fixed dot texture so identities within an SID combination stay
// distinguishable. Train persons are assigned SID combinations in pairs, so
// every rendered combination has two identities.
struct SyntheticSpec {
  int num_persons = 20;       // train identities
  int images_per_person = 8;  // train images, alternating cameras 0/1
  int query_per_person = 2;   // camera 1 renders
  int gallery_per_person = 2; // camera 0 renders
  int height = 64, width = 32;
  double noise = 0.02;             // Gaussian pixel noise std ([0,1] scale)
  double brightness_jitter = 0.05; // per-image uniform brightness factor +-
  int vertical_jitter = 0;         // max |row shift| per image

  // SIDs excluded from all train combinations; for each, `holdout_persons`
  // extra identities carrying it are added to query/gallery only
  struct Holdout {
    GroupRole group = GroupRole::kHead;
    int sid_index = 0;
  };
  std::vector<Holdout> holdout;
  int holdout_persons = 2;
};

DatasetBundle generate_synthetic(const SyntheticSpec& spec, const AttributeSchema& schema,
                                 uint64_t seed);

// ---------------------------------------------------------------------------
// PK batch sampling

struct SamplerConfig {
  int persons_per_batch = 16;  // P
  int images_per_person = 4;   // K
  uint64_t seed = 0;
  bool augment = true;
};

// box drawn over the image with a constant fill (random erasing)
struct EraseBox {
  bool active = false;
  int x = 0, y = 0, w = 0, h = 0;
  double value = 0.0;
};

struct BatchItem {
  int record_index = -1;  // into the split's records
  bool flip = false;
  EraseBox erase;
};

// Draws batches of P distinct persons x K images (with replacement when a
// person has fewer than K images). Owns its RNG; successive next() calls
// form one deterministic stream.
class PkSampler {
 public:
  PkSampler(const DatasetSplit& split, int image_height, int image_width,
            const SamplerConfig& cfg);

  std::vector<BatchItem> next();

  const SamplerConfig& config() const { return cfg_; }
  std::string save_rng() const { return rng_.save_state(); }
  void load_rng(const std::string& s) { rng_.load_state(s); }

 private:
  const DatasetSplit& split_;
  SamplerConfig cfg_;
  int height_, width_;
  RngStream rng_;
  std::vector<int> person_ids_;                    // distinct, sorted
  std::vector<std::vector<int>> images_by_person_; // record indices per person
};

}  // namespace sidkit
