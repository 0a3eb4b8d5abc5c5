#pragma once

#include <array>
#include <string>
#include <vector>

#include "sidkit/core/tensor.hpp"
#include "sidkit/dataset.hpp"
#include "sidkit/model/model.hpp"
#include "sidkit/schema.hpp"

namespace sidkit {

// Normalized per-group embeddings for a set of images plus the metadata the
// retrieval protocols need. Immutable once built; persisted as a binary
// embedding file plus a JSON sidecar (<path>.meta.json).
struct GalleryIndex {
  uint64_t schema_hash = 0;
  int dim = 0;
  std::array<Tensor, kNumGroups> feats;  // [N, d] each, L2-normalized rows
  std::vector<int> person_ids;
  std::vector<int> camera_ids;
  std::vector<std::array<long, kNumGroups>> sids;  // SID index per group
  std::vector<std::string> image_refs;

  long size() const { return static_cast<long>(person_ids.size()); }
};

// Scale rows to unit L2 norm; rows with norm < 1e-12 are left untouched.
void l2_normalize_rows(Tensor& m);

// Assemble an index from a split's post-normalization features ([N, d] per
// group, rows aligned with split.records). Normalizes in place.
GalleryIndex build_gallery_index(uint64_t schema_hash,
                                 std::array<Tensor, kNumGroups> post_feats,
                                 const DatasetSplit& split);

void save_gallery_index(const GalleryIndex& index, const std::string& path);
GalleryIndex load_gallery_index(const std::string& path);

// One item's five embedding rows.
struct RepView {
  std::array<const double*, kNumGroups> rows{};
  int dim = 0;
};
RepView item_view(const GalleryIndex& index, long item);

// Mean of the five per-group cosine similarities (plain dot products on
// normalized inputs). Symmetric; in [-1, 1].
double reid_score(const RepView& a, const RepView& b);
std::vector<double> reid_scores(const RepView& query, const GalleryIndex& gallery);

// A (possibly partial) attribute description: one SID per present group.
struct AttributeQuery {
  std::array<bool, kNumGroups> present{};
  std::array<long, kNumGroups> sid{};
  int group_count() const;
};

// Text form: whitespace- or ';'-separated chunks of
// "group:attr=label,attr=label"; every attribute of a named group must be
// given. Example: "identity:gender=female,age=adult carrying:backpack=present"
AttributeQuery parse_attribute_query(const AttributeSchema& schema, const std::string& text);

// Mean cosine similarity between each present group's normalized prototype
// and the item's representation; absent groups excluded from the mean. With
// all five groups present this equals reid_score with the prototypes
// substituted for the query representations, exactly.
double aps_score(const AttributeQuery& query, const PrototypeBank& bank, const RepView& item);
std::vector<double> aps_scores(const AttributeQuery& query, const PrototypeBank& bank,
                               const GalleryIndex& gallery);

// Nearest-prototype classification: per group, the SID index of maximal
// cosine similarity (ties -> smallest index).
std::array<long, kNumGroups> par_predict(const RepView& item, const PrototypeBank& bank);

// Gallery ranking, best first. order holds original gallery indices;
// filtered-out items are absent.
struct RankedResult {
  std::vector<long> order;
  std::vector<double> scores;
};

// Standard single-query evaluation rule: drop gallery items sharing both
// person and camera with the query.
std::vector<char> protocol_keep_mask(const GalleryIndex& gallery, int query_person,
                                     int query_camera);

RankedResult rank(const std::vector<double>& scores);
RankedResult rank(const std::vector<double>& scores, const std::vector<char>& keep);

}  // namespace sidkit
