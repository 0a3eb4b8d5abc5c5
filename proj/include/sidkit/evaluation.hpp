#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sidkit/retrieval.hpp"
#include "sidkit/schema.hpp"

namespace sidkit {

// AP = mean over relevant ranked items of precision at their rank. Empty
// ranking or no relevant item in it -> nullopt (query excluded upstream).
std::optional<double> average_precision(const RankedResult& ranking,
                                        const std::vector<char>& relevant);

// 1-based rank of the first relevant item; 0 when none appears.
long first_hit_rank(const RankedResult& ranking, const std::vector<char>& relevant);

struct RetrievalMetrics {
  double mean_ap = 0.0;
  std::vector<double> cmc;  // cmc[k-1] = fraction of queries with a hit in top k
  long evaluated = 0;
  long skipped = 0;  // queries with no relevant gallery item
};

// Fold per-query rankings + relevance masks into mAP / CMC. Queries whose
// ranking contains no relevant item are skipped with a note to clog.
RetrievalMetrics evaluate_rankings(const std::vector<RankedResult>& rankings,
                                   const std::vector<std::vector<char>>& relevant,
                                   int max_rank);

// Person re-identification: reid_score per (query, gallery) pair, protocol
// filter optional, relevance = same person id.
RetrievalMetrics evaluate_reid(const GalleryIndex& queries, const GalleryIndex& gallery,
                               bool protocol_filter, int max_rank);

// Attribute-based person search: aps_score per query, relevance = gallery
// item matches the query's SID on every present group.
RetrievalMetrics evaluate_aps(const std::vector<AttributeQuery>& queries,
                              const PrototypeBank& bank, const GalleryIndex& gallery,
                              int max_rank);

struct ParMetrics {
  double mean_accuracy = 0.0;
  // "group.attribute" -> accuracy, schema order
  std::vector<std::pair<std::string, double>> per_attribute;
};

// Per-attribute accuracy of predicted vs true SIDs (label-level comparison
// after expanding each SID), averaged without weighting into mA. The
// balanced variant macro-averages per-label recalls within each attribute.
ParMetrics mean_attribute_accuracy(const AttributeSchema& schema,
                                   const std::vector<std::array<long, kNumGroups>>& predicted,
                                   const std::vector<std::array<long, kNumGroups>>& truth,
                                   bool balanced);

// Nearest-prototype attribute recognition over every item of the index.
ParMetrics evaluate_par(const GalleryIndex& items, const PrototypeBank& bank,
                        const AttributeSchema& schema, bool balanced);

}  // namespace sidkit
