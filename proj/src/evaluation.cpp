#include "sidkit/evaluation.hpp"

#include <cmath>
#include <iostream>

namespace sidkit {

std::optional<double> average_precision(const RankedResult& ranking,
                                        const std::vector<char>& relevant) {
  long total_relevant = 0;
  for (long idx : ranking.order)
    if (relevant[static_cast<size_t>(idx)]) ++total_relevant;
  if (total_relevant == 0) return std::nullopt;

  double sum = 0.0;
  long hits = 0;
  for (size_t r = 0; r < ranking.order.size(); ++r) {
    if (!relevant[static_cast<size_t>(ranking.order[r])]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  return sum / static_cast<double>(total_relevant);
}

long first_hit_rank(const RankedResult& ranking, const std::vector<char>& relevant) {
  for (size_t r = 0; r < ranking.order.size(); ++r)
    if (relevant[static_cast<size_t>(ranking.order[r])]) return static_cast<long>(r + 1);
  return 0;
}

RetrievalMetrics evaluate_rankings(const std::vector<RankedResult>& rankings,
                                   const std::vector<std::vector<char>>& relevant,
                                   int max_rank) {
  if (rankings.size() != relevant.size())
    throw Error("evaluation: one relevance mask per ranking required");
  if (max_rank < 1) throw Error("evaluation: max_rank must be >= 1");

  RetrievalMetrics m;
  m.cmc.assign(static_cast<size_t>(max_rank), 0.0);
  double ap_sum = 0.0;
  for (size_t q = 0; q < rankings.size(); ++q) {
    const auto ap = average_precision(rankings[q], relevant[q]);
    if (!ap.has_value()) {
      ++m.skipped;
      std::clog << "[eval] query " << q << " has no relevant gallery item; skipped\n";
      continue;
    }
    ++m.evaluated;
    ap_sum += *ap;
    const long hit = first_hit_rank(rankings[q], relevant[q]);
    if (hit >= 1 && hit <= max_rank) m.cmc[static_cast<size_t>(hit - 1)] += 1.0;
  }
  if (m.evaluated > 0) {
    m.mean_ap = ap_sum / static_cast<double>(m.evaluated);
    double acc = 0.0;
    for (auto& c : m.cmc) {
      acc += c;
      c = acc / static_cast<double>(m.evaluated);
    }
  }
  return m;
}

RetrievalMetrics evaluate_reid(const GalleryIndex& queries, const GalleryIndex& gallery,
                               bool protocol_filter, int max_rank) {
  if (queries.dim != gallery.dim) throw Error("evaluation: query/gallery dimension mismatch");
  if (queries.schema_hash != gallery.schema_hash)
    throw Error("evaluation: query/gallery schema mismatch");
  if (queries.size() == 0) throw Error("evaluation: no queries");

  std::vector<RankedResult> rankings;
  std::vector<std::vector<char>> relevant;
  rankings.reserve(static_cast<size_t>(queries.size()));
  for (long q = 0; q < queries.size(); ++q) {
    const auto scores = reid_scores(item_view(queries, q), gallery);
    const int pid = queries.person_ids[static_cast<size_t>(q)];
    const std::vector<char> keep =
        protocol_filter
            ? protocol_keep_mask(gallery, pid, queries.camera_ids[static_cast<size_t>(q)])
            : std::vector<char>(static_cast<size_t>(gallery.size()), 1);
    rankings.push_back(rank(scores, keep));

    std::vector<char> rel(static_cast<size_t>(gallery.size()), 0);
    for (long i = 0; i < gallery.size(); ++i)
      rel[static_cast<size_t>(i)] = gallery.person_ids[static_cast<size_t>(i)] == pid ? 1 : 0;
    relevant.push_back(std::move(rel));
  }
  return evaluate_rankings(rankings, relevant, max_rank);
}

RetrievalMetrics evaluate_aps(const std::vector<AttributeQuery>& queries,
                              const PrototypeBank& bank, const GalleryIndex& gallery,
                              int max_rank) {
  if (queries.empty()) throw Error("evaluation: no queries");
  std::vector<RankedResult> rankings;
  std::vector<std::vector<char>> relevant;
  rankings.reserve(queries.size());
  for (const auto& q : queries) {
    rankings.push_back(rank(aps_scores(q, bank, gallery)));
    std::vector<char> rel(static_cast<size_t>(gallery.size()), 1);
    for (long i = 0; i < gallery.size(); ++i)
      for (int g = 0; g < kNumGroups; ++g)
        if (q.present[static_cast<size_t>(g)] &&
            gallery.sids[static_cast<size_t>(i)][static_cast<size_t>(g)] !=
                q.sid[static_cast<size_t>(g)]) {
          rel[static_cast<size_t>(i)] = 0;
          break;
        }
    relevant.push_back(std::move(rel));
  }
  return evaluate_rankings(rankings, relevant, max_rank);
}

ParMetrics mean_attribute_accuracy(const AttributeSchema& schema,
                                   const std::vector<std::array<long, kNumGroups>>& predicted,
                                   const std::vector<std::array<long, kNumGroups>>& truth,
                                   bool balanced) {
  if (predicted.size() != truth.size())
    throw Error("attribute accuracy: prediction/truth count mismatch");
  if (predicted.empty()) throw Error("attribute accuracy: no items");
  const long n = static_cast<long>(predicted.size());

  ParMetrics out;
  double sum = 0.0;
  long attr_count = 0;
  for (int g = 0; g < kNumGroups; ++g) {
    const GroupRole role = static_cast<GroupRole>(g);
    const AttributeGroup& group = schema.group(role);
    // per-item label choices, computed once per group
    std::vector<std::vector<int>> pred_labels(static_cast<size_t>(n)),
        true_labels(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) {
      pred_labels[static_cast<size_t>(i)] =
          sid_from_index(group, predicted[static_cast<size_t>(i)][static_cast<size_t>(g)])
              .label_choice;
      true_labels[static_cast<size_t>(i)] =
          sid_from_index(group, truth[static_cast<size_t>(i)][static_cast<size_t>(g)])
              .label_choice;
    }
    for (int a = 0; a < group.attribute_count(); ++a) {
      const AttributeDef& attr = group.attributes[static_cast<size_t>(a)];
      double acc;
      if (!balanced) {
        long correct = 0;
        for (long i = 0; i < n; ++i)
          if (pred_labels[static_cast<size_t>(i)][static_cast<size_t>(a)] ==
              true_labels[static_cast<size_t>(i)][static_cast<size_t>(a)])
            ++correct;
        acc = static_cast<double>(correct) / static_cast<double>(n);
      } else {
        // macro over labels that occur in the truth: mean per-label recall
        double recall_sum = 0.0;
        int present_labels = 0;
        for (int v = 0; v < attr.label_count(); ++v) {
          long total = 0, correct = 0;
          for (long i = 0; i < n; ++i) {
            if (true_labels[static_cast<size_t>(i)][static_cast<size_t>(a)] != v) continue;
            ++total;
            if (pred_labels[static_cast<size_t>(i)][static_cast<size_t>(a)] == v) ++correct;
          }
          if (total == 0) continue;
          ++present_labels;
          recall_sum += static_cast<double>(correct) / static_cast<double>(total);
        }
        acc = present_labels > 0 ? recall_sum / present_labels : 0.0;
      }
      out.per_attribute.emplace_back(std::string(role_name(role)) + "." + attr.name, acc);
      sum += acc;
      ++attr_count;
    }
  }
  out.mean_accuracy = sum / static_cast<double>(attr_count);
  return out;
}

ParMetrics evaluate_par(const GalleryIndex& items, const PrototypeBank& bank,
                        const AttributeSchema& schema, bool balanced) {
  if (items.size() == 0) throw Error("evaluation: no items");
  std::vector<std::array<long, kNumGroups>> predicted;
  predicted.reserve(static_cast<size_t>(items.size()));
  for (long i = 0; i < items.size(); ++i)
    predicted.push_back(par_predict(item_view(items, i), bank));
  return mean_attribute_accuracy(schema, predicted, items.sids, balanced);
}

}  // namespace sidkit
