#include "sidkit/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "sidkit/kernels.hpp"

namespace sidkit {
namespace {

constexpr char kMagic[8] = {'S', 'I', 'D', 'K', 'I', 'T', 'E', 'M'};
constexpr uint32_t kFormatVersion = 1;
constexpr double kNormEps = 1e-12;

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(std::string("embedding file truncated while reading ") + what);
  return v;
}

std::string hash_hex(uint64_t h) {
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

uint64_t hash_from_hex(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

}  // namespace

void l2_normalize_rows(Tensor& m) {
  if (m.shape().size() != 2) throw Error("normalize: expected a [N, d] matrix");
  const int rows = m.shape()[0], dim = m.shape()[1];
  for (int r = 0; r < rows; ++r) {
    double* row = m.data() + static_cast<size_t>(r) * dim;
    const double norm = std::sqrt(kernels::sumsq(dim, row));
    if (norm < kNormEps) continue;
    kernels::scal(dim, 1.0 / norm, row);
  }
}

GalleryIndex build_gallery_index(uint64_t schema_hash,
                                 std::array<Tensor, kNumGroups> post_feats,
                                 const DatasetSplit& split) {
  const long n = static_cast<long>(split.records.size());
  for (const auto& t : post_feats) {
    if (t.shape().size() != 2 || t.shape()[0] != n)
      throw Error("gallery index: features must be [N, d] with one row per record");
    if (!(t.shape() == post_feats[0].shape()))
      throw Error("gallery index: per-group feature shapes differ");
  }

  GalleryIndex g;
  g.schema_hash = schema_hash;
  g.dim = n > 0 ? post_feats[0].shape()[1] : 0;
  g.feats = std::move(post_feats);
  for (auto& t : g.feats) l2_normalize_rows(t);

  g.person_ids.reserve(static_cast<size_t>(n));
  for (const auto& rec : split.records) {
    g.person_ids.push_back(rec.person_id);
    g.camera_ids.push_back(rec.camera_id);
    g.image_refs.push_back(rec.image_ref);
    std::array<long, kNumGroups> row{};
    for (int k = 0; k < kNumGroups; ++k) row[static_cast<size_t>(k)] = rec.sids[static_cast<size_t>(k)].index;
    g.sids.push_back(row);
  }
  return g;
}

void save_gallery_index(const GalleryIndex& index, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write embedding file: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kFormatVersion);
  write_pod(out, index.schema_hash);
  write_pod(out, static_cast<uint32_t>(index.dim));
  write_pod(out, static_cast<uint64_t>(index.size()));
  for (long i = 0; i < index.size(); ++i)
    for (int g = 0; g < kNumGroups; ++g)
      out.write(reinterpret_cast<const char*>(index.feats[g].data() +
                                              static_cast<size_t>(i) * index.dim),
                static_cast<std::streamsize>(sizeof(double)) * index.dim);
  if (!out) throw Error("short write on embedding file: " + path);
  out.close();

  nlohmann::json meta;
  meta["schema_hash"] = hash_hex(index.schema_hash);
  meta["dim"] = index.dim;
  meta["count"] = index.size();
  meta["person_ids"] = index.person_ids;
  meta["camera_ids"] = index.camera_ids;
  meta["image_refs"] = index.image_refs;
  meta["sids"] = index.sids;
  std::ofstream side(path + ".meta.json");
  if (!side) throw Error("cannot write sidecar: " + path + ".meta.json");
  side << meta.dump(2) << "\n";
}

GalleryIndex load_gallery_index(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open embedding file: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::string(magic, 8) != std::string(kMagic, 8))
    throw Error("not an embedding file: " + path);
  const auto version = read_pod<uint32_t>(in, "version");
  if (version != kFormatVersion)
    throw Error("unsupported embedding file version " + std::to_string(version));

  GalleryIndex g;
  g.schema_hash = read_pod<uint64_t>(in, "schema hash");
  g.dim = static_cast<int>(read_pod<uint32_t>(in, "dimension"));
  const auto count = static_cast<long>(read_pod<uint64_t>(in, "count"));
  if (g.dim < 0 || count < 0) throw Error("corrupt embedding header: " + path);

  for (auto& t : g.feats) t = Tensor({static_cast<int>(count), g.dim});
  for (long i = 0; i < count; ++i)
    for (int k = 0; k < kNumGroups; ++k) {
      in.read(reinterpret_cast<char*>(g.feats[k].data() + static_cast<size_t>(i) * g.dim),
              static_cast<std::streamsize>(sizeof(double)) * g.dim);
      if (!in) throw Error("embedding file truncated: " + path);
    }

  std::ifstream side(path + ".meta.json");
  if (!side) throw Error("missing sidecar: " + path + ".meta.json");
  nlohmann::json meta;
  try {
    side >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad sidecar JSON: " + std::string(e.what()));
  }
  try {
    if (hash_from_hex(meta.at("schema_hash").get<std::string>()) != g.schema_hash)
      throw Error("sidecar schema hash disagrees with embedding file: " + path);
    g.person_ids = meta.at("person_ids").get<std::vector<int>>();
    g.camera_ids = meta.at("camera_ids").get<std::vector<int>>();
    g.image_refs = meta.at("image_refs").get<std::vector<std::string>>();
    g.sids = meta.at("sids").get<std::vector<std::array<long, kNumGroups>>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad sidecar JSON: " + std::string(e.what()));
  }
  if (static_cast<long>(g.person_ids.size()) != count ||
      static_cast<long>(g.camera_ids.size()) != count ||
      static_cast<long>(g.image_refs.size()) != count ||
      static_cast<long>(g.sids.size()) != count)
    throw Error("sidecar row count disagrees with embedding file: " + path);
  return g;
}

RepView item_view(const GalleryIndex& index, long item) {
  if (item < 0 || item >= index.size()) throw Error("gallery item index out of range");
  RepView v;
  v.dim = index.dim;
  for (int g = 0; g < kNumGroups; ++g)
    v.rows[static_cast<size_t>(g)] =
        index.feats[g].data() + static_cast<size_t>(item) * index.dim;
  return v;
}

double reid_score(const RepView& a, const RepView& b) {
  if (a.dim != b.dim) throw Error("reid score: dimension mismatch");
  double sum = 0.0;
  for (int g = 0; g < kNumGroups; ++g)
    sum += kernels::dot(a.dim, a.rows[static_cast<size_t>(g)], b.rows[static_cast<size_t>(g)]);
  return sum / static_cast<double>(kNumGroups);
}

std::vector<double> reid_scores(const RepView& query, const GalleryIndex& gallery) {
  std::vector<double> out(static_cast<size_t>(gallery.size()));
  for (long i = 0; i < gallery.size(); ++i) out[static_cast<size_t>(i)] = reid_score(query, item_view(gallery, i));
  return out;
}

int AttributeQuery::group_count() const {
  int n = 0;
  for (bool p : present) n += p ? 1 : 0;
  return n;
}

AttributeQuery parse_attribute_query(const AttributeSchema& schema, const std::string& text) {
  AttributeQuery q;
  std::string spaced = text;
  std::replace(spaced.begin(), spaced.end(), ';', ' ');
  std::istringstream tokens(spaced);
  std::string chunk;
  while (tokens >> chunk) {
    if (chunk.rfind("group=", 0) == 0) chunk = chunk.substr(6);
    const auto colon = chunk.find(':');
    if (colon == std::string::npos)
      throw Error("bad query chunk '" + chunk + "': expected group:attr=label,...");
    const auto maybe_role = role_from_name(chunk.substr(0, colon));
    if (!maybe_role)
      throw Error("unknown group '" + chunk.substr(0, colon) + "' in attribute query");
    const GroupRole role = *maybe_role;
    if (q.present[static_cast<size_t>(role)])
      throw Error("query names group '" + std::string(role_name(role)) + "' twice");

    std::map<std::string, std::string> labels;
    std::istringstream pairs(chunk.substr(colon + 1));
    std::string pair;
    while (std::getline(pairs, pair, ',')) {
      const auto eq = pair.find('=');
      if (eq == std::string::npos || eq == 0 || eq + 1 == pair.size())
        throw Error("bad query pair '" + pair + "': expected attr=label");
      if (!labels.emplace(pair.substr(0, eq), pair.substr(eq + 1)).second)
        throw Error("query repeats attribute '" + pair.substr(0, eq) + "'");
    }
    const SemanticId sid = sid_of(schema.group(role), labels);
    q.present[static_cast<size_t>(role)] = true;
    q.sid[static_cast<size_t>(role)] = sid.index;
  }
  if (q.group_count() == 0) throw Error("attribute query names no groups");
  return q;
}

double aps_score(const AttributeQuery& query, const PrototypeBank& bank, const RepView& item) {
  if (item.dim != bank.dim()) throw Error("aps score: dimension mismatch");
  if (query.group_count() == 0) throw Error("aps score: empty query");
  Tensor proto({1, bank.dim()});
  double sum = 0.0;
  int count = 0;
  for (int g = 0; g < kNumGroups; ++g) {
    if (!query.present[static_cast<size_t>(g)]) continue;
    const GroupRole role = static_cast<GroupRole>(g);
    const double* row = bank.prototype(role, query.sid[static_cast<size_t>(g)]);
    std::copy_n(row, bank.dim(), proto.data());
    l2_normalize_rows(proto);
    sum += kernels::dot(item.dim, proto.data(), item.rows[static_cast<size_t>(g)]);
    ++count;
  }
  return sum / static_cast<double>(count);
}

std::vector<double> aps_scores(const AttributeQuery& query, const PrototypeBank& bank,
                               const GalleryIndex& gallery) {
  if (gallery.dim != bank.dim()) throw Error("aps score: dimension mismatch");
  if (query.group_count() == 0) throw Error("aps score: empty query");
  // normalize the queried prototypes once
  Tensor protos({kNumGroups, bank.dim()});
  for (int g = 0; g < kNumGroups; ++g)
    if (query.present[static_cast<size_t>(g)])
      std::copy_n(bank.prototype(static_cast<GroupRole>(g), query.sid[static_cast<size_t>(g)]),
                  bank.dim(), protos.data() + static_cast<size_t>(g) * bank.dim());
  l2_normalize_rows(protos);

  const double count = static_cast<double>(query.group_count());
  std::vector<double> out(static_cast<size_t>(gallery.size()));
  for (long i = 0; i < gallery.size(); ++i) {
    double sum = 0.0;
    for (int g = 0; g < kNumGroups; ++g) {
      if (!query.present[static_cast<size_t>(g)]) continue;
      sum += kernels::dot(gallery.dim, protos.data() + static_cast<size_t>(g) * bank.dim(),
                          gallery.feats[g].data() + static_cast<size_t>(i) * gallery.dim);
    }
    out[static_cast<size_t>(i)] = sum / count;
  }
  return out;
}

std::array<long, kNumGroups> par_predict(const RepView& item, const PrototypeBank& bank) {
  if (item.dim != bank.dim()) throw Error("par predict: dimension mismatch");
  const int dim = item.dim;
  std::array<long, kNumGroups> best{};
  for (int g = 0; g < kNumGroups; ++g) {
    const GroupRole role = static_cast<GroupRole>(g);
    const double* f = item.rows[static_cast<size_t>(g)];
    const double nf = std::max(std::sqrt(kernels::sumsq(dim, f)), kNormEps);
    double best_s = 0.0;
    long best_k = -1;
    for (long k = 0; k < bank.sid_count(role); ++k) {
      const double* p = bank.prototype(role, k);
      const double np = std::max(std::sqrt(kernels::sumsq(dim, p)), kNormEps);
      const double s = kernels::dot(dim, f, p) / (nf * np);
      if (best_k < 0 || s > best_s) {  // strict: ties keep the smallest index
        best_s = s;
        best_k = k;
      }
    }
    best[static_cast<size_t>(g)] = best_k;
  }
  return best;
}

std::vector<char> protocol_keep_mask(const GalleryIndex& gallery, int query_person,
                                     int query_camera) {
  std::vector<char> keep(static_cast<size_t>(gallery.size()), 1);
  for (long i = 0; i < gallery.size(); ++i)
    if (gallery.person_ids[static_cast<size_t>(i)] == query_person &&
        gallery.camera_ids[static_cast<size_t>(i)] == query_camera)
      keep[static_cast<size_t>(i)] = 0;
  return keep;
}

RankedResult rank(const std::vector<double>& scores, const std::vector<char>& keep) {
  if (keep.size() != scores.size()) throw Error("rank: keep mask size mismatch");
  RankedResult r;
  r.order.reserve(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw Error("rank: non-finite score");
    if (keep[i]) r.order.push_back(static_cast<long>(i));
  }
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](long a, long b) { return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)]; });
  r.scores.reserve(r.order.size());
  for (long idx : r.order) r.scores.push_back(scores[static_cast<size_t>(idx)]);
  return r;
}

RankedResult rank(const std::vector<double>& scores) {
  return rank(scores, std::vector<char>(scores.size(), 1));
}

}  // namespace sidkit
