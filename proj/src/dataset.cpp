#include "sidkit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "sidkit/image_io.hpp"

namespace sidkit {

namespace fs = std::filesystem;

int DatasetSplit::num_persons() const {
  std::set<int> ids;
  for (const auto& r : records) ids.insert(r.person_id);
  return static_cast<int>(ids.size());
}

std::vector<long> DatasetSplit::sid_person_counts(const AttributeGroup& group) const {
  std::vector<long> counts(static_cast<size_t>(group.sid_count()), 0);
  std::map<int, int> person_sid;  // person -> sid index within this group
  for (const auto& r : records) {
    const auto& sid = r.sids[static_cast<size_t>(group.role)];
    auto [it, inserted] = person_sid.emplace(r.person_id, sid.index);
    if (!inserted && it->second != sid.index)
      throw Error("person " + std::to_string(r.person_id) +
                  " carries two different SIDs in group '" + role_name(group.role) + "'");
  }
  for (const auto& [pid, sid_index] : person_sid) {
    (void)pid;
    counts[static_cast<size_t>(sid_index)]++;
  }
  return counts;
}

// ---------------------------------------------------------------------------
// annotation table + directory loading

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, delim)) {
    // trim surrounding spaces and a trailing CR
    size_t b = field.find_first_not_of(" \t\r");
    size_t e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  return out;
}

// person_id -> one SemanticId per group role
using AnnotationMap = std::map<int, std::array<SemanticId, kNumGroups>>;

AnnotationMap parse_annotations(const std::string& path, const AttributeSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open annotation table: " + path);
  std::string header;
  if (!std::getline(in, header)) throw Error("annotation table is empty: " + path);
  const char delim = header.find('\t') != std::string::npos ? '\t' : ',';

  const auto columns = split_line(header, delim);
  if (columns.empty() || columns[0] != "person_id")
    throw Error("annotation table header must start with 'person_id'");

  // attribute name -> (group, column); every schema attribute must appear
  struct ColRef {
    const AttributeGroup* group;
    const AttributeDef* attr;
    size_t column;
  };
  std::vector<ColRef> refs;
  std::set<std::string> seen;
  for (size_t c = 1; c < columns.size(); ++c) {
    const std::string& name = columns[c];
    if (!seen.insert(name).second)
      throw Error("annotation table lists column '" + name + "' twice");
    bool found = false;
    for (const auto& g : schema.groups())
      for (const auto& a : g.attributes)
        if (a.name == name) {
          refs.push_back({&g, &a, c});
          found = true;
        }
    if (!found) throw Error("annotation column '" + name + "' is not a schema attribute");
  }
  for (const auto& g : schema.groups())
    for (const auto& a : g.attributes)
      if (!seen.count(a.name))
        throw Error("annotation table lacks a column for attribute '" + a.name + "'");

  AnnotationMap out;
  std::string line;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_line(line, delim);
    if (fields.size() != columns.size())
      throw Error("annotation row " + std::to_string(line_no) + " has " +
                  std::to_string(fields.size()) + " fields, header has " +
                  std::to_string(columns.size()));
    int pid = 0;
    try {
      pid = std::stoi(fields[0]);
    } catch (...) {
      throw Error("annotation row " + std::to_string(line_no) + ": bad person_id '" +
                  fields[0] + "'");
    }
    if (out.count(pid))
      throw Error("annotation table lists person " + std::to_string(pid) + " twice");

    // gather labels per group, then encode each group's SID
    std::array<std::map<std::string, std::string>, kNumGroups> by_group;
    for (const auto& ref : refs)
      by_group[static_cast<size_t>(ref.group->role)][ref.attr->name] = fields[ref.column];
    std::array<SemanticId, kNumGroups> sids;
    for (const auto& g : schema.groups()) {
      try {
        sids[static_cast<size_t>(g.role)] = sid_of(g, by_group[static_cast<size_t>(g.role)]);
      } catch (const Error& e) {
        throw Error("annotation row " + std::to_string(line_no) + " (person " +
                    std::to_string(pid) + "): " + e.what());
      }
    }
    out.emplace(pid, std::move(sids));
  }
  return out;
}

bool parse_image_name(const std::string& stem, int& pid, int& cam) {
  // personID '_' cameraID '_' rest ; cameraID may carry a leading 'c'
  const size_t u1 = stem.find('_');
  if (u1 == std::string::npos || u1 == 0) return false;
  const size_t u2 = stem.find('_', u1 + 1);
  if (u2 == std::string::npos) return false;
  std::string cam_str = stem.substr(u1 + 1, u2 - u1 - 1);
  if (!cam_str.empty() && (cam_str[0] == 'c' || cam_str[0] == 'C')) cam_str.erase(0, 1);
  // camera tokens like "1s3" (camera + sequence) keep the leading digits
  size_t digits = 0;
  while (digits < cam_str.size() && std::isdigit(static_cast<unsigned char>(cam_str[digits])))
    ++digits;
  if (digits == 0) return false;
  try {
    pid = std::stoi(stem.substr(0, u1));
    cam = std::stoi(cam_str.substr(0, digits));
  } catch (...) {
    return false;
  }
  return true;
}

}  // namespace

DatasetBundle load_dataset(const std::string& root, const AttributeSchema& schema,
                           const std::string& annotations_path, const LoadOptions& options) {
  const AnnotationMap annotations = parse_annotations(annotations_path, schema);

  DatasetBundle bundle;
  const std::pair<const char*, SplitRole> split_dirs[3] = {
      {"train", SplitRole::kTrain}, {"query", SplitRole::kQuery}, {"gallery", SplitRole::kGallery}};

  for (const auto& [dir_name, role] : split_dirs) {
    DatasetSplit split;
    split.role = role;
    const fs::path dir = fs::path(root) / dir_name;
    if (!fs::is_directory(dir))
      throw Error("dataset root lacks split directory: " + dir.string());

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      const std::string ext = entry.path().extension().string();
      if (ext == ".ppm" || ext == ".pgm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());  // deterministic record order

    for (const auto& file : files) {
      int pid = 0, cam = 0;
      if (!parse_image_name(file.stem().string(), pid, cam))
        throw Error("image name not of the form personID_cameraID_*: " + file.string());
      auto it = annotations.find(pid);
      if (it == annotations.end())
        throw Error("person " + std::to_string(pid) + " (from " + file.string() +
                    ") missing from the annotation table");
      Tensor img = read_image(file.string());
      if (bundle.images.empty()) {
        bundle.height = img.dim(1);
        bundle.width = img.dim(2);
      } else if (img.dim(1) != bundle.height || img.dim(2) != bundle.width) {
        throw Error("image size mismatch at " + file.string());
      }
      PersonRecord rec;
      rec.image_ref = file.string();
      rec.image_index = static_cast<int>(bundle.images.size());
      rec.person_id = pid;
      rec.camera_id = cam;
      rec.sids = it->second;
      bundle.images.push_back(std::move(img));
      split.records.push_back(std::move(rec));
    }
    switch (role) {
      case SplitRole::kTrain: bundle.train = std::move(split); break;
      case SplitRole::kQuery: bundle.query = std::move(split); break;
      case SplitRole::kGallery: bundle.gallery = std::move(split); break;
    }
  }

  if (options.expected_train_identities > 0) {
    const int got = bundle.train.num_persons();
    if (got != options.expected_train_identities)
      throw Error("train split has " + std::to_string(got) + " identities, expected " +
                  std::to_string(options.expected_train_identities));
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// PK sampler

PkSampler::PkSampler(const DatasetSplit& split, int image_height, int image_width,
                     const SamplerConfig& cfg)
    : split_(split), cfg_(cfg), height_(image_height), width_(image_width), rng_(cfg.seed) {
  if (cfg_.persons_per_batch < 2 || cfg_.images_per_person < 2)
    throw Error("sampler needs P >= 2 and K >= 2");
  std::map<int, std::vector<int>> by_person;
  for (size_t i = 0; i < split_.records.size(); ++i)
    by_person[split_.records[i].person_id].push_back(static_cast<int>(i));
  if (static_cast<int>(by_person.size()) < cfg_.persons_per_batch)
    throw Error("split has " + std::to_string(by_person.size()) +
                " persons, sampler needs at least " + std::to_string(cfg_.persons_per_batch));
  for (auto& [pid, idxs] : by_person) {
    person_ids_.push_back(pid);
    images_by_person_.push_back(std::move(idxs));
  }
}

std::vector<BatchItem> PkSampler::next() {
  const int P = cfg_.persons_per_batch;
  const int K = cfg_.images_per_person;
  const int n = static_cast<int>(person_ids_.size());

  // partial Fisher-Yates: first P entries become the batch persons
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  for (int i = 0; i < P; ++i) {
    const int j = static_cast<int>(rng_.uniform_int(i, n - 1));
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }

  std::vector<BatchItem> batch;
  batch.reserve(static_cast<size_t>(P) * K);
  for (int p = 0; p < P; ++p) {
    const auto& imgs = images_by_person_[static_cast<size_t>(order[static_cast<size_t>(p)])];
    const int m = static_cast<int>(imgs.size());
    std::vector<int> chosen;
    if (m >= K) {
      std::vector<int> shuffled = imgs;
      for (int i = 0; i < K; ++i) {
        const int j = static_cast<int>(rng_.uniform_int(i, m - 1));
        std::swap(shuffled[static_cast<size_t>(i)], shuffled[static_cast<size_t>(j)]);
      }
      chosen.assign(shuffled.begin(), shuffled.begin() + K);
    } else {
      for (int i = 0; i < K; ++i)
        chosen.push_back(imgs[static_cast<size_t>(rng_.uniform_int(0, m - 1))]);
    }
    for (int idx : chosen) {
      BatchItem item;
      item.record_index = idx;
      if (cfg_.augment) {
        item.flip = rng_.bernoulli(0.5);
        if (rng_.bernoulli(0.5)) {
          // random erasing: area fraction then aspect, retried a few times
          for (int attempt = 0; attempt < 10; ++attempt) {
            const double area = rng_.uniform(0.02, 0.4) * height_ * width_;
            const double aspect = rng_.uniform(0.3, 3.33);
            const int eh = static_cast<int>(std::lround(std::sqrt(area * aspect)));
            const int ew = static_cast<int>(std::lround(std::sqrt(area / aspect)));
            if (eh < 1 || ew < 1 || eh >= height_ || ew >= width_) continue;
            item.erase.active = true;
            item.erase.y = static_cast<int>(rng_.uniform_int(0, height_ - eh));
            item.erase.x = static_cast<int>(rng_.uniform_int(0, width_ - ew));
            item.erase.h = eh;
            item.erase.w = ew;
            item.erase.value = rng_.uniform01();
            break;
          }
        }
      }
      batch.push_back(item);
    }
  }
  return batch;
}

}  // namespace sidkit
