#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "sidkit/dataset.hpp"
#include "sidkit/image_io.hpp"
#include "test_util.hpp"

using namespace sidkit;
namespace fs = std::filesystem;

namespace {

// hand-built split: `identity_sids[i]` is person i's identity-group SID index
DatasetSplit hand_split(const AttributeSchema& schema, const std::vector<int>& identity_sids,
                        int images_per_person) {
  DatasetSplit split;
  split.role = SplitRole::kTrain;
  for (size_t p = 0; p < identity_sids.size(); ++p) {
    for (int k = 0; k < images_per_person; ++k) {
      PersonRecord rec;
      rec.person_id = static_cast<int>(p) + 1;
      rec.camera_id = k % 2;
      rec.image_index = -1;
      for (const auto& g : schema.groups())
        rec.sids[static_cast<size_t>(g.role)] = sid_from_index(
            g, g.role == GroupRole::kIdentity ? identity_sids[p] : 0);
      split.records.push_back(rec);
    }
  }
  return split;
}

}  // namespace

TEST_CASE("per-SID person counts: count persons sharing an SID, and their sum is N") {
  auto schema = test_util::synthetic_schema();
  // 10 persons; persons 0,1,2 share identity SID 3
  std::vector<int> ids = {3, 3, 3, 0, 1, 2, 4, 5, 0, 1};
  auto split = hand_split(schema, ids, 2);
  CHECK(split.num_persons() == 10);
  auto counts = split.sid_person_counts(schema.group(GroupRole::kIdentity));
  REQUIRE(counts.size() == 6);
  CHECK(counts[3] == 3);
  long total = 0;
  for (long c : counts) total += c;
  CHECK(total == 10);
}

TEST_CASE("per-SID person counts ignore image duplication") {
  auto schema = test_util::synthetic_schema();
  std::vector<int> ids = {3, 3, 0, 1};
  auto a = hand_split(schema, ids, 2).sid_person_counts(schema.group(GroupRole::kIdentity));
  auto b = hand_split(schema, ids, 9).sid_person_counts(schema.group(GroupRole::kIdentity));
  CHECK(a == b);
}

// ---------------------------------------------------------------------------
// disk loading

namespace {

void write_flat_image(const std::string& path, int h, int w, double value) {
  Tensor img({3, h, w});
  img.fill(value);
  write_ppm(path, img);
}

// misc_rows: extra annotation lines appended verbatim
std::string make_disk_dataset(const test_util::TempDir& dir, const std::string& annot_header,
                              const std::vector<std::string>& annot_rows) {
  for (const char* split : {"train", "query", "gallery"})
    fs::create_directories(dir.path() / split);
  write_flat_image((dir.path() / "train" / "1_c0_a.ppm").string(), 16, 8, 0.25);
  write_flat_image((dir.path() / "train" / "1_c1_b.ppm").string(), 16, 8, 0.5);
  write_flat_image((dir.path() / "train" / "2_c0_a.ppm").string(), 16, 8, 0.75);
  write_flat_image((dir.path() / "query" / "1_c1_q.ppm").string(), 16, 8, 0.5);
  write_flat_image((dir.path() / "gallery" / "2_c0_g.ppm").string(), 16, 8, 0.75);

  const std::string annot = (dir.path() / "annotations.csv").string();
  std::ofstream out(annot);
  out << annot_header << "\n";
  for (const auto& row : annot_rows) out << row << "\n";
  return annot;
}

const char* kHeader = "person_id,hat,hair_length,top_color,bottom_color,gender,age,backpack,bag";

}  // namespace

TEST_CASE("load_dataset reads splits, names, and annotations") {
  auto schema = test_util::synthetic_schema();
  test_util::TempDir dir("sidkit_load");
  auto annot = make_disk_dataset(dir, kHeader,
                                 {"1,present,short,red,black,male,young,absent,absent",
                                  "2,absent,long,blue,white,female,adult,present,absent"});
  auto bundle = load_dataset(dir.str(), schema, annot);
  CHECK(bundle.train.records.size() == 3);
  CHECK(bundle.query.records.size() == 1);
  CHECK(bundle.gallery.records.size() == 1);
  CHECK(bundle.height == 16);
  CHECK(bundle.width == 8);
  CHECK(bundle.train.num_persons() == 2);

  const auto& rec = bundle.train.records[0];  // sorted: 1_c0_a.ppm
  CHECK(rec.person_id == 1);
  CHECK(rec.camera_id == 0);
  // person 1: hat=present, hair=short -> head digits (1,0) -> index 2
  CHECK(rec.sids[static_cast<size_t>(GroupRole::kHead)].index == 2);
  // image content round-trips through the 8-bit file (0.25 -> nearest grid point)
  CHECK(bundle.images[static_cast<size_t>(rec.image_index)].at(0, 3, 3) == 64.0 / 255.0);
}

TEST_CASE("load_dataset rejects persons missing from the annotation table") {
  auto schema = test_util::synthetic_schema();
  test_util::TempDir dir("sidkit_missing");
  auto annot = make_disk_dataset(dir, kHeader,
                                 {"1,present,short,red,black,male,young,absent,absent"});
  CHECK_THROWS_WITH_AS(load_dataset(dir.str(), schema, annot),
                       doctest::Contains("person 2"), Error);
}

TEST_CASE("load_dataset rejects labels that are not in the schema") {
  auto schema = test_util::synthetic_schema();
  test_util::TempDir dir("sidkit_badlabel");
  auto annot = make_disk_dataset(dir, kHeader,
                                 {"1,present,short,teal,black,male,young,absent,absent",
                                  "2,absent,long,blue,white,female,adult,present,absent"});
  CHECK_THROWS_WITH_AS(load_dataset(dir.str(), schema, annot),
                       doctest::Contains("teal"), Error);
}

TEST_CASE("load_dataset rejects tables lacking an attribute column") {
  auto schema = test_util::synthetic_schema();
  test_util::TempDir dir("sidkit_nocol");
  auto annot = make_disk_dataset(dir, "person_id,hat,hair_length,top_color,bottom_color,gender,age,backpack",
                                 {"1,present,short,red,black,male,young,absent",
                                  "2,absent,long,blue,white,female,adult,present"});
  CHECK_THROWS_WITH_AS(load_dataset(dir.str(), schema, annot),
                       doctest::Contains("'bag'"), Error);
}

TEST_CASE("load_dataset enforces the expected identity count when asked") {
  auto schema = test_util::synthetic_schema();
  test_util::TempDir dir("sidkit_count");
  auto annot = make_disk_dataset(dir, kHeader,
                                 {"1,present,short,red,black,male,young,absent,absent",
                                  "2,absent,long,blue,white,female,adult,present,absent"});
  LoadOptions opt;
  opt.expected_train_identities = 2;
  CHECK_NOTHROW(load_dataset(dir.str(), schema, annot, opt));
  opt.expected_train_identities = 751;
  CHECK_THROWS_WITH_AS(load_dataset(dir.str(), schema, annot, opt),
                       doctest::Contains("751"), Error);
}

TEST_CASE("load_dataset rejects unparsable image names") {
  auto schema = test_util::synthetic_schema();
  test_util::TempDir dir("sidkit_badname");
  auto annot = make_disk_dataset(dir, kHeader,
                                 {"1,present,short,red,black,male,young,absent,absent",
                                  "2,absent,long,blue,white,female,adult,present,absent"});
  write_flat_image((dir.path() / "train" / "noids.ppm").string(), 16, 8, 0.1);
  CHECK_THROWS_WITH_AS(load_dataset(dir.str(), schema, annot),
                       doctest::Contains("personID_cameraID"), Error);
}

// ---------------------------------------------------------------------------
// synthetic generation

TEST_CASE("synthetic generation is bit-identical for a fixed seed") {
  auto schema = test_util::synthetic_schema();
  SyntheticSpec spec;
  spec.num_persons = 6;
  spec.images_per_person = 4;
  spec.query_per_person = 1;
  spec.gallery_per_person = 1;
  spec.height = 32;
  spec.width = 16;
  auto a = generate_synthetic(spec, schema, 77);
  auto b = generate_synthetic(spec, schema, 77);
  REQUIRE(a.images.size() == b.images.size());
  for (size_t i = 0; i < a.images.size(); ++i) CHECK(a.images[i].vec() == b.images[i].vec());
  REQUIRE(a.train.records.size() == b.train.records.size());
  for (size_t i = 0; i < a.train.records.size(); ++i) {
    CHECK(a.train.records[i].person_id == b.train.records[i].person_id);
    CHECK(a.train.records[i].image_ref == b.train.records[i].image_ref);
  }
  auto c = generate_synthetic(spec, schema, 78);
  CHECK(a.images[0].vec() != c.images[0].vec());
}

TEST_CASE("persons sharing an SID combination still render distinct images") {
  auto schema = test_util::synthetic_schema();
  SyntheticSpec spec;
  spec.num_persons = 2;  // one pair -> one shared combination
  spec.images_per_person = 2;
  spec.query_per_person = 1;
  spec.gallery_per_person = 1;
  spec.height = 32;
  spec.width = 16;
  spec.noise = 0.0;
  spec.brightness_jitter = 0.0;
  auto bundle = generate_synthetic(spec, schema, 5);
  const auto& r0 = bundle.train.records[0];
  const auto& r2 = bundle.train.records[2];
  REQUIRE(r0.person_id != r2.person_id);
  for (int g = 0; g < kNumGroups; ++g)
    CHECK(r0.sids[static_cast<size_t>(g)].index == r2.sids[static_cast<size_t>(g)].index);
  CHECK(r0.camera_id == r2.camera_id);
  // same combination, same camera, no noise: only the texture separates them
  CHECK(bundle.images[static_cast<size_t>(r0.image_index)].vec() !=
        bundle.images[static_cast<size_t>(r2.image_index)].vec());
}

TEST_CASE("held-out SIDs never appear in train but do appear in query/gallery") {
  auto schema = test_util::synthetic_schema();
  SyntheticSpec spec;
  spec.num_persons = 10;
  spec.images_per_person = 2;
  spec.query_per_person = 1;
  spec.gallery_per_person = 1;
  spec.height = 32;
  spec.width = 16;
  spec.holdout = {{GroupRole::kIdentity, 5}};
  spec.holdout_persons = 2;
  auto bundle = generate_synthetic(spec, schema, 11);
  for (const auto& r : bundle.train.records)
    CHECK(r.sids[static_cast<size_t>(GroupRole::kIdentity)].index != 5);
  int hits = 0;
  for (const auto& r : bundle.query.records)
    hits += (r.sids[static_cast<size_t>(GroupRole::kIdentity)].index == 5);
  CHECK(hits == 2);  // holdout_persons, one query image each
  hits = 0;
  for (const auto& r : bundle.gallery.records)
    hits += (r.sids[static_cast<size_t>(GroupRole::kIdentity)].index == 5);
  CHECK(hits == 2);
  // holdout persons are not in train
  std::set<int> train_pids;
  for (const auto& r : bundle.train.records) train_pids.insert(r.person_id);
  CHECK(train_pids.size() == 10);
}

TEST_CASE("synthetic generation rejects out-of-range holdout combinations") {
  auto schema = test_util::synthetic_schema();
  SyntheticSpec spec;
  spec.holdout = {{GroupRole::kCarrying, 99}};
  CHECK_THROWS_WITH_AS(generate_synthetic(spec, schema, 1),
                       doctest::Contains("exceeds"), Error);
}

// ---------------------------------------------------------------------------
// PK sampling

namespace {

DatasetBundle small_synthetic(int persons, int images_each, uint64_t seed = 3) {
  SyntheticSpec spec;
  spec.num_persons = persons;
  spec.images_per_person = images_each;
  spec.query_per_person = 1;
  spec.gallery_per_person = 1;
  spec.height = 24;
  spec.width = 12;
  return generate_synthetic(spec, test_util::synthetic_schema(), seed);
}

std::map<int, int> id_histogram(const DatasetSplit& split, const std::vector<BatchItem>& batch) {
  std::map<int, int> h;
  for (const auto& item : batch)
    h[split.records[static_cast<size_t>(item.record_index)].person_id]++;
  return h;
}

}  // namespace

TEST_CASE("PK batches hold P distinct persons with K slots each") {
  auto bundle = small_synthetic(20, 6);
  SamplerConfig cfg;
  cfg.persons_per_batch = 16;
  cfg.images_per_person = 4;
  cfg.seed = 9;
  PkSampler sampler(bundle.train, bundle.height, bundle.width, cfg);
  auto batch = sampler.next();
  CHECK(batch.size() == 64);
  auto hist = id_histogram(bundle.train, batch);
  CHECK(hist.size() == 16);
  for (const auto& [pid, n] : hist) {
    (void)pid;
    CHECK(n == 4);
  }
}

TEST_CASE("minimal 2x2 batch covers both persons") {
  auto bundle = small_synthetic(2, 3);
  SamplerConfig cfg;
  cfg.persons_per_batch = 2;
  cfg.images_per_person = 2;
  PkSampler sampler(bundle.train, bundle.height, bundle.width, cfg);
  auto batch = sampler.next();
  CHECK(batch.size() == 4);
  auto hist = id_histogram(bundle.train, batch);
  REQUIRE(hist.size() == 2);
  for (const auto& [pid, n] : hist) {
    (void)pid;
    CHECK(n == 2);
  }
}

TEST_CASE("a single-image person fills its K slots with that image") {
  auto schema = test_util::synthetic_schema();
  auto bundle = small_synthetic(4, 2);
  // craft a split where person 1 has one image
  DatasetSplit split;
  split.role = SplitRole::kTrain;
  bool kept_one = false;
  for (const auto& r : bundle.train.records) {
    if (r.person_id == 1) {
      if (kept_one) continue;
      kept_one = true;
    }
    split.records.push_back(r);
  }
  int ones = 0;
  for (const auto& r : split.records) ones += (r.person_id == 1);
  REQUIRE(ones == 1);

  SamplerConfig cfg;
  cfg.persons_per_batch = 4;
  cfg.images_per_person = 4;
  PkSampler sampler(split, bundle.height, bundle.width, cfg);
  auto batch = sampler.next();
  int appearances = 0;
  std::set<int> distinct_records;
  for (const auto& item : batch)
    if (split.records[static_cast<size_t>(item.record_index)].person_id == 1) {
      ++appearances;
      distinct_records.insert(item.record_index);
    }
  CHECK(appearances == 4);
  CHECK(distinct_records.size() == 1);
}

TEST_CASE("every batch keeps the exact PK structure (1000 batches)") {
  auto bundle = small_synthetic(9, 3);
  SamplerConfig cfg;
  cfg.persons_per_batch = 4;
  cfg.images_per_person = 3;
  cfg.seed = 123;
  PkSampler sampler(bundle.train, bundle.height, bundle.width, cfg);
  for (int b = 0; b < 1000; ++b) {
    auto batch = sampler.next();
    REQUIRE(batch.size() == 12);
    auto hist = id_histogram(bundle.train, batch);
    REQUIRE(hist.size() == 4);
    for (const auto& [pid, n] : hist) {
      (void)pid;
      REQUIRE(n == 3);
    }
    for (const auto& item : batch)
      if (item.erase.active) {
        REQUIRE(item.erase.x >= 0);
        REQUIRE(item.erase.y >= 0);
        REQUIRE(item.erase.x + item.erase.w <= bundle.width);
        REQUIRE(item.erase.y + item.erase.h <= bundle.height);
      }
  }
}

TEST_CASE("sampler streams are deterministic per seed") {
  auto bundle = small_synthetic(8, 4);
  SamplerConfig cfg;
  cfg.persons_per_batch = 4;
  cfg.images_per_person = 2;
  cfg.seed = 55;
  PkSampler a(bundle.train, bundle.height, bundle.width, cfg);
  PkSampler b(bundle.train, bundle.height, bundle.width, cfg);
  for (int i = 0; i < 20; ++i) {
    auto ba = a.next(), bb = b.next();
    REQUIRE(ba.size() == bb.size());
    for (size_t j = 0; j < ba.size(); ++j) {
      CHECK(ba[j].record_index == bb[j].record_index);
      CHECK(ba[j].flip == bb[j].flip);
      CHECK(ba[j].erase.active == bb[j].erase.active);
      CHECK(ba[j].erase.x == bb[j].erase.x);
    }
  }
}

TEST_CASE("sampler rejects configurations it cannot satisfy") {
  auto bundle = small_synthetic(3, 2);
  SamplerConfig cfg;
  cfg.persons_per_batch = 4;
  cfg.images_per_person = 2;
  CHECK_THROWS_AS(PkSampler(bundle.train, bundle.height, bundle.width, cfg), Error);
  cfg.persons_per_batch = 1;
  CHECK_THROWS_AS(PkSampler(bundle.train, bundle.height, bundle.width, cfg), Error);
  cfg.persons_per_batch = 2;
  cfg.images_per_person = 1;
  CHECK_THROWS_AS(PkSampler(bundle.train, bundle.height, bundle.width, cfg), Error);
}

TEST_CASE("image files round-trip through PPM exactly") {
  test_util::TempDir dir("sidkit_ppm");
  Tensor img({3, 7, 5});
  for (size_t i = 0; i < img.numel(); ++i)
    img[i] = std::lround((i % 256) / 255.0 * 255.0) / 255.0;
  const std::string path = (dir.path() / "t.ppm").string();
  write_ppm(path, img);
  Tensor back = read_image(path);
  CHECK(back.vec() == img.vec());
}
