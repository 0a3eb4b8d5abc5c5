#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "sidkit/dataset.hpp"

// Procedural person renderer. Every SID is mapped to a visible cue purely by
// its index, so the renderer works with any schema:
//   head       -> band color from a hue palette + band height parity
//   upper_body -> torso block color
//   lower_body -> leg block color
//   identity   -> global body tint + body width
//   carrying   -> side blob (index 0 = nothing carried)
// Identity within an SID combination is carried by a fixed per-person dot
// texture. Camera id shifts global brightness; per-image jitter, Gaussian
// noise and optional vertical offset sit on top. Pixels are quantized to the
// 1/255 grid so a disk round-trip through 8-bit images is lossless.

namespace sidkit {

namespace {

struct RGB {
  double r, g, b;
};

RGB hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

// saturated, well-separated color per SID index
RGB palette(int idx, int count) {
  return hsv(static_cast<double>(idx) / std::max(1, count), 0.85, 0.9);
}

// mild mean-preserving color cast per identity SID index
RGB tint_of(int idx, int count) {
  RGB t = hsv(static_cast<double>(idx) / std::max(1, count), 0.45, 1.0);
  const double mean = (t.r + t.g + t.b) / 3.0;
  return {t.r / mean, t.g / mean, t.b / mean};
}

struct RenderParams {
  std::array<int, kNumGroups> sid;     // SID index per role
  std::array<int, kNumGroups> counts;  // SID count per role
  int person_id = 0;
  uint64_t texture_seed = 0;  // fixed per person
};

void paint(Tensor& img, int y0, int y1, int x0, int x1, RGB color, const RGB& tint) {
  const int h = img.dim(1), w = img.dim(2);
  y0 = std::clamp(y0, 0, h);
  y1 = std::clamp(y1, 0, h);
  x0 = std::clamp(x0, 0, w);
  x1 = std::clamp(x1, 0, w);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      img.at(0, y, x) = color.r * tint.r;
      img.at(1, y, x) = color.g * tint.g;
      img.at(2, y, x) = color.b * tint.b;
    }
}

Tensor render(const RenderParams& rp, int camera, const SyntheticSpec& spec,
              RngStream& img_rng) {
  const int H = spec.height, W = spec.width;
  Tensor img({3, H, W});
  img.fill(0.85);  // background

  auto row = [H](double f) { return static_cast<int>(std::lround(f * H)); };
  auto col = [W](double f) { return static_cast<int>(std::lround(f * W)); };

  const int idx_h = rp.sid[static_cast<size_t>(GroupRole::kHead)];
  const int idx_u = rp.sid[static_cast<size_t>(GroupRole::kUpperBody)];
  const int idx_l = rp.sid[static_cast<size_t>(GroupRole::kLowerBody)];
  const int idx_i = rp.sid[static_cast<size_t>(GroupRole::kIdentity)];
  const int idx_c = rp.sid[static_cast<size_t>(GroupRole::kCarrying)];
  const int n_h = rp.counts[static_cast<size_t>(GroupRole::kHead)];
  const int n_u = rp.counts[static_cast<size_t>(GroupRole::kUpperBody)];
  const int n_l = rp.counts[static_cast<size_t>(GroupRole::kLowerBody)];
  const int n_i = rp.counts[static_cast<size_t>(GroupRole::kIdentity)];
  const int n_c = rp.counts[static_cast<size_t>(GroupRole::kCarrying)];

  // identity: body width cycles through three aspects; tint disambiguates
  const double width_frac = 0.60 + 0.30 * (idx_i % 3) / 2.0;
  const RGB tint = tint_of(idx_i, n_i);
  const double cx = 0.5 * W;
  const double half_w = 0.5 * width_frac * W;

  const int head_bottom = row(0.16 + 0.04 * (idx_h % 2));  // band height = shape cue
  paint(img, row(0.02), head_bottom, static_cast<int>(cx - 0.6 * half_w),
        static_cast<int>(cx + 0.6 * half_w), palette(idx_h, n_h), tint);
  paint(img, row(0.20), row(0.52), static_cast<int>(cx - half_w),
        static_cast<int>(cx + half_w), palette(idx_u, n_u), tint);
  paint(img, row(0.56), row(0.94), static_cast<int>(cx - 0.8 * half_w),
        static_cast<int>(cx + 0.8 * half_w), palette(idx_l, n_l), tint);

  if (idx_c > 0) {
    const RGB blob = palette(idx_c - 1, std::max(1, n_c - 1));
    const int bw = std::max(2, col(0.14));
    const int top = row(0.28), bottom = row(0.55);
    if (idx_c % 2 == 1) {
      const int edge = static_cast<int>(cx - half_w);
      paint(img, top, bottom, edge - bw, edge, blob, tint);
    } else {
      const int edge = static_cast<int>(cx + half_w);
      paint(img, top, bottom, edge, edge + bw, blob, tint);
    }
  }

  // per-person dot texture: constant across every render of this person
  RngStream dots(rp.texture_seed);
  const int n_dots = 10 + static_cast<int>(dots.uniform_int(0, 4));
  for (int d = 0; d < n_dots; ++d) {
    const int dy = static_cast<int>(dots.uniform_int(row(0.20), row(0.94) - 1));
    const int dx = static_cast<int>(
        dots.uniform_int(static_cast<int>(cx - half_w), static_cast<int>(cx + half_w) - 1));
    const int half = static_cast<int>(dots.uniform_int(0, 1));
    const double factor = dots.bernoulli(0.5) ? 0.55 : 1.45;
    for (int y = std::max(0, dy - half); y <= std::min(H - 1, dy + half); ++y)
      for (int x = std::max(0, dx - half); x <= std::min(W - 1, dx + half); ++x)
        for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) *= factor;
  }

  // camera + per-image effects
  const double brightness = (camera == 0 ? 0.94 : 1.06) *
                            (1.0 + img_rng.uniform(-spec.brightness_jitter,
                                                   spec.brightness_jitter));
  const int dy_shift = spec.vertical_jitter > 0
                           ? static_cast<int>(img_rng.uniform_int(-spec.vertical_jitter,
                                                                  spec.vertical_jitter))
                           : 0;
  Tensor out({3, H, W});
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < H; ++y) {
      const int src_y = y - dy_shift;
      for (int x = 0; x < W; ++x) {
        double v = (src_y >= 0 && src_y < H) ? img.at(ch, src_y, x) : 0.85;
        v = v * brightness + img_rng.normal(0.0, spec.noise);
        v = std::clamp(v, 0.0, 1.0);
        out.at(ch, y, x) = std::lround(v * 255.0) / 255.0;  // 8-bit grid
      }
    }
  return out;
}

}  // namespace

DatasetBundle generate_synthetic(const SyntheticSpec& spec, const AttributeSchema& schema,
                                 uint64_t seed) {
  if (spec.num_persons < 2) throw Error("synthetic spec needs at least two persons");
  if (spec.height < 16 || spec.width < 8) throw Error("synthetic image size too small");

  std::array<const AttributeGroup*, kNumGroups> groups{};
  std::array<int, kNumGroups> counts{};
  for (const auto& g : schema.groups()) {
    groups[static_cast<size_t>(g.role)] = &g;
    counts[static_cast<size_t>(g.role)] = static_cast<int>(g.sid_count());
  }

  // allowed train SIDs per group = all minus holdouts
  std::array<std::vector<int>, kNumGroups> allowed;
  for (int g = 0; g < kNumGroups; ++g) {
    std::set<int> held;
    for (const auto& h : spec.holdout) {
      if (static_cast<size_t>(h.group) != static_cast<size_t>(g)) continue;
      if (h.sid_index < 0 || h.sid_index >= counts[static_cast<size_t>(g)])
        throw Error("holdout SID index " + std::to_string(h.sid_index) +
                    " exceeds group '" +
                    role_name(static_cast<GroupRole>(g)) + "' (" +
                    std::to_string(counts[static_cast<size_t>(g)]) + " combinations)");
      held.insert(h.sid_index);
    }
    for (int s = 0; s < counts[static_cast<size_t>(g)]; ++s)
      if (!held.count(s)) allowed[static_cast<size_t>(g)].push_back(s);
    if (allowed[static_cast<size_t>(g)].empty())
      throw Error("holdout removes every SID of group '" +
                  std::string(role_name(static_cast<GroupRole>(g))) + "'");
  }

  RngForest forest(seed);

  // SID combination per pair of train persons, near-uniform group marginals
  RngStream combo_rng = forest.stream("combos");
  const int n_combos = (spec.num_persons + 1) / 2;
  std::set<std::array<int, kNumGroups>> seen;
  std::vector<std::array<int, kNumGroups>> combos;
  for (int j = 0; j < n_combos; ++j) {
    std::array<int, kNumGroups> combo{};
    for (int attempt = 0; attempt < 64; ++attempt) {
      for (int g = 0; g < kNumGroups; ++g) {
        const auto& pool = allowed[static_cast<size_t>(g)];
        combo[static_cast<size_t>(g)] =
            pool[static_cast<size_t>(combo_rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))];
      }
      if (seen.insert(combo).second) break;  // falls through with a repeat if exhausted
    }
    combos.push_back(combo);
  }

  struct Person {
    int pid;
    std::array<int, kNumGroups> combo;
    bool in_train;
  };
  std::vector<Person> persons;
  for (int p = 0; p < spec.num_persons; ++p)
    persons.push_back({p + 1, combos[static_cast<size_t>(p / 2)], true});

  // query/gallery-only persons carrying each held-out SID
  RngStream holdout_rng = forest.stream("holdout");
  int next_pid = spec.num_persons + 1;
  for (const auto& h : spec.holdout) {
    for (int t = 0; t < spec.holdout_persons; ++t) {
      std::array<int, kNumGroups> combo{};
      for (int g = 0; g < kNumGroups; ++g) {
        const auto& pool = allowed[static_cast<size_t>(g)];
        combo[static_cast<size_t>(g)] =
            pool[static_cast<size_t>(holdout_rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))];
      }
      combo[static_cast<size_t>(h.group)] = h.sid_index;
      persons.push_back({next_pid++, combo, false});
    }
  }

  DatasetBundle bundle;
  bundle.height = spec.height;
  bundle.width = spec.width;
  bundle.train.role = SplitRole::kTrain;
  bundle.query.role = SplitRole::kQuery;
  bundle.gallery.role = SplitRole::kGallery;

  auto sids_of = [&](const std::array<int, kNumGroups>& combo) {
    std::array<SemanticId, kNumGroups> sids;
    for (int g = 0; g < kNumGroups; ++g)
      sids[static_cast<size_t>(g)] =
          sid_from_index(*groups[static_cast<size_t>(g)], combo[static_cast<size_t>(g)]);
    return sids;
  };

  auto add_image = [&](DatasetSplit& split, const Person& person, int camera,
                       const char* tag, int k) {
    RenderParams rp;
    rp.sid = person.combo;
    rp.counts = counts;
    rp.person_id = person.pid;
    rp.texture_seed = RngStream::derive(seed, "texture:" + std::to_string(person.pid));
    std::ostringstream ref;
    ref << "synthetic:" << person.pid << "_c" << camera << "_" << tag << k;
    RngStream img_rng(RngStream::derive(seed, ref.str()));

    PersonRecord rec;
    rec.image_ref = ref.str();
    rec.image_index = static_cast<int>(bundle.images.size());
    rec.person_id = person.pid;
    rec.camera_id = camera;
    rec.sids = sids_of(person.combo);
    bundle.images.push_back(render(rp, camera, spec, img_rng));
    split.records.push_back(std::move(rec));
  };

  for (const auto& person : persons) {
    if (person.in_train)
      for (int k = 0; k < spec.images_per_person; ++k)
        add_image(bundle.train, person, k % 2, "t", k);
    for (int k = 0; k < spec.query_per_person; ++k) add_image(bundle.query, person, 1, "q", k);
    for (int k = 0; k < spec.gallery_per_person; ++k)
      add_image(bundle.gallery, person, 0, "g", k);
  }
  return bundle;
}

}  // namespace sidkit
