#include "sidkit/workbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>

#include "sidkit/kernels.hpp"

namespace sidkit {

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'I', 'D', 'K', 'I', 'T', 'C', 'K'};
constexpr uint32_t kCheckpointVersion = 1;
constexpr double kPi = 3.141592653589793238462643;

using json = nlohmann::json;

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw Error("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(std::string("checkpoint truncated while reading ") + what);
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const char* what) {
  const auto len = read_pod<uint64_t>(in, what);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error(std::string("checkpoint truncated while reading ") + what);
  return s;
}

void write_tensor(std::ostream& out, const Tensor& t) {
  const auto& shape = t.shape();
  write_pod<uint32_t>(out, static_cast<uint32_t>(shape.size()));
  for (int dim : shape) write_pod<int32_t>(out, dim);
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

Tensor read_tensor(std::istream& in, const char* what) {
  const auto ndim = read_pod<uint32_t>(in, what);
  if (ndim > 8) throw Error("checkpoint tensor has implausible rank");
  std::vector<int> shape(ndim);
  for (auto& dim : shape) {
    dim = read_pod<int32_t>(in, what);
    if (dim <= 0) throw Error("checkpoint tensor has nonpositive dimension");
  }
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!in) throw Error(std::string("checkpoint truncated while reading ") + what);
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Learning-rate schedule

double LrSchedule::at(long iter) const {
  if (iter < 0) throw Error("learning-rate schedule queried at a negative iteration");
  if (iter < warmup_iters) {
    const double frac = static_cast<double>(iter) / static_cast<double>(warmup_iters);
    return lr_start + (lr_peak - lr_start) * frac;
  }
  const long span = total_iters - warmup_iters;
  const long pos = std::min(iter, total_iters) - warmup_iters;
  return 0.5 * lr_peak * (1.0 + std::cos(kPi * static_cast<double>(pos) / static_cast<double>(span)));
}

void LrSchedule::validate() const {
  if (!(lr_start > 0.0) || !std::isfinite(lr_start)) throw Error("lr_start must be positive");
  if (!(lr_peak >= lr_start) || !std::isfinite(lr_peak))
    throw Error("lr_peak must be at least lr_start");
  if (warmup_iters < 0) throw Error("warmup_iters must be nonnegative");
  if (total_iters <= warmup_iters) throw Error("total_iters must exceed warmup_iters");
}

// ---------------------------------------------------------------------------
// Optimizer

AdamOptimizer::AdamOptimizer(std::vector<NamedParam> params, double beta1, double beta2,
                             double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.param->value.shape());
    v_.emplace_back(p.param->value.shape());
  }
}

void AdamOptimizer::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    double* x = params_[i].param->value.data();
    const double* g = params_[i].param->grad.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    const size_t n = params_[i].param->value.numel();
    for (size_t k = 0; k < n; ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      x[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_);
    }
  }
}

std::vector<std::pair<std::string, Tensor*>> AdamOptimizer::state() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.reserve(2 * params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back(params_[i].name + ".m", &m_[i]);
    out.emplace_back(params_[i].name + ".v", &v_[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::validate(bool check_paths) const {
  if (schema_path.empty()) throw Error("config: schema path is required");
  const bool on_disk = !dataset_root.empty();
  if (on_disk == synthetic.has_value())
    throw Error("config: exactly one data source (dataset root or synthetic spec) is required");
  if (on_disk && annotations_path.empty())
    throw Error("config: an on-disk dataset needs an annotations table");

  if (model.height <= 0 || model.width <= 0) throw Error("config: image size must be positive");
  if (model.embed_dim <= 0) throw Error("config: embedding dimension must be positive");
  if (model.channels.empty()) throw Error("config: at least one trunk block is required");
  for (int c : model.channels)
    if (c <= 0) throw Error("config: channel counts must be positive");
  if (!(model.sigma > 0.0)) throw Error("config: alignment sigma must be positive");
  if (!(model.band_fractions[0] > 0.0 && model.band_fractions[0] < model.band_fractions[1] &&
        model.band_fractions[1] < 1.0))
    throw Error("config: band fractions must be ascending inside (0, 1)");

  if (persons_per_batch < 2) throw Error("config: persons_per_batch must be at least 2");
  if (images_per_person < 2) throw Error("config: images_per_person must be at least 2");

  schedule.validate();
  weights.validate();
  if (report_every < 0 || checkpoint_every < 0)
    throw Error("config: logging cadences must be nonnegative");
  if (output_dir.empty()) throw Error("config: output directory is required");

  if (synthetic) {
    if (synthetic->num_persons < persons_per_batch)
      throw Error("config: synthetic persons must cover one batch of P identities");
    if (synthetic->images_per_person < 1 || synthetic->query_per_person < 1 ||
        synthetic->gallery_per_person < 1)
      throw Error("config: synthetic image counts must be positive");
  }

  if (check_paths) {
    namespace fs = std::filesystem;
    if (!fs::exists(schema_path)) throw Error("config: schema file not found: " + schema_path);
    if (on_disk) {
      if (!fs::exists(dataset_root)) throw Error("config: dataset root not found: " + dataset_root);
      if (!fs::exists(annotations_path))
        throw Error("config: annotations table not found: " + annotations_path);
    }
  }
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  try {
    check_keys(j, "config",
               {"schema", "data", "model", "sampler", "optimizer", "loss", "seed",
                "report_every", "checkpoint_every", "output_dir"});
    cfg.schema_path = j.at("schema").get<std::string>();

    const json& data = j.at("data");
    check_keys(data, "data", {"root", "annotations", "synthetic"});
    if (data.contains("synthetic")) {
      const json& s = data["synthetic"];
      check_keys(s, "data.synthetic",
                 {"persons", "images_per_person", "query_per_person", "gallery_per_person",
                  "noise", "brightness_jitter", "vertical_jitter", "holdout",
                  "holdout_persons"});
      SyntheticSpec spec;
      spec.num_persons = s.value("persons", spec.num_persons);
      spec.images_per_person = s.value("images_per_person", spec.images_per_person);
      spec.query_per_person = s.value("query_per_person", spec.query_per_person);
      spec.gallery_per_person = s.value("gallery_per_person", spec.gallery_per_person);
      spec.noise = s.value("noise", spec.noise);
      spec.brightness_jitter = s.value("brightness_jitter", spec.brightness_jitter);
      spec.vertical_jitter = s.value("vertical_jitter", spec.vertical_jitter);
      spec.holdout_persons = s.value("holdout_persons", spec.holdout_persons);
      if (s.contains("holdout")) {
        for (const json& h : s["holdout"]) {
          check_keys(h, "data.synthetic.holdout[]", {"group", "sid"});
          const auto role = role_from_name(h.at("group").get<std::string>());
          if (!role) throw Error("config: unknown group in holdout spec");
          spec.holdout.push_back({*role, h.at("sid").get<int>()});
        }
      }
      cfg.synthetic = spec;
    }
    if (data.contains("root")) cfg.dataset_root = data["root"].get<std::string>();
    if (data.contains("annotations"))
      cfg.annotations_path = data["annotations"].get<std::string>();

    if (j.contains("model")) {
      const json& m = j["model"];
      check_keys(m, "model",
                 {"height", "width", "channels", "embed_dim", "sigma", "align",
                  "band_fractions"});
      cfg.model.height = m.value("height", cfg.model.height);
      cfg.model.width = m.value("width", cfg.model.width);
      if (m.contains("channels")) cfg.model.channels = m["channels"].get<std::vector<int>>();
      cfg.model.embed_dim = m.value("embed_dim", cfg.model.embed_dim);
      cfg.model.sigma = m.value("sigma", cfg.model.sigma);
      cfg.model.align_enabled = m.value("align", cfg.model.align_enabled);
      if (m.contains("band_fractions")) {
        const auto f = m["band_fractions"].get<std::vector<double>>();
        if (f.size() != 2) throw Error("config: band_fractions needs exactly two values");
        cfg.model.band_fractions = {f[0], f[1]};
      }
    }

    if (j.contains("sampler")) {
      const json& s = j["sampler"];
      check_keys(s, "sampler", {"persons_per_batch", "images_per_person", "augment"});
      cfg.persons_per_batch = s.value("persons_per_batch", cfg.persons_per_batch);
      cfg.images_per_person = s.value("images_per_person", cfg.images_per_person);
      cfg.augment = s.value("augment", cfg.augment);
    }

    if (j.contains("optimizer")) {
      const json& o = j["optimizer"];
      check_keys(o, "optimizer", {"lr_start", "lr_peak", "warmup_iters", "total_iters"});
      cfg.schedule.lr_start = o.value("lr_start", cfg.schedule.lr_start);
      cfg.schedule.lr_peak = o.value("lr_peak", cfg.schedule.lr_peak);
      cfg.schedule.warmup_iters = o.value("warmup_iters", cfg.schedule.warmup_iters);
      cfg.schedule.total_iters = o.value("total_iters", cfg.schedule.total_iters);
    }

    if (j.contains("loss")) {
      const json& l = j["loss"];
      check_keys(l, "loss", {"lambda_sem", "lambda_id", "lambda_reg", "alpha", "beta"});
      cfg.weights.lambda_sem = l.value("lambda_sem", cfg.weights.lambda_sem);
      cfg.weights.lambda_id = l.value("lambda_id", cfg.weights.lambda_id);
      cfg.weights.lambda_reg = l.value("lambda_reg", cfg.weights.lambda_reg);
      cfg.weights.alpha = l.value("alpha", cfg.weights.alpha);
      cfg.weights.beta = l.value("beta", cfg.weights.beta);
    }

    cfg.seed = j.value("seed", cfg.seed);
    cfg.report_every = j.value("report_every", cfg.report_every);
    cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
  } catch (const json::exception& e) {
    throw Error(std::string("config field has the wrong type: ") + e.what());
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

std::string RunConfig::to_json_text() const {
  json j;
  j["schema"] = schema_path;
  if (synthetic) {
    json s;
    s["persons"] = synthetic->num_persons;
    s["images_per_person"] = synthetic->images_per_person;
    s["query_per_person"] = synthetic->query_per_person;
    s["gallery_per_person"] = synthetic->gallery_per_person;
    s["noise"] = synthetic->noise;
    s["brightness_jitter"] = synthetic->brightness_jitter;
    s["vertical_jitter"] = synthetic->vertical_jitter;
    s["holdout_persons"] = synthetic->holdout_persons;
    s["holdout"] = json::array();
    for (const auto& h : synthetic->holdout)
      s["holdout"].push_back({{"group", std::string(role_name(h.group))}, {"sid", h.sid_index}});
    j["data"]["synthetic"] = s;
  } else {
    j["data"]["root"] = dataset_root;
    j["data"]["annotations"] = annotations_path;
  }
  j["model"] = {{"height", model.height},
                {"width", model.width},
                {"channels", model.channels},
                {"embed_dim", model.embed_dim},
                {"sigma", model.sigma},
                {"align", model.align_enabled},
                {"band_fractions", {model.band_fractions[0], model.band_fractions[1]}}};
  j["sampler"] = {{"persons_per_batch", persons_per_batch},
                  {"images_per_person", images_per_person},
                  {"augment", augment}};
  j["optimizer"] = {{"lr_start", schedule.lr_start},
                    {"lr_peak", schedule.lr_peak},
                    {"warmup_iters", schedule.warmup_iters},
                    {"total_iters", schedule.total_iters}};
  j["loss"] = {{"lambda_sem", weights.lambda_sem},
               {"lambda_id", weights.lambda_id},
               {"lambda_reg", weights.lambda_reg},
               {"alpha", weights.alpha},
               {"beta", weights.beta}};
  j["seed"] = seed;
  j["report_every"] = report_every;
  j["checkpoint_every"] = checkpoint_every;
  j["output_dir"] = output_dir;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Checkpoint file

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_pod<uint32_t>(out, kCheckpointVersion);
  write_pod<uint64_t>(out, ck.schema_hash);
  write_pod<uint64_t>(out, ck.iteration);
  write_pod<int64_t>(out, ck.adam_steps);
  write_pod<int32_t>(out, ck.num_ids);
  write_string(out, ck.config_text);
  write_string(out, ck.schema_text);
  write_string(out, ck.sampler_rng);
  for (const auto& group : ck.margins) {
    write_pod<uint64_t>(out, group.size());
    out.write(reinterpret_cast<const char*>(group.data()),
              static_cast<std::streamsize>(group.size() * sizeof(double)));
  }
  write_pod<uint64_t>(out, ck.tensors.size());
  for (const auto& [name, tensor] : ck.tensors) {
    write_string(out, name);
    write_tensor(out, tensor);
  }
  if (!out) throw Error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw Error("not a checkpoint file: " + path);
  const auto version = read_pod<uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw Error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.schema_hash = read_pod<uint64_t>(in, "schema hash");
  ck.iteration = read_pod<uint64_t>(in, "iteration");
  ck.adam_steps = read_pod<int64_t>(in, "optimizer steps");
  ck.num_ids = read_pod<int32_t>(in, "identity count");
  ck.config_text = read_string(in, "config");
  ck.schema_text = read_string(in, "schema");
  ck.sampler_rng = read_string(in, "sampler state");
  for (auto& group : ck.margins) {
    const auto count = read_pod<uint64_t>(in, "margin count");
    group.resize(count);
    in.read(reinterpret_cast<char*>(group.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw Error("checkpoint truncated while reading margins");
  }
  const auto tensor_count = read_pod<uint64_t>(in, "tensor count");
  ck.tensors.reserve(tensor_count);
  for (uint64_t i = 0; i < tensor_count; ++i) {
    std::string name = read_string(in, "tensor name");
    Tensor t = read_tensor(in, name.c_str());
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Batch assembly

Tensor assemble_batch(const DatasetBundle& data, const DatasetSplit& split,
                      const std::vector<BatchItem>& items) {
  if (items.empty()) throw Error("cannot assemble an empty batch");
  const int H = data.height, W = data.width;
  Tensor out({static_cast<int>(items.size()), 3, H, W});
  for (size_t i = 0; i < items.size(); ++i) {
    const BatchItem& item = items[i];
    if (item.record_index < 0 ||
        item.record_index >= static_cast<int>(split.records.size()))
      throw Error("batch item references a record outside the split");
    const PersonRecord& rec = split.records[static_cast<size_t>(item.record_index)];
    if (rec.image_index < 0 || rec.image_index >= static_cast<int>(data.images.size()))
      throw Error("record references an image outside the bundle");
    const Tensor& img = data.images[static_cast<size_t>(rec.image_index)];
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          out.at(static_cast<int>(i), c, y, x) = img.at(c, y, item.flip ? W - 1 - x : x);
    if (item.erase.active) {
      for (int c = 0; c < 3; ++c)
        for (int y = item.erase.y; y < item.erase.y + item.erase.h; ++y)
          for (int x = item.erase.x; x < item.erase.x + item.erase.w; ++x)
            out.at(static_cast<int>(i), c, y, x) = item.erase.value;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(const RunConfig& cfg) : cfg_(cfg) {
  cfg_.validate(true);
  schema_ = AttributeSchema::load(cfg_.schema_path);
  schema_text_ = schema_.to_json();
  config_text_ = cfg_.to_json_text();

  if (cfg_.synthetic) {
    SyntheticSpec spec = *cfg_.synthetic;
    spec.height = cfg_.model.height;
    spec.width = cfg_.model.width;
    data_ = generate_synthetic(spec, schema_, RngStream::derive(cfg_.seed, "data"));
  } else {
    data_ = load_dataset(cfg_.dataset_root, schema_, cfg_.annotations_path);
  }
  if (data_.height != cfg_.model.height || data_.width != cfg_.model.width)
    throw Error("dataset image size does not match the model input size");

  margins_ = MarginTable(schema_, data_.train, cfg_.weights.alpha, cfg_.weights.beta);

  model_ = std::make_unique<EmbeddingModel>(cfg_.model, schema_);
  model_->init(RngStream::derive(cfg_.seed, "model_init"));
  classifiers_ =
      std::make_unique<IdClassifiers>(cfg_.model.embed_dim, data_.train.num_persons());
  RngStream crng(RngStream::derive(cfg_.seed, "classifier_init"));
  classifiers_->init(crng);

  build_from_state();
}

Trainer::Trainer(const Checkpoint& ck) {
  cfg_ = RunConfig::from_json_text(ck.config_text);
  cfg_.validate(!cfg_.synthetic.has_value());  // resume only needs on-disk data paths
  config_text_ = ck.config_text;
  schema_ = AttributeSchema::parse(ck.schema_text);
  schema_text_ = ck.schema_text;
  if (schema_.hash() != ck.schema_hash)
    throw Error("checkpoint schema hash does not match its schema document");

  if (cfg_.synthetic) {
    SyntheticSpec spec = *cfg_.synthetic;
    spec.height = cfg_.model.height;
    spec.width = cfg_.model.width;
    data_ = generate_synthetic(spec, schema_, RngStream::derive(cfg_.seed, "data"));
  } else {
    data_ = load_dataset(cfg_.dataset_root, schema_, cfg_.annotations_path);
  }
  if (data_.train.num_persons() != ck.num_ids)
    throw Error("checkpoint identity count does not match the dataset");

  margins_ = MarginTable::from_values(ck.margins);

  model_ = std::make_unique<EmbeddingModel>(cfg_.model, schema_);
  classifiers_ = std::make_unique<IdClassifiers>(cfg_.model.embed_dim, ck.num_ids);

  build_from_state();

  std::map<std::string, const Tensor*> bag;
  for (const auto& [name, tensor] : ck.tensors) {
    if (!bag.emplace(name, &tensor).second)
      throw Error("checkpoint repeats tensor '" + name + "'");
  }
  size_t used = 0;
  auto take = [&](const std::string& name, Tensor& dst) {
    const auto it = bag.find(name);
    if (it == bag.end()) throw Error("checkpoint is missing tensor '" + name + "'");
    if (!(dst.shape() == it->second->shape()))
      throw Error("checkpoint tensor '" + name + "' has the wrong shape");
    dst = *it->second;
    ++used;
  };
  for (auto& p : model_->parameters()) take(p.name, p.param->value);
  for (auto& p : classifiers_->parameters()) take(p.name, p.param->value);
  for (auto& b : model_->buffers()) take(b.name, *b.tensor);
  for (auto& [name, tensor] : adam_->state()) take(name, *tensor);
  if (used != bag.size())
    throw Error("checkpoint contains tensors this configuration does not use");

  adam_->set_steps_taken(ck.adam_steps);
  sampler_->load_rng(ck.sampler_rng);
  iter_ = static_cast<long>(ck.iteration);
}

void Trainer::build_from_state() {
  if (data_.train.num_persons() < cfg_.persons_per_batch)
    throw Error("train split has fewer identities than persons_per_batch");

  train_person_ids_.clear();
  for (const auto& rec : data_.train.records) train_person_ids_.push_back(rec.person_id);
  std::sort(train_person_ids_.begin(), train_person_ids_.end());
  train_person_ids_.erase(std::unique(train_person_ids_.begin(), train_person_ids_.end()),
                          train_person_ids_.end());

  SamplerConfig scfg;
  scfg.persons_per_batch = cfg_.persons_per_batch;
  scfg.images_per_person = cfg_.images_per_person;
  scfg.seed = RngStream::derive(cfg_.seed, "sampler");
  scfg.augment = cfg_.augment;
  sampler_ = std::make_unique<PkSampler>(data_.train, data_.height, data_.width, scfg);

  auto params = model_->parameters();
  auto cparams = classifiers_->parameters();
  params.insert(params.end(), cparams.begin(), cparams.end());
  adam_ = std::make_unique<AdamOptimizer>(std::move(params));
}

int Trainer::person_class(int person_id) const {
  const auto it =
      std::lower_bound(train_person_ids_.begin(), train_person_ids_.end(), person_id);
  if (it == train_person_ids_.end() || *it != person_id)
    throw Error("person id " + std::to_string(person_id) + " is not in the train split");
  return static_cast<int>(it - train_person_ids_.begin());
}

LossReport Trainer::step() {
  const auto items = sampler_->next();
  const Tensor batch = assemble_batch(data_, data_.train, items);
  auto reps = model_->forward(batch, true);

  const int B = static_cast<int>(items.size());
  const int d = cfg_.model.embed_dim;
  std::vector<std::array<long, kNumGroups>> sids(static_cast<size_t>(B));
  std::vector<int> labels(static_cast<size_t>(B));
  for (int i = 0; i < B; ++i) {
    const PersonRecord& rec =
        data_.train.records[static_cast<size_t>(items[static_cast<size_t>(i)].record_index)];
    for (int g = 0; g < kNumGroups; ++g)
      sids[static_cast<size_t>(i)][static_cast<size_t>(g)] =
          rec.sids[static_cast<size_t>(g)].index;
    labels[static_cast<size_t>(i)] = person_class(rec.person_id);
  }

  model_->zero_grads();
  for (auto& p : classifiers_->parameters()) p.param->grad.zero();

  std::array<Tensor, kNumGroups> dpre, dpost;
  for (int g = 0; g < kNumGroups; ++g) {
    dpre[static_cast<size_t>(g)] = Tensor({B, d});
    dpost[static_cast<size_t>(g)] = Tensor({B, d});
  }

  const auto sem = semantic_guidance_loss(reps.post, model_->bank(), sids, margins_,
                                          cfg_.weights.lambda_sem, &dpost);
  const auto id = identification_loss(reps.post, reps.post, *classifiers_, labels,
                                      cfg_.weights.lambda_id, &dpost, &dpost);
  const auto reg = regularization_loss(schema_, model_->bank(), cfg_.weights.lambda_reg, true);

  model_->backward(dpre, dpost);
  adam_->step(cfg_.schedule.at(iter_));
  ++iter_;
  return total_loss(sem, id, reg, cfg_.weights);
}

Checkpoint Trainer::snapshot() const {
  Checkpoint ck;
  ck.config_text = config_text_;
  ck.schema_text = schema_text_;
  ck.schema_hash = schema_.hash();
  ck.iteration = static_cast<uint64_t>(iter_);
  ck.adam_steps = adam_->steps_taken();
  ck.num_ids = classifiers_->num_ids();
  ck.margins = margins_.values();
  auto* self = const_cast<Trainer*>(this);  // parameter listing is non-mutating
  for (auto& p : self->model_->parameters()) ck.tensors.emplace_back(p.name, p.param->value);
  for (auto& p : self->classifiers_->parameters())
    ck.tensors.emplace_back(p.name, p.param->value);
  for (auto& b : self->model_->buffers()) ck.tensors.emplace_back(b.name, *b.tensor);
  for (auto& [name, tensor] : self->adam_->state()) ck.tensors.emplace_back(name, *tensor);
  ck.sampler_rng = sampler_->save_rng();
  return ck;
}

// ---------------------------------------------------------------------------
// Full run

Checkpoint train(Trainer& trainer, std::ostream* progress) {
  const RunConfig& cfg = trainer.config();
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  std::ofstream log(fs::path(cfg.output_dir) / "train_log.jsonl", std::ios::trunc);
  if (!log) throw Error("cannot open training log in " + cfg.output_dir);

  auto emit = [&](long it, const LossReport& r) {
    json line = {{"iter", it},          {"lr", trainer.learning_rate(it)},
                 {"total", r.total},    {"sem", r.sem},
                 {"id_ce", r.id_ce},    {"id_triplet", r.id_triplet},
                 {"reg", r.reg}};
    log << line.dump() << "\n";
    log.flush();
    if (progress) *progress << line.dump() << "\n";
  };

  const long total = cfg.schedule.total_iters;
  while (trainer.iteration() < total) {
    const long it = trainer.iteration();
    const LossReport report = trainer.step();
    if (!std::isfinite(report.total)) {
      const auto ck_path = fs::path(cfg.output_dir) / "diagnostic.ckpt";
      save_checkpoint(trainer.snapshot(), ck_path.string());
      json diag = {{"iter", it},
                   {"lr", trainer.learning_rate(it)},
                   {"total", report.total},
                   {"sem", report.sem},
                   {"id_ce", report.id_ce},
                   {"id_triplet", report.id_triplet},
                   {"reg", report.reg}};
      std::ofstream(fs::path(cfg.output_dir) / "diagnostic.json") << diag.dump(2) << "\n";
      throw Error("non-finite loss at iteration " + std::to_string(it) +
                  "; diagnostic snapshot written to " + cfg.output_dir);
    }
    if (cfg.report_every > 0 && (it % cfg.report_every == 0 || it + 1 == total))
      emit(it, report);
    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && it + 1 < total) {
      const auto path =
          fs::path(cfg.output_dir) / ("iter_" + std::to_string(it + 1) + ".ckpt");
      save_checkpoint(trainer.snapshot(), path.string());
    }
  }

  Checkpoint final_ck = trainer.snapshot();
  save_checkpoint(final_ck, (fs::path(cfg.output_dir) / "final.ckpt").string());
  return final_ck;
}

Checkpoint train(const RunConfig& cfg, std::ostream* progress) {
  Trainer trainer(cfg);
  return train(trainer, progress);
}

// ---------------------------------------------------------------------------
// Split embedding

GalleryIndex embed_split(EmbeddingModel& model, const AttributeSchema& schema,
                         const DatasetBundle& data, const DatasetSplit& split,
                         int batch_size) {
  if (split.records.empty()) throw Error("cannot embed an empty split");
  if (batch_size < 1) throw Error("batch size must be positive");
  const int n = static_cast<int>(split.records.size());
  const int d = model.config().embed_dim;
  const int H = data.height, W = data.width;

  std::array<Tensor, kNumGroups> post;
  for (auto& t : post) t = Tensor({n, d});

  for (int start = 0; start < n; start += batch_size) {
    const int b = std::min(batch_size, n - start);
    Tensor batch({b, 3, H, W});
    for (int i = 0; i < b; ++i) {
      const PersonRecord& rec = split.records[static_cast<size_t>(start + i)];
      if (rec.image_index < 0 || rec.image_index >= static_cast<int>(data.images.size()))
        throw Error("record references an image outside the bundle");
      const Tensor& img = data.images[static_cast<size_t>(rec.image_index)];
      std::copy_n(img.data(), img.numel(), batch.data() + static_cast<size_t>(i) * img.numel());
    }
    const auto reps = model.forward(batch, false);
    for (int g = 0; g < kNumGroups; ++g)
      std::copy_n(reps.post[static_cast<size_t>(g)].data(), static_cast<size_t>(b) * d,
                  post[static_cast<size_t>(g)].data() + static_cast<size_t>(start) * d);
  }
  return build_gallery_index(schema.hash(), std::move(post), split);
}

std::vector<AttributeQuery> distinct_full_queries(const DatasetSplit& split) {
  std::vector<AttributeQuery> out;
  std::set<std::array<long, kNumGroups>> seen;
  for (const auto& rec : split.records) {
    std::array<long, kNumGroups> key;
    for (int g = 0; g < kNumGroups; ++g)
      key[static_cast<size_t>(g)] = rec.sids[static_cast<size_t>(g)].index;
    if (!seen.insert(key).second) continue;
    AttributeQuery q;
    q.present.fill(true);
    q.sid = key;
    out.push_back(q);
  }
  return out;
}

}  // namespace sidkit
