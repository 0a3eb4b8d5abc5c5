// Command-line front end: train, eval, search, recognize, export.
#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "sidkit/image_io.hpp"
#include "sidkit/workbench.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace sidkit;

namespace {

Trainer open_checkpoint(const std::string& path) {
  return Trainer(load_checkpoint(path));
}

const DatasetSplit& pick_split(const DatasetBundle& data, const std::string& name) {
  if (name == "train") return data.train;
  if (name == "query") return data.query;
  if (name == "gallery") return data.gallery;
  throw Error("unknown split '" + name + "' (expected train, query, or gallery)");
}

std::string describe_sids(const AttributeSchema& schema,
                          const std::array<long, kNumGroups>& sid) {
  std::ostringstream out;
  for (int g = 0; g < kNumGroups; ++g) {
    const auto role = static_cast<GroupRole>(g);
    const auto& group = schema.group(role);
    const SemanticId s = sid_from_index(group, sid[static_cast<size_t>(g)]);
    if (g > 0) out << " ";
    out << role_name(role) << ":";
    for (size_t a = 0; a < group.attributes.size(); ++a) {
      const auto& attr = group.attributes[a];
      if (a > 0) out << ",";
      out << attr.name << "="
          << attr.labels[static_cast<size_t>(s.label_choice[a])];
    }
  }
  return out.str();
}

json metrics_json(const RetrievalMetrics& m) {
  return json{{"mean_ap", m.mean_ap},
              {"cmc", m.cmc},
              {"evaluated", m.evaluated},
              {"skipped", m.skipped}};
}

int cmd_train(const std::string& config_path) {
  const RunConfig cfg = RunConfig::load(config_path);
  std::cout << "training for " << cfg.schedule.total_iters << " iterations into "
            << cfg.output_dir << "\n";
  train(cfg, &std::cout);
  std::cout << "final checkpoint: " << (fs::path(cfg.output_dir) / "final.ckpt").string()
            << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& split_name,
             bool protocol_filter, int max_rank, bool balanced,
             const std::string& out_path) {
  Trainer tr = open_checkpoint(ckpt_path);
  const auto& queries_split = pick_split(tr.data(), split_name);
  const auto& gallery_split = tr.data().gallery;

  const auto queries = embed_split(tr.model(), tr.schema(), tr.data(), queries_split);
  const auto gallery = embed_split(tr.model(), tr.schema(), tr.data(), gallery_split);

  const auto reid = evaluate_reid(queries, gallery, protocol_filter, max_rank);

  const auto aps_queries = distinct_full_queries(gallery_split);
  const auto aps = evaluate_aps(aps_queries, tr.model().bank(), gallery, max_rank);

  const auto par = evaluate_par(gallery, tr.model().bank(), tr.schema(), balanced);

  json out;
  out["reid"] = metrics_json(reid);
  out["reid"]["protocol_filter"] = protocol_filter;
  out["reid"]["query_split"] = split_name;
  out["aps"] = metrics_json(aps);
  out["aps"]["queries"] = aps_queries.size();
  out["par"] = {{"mean_accuracy", par.mean_accuracy}, {"balanced", balanced}};
  for (const auto& [name, acc] : par.per_attribute) out["par"]["per_attribute"][name] = acc;

  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw Error("cannot write results to " + out_path);
    f << out.dump(2) << "\n";
  }

  std::cout << std::fixed << std::setprecision(4);
  std::cout << "reid  : mAP " << reid.mean_ap << "  rank-1 " << reid.cmc[0] << "  ("
            << reid.evaluated << " queries";
  if (reid.skipped > 0) std::cout << ", " << reid.skipped << " skipped";
  std::cout << ", filter " << (protocol_filter ? "on" : "off") << ")\n";
  std::cout << "aps   : mAP " << aps.mean_ap << "  rank-1 " << aps.cmc[0] << "  ("
            << aps_queries.size() << " full attribute queries)\n";
  std::cout << "par   : mA " << par.mean_accuracy << (balanced ? "  (balanced)" : "") << "\n";
  if (!out_path.empty()) std::cout << "results written to " << out_path << "\n";
  return 0;
}

int cmd_search(const std::string& ckpt_path, const std::string& query_text,
               const std::string& groups_csv, int top, const std::string& out_path) {
  Trainer tr = open_checkpoint(ckpt_path);
  AttributeQuery q = parse_attribute_query(tr.schema(), query_text);

  if (!groups_csv.empty()) {
    std::array<bool, kNumGroups> wanted{};
    std::istringstream in(groups_csv);
    std::string name;
    while (std::getline(in, name, ',')) {
      const auto role = role_from_name(name);
      if (!role) throw Error("unknown group '" + name + "' in --groups");
      wanted[static_cast<size_t>(*role)] = true;
    }
    for (int g = 0; g < kNumGroups; ++g)
      if (!wanted[static_cast<size_t>(g)]) q.present[static_cast<size_t>(g)] = false;
    if (q.group_count() == 0)
      throw Error("--groups keeps none of the groups named in the query");
  }

  const auto gallery = embed_split(tr.model(), tr.schema(), tr.data(), tr.data().gallery);
  const auto scores = aps_scores(q, tr.model().bank(), gallery);
  const auto ranked = rank(scores);

  const long n = std::min<long>(top, static_cast<long>(ranked.order.size()));
  json out = json::array();
  std::cout << std::fixed << std::setprecision(4);
  std::cout << "rank  score    person  camera  image\n";
  for (long r = 0; r < n; ++r) {
    const long i = ranked.order[static_cast<size_t>(r)];
    std::cout << std::left << std::setw(6) << (r + 1) << std::setw(9)
              << ranked.scores[static_cast<size_t>(r)] << std::setw(8)
              << gallery.person_ids[static_cast<size_t>(i)] << std::setw(8)
              << gallery.camera_ids[static_cast<size_t>(i)]
              << gallery.image_refs[static_cast<size_t>(i)] << "\n";
    out.push_back({{"rank", r + 1},
                   {"score", ranked.scores[static_cast<size_t>(r)]},
                   {"person_id", gallery.person_ids[static_cast<size_t>(i)]},
                   {"camera_id", gallery.camera_ids[static_cast<size_t>(i)]},
                   {"image", gallery.image_refs[static_cast<size_t>(i)]},
                   {"sids", gallery.sids[static_cast<size_t>(i)]}});
  }
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw Error("cannot write results to " + out_path);
    f << out.dump(2) << "\n";
  }
  return 0;
}

int cmd_recognize(const std::string& ckpt_path, const std::string& image_path) {
  Trainer tr = open_checkpoint(ckpt_path);
  const Tensor img = read_image(image_path);
  const auto& shape = img.shape();
  if (shape[1] != tr.config().model.height || shape[2] != tr.config().model.width)
    throw Error("image is " + std::to_string(shape[2]) + "x" + std::to_string(shape[1]) +
                " but the model expects " + std::to_string(tr.config().model.width) + "x" +
                std::to_string(tr.config().model.height));

  Tensor batch({1, 3, shape[1], shape[2]});
  std::copy_n(img.data(), img.numel(), batch.data());
  const auto reps = tr.model().forward(batch, false);

  std::array<Tensor, kNumGroups> feats;
  RepView view;
  view.dim = tr.config().model.embed_dim;
  for (int g = 0; g < kNumGroups; ++g) {
    feats[static_cast<size_t>(g)] = reps.post[static_cast<size_t>(g)];
    view.rows[static_cast<size_t>(g)] = feats[static_cast<size_t>(g)].data();
  }
  const auto sids = par_predict(view, tr.model().bank());
  std::cout << describe_sids(tr.schema(), sids) << "\n";
  return 0;
}

int cmd_export(const std::string& ckpt_path, const std::string& what,
               const std::string& split_name, const std::string& out_dir) {
  Trainer tr = open_checkpoint(ckpt_path);
  const auto& split = pick_split(tr.data(), split_name);
  fs::create_directories(out_dir);

  if (what == "embeddings") {
    const auto index = embed_split(tr.model(), tr.schema(), tr.data(), split);
    const auto path = fs::path(out_dir) / (split_name + ".emb");
    save_gallery_index(index, path.string());
    std::cout << "wrote " << index.size() << " embeddings to " << path.string()
              << " (+ .meta.json)\n";
    return 0;
  }
  if (what == "heatmaps") {
    json out = json::array();
    const int chunk = 16;
    const int n = static_cast<int>(split.records.size());
    for (int start = 0; start < n; start += chunk) {
      const int b = std::min(chunk, n - start);
      Tensor batch({b, 3, tr.data().height, tr.data().width});
      for (int i = 0; i < b; ++i) {
        const auto& rec = split.records[static_cast<size_t>(start + i)];
        const Tensor& im = tr.data().images[static_cast<size_t>(rec.image_index)];
        std::copy_n(im.data(), im.numel(), batch.data() + static_cast<size_t>(i) * im.numel());
      }
      (void)tr.model().forward(batch, false);
      const auto& infos = tr.model().last_alignment();
      for (int i = 0; i < b; ++i) {
        const auto& rec = split.records[static_cast<size_t>(start + i)];
        const auto& info = infos[static_cast<size_t>(i)];
        out.push_back({{"image", rec.image_ref},
                       {"person_id", rec.person_id},
                       {"top", info.t},
                       {"bottom", info.b},
                       {"row_score", info.row_score}});
      }
    }
    const auto path = fs::path(out_dir) / (split_name + "_heatmaps.json");
    std::ofstream f(path);
    if (!f) throw Error("cannot write " + path.string());
    f << out.dump() << "\n";
    std::cout << "wrote alignment heat maps for " << n << " images to " << path.string()
              << "\n";
    return 0;
  }
  throw Error("unknown export target '" + what + "' (expected embeddings or heatmaps)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attribute-aligned person representations: one model for identity "
               "retrieval, attribute search, and attribute recognition"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train_cmd = app.add_subcommand("train", "run a training job from a config file");
  train_cmd->add_option("--config", config_path, "run configuration (JSON)")->required();

  std::string ckpt, split = "query", protocol = "on", eval_out;
  int max_rank = 20;
  bool balanced = false;
  auto* eval_cmd = app.add_subcommand("eval", "identity, attribute-search, and "
                                              "attribute-recognition metrics");
  eval_cmd->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  eval_cmd->add_option("--split", split, "query split: train, query, or gallery");
  eval_cmd->add_option("--protocol-filter", protocol,
                       "drop same-person same-camera gallery items (on|off)");
  eval_cmd->add_option("--max-rank", max_rank, "CMC curve length");
  eval_cmd->add_flag("--balanced", balanced, "macro-average attribute accuracy over labels");
  eval_cmd->add_option("--out", eval_out, "write the structured results file here");

  std::string query_text, groups_csv, search_out;
  int top = 10;
  auto* search_cmd = app.add_subcommand("search", "rank the gallery for a text attribute query");
  search_cmd->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  search_cmd->add_option("--query", query_text,
                         "e.g. \"identity:gender=female,age=adult carrying:backpack=present\"")
      ->required();
  search_cmd->add_option("--groups", groups_csv, "comma-separated groups to keep from the query");
  search_cmd->add_option("--top", top, "rows to print");
  search_cmd->add_option("--out", search_out, "write the structured results file here");

  std::string image_path;
  auto* rec_cmd = app.add_subcommand("recognize", "predict attribute labels for one image");
  rec_cmd->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  rec_cmd->add_option("--image", image_path, "PPM image at the model input size")->required();

  std::string what, export_out = "export", export_split = "gallery";
  auto* export_cmd = app.add_subcommand("export", "dump embeddings or alignment heat maps");
  export_cmd->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  export_cmd->add_option("--what", what, "embeddings | heatmaps")->required();
  export_cmd->add_option("--split", export_split, "train, query, or gallery");
  export_cmd->add_option("--out", export_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(config_path);
    if (*eval_cmd) {
      if (protocol != "on" && protocol != "off")
        throw Error("--protocol-filter expects on or off");
      if (max_rank < 1) throw Error("--max-rank must be positive");
      return cmd_eval(ckpt, split, protocol == "on", max_rank, balanced, eval_out);
    }
    if (*search_cmd) return cmd_search(ckpt, query_text, groups_csv, top, search_out);
    if (*rec_cmd) return cmd_recognize(ckpt, image_path);
    if (*export_cmd) return cmd_export(ckpt, what, export_split, export_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
