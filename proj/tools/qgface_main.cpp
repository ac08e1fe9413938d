// qgface command line: train / eval / preview-aug / diagnose / synth-data.

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <sstream>

#include "qgface/augment.hpp"
#include "qgface/csv.hpp"
#include "qgface/data.hpp"
#include "qgface/eval.hpp"
#include "qgface/image.hpp"
#include "qgface/train.hpp"

namespace fs = std::filesystem;
using namespace qgface;

namespace {

std::vector<DegradeLevel> parse_levels(const std::string& text) {
  if (text.empty()) return default_degrade_levels();
  std::vector<DegradeLevel> levels;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    DegradeLevel level;
    std::stringstream ls(item);
    std::string name, scale, quality;
    if (!std::getline(ls, name, ':') || !std::getline(ls, scale, ':') ||
        !std::getline(ls, quality, ':'))
      throw ConfigError("bad level spec (want name:scale:quality): " + item);
    level.name = name;
    level.scale = std::stod(scale);
    level.jpeg_quality = std::stoi(quality);
    levels.push_back(level);
  }
  return levels;
}

int cmd_synth_data(int ids, int per_id, uint64_t seed, int image_size,
                   const std::string& levels_text, const std::string& out) {
  const auto levels = parse_levels(levels_text);
  SynthDataset data = synth_generate(ids, per_id, levels, image_size, seed);

  fs::create_directories(fs::path(out) / "manifests");
  char buf[32];
  for (size_t r = 0; r < data.train.records.size(); ++r) {
    const auto& rec = data.train.records[r];
    const std::string name =
        data.train.identity_names[static_cast<size_t>(rec.identity)];
    fs::create_directories(fs::path(out) / "train" / name);
    std::snprintf(buf, sizeof(buf), "%03zu.png", r);
    cv::imwrite((fs::path(out) / "train" / name / buf).string(), rec.image);
  }

  std::vector<std::pair<std::string, std::string>> gallery_list;
  fs::create_directories(fs::path(out) / "eval" / "gallery");
  for (size_t g = 0; g < data.gallery_images.size(); ++g) {
    const std::string name = data.train.identity_names[g];
    const std::string rel = "../eval/gallery/" + name + ".png";
    cv::imwrite((fs::path(out) / "eval" / "gallery" / (name + ".png")).string(),
                data.gallery_images[g]);
    gallery_list.push_back({rel, name});
  }
  write_list_file((fs::path(out) / "manifests" / "gallery.txt").string(),
                  gallery_list);

  for (const auto& tier : data.tiers) {
    const std::string dir = "probe_" + tier.level.name;
    fs::create_directories(fs::path(out) / "eval" / dir);
    std::vector<std::pair<std::string, std::string>> probe_list;
    for (size_t p = 0; p < tier.probe_images.size(); ++p) {
      const std::string name =
          data.train.identity_names[static_cast<size_t>(tier.probe_labels[p])];
      cv::imwrite((fs::path(out) / "eval" / dir / (name + ".png")).string(),
                  tier.probe_images[p]);
      probe_list.push_back({"../eval/" + dir + "/" + name + ".png", name});
    }
    write_list_file(
        (fs::path(out) / "manifests" / ("probe_" + tier.level.name + ".txt")).string(),
        probe_list);

    std::vector<std::tuple<std::string, std::string, bool>> pairs;
    const int64_t n_gallery = static_cast<int64_t>(data.gallery_images.size());
    for (const auto& pr : tier.pairs) {
      const auto path_of = [&](int64_t idx) {
        if (idx < n_gallery) return gallery_list[static_cast<size_t>(idx)].first;
        return probe_list[static_cast<size_t>(idx - n_gallery)].first;
      };
      pairs.push_back({path_of(pr.a), path_of(pr.b), pr.same});
    }
    write_pairs_file(
        (fs::path(out) / "manifests" / ("pairs_" + tier.level.name + ".txt")).string(),
        pairs);

    std::ofstream ident(
        (fs::path(out) / "manifests" / ("ident_" + tier.level.name + ".manifest")).string(),
        std::ios::binary);
    ident << "gallery gallery.txt\n";
    ident << "probe probe_" << tier.level.name << ".txt\n";
  }
  std::cout << "wrote synthetic dataset: " << ids << " identities, "
            << data.train.records.size() << " train images, "
            << data.tiers.size() << " probe tiers -> " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_root,
              const std::string& out, const std::string& resume) {
  TrainConfig cfg = config_path.empty() ? TrainConfig() : load_train_config(config_path);
  DatasetIndex dataset = load_dataset(data_root);
  Trainer trainer(cfg, dataset);
  if (!resume.empty()) trainer.load_checkpoint(resume);
  trainer.fit(out);
  std::cout << "training finished: " << trainer.step_count() << " steps, "
            << "checkpoint at " << out << "/checkpoint_final.qgck\n";
  return 0;
}

// Identification manifest file: lines "gallery <rel>" and "probe <rel>",
// relative to the manifest's directory.
std::pair<std::string, std::string> read_ident_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IngestionError("cannot read manifest: " + path);
  std::string gallery, probe, kind, rel;
  while (f >> kind >> rel) {
    if (kind == "gallery") gallery = rel;
    else if (kind == "probe") probe = rel;
    else throw IngestionError("manifest line must start with gallery|probe: " + kind);
  }
  if (gallery.empty() || probe.empty())
    throw IngestionError("manifest needs both gallery and probe lines: " + path);
  const fs::path dir = fs::path(path).parent_path();
  return {(dir / gallery).string(), (dir / probe).string()};
}

struct EmbeddedList {
  Tensor embeddings;
  std::vector<int> labels;
  std::vector<std::string> label_names;
};

EmbeddedList embed_list_file(EncoderBundle& bundle, const std::string& list_path,
                             std::map<std::string, int>& label_ids) {
  const fs::path dir = fs::path(list_path).parent_path();
  EmbeddedList out;
  std::vector<cv::Mat> images;
  for (const auto& [rel, label] : read_list_file(list_path)) {
    cv::Mat img = cv::imread((dir / rel).string(), cv::IMREAD_COLOR);
    if (img.empty())
      throw IngestionError("cannot read image: " + (dir / rel).string());
    images.push_back(img);
    if (!label_ids.count(label))
      label_ids[label] = static_cast<int>(label_ids.size());
    out.labels.push_back(label_ids[label]);
    out.label_names.push_back(label);
  }
  out.embeddings = bundle.embed(images);
  return out;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest,
             const std::string& protocol, double far, int k, int folds,
             const std::string& out) {
  EncoderBundle bundle = load_encoder_bundle(checkpoint);
  if (!out.empty()) fs::create_directories(out);

  if (protocol == "verification") {
    const fs::path dir = fs::path(manifest).parent_path();
    const auto path_pairs = read_pairs_file(manifest);
    std::map<std::string, int64_t> index;
    std::vector<cv::Mat> images;
    std::vector<VerificationPair> pairs;
    for (const auto& [a, b, same] : path_pairs) {
      for (const std::string& p : {a, b})
        if (!index.count(p)) {
          cv::Mat img = cv::imread((dir / p).string(), cv::IMREAD_COLOR);
          if (img.empty())
            throw IngestionError("cannot read image: " + (dir / p).string());
          index[p] = static_cast<int64_t>(images.size());
          images.push_back(img);
        }
      pairs.push_back({index[a], index[b], same});
    }
    Tensor emb = bundle.embed(images);
    const double acc = verification_accuracy(emb, pairs, folds);
    std::vector<double> scores;
    std::vector<bool> same;
    for (const auto& p : pairs) {
      scores.push_back(cosine_similarity(emb, p.a, p.b));
      same.push_back(p.same);
    }
    const double tar = tar_at_far(scores, same, far);
    std::cout << "verification pairs=" << pairs.size() << " folds=" << folds
              << " accuracy=" << acc << " tar@far=" << far << ": " << tar << "\n";
    if (!out.empty()) {
      CsvWriter csv(out + "/verification_scores.csv", {"score", "same"});
      for (size_t i = 0; i < scores.size(); ++i)
        csv.row({scores[i], same[i] ? 1.0 : 0.0});
    }
    return 0;
  }

  auto [gallery_path, probe_path] = read_ident_manifest(manifest);
  std::map<std::string, int> label_ids;
  EmbeddedList gallery = embed_list_file(bundle, gallery_path, label_ids);
  EmbeddedList probe = embed_list_file(bundle, probe_path, label_ids);

  if (protocol == "identification") {
    const double acc = rank_k_identification(gallery.embeddings, gallery.labels,
                                             probe.embeddings, probe.labels, k);
    std::cout << "identification gallery=" << gallery.labels.size()
              << " probes=" << probe.labels.size() << " rank-" << k << "="
              << acc << "\n";
    return 0;
  }
  if (protocol == "gap") {
    const SimilarityGap gap = similarity_gap(gallery.embeddings, gallery.labels,
                                             probe.embeddings, probe.labels);
    std::cout << "similarity-gap probes=" << probe.labels.size()
              << " mean_matched=" << gap.mean_matched
              << " mean_best_unmatched=" << gap.mean_best_unmatched
              << " gap=" << gap.gap << "\n";
    if (!out.empty()) {
      CsvWriter csv(out + "/similarity_gap.csv",
                    {"matched_sim", "best_unmatched_sim"});
      for (size_t i = 0; i < gap.matched.size(); ++i)
        csv.row({gap.matched[i], gap.best_unmatched[i]});
    }
    return 0;
  }
  throw ConfigError("unknown protocol: " + protocol);
}

int cmd_preview_aug(const std::string& data_root, const std::string& out,
                    uint64_t seed, int n, const std::string& config_path) {
  TrainConfig cfg = config_path.empty() ? TrainConfig() : load_train_config(config_path);
  DatasetIndex dataset = load_dataset(data_root);
  n = std::min<int>(n, static_cast<int>(dataset.records.size()));
  std::vector<cv::Mat> images;
  Rng pick(derive_seed(seed, {0x50524556ULL}));
  for (int i = 0; i < n; ++i) {
    const auto& rec = dataset.records[static_cast<size_t>(
        pick.uniform_int(0, static_cast<int64_t>(dataset.records.size()) - 1))];
    cv::Mat img = record_image(rec);
    if (img.rows != cfg.augment.input_size || img.cols != cfg.augment.input_size)
      cv::resize(img, img, {cfg.augment.input_size, cfg.augment.input_size});
    images.push_back(img);
  }
  Rng rng(seed);
  PairBatch pairs = make_pair_batch(images, cfg.augment, rng);
  const int size = cfg.augment.input_size, gapx = 4;
  cv::Mat grid(n * (size + gapx) - gapx, 2 * size + gapx, CV_8UC3,
               cv::Scalar(255, 255, 255));
  for (int i = 0; i < n; ++i) {
    pairs.originals[static_cast<size_t>(i)].copyTo(
        grid(cv::Rect(0, i * (size + gapx), size, size)));
    pairs.augmented[static_cast<size_t>(i)].copyTo(
        grid(cv::Rect(size + gapx, i * (size + gapx), size, size)));
  }
  if (!cv::imwrite(out, grid)) throw IngestionError("cannot write: " + out);
  std::cout << "wrote augmentation preview (" << n << " pairs) -> " << out << "\n";
  return 0;
}

std::vector<std::vector<double>> read_csv_columns(const std::string& path,
                                                  std::vector<std::string>& header) {
  std::ifstream f(path);
  if (!f) throw IngestionError("cannot read CSV: " + path);
  std::string line;
  if (!std::getline(f, line)) throw IngestionError("empty CSV: " + path);
  header.clear();
  std::stringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) header.push_back(cell);
  std::vector<std::vector<double>> cols(header.size());
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    for (size_t c = 0; c < header.size(); ++c) {
      std::getline(ls, cell, ',');
      cols[c].push_back(std::stod(cell));
    }
  }
  return cols;
}

int cmd_diagnose(const std::string& checkpoint, const std::string& data_root,
                 const std::string& run_dir, const std::string& manifest,
                 const std::string& out, uint64_t seed, int sample) {
  fs::create_directories(out);
  bool produced = false;

  if (!data_root.empty()) {
    TrainConfig cfg = checkpoint_config(checkpoint);
    DatasetIndex dataset = load_dataset(data_root);
    Trainer trainer(cfg, dataset);
    trainer.load_checkpoint(checkpoint);
    if (!trainer.quality().initialized())
      throw StateError("checkpoint has no quality statistics yet");

    Rng pick(derive_seed(seed, {0xD1A6ULL}));
    std::vector<cv::Mat> images;
    std::vector<int> labels;
    const int count = std::min<int>(sample, static_cast<int>(dataset.records.size()));
    for (int i = 0; i < count; ++i) {
      const auto& rec = dataset.records[static_cast<size_t>(pick.uniform_int(
          0, static_cast<int64_t>(dataset.records.size()) - 1))];
      images.push_back(record_image(rec));
      labels.push_back(rec.identity);
    }
    Tensor feats = trainer.embed_images(images);
    const std::vector<double> norms = feature_norms(feats);
    const std::vector<double> z_hat = trainer.quality().quality_indicator(norms);
    const std::vector<double> z_unit = QualityState::to_unit(z_hat);
    ClassificationOutput cls = classification_loss(
        make_const(feats), labels, trainer.proxies(), z_hat,
        std::vector<bool>(labels.size(), true));

    CsvWriter pts(out + "/gst_vs_quality.csv", {"z_hat", "p_target", "gst"});
    for (size_t i = 0; i < z_hat.size(); ++i)
      pts.row({z_hat[i], cls.p_target[i], cls.gst[i]});

    // Binned curve over z_hat in [-1,1].
    const int bins = 20;
    std::vector<double> bin_x, bin_mean;
    for (int b = 0; b < bins; ++b) {
      const double lo = -1.0 + 2.0 * b / bins, hi = lo + 2.0 / bins;
      double acc = 0;
      int cnt = 0;
      for (size_t i = 0; i < z_hat.size(); ++i)
        if (z_hat[i] >= lo && (z_hat[i] < hi || b == bins - 1)) {
          acc += cls.gst[i];
          ++cnt;
        }
      if (cnt > 0) {
        bin_x.push_back((lo + hi) / 2);
        bin_mean.push_back(acc / cnt);
      }
    }
    CsvWriter curve(out + "/gst_curve.csv", {"z_hat_bin", "mean_gst"});
    for (size_t i = 0; i < bin_x.size(); ++i) curve.row({bin_x[i], bin_mean[i]});
    if (bin_x.size() >= 2)
      render_line_chart(bin_x, bin_mean, "mean GST vs quality indicator",
                        out + "/gst_curve.png");

    CsvWriter qh(out + "/quality_hist.csv", {"z_unit"});
    for (double v : z_unit) qh.row({v});
    render_histogram(z_unit, 20, "quality indicator (unit scale)",
                     out + "/quality_hist.png");
    produced = true;
  }

  if (!run_dir.empty()) {
    std::vector<std::string> header;
    const auto cols = read_csv_columns(run_dir + "/contrastive.csv", header);
    if (cols.size() == 3 && !cols[0].empty()) {
      render_multi_line_chart(cols[0], {cols[1], cols[2]},
                              {"mean_pos_sim", "mean_neg_sim"},
                              "queue pair similarities", out + "/queue_trace.png");
      produced = true;
    }
  }

  if (!manifest.empty()) {
    EncoderBundle bundle = load_encoder_bundle(checkpoint);
    auto [gallery_path, probe_path] = read_ident_manifest(manifest);
    std::map<std::string, int> label_ids;
    EmbeddedList gallery = embed_list_file(bundle, gallery_path, label_ids);
    EmbeddedList probe = embed_list_file(bundle, probe_path, label_ids);
    const SimilarityGap gap = similarity_gap(gallery.embeddings, gallery.labels,
                                             probe.embeddings, probe.labels);
    CsvWriter csv(out + "/similarity_gap.csv", {"matched_sim", "best_unmatched_sim"});
    for (size_t i = 0; i < gap.matched.size(); ++i)
      csv.row({gap.matched[i], gap.best_unmatched[i]});
    render_histogram(gap.matched, 20, "matched similarities", out + "/gap_matched.png");
    render_histogram(gap.best_unmatched, 20, "best unmatched similarities",
                     out + "/gap_unmatched.png");
    std::cout << "similarity-gap mean_matched=" << gap.mean_matched
              << " mean_best_unmatched=" << gap.mean_best_unmatched
              << " gap=" << gap.gap << "\n";
    produced = true;
  }

  if (!produced)
    throw ConfigError("diagnose: pass --data, --run and/or --manifest");
  std::cout << "diagnostics written to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  cv::setNumThreads(1);
  CLI::App app{"quality-guided joint training for mixed-quality face recognition"};
  app.require_subcommand(1);

  std::string config_path, data_root, out_dir, resume, checkpoint, manifest;
  std::string protocol = "verification", levels_text, run_dir;
  uint64_t seed = 1;
  int ids = 50, per_id = 10, image_size = 112, n_preview = 8, k = 1, folds = 10,
      sample = 256;
  double far = 1e-4;

  auto* train = app.add_subcommand("train", "run the training loop");
  train->add_option("--config", config_path, "JSON config file");
  train->add_option("--data", data_root, "dataset root (identity directories)")
      ->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--manifest", manifest,
                   "pairs file (verification) or gallery/probe manifest")
      ->required();
  eval->add_option("--protocol", protocol, "verification|identification|gap");
  eval->add_option("--far", far, "FAR operating point for verification");
  eval->add_option("--k", k, "rank for identification");
  eval->add_option("--folds", folds, "verification cross-validation folds");
  eval->add_option("--out", out_dir, "directory for CSV outputs");

  auto* preview = app.add_subcommand("preview-aug", "write an augmentation grid");
  preview->add_option("--data", data_root)->required();
  preview->add_option("--out", out_dir, "output PNG path")->required();
  preview->add_option("--seed", seed);
  preview->add_option("--n", n_preview, "number of pairs");
  preview->add_option("--config", config_path);

  auto* diag = app.add_subcommand("diagnose", "emit diagnostic CSVs and plots");
  diag->add_option("--checkpoint", checkpoint)->required();
  diag->add_option("--data", data_root, "dataset for GST/quality diagnostics");
  diag->add_option("--run", run_dir, "training output dir (queue traces)");
  diag->add_option("--manifest", manifest, "gallery/probe manifest (gap histograms)");
  diag->add_option("--out", out_dir)->required();
  diag->add_option("--seed", seed);
  diag->add_option("--sample", sample, "diagnostic sample size");

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic dataset");
  synth->add_option("--ids", ids, "identity count");
  synth->add_option("--per-id", per_id, "train images per identity");
  synth->add_option("--seed", seed);
  synth->add_option("--image-size", image_size);
  synth->add_option("--levels", levels_text,
                    "probe tiers, name:scale:jpegq comma separated");
  synth->add_option("--out", out_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(train))
      return cmd_train(config_path, data_root, out_dir, resume);
    if (app.got_subcommand(eval))
      return cmd_eval(checkpoint, manifest, protocol, far, k, folds, out_dir);
    if (app.got_subcommand(preview))
      return cmd_preview_aug(data_root, out_dir, seed, n_preview, config_path);
    if (app.got_subcommand(diag))
      return cmd_diagnose(checkpoint, data_root, run_dir, manifest, out_dir,
                          seed, sample);
    if (app.got_subcommand(synth))
      return cmd_synth_data(ids, per_id, seed, image_size, levels_text, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
