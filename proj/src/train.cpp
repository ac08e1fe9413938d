#include "qgface/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <opencv2/imgproc.hpp>
#include <sstream>

#include "qgface/csv.hpp"

namespace fs = std::filesystem;

namespace qgface {

namespace {

constexpr uint64_t kShuffleTag = 0x53484653ULL;  // shuffle stream
constexpr uint64_t kAugmentTag = 0x41554753ULL;  // per-sample augment stream
constexpr char kMagic[8] = {'Q', 'G', 'C', 'K', 'P', 'T', '0', '1'};

Tensor slice_rows(const Tensor& t, int64_t lo, int64_t hi) {
  const int64_t cols = t.dim(1);
  Tensor out({hi - lo, cols});
  for (int64_t i = lo; i < hi; ++i)
    for (int64_t j = 0; j < cols; ++j) out.at(i - lo, j) = t.at(i, j);
  return out;
}

// --- checkpoint binary primitives ---

void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
void write_u64(std::ostream& os, uint64_t v) { write_bytes(os, &v, 8); }
void write_i64(std::ostream& os, int64_t v) { write_bytes(os, &v, 8); }
void write_f64(std::ostream& os, double v) { write_bytes(os, &v, 8); }
void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  write_bytes(os, s.data(), s.size());
}
void write_tensor(std::ostream& os, const Tensor& t) {
  write_u64(os, static_cast<uint64_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) write_i64(os, t.dim(i));
  write_bytes(os, t.data(), static_cast<size_t>(t.numel()) * 8);
}

void read_bytes(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw IngestionError("checkpoint truncated");
}
uint64_t read_u64(std::istream& is) {
  uint64_t v;
  read_bytes(is, &v, 8);
  return v;
}
int64_t read_i64(std::istream& is) {
  int64_t v;
  read_bytes(is, &v, 8);
  return v;
}
double read_f64(std::istream& is) {
  double v;
  read_bytes(is, &v, 8);
  return v;
}
std::string read_string(std::istream& is) {
  const uint64_t n = read_u64(is);
  std::string s(n, '\0');
  read_bytes(is, s.data(), n);
  return s;
}
Tensor read_tensor(std::istream& is) {
  const uint64_t rank = read_u64(is);
  std::vector<int64_t> shape;
  for (uint64_t i = 0; i < rank; ++i) shape.push_back(read_i64(is));
  Tensor t(shape);
  read_bytes(is, t.data(), static_cast<size_t>(t.numel()) * 8);
  return t;
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, DatasetIndex dataset)
    : cfg_(std::move(cfg)),
      dataset_(std::move(dataset)),
      quality_(cfg_.quality.momentum, cfg_.quality.c) {
  cfg_.validate();
  if (dataset_.records.empty())
    throw IngestionError("trainer: dataset has no records");
  encoder_ = std::make_unique<Encoder>(cfg_.encoder);
  const int64_t n = dataset_.n_identities();
  proxies_ = ClassifierProxies::make(cfg_.encoder.embedding_dim, n, cfg_.loss_s,
                                     cfg_.loss_m, cfg_.seed);
  const int64_t qcap = cfg_.queue_capacity > 0 ? cfg_.queue_capacity : n;
  queue_ = std::make_unique<ProxyQueue>(qcap, cfg_.encoder.embedding_dim);
  std::vector<Parameter> params = encoder_->parameters();
  params.push_back({"proxies.W", proxies_.W});
  optimizer_ = std::make_unique<SgdOptimizer>(std::move(params), cfg_.lr,
                                              cfg_.momentum, cfg_.weight_decay);
}

double Trainer::lr_for_epoch(int epoch) const {
  double lr = cfg_.lr;
  for (int drop : cfg_.lr_drop_epochs)
    if (epoch >= drop) lr /= 10.0;
  return lr;
}

cv::Mat Trainer::load_input(int64_t record_index) const {
  const auto& rec = dataset_.records[static_cast<size_t>(record_index)];
  cv::Mat img = record_image(rec);
  const int h = static_cast<int>(cfg_.encoder.input_height);
  const int w = static_cast<int>(cfg_.encoder.input_width);
  if (img.rows != h || img.cols != w)
    cv::resize(img, img, {w, h}, 0, 0, cv::INTER_LINEAR);
  return img;
}

std::vector<std::vector<int64_t>> Trainer::epoch_batches(int epoch) const {
  std::vector<int64_t> order(dataset_.records.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
  Rng rng(derive_seed(cfg_.seed, {kShuffleTag, static_cast<uint64_t>(epoch)}));
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1],
              order[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
  std::vector<std::vector<int64_t>> batches;
  for (size_t lo = 0; lo < order.size(); lo += static_cast<size_t>(cfg_.batch_size))
    batches.emplace_back(order.begin() + static_cast<int64_t>(lo),
                         order.begin() +
                             static_cast<int64_t>(std::min(
                                 lo + static_cast<size_t>(cfg_.batch_size),
                                 order.size())));
  return batches;
}

StepMetrics Trainer::train_step(const std::vector<int64_t>& record_indices) {
  if (record_indices.empty())
    throw InvalidInputError("train_step: empty batch");
  const bool baseline = cfg_.mode == "baseline";
  const bool with_contrastive = cfg_.mode == "qgface";
  const int64_t batch = static_cast<int64_t>(record_indices.size());

  optimizer_->zero_grad();
  StepMetrics m;
  m.step = step_;
  m.lr = optimizer_->lr();

  std::vector<cv::Mat> originals, augmented;
  std::vector<int> labels;
  for (int64_t r : record_indices) {
    const cv::Mat img = load_input(r);
    const uint64_t sample_seed = derive_seed(
        cfg_.seed, {kAugmentTag, static_cast<uint64_t>(epoch_), static_cast<uint64_t>(r)});
    if (baseline) {
      Rng flip_rng(derive_seed(sample_seed, {1}));
      originals.push_back(maybe_flip(img, flip_rng));
    } else {
      auto [orig, aug] = make_pair(img, cfg_.augment, sample_seed);
      originals.push_back(std::move(orig));
      augmented.push_back(std::move(aug));
    }
    labels.push_back(dataset_.records[static_cast<size_t>(r)].identity);
  }

  std::vector<cv::Mat> images = originals;
  std::vector<int> all_labels = labels;
  std::vector<int> stream(static_cast<size_t>(batch), 0);
  if (!baseline) {
    images.insert(images.end(), augmented.begin(), augmented.end());
    all_labels.insert(all_labels.end(), labels.begin(), labels.end());
    stream.insert(stream.end(), static_cast<size_t>(batch), 1);
  }

  EmbeddingBatch eb;
  try {
    eb = encoder_->embed(images_to_tensor(images), all_labels, stream, true);
  } catch (const NumericError& e) {
    throw NumericError("step " + std::to_string(step_) + ": " + e.what());
  }

  quality_.update_stats(eb.norms);
  m.mu_z = quality_.mu_z();
  m.sigma_z = quality_.sigma_z();
  const std::vector<double> z_hat = quality_.quality_indicator(eb.norms);
  const std::vector<double> z_unit = QualityState::to_unit(z_hat);

  std::vector<bool> class_mask;
  PartitionResult part;
  if (baseline) {
    class_mask.assign(static_cast<size_t>(batch), true);
  } else {
    part = partition(
        std::vector<double>(z_unit.begin(), z_unit.begin() + batch),
        std::vector<double>(z_unit.begin() + batch, z_unit.end()),
        cfg_.quality.b);
    class_mask = part.class_mask;
    int64_t lq = 0;
    for (bool v : part.contra_mask) lq += v ? 1 : 0;
    m.frac_lq_pairs = static_cast<double>(lq) / static_cast<double>(batch);
  }

  ClassificationOutput cls;
  try {
    cls = classification_loss(eb.features, all_labels, proxies_, z_hat, class_mask);
  } catch (const NumericError& e) {
    throw NumericError("step " + std::to_string(step_) + ": " + e.what());
  }
  m.class_loss = cls.loss->value[0];
  m.num_class_used = cls.num_used;

  Var contra_term = make_const(Tensor::scalar(0.0));
  if (with_contrastive) {
    bool any_lq = false;
    for (bool v : part.contra_mask) any_lq |= v;
    // The queue only fills at the end of this step, so the very first step
    // has nothing to contrast against and the branch stays inactive.
    if (any_lq && queue_->filled() > 0) {
      Var h_k = ops::select_rows(eb.features, [&] {
        std::vector<int64_t> idx(static_cast<size_t>(batch));
        for (int64_t i = 0; i < batch; ++i) idx[static_cast<size_t>(i)] = i;
        return idx;
      }());
      Var h_q = ops::select_rows(eb.features, [&] {
        std::vector<int64_t> idx(static_cast<size_t>(batch));
        for (int64_t i = 0; i < batch; ++i) idx[static_cast<size_t>(i)] = batch + i;
        return idx;
      }());
      ContrastiveOutput con =
          contrastive_loss(h_q, h_k, labels, *queue_, part.contra_mask,
                           proxies_, cfg_.contrastive);
      contra_term = con.loss;
      m.contra_loss = con.loss->value[0];
      m.mean_pos_sim = con.mean_pos_sim;
      m.mean_neg_sim = con.mean_neg_sim;
      m.num_contra_used = con.num_pairs;
    }
  }

  Var total = ops::add(cls.loss, contra_term);
  m.total_loss = total->value[0];
  if (!std::isfinite(m.total_loss)) {
    double zmin = eb.norms[0], zmax = eb.norms[0];
    for (double z : eb.norms) {
      zmin = std::min(zmin, z);
      zmax = std::max(zmax, z);
    }
    std::ostringstream msg;
    msg << "non-finite loss at step " << step_ << ": class=" << m.class_loss
        << " contra=" << m.contra_loss << " mu_z=" << m.mu_z
        << " sigma_z=" << m.sigma_z << " norm_range=[" << zmin << "," << zmax
        << "]";
    throw NumericError(msg.str());
  }

  backward(total);

  if (!baseline) {
    const Tensor feats = eb.features->value;
    queue_->enqueue(slice_rows(feats, batch, 2 * batch),
                    slice_rows(feats, 0, batch), labels, proxies_);
  }

  optimizer_->step();
  ++step_;
  return m;
}

void Trainer::fit(const std::string& out_dir) {
  fs::create_directories(out_dir);
  CsvWriter metrics(out_dir + "/metrics.csv",
                    {"step", "total_loss", "class_loss", "contra_loss",
                     "frac_lq_pairs", "mu_z", "sigma_z", "lr"});
  CsvWriter quality_csv(out_dir + "/quality.csv",
                        {"step", "mu_z", "sigma_z", "frac_lq"});
  CsvWriter contra_csv(out_dir + "/contrastive.csv",
                       {"step", "mean_pos_sim", "mean_neg_sim"});

  for (int e = epoch_; e < cfg_.epochs; ++e) {
    epoch_ = e;
    optimizer_->set_lr(lr_for_epoch(e));
    for (const auto& batch : epoch_batches(e)) {
      StepMetrics m;
      try {
        m = train_step(batch);
      } catch (const NumericError& err) {
        std::ofstream dump(out_dir + "/abort_dump.txt");
        dump << err.what() << "\n";
        throw;
      }
      const double step = static_cast<double>(m.step);
      metrics.row({step, m.total_loss, m.class_loss, m.contra_loss,
                   m.frac_lq_pairs, m.mu_z, m.sigma_z, m.lr});
      quality_csv.row({step, m.mu_z, m.sigma_z, m.frac_lq_pairs});
      contra_csv.row({step, m.mean_pos_sim, m.mean_neg_sim});
    }
    epoch_ = e + 1;
    if (cfg_.checkpoint_every > 0 && (e + 1) % cfg_.checkpoint_every == 0 &&
        e + 1 < cfg_.epochs)
      save_checkpoint(out_dir + "/checkpoint_epoch" + std::to_string(e + 1) +
                      ".qgck");
  }
  epoch_ = std::max(epoch_, cfg_.epochs);
  save_checkpoint(out_dir + "/checkpoint_final.qgck");
}

Tensor Trainer::embed_images(const std::vector<cv::Mat>& images) {
  const int64_t d = cfg_.encoder.embedding_dim;
  Tensor out({static_cast<int64_t>(images.size()), d});
  const size_t chunk = 64;
  for (size_t lo = 0; lo < images.size(); lo += chunk) {
    const size_t hi = std::min(lo + chunk, images.size());
    std::vector<cv::Mat> part;
    for (size_t i = lo; i < hi; ++i) {
      cv::Mat img = images[i];
      const int h = static_cast<int>(cfg_.encoder.input_height);
      const int w = static_cast<int>(cfg_.encoder.input_width);
      if (img.rows != h || img.cols != w)
        cv::resize(img, img, {w, h}, 0, 0, cv::INTER_LINEAR);
      part.push_back(img);
    }
    Var feats = encoder_->forward(images_to_tensor(part), false);
    for (size_t i = lo; i < hi; ++i)
      for (int64_t j = 0; j < d; ++j)
        out.at(static_cast<int64_t>(i), j) =
            feats->value.at(static_cast<int64_t>(i - lo), j);
  }
  return out;
}

std::string Trainer::parameter_digest() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const Tensor& t) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    for (int64_t i = 0; i < t.numel() * 8; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : optimizer_->params()) mix(p.var->value);
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void Trainer::save_checkpoint(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IngestionError("cannot write checkpoint: " + path);
  write_bytes(os, kMagic, 8);
  write_string(os, train_config_to_json(cfg_));
  write_i64(os, epoch_);
  write_i64(os, step_);
  write_i64(os, dataset_.n_identities());

  auto params = const_cast<Encoder&>(*encoder_).parameters();
  write_u64(os, params.size());
  for (const auto& p : params) {
    write_string(os, p.name);
    write_tensor(os, p.var->value);
  }
  auto buffers = const_cast<Encoder&>(*encoder_).buffers();
  write_u64(os, buffers.size());
  for (const auto& b : buffers) {
    write_string(os, b.name);
    write_tensor(os, *b.tensor);
  }
  write_tensor(os, proxies_.W->value);

  auto& bufs = const_cast<SgdOptimizer&>(*optimizer_).momentum_buffers();
  write_u64(os, bufs.size());
  for (const auto& t : bufs) write_tensor(os, t);

  write_f64(os, quality_.mu_z());
  write_f64(os, quality_.sigma_z());
  write_u64(os, quality_.initialized() ? 1 : 0);

  write_u64(os, 1);  // queue present
  write_i64(os, queue_->capacity());
  write_i64(os, queue_->feature_dim());
  write_i64(os, queue_->cursor());
  write_i64(os, queue_->filled());
  write_tensor(os, queue_->raw_features());
  write_tensor(os, queue_->raw_proxy_snapshots());
  const auto& qlabels = queue_->raw_labels();
  write_u64(os, qlabels.size());
  for (int y : qlabels) write_i64(os, y);
}

void Trainer::load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open checkpoint: " + path);
  char magic[8];
  read_bytes(is, magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw IngestionError("not a checkpoint file: " + path);
  const std::string cfg_json = read_string(is);
  const TrainConfig saved = parse_train_config(cfg_json);
  if (saved.encoder.architecture != cfg_.encoder.architecture ||
      saved.encoder.embedding_dim != cfg_.encoder.embedding_dim)
    throw ConfigError("checkpoint encoder spec does not match configuration");
  epoch_ = static_cast<int>(read_i64(is));
  step_ = read_i64(is);
  const int64_t n = read_i64(is);
  if (n != dataset_.n_identities())
    throw ConfigError("checkpoint identity count does not match dataset");

  auto params = encoder_->parameters();
  const uint64_t nparams = read_u64(is);
  if (nparams != params.size())
    throw IngestionError("checkpoint parameter count mismatch");
  for (auto& p : params) {
    const std::string name = read_string(is);
    if (name != p.name)
      throw IngestionError("checkpoint parameter order mismatch: " + name);
    Tensor t = read_tensor(is);
    if (!t.same_shape(p.var->value))
      throw IngestionError("checkpoint parameter shape mismatch: " + name);
    p.var->value = std::move(t);
  }
  auto buffers = encoder_->buffers();
  const uint64_t nbuf = read_u64(is);
  if (nbuf != buffers.size())
    throw IngestionError("checkpoint buffer count mismatch");
  for (auto& b : buffers) {
    const std::string name = read_string(is);
    if (name != b.name)
      throw IngestionError("checkpoint buffer order mismatch: " + name);
    *b.tensor = read_tensor(is);
  }
  proxies_.W->value = read_tensor(is);

  auto& bufs = optimizer_->momentum_buffers();
  const uint64_t nopt = read_u64(is);
  if (nopt != bufs.size())
    throw IngestionError("checkpoint optimizer state mismatch");
  for (auto& t : bufs) t = read_tensor(is);

  const double mu = read_f64(is);
  const double sigma = read_f64(is);
  const bool initialized = read_u64(is) != 0;
  quality_.restore(mu, sigma, initialized);

  if (read_u64(is) == 1) {
    const int64_t cap = read_i64(is);
    const int64_t dim = read_i64(is);
    const int64_t cursor = read_i64(is);
    const int64_t filled = read_i64(is);
    Tensor feats = read_tensor(is);
    Tensor snaps = read_tensor(is);
    const uint64_t nlab = read_u64(is);
    std::vector<int> labels(nlab);
    for (auto& y : labels) y = static_cast<int>(read_i64(is));
    queue_ = std::make_unique<ProxyQueue>(cap, dim);
    queue_->restore(std::move(feats), std::move(snaps), std::move(labels),
                    cursor, filled);
  }
}

Tensor EncoderBundle::embed(const std::vector<cv::Mat>& images) {
  const int64_t d = cfg.encoder.embedding_dim;
  Tensor out({static_cast<int64_t>(images.size()), d});
  const size_t chunk = 64;
  for (size_t lo = 0; lo < images.size(); lo += chunk) {
    const size_t hi = std::min(lo + chunk, images.size());
    std::vector<cv::Mat> part;
    for (size_t i = lo; i < hi; ++i) {
      cv::Mat img = images[i];
      const int h = static_cast<int>(cfg.encoder.input_height);
      const int w = static_cast<int>(cfg.encoder.input_width);
      if (img.rows != h || img.cols != w)
        cv::resize(img, img, {w, h}, 0, 0, cv::INTER_LINEAR);
      part.push_back(img);
    }
    Var feats = encoder->forward(images_to_tensor(part), false);
    for (size_t i = lo; i < hi; ++i)
      for (int64_t j = 0; j < d; ++j)
        out.at(static_cast<int64_t>(i), j) =
            feats->value.at(static_cast<int64_t>(i - lo), j);
  }
  return out;
}

TrainConfig checkpoint_config(const std::string& checkpoint_path) {
  std::ifstream is(checkpoint_path, std::ios::binary);
  if (!is) throw IngestionError("cannot open checkpoint: " + checkpoint_path);
  char magic[8];
  read_bytes(is, magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw IngestionError("not a checkpoint file: " + checkpoint_path);
  return parse_train_config(read_string(is));
}

EncoderBundle load_encoder_bundle(const std::string& checkpoint_path) {
  std::ifstream is(checkpoint_path, std::ios::binary);
  if (!is) throw IngestionError("cannot open checkpoint: " + checkpoint_path);
  char magic[8];
  read_bytes(is, magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw IngestionError("not a checkpoint file: " + checkpoint_path);
  EncoderBundle bundle;
  bundle.cfg = parse_train_config(read_string(is));
  read_i64(is);  // epoch
  read_i64(is);  // step
  read_i64(is);  // identity count
  bundle.encoder = std::make_unique<Encoder>(bundle.cfg.encoder);
  auto params = bundle.encoder->parameters();
  const uint64_t nparams = read_u64(is);
  if (nparams != params.size())
    throw IngestionError("checkpoint parameter count mismatch");
  for (auto& p : params) {
    const std::string name = read_string(is);
    if (name != p.name)
      throw IngestionError("checkpoint parameter order mismatch: " + name);
    p.var->value = read_tensor(is);
  }
  auto buffers = bundle.encoder->buffers();
  const uint64_t nbuf = read_u64(is);
  if (nbuf != buffers.size())
    throw IngestionError("checkpoint buffer count mismatch");
  for (auto& b : buffers) {
    read_string(is);
    *b.tensor = read_tensor(is);
  }
  return bundle;
}

}  // namespace qgface
