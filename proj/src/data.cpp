#include "qgface/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <set>
#include <sstream>

#include "qgface/rng.hpp"

namespace fs = std::filesystem;

namespace qgface {

namespace {

bool is_image_file(const fs::path& p) {
  static const std::set<std::string> exts = {".png", ".jpg", ".jpeg", ".bmp",
                                             ".ppm", ".pgm"};
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), ::tolower);
  return exts.count(e) > 0;
}

}  // namespace

DatasetIndex load_dataset(const std::string& root) {
  if (!fs::is_directory(root))
    throw IngestionError("dataset root is not a directory: " + root);
  std::vector<std::string> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) dirs.push_back(entry.path().filename().string());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty())
    throw IngestionError("dataset root contains no identity directories: " + root);

  DatasetIndex index;
  for (const auto& name : dirs) {
    const int identity = static_cast<int>(index.identity_names.size());
    index.identity_names.push_back(name);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(fs::path(root) / name))
      if (entry.is_regular_file() && is_image_file(entry.path()))
        files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw IngestionError("identity directory has no images: " +
                           (fs::path(root) / name).string());
    for (const auto& f : files)
      index.records.push_back({f, cv::Mat(), identity});
  }
  return index;
}

cv::Mat record_image(const DatasetRecord& rec) {
  if (!rec.image.empty()) return rec.image;
  cv::Mat img = cv::imread(rec.path, cv::IMREAD_COLOR);
  if (img.empty()) throw IngestionError("cannot read image: " + rec.path);
  return img;
}

void validate_closed_set(const std::vector<int>& gallery_labels,
                         const std::vector<int>& probe_labels) {
  std::set<int> gallery(gallery_labels.begin(), gallery_labels.end());
  for (int y : probe_labels)
    if (!gallery.count(y))
      throw ProtocolError("probe identity " + std::to_string(y) +
                          " has no gallery entry (open-set probe)");
}

cv::Mat degrade_image(const cv::Mat& img, double scale, int jpeg_quality) {
  cv::Mat out = img.clone();
  if (scale < 1.0) {
    const int sw = std::max(1, static_cast<int>(std::lround(scale * img.cols)));
    const int sh = std::max(1, static_cast<int>(std::lround(scale * img.rows)));
    cv::Mat small;
    cv::resize(out, small, {sw, sh}, 0, 0, cv::INTER_LINEAR);
    cv::resize(small, out, img.size(), 0, 0, cv::INTER_LINEAR);
  }
  if (jpeg_quality < 100) {
    std::vector<uchar> buf;
    cv::imencode(".jpg", out, buf, {cv::IMWRITE_JPEG_QUALITY, jpeg_quality});
    out = cv::imdecode(buf, cv::IMREAD_COLOR);
  }
  return out;
}

std::vector<DegradeLevel> default_degrade_levels() {
  return {{"hq", 0.9, 92}, {"d3", 0.5, 70}, {"d2", 0.3, 45}, {"d1", 0.18, 28}};
}

namespace {

// Per-identity appearance parameters, drawn once from the identity's stream.
struct FaceParams {
  cv::Scalar background, skin, outline, hair, iris, lip, brow;
  double face_rx, face_ry;
  double eye_y, eye_dx, eye_r, pupil_r;
  double brow_dy, brow_len, brow_tilt;
  int brow_thick;
  double nose_len, nose_w;
  double mouth_y, mouth_w, mouth_h, mouth_tilt;
  double hair_frac;
  bool glasses;
  int n_moles;
  double mole_x[3], mole_y[3];
};

cv::Scalar sample_color(Rng& rng, int lo, int hi) {
  return {static_cast<double>(rng.uniform_int(lo, hi)),
          static_cast<double>(rng.uniform_int(lo, hi)),
          static_cast<double>(rng.uniform_int(lo, hi)), 0.0};
}

FaceParams sample_face(Rng& rng) {
  FaceParams p;
  // Shared palette with narrow per-identity variation: colors alone survive
  // heavy downsampling, so identity must ride mostly on geometry, the way
  // surveillance-style benchmarks behave.
  p.background = {60, 60, 60, 0};
  const double skin_base = rng.uniform(180, 205);
  p.skin = {skin_base * rng.uniform(0.78, 0.84), skin_base * rng.uniform(0.86, 0.92),
            skin_base, 0.0};
  p.outline = {p.skin[0] * 0.55, p.skin[1] * 0.55, p.skin[2] * 0.55, 0.0};
  p.hair = sample_color(rng, 30, 70);
  p.iris = sample_color(rng, 30, 80);
  p.lip = {rng.uniform(50, 70), rng.uniform(45, 65), rng.uniform(130, 160), 0.0};
  p.brow = {rng.uniform(30, 55), rng.uniform(30, 55), rng.uniform(30, 55), 0.0};
  p.face_rx = rng.uniform(0.28, 0.38);
  p.face_ry = rng.uniform(0.36, 0.46);
  p.eye_y = rng.uniform(-0.14, -0.05);
  p.eye_dx = rng.uniform(0.11, 0.19);
  p.eye_r = rng.uniform(0.035, 0.065);
  p.pupil_r = rng.uniform(0.35, 0.6);
  p.brow_dy = rng.uniform(0.05, 0.10);
  p.brow_len = rng.uniform(0.08, 0.14);
  p.brow_tilt = rng.uniform(-0.25, 0.25);
  p.brow_thick = static_cast<int>(rng.uniform_int(1, 3));
  p.nose_len = rng.uniform(0.10, 0.20);
  p.nose_w = rng.uniform(0.03, 0.08);
  p.mouth_y = rng.uniform(0.16, 0.26);
  p.mouth_w = rng.uniform(0.09, 0.18);
  p.mouth_h = rng.uniform(0.02, 0.05);
  p.mouth_tilt = rng.uniform(-8.0, 8.0);
  p.hair_frac = rng.uniform(0.12, 0.30);
  p.glasses = rng.bernoulli(0.3);
  p.n_moles = static_cast<int>(rng.uniform_int(0, 3));
  for (int i = 0; i < 3; ++i) {
    p.mole_x[i] = rng.uniform(-0.2, 0.2);
    p.mole_y[i] = rng.uniform(-0.05, 0.3);
  }
  return p;
}

cv::Mat render_face(const FaceParams& p, int size) {
  cv::Mat img(size, size, CV_8UC3,
              cv::Scalar(p.background[0], p.background[1], p.background[2]));
  const double S = size;
  const cv::Point2d c(S * 0.5, S * 0.53);
  auto px = [&](double fx, double fy) {
    return cv::Point(static_cast<int>(std::lround(c.x + fx * S)),
                     static_cast<int>(std::lround(c.y + fy * S)));
  };
  const cv::Size face_axes(static_cast<int>(p.face_rx * S),
                           static_cast<int>(p.face_ry * S));
  // Hair block behind the upper face.
  cv::ellipse(img, px(0, -p.face_ry * 0.55),
              {static_cast<int>(p.face_rx * S * 1.08),
               static_cast<int>(p.face_ry * S * (0.45 + p.hair_frac))},
              0, 180, 360, p.hair, cv::FILLED, cv::LINE_AA);
  cv::ellipse(img, px(0, 0), face_axes, 0, 0, 360, p.skin, cv::FILLED, cv::LINE_AA);
  cv::ellipse(img, px(0, 0), face_axes, 0, 0, 360, p.outline, 2, cv::LINE_AA);
  // Hair fringe over the forehead.
  cv::ellipse(img, px(0, -p.face_ry + p.hair_frac * 0.4),
              {static_cast<int>(p.face_rx * S * 0.98),
               static_cast<int>(p.hair_frac * S * 0.55)},
              0, 180, 360, p.hair, cv::FILLED, cv::LINE_AA);
  for (int side = -1; side <= 1; side += 2) {
    const cv::Point eye = px(side * p.eye_dx, p.eye_y);
    const int er = static_cast<int>(p.eye_r * S);
    cv::circle(img, eye, er, cv::Scalar(250, 250, 250), cv::FILLED, cv::LINE_AA);
    cv::circle(img, eye, static_cast<int>(er * p.pupil_r), p.iris, cv::FILLED,
               cv::LINE_AA);
    cv::circle(img, eye, std::max(1, static_cast<int>(er * p.pupil_r * 0.45)),
               cv::Scalar(15, 15, 15), cv::FILLED, cv::LINE_AA);
    if (p.glasses)
      cv::circle(img, eye, er + 2, cv::Scalar(30, 30, 30), 1, cv::LINE_AA);
    const cv::Point b1 = px(side * (p.eye_dx - p.brow_len / 2),
                            p.eye_y - p.brow_dy + side * p.brow_tilt * 0.04);
    const cv::Point b2 = px(side * (p.eye_dx + p.brow_len / 2),
                            p.eye_y - p.brow_dy - side * p.brow_tilt * 0.04);
    cv::line(img, b1, b2, p.brow, p.brow_thick, cv::LINE_AA);
  }
  if (p.glasses)
    cv::line(img, px(-p.eye_dx + p.eye_r, p.eye_y), px(p.eye_dx - p.eye_r, p.eye_y),
             cv::Scalar(30, 30, 30), 1, cv::LINE_AA);
  cv::line(img, px(0, p.eye_y + 0.04), px(0, p.eye_y + 0.04 + p.nose_len),
           p.outline, 2, cv::LINE_AA);
  cv::line(img, px(0, p.eye_y + 0.04 + p.nose_len),
           px(-p.nose_w, p.eye_y + 0.02 + p.nose_len), p.outline, 2, cv::LINE_AA);
  cv::ellipse(img, px(0, p.mouth_y),
              {static_cast<int>(p.mouth_w * S), static_cast<int>(p.mouth_h * S)},
              p.mouth_tilt, 0, 360, p.lip, cv::FILLED, cv::LINE_AA);
  for (int i = 0; i < p.n_moles; ++i)
    cv::circle(img, px(p.mole_x[i], p.mole_y[i]), 1,
               cv::Scalar(40, 30, 30), cv::FILLED, cv::LINE_AA);
  return img;
}

// Train-sample variation: small affine pose jitter, brightness shift,
// additive Gaussian noise.
cv::Mat jitter_sample(const cv::Mat& base, Rng& rng) {
  const double angle = rng.uniform(-6.0, 6.0);
  const double scale = rng.uniform(0.95, 1.06);
  const double tx = rng.uniform(-0.03, 0.03) * base.cols;
  const double ty = rng.uniform(-0.03, 0.03) * base.rows;
  cv::Mat rot = cv::getRotationMatrix2D(
      {static_cast<float>(base.cols) / 2.0f, static_cast<float>(base.rows) / 2.0f},
      angle, scale);
  rot.at<double>(0, 2) += tx;
  rot.at<double>(1, 2) += ty;
  cv::Mat out;
  cv::warpAffine(base, out, rot, base.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
  const double brightness = rng.uniform(-12.0, 12.0);
  for (int y = 0; y < out.rows; ++y) {
    cv::Vec3b* row = out.ptr<cv::Vec3b>(y);
    for (int x = 0; x < out.cols; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        const double noise = rng.normal(0.0, 3.0);
        row[x][ch] = static_cast<uchar>(std::clamp(
            std::lround(row[x][ch] + brightness + noise), 0l, 255l));
      }
  }
  return out;
}

}  // namespace

SynthDataset synth_generate(int n_ids, int per_id,
                            const std::vector<DegradeLevel>& levels,
                            int image_size, uint64_t seed) {
  if (n_ids < 2 || per_id < 2)
    throw InvalidInputError("synth_generate: need n_ids >= 2 and per_id >= 2");
  if (image_size < 16)
    throw InvalidInputError("synth_generate: image_size too small");
  if (levels.empty())
    throw InvalidInputError("synth_generate: need at least one degrade level");

  SynthDataset out;
  char namebuf[16];
  for (int id = 0; id < n_ids; ++id) {
    std::snprintf(namebuf, sizeof(namebuf), "id%03d", id);
    out.train.identity_names.push_back(namebuf);
    Rng id_rng(derive_seed(seed, {0xFACEULL, static_cast<uint64_t>(id)}));
    const FaceParams params = sample_face(id_rng);
    const cv::Mat canonical = render_face(params, image_size);
    for (int k = 0; k < per_id; ++k) {
      Rng s_rng(derive_seed(seed, {0x5A17ULL, static_cast<uint64_t>(id),
                                   static_cast<uint64_t>(k)}));
      out.train.records.push_back({"", jitter_sample(canonical, s_rng), id});
    }
    out.gallery_images.push_back(canonical);
    out.gallery_labels.push_back(id);
  }

  for (const auto& level : levels) {
    SynthEvalTier tier;
    tier.level = level;
    for (int id = 0; id < n_ids; ++id) {
      tier.probe_images.push_back(
          degrade_image(out.gallery_images[static_cast<size_t>(id)], level.scale,
                        level.jpeg_quality));
      tier.probe_labels.push_back(id);
    }
    // Verification pairs index into [gallery ; probe]: one genuine and one
    // impostor pair per probe.
    for (int id = 0; id < n_ids; ++id) {
      const int64_t probe_idx = n_ids + id;
      tier.pairs.push_back({static_cast<int64_t>(id), probe_idx, true});
      const int other = (id + 1 + static_cast<int>(derive_seed(seed, {0xBADULL,
                             static_cast<uint64_t>(id)}) % static_cast<uint64_t>(n_ids - 1))) % n_ids;
      tier.pairs.push_back({static_cast<int64_t>(other), probe_idx, false});
    }
    out.tiers.push_back(std::move(tier));
  }
  return out;
}

void write_pairs_file(
    const std::string& path,
    const std::vector<std::tuple<std::string, std::string, bool>>& pairs) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IngestionError("cannot write pairs file: " + path);
  for (const auto& [a, b, same] : pairs)
    f << a << ' ' << b << ' ' << (same ? 1 : 0) << '\n';
}

std::vector<std::tuple<std::string, std::string, bool>> read_pairs_file(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IngestionError("cannot read pairs file: " + path);
  std::vector<std::tuple<std::string, std::string, bool>> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string a, b;
    int same;
    if (!(ss >> a >> b >> same))
      throw IngestionError("malformed pair line in " + path + ": " + line);
    out.push_back({a, b, same != 0});
  }
  return out;
}

void write_list_file(const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IngestionError("cannot write list file: " + path);
  for (const auto& [p, label] : entries) f << p << ' ' << label << '\n';
}

std::vector<std::pair<std::string, std::string>> read_list_file(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IngestionError("cannot read list file: " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string p, label;
    if (!(ss >> p >> label))
      throw IngestionError("malformed list line in " + path + ": " + line);
    out.push_back({p, label});
  }
  return out;
}

}  // namespace qgface
