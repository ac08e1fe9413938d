#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <opencv2/imgcodecs.hpp>

#include "qgface/data.hpp"
#include "qgface/rng.hpp"

using namespace qgface;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("qgface_test_" + std::to_string(Rng(::getpid()).u64() % 1000000));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_png(const fs::path& p, int size, uchar value) {
  cv::Mat img(size, size, CV_8UC3, cv::Scalar(value, value, value));
  cv::imwrite(p.string(), img);
}

double mse(const cv::Mat& a, const cv::Mat& b) {
  cv::Mat diff;
  cv::absdiff(a, b, diff);
  diff.convertTo(diff, CV_64FC3);
  return cv::mean(diff.mul(diff))[0] + cv::mean(diff.mul(diff))[1] +
         cv::mean(diff.mul(diff))[2];
}

}  // namespace

TEST_CASE("directory ingestion: ordering, counting, error paths") {
  TempDir tmp;
  for (const char* name : {"beta", "alpha", "gamma"}) {
    fs::create_directories(tmp.path / name);
    write_png(tmp.path / name / "b.png", 16, 100);
    write_png(tmp.path / name / "a.png", 16, 50);
  }

  DatasetIndex idx = load_dataset(tmp.path.string());
  CHECK(idx.n_identities() == 3);
  CHECK(idx.records.size() == 6);
  CHECK(idx.identity_names == std::vector<std::string>{"alpha", "beta", "gamma"});
  // files sorted within each identity
  CHECK(idx.records[0].path.ends_with("alpha/a.png"));
  CHECK(idx.records[1].path.ends_with("alpha/b.png"));
  CHECK(idx.records[0].identity == 0);
  CHECK(idx.records[5].identity == 2);

  // re-running yields identical ordering
  DatasetIndex again = load_dataset(tmp.path.string());
  for (size_t i = 0; i < idx.records.size(); ++i)
    CHECK(idx.records[i].path == again.records[i].path);

  SUBCASE("empty identity directory is an ingestion error") {
    fs::create_directories(tmp.path / "empty_id");
    CHECK_THROWS_AS(load_dataset(tmp.path.string()), IngestionError);
  }
  SUBCASE("missing root is an ingestion error") {
    CHECK_THROWS_AS(load_dataset((tmp.path / "nope").string()), IngestionError);
  }
  SUBCASE("unreadable image names the file") {
    std::ofstream((tmp.path / "alpha" / "broken.png").string()) << "not a png";
    DatasetIndex broken = load_dataset(tmp.path.string());
    try {
      for (const auto& rec : broken.records) record_image(rec);
      FAIL("expected ingestion error");
    } catch (const IngestionError& e) {
      CHECK(std::string(e.what()).find("broken.png") != std::string::npos);
    }
  }
}

TEST_CASE("synthetic generation: counts, determinism, protocol properties") {
  const auto levels = default_degrade_levels();
  SynthDataset a = synth_generate(6, 4, levels, 48, 123);
  CHECK(a.train.records.size() == 24);
  CHECK(a.train.n_identities() == 6);
  CHECK(a.gallery_images.size() == 6);
  CHECK(a.tiers.size() == levels.size());
  for (const auto& tier : a.tiers) {
    CHECK(tier.probe_images.size() == 6);
    CHECK(tier.pairs.size() == 12);
    validate_closed_set(a.gallery_labels, tier.probe_labels);
  }

  SUBCASE("same seed twice is bit-identical; other seeds differ") {
    SynthDataset b = synth_generate(6, 4, levels, 48, 123);
    SynthDataset c = synth_generate(6, 4, levels, 48, 124);
    bool differs = false;
    for (size_t i = 0; i < a.train.records.size(); ++i) {
      CHECK(cv::norm(a.train.records[i].image, b.train.records[i].image,
                     cv::NORM_INF) == 0.0);
      differs |= cv::norm(a.train.records[i].image, c.train.records[i].image,
                          cv::NORM_INF) != 0.0;
    }
    CHECK(differs);
  }

  SUBCASE("identity-level degradation tier at scale 1 reproduces the gallery") {
    SynthDataset d = synth_generate(4, 2, {{"clean", 1.0, 100}}, 48, 5);
    for (size_t i = 0; i < d.gallery_images.size(); ++i)
      CHECK(cv::norm(d.tiers[0].probe_images[i], d.gallery_images[i],
                     cv::NORM_INF) == 0.0);
  }

  SUBCASE("degradation MSE grows with the tier level") {
    for (int id = 0; id < 3; ++id) {
      double prev = -1.0;
      for (const auto& tier : a.tiers) {
        const double err =
            mse(tier.probe_images[static_cast<size_t>(id)],
                a.gallery_images[static_cast<size_t>(id)]);
        CHECK(err > prev);
        prev = err;
      }
    }
  }

  SUBCASE("input validation") {
    CHECK_THROWS_AS(synth_generate(1, 4, levels, 48, 1), InvalidInputError);
    CHECK_THROWS_AS(synth_generate(4, 1, levels, 48, 1), InvalidInputError);
    CHECK_THROWS_AS(synth_generate(4, 4, levels, 4, 1), InvalidInputError);
    CHECK_THROWS_AS(synth_generate(4, 4, {}, 48, 1), InvalidInputError);
  }
}

TEST_CASE("closed-set validation catches open-set probes") {
  CHECK_NOTHROW(validate_closed_set({0, 1, 2}, {2, 2, 0}));
  CHECK_THROWS_AS(validate_closed_set({0, 1}, {2}), ProtocolError);
}

TEST_CASE("pairs and list files round-trip") {
  TempDir tmp;
  const std::vector<std::tuple<std::string, std::string, bool>> pairs = {
      {"a/x.png", "b/y.png", true}, {"a/x.png", "c/z.png", false}};
  write_pairs_file((tmp.path / "pairs.txt").string(), pairs);
  CHECK(read_pairs_file((tmp.path / "pairs.txt").string()) == pairs);

  const std::vector<std::pair<std::string, std::string>> list = {
      {"g/one.png", "one"}, {"g/two.png", "two"}};
  write_list_file((tmp.path / "list.txt").string(), list);
  CHECK(read_list_file((tmp.path / "list.txt").string()) == list);

  CHECK_THROWS_AS(read_pairs_file((tmp.path / "missing.txt").string()),
                  IngestionError);
}
