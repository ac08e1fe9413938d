#pragma once

#include <opencv2/core.hpp>
#include <string>
#include <tuple>
#include <vector>

#include "qgface/common.hpp"

namespace qgface {

struct DatasetRecord {
  std::string path;  // empty for in-memory records
  cv::Mat image;     // empty for on-disk records
  int identity = -1;
};

struct DatasetIndex {
  std::vector<DatasetRecord> records;
  std::vector<std::string> identity_names;
  int64_t n_identities() const {
    return static_cast<int64_t>(identity_names.size());
  }
};

// Directory-of-identities ingestion: root/<identity>/<image>. Identity ids
// follow the alphabetical order of the subdirectory names; files are sorted
// within each identity, so re-running yields identical ordering.
DatasetIndex load_dataset(const std::string& root);

// Materializes a record's pixels (reads from disk when needed).
cv::Mat record_image(const DatasetRecord& rec);

struct VerificationPair {
  int64_t a = 0, b = 0;
  bool same = false;
};

// Index lists refer into whatever embedding/image array the caller pairs the
// manifest with. Closed-set: every probe identity appears in the gallery.
struct EvalManifest {
  std::vector<VerificationPair> verification_pairs;
  std::vector<std::pair<int64_t, int>> gallery;  // (index, identity)
  std::vector<std::pair<int64_t, int>> probe;
};

// Throws ProtocolError when some probe identity is missing from the gallery.
void validate_closed_set(const std::vector<int>& gallery_labels,
                         const std::vector<int>& probe_labels);

// Deterministic degradation: bilinear down-up at `scale` (skipped at
// scale >= 1) followed by a JPEG round-trip at `jpeg_quality` (skipped at
// quality >= 100).
cv::Mat degrade_image(const cv::Mat& img, double scale, int jpeg_quality);

struct DegradeLevel {
  std::string name;
  double scale = 1.0;
  int jpeg_quality = 100;
};

// Probe tier: one degraded probe per identity plus verification pairs whose
// indices address the concatenation [gallery ; probe].
struct SynthEvalTier {
  DegradeLevel level;
  std::vector<cv::Mat> probe_images;
  std::vector<int> probe_labels;
  std::vector<VerificationPair> pairs;
};

struct SynthDataset {
  DatasetIndex train;
  std::vector<cv::Mat> gallery_images;
  std::vector<int> gallery_labels;
  std::vector<SynthEvalTier> tiers;
};

// Procedural identity templates (fixed facial layout, per-identity parameter
// vector); train samples add pose jitter and noise; probes are tier-degraded
// canonical renders, so a scale-1/quality-100 tier reproduces the gallery
// bit-for-bit. Fully deterministic per seed.
SynthDataset synth_generate(int n_ids, int per_id,
                            const std::vector<DegradeLevel>& levels,
                            int image_size, uint64_t seed);

// SCface-style default tiers: near-lossless "hq", then d3 > d2 > d1.
std::vector<DegradeLevel> default_degrade_levels();

// Plain-text manifest files. Paths inside a file are relative to the file's
// directory.
void write_pairs_file(const std::string& path,
                      const std::vector<std::tuple<std::string, std::string, bool>>& pairs);
std::vector<std::tuple<std::string, std::string, bool>> read_pairs_file(
    const std::string& path);
void write_list_file(const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& entries);
std::vector<std::pair<std::string, std::string>> read_list_file(
    const std::string& path);

}  // namespace qgface
