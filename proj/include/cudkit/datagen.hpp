// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cudkit/image.hpp"

namespace cudkit::datagen {

struct GenConfig {
  int height = 64;
  int width = 64;
  CvdKind kind = CvdKind::Deuteranopia;
  double normal_gap_min = 15.0;     // input pair, normal vision
  double confusable_gap_max = 8.0;  // input pair, CVD-simulated
  double target_gap_min = 15.0;     // target pair, CVD-simulated
  double target_margin = 2.0;       // search until >= target_gap_min + margin
  int max_attempts = 4000;
};

struct SampleMeta {
  uint64_t seed = 0;
  CvdKind kind = CvdKind::Deuteranopia;
  bool cud = false;  // true when the input already satisfies the criterion
  double gap_normal = 0;
  double gap_cvd_input = 0;
  double gap_cvd_target = 0;
};

/// One training/evaluation record: a flat two-color image pair where only
/// the S/V values of one region change between input and target, plus the
/// pixel-index regions and generation metadata.
struct SamplePair {
  RgbImage input;
  RgbImage target;
  std::vector<int> background;
  std::vector<int> foreground;
  SampleMeta meta;
};

struct GenError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Confusable pair: the two regions are separable in normal vision
/// (L gap >= normal_gap_min) but not under the simulated deficiency
/// (gap < confusable_gap_max); the target re-separates them by scaling only
/// S and/or V of one region (simulated gap >= target_gap_min + margin).
/// Deterministic per seed; colors are quantized to the 8-bit grid before
/// the criteria are checked, so PNG round trips preserve them exactly.
SamplePair gen_pair(uint64_t seed, const GenConfig& cfg);

/// Already-CUD pair: the input satisfies the simulated-gap criterion and the
/// target equals the input (identity-loss path).
SamplePair gen_cud_pair(uint64_t seed, const GenConfig& cfg);

struct ManifestEntry {
  std::string id;
  uint64_t seed = 0;
  CvdKind kind = CvdKind::Deuteranopia;
  std::string split;  // train | val
  bool cud = false;
  std::string input_file, target_file, mask_file;
  double gap_normal = 0, gap_cvd_input = 0, gap_cvd_target = 0;
};

struct DatasetManifest {
  int version = 1;
  std::vector<ManifestEntry> entries;
};

/// Write pairs as PNG triples (input/target/foreground mask) plus a
/// line-oriented tab-separated manifest with a version header line.
DatasetManifest write_dataset(const std::vector<SamplePair>& pairs,
                              const std::vector<std::string>& splits, const std::string& dir);

DatasetManifest read_manifest(const std::string& dir);

/// Load pairs back (optionally one split only); regions are reconstructed
/// from the mask PNG. Round-trips pixel-exactly.
std::vector<SamplePair> read_dataset(const std::string& dir, const std::string& split = "");

}  // namespace cudkit::datagen
