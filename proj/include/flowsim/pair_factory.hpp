#pragma once

#include <filesystem>
#include <algorithm>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "flowsim/flow.hpp"
#include "flowsim/flow_estimation.hpp"
#include "flowsim/generators.hpp"
#include "flowsim/image.hpp"
#include "json.hpp"

namespace flowsim {

/// Where a pair came from: simulated from a still image, or a real clip.
struct Provenance {
  enum class Kind { kSimulated, kReal };
  Kind kind = Kind::kSimulated;
  std::string dataset;  // real clips only

  static Provenance simulated() { return {}; }
  static Provenance real(std::string name) { return {Kind::kReal, std::move(name)}; }

  /// "simulated" or "real:<dataset>".
  std::string to_string() const;
  static Provenance parse(const std::string& text);

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// Spatially aligned (image, flow, mask) sample.
struct TrainingPair {
  Image image;
  FlowField flow;
  SaliencyMap mask;
  std::string source_id;
  int frame_index = 1;
  Provenance provenance;
  std::string generator_id;
  std::string flow_backend_id;
  std::vector<std::string> notes;

  /// Dimensions of image, flow and mask agree.
  bool is_aligned() const noexcept;

  /// "<source_id>_t<NNN>" with path separators replaced.
  std::string pair_id() const;
};

struct ManifestEntry {
  std::string pair_id;
  std::string image_path;  // relative to the dataset root
  std::string flow_path;
  std::string mask_path;
  std::string provenance;
  std::string source_id;
  int t = 0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  /// provenance string -> indices into `entries`
  std::map<std::string, std::vector<std::size_t>> named_sources;
  nlohmann::ordered_json created_with;
  /// pair_id -> {generator_id, flow_backend_id, notes}
  std::map<std::string, nlohmann::json> pair_meta;

  void rebuild_index();
};

/// Per-source bookkeeping for build reports; skipped frames are never silent.
struct SourceReport {
  std::string source_id;
  int produced = 0;
  int skipped = 0;
  std::vector<std::string> messages;
  double mean_flow_magnitude = 0.0;  // mean over produced pairs
  double max_flow_magnitude = 0.0;
};

struct BuildReport {
  std::vector<SourceReport> sources;

  int total_produced() const;
  int total_skipped() const;
  /// Mean of per-pair mean magnitudes across all produced pairs.
  double mean_flow_magnitude() const;
  nlohmann::ordered_json to_json() const;
};

/// [(I_s, I_1), ..., (I_s, I_T)].
std::vector<std::pair<Image, Image>> build_temporary_pairs(const Image& source, const FrameSequence& seq);

struct FinalPairOptions {
  std::string source_id = "source";
  /// Skip frames whose mean absolute difference to the source is below this
  /// value (0 disables; generated first frames are kept by default).
  double skip_duplicate_below = 0.0;
  /// 1-based frame indices to turn into pairs; empty keeps all of them.
  std::vector<int> frames;
};

/// One pair per frame with flow = estimator(I_s, I_t). Frames whose estimation
/// fails are skipped and recorded in `report`.
std::vector<TrainingPair> build_final_pairs(const Image& source, const SaliencyMap& mask, const FrameSequence& seq,
                                            const FlowBackend& estimator, const FinalPairOptions& options,
                                            SourceReport& report);

/// Same as above but with the generator's exact displacement fields.
std::vector<TrainingPair> build_analytic_pairs(const SaliencyMap& mask, const AnalyticSequence& seq,
                                               const std::string& source_id, SourceReport& report,
                                               const std::vector<int>& frames = {});

/// Writes `root/{images,flows,masks}/<pair_id>.*`, `manifest.jsonl`,
/// `pairs_meta.jsonl` and `dataset.json`. Byte-identical for identical input.
DatasetManifest materialize_dataset(const std::vector<TrainingPair>& pairs, const std::filesystem::path& root,
                                    const nlohmann::ordered_json& created_with = nlohmann::ordered_json::object());

DatasetManifest load_manifest(const std::filesystem::path& root);

/// Reads back every pair referenced by a manifest.
std::vector<TrainingPair> load_pairs(const DatasetManifest& manifest);
TrainingPair load_pair(const DatasetManifest& manifest, const ManifestEntry& entry);

/// Real clip: pair k holds frame k, its mask, and flow(frame k -> k+1); the
/// last frame uses the negated flow towards frame k-1. Frames without masks are
/// skipped and logged.
std::vector<TrainingPair> ingest_real_video(const std::filesystem::path& frames_dir,
                                            const std::filesystem::path& masks_dir, const FlowBackend& estimator,
                                            const std::string& dataset_name, SourceReport& report);

/// Image files of a directory in lexicographic order.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace flowsim
