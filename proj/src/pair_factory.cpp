#include "flowsim/pair_factory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "flowsim/error.hpp"
#include "flowsim/exchange.hpp"
#include "flowsim/media_io.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace flowsim {

namespace {

constexpr const char* kManifestFile = "manifest.jsonl";
constexpr const char* kMetaFile = "pairs_meta.jsonl";
constexpr const char* kDatasetFile = "dataset.json";

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

double mean_abs_diff(const Image& a, const Image& b) {
  const auto pa = a.data();
  const auto pb = b.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) sum += std::fabs(pa[i] - pb[i]);
  return pa.empty() ? 0.0 : sum / static_cast<double>(pa.size());
}

void record_flow(SourceReport& report, const FlowField& flow) {
  const FlowStats stats = flow_stats(flow);
  // Running mean over produced pairs.
  const double n = report.produced;
  report.mean_flow_magnitude = (report.mean_flow_magnitude * (n - 1) + stats.mean_mag) / n;
  report.max_flow_magnitude = std::max(report.max_flow_magnitude, stats.max_mag);
}

TrainingPair make_pair(const Image& image, FlowField flow, const SaliencyMap& mask, const std::string& source_id,
                       int t, Provenance provenance, std::string generator_id, std::string backend_id) {
  TrainingPair pair;
  pair.image = image;
  pair.flow = std::move(flow);
  pair.mask = mask;
  pair.source_id = source_id;
  pair.frame_index = t;
  pair.provenance = std::move(provenance);
  pair.generator_id = std::move(generator_id);
  pair.flow_backend_id = std::move(backend_id);
  return pair;
}

}  // namespace

std::string Provenance::to_string() const {
  return kind == Kind::kSimulated ? std::string("simulated") : "real:" + dataset;
}

Provenance Provenance::parse(const std::string& text) {
  if (text == "simulated") return simulated();
  if (text.rfind("real:", 0) == 0 && text.size() > 5) return real(text.substr(5));
  throw Error(ErrorCode::kInvalidConfig, "unknown provenance '" + text + "'");
}

bool TrainingPair::is_aligned() const noexcept {
  return image.height() == flow.height() && image.width() == flow.width() && image.height() == mask.height() &&
         image.width() == mask.width() && flow.u.same_shape(flow.v);
}

std::string TrainingPair::pair_id() const {
  std::string id = source_id;
  for (char& c : id) {
    if (c == '/' || c == '\\' || c == ' ' || c == ':') c = '_';
  }
  char suffix[16];
  std::snprintf(suffix, sizeof(suffix), "_t%03d", frame_index);
  return id + suffix;
}

void DatasetManifest::rebuild_index() {
  named_sources.clear();
  for (std::size_t i = 0; i < entries.size(); ++i) named_sources[entries[i].provenance].push_back(i);
}

int BuildReport::total_produced() const {
  int n = 0;
  for (const auto& s : sources) n += s.produced;
  return n;
}

int BuildReport::total_skipped() const {
  int n = 0;
  for (const auto& s : sources) n += s.skipped;
  return n;
}

double BuildReport::mean_flow_magnitude() const {
  double sum = 0.0;
  int n = 0;
  for (const auto& s : sources) {
    sum += s.mean_flow_magnitude * s.produced;
    n += s.produced;
  }
  return n ? sum / n : 0.0;
}

ordered_json BuildReport::to_json() const {
  ordered_json doc;
  doc["produced"] = total_produced();
  doc["skipped"] = total_skipped();
  doc["mean_flow_magnitude"] = mean_flow_magnitude();
  double max_mag = 0.0;
  for (const auto& s : sources) max_mag = std::max(max_mag, s.max_flow_magnitude);
  doc["max_flow_magnitude"] = max_mag;
  ordered_json list = ordered_json::array();
  for (const auto& s : sources) {
    ordered_json item;
    item["source_id"] = s.source_id;
    item["produced"] = s.produced;
    item["skipped"] = s.skipped;
    item["mean_flow_magnitude"] = s.mean_flow_magnitude;
    item["max_flow_magnitude"] = s.max_flow_magnitude;
    item["messages"] = s.messages;
    list.push_back(std::move(item));
  }
  doc["sources"] = std::move(list);
  return doc;
}

std::vector<std::pair<Image, Image>> build_temporary_pairs(const Image& source, const FrameSequence& seq) {
  std::vector<std::pair<Image, Image>> pairs;
  pairs.reserve(seq.frames.size());
  for (const auto& frame : seq.frames) pairs.emplace_back(source, frame);
  return pairs;
}

std::vector<TrainingPair> build_final_pairs(const Image& source, const SaliencyMap& mask, const FrameSequence& seq,
                                            const FlowBackend& estimator, const FinalPairOptions& options,
                                            SourceReport& report) {
  if (mask.height() != source.height() || mask.width() != source.width()) {
    throw Error(ErrorCode::kDimensionMismatch, "mask is not aligned with source " + options.source_id);
  }
  if (report.source_id.empty()) report.source_id = options.source_id;
  std::vector<TrainingPair> pairs;
  const auto temporary = build_temporary_pairs(source, seq);
  for (std::size_t i = 0; i < temporary.size(); ++i) {
    const int t = static_cast<int>(i) + 1;
    if (!options.frames.empty() && std::find(options.frames.begin(), options.frames.end(), t) == options.frames.end()) {
      continue;
    }
    const auto& [src, target] = temporary[i];
    if (options.skip_duplicate_below > 0.0 && mean_abs_diff(src, target) < options.skip_duplicate_below) {
      ++report.skipped;
      report.messages.push_back("frame " + std::to_string(t) + ": near-duplicate of the source, skipped");
      continue;
    }
    FlowField flow;
    try {
      flow = estimator.estimate(src, target);
      if (flow.height() != src.height() || flow.width() != src.width()) {
        throw Error(ErrorCode::kBadResult, "estimated flow has wrong dimensions");
      }
    } catch (const std::exception& e) {
      ++report.skipped;
      report.messages.push_back("frame " + std::to_string(t) + ": " + e.what());
      continue;
    }
    ++report.produced;
    record_flow(report, flow);
    pairs.push_back(make_pair(src, std::move(flow), mask, options.source_id, t, Provenance::simulated(),
                              seq.generator_id, estimator.id));
  }
  return pairs;
}

std::vector<TrainingPair> build_analytic_pairs(const SaliencyMap& mask, const AnalyticSequence& seq,
                                               const std::string& source_id, SourceReport& report,
                                               const std::vector<int>& frames) {
  if (report.source_id.empty()) report.source_id = source_id;
  std::vector<TrainingPair> pairs;
  for (std::size_t i = 0; i < seq.flows.size(); ++i) {
    if (!frames.empty() && std::find(frames.begin(), frames.end(), static_cast<int>(i) + 1) == frames.end()) continue;
    ++report.produced;
    record_flow(report, seq.flows[i]);
    auto pair = make_pair(seq.sequence.source, seq.flows[i], mask, source_id, static_cast<int>(i) + 1,
                          Provenance::simulated(), seq.sequence.generator_id, "analytic");
    if (seq.sequence.generator_id == "synthetic_scene") pair.notes.push_back("disocclusion_fill=edge_replication");
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

DatasetManifest materialize_dataset(const std::vector<TrainingPair>& pairs, const fs::path& root,
                                    const ordered_json& created_with) {
  std::set<std::string> ids;
  for (const auto& pair : pairs) {
    if (!pair.is_aligned()) {
      throw Error(ErrorCode::kShapeMismatch, "pair " + pair.pair_id() + " is not spatially aligned");
    }
    if (!ids.insert(pair.pair_id()).second) {
      throw Error(ErrorCode::kDuplicatePairId, pair.pair_id());
    }
  }

  fs::create_directories(root / "images");
  fs::create_directories(root / "flows");
  fs::create_directories(root / "masks");

  DatasetManifest manifest;
  manifest.root = root;
  manifest.created_with = created_with;
  std::ofstream lines(root / kManifestFile, std::ios::trunc);
  std::ofstream meta(root / kMetaFile, std::ios::trunc);
  if (!lines || !meta) throw Error(ErrorCode::kIoFailure, "cannot write manifest under " + root.string());

  for (const auto& pair : pairs) {
    const std::string id = pair.pair_id();
    ManifestEntry entry{id,
                        "images/" + id + ".png",
                        "flows/" + id + ".flo",
                        "masks/" + id + ".png",
                        pair.provenance.to_string(),
                        pair.source_id,
                        pair.frame_index};
    store_image(pair.image, root / entry.image_path);
    write_flo(pair.flow, root / entry.flow_path);
    store_mask(pair.mask, root / entry.mask_path);

    ordered_json line;
    line["pair_id"] = entry.pair_id;
    line["image_path"] = entry.image_path;
    line["flow_path"] = entry.flow_path;
    line["mask_path"] = entry.mask_path;
    line["provenance"] = entry.provenance;
    line["source_id"] = entry.source_id;
    line["t"] = entry.t;
    lines << line.dump() << '\n';

    ordered_json m;
    m["pair_id"] = id;
    m["generator_id"] = pair.generator_id;
    m["flow_backend_id"] = pair.flow_backend_id;
    m["notes"] = pair.notes;
    meta << m.dump() << '\n';
    manifest.pair_meta[id] = nlohmann::json::parse(m.dump());
    manifest.entries.push_back(std::move(entry));
  }
  if (!lines || !meta) throw Error(ErrorCode::kIoFailure, "short write under " + root.string());
  manifest.rebuild_index();

  ordered_json dataset;
  dataset["pairs"] = manifest.entries.size();
  ordered_json counts = ordered_json::object();
  for (const auto& [name, idx] : manifest.named_sources) counts[name] = idx.size();
  dataset["named_sources"] = counts;
  dataset["created_with"] = created_with;
  exchange::write_json(root / kDatasetFile, dataset);
  return manifest;
}

DatasetManifest load_manifest(const fs::path& root) {
  const fs::path path = root / kManifestFile;
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingFile, path.string());
  DatasetManifest manifest;
  manifest.root = root;
  std::set<std::string> ids;
  std::string text;
  int line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(text);
      ManifestEntry e{j.at("pair_id").get<std::string>(),   j.at("image_path").get<std::string>(),
                      j.at("flow_path").get<std::string>(), j.at("mask_path").get<std::string>(),
                      j.at("provenance").get<std::string>(), j.at("source_id").get<std::string>(),
                      j.at("t").get<int>()};
      Provenance::parse(e.provenance);
      if (!ids.insert(e.pair_id).second) throw Error(ErrorCode::kDuplicatePairId, e.pair_id);
      manifest.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::kInvalidConfig, path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  manifest.rebuild_index();

  std::ifstream meta(root / kMetaFile);
  while (meta && std::getline(meta, text)) {
    if (text.empty()) continue;
    auto j = nlohmann::json::parse(text);
    const auto id = j.at("pair_id").get<std::string>();
    manifest.pair_meta[id] = std::move(j);
  }
  if (fs::exists(root / kDatasetFile)) {
    const auto doc = exchange::read_json(root / kDatasetFile);
    if (doc.contains("created_with")) manifest.created_with = ordered_json::parse(doc["created_with"].dump());
  }
  return manifest;
}

TrainingPair load_pair(const DatasetManifest& manifest, const ManifestEntry& entry) {
  TrainingPair pair;
  pair.image = load_image(manifest.root / entry.image_path);
  pair.flow = read_flo(manifest.root / entry.flow_path);
  pair.mask = load_mask(manifest.root / entry.mask_path, 0.5f);
  pair.source_id = entry.source_id;
  pair.frame_index = entry.t;
  pair.provenance = Provenance::parse(entry.provenance);
  if (const auto it = manifest.pair_meta.find(entry.pair_id); it != manifest.pair_meta.end()) {
    pair.generator_id = it->second.value("generator_id", "");
    pair.flow_backend_id = it->second.value("flow_backend_id", "");
    pair.notes = it->second.value("notes", std::vector<std::string>{});
  }
  if (!pair.is_aligned()) throw Error(ErrorCode::kShapeMismatch, "stored pair " + entry.pair_id + " is misaligned");
  return pair;
}

std::vector<TrainingPair> load_pairs(const DatasetManifest& manifest) {
  std::vector<TrainingPair> pairs;
  pairs.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) pairs.push_back(load_pair(manifest, e));
  return pairs;
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kMissingFile, dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<TrainingPair> ingest_real_video(const fs::path& frames_dir, const fs::path& masks_dir,
                                            const FlowBackend& estimator, const std::string& dataset_name,
                                            SourceReport& report) {
  const auto frames = list_images(frames_dir);
  if (frames.empty()) throw Error(ErrorCode::kEmptyDirectory, frames_dir.string());
  std::map<std::string, fs::path> masks;
  for (const auto& m : list_images(masks_dir)) masks[m.stem().string()] = m;

  const std::string clip = frames_dir.filename().string();
  if (report.source_id.empty()) report.source_id = dataset_name + "/" + clip;
  std::vector<TrainingPair> pairs;
  std::vector<Image> cache(frames.size());
  auto frame = [&](std::size_t k) -> const Image& {
    if (cache[k].empty()) cache[k] = load_image(frames[k]);
    return cache[k];
  };

  for (std::size_t k = 0; k < frames.size(); ++k) {
    const std::string stem = frames[k].stem().string();
    const auto mask_it = masks.find(stem);
    if (mask_it == masks.end()) {
      ++report.skipped;
      report.messages.push_back(std::string(to_string(ErrorCode::kMissingMask)) + ": " + stem);
      continue;
    }
    if (frames.size() < 2) {
      ++report.skipped;
      report.messages.push_back(stem + ": clip has a single frame, no flow partner");
      continue;
    }
    const Image& image = frame(k);
    SaliencyMap mask = load_mask(mask_it->second, 0.5f);
    if (mask.height() != image.height() || mask.width() != image.width()) {
      mask = resize(mask, image.height(), image.width());
      report.messages.push_back(stem + ": mask resized to frame resolution");
    }
    FlowField flow;
    std::vector<std::string> notes;
    try {
      if (k + 1 < frames.size()) {
        flow = estimator.estimate(image, frame(k + 1));
      } else {
        flow = negate(estimator.estimate(image, frame(k - 1)));
        notes.push_back("last_frame=negated_backward_flow");
      }
      if (flow.height() != image.height() || flow.width() != image.width()) {
        throw Error(ErrorCode::kBadResult, "estimated flow has wrong dimensions");
      }
    } catch (const std::exception& e) {
      ++report.skipped;
      report.messages.push_back(stem + ": " + e.what());
      continue;
    }
    ++report.produced;
    record_flow(report, flow);
    auto pair = make_pair(image, std::move(flow), mask, clip + "/" + stem, static_cast<int>(k) + 1,
                          Provenance::real(dataset_name), "video", estimator.id);
    pair.notes = std::move(notes);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

}  // namespace flowsim
