#include "flowsim/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "flowsim/error.hpp"
#include "flowsim/exchange.hpp"
#include "flowsim/flow.hpp"
#include "flowsim/media_io.hpp"
#include "flowsim/pair_factory.hpp"
#include "flowsim/random.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace flowsim::cli {

namespace {

ordered_json generation_to_json(const GenerationConfig& g) {
  ordered_json j;
  j["num_frames"] = g.num_frames;
  j["resolution"] = {g.height, g.width};
  j["sampler_steps"] = g.sampler_steps;
  j["guidance_first"] = g.guidance_first;
  j["guidance_last"] = g.guidance_last;
  j["frame_rate"] = g.frame_rate;
  j["decode_chunk"] = g.decode_chunk;
  return j;
}

GenerationConfig generation_from_json(const json& j) {
  GenerationConfig g;
  g.num_frames = j.at("num_frames").get<int>();
  const auto res = j.at("resolution").get<std::vector<int>>();
  if (res.size() != 2) throw Error(ErrorCode::kInvalidConfig, "generation.resolution must be [h, w]");
  g.height = res[0];
  g.width = res[1];
  g.sampler_steps = j.at("sampler_steps").get<int>();
  g.guidance_first = j.at("guidance_first").get<double>();
  g.guidance_last = j.at("guidance_last").get<double>();
  g.frame_rate = j.at("frame_rate").get<int>();
  g.decode_chunk = j.at("decode_chunk").get<int>();
  return g;
}

ordered_json warp_to_json(const WarpParams& w, bool sampled) {
  ordered_json j;
  j["sampled"] = sampled;
  j["rotation_deg"] = w.rotation_deg;
  j["scale"] = w.scale;
  j["translate"] = {w.translate_x, w.translate_y};
  j["tps_grid"] = w.tps_grid;
  j["tps_jitter"] = w.tps_jitter;
  return j;
}

WarpParams warp_from_json(const json& j) {
  WarpParams w;
  w.rotation_deg = j.at("rotation_deg").get<double>();
  w.scale = j.at("scale").get<double>();
  const auto t = j.at("translate").get<std::vector<double>>();
  if (t.size() != 2) throw Error(ErrorCode::kInvalidConfig, "warp.translate must be [x, y]");
  w.translate_x = t[0];
  w.translate_y = t[1];
  w.tps_grid = j.at("tps_grid").get<int>();
  w.tps_jitter = j.at("tps_jitter").get<double>();
  return w;
}

ordered_json estimator_to_json(const FlowEstimatorConfig& c) {
  ordered_json j;
  j["pyramid_levels"] = c.pyramid_levels;
  j["scale_factor"] = c.scale_factor;
  j["iterations_per_level"] = c.iterations_per_level;
  j["smoothness_weight"] = c.smoothness_weight;
  j["warp_steps_per_level"] = c.warp_steps_per_level;
  return j;
}

FlowEstimatorConfig estimator_from_json(const json& j) {
  FlowEstimatorConfig c;
  c.pyramid_levels = j.at("pyramid_levels").get<int>();
  c.scale_factor = j.at("scale_factor").get<double>();
  c.iterations_per_level = j.at("iterations_per_level").get<int>();
  c.smoothness_weight = j.at("smoothness_weight").get<double>();
  c.warp_steps_per_level = j.at("warp_steps_per_level").get<int>();
  return c;
}

// "name=value" -> {name, value}
std::pair<std::string, std::string> split_assignment(const std::string& text, const std::string& what) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
    throw Error(ErrorCode::kInvalidConfig, what + " must look like name=value, got '" + text + "'");
  }
  return {text.substr(0, eq), text.substr(eq + 1)};
}

std::pair<int, int> parse_size(const std::string& text) {
  int h = 0, w = 0;
  char x = 0;
  std::istringstream in(text);
  if (!(in >> h >> x >> w) || (x != 'x' && x != 'X') || !in.eof()) {
    throw Error(ErrorCode::kInvalidConfig, "size must look like HxW, got '" + text + "'");
  }
  return {h, w};
}

std::optional<fs::path> find_by_stem(const fs::path& dir, const std::string& stem) {
  if (!fs::is_directory(dir)) return std::nullopt;
  for (const auto& p : list_images(dir)) {
    if (p.stem().string() == stem) return p;
  }
  return std::nullopt;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  f << text;
}

void require_dir(const fs::path& dir, const std::string& what) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kMissingFile, what + " directory not found: " + dir.string());
}

// Evenly spaced frame indices ending with T.
std::vector<int> select_frames(int num_frames, int keep) {
  std::vector<int> frames;
  if (keep <= 0 || keep >= num_frames) return frames;
  for (int j = 1; j <= keep; ++j) {
    frames.push_back(static_cast<int>(std::lround(static_cast<double>(j) * num_frames / keep)));
  }
  return frames;
}

ExchangeOptions exchange_options(const PipelineConfig& cfg, const std::string& request_id) {
  ExchangeOptions eo;
  eo.root = cfg.exchange.dir;
  eo.request_id = request_id;
  eo.timeout = std::chrono::milliseconds(static_cast<long long>(cfg.exchange.timeout_seconds * 1000.0));
  return eo;
}

struct CommonFlags {
  std::string config_path;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string backend_dir;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "JSON config file (flags override it)");
  cmd->add_option("--seed", flags.seed, "Global seed");
  cmd->add_option("--workers", flags.workers, "Parallel workers");
  cmd->add_option("--backend-dir", flags.backend_dir, "Exchange directory for external backends");
}

PipelineConfig resolve_config(CLI::App* cmd, const CommonFlags& flags, PipelineConfig base = PipelineConfig()) {
  PipelineConfig cfg = base;
  if (!flags.config_path.empty()) {
    std::ifstream in(flags.config_path);
    if (!in) throw Error(ErrorCode::kMissingFile, "config file " + flags.config_path);
    const json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw Error(ErrorCode::kInvalidConfig, "config file " + flags.config_path + " is not valid JSON");
    cfg = PipelineConfig::from_json(doc, base);
  }
  if (cmd->count("--seed")) cfg.seed = flags.seed;
  if (cmd->count("--workers")) cfg.workers = flags.workers;
  if (cmd->count("--backend-dir")) cfg.exchange.dir = flags.backend_dir;
  return cfg;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string images_dir, masks_dir, out_dir;
  std::string generator = "synthetic";
  std::string estimator = "builtin";
  int frames = 0;
  bool analytic_flow = false;
  int pairs_per_source = 0;
};

struct SourceInput {
  std::string stem;
  Image image;
  SaliencyMap mask;
};

struct SourceResult {
  std::vector<TrainingPair> pairs;
  SourceReport report;
};

SourceResult simulate_source(const SourceInput& src, std::size_t index, const SimulateArgs& args,
                             const PipelineConfig& cfg) {
  SourceResult result;
  result.report.source_id = src.stem;
  const int T = cfg.generation.num_frames;
  const std::uint64_t seed = derive_seed(cfg.seed, index);
  std::optional<AnalyticSequence> analytic;
  FrameSequence seq;
  try {
    if (args.generator == "identity") {
      seq = generate_identity(src.image, T);
      AnalyticSequence a{seq, std::vector<FlowField>(T, FlowField(src.image.height(), src.image.width()))};
      analytic = std::move(a);
    } else if (args.generator == "warp") {
      WarpParams params = cfg.sample_warp ? WarpParams::sample(seed) : cfg.warp;
      analytic = generate_spatial_warp(src.image, params, T);
    } else if (args.generator == "synthetic") {
      Rng rng(seed);
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double speed = rng.uniform(cfg.synthetic.min_foreground_speed, cfg.synthetic.max_foreground_speed);
      const Velocity fg{speed * std::cos(angle), speed * std::sin(angle)};
      const double b = cfg.synthetic.max_background_speed;
      const Velocity bg{rng.uniform(-b, b), rng.uniform(-b, b)};
      analytic = generate_synthetic_scene(src.mask, src.image, fg, bg, T);
    } else {
      GenerationConfig gc = cfg.generation;
      gc.seed = seed;
      const std::string id = "gen_" + exchange::hex_id(exchange::fnv1a(src.stem.data(), src.stem.size(), seed));
      seq = generate_external(src.image, gc, exchange_options(cfg, id));
    }
  } catch (const Error& e) {
    result.report.skipped = T;
    result.report.messages.push_back(std::string("generation failed, all ") + std::to_string(T) +
                                     " frames skipped: " + e.what());
    return result;
  }
  if (analytic) seq = analytic->sequence;

  const auto keep = select_frames(T, cfg.pair_factory.pairs_per_source);
  if (args.analytic_flow && analytic) {
    result.pairs = build_analytic_pairs(src.mask, *analytic, src.stem, result.report, keep);
    return result;
  }
  FlowBackend backend;
  if (args.estimator == "builtin") {
    backend = builtin_flow_backend(cfg.flow_estimation);
  } else {
    const std::string id = "flow_" + exchange::hex_id(exchange::fnv1a(src.stem.data(), src.stem.size(), seed));
    backend = external_flow_backend(exchange_options(cfg, id));
  }
  FinalPairOptions options;
  options.source_id = src.stem;
  options.skip_duplicate_below = cfg.pair_factory.skip_duplicate_below;
  options.frames = keep;
  result.pairs = build_final_pairs(src.image, src.mask, seq, backend, options, result.report);
  return result;
}

int cmd_simulate(const SimulateArgs& args, PipelineConfig cfg, std::ostream& out, std::ostream& err) {
  if (args.frames > 0) cfg.generation.num_frames = args.frames;
  cfg.validate();
  const std::set<std::string> generators{"identity", "warp", "synthetic", "external"};
  if (!generators.count(args.generator)) throw Error(ErrorCode::kInvalidConfig, "unknown generator " + args.generator);
  if (args.estimator != "builtin" && args.estimator != "external") {
    throw Error(ErrorCode::kInvalidConfig, "unknown estimator " + args.estimator);
  }
  if ((args.generator == "external" || args.estimator == "external") && cfg.exchange.dir.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "external backends need --backend-dir or exchange.dir");
  }
  require_dir(args.images_dir, "images");
  require_dir(args.masks_dir, "masks");
  const auto images = list_images(args.images_dir);
  if (images.empty()) throw Error(ErrorCode::kEmptyDirectory, "no images in " + args.images_dir);

  std::vector<SourceInput> sources;
  for (const auto& path : images) {
    const std::string stem = path.stem().string();
    const auto mask_path = find_by_stem(args.masks_dir, stem);
    if (!mask_path) throw Error(ErrorCode::kMissingMask, "no mask for " + path.string());
    SourceInput src{stem, load_image(path), load_mask(*mask_path)};
    if (src.mask.height() != src.image.height() || src.mask.width() != src.image.width()) {
      throw Error(ErrorCode::kDimensionMismatch, "mask " + mask_path->string() + " does not match its image");
    }
    sources.push_back(std::move(src));
  }

  std::vector<SourceResult> results(sources.size());
  parallel_for(static_cast<int>(sources.size()), cfg.workers,
               [&](int i) { results[i] = simulate_source(sources[i], i, args, cfg); });

  BuildReport report;
  std::vector<TrainingPair> pairs;
  for (auto& r : results) {
    for (const auto& m : r.report.messages) err << "warning: " << r.report.source_id << ": " << m << '\n';
    report.sources.push_back(r.report);
    for (auto& p : r.pairs) pairs.push_back(std::move(p));
  }

  ordered_json created_with;
  created_with["command"] = "simulate";
  created_with["generator"] = args.generator;
  created_with["estimator"] = args.analytic_flow ? "analytic" : args.estimator;
  created_with["config"] = cfg.to_json();

  fs::create_directories(args.out_dir);
  ordered_json report_doc = report.to_json();
  report_doc["created_with"] = created_with;
  write_text(fs::path(args.out_dir) / "build_report.json", report_doc.dump(2) + "\n");
  if (pairs.empty()) {
    err << "error: no pairs produced (" << report.total_skipped() << " frames skipped)\n";
    return 1;
  }
  materialize_dataset(pairs, args.out_dir, created_with);
  out << "produced " << report.total_produced() << " pairs, skipped " << report.total_skipped()
      << ", mean flow magnitude " << report.mean_flow_magnitude() << " px\n";
  return 0;
}

// ----------------------------------------------------------- build-dataset

struct BuildArgs {
  std::string frames_root, masks_root, out_dir;
  std::string name = "video";
  std::string estimator = "builtin";
};

int cmd_build_dataset(const BuildArgs& args, PipelineConfig cfg, std::ostream& out, std::ostream& err) {
  cfg.validate();
  if (args.estimator != "builtin" && args.estimator != "external") {
    throw Error(ErrorCode::kInvalidConfig, "unknown estimator " + args.estimator);
  }
  if (args.estimator == "external" && cfg.exchange.dir.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "external backends need --backend-dir or exchange.dir");
  }
  require_dir(args.frames_root, "frames");
  require_dir(args.masks_root, "masks");

  std::vector<std::pair<fs::path, fs::path>> clips;
  if (!list_images(args.frames_root).empty()) {
    clips.emplace_back(args.frames_root, args.masks_root);
  } else {
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(args.frames_root)) {
      if (entry.is_directory()) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) clips.emplace_back(d, fs::path(args.masks_root) / d.filename());
  }
  if (clips.empty()) throw Error(ErrorCode::kEmptyDirectory, "no clips in " + args.frames_root);

  std::vector<SourceResult> results(clips.size());
  parallel_for(static_cast<int>(clips.size()), cfg.workers, [&](int i) {
    const auto& [frames_dir, masks_dir] = clips[i];
    auto& r = results[i];
    r.report.source_id = args.name + "/" + frames_dir.filename().string();
    FlowBackend backend;
    if (args.estimator == "builtin") {
      backend = builtin_flow_backend(cfg.flow_estimation);
    } else {
      const std::string clip = frames_dir.filename().string();
      backend = external_flow_backend(
          exchange_options(cfg, "flow_" + exchange::hex_id(exchange::fnv1a(clip.data(), clip.size(), cfg.seed))));
    }
    try {
      if (!fs::is_directory(masks_dir)) throw Error(ErrorCode::kMissingMask, "no mask directory " + masks_dir.string());
      r.pairs = ingest_real_video(frames_dir, masks_dir, backend, args.name, r.report);
    } catch (const Error& e) {
      r.report.skipped += static_cast<int>(list_images(frames_dir).size());
      r.report.messages.push_back(std::string("clip skipped: ") + e.what());
    }
  });

  BuildReport report;
  std::vector<TrainingPair> pairs;
  for (auto& r : results) {
    for (const auto& m : r.report.messages) err << "warning: " << r.report.source_id << ": " << m << '\n';
    report.sources.push_back(r.report);
    for (auto& p : r.pairs) pairs.push_back(std::move(p));
  }
  ordered_json created_with;
  created_with["command"] = "build-dataset";
  created_with["dataset"] = args.name;
  created_with["estimator"] = args.estimator;
  created_with["config"] = cfg.to_json();

  fs::create_directories(args.out_dir);
  ordered_json report_doc = report.to_json();
  report_doc["created_with"] = created_with;
  write_text(fs::path(args.out_dir) / "build_report.json", report_doc.dump(2) + "\n");
  if (pairs.empty()) {
    err << "error: no pairs produced (" << report.total_skipped() << " frames skipped)\n";
    return 1;
  }
  materialize_dataset(pairs, args.out_dir, created_with);
  out << "produced " << report.total_produced() << " pairs from " << clips.size() << " clips, skipped "
      << report.total_skipped() << '\n';
  return 0;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::vector<std::string> sources;
  std::vector<std::string> mixture;
  std::string out_dir;
  std::string init_checkpoint;
  bool desk = false;
  int steps = 0;
  int batch = 0;
  double lr = -1.0;
  std::string size;
  bool verbose = false;
};

int cmd_train(CLI::App* cmd, const TrainArgs& args, PipelineConfig cfg, std::ostream& out, std::ostream& err) {
  if (cmd->count("--steps")) cfg.training.max_steps = args.steps;
  if (cmd->count("--batch")) cfg.training.batch_size = args.batch;
  if (cmd->count("--lr")) cfg.training.learning_rate = args.lr;
  if (!args.size.empty()) std::tie(cfg.training.input_height, cfg.training.input_width) = parse_size(args.size);
  cfg.training.seed = cfg.seed;
  if (!args.mixture.empty()) {
    cfg.training.mixture.clear();
    for (const auto& m : args.mixture) {
      const auto [name, value] = split_assignment(m, "--mixture");
      try {
        cfg.training.mixture[name] = std::stod(value);
      } catch (const std::exception&) {
        throw Error(ErrorCode::kInvalidConfig, "bad mixture weight '" + value + "'");
      }
    }
  }
  cfg.segnet.input_height = cfg.training.input_height;
  cfg.segnet.input_width = cfg.training.input_width;
  cfg.validate();

  std::map<std::string, DatasetManifest> manifests;
  for (const auto& s : args.sources) {
    std::string name, path;
    if (s.find('=') != std::string::npos) {
      std::tie(name, path) = split_assignment(s, "source");
    } else {
      path = s;
      name = fs::path(s).lexically_normal().filename().string();
    }
    if (manifests.count(name)) throw Error(ErrorCode::kInvalidConfig, "source '" + name + "' given twice");
    manifests[name] = load_manifest(path);
  }
  if (cfg.training.mixture.empty()) {
    for (const auto& [name, m] : manifests) cfg.training.mixture[name] = 1.0;
  }
  std::map<std::string, std::size_t> sizes;
  for (const auto& [name, m] : manifests) sizes[name] = m.entries.size();
  for (const auto& [name, w] : cfg.training.mixture) {
    if (!sizes.count(name)) throw Error(ErrorCode::kInvalidConfig, "mixture names unknown source '" + name + "'");
  }
  train::MixtureSampler probe(sizes, cfg.training.mixture, 0);  // EmptySource before any work
  std::optional<net::TwoStreamNet> init;
  if (!args.init_checkpoint.empty()) {
    init = net::load_checkpoint(args.init_checkpoint);
    const auto& c = (*init)->config();
    if (c.input_height != cfg.training.input_height || c.input_width != cfg.training.input_width) {
      throw Error(ErrorCode::kInvalidConfig, "initial checkpoint input size differs from the training size");
    }
    cfg.segnet = c;
  }

  std::map<std::string, DatasetManifest> used;
  for (const auto& [name, w] : cfg.training.mixture) {
    if (w > 0.0) used[name] = manifests[name];
  }
  const auto pools = train::load_pools(used, cfg.training.input_height, cfg.training.input_width);

  fs::create_directories(args.out_dir);
  ordered_json effective;
  effective["command"] = "train";
  effective["sources"] = args.sources;
  effective["config"] = cfg.to_json();
  write_text(fs::path(args.out_dir) / "config.json", effective.dump(2) + "\n");

  train::TrainOptions options;
  options.out_dir = fs::path(args.out_dir);
  options.quiet = !args.verbose;
  options.checkpoint_extra["created_with"] = effective;
  const auto result = init ? train::train(*init, cfg.training, pools, options)
                           : train::train(cfg.segnet, cfg.training, pools, options);
  out << "trained " << cfg.training.max_steps << " steps";
  if (!result.log.empty()) out << ", final loss " << result.log.back().loss;
  out << "\ncomposition:";
  for (const auto& [name, f] : result.composition) out << ' ' << name << '=' << f;
  out << "\ncheckpoint: " << (fs::path(args.out_dir) / "checkpoint_final.bin").string() << '\n';
  if (result.max_composition_deviation > 0.02) {
    err << "warning: source composition deviates from the mixture by " << result.max_composition_deviation << '\n';
  }
  return 0;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint, frames_dir, flows_dir, gt_dir;
  std::string report;
  std::string dataset;
  std::string save_predictions;
  bool oracle_bypass = false;
};

int cmd_eval(const EvalArgs& args, PipelineConfig cfg, std::ostream& out, std::ostream& err) {
  cfg.validate();
  require_dir(args.gt_dir, "ground-truth");
  if (!args.oracle_bypass) {
    require_dir(args.frames_dir, "frames");
    require_dir(args.flows_dir, "flows");
  }
  const auto gt_files = list_images(args.gt_dir);
  if (gt_files.empty()) throw Error(ErrorCode::kEmptyDirectory, "no ground truth in " + args.gt_dir);
  std::optional<net::TwoStreamNet> model;
  if (!args.oracle_bypass) {
    if (!fs::exists(args.checkpoint)) throw Error(ErrorCode::kMissingFile, "checkpoint " + args.checkpoint);
    model = net::load_checkpoint(args.checkpoint);
    (*model)->eval();
  }
  if (!args.save_predictions.empty()) fs::create_directories(args.save_predictions);

  const std::string dataset =
      args.dataset.empty() ? fs::path(args.gt_dir).lexically_normal().parent_path().filename().string() : args.dataset;
  std::vector<metrics::FrameScore> frames(gt_files.size());
  std::vector<std::optional<SaliencyMap>> predictions(gt_files.size());
  std::vector<std::string> warnings(gt_files.size());
  std::vector<SaliencyMap> gts;
  for (const auto& g : gt_files) gts.push_back(load_mask(g));

  // Inference runs in order on one thread; scoring runs on the pool.
  for (std::size_t i = 0; i < gt_files.size(); ++i) {
    const std::string stem = gt_files[i].stem().string();
    if (args.oracle_bypass) {
      predictions[i] = gts[i];
      continue;
    }
    const auto frame = find_by_stem(args.frames_dir, stem);
    const fs::path flow_path = fs::path(args.flows_dir) / (stem + ".flo");
    if (!frame) {
      warnings[i] = "missing frame for " + stem;
      continue;
    }
    if (!fs::exists(flow_path)) {
      warnings[i] = "missing flow " + flow_path.string();
      continue;
    }
    try {
      const auto pred = net::predict(*model, load_image(*frame), read_flo(flow_path));
      SaliencyMap p = pred.as_saliency();
      if (!p.values.same_shape(gts[i].values)) p.values = resize(p.values, gts[i].height(), gts[i].width());
      predictions[i] = std::move(p);
    } catch (const Error& e) {
      warnings[i] = stem + ": " + e.what();
    }
  }
  parallel_for(static_cast<int>(gt_files.size()), cfg.workers, [&](int i) {
    const std::string stem = gt_files[i].stem().string();
    frames[i] = predictions[i] ? metrics::score_frame(stem, *predictions[i], gts[i]) : metrics::worst_case_frame(stem);
  });
  for (const auto& w : warnings) {
    if (!w.empty()) err << "warning: " << w << " (frame scored worst-case)\n";
  }
  if (!args.save_predictions.empty()) {
    for (std::size_t i = 0; i < gt_files.size(); ++i) {
      if (predictions[i]) store_mask(*predictions[i], fs::path(args.save_predictions) / (gt_files[i].stem().string() + ".png"));
    }
  }

  const auto report = metrics::summarize(dataset, frames);
  metrics::write_table(out, {report});
  if (!args.report.empty()) {
    const fs::path prefix(args.report);
    if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
    std::ofstream table(prefix.string() + ".txt", std::ios::trunc);
    std::ofstream lines(prefix.string() + ".jsonl", std::ios::trunc);
    if (!table || !lines) throw Error(ErrorCode::kIoFailure, "cannot write report " + prefix.string());
    metrics::write_table(table, {report});
    metrics::write_jsonl(lines, {report});
    ordered_json provenance;
    provenance["config"] = cfg.to_json();
    provenance["checkpoint"] = args.oracle_bypass ? "oracle-bypass" : args.checkpoint;
    lines << provenance.dump() << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------- viz-flow

int cmd_viz_flow(const std::string& flo_path, const std::string& out_png, std::optional<float> max_magnitude,
                 std::ostream& out) {
  if (max_magnitude && !(*max_magnitude > 0.0f)) {
    throw Error(ErrorCode::kInvalidConfig, "--max-magnitude must be positive");
  }
  FlowField flow;
  try {
    flow = read_flo(flo_path);
  } catch (const Error& e) {
    if (std::string(e.what()).find(flo_path) != std::string::npos) throw;
    throw Error(e.code(), flo_path + ": " + e.what());
  }
  store_image(colorize(flow, max_magnitude), out_png);
  const auto stats = flow_stats(flow);
  out << "wrote " << out_png << " (max magnitude " << stats.max_mag << " px)\n";
  return 0;
}

}  // namespace

// ------------------------------------------------------------------ config

void PipelineConfig::validate() const {
  generation.validate();
  warp.validate();
  flow_estimation.validate();
  segnet.validate();
  training.validate();
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidConfig, what); };
  if (synthetic.min_foreground_speed < 0.0 || synthetic.max_foreground_speed < synthetic.min_foreground_speed) {
    fail("synthetic: need 0 <= min_foreground_speed <= max_foreground_speed");
  }
  if (synthetic.max_background_speed < 0.0) fail("synthetic: max_background_speed must be >= 0");
  if (pair_factory.pairs_per_source < 0) fail("pair_factory: pairs_per_source must be >= 0");
  if (pair_factory.skip_duplicate_below < 0.0) fail("pair_factory: skip_duplicate_below must be >= 0");
  if (exchange.timeout_seconds <= 0.0) fail("exchange: timeout_seconds must be positive");
  if (workers < 1) fail("workers must be >= 1");
}

ordered_json PipelineConfig::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["generation"] = generation_to_json(generation);
  j["warp"] = warp_to_json(warp, sample_warp);
  j["synthetic"] = {{"min_foreground_speed", synthetic.min_foreground_speed},
                    {"max_foreground_speed", synthetic.max_foreground_speed},
                    {"max_background_speed", synthetic.max_background_speed}};
  j["flow_estimation"] = estimator_to_json(flow_estimation);
  j["pair_factory"] = {{"skip_duplicate_below", pair_factory.skip_duplicate_below},
                       {"pairs_per_source", pair_factory.pairs_per_source}};
  j["segnet"] = segnet.to_json();
  j["training"] = training.to_json();
  j["metrics"] = {{"beta_squared", metrics::kBetaSquared},
                  {"alpha", metrics::kDefaultAlpha},
                  {"thresholds", metrics::kNumThresholds}};
  j["exchange"] = {{"dir", exchange.dir}, {"timeout_seconds", exchange.timeout_seconds}};
  return j;
}

PipelineConfig PipelineConfig::from_json(const json& patch, PipelineConfig base) {
  if (!patch.is_object()) throw Error(ErrorCode::kInvalidConfig, "config must be a JSON object");
  json merged = json::parse(base.to_json().dump());
  merged.merge_patch(patch);
  PipelineConfig c = base;
  try {
    c.seed = merged.at("seed").get<std::uint64_t>();
    if (patch.contains("workers")) c.workers = patch.at("workers").get<int>();
    c.generation = generation_from_json(merged.at("generation"));
    c.warp = warp_from_json(merged.at("warp"));
    c.sample_warp = merged.at("warp").at("sampled").get<bool>();
    const auto& syn = merged.at("synthetic");
    c.synthetic.min_foreground_speed = syn.at("min_foreground_speed").get<double>();
    c.synthetic.max_foreground_speed = syn.at("max_foreground_speed").get<double>();
    c.synthetic.max_background_speed = syn.at("max_background_speed").get<double>();
    c.flow_estimation = estimator_from_json(merged.at("flow_estimation"));
    c.pair_factory.skip_duplicate_below = merged.at("pair_factory").at("skip_duplicate_below").get<double>();
    c.pair_factory.pairs_per_source = merged.at("pair_factory").at("pairs_per_source").get<int>();
    c.segnet = net::NetworkConfig::from_json(merged.at("segnet"));
    // Mixture entries replace rather than merge.
    json training = merged.at("training");
    if (patch.contains("training") && patch["training"].contains("mixture")) {
      training["mixture"] = patch["training"]["mixture"];
    }
    c.training = train::TrainConfig::from_json(training, base.training);
    c.exchange.dir = merged.at("exchange").at("dir").get<std::string>();
    c.exchange.timeout_seconds = merged.at("exchange").at("timeout_seconds").get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("config: ") + e.what());
  }
  return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingFile, "config file " + path);
  const json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::kInvalidConfig, "config file " + path + " is not valid JSON");
  return from_json(doc, PipelineConfig());
}

void parallel_for(int count, int workers, const std::function<void(int)>& job) {
  const int n = std::max(1, std::min(workers, count));
  if (n == 1) {
    for (int i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> threads;
  for (int t = 0; t < n; ++t) {
    threads.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

// --------------------------------------------------------------------- run

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Training-pair simulation and two-stream saliency toolkit", "flowsim"};
  app.require_subcommand(1);

  CommonFlags sim_flags;
  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Simulate (image, flow, mask) pairs from still images");
  simulate->add_option("images_dir", sim.images_dir)->required();
  simulate->add_option("masks_dir", sim.masks_dir)->required();
  simulate->add_option("out_dir", sim.out_dir)->required();
  simulate->add_option("--generator", sim.generator, "identity|warp|synthetic|external")->capture_default_str();
  simulate->add_option("--estimator", sim.estimator, "builtin|external")->capture_default_str();
  simulate->add_option("--frames", sim.frames, "Frames per source (T)");
  simulate->add_flag("--analytic-flow", sim.analytic_flow, "Use the generator's exact flow when it has one");
  simulate->add_option("--pairs-per-source", sim.pairs_per_source, "Keep K evenly spaced frames per source");
  add_common(simulate, sim_flags);

  CommonFlags build_flags;
  BuildArgs build;
  auto* build_dataset = app.add_subcommand("build-dataset", "Turn annotated video clips into training pairs");
  build_dataset->add_option("frames_root", build.frames_root)->required();
  build_dataset->add_option("masks_root", build.masks_root)->required();
  build_dataset->add_option("out_dir", build.out_dir)->required();
  build_dataset->add_option("--name", build.name, "Dataset name recorded in provenance")->capture_default_str();
  build_dataset->add_option("--estimator", build.estimator, "builtin|external")->capture_default_str();
  add_common(build_dataset, build_flags);

  CommonFlags train_flags;
  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the two-stream network on named datasets");
  train_cmd->add_option("sources", tr.sources, "name=dataset_dir (or dataset_dir)")->required();
  train_cmd->add_option("--mixture", tr.mixture, "name=weight, repeatable");
  train_cmd->add_option("--out", tr.out_dir, "Output directory")->required();
  train_cmd->add_flag("--desk", tr.desk, "Start from the small CPU preset (128x128, batch 2, LR 1e-3)");
  train_cmd->add_option("--steps", tr.steps);
  train_cmd->add_option("--batch", tr.batch);
  train_cmd->add_option("--lr", tr.lr);
  train_cmd->add_option("--size", tr.size, "Input size HxW");
  train_cmd->add_option("--init", tr.init_checkpoint, "Continue from a checkpoint");
  train_cmd->add_flag("--verbose", tr.verbose);
  add_common(train_cmd, train_flags);

  CommonFlags eval_flags;
  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Predict and score saliency maps");
  eval->add_option("checkpoint", ev.checkpoint)->required();
  eval->add_option("frames_dir", ev.frames_dir)->required();
  eval->add_option("flows_dir", ev.flows_dir)->required();
  eval->add_option("gt_dir", ev.gt_dir)->required();
  eval->add_option("--report", ev.report, "Writes <report>.txt and <report>.jsonl");
  eval->add_option("--dataset", ev.dataset, "Dataset name in the report");
  eval->add_option("--save-predictions", ev.save_predictions, "Directory for predicted maps");
  eval->add_flag("--oracle-bypass", ev.oracle_bypass, "Score the ground truth against itself");
  add_common(eval, eval_flags);

  std::string flo_path, png_path;
  float max_magnitude = 0.0f;
  auto* viz = app.add_subcommand("viz-flow", "Render a .flo file with the Middlebury color wheel");
  viz->add_option("flo_path", flo_path)->required();
  viz->add_option("out_png", png_path)->required();
  viz->add_option("--max-magnitude", max_magnitude, "Fixed normalization for comparable colors");

  std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    if (auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
      err << sub->help();
    }
    return 2;
  }

  try {
    if (simulate->parsed()) {
      PipelineConfig cfg = resolve_config(simulate, sim_flags);
      if (simulate->count("--pairs-per-source")) cfg.pair_factory.pairs_per_source = sim.pairs_per_source;
      return cmd_simulate(sim, cfg, out, err);
    }
    if (build_dataset->parsed()) return cmd_build_dataset(build, resolve_config(build_dataset, build_flags), out, err);
    if (train_cmd->parsed()) {
      PipelineConfig base;
      if (tr.desk) base.training = train::TrainConfig::desk();
      return cmd_train(train_cmd, tr, resolve_config(train_cmd, train_flags, base), out, err);
    }
    if (eval->parsed()) return cmd_eval(ev, resolve_config(eval, eval_flags), out, err);
    if (viz->parsed()) {
      return cmd_viz_flow(flo_path, png_path,
                          viz->count("--max-magnitude") ? std::optional<float>(max_magnitude) : std::nullopt, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace flowsim::cli
