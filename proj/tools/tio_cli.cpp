#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tio/bench.hpp"
#include "tio/config.hpp"
#include "tio/dataset.hpp"
#include "tio/detector.hpp"
#include "tio/eval.hpp"
#include "tio/image_io.hpp"
#include "tio/manifest.hpp"
#include "tio/net.hpp"
#include "tio/odometry.hpp"
#include "tio/settings.hpp"
#include "tio/sim.hpp"
#include "tio/training.hpp"

namespace fs = std::filesystem;
using namespace tio;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kData = 3, kNumerical = 4 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Keys owned by the tool itself, with their defaults.
Config toolDefaults() {
  Config c;
  c.set("detect.threshold", 0.01);
  c.set("detect.nms", 8);
  c.set("detect.max_points", 500);

  c.set("train.steps", 1000);
  c.set("train.batch_size", 4);
  c.set("train.crop", 64);
  c.set("train.learning_rate", 1e-3);
  c.set("train.optimizer", "adam");
  c.set("train.descriptor", true);
  c.set("train.frame_stride", 1);
  c.set("train.augment.gain", Eigen::VectorXd(Eigen::Vector2d(0.7, 1.4)));
  c.set("train.augment.offset", Eigen::VectorXd(Eigen::Vector2d(-2000.0, 2000.0)));
  c.set("train.augment.fpn_probability", 0.5);
  c.set("train.augment.fpn_amplitude", 400.0);
  c.set("train.augment.noise_sigma", 20.0);
  c.set("train.homography.rotation", 0.15);
  c.set("train.homography.scale", 0.1);
  c.set("train.homography.perspective", 0.0005);
  c.set("train.homography.translation", 0.05);

  c.set("repeatability.detector", "auto");
  c.set("repeatability.pairs", 100);
  c.set("repeatability.max_points", 500);
  c.set("repeatability.nms_radius", 8);
  c.set("repeatability.epsilon", 3.0);
  c.set("repeatability.threshold", 0.01);
  c.set("repeatability.noise_sigma", 20.0);
  c.set("repeatability.homography.rotation", 0.1);
  c.set("repeatability.homography.scale", 0.1);
  c.set("repeatability.homography.perspective", 0.0005);
  c.set("repeatability.homography.translation", 0.05);

  c.set("ate.max_dt", 0.01);
  c.set("rpe.delta", 1);
  c.set("rpe.seconds", 0.0);

  c.set("bench.repeatability_pairs", 10);
  return c;
}

Config moduleDefaults() {
  const BenchConfig b = BenchConfig::defaults();
  Config c = simToConfig(b.sim);
  c.merge(trajectoryToConfig(b.trajectory));
  c.merge(roomToConfig(b.room));
  c.merge(odometryToConfig(b.odometry));
  c.merge(toolDefaults());
  return c;
}

std::set<std::string> knownKeys() {
  std::set<std::string> keys = moduleKeys();
  const Config tool = toolDefaults();
  for (const auto& [k, v] : tool.entries()) keys.insert(k);
  return keys;
}

struct Common {
  std::string config;
  std::uint64_t seed = 1;
  std::string out;
  std::vector<std::string> sets;
  Config flags;  // subcommand flags mapped onto config keys
};

void addCommon(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Config file of key = value lines")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Random seed");
  app->add_option("--out", c.out, "Output directory")->required();
  app->add_option("--set", c.sets, "Override a config key: key=value");
}

// Registers a flag that writes `key` when given.
template <typename T>
void keyOption(CLI::App* app, const std::string& name, const std::string& key, Common& c, const std::string& help) {
  app->add_option_function<T>(
         name,
         [&c, key](const T& v) {
           std::ostringstream s;
           if constexpr (std::is_floating_point_v<T>) s << formatDouble(v);
           else s << v;
           c.flags.set(key, s.str());
         },
         help + " (" + key + ")");
}

// Camera and IMU keys recorded by the simulator for a dataset directory.
Config datasetSettings(const fs::path& dir) {
  Config out;
  if (!fs::exists(dir / "sim_manifest")) return out;
  const Config m = Config::load(dir / "sim_manifest");
  for (const auto& [k, v] : m.entries())
    if (k.rfind("camera.", 0) == 0 || k.rfind("imu.", 0) == 0) out.set(k, v);
  return out;
}

// defaults < dataset < file < --set < flags
Config resolve(const Common& c, const Config& dataset = {}) {
  Config r = moduleDefaults();
  r.merge(dataset);
  if (!c.config.empty()) r.merge(Config::load(c.config));
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
    auto trim = [](std::string v) {
      v.erase(0, v.find_first_not_of(" \t"));
      v.erase(v.find_last_not_of(" \t") + 1);
      return v;
    };
    r.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  r.merge(c.flags);
  r.requireKnown(knownKeys());
  return r;
}

BenchConfig benchConfig(const Config& c) {
  BenchConfig b = BenchConfig::defaults();
  applyConfig(c, b.sim);
  applyConfig(c, b.trajectory);
  applyConfig(c, b.room);
  applyConfig(c, b.odometry);
  b.repeatability_pairs = c.getInt("bench.repeatability_pairs", b.repeatability_pairs);
  return b;
}

OdometryConfig odometryConfig(const Config& c) {
  OdometryConfig o = BenchConfig::defaults().odometry;
  applyConfig(c, o);
  return o;
}

std::string joinArgs(int argc, char** argv) {
  std::string s;
  for (int i = 1; i < argc; ++i) s += (i > 1 ? " " : "") + std::string(argv[i]);
  return s;
}

struct Run {
  std::string command;
  Config config;
  fs::path out;

  void start(const Common& c, const std::vector<fs::path>& inputs) {
    for (const auto& p : inputs)
      if (!fs::exists(p)) throw IoError(p.string() + ": no such file or directory");
    RunManifest m;
    m.command = command;
    m.config = config;
    m.inputs = inputs;
    m.output = out;
    m.seed = c.seed;
    m.input_hash = contentHash(inputs);
    m.write();
  }
};

void writeText(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

std::vector<RadiometricImage> loadFrames(const fs::path& dir, int stride = 1) {
  const auto index = readFrameIndex(dir);
  std::vector<RadiometricImage> frames;
  for (std::size_t i = 0; i < index.size(); i += static_cast<std::size_t>(stride))
    frames.push_back(readImage(dir / index[i].filename, index[i].timestamp));
  if (frames.empty()) throw IoError(dir.string() + ": no frames");
  return frames;
}

std::optional<NetworkWeights> maybeWeights(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return loadWeights(path);
}

std::vector<fs::path> withOptional(std::vector<fs::path> inputs, const std::string& extra) {
  if (!extra.empty()) inputs.emplace_back(extra);
  return inputs;
}

// ---- timing samples ---------------------------------------------------------

std::string timingSamplesCsv(const TimingLog& log) {
  std::string s = "stage,seconds\n";
  for (const auto& [stage, values] : log.samples())
    for (double v : values) s += stage + "," + formatDouble(v) + "\n";
  return s;
}

TimingLog readTimingSamples(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "stage,seconds")
    throw IoError(path.string() + ": expected header stage,seconds");
  TimingLog log;
  int n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument("missing comma");
      std::size_t used = 0;
      const std::string value = line.substr(comma + 1);
      const double v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument("trailing text");
      log.record(line.substr(0, comma), v);
    } catch (const std::exception&) {
      throw IoError(path.string() + ":" + std::to_string(n) + ": malformed timing sample");
    }
  }
  return log;
}

// ---- subcommands --------------------------------------------------------------

void runSimulate(Run& run, const Common& c) {
  const BenchConfig b = benchConfig(run.config);
  run.start(c, {});
  const SceneModel scene = makeRoomScene(b.room, c.seed);
  const SequenceSummary s = generateSequence(scene, b.trajectory, b.sim, c.seed, run.out);
  std::cout << "wrote " << s.frames_written << " frames (" << s.frames_suspended << " suspended), " << s.imu_samples
            << " IMU samples to " << run.out.string() << "\n";
}

void runTrain(Run& run, const Common& c, const std::vector<std::string>& data, const std::string& base,
              const std::string& fpn_bank) {
  const Config& k = run.config;
  DetectorTrainingConfig cfg;
  cfg.steps = k.getInt("train.steps", cfg.steps);
  cfg.batch_size = k.getInt("train.batch_size", cfg.batch_size);
  cfg.crop = k.getInt("train.crop", cfg.crop);
  cfg.train.learning_rate = k.getDouble("train.learning_rate", cfg.train.learning_rate);
  const std::string opt = k.getString("train.optimizer", "adam");
  if (opt == "adam") cfg.train.optimizer = Optimizer::kAdam;
  else if (opt == "gd") cfg.train.optimizer = Optimizer::kGradientDescent;
  else throw ConfigError("config key train.optimizer: expected adam or gd, got '" + opt + "'");
  cfg.train.train_descriptor = k.getBool("train.descriptor", true);
  const Eigen::VectorXd gain = k.getVector("train.augment.gain", Eigen::Vector2d(1.0, 1.0));
  const Eigen::VectorXd offset = k.getVector("train.augment.offset", Eigen::Vector2d(0.0, 0.0));
  cfg.train.augment.gain = {gain(0), gain(1)};
  cfg.train.augment.offset = {offset(0), offset(1)};
  cfg.train.augment.fpn_probability = k.getDouble("train.augment.fpn_probability", 0.0);
  cfg.train.augment.fpn_amplitude = k.getDouble("train.augment.fpn_amplitude", 400.0);
  cfg.train.augment.noise_sigma = k.getDouble("train.augment.noise_sigma", 0.0);
  cfg.train.homography = {k.getDouble("train.homography.rotation", 0.0), k.getDouble("train.homography.scale", 0.0),
                          k.getDouble("train.homography.perspective", 0.0),
                          k.getDouble("train.homography.translation", 0.0)};
  const int stride = k.getInt("train.frame_stride", 1);
  if (stride < 1) throw ConfigError("config key train.frame_stride: must be at least 1");
  cfg.validate();

  std::vector<fs::path> inputs(data.begin(), data.end());
  inputs = withOptional(inputs, base);
  inputs = withOptional(inputs, fpn_bank);
  run.start(c, inputs);

  const auto base_weights = maybeWeights(base);
  std::optional<FpnBank> bank;
  if (!fpn_bank.empty()) bank = loadFpnBank(fpn_bank);
  std::vector<LabeledImage> corpus;
  for (const auto& d : data)
    for (auto& img : loadFrames(d, stride)) {
      LabelMap label = generatePseudoLabels(img, base_weights ? &*base_weights : nullptr);
      corpus.push_back({std::move(img), std::move(label)});
    }

  std::string log = "step,detector,descriptor,total,diverged\n";
  int diverged = 0;
  const NetworkWeights initial = base_weights ? *base_weights : makeThermalPointNet(c.seed);
  const NetworkWeights w = trainDetector(initial, corpus, cfg, c.seed, bank ? &*bank : nullptr,
                                         [&](int step, const StepReport& r) {
                                           diverged += r.diverged;
                                           log += std::to_string(step) + "," + formatDouble(r.loss.detector) + "," +
                                                  formatDouble(r.loss.descriptor) + "," + formatDouble(r.loss.total) +
                                                  "," + (r.diverged ? "1" : "0") + "\n";
                                           if ((step + 1) % 100 == 0)
                                             std::cout << "step " << step + 1 << " loss " << r.loss.total << "\n";
                                         });
  if (cfg.steps > 0 && diverged == cfg.steps) throw NumericalError("every training step diverged");
  writeText(run.out / "train_log.csv", log);
  saveWeights(run.out / "weights.tpnw", w);
  std::cout << "wrote " << (run.out / "weights.tpnw").string() << "\n";
}

std::vector<Keypoint> detectWith(const std::optional<NetworkWeights>& w, const RadiometricImage& img, double threshold,
                                 int nms, int max_points) {
  if (w) return decodeKeypoints(detect(*w, img, false).heatmap, threshold, nms, max_points);
  SalientPointConfig sc;
  sc.nms_radius = nms;
  sc.max_points = max_points;
  return salientPoints(img, sc);
}

void runDetect(Run& run, const Common& c, const std::string& data, const std::string& weights) {
  const double threshold = run.config.getDouble("detect.threshold", 0.01);
  const int nms = run.config.getInt("detect.nms", 8);
  const int max_points = run.config.getInt("detect.max_points", 500);
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("config key detect.threshold: must be in (0,1)");
  if (nms < 0 || max_points < 0) throw ConfigError("config keys detect.nms and detect.max_points must be non-negative");
  run.start(c, withOptional({data}, weights));
  const auto w = maybeWeights(weights);
  const auto frames = loadFrames(data);
  std::string csv = "frame,x,y,score\n";
  for (std::size_t i = 0; i < frames.size(); ++i)
    for (const auto& k : detectWith(w, frames[i], threshold, nms, max_points))
      csv += std::to_string(i) + "," + formatDouble(k.position.x()) + "," + formatDouble(k.position.y()) + "," +
             formatDouble(k.score) + "\n";
  writeText(run.out / "keypoints.csv", csv);
}

void runTrack(Run& run, const Common& c, const std::string& data, const std::string& weights) {
  const OdometryConfig cfg = odometryConfig(run.config);
  run.start(c, withOptional({data}, weights));
  const auto w = maybeWeights(weights);
  const Dataset d = loadDataset(data);
  const InitResult init = initializeFromStatic(d.imu, cfg.imu.gravity, cfg.init_window);
  Frontend frontend(cfg, d.imu, init.state.bg, w ? &*w : nullptr);
  std::string csv = "frame,track_id,x,y\n";
  for (std::size_t i = 0; i < d.frames.size(); ++i) {
    const FramePacket p = frontend.process(d.frame(i), static_cast<int>(i));
    for (const auto& [id, px] : p.features)
      csv += std::to_string(i) + "," + std::to_string(id) + "," + formatDouble(px.x()) + "," + formatDouble(px.y()) + "\n";
  }
  writeText(run.out / "tracks.csv", csv);
}

void runOdometryCommand(Run& run, const Common& c, const std::string& data, const std::string& weights) {
  const OdometryConfig cfg = odometryConfig(run.config);
  run.start(c, withOptional({data}, weights));
  const auto w = maybeWeights(weights);
  const OdometryResult r = runOdometry(cfg, loadDataset(data), w ? &*w : nullptr);
  if (!r.finite) throw NumericalError("estimator state became non-finite");
  writeTum(run.out / "trajectory.txt", r.trajectory);
  writeText(run.out / "timing_samples.csv", timingSamplesCsv(r.timing));
  writeMetricCsv(run.out / "timing.csv", timingRows(timingReport(r.timing)));
  writeMetricCsv(run.out / "summary.csv", {{"frames", "count", static_cast<double>(r.frames), "frames"},
                                           {"keyframes", "count", static_cast<double>(r.keyframes.size()), "frames"},
                                           {"diverged_solves", "count", static_cast<double>(r.diverged_solves), "solves"},
                                           {"tracked_after_gap", "count", static_cast<double>(r.tracked_after_gap),
                                            "features"}});
  std::cout << "wrote " << r.trajectory.size() << " poses to " << (run.out / "trajectory.txt").string() << "\n";
}

std::vector<MetricRow> statsRows(const std::string& metric, const ErrorStats& s) {
  double mean = 0.0;
  for (double e : s.errors) mean += e;
  if (!s.errors.empty()) mean /= static_cast<double>(s.errors.size());
  return {{metric, "rmse", s.rmse, "m"},
          {metric, "mean", mean, "m"},
          {metric, "max", s.max, "m"},
          {metric, "count", static_cast<double>(s.errors.size()), "pairs"}};
}

void runEvalAte(Run& run, const Common& c, const std::string& est, const std::string& gt) {
  const double max_dt = run.config.getDouble("ate.max_dt", 0.01);
  run.start(c, {est, gt});
  const auto e = readTum(est);
  const auto g = readTum(gt);
  const AteResult a = ate(e, g, max_dt);
  auto rows = statsRows("ate", a.position);
  for (auto& r : statsRows("ate_z", a.z)) rows.push_back(r);
  writeMetricCsv(run.out / "ate.csv", rows);
  writeTrajectoryPlotCsv(run.out / "ate_plot.csv", e, g, a);
  std::cout << "ATE RMSE " << a.position.rmse << " m over " << a.pairs.size() << " poses\n";
}

void runEvalRpe(Run& run, const Common& c, const std::string& est, const std::string& gt) {
  const int delta = run.config.getInt("rpe.delta", 1);
  const double seconds = run.config.getDouble("rpe.seconds", 0.0);
  const double max_dt = run.config.getDouble("ate.max_dt", 0.01);
  if (delta < 1) throw ConfigError("config key rpe.delta: must be at least 1");
  if (seconds < 0.0) throw ConfigError("config key rpe.seconds: must be non-negative");
  run.start(c, {est, gt});
  const auto e = readTum(est);
  const auto g = readTum(gt);
  const ErrorStats s = seconds > 0.0 ? rpeSeconds(e, g, seconds, max_dt) : rpe(e, g, delta, max_dt);
  writeMetricCsv(run.out / "rpe.csv", statsRows(seconds > 0.0 ? "rpe_seconds" : "rpe", s));
  std::cout << "RPE RMSE " << s.rmse << " m over " << s.errors.size() << " pairs\n";
}

void runEvalTiming(Run& run, const Common& c, const std::string& samples) {
  run.start(c, {samples});
  writeMetricCsv(run.out / "timing.csv", timingRows(timingReport(readTimingSamples(samples))));
}

void runEvalRepeatability(Run& run, const Common& c, const std::string& data, const std::string& weights) {
  const Config& k = run.config;
  RepeatabilityConfig rc;
  rc.max_points = k.getInt("repeatability.max_points", rc.max_points);
  rc.nms_radius = k.getInt("repeatability.nms_radius", rc.nms_radius);
  rc.epsilon = k.getDouble("repeatability.epsilon", rc.epsilon);
  rc.validate();
  const double threshold = k.getDouble("repeatability.threshold", 0.01);
  const int pairs_wanted = k.getInt("repeatability.pairs", 100);
  if (pairs_wanted < 1) throw ConfigError("config key repeatability.pairs: must be at least 1");
  std::string detector = k.getString("repeatability.detector", "auto");
  if (detector == "auto") detector = weights.empty() ? "salient" : "net";
  if (detector != "net" && detector != "salient" && detector != "random")
    throw ConfigError("config key repeatability.detector: expected auto, net, salient or random, got '" + detector + "'");
  if (detector == "net" && weights.empty()) throw UsageError("repeatability.detector = net needs --weights");
  const HomographyMagnitudes mag{k.getDouble("repeatability.homography.rotation", 0.0),
                                 k.getDouble("repeatability.homography.scale", 0.0),
                                 k.getDouble("repeatability.homography.perspective", 0.0),
                                 k.getDouble("repeatability.homography.translation", 0.0)};
  AugmentationConfig noise;
  noise.noise_sigma = k.getDouble("repeatability.noise_sigma", 0.0);
  noise.validate();

  run.start(c, withOptional({data}, detector == "net" ? weights : std::string()));
  std::optional<NetworkWeights> w;
  if (detector == "net") w = loadWeights(weights);
  const auto all = loadFrames(data);
  std::vector<RadiometricImage> corpus;
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(pairs_wanted), all.size());
  for (std::size_t i = 0; i < n; ++i) corpus.push_back(all[i * all.size() / n]);
  const auto pairs = generateHomographyPairs(corpus, mag, c.seed, &noise);

  std::vector<double> scores;
  std::uint64_t draw = c.seed * 2;
  const auto points = [&](const RadiometricImage& img) {
    if (detector == "random") return randomPoints(img.width(), img.height(), rc.max_points, rc.nms_radius, draw++);
    std::vector<Eigen::Vector2d> v;
    for (const auto& kp : detectWith(w, img, threshold, rc.nms_radius, rc.max_points)) v.push_back(kp.position);
    return v;
  };
  for (const auto& p : pairs) {
    const auto a = points(p.a);
    const auto b = points(p.b);
    if (const auto r = repeatability(a, b, p.H, p.a.width(), p.a.height(), rc.epsilon)) scores.push_back(*r);
  }
  if (scores.empty()) throw EvalError("repeatability undefined on every pair (no points in view)");
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(scores.size());
  writeMetricCsv(run.out / "repeatability.csv",
                 {{"repeatability", "mean", mean, "ratio"},
                  {"repeatability", "min", *std::min_element(scores.begin(), scores.end()), "ratio"},
                  {"repeatability", "max", *std::max_element(scores.begin(), scores.end()), "ratio"},
                  {"repeatability", "count", static_cast<double>(scores.size()), "pairs"}});
  std::cout << detector << " repeatability " << mean << " over " << scores.size() << " pairs\n";
}

void runBenchCommand(Run& run, const Common& c, const std::string& weights) {
  const BenchConfig b = benchConfig(run.config);
  run.start(c, withOptional({}, weights));
  const auto w = maybeWeights(weights);
  const BenchResult r = runBench(b, c.seed, w ? &*w : nullptr);
  if (!r.odometry.finite) throw NumericalError("estimator state became non-finite");
  writeMetricCsv(run.out / "metrics.csv", r.metrics());
  writeMetricCsv(run.out / "timing.csv", timingRows(timingReport(r.odometry.timing)));
  writeText(run.out / "timing_samples.csv", timingSamplesCsv(r.odometry.timing));
  writeTum(run.out / "trajectory.txt", r.odometry.trajectory);
  writeTum(run.out / "groundtruth.txt", r.truth);
  writeTrajectoryPlotCsv(run.out / "trajectory_plot.csv", r.odometry.trajectory, r.truth, r.ate);
  std::cout << "ATE RMSE " << r.ate.position.rmse << " m (" << 100.0 * r.ate.position.rmse / r.path_length
            << "% of " << r.path_length << " m), final error " << r.final_error << " m\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Thermal-inertial odometry toolkit"};
  app.require_subcommand(1);
  app.fallthrough(false);

  Common common;
  std::string data, weights, base, fpn_bank, estimate, groundtruth, samples;
  std::vector<std::string> data_dirs;

  auto* simulate = app.add_subcommand("simulate", "Render a synthetic thermal/IMU sequence");
  addCommon(simulate, common);
  keyOption<double>(simulate, "--duration", "sim.duration", common, "Sequence length in seconds");

  auto* train = app.add_subcommand("train", "Train the detector on dataset frames with pseudo labels");
  addCommon(train, common);
  train->add_option("--data", data_dirs, "Dataset directories (frames.csv + images)")->required();
  train->add_option("--base-weights", base, "Start from these weights; their keypoints join the pseudo labels");
  train->add_option("--fpn-bank", fpn_bank, "Directory of flat-field PGMs for FPN augmentation");
  keyOption<int>(train, "--steps", "train.steps", common, "Optimizer steps");
  keyOption<double>(train, "--learning-rate", "train.learning_rate", common, "Learning rate");
  keyOption<double>(train, "--fpn-probability", "train.augment.fpn_probability", common, "FPN augmentation probability");

  auto* detect_cmd = app.add_subcommand("detect", "Detect keypoints in every frame of a dataset");
  addCommon(detect_cmd, common);
  detect_cmd->add_option("--data", data, "Dataset directory")->required();
  detect_cmd->add_option("--weights", weights, "Detector weights; without them the handcrafted salient detector runs");
  keyOption<double>(detect_cmd, "--threshold", "detect.threshold", common, "Score threshold");
  keyOption<int>(detect_cmd, "--nms", "detect.nms", common, "NMS radius in pixels");
  keyOption<int>(detect_cmd, "--max-points", "detect.max_points", common, "Points per frame");

  auto* track = app.add_subcommand("track", "Run the feature tracker front-end over a dataset");
  addCommon(track, common);
  track->add_option("--data", data, "Dataset directory")->required();
  track->add_option("--weights", weights, "Detector weights for replenishment");

  auto* odometry = app.add_subcommand("odometry", "Estimate a trajectory from a dataset");
  addCommon(odometry, common);
  odometry->add_option("--data", data, "Dataset directory")->required();
  odometry->add_option("--weights", weights, "Detector weights for replenishment");

  auto* eval = app.add_subcommand("eval", "Compute metric CSVs");
  eval->require_subcommand(1);
  auto* eval_rep = eval->add_subcommand("repeatability", "Detector repeatability on homography pairs");
  addCommon(eval_rep, common);
  eval_rep->add_option("--data", data, "Dataset directory supplying images")->required();
  eval_rep->add_option("--weights", weights, "Detector weights");
  keyOption<std::string>(eval_rep, "--detector", "repeatability.detector", common, "auto, net, salient or random");
  keyOption<int>(eval_rep, "--pairs", "repeatability.pairs", common, "Homography pairs");
  auto* eval_ate = eval->add_subcommand("ate", "Absolute trajectory error after rigid alignment");
  addCommon(eval_ate, common);
  eval_ate->add_option("--estimate", estimate, "TUM trajectory")->required();
  eval_ate->add_option("--groundtruth", groundtruth, "TUM trajectory")->required();
  auto* eval_rpe = eval->add_subcommand("rpe", "Relative pose error");
  addCommon(eval_rpe, common);
  eval_rpe->add_option("--estimate", estimate, "TUM trajectory")->required();
  eval_rpe->add_option("--groundtruth", groundtruth, "TUM trajectory")->required();
  keyOption<int>(eval_rpe, "--delta", "rpe.delta", common, "Pose separation in samples");
  keyOption<double>(eval_rpe, "--seconds", "rpe.seconds", common, "Pose separation in seconds (overrides --delta)");
  auto* eval_timing = eval->add_subcommand("timing", "Per-stage timing statistics");
  addCommon(eval_timing, common);
  eval_timing->add_option("--samples", samples, "timing_samples.csv from odometry or bench")->required();

  auto* bench = app.add_subcommand("bench", "Simulate, run odometry and compute every metric");
  addCommon(bench, common);
  bench->add_option("--weights", weights, "Detector weights for replenishment and repeatability");
  keyOption<double>(bench, "--duration", "sim.duration", common, "Sequence length in seconds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    Run run;
    run.command = joinArgs(argc, argv);
    run.out = common.out;
    const bool uses_dataset = odometry->parsed() || track->parsed();
    run.config = resolve(common, uses_dataset ? datasetSettings(data) : Config{});

    if (simulate->parsed()) runSimulate(run, common);
    else if (train->parsed()) runTrain(run, common, data_dirs, base, fpn_bank);
    else if (detect_cmd->parsed()) runDetect(run, common, data, weights);
    else if (track->parsed()) runTrack(run, common, data, weights);
    else if (odometry->parsed()) runOdometryCommand(run, common, data, weights);
    else if (eval_rep->parsed()) runEvalRepeatability(run, common, data, weights);
    else if (eval_ate->parsed()) runEvalAte(run, common, estimate, groundtruth);
    else if (eval_rpe->parsed()) runEvalRpe(run, common, estimate, groundtruth);
    else if (eval_timing->parsed()) runEvalTiming(run, common, samples);
    else if (bench->parsed()) runBenchCommand(run, common, weights);
    return kOk;
  } catch (const UsageError& e) {
    std::cerr << "tio: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "tio: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "tio: numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const EvalError& e) {
    std::cerr << "tio: " << e.what() << "\n";
    return kData;
  } catch (const DimensionError& e) {
    std::cerr << "tio: " << e.what() << "\n";
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "tio: " << e.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "tio: invalid configuration: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "tio: " << e.what() << "\n";
    return kData;
  }
}
