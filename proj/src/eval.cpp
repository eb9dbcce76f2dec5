#include "tio/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <Eigen/Geometry>

#include "tio/config.hpp"
#include "tio/homography.hpp"

namespace tio {

void RepeatabilityConfig::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("repeatability: epsilon must be positive");
  if (max_points <= 0) throw std::invalid_argument("repeatability: max_points must be positive");
  if (nms_radius < 0) throw std::invalid_argument("repeatability: nms_radius must be non-negative");
}

namespace {

bool inside(const Eigen::Vector2d& p, int width, int height) {
  return p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= width - 1.0 && p.y() <= height - 1.0;
}

// (hits, in-view count) for points of `from` mapped by H onto `to`.
std::pair<int, int> directedHits(const std::vector<Eigen::Vector2d>& from, const std::vector<Eigen::Vector2d>& to,
                                 const Eigen::Matrix3d& H, int width, int height, double eps) {
  int hits = 0, total = 0;
  for (const auto& p : from) {
    const auto q = applyHomography(H, p);
    if (!q || !inside(*q, width, height)) continue;
    ++total;
    for (const auto& r : to)
      if ((r - *q).norm() <= eps) {
        ++hits;
        break;
      }
  }
  return {hits, total};
}

}  // namespace

std::optional<double> repeatability(const std::vector<Eigen::Vector2d>& a, const std::vector<Eigen::Vector2d>& b,
                                    const Eigen::Matrix3d& H, int width, int height, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("repeatability: epsilon must be positive");
  const auto [fh, fn] = directedHits(a, b, H, width, height, epsilon);
  const auto [rh, rn] = directedHits(b, a, H.inverse(), width, height, epsilon);
  double sum = 0.0;
  int parts = 0;
  if (fn > 0) sum += static_cast<double>(fh) / fn, ++parts;
  if (rn > 0) sum += static_cast<double>(rh) / rn, ++parts;
  if (parts == 0) return std::nullopt;
  return sum / parts;
}

std::vector<Eigen::Vector2d> randomPoints(int width, int height, int count, int nms_radius, std::uint64_t seed) {
  std::vector<int> order(static_cast<size_t>(width) * height);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::uint8_t> blocked(order.size(), 0);
  std::vector<Eigen::Vector2d> out;
  for (int idx : order) {
    if (static_cast<int>(out.size()) >= count) break;
    if (blocked[idx]) continue;
    const int x = idx % width, y = idx / width;
    out.emplace_back(x, y);
    for (int yy = std::max(0, y - nms_radius); yy <= std::min(height - 1, y + nms_radius); ++yy)
      for (int xx = std::max(0, x - nms_radius); xx <= std::min(width - 1, x + nms_radius); ++xx)
        blocked[yy * width + xx] = 1;
  }
  return out;
}

// ---- trajectories -----------------------------------------------------------

StampedPose RigidTransform::operator()(const StampedPose& p) const {
  StampedPose out = p;
  out.p = R * p.p + t;
  out.q = Eigen::Quaterniond(R) * p.q;
  out.q.normalize();
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> associate(const std::vector<StampedPose>& estimate,
                                                           const std::vector<StampedPose>& truth, double max_dt) {
  std::vector<std::size_t> order(truth.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return truth[i].t < truth[j].t; });
  std::vector<bool> used(truth.size(), false);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    const double t = estimate[i].t;
    auto it = std::lower_bound(order.begin(), order.end(), t, [&](std::size_t k, double v) { return truth[k].t < v; });
    std::optional<std::size_t> best;
    double best_dt = max_dt;
    for (auto c : {it, it == order.begin() ? order.end() : std::prev(it)}) {
      if (c == order.end() || used[*c]) continue;
      const double dt = std::abs(truth[*c].t - t);
      if (dt <= best_dt) best_dt = dt, best = *c;
    }
    if (best) {
      used[*best] = true;
      pairs.emplace_back(i, *best);
    }
  }
  return pairs;
}

RigidTransform alignRigid(const std::vector<Eigen::Vector3d>& src, const std::vector<Eigen::Vector3d>& dst) {
  if (src.size() != dst.size() || src.size() < 3) throw EvalError("alignRigid: need at least 3 point pairs");
  if (src == dst) return {};
  Eigen::Matrix3Xd s(3, src.size()), d(3, dst.size());
  for (std::size_t i = 0; i < src.size(); ++i) s.col(i) = src[i], d.col(i) = dst[i];
  const Eigen::Matrix4d T = Eigen::umeyama(s, d, false);
  RigidTransform out;
  out.R = T.topLeftCorner<3, 3>();
  out.t = T.topRightCorner<3, 1>();
  return out;
}

ErrorStats errorStats(std::vector<double> errors) {
  ErrorStats s;
  if (!errors.empty()) {
    double ss = 0.0;
    for (double e : errors) ss += e * e, s.max = std::max(s.max, e);
    s.rmse = std::sqrt(ss / errors.size());
  }
  s.errors = std::move(errors);
  return s;
}

namespace {

std::vector<std::pair<std::size_t, std::size_t>> requirePairs(const std::vector<StampedPose>& estimate,
                                                              const std::vector<StampedPose>& truth, double max_dt) {
  auto pairs = associate(estimate, truth, max_dt);
  if (pairs.size() < 3)
    throw EvalError("fewer than 3 associable pose pairs (" + std::to_string(pairs.size()) + " within " +
                    formatDouble(max_dt) + " s)");
  std::sort(pairs.begin(), pairs.end(), [&](auto a, auto b) { return truth[a.second].t < truth[b.second].t; });
  return pairs;
}

Eigen::Isometry3d isometry(const StampedPose& p) {
  Eigen::Isometry3d T = Eigen::Isometry3d::Identity();
  T.linear() = p.q.normalized().toRotationMatrix();
  T.translation() = p.p;
  return T;
}

double relativeError(const StampedPose& e0, const StampedPose& e1, const StampedPose& g0, const StampedPose& g1) {
  const Eigen::Isometry3d dg = isometry(g0).inverse() * isometry(g1);
  const Eigen::Isometry3d de = isometry(e0).inverse() * isometry(e1);
  return (dg.inverse() * de).translation().norm();
}

}  // namespace

AteResult ate(const std::vector<StampedPose>& estimate, const std::vector<StampedPose>& truth, double max_dt) {
  AteResult r;
  r.pairs = requirePairs(estimate, truth, max_dt);
  std::vector<Eigen::Vector3d> src, dst;
  for (const auto& [i, j] : r.pairs) src.push_back(estimate[i].p), dst.push_back(truth[j].p);
  r.alignment = alignRigid(src, dst);
  std::vector<double> e, ez;
  for (std::size_t k = 0; k < src.size(); ++k) {
    const Eigen::Vector3d d = r.alignment(src[k]) - dst[k];
    e.push_back(d.norm());
    ez.push_back(std::abs(d.z()));
  }
  r.position = errorStats(std::move(e));
  r.z = errorStats(std::move(ez));
  return r;
}

ErrorStats rpe(const std::vector<StampedPose>& estimate, const std::vector<StampedPose>& truth, int delta,
               double max_dt) {
  if (delta < 1) throw EvalError("rpe: delta must be at least 1");
  const auto pairs = requirePairs(estimate, truth, max_dt);
  std::vector<double> e;
  for (std::size_t k = 0; k + delta < pairs.size(); ++k) {
    const auto [i0, j0] = pairs[k];
    const auto [i1, j1] = pairs[k + delta];
    e.push_back(relativeError(estimate[i0], estimate[i1], truth[j0], truth[j1]));
  }
  return errorStats(std::move(e));
}

ErrorStats rpeSeconds(const std::vector<StampedPose>& estimate, const std::vector<StampedPose>& truth, double seconds,
                      double max_dt) {
  if (!(seconds > 0.0)) throw EvalError("rpe: separation must be positive");
  const auto pairs = requirePairs(estimate, truth, max_dt);
  std::vector<double> e;
  std::size_t m = 0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const double target = truth[pairs[k].second].t + seconds - 1e-9;
    m = std::max(m, k + 1);
    while (m < pairs.size() && truth[pairs[m].second].t < target) ++m;
    if (m >= pairs.size()) break;
    e.push_back(relativeError(estimate[pairs[k].first], estimate[pairs[m].first], truth[pairs[k].second],
                              truth[pairs[m].second]));
  }
  return errorStats(std::move(e));
}

void writeTrajectoryPlotCsv(const std::filesystem::path& path, const std::vector<StampedPose>& estimate,
                            const std::vector<StampedPose>& truth, const AteResult& alignment) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "t,gt_x,gt_y,gt_z,est_x,est_y,est_z\n";
  for (const auto& [i, j] : alignment.pairs) {
    const Eigen::Vector3d e = alignment.alignment(estimate[i].p);
    out << formatDouble(truth[j].t);
    for (int k = 0; k < 3; ++k) out << "," << formatDouble(truth[j].p(k));
    for (int k = 0; k < 3; ++k) out << "," << formatDouble(e(k));
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path.string());
}

// ---- timing -----------------------------------------------------------------

void TimingLog::merge(const TimingLog& other) {
  for (const auto& [k, v] : other.samples_) samples_[k].insert(samples_[k].end(), v.begin(), v.end());
}

std::vector<StageStats> timingReport(const TimingLog& log) {
  static const std::vector<std::string> kOrder = {"detect", "track", "preintegrate", "solve", "frame"};
  std::vector<std::string> names;
  for (const auto& n : kOrder)
    if (log.samples().count(n)) names.push_back(n);
  for (const auto& [n, v] : log.samples())
    if (std::find(kOrder.begin(), kOrder.end(), n) == kOrder.end()) names.push_back(n);

  std::vector<StageStats> out;
  for (const auto& n : names) {
    std::vector<double> v = log.samples().at(n);
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    StageStats s;
    s.stage = n;
    s.count = v.size();
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double var = 0.0;
    for (double x : v) var += (x - s.mean) * (x - s.mean);
    s.stddev = v.size() > 1 ? std::sqrt(var / (v.size() - 1)) : 0.0;
    // nearest-rank percentile
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * v.size()));
    s.p95 = v[std::max<std::size_t>(rank, 1) - 1];
    s.max = v.back();
    out.push_back(s);
  }
  return out;
}

// ---- metric CSV -------------------------------------------------------------

std::string metricCsv(const std::vector<MetricRow>& rows) {
  std::string s = "metric,statistic,value,units\n";
  for (const auto& r : rows) s += r.metric + "," + r.statistic + "," + formatDouble(r.value) + "," + r.units + "\n";
  return s;
}

void writeMetricCsv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << metricCsv(rows);
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<MetricRow> readMetricCsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "metric,statistic,value,units") throw IoError(path.string() + ": bad header");
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    MetricRow r;
    std::string value;
    std::getline(ss, r.metric, ',');
    std::getline(ss, r.statistic, ',');
    std::getline(ss, value, ',');
    std::getline(ss, r.units);
    try {
      r.value = std::stod(value);
    } catch (const std::logic_error&) {
      throw IoError(path.string() + ": bad value '" + value + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

std::vector<MetricRow> timingRows(const std::vector<StageStats>& stats) {
  std::vector<MetricRow> rows;
  for (const auto& s : stats) {
    const std::string m = "time_" + s.stage;
    rows.push_back({m, "mean", s.mean * 1e3, "ms"});
    rows.push_back({m, "p95", s.p95 * 1e3, "ms"});
    rows.push_back({m, "std", s.stddev * 1e3, "ms"});
    rows.push_back({m, "count", static_cast<double>(s.count), "samples"});
  }
  return rows;
}

}  // namespace tio
