#include "tio/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Eigenvalues>

namespace tio {

namespace {

double wrapAngle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}

Eigen::Vector2d supportOffset(int i, int side, int half) {
  return {static_cast<double>(i % side - half), static_cast<double>(i / side - half)};
}

// steepest-descent images of the normalized template
Eigen::MatrixXd steepestDescent(const Patch& p, WarpModel model) {
  const int side = p.side();
  const int n = side * side;
  Eigen::MatrixXd sd(n, model == WarpModel::kSE2 ? 3 : 2);
  for (int i = 0; i < n; ++i) {
    const double gx = p.grad_x(i / side, i % side);
    const double gy = p.grad_y(i / side, i % side);
    sd(i, 0) = gx;
    sd(i, 1) = gy;
    if (model == WarpModel::kSE2) {
      const Eigen::Vector2d u = supportOffset(i, side, p.half_size);
      sd(i, 2) = -gx * u.y() + gy * u.x();
    }
  }
  return sd;
}

// subtracts the mean of each patch column from a row-major support vector
void removeColumnMeans(Eigen::Ref<Eigen::MatrixXd> v, int side) {
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    auto m = v.col(j).reshaped<Eigen::RowMajor>(side, side);
    m.rowwise() -= m.colwise().mean();
  }
}

WarpSE2 composeInverse(const WarpSE2& w, const Eigen::VectorXd& dp) {
  WarpSE2 out = w;
  if (dp.size() == 3) {
    out.angle = wrapAngle(w.angle - dp(2));
    out.translation = w.translation - Eigen::Rotation2Dd(out.angle) * dp.head<2>();
  } else {
    out.translation = w.translation - dp.head<2>();
  }
  return out;
}

std::optional<Patch> tryExtract(const RadiometricImage& image, const Eigen::Vector2d& center, int half) {
  try {
    return extractPatch(image, center, half);
  } catch (const TrackingError&) {
    return std::nullopt;
  }
}

}  // namespace

Patch extractPatch(const RadiometricImage& image, const Eigen::Vector2d& center, int half_size) {
  if (half_size < 2) throw std::invalid_argument("extractPatch: half-size must be at least 2");
  const double r = half_size + 1.0;
  if (center.x() - r < 0.0 || center.y() - r < 0.0 || center.x() + r > image.width() - 1.0 ||
      center.y() + r > image.height() - 1.0)
    throw TrackingError(TrackingError::Kind::kOutOfBounds, "patch support leaves the image");
  const int side = 2 * half_size + 1;
  const int ext = side + 2;
  ImageArray grid(ext, ext);
  for (int y = 0; y < ext; ++y)
    for (int x = 0; x < ext; ++x)
      grid(y, x) = bilinearUnchecked(image.data(), center.x() + x - half_size - 1, center.y() + y - half_size - 1);
  Patch p;
  p.center = center;
  p.half_size = half_size;
  p.values = grid.block(1, 1, side, side);
  p.mean = p.values.mean();
  if (!(p.mean > 0.0)) throw TrackingError(TrackingError::Kind::kDegenerate, "patch mean is not positive");
  p.grad_x = (grid.block(1, 2, side, side) - grid.block(1, 0, side, side)) / (2.0 * p.mean);
  p.grad_y = (grid.block(2, 1, side, side) - grid.block(0, 1, side, side)) / (2.0 * p.mean);
  return p;
}

Eigen::Vector2d WarpSE2::apply(const Eigen::Vector2d& offset) const {
  if (angle == 0.0) return offset + translation;
  return Eigen::Rotation2Dd(angle) * offset + translation;
}

void TrackerConfig::validate() const {
  if (half_size < 2 || levels < 1 || max_iterations < 1 || !(convergence > 0) || !(cull_threshold > 0) ||
      grid_cell < 1 || max_features < 1 || nms_radius < 0)
    throw std::invalid_argument("tracker config: values must be positive (half-size >= 2)");
}

ResidualResult radiometricResidual(const Patch& patch, const RadiometricImage& target, const WarpSE2& warp) {
  const int side = patch.side();
  const int n = side * side;
  Eigen::VectorXd samples(n);
  const int w = target.width();
  const int h = target.height();
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d x = patch.center + warp.apply(supportOffset(i, side, patch.half_size));
    if (!insideImage(w, h, x.x(), x.y()))
      throw TrackingError(TrackingError::Kind::kOutOfBounds, "warped support leaves the image");
    samples(i) = bilinearUnchecked(target.data(), x.x(), x.y());
  }
  ResidualResult out;
  out.target_mean = samples.mean();
  if (!(out.target_mean > 0.0)) throw TrackingError(TrackingError::Kind::kDegenerate, "target patch mean is not positive");
  out.residual.resize(n);
  for (int i = 0; i < n; ++i)
    out.residual(i) = samples(i) / out.target_mean - patch.values(i / side, i % side) / patch.mean;
  return out;
}

AlignResult alignPatch(const Patch& patch, const RadiometricImage& target, const WarpSE2& initial,
                       const TrackerConfig& cfg, int max_iterations) {
  if (max_iterations < 0) max_iterations = cfg.max_iterations;
  const int side = patch.side();
  Eigen::MatrixXd sd = steepestDescent(patch, cfg.model);
  if (cfg.remove_column_offsets) removeColumnMeans(sd, side);
  auto residualOf = [&](const WarpSE2& w) {
    ResidualResult r = radiometricResidual(patch, target, w);
    if (cfg.remove_column_offsets) removeColumnMeans(r.residual, side);
    return r;
  };
  const Eigen::MatrixXd H = sd.transpose() * sd;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H);
  const double trace = H.trace();
  if (!(trace > 0.0) || eig.eigenvalues()(0) <= 1e-10 * trace)
    throw TrackingError(TrackingError::Kind::kUntrackable, "singular normal matrix (flat patch)");
  const Eigen::LDLT<Eigen::MatrixXd> solver(H);
  const double n = side * side;

  AlignResult out;
  out.warp = initial;
  ResidualResult res = residualOf(out.warp);
  out.dissimilarity = res.residual.squaredNorm() / n;
  for (int it = 1; it <= max_iterations; ++it) {
    out.iterations = it;
    const Eigen::VectorXd dp = solver.solve(sd.transpose() * res.residual);
    double step = 1.0;
    bool accepted = false;
    bool blocked = false;
    for (int halving = 0; halving < 8 && !accepted; ++halving, step *= 0.5) {
      const WarpSE2 candidate = composeInverse(out.warp, step * dp);
      try {
        ResidualResult r = residualOf(candidate);
        const double d = r.residual.squaredNorm() / n;
        if (d <= out.dissimilarity) {
          out.warp = candidate;
          out.dissimilarity = d;
          res = std::move(r);
          accepted = true;
        }
      } catch (const TrackingError& e) {
        if (e.kind() == TrackingError::Kind::kOutOfBounds) blocked = true;
      }
    }
    out.blocked = !accepted && blocked;
    step *= 2.0;
    double update = step * dp.head<2>().norm();
    if (dp.size() == 3) update += step * std::abs(dp(2)) * patch.half_size;
    if (!accepted || update < cfg.convergence) {
      out.converged = true;
      break;
    }
  }
  return out;
}

SeedResult imuSeed(const Eigen::Quaterniond& delta_body, const Eigen::Matrix3d& R_bc, const Eigen::Matrix3d& K,
                   const Eigen::Vector2d& point) {
  const Eigen::Matrix3d R_cam = R_bc.transpose() * delta_body.toRotationMatrix() * R_bc;
  const Eigen::Vector3d x = K * R_cam.transpose() * K.inverse() * point.homogeneous();
  if (!(x.z() > 0.0)) return {point, true};
  return {x.hnormalized(), false};
}

TrackFrameStats trackFrame(std::vector<TrackedFeature>& tracks, const ImagePyramid& next, int frame,
                           const std::optional<RotationPrior>& prior, const TrackerConfig& cfg, bool nuc_gap) {
  TrackFrameStats stats;
  const int levels = std::min(cfg.levels, next.size());
  for (auto& tf : tracks) {
    auto& track = tf.track;
    if (track.status != TrackStatus::kAlive) continue;
    Eigen::Vector2d predicted = track.position();
    if (prior) predicted = imuSeed(prior->delta_body, prior->R_bc, prior->K, predicted).point;

    int top = -1;
    for (int k = std::min(levels, static_cast<int>(tf.reference.size())) - 1; k >= 0; --k)
      if (tf.reference[static_cast<std::size_t>(k)]) {
        top = k;
        break;
      }
    bool ok = top >= 0 && insideImage(next[0].width(), next[0].height(), predicted.x(), predicted.y());
    Eigen::Vector2d estimate = predicted;
    double angle = tf.angle;
    double dissimilarity = 0.0;
    try {
      if (ok && nuc_gap && tf.wide && tf.wide_level <= top) {
        const Patch& p = *tf.wide;
        const WarpSE2 init{angle, toLevel(estimate, tf.wide_level) - p.center};
        const AlignResult a = alignPatch(p, next[tf.wide_level], init, cfg, 2 * cfg.max_iterations);
        estimate = fromLevel(p.center + a.warp.translation, tf.wide_level);
        angle = a.warp.angle;
      }
      for (int k = top; ok && k >= 0; --k) {
        const auto& ref = tf.reference[static_cast<std::size_t>(k)];
        if (!ref) continue;
        const WarpSE2 init{angle, toLevel(estimate, k) - ref->center};
        const int iters = (nuc_gap && k == top) ? 2 * cfg.max_iterations : cfg.max_iterations;
        const AlignResult a = alignPatch(*ref, next[k], init, cfg, iters);
        estimate = fromLevel(ref->center + a.warp.translation, k);
        angle = a.warp.angle;
        dissimilarity = a.dissimilarity;
        if (k == 0 && a.blocked) ok = false;
      }
    } catch (const TrackingError&) {
      ok = false;
    }
    if (ok && (!tf.reference[0] || dissimilarity > cfg.cull_threshold ||
               !insideImage(next[0].width(), next[0].height(), estimate.x(), estimate.y())))
      ok = false;
    if (!ok) {
      track.status = TrackStatus::kCulled;
      ++stats.culled;
      continue;
    }
    tf.angle = angle;
    track.observations.push_back({frame, estimate});
    ++stats.tracked;
  }
  return stats;
}

namespace {

bool spawnOne(std::vector<TrackedFeature>& tracks, const ImagePyramid& pyramid, const Eigen::Vector2d& p, int frame,
              int& next_id, const TrackerConfig& cfg) {
  TrackedFeature tf;
  const int levels = std::min(cfg.levels, pyramid.size());
  tf.reference.resize(static_cast<std::size_t>(levels));
  for (int k = 0; k < levels; ++k) tf.reference[static_cast<std::size_t>(k)] = tryExtract(pyramid[k], toLevel(p, k), cfg.half_size);
  if (!tf.reference[0]) return false;
  const Eigen::MatrixXd sd = steepestDescent(*tf.reference[0], WarpModel::kTranslation);
  const Eigen::Matrix2d H = sd.transpose() * sd;
  if (Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(H).eigenvalues()(0) < cfg.min_eigenvalue) return false;
  for (int k = levels - 1; k >= 0; --k) {
    if (!tf.reference[static_cast<std::size_t>(k)]) continue;
    tf.wide = tryExtract(pyramid[k], toLevel(p, k), 2 * cfg.half_size);
    if (tf.wide) tf.wide_level = k;
    break;
  }
  tf.track.id = next_id++;
  tf.track.observations.push_back({frame, p});
  tracks.push_back(std::move(tf));
  return true;
}

}  // namespace

int spawnTracks(std::vector<TrackedFeature>& tracks, const ImagePyramid& pyramid, const std::vector<Eigen::Vector2d>& points,
                int frame, int& next_id, const TrackerConfig& cfg) {
  int spawned = 0;
  for (const auto& p : points) spawned += spawnOne(tracks, pyramid, p, frame, next_id, cfg) ? 1 : 0;
  return spawned;
}

int replenishFeatures(std::vector<TrackedFeature>& tracks, const ImagePyramid& pyramid, const ConfidenceHeatmap& heatmap,
                      int frame, int& next_id, const TrackerConfig& cfg) {
  int live = liveTrackCount(tracks);
  if (live >= cfg.max_features) return 0;
  const int gw = (heatmap.width() + cfg.grid_cell - 1) / cfg.grid_cell;
  const int gh = (heatmap.height() + cfg.grid_cell - 1) / cfg.grid_cell;
  std::vector<char> occupied(static_cast<std::size_t>(gw * gh), 0);
  auto cellOf = [&](const Eigen::Vector2d& p) {
    const int cx = std::clamp(static_cast<int>(std::floor(p.x() / cfg.grid_cell)), 0, gw - 1);
    const int cy = std::clamp(static_cast<int>(std::floor(p.y() / cfg.grid_cell)), 0, gh - 1);
    return static_cast<std::size_t>(cy * gw + cx);
  };
  for (const auto& tf : tracks)
    if (tf.track.status == TrackStatus::kAlive) occupied[cellOf(tf.track.position())] = 1;

  const auto keypoints = decodeKeypoints(heatmap, cfg.detection_threshold, cfg.nms_radius, heatmap.width() * heatmap.height());
  int spawned = 0;
  for (const auto& kp : keypoints) {
    if (live >= cfg.max_features) break;
    const std::size_t cell = cellOf(kp.position);
    if (occupied[cell]) continue;
    if (!spawnOne(tracks, pyramid, kp.position, frame, next_id, cfg)) continue;
    occupied[cell] = 1;
    ++live;
    ++spawned;
  }
  return spawned;
}

void pruneCulled(std::vector<TrackedFeature>& tracks) {
  std::erase_if(tracks, [](const TrackedFeature& t) { return t.track.status != TrackStatus::kAlive; });
}

int liveTrackCount(const std::vector<TrackedFeature>& tracks) {
  return static_cast<int>(std::count_if(tracks.begin(), tracks.end(),
                                        [](const TrackedFeature& t) { return t.track.status == TrackStatus::kAlive; }));
}

}  // namespace tio
