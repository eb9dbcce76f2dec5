#pragma once

// Analytic textures for render-then-recover tests. Rendering evaluates the
// continuous field at each pixel center, so shifted frames carry no
// resampling error.

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "tio/geometry.hpp"
#include "tio/image.hpp"
#include "tio/imu.hpp"
#include "tio/marginalization.hpp"

namespace tio::testing {

struct Blob {
  double x, y, sigma, amplitude;
};

class BlobField {
 public:
  BlobField(double width, double height, int count, std::uint64_t seed, double base = 15000.0, double contrast = 3000.0,
            double min_sigma = 2.0, double max_sigma = 12.0)
      : base_(base) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < count; ++i)
      blobs_.push_back({-20 + u(rng) * (width + 40), -20 + u(rng) * (height + 40),
                        min_sigma * std::pow(max_sigma / min_sigma, u(rng)), contrast * (2 * u(rng) - 1)});
  }

  double value(double x, double y) const {
    double v = base_;
    for (const auto& b : blobs_) {
      const double dx = x - b.x, dy = y - b.y;
      const double r2 = dx * dx + dy * dy;
      if (r2 < 36 * b.sigma * b.sigma) v += b.amplitude * std::exp(-r2 / (2 * b.sigma * b.sigma));
    }
    return v;
  }

  /// Pixel (x, y) of the output shows the field at A^-1 (x, y) for the 2-D affine map A.
  RadiometricImage render(int w, int h, const Eigen::Affine2d& A = Eigen::Affine2d::Identity(), double gain = 1.0) const {
    const Eigen::Affine2d inv = A.inverse();
    ImageArray a(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const Eigen::Vector2d p = inv * Eigen::Vector2d(x, y);
        a(y, x) = gain * value(p.x(), p.y());
      }
    return RadiometricImage::clamped(a);
  }

  RadiometricImage renderShifted(int w, int h, const Eigen::Vector2d& shift) const {
    return render(w, h, Eigen::Affine2d(Eigen::Translation2d(shift)));
  }

 private:
  double base_;
  std::vector<Blob> blobs_;
};

/// Sinusoidal body motion with closed-form derivatives. R(t) = Exp(phi(t)).
struct SmoothMotion {
  Eigen::Vector3d p_amp{1.0, 0.7, 0.2}, p_freq{0.3, 0.25, 0.4}, p_phase{0.0, 1.0, 0.5};
  Eigen::Vector3d r_amp{0.3, 0.2, 0.6}, r_freq{0.35, 0.3, 0.2}, r_phase{0.2, 1.3, 0.0};
  Eigen::Vector3d v0{0.4, -0.2, 0.0};

  static Eigen::Vector3d wave(const Eigen::Vector3d& amp, const Eigen::Vector3d& freq, const Eigen::Vector3d& phase,
                              double t, int order) {
    Eigen::Vector3d out;
    for (int i = 0; i < 3; ++i) {
      const double w = 2.0 * M_PI * freq(i);
      const double arg = w * t + phase(i);
      const double k = std::pow(w, order);
      switch (order % 4) {
        case 0: out(i) = amp(i) * k * std::sin(arg); break;
        case 1: out(i) = amp(i) * k * std::cos(arg); break;
        case 2: out(i) = -amp(i) * k * std::sin(arg); break;
        default: out(i) = -amp(i) * k * std::cos(arg); break;
      }
    }
    return out;
  }
  Eigen::Vector3d position(double t) const { return wave(p_amp, p_freq, p_phase, t, 0) + v0 * t; }
  Eigen::Vector3d velocity(double t) const { return wave(p_amp, p_freq, p_phase, t, 1) + v0; }
  Eigen::Vector3d acceleration(double t) const { return wave(p_amp, p_freq, p_phase, t, 2); }
  Eigen::Vector3d phi(double t) const { return wave(r_amp, r_freq, r_phase, t, 0); }
  Eigen::Quaterniond orientation(double t) const { return expQuat(phi(t)); }
  Eigen::Vector3d omegaBody(double t) const { return rightJacobian(phi(t)) * wave(r_amp, r_freq, r_phase, t, 1); }
  Eigen::Vector3d specificForce(double t, const Eigen::Vector3d& g_w) const {
    return orientation(t).conjugate() * (acceleration(t) - g_w);
  }
  ImuSample sample(double t, const Eigen::Vector3d& g_w) const { return {t, omegaBody(t), specificForce(t, g_w)}; }
  FrameState state(double t) const {
    FrameState s;
    s.t = t;
    s.p = position(t);
    s.q = orientation(t);
    s.v = velocity(t);
    return s;
  }
  std::vector<ImuSample> stream(double t0, double t1, double rate, const Eigen::Vector3d& g_w) const {
    std::vector<ImuSample> out;
    const int n = static_cast<int>(std::llround((t1 - t0) * rate));
    for (int i = 0; i <= n; ++i) out.push_back(sample(t0 + i / rate, g_w));
    return out;
  }
};

/// Linear-Gaussian chain x_{k+1} = A x_k + u_k observed through z_k = C x_k.
/// Factors are whitened residuals; the batch solution is the oracle for the
/// sliding window with marginalization.
struct LinearChain {
  int count = 20;
  Eigen::Matrix3d A;
  Eigen::Matrix<double, 2, 3> C;
  std::vector<Eigen::Vector3d> u;
  std::vector<Eigen::Vector2d> z;
  Eigen::Vector3d x0_mean;
  double sigma0 = 0.5, sigma_q = 0.1, sigma_r = 0.2;

  explicit LinearChain(std::uint64_t seed, int n = 20) : count(n) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> N(0.0, 1.0);
    const double c = std::cos(0.1), s = std::sin(0.1);
    A << c, -s, 0.1, s, c, 0.0, 0.0, 0.0, 0.95;
    C << 1.0, 0.0, 0.5, 0.0, 1.0, -0.3;
    x0_mean = Eigen::Vector3d(0.3, -0.2, 0.5);
    Eigen::Vector3d x = x0_mean;
    for (int k = 0; k < count; ++k) {
      z.push_back(C * x + sigma_r * Eigen::Vector2d(N(rng), N(rng)));
      const Eigen::Vector3d uk(0.05 * N(rng), 0.05 * N(rng), 0.05 * N(rng));
      u.push_back(uk);
      x = A * x + uk + sigma_q * Eigen::Vector3d(N(rng), N(rng), N(rng));
    }
  }

  // Adds the factors whose states all lie in [first, first + n) to H, g at the stacked estimate x.
  void accumulate(int first, int n, const Eigen::VectorXd& x, bool with_initial, NormalSystem& sys) const {
    auto add = [&](const Eigen::MatrixXd& J, const std::vector<int>& idx, const Eigen::VectorXd& e) {
      Eigen::MatrixXd Jf = Eigen::MatrixXd::Zero(J.rows(), 3 * n);
      for (size_t i = 0; i < idx.size(); ++i) Jf.middleCols(3 * (idx[i] - first), 3) = J.middleCols(3 * i, 3);
      sys.H += Jf.transpose() * Jf;
      sys.g += Jf.transpose() * e;
    };
    auto state = [&](int k) { return Eigen::Vector3d(x.segment<3>(3 * (k - first))); };
    if (with_initial && first == 0)
      add(Eigen::Matrix3d::Identity() / sigma0, {0}, (state(0) - x0_mean) / sigma0);
    for (int k = first; k < first + n; ++k) {
      add(C / sigma_r, {k}, (C * state(k) - z[k]) / sigma_r);
      if (k + 1 < first + n) {
        Eigen::Matrix<double, 3, 6> J;
        J << -A / sigma_q, Eigen::Matrix3d::Identity() / sigma_q;
        add(J, {k, k + 1}, (state(k + 1) - A * state(k) - u[k]) / sigma_q);
      }
    }
  }

  /// Least-squares estimate of states [0, n) from all factors among them.
  Eigen::VectorXd batch(int n) const {
    NormalSystem sys{Eigen::MatrixXd::Zero(3 * n, 3 * n), Eigen::VectorXd::Zero(3 * n)};
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(3 * n);
    accumulate(0, n, zero, true, sys);
    return sys.H.ldlt().solve(-sys.g);
  }

  struct SlidingResult {
    int first = 0;
    Eigen::VectorXd estimate;   // states [first, count)
    bool prior_psd = true;      // every prior information matrix symmetric PSD
    double max_step_error = 0;  // newest-state disagreement with batch after each step
  };

  /// Window of `window` states; the oldest is marginalized whenever the window is full.
  SlidingResult sliding(int window) const {
    SlidingResult out;
    int first = 0;
    Eigen::VectorXd x(0);
    LinearPrior prior;
    Eigen::Vector3d prior_lin = Eigen::Vector3d::Zero();
    auto solve = [&](int n) {
      NormalSystem sys{Eigen::MatrixXd::Zero(3 * n, 3 * n), Eigen::VectorXd::Zero(3 * n)};
      accumulate(first, n, x, true, sys);
      if (!prior.empty()) {
        const Eigen::VectorXd e = prior.r + prior.J * (x.head<3>() - prior_lin);
        sys.H.topLeftCorner<3, 3>() += prior.J.transpose() * prior.J;
        sys.g.head<3>() += prior.J.transpose() * e;
      }
      x += sys.H.ldlt().solve(-sys.g);
    };
    for (int k = 0; k < count; ++k) {
      const int n = k - first + 1;
      x.conservativeResize(3 * n);
      x.tail<3>().setZero();
      solve(n);
      const Eigen::VectorXd b = batch(k + 1);
      out.max_step_error = std::max(out.max_step_error, (b.tail<3>() - x.tail<3>()).cwiseAbs().maxCoeff());
      if (n == window && k + 1 < count) {
        // factors touching the oldest state: its prior, its measurement and its process factor
        NormalSystem sys{Eigen::MatrixXd::Zero(6, 6), Eigen::VectorXd::Zero(6)};
        const Eigen::VectorXd x01 = x.head<6>();
        if (first == 0) {
          const Eigen::Matrix3d J0 = Eigen::Matrix3d::Identity() / sigma0;
          const Eigen::Vector3d e = (x01.head<3>() - x0_mean) / sigma0;
          sys.H.topLeftCorner<3, 3>() += J0.transpose() * J0;
          sys.g.head<3>() += J0.transpose() * e;
        } else {
          const Eigen::VectorXd e = prior.r + prior.J * (x01.head<3>() - prior_lin);
          sys.H.topLeftCorner<3, 3>() += prior.J.transpose() * prior.J;
          sys.g.head<3>() += prior.J.transpose() * e;
        }
        const Eigen::Matrix<double, 2, 3> Jm = C / sigma_r;
        const Eigen::Vector2d em = (C * x01.head<3>() - z[first]) / sigma_r;
        sys.H.topLeftCorner<3, 3>() += Jm.transpose() * Jm;
        sys.g.head<3>() += Jm.transpose() * em;
        Eigen::Matrix<double, 3, 6> Jq;
        Jq << -A / sigma_q, Eigen::Matrix3d::Identity() / sigma_q;
        const Eigen::Vector3d eq = (x01.tail<3>() - A * x01.head<3>() - u[first]) / sigma_q;
        sys.H += Jq.transpose() * Jq;
        sys.g += Jq.transpose() * eq;

        prior = sqrtPrior(schurEliminate(sys, 3), 1e-8);
        prior_lin = x01.tail<3>();
        out.prior_psd = out.prior_psd && isSymmetricPsd(prior.information());
        x = Eigen::VectorXd(x.tail(x.size() - 3));
        ++first;
      }
    }
    out.first = first;
    out.estimate = x;
    return out;
  }
};

}  // namespace tio::testing
