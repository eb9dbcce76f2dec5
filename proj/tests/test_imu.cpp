#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "support.hpp"
#include "tio/imu.hpp"

using namespace tio;
using tio::testing::SmoothMotion;

namespace {

const Eigen::Vector3d kGravity(0.0, 0.0, -9.81);
const Eigen::Vector3d kZero = Eigen::Vector3d::Zero();

ImuNoiseParams noNoise() {
  ImuNoiseParams n;
  n.gyro_noise = n.accel_noise = n.gyro_bias_rw = n.accel_bias_rw = 0.0;
  return n;
}

struct FineDelta {
  Eigen::Vector3d alpha = Eigen::Vector3d::Zero();
  Eigen::Vector3d beta = Eigen::Vector3d::Zero();
  Eigen::Quaterniond gamma = Eigen::Quaterniond::Identity();
};

// RK4 on the continuous delta ODE: alpha' = beta, beta' = R f, R' = R [w]x.
FineDelta integrateFine(const SmoothMotion& m, double t0, double t1, int steps, const Eigen::Vector3d& ba = Eigen::Vector3d::Zero(),
                        const Eigen::Vector3d& bg = Eigen::Vector3d::Zero()) {
  struct D {
    Eigen::Vector3d a, b;
    Eigen::Vector4d q;  // w, x, y, z
  };
  auto quat = [](const Eigen::Vector4d& v) { return Eigen::Quaterniond(v(0), v(1), v(2), v(3)).normalized(); };
  auto deriv = [&](const D& s, double t) {
    const Eigen::Quaterniond q = quat(s.q);
    const Eigen::Vector3d w = m.omegaBody(t) - bg;
    const Eigen::Quaterniond dq = Eigen::Quaterniond(s.q(0), s.q(1), s.q(2), s.q(3)) * Eigen::Quaterniond(0, w.x(), w.y(), w.z());
    D d;
    d.a = s.b;
    d.b = q * (m.specificForce(t, kGravity) - ba);
    d.q = 0.5 * Eigen::Vector4d(dq.w(), dq.x(), dq.y(), dq.z());
    return d;
  };
  auto axpy = [](const D& s, const D& k, double h) { return D{s.a + h * k.a, s.b + h * k.b, s.q + h * k.q}; };
  D s{Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), Eigen::Vector4d(1, 0, 0, 0)};
  const double h = (t1 - t0) / steps;
  for (int i = 0; i < steps; ++i) {
    const double t = t0 + i * h;
    const D k1 = deriv(s, t);
    const D k2 = deriv(axpy(s, k1, h / 2), t + h / 2);
    const D k3 = deriv(axpy(s, k2, h / 2), t + h / 2);
    const D k4 = deriv(axpy(s, k3, h), t + h);
    s.a += h / 6 * (k1.a + 2 * k2.a + 2 * k3.a + k4.a);
    s.b += h / 6 * (k1.b + 2 * k2.b + 2 * k3.b + k4.b);
    s.q += h / 6 * (k1.q + 2 * k2.q + 2 * k3.q + k4.q);
    s.q.normalize();
  }
  return {s.a, s.b, quat(s.q)};
}

}  // namespace

TEST(Integrate, StationaryGravityFreeIsZero) {
  PreintegratedDelta d(Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), ImuNoiseParams{});
  d.integrate({0.0, kZero, kZero}, {1.0, kZero, kZero});
  EXPECT_EQ(d.alpha(), Eigen::Vector3d::Zero());
  EXPECT_EQ(d.beta(), Eigen::Vector3d::Zero());
  EXPECT_EQ(d.gamma().coeffs(), Eigen::Quaterniond::Identity().coeffs());
  EXPECT_DOUBLE_EQ(d.dt(), 1.0);
}

TEST(Integrate, ConstantAcceleration) {
  PreintegratedDelta d(Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), ImuNoiseParams{});
  for (int i = 0; i < 10; ++i) d.integrate({0.1 * i, kZero, {1, 0, 0}}, {0.1 * (i + 1), kZero, {1, 0, 0}});
  EXPECT_LT((d.beta() - Eigen::Vector3d(1, 0, 0)).norm(), 1e-12);
  EXPECT_LT((d.alpha() - Eigen::Vector3d(0.5, 0, 0)).norm(), 1e-12);
}

TEST(Integrate, ConstantYawRate) {
  PreintegratedDelta d(Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), ImuNoiseParams{});
  for (int i = 0; i < 200; ++i) d.integrate({0.005 * i, {0, 0, 0.1}, kZero}, {0.005 * (i + 1), {0, 0, 0.1}, kZero});
  const Eigen::Quaterniond expected(Eigen::AngleAxisd(0.1, Eigen::Vector3d::UnitZ()));
  EXPECT_LT(angularDistance(d.gamma(), expected), 1e-9);
  EXPECT_NEAR(d.gamma().norm(), 1.0, 1e-12);
}

TEST(Integrate, RejectsNonPositiveDt) {
  PreintegratedDelta d(Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), ImuNoiseParams{});
  EXPECT_THROW(d.integrate({1.0, kZero, kZero}, {1.0, kZero, kZero}), std::invalid_argument);
  EXPECT_THROW(d.integrate({1.0, kZero, kZero}, {0.5, kZero, kZero}), std::invalid_argument);
}

TEST(Integrate, MatchesFineIntegratorOnSmoothMotion) {
  const SmoothMotion m;
  const auto stream = m.stream(0.0, 3.0, 200.0, kGravity);
  for (double t0 = 0.0; t0 < 2.9; t0 += 0.35) {
    const auto d = preintegrate(stream, t0, t0 + 0.1, kZero, kZero, ImuNoiseParams{});
    const auto fine = integrateFine(m, t0, t0 + 0.1, 2000);
    EXPECT_LT((d.alpha() - fine.alpha).norm(), 1e-5) << t0;
    EXPECT_LT((d.beta() - fine.beta).norm(), 1e-5) << t0;
    EXPECT_LT(angularDistance(d.gamma(), fine.gamma), 1e-6) << t0;
  }
}

TEST(Integrate, FineIntegratorAgreesWithClosedForm) {
  const SmoothMotion m;
  const double t0 = 0.7, t1 = 0.8;
  const auto fine = integrateFine(m, t0, t1, 2000);
  const auto s0 = m.state(t0), s1 = m.state(t1);
  const double dt = t1 - t0;
  const Eigen::Matrix3d Rt = s0.q.toRotationMatrix().transpose();
  EXPECT_LT((fine.alpha - Rt * (s1.p - s0.p - s0.v * dt - 0.5 * kGravity * dt * dt)).norm(), 1e-10);
  EXPECT_LT((fine.beta - Rt * (s1.v - s0.v - kGravity * dt)).norm(), 1e-10);
  EXPECT_LT(angularDistance(fine.gamma, Eigen::Quaterniond(s0.q.conjugate() * s1.q)), 1e-10);
}

TEST(Integrate, EulerSchemeIsLessAccurate) {
  const SmoothMotion m;
  const auto stream = m.stream(0.0, 1.0, 200.0, kGravity);
  const auto mid = preintegrate(stream, 0.2, 0.3, kZero, kZero, ImuNoiseParams{});
  const auto eul = preintegrate(stream, 0.2, 0.3, kZero, kZero, ImuNoiseParams{}, IntegrationScheme::kEuler);
  const auto fine = integrateFine(m, 0.2, 0.3, 2000);
  EXPECT_LT((mid.beta() - fine.beta).norm(), (eul.beta() - fine.beta).norm());
}

TEST(Integrate, DeltasIndependentOfWorldFrame) {
  SmoothMotion m;
  const auto a = m.stream(0.0, 0.5, 200.0, kGravity);
  // rotating the world (trajectory and gravity together) leaves body-frame IMU unchanged
  const Eigen::Quaterniond Q(Eigen::AngleAxisd(0.9, Eigen::Vector3d(1, 2, 3).normalized()));
  std::vector<ImuSample> b;
  for (const auto& s : a) {
    const Eigen::Quaterniond R = Q * m.orientation(s.t);
    b.push_back({s.t, s.gyro, R.conjugate() * (Q * m.acceleration(s.t) - Q * kGravity)});
  }
  const auto da = preintegrate(a, 0.0, 0.5, kZero, kZero, ImuNoiseParams{});
  const auto db = preintegrate(b, 0.0, 0.5, kZero, kZero, ImuNoiseParams{});
  EXPECT_LT((da.alpha() - db.alpha()).norm(), 1e-12);
  EXPECT_LT((da.beta() - db.beta()).norm(), 1e-12);
  EXPECT_LT(angularDistance(da.gamma(), db.gamma()), 1e-12);
}

TEST(SamplesBetween, InterpolatesEndpoints) {
  std::vector<ImuSample> s;
  for (int i = 0; i <= 10; ++i) s.push_back({0.1 * i, Eigen::Vector3d::Constant(i), Eigen::Vector3d::Constant(2 * i)});
  const auto out = samplesBetween(s, 0.25, 0.55);
  ASSERT_EQ(out.size(), 5u);
  EXPECT_DOUBLE_EQ(out.front().t, 0.25);
  EXPECT_NEAR(out.front().gyro.x(), 2.5, 1e-12);
  EXPECT_DOUBLE_EQ(out.back().t, 0.55);
  EXPECT_NEAR(out.back().accel.x(), 11.0, 1e-12);
  EXPECT_THROW(samplesBetween(s, 0.5, 1.5), std::invalid_argument);
}

TEST(BiasCorrection, ZeroChangeLeavesDelta) {
  const SmoothMotion m;
  const auto d = preintegrate(m.stream(0, 1, 200, kGravity), 0.1, 0.2, {0.01, 0, 0}, {0, 0.002, 0}, ImuNoiseParams{});
  const auto c = d.corrected(d.ba(), d.bg());
  EXPECT_EQ(c.alpha, d.alpha());
  EXPECT_EQ(c.beta, d.beta());
  EXPECT_LT(angularDistance(c.gamma, d.gamma()), 1e-15);
}

TEST(BiasCorrection, GyroBiasMatchesReintegration) {
  const SmoothMotion m;
  const auto stream = m.stream(0, 1, 200, kGravity);
  const auto d = preintegrate(stream, 0.3, 0.4, kZero, kZero, ImuNoiseParams{});
  const Eigen::Vector3d dbg(1e-3, 0, 0);
  const auto c = d.corrected(kZero, dbg);
  const auto re = preintegrate(stream, 0.3, 0.4, kZero, dbg, ImuNoiseParams{});
  EXPECT_LT(angularDistance(c.gamma, re.gamma()), 1e-6);
}

TEST(BiasCorrection, FirstOrderScaling) {
  const SmoothMotion m;
  const auto stream = m.stream(0, 1, 200, kGravity);
  const auto d = preintegrate(stream, 0.5, 0.6, kZero, kZero, ImuNoiseParams{});
  const Eigen::Vector3d dba(0.05, -0.03, 0.02), dbg(0.004, 0.003, -0.005);
  auto correction = [&](double s) {
    const auto c = d.corrected(s * dba, s * dbg);
    Eigen::Matrix<double, 9, 1> v;
    v << c.alpha - d.alpha(), c.beta - d.beta(), logQuat(Eigen::Quaterniond(d.gamma().conjugate() * c.gamma));
    return v;
  };
  auto error = [&](double s) {
    const auto c = d.corrected(s * dba, s * dbg);
    const auto re = preintegrate(stream, 0.5, 0.6, s * dba, s * dbg, ImuNoiseParams{});
    Eigen::Matrix<double, 9, 1> v;
    v << c.alpha - re.alpha(), c.beta - re.beta(), logQuat(Eigen::Quaterniond(re.gamma().conjugate() * c.gamma));
    return v.norm();
  };
  const double half_ratio = correction(1.0).norm() / correction(0.5).norm();
  EXPECT_GE(half_ratio, 1.99);
  EXPECT_LE(half_ratio, 2.01);
  const double quad_ratio = error(1.0) / error(0.5);
  EXPECT_GE(quad_ratio, 3.9);
  EXPECT_LE(quad_ratio, 4.1);
}

TEST(BiasCorrection, JacobiansMatchFiniteDifferences) {
  const SmoothMotion m;
  const auto stream = m.stream(0, 1, 200, kGravity);
  const auto d = preintegrate(stream, 0.2, 0.3, kZero, kZero, ImuNoiseParams{});
  const double h = 1e-6;
  for (int k = 0; k < 6; ++k) {
    Eigen::Vector3d ba = Eigen::Vector3d::Zero(), bg = Eigen::Vector3d::Zero();
    (k < 3 ? ba : bg)(k % 3) = h;
    const auto p = preintegrate(stream, 0.2, 0.3, ba, bg, ImuNoiseParams{});
    const auto n = preintegrate(stream, 0.2, 0.3, -ba, -bg, ImuNoiseParams{});
    const Eigen::Vector3d da = (p.alpha() - n.alpha()) / (2 * h);
    const Eigen::Vector3d db = (p.beta() - n.beta()) / (2 * h);
    const Eigen::Vector3d dg = (logQuat(Eigen::Quaterniond(d.gamma().conjugate() * p.gamma())) -
                                logQuat(Eigen::Quaterniond(d.gamma().conjugate() * n.gamma()))) / (2 * h);
    const int col = k % 3;
    const Eigen::Vector3d ja = k < 3 ? d.dAlphaDba().col(col) : d.dAlphaDbg().col(col);
    const Eigen::Vector3d jb = k < 3 ? d.dBetaDba().col(col) : d.dBetaDbg().col(col);
    EXPECT_LT((ja - da).norm(), 1e-6 * std::max(1.0, da.norm())) << k;
    EXPECT_LT((jb - db).norm(), 1e-6 * std::max(1.0, db.norm())) << k;
    if (k >= 3) EXPECT_LT((d.dGammaDbg().col(col) - dg).norm(), 1e-6) << k;
  }
}

TEST(Covariance, SymmetricPsdAndGrowing) {
  const SmoothMotion m;
  const auto stream = m.stream(0, 2.5, 200, kGravity);
  PreintegratedDelta d(kZero, kZero, ImuNoiseParams{});
  const auto s = samplesBetween(stream, 0.0, 2.0);
  double trace_1s = 0.0;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    d.integrate(s[i], s[i + 1]);
    EXPECT_LT((d.covariance() - d.covariance().transpose()).cwiseAbs().maxCoeff(), 1e-18);
    if (i % 40 == 0) EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix15d>(d.covariance()).eigenvalues()(0), -1e-12);
    if (std::abs(d.dt() - 1.0) < 1e-9) trace_1s = d.covariance().trace();
  }
  ASSERT_GT(trace_1s, 0.0);
  EXPECT_GT(d.covariance().trace(), trace_1s);
}

TEST(WeightMatrix, DiagonalInverse) {
  Vector15d sig2;
  for (int i = 0; i < 15; ++i) sig2(i) = 0.01 * (i + 1);
  const Matrix15d W = weightMatrix(sig2.asDiagonal().toDenseMatrix());
  EXPECT_LT((W - Matrix15d(sig2.cwiseInverse().asDiagonal())).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(WeightMatrix, ZeroNoiseIsFinite) {
  const SmoothMotion m;
  const auto d = preintegrate(m.stream(0, 1, 200, kGravity), 0.0, 0.5, kZero, kZero, noNoise());
  const Matrix15d W = weightMatrix(d.covariance());
  EXPECT_TRUE(W.allFinite());
  EXPECT_LT((W - W.transpose()).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(ImuResidual, ForwardSimulationGivesZero) {
  const SmoothMotion m;
  const auto stream = m.stream(0, 1, 200, kGravity);
  FrameState s0 = m.state(0.2);
  s0.ba = {0.02, -0.01, 0.03};
  s0.bg = {0.001, 0.002, -0.001};
  const auto d = preintegrate(stream, 0.2, 0.3, s0.ba, s0.bg, ImuNoiseParams{});
  const FrameState s1 = propagateState(s0, d, kGravity);
  EXPECT_LT(imuResidual(s0, s1, d, kGravity).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(ImuResidual, TruthStatesOnNoiseFreeImu) {
  const SmoothMotion m;
  const auto stream = m.stream(0, 2, 200, kGravity);
  const auto d = preintegrate(stream, 0.5, 0.6, kZero, kZero, ImuNoiseParams{});
  const auto r = imuResidual(m.state(0.5), m.state(0.6), d, kGravity);
  EXPECT_LT(r.cwiseAbs().maxCoeff(), 1e-5);  // bounded by the midpoint discretization
  EXPECT_EQ(r.segment<3>(kBa), Eigen::Vector3d::Zero());
  EXPECT_EQ(r.segment<3>(kBg), Eigen::Vector3d::Zero());
}

TEST(ImuResidual, StaticsCancelGravity) {
  PreintegratedDelta d(kZero, kZero, ImuNoiseParams{});
  d.integrate({0.0, kZero, {0, 0, 9.81}}, {1.0, kZero, {0, 0, 9.81}});
  FrameState s0, s1;
  s1.t = 1.0;
  EXPECT_LT(imuResidual(s0, s1, d, kGravity).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ImuResidual, RejectsNonUnitQuaternion) {
  PreintegratedDelta d(kZero, kZero, ImuNoiseParams{});
  d.integrate({0.0, kZero, kZero}, {1.0, kZero, kZero});
  FrameState s0, s1;
  s1.q.coeffs() *= 1.1;
  EXPECT_THROW(imuResidual(s0, s1, d, kGravity), std::invalid_argument);
}

TEST(ImuResidual, JacobiansMatchFiniteDifferences) {
  const SmoothMotion m;
  const auto stream = m.stream(0, 2, 200, kGravity);
  FrameState s0 = m.state(0.4), s1 = m.state(0.55);
  s0.ba = {0.01, 0.02, -0.01};
  s0.bg = {-0.002, 0.001, 0.003};
  s1.ba = {0.012, 0.018, -0.011};
  s1.bg = {-0.0015, 0.0012, 0.0028};
  s1.p += Eigen::Vector3d(0.01, -0.02, 0.005);
  const auto d = preintegrate(stream, 0.4, 0.55, kZero, kZero, ImuNoiseParams{});
  const auto J = imuResidualJacobians(s0, s1, d, kGravity);
  EXPECT_LT((J.residual - imuResidual(s0, s1, d, kGravity)).norm(), 1e-12);

  auto perturb = [](FrameState s, int k, double h) {
    Eigen::Vector3d e = Eigen::Vector3d::Zero();
    e(k % 3) = h;
    switch (k / 3) {
      case 0: s.p += e; break;
      case 1: s.q = (expQuat(e) * s.q).normalized(); break;
      case 2: s.v += e; break;
      case 3: s.ba += e; break;
      default: s.bg += e; break;
    }
    return s;
  };
  const double h = 1e-6;
  double worst = 0.0;
  for (int which = 0; which < 2; ++which)
    for (int k = 0; k < 15; ++k) {
      const FrameState a0 = which == 0 ? perturb(s0, k, h) : s0, b0 = which == 0 ? perturb(s0, k, -h) : s0;
      const FrameState a1 = which == 1 ? perturb(s1, k, h) : s1, b1 = which == 1 ? perturb(s1, k, -h) : s1;
      const Vector15d fd = (imuResidual(a0, a1, d, kGravity) - imuResidual(b0, b1, d, kGravity)) / (2 * h);
      const Vector15d an = which == 0 ? J.d_state0.col(k) : J.d_state1.col(k);
      const double rel = (fd - an).norm() / std::max(1e-3, fd.norm());
      worst = std::max(worst, rel);
    }
  EXPECT_LT(worst, 1e-4);
}

TEST(Initialize, StationaryLevel) {
  std::vector<ImuSample> s;
  for (int i = 0; i <= 100; ++i) s.push_back({0.005 * i, kZero, {0, 0, 9.81}});
  const auto init = initializeFromStatic(s, 9.81);
  EXPECT_LT(angularDistance(init.state.q, Eigen::Quaterniond::Identity()), 1e-12);
  EXPECT_EQ(init.state.bg, Eigen::Vector3d::Zero());
  EXPECT_EQ(init.state.ba, Eigen::Vector3d::Zero());
  EXPECT_EQ(init.gravity_w, kGravity);
}

TEST(Initialize, RecoversTiltAndGyroBias) {
  const Eigen::Matrix3d R = Eigen::AngleAxisd(10.0 * M_PI / 180.0, Eigen::Vector3d::UnitX()).toRotationMatrix();
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 0.02);
  std::vector<ImuSample> s;
  for (int i = 0; i <= 100; ++i)
    s.push_back({0.005 * i, Eigen::Vector3d(0.01, -0.02, 0.005) + Eigen::Vector3d(n(rng), n(rng), n(rng)) * 0.1,
                 R.transpose() * Eigen::Vector3d(0, 0, 9.81) + Eigen::Vector3d(n(rng), n(rng), n(rng))});
  const auto init = initializeFromStatic(s, 9.81);
  const Eigen::Vector3d rpy = init.state.q.toRotationMatrix().eulerAngles(2, 1, 0);
  EXPECT_NEAR(std::abs(rpy(2)) * 180.0 / M_PI, 10.0, 0.1);
  EXPECT_LT((init.state.bg - Eigen::Vector3d(0.01, -0.02, 0.005)).norm(), 1e-3);
  EXPECT_LT((init.state.q * Eigen::Vector3d::UnitZ() - R * Eigen::Vector3d::UnitZ()).norm(), 2e-3);
}

TEST(Initialize, ShakenStreamRejected) {
  std::vector<ImuSample> s;
  for (int i = 0; i <= 100; ++i) s.push_back({0.005 * i, kZero, {3.0 * std::sin(i * 0.7), 0, 9.81}});
  EXPECT_THROW(initializeFromStatic(s, 9.81), NotStationaryError);
}
