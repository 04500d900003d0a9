#include <linobs/observer.hpp>

#include <catch2/catch_amalgamated.hpp>

#include "support/oracles.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <random>
#include <sstream>

using namespace linobs;

namespace {

// Scalar Riccati fixed point for one propagate/update cycle: q is the process
// variance accumulated between updates, r the measurement variance.
double steady_posterior(double q, double r) { return oracles::riccati_posterior(q, r); }

ObserverConfig quiet_config() {
    ObserverConfig cfg;
    cfg.noise_scale = 0.0;
    return cfg;
}

}  // namespace

TEST_CASE("quotient projection extracts the body-frame gravity direction") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const Vec3 w(gauss(rng), gauss(rng), gauss(rng));
        const Mat3 r = rodrigues_exp(w);
        const Vec3 q = quotient_project(r);
        REQUIRE(std::abs(q.norm() - 1.0) < 1e-12);
        REQUIRE((q - r.transpose() * Vec3::UnitZ()).norm() < 1e-12);

        // inertial yaw (rotation about gravity) is invisible in the quotient
        const double alpha = gauss(rng);
        const Mat3 yawed = rodrigues_exp(alpha * Vec3::UnitZ()) * r;
        REQUIRE((quotient_project(yawed) - q).norm() < 1e-12);

        // a body-frame rotation is generally visible
        const Mat3 rolled = r * rodrigues_exp(Vec3(0.3, 0.0, 0.0));
        REQUIRE((quotient_project(rolled) - q).norm() > 1e-3);
    }
}

TEST_CASE("retraction names parse") {
    REQUIRE(retraction_from_string("geodesic") == Retraction::Geodesic);
    REQUIRE(retraction_from_string("chordal") == Retraction::Chordal);
    REQUIRE_THROWS_AS(retraction_from_string("projective"), ConfigError);
}

TEST_CASE("propagate follows the measured rate exactly and inflates covariance") {
    const Vec3 q0 = Vec3(0.2, -0.3, 1.0).normalized();
    const double v0 = 0.5;
    AttitudeObserver obs(q0, v0);

    const Vec3 w(0.4, -0.1, 0.25);
    const double dt = 0.01;
    const double sig = 0.02;
    const int steps = 137;
    for (int k = 0; k < steps; ++k) obs.propagate(w, dt, sig);

    const Vec3 expected = oracles::rodrigues(-steps * dt * w) * q0;
    REQUIRE((obs.estimate() - expected.normalized()).norm() < 1e-12);

    // isotropic tangent diffusion adds dt*sig^2 per axis per step
    const double expected_trace = 2.0 * (v0 + steps * dt * sig * sig);
    REQUIRE(obs.covariance().trace() == Catch::Approx(expected_trace).margin(1e-12));

    // covariance stays symmetric with the estimate in its null space
    const Mat3 p = obs.covariance();
    REQUIRE((p - p.transpose()).norm() < 1e-14);
    REQUIRE((p * obs.estimate()).norm() < 1e-12);
}

TEST_CASE("single update matches the scalar Kalman gain") {
    const Manifold sphere = Manifold::sphere2();
    const Vec3 q0 = Vec3::UnitZ();
    const double v = 1.2;
    const double sig_a = 0.02;
    const double r = sig_a * sig_a;
    const double gain = v / (v + r);

    // measurement a fixed angle away along a tangent direction
    const double theta = 0.3;
    const Vec3 u = Vec3::UnitX();
    const Vec3 q_meas = sphere.exp(Vec(q0), Vec(theta * u));

    AttitudeObserver obs(q0, v, Retraction::Geodesic);
    const auto diag = obs.update(q_meas, sig_a, 1.5);

    REQUIRE(diag.t == 1.5);
    REQUIRE(diag.correction_norm == Catch::Approx(gain * theta).epsilon(1e-12));
    REQUIRE(angle_between(obs.estimate(), q0) == Catch::Approx(gain * theta).epsilon(1e-10));
    REQUIRE(angle_between(obs.estimate(), q_meas) ==
            Catch::Approx((1.0 - gain) * theta).margin(1e-10));

    // Joseph-form posterior collapses to vr/(v+r) per tangent axis
    const double post = v * r / (v + r);
    REQUIRE(obs.covariance().trace() == Catch::Approx(2.0 * post).epsilon(1e-10));
    REQUIRE((obs.covariance() * obs.estimate()).norm() < 1e-12);
}

TEST_CASE("update with a confirming measurement leaves the estimate alone") {
    const Vec3 q0 = Vec3(0.1, 0.4, 0.9).normalized();
    AttitudeObserver obs(q0, 0.8);
    const auto diag = obs.update(q0, 0.02);
    REQUIRE(diag.correction_norm < 1e-14);
    REQUIRE(diag.retraction_gap < 1e-14);
    REQUIRE((obs.estimate() - q0).norm() < 1e-14);
    // the covariance still contracts
    const double post = 0.8 * 4e-4 / (0.8 + 4e-4);
    REQUIRE(obs.covariance().trace() == Catch::Approx(2.0 * post).epsilon(1e-10));
}

TEST_CASE("noise-free run converges well below the design tolerance") {
    const auto run = run_observer(quiet_config());
    REQUIRE(run.err_angle.front() == Catch::Approx(M_PI / 3.0).epsilon(1e-12));
    REQUIRE(run.final_error() < 1e-5);
    // the first update already removes almost all of the initial error
    REQUIRE(run.rms_error(5.0) < 1e-3);
}

TEST_CASE("both retractions converge and their per-update gap is third order") {
    for (const Retraction ret : {Retraction::Geodesic, Retraction::Chordal}) {
        ObserverConfig cfg = quiet_config();
        cfg.retraction = ret;
        const auto run = run_observer(cfg);
        REQUIRE(run.final_error() < 1e-5);
        REQUIRE_FALSE(run.updates.empty());
        for (const auto& d : run.updates) {
            // geodesic vs chordal step differ by |dq| - atan|dq| <= 0.4 |dq|^3
            REQUIRE(d.retraction_gap <=
                    0.4 * std::pow(d.correction_norm, 3) + 1e-13);
        }
    }
}

TEST_CASE("covariance trace follows the scalar Riccati recursion") {
    ObserverConfig cfg;  // noise does not enter the covariance at all
    const auto run = run_observer(cfg);

    const double dt = 1.0 / cfg.gyro_rate_hz;
    const int per_update = 10;
    const double q_step = dt * cfg.gyro_std * cfg.gyro_std;
    const double r = cfg.accel_angle_std * cfg.accel_angle_std;

    REQUIRE(run.p_trace.front() == Catch::Approx(2.0 * cfg.initial_variance).margin(1e-12));

    double p = cfg.initial_variance;
    for (std::size_t i = 1; i < run.times.size(); ++i) {
        p += q_step;
        if (i % per_update == 0) p = p * r / (p + r);
        REQUIRE(run.p_trace[i] == Catch::Approx(2.0 * p).margin(1e-10));
    }

    // and the recursion itself has the closed-form fixed point
    const double p_plus = steady_posterior(per_update * q_step, r);
    REQUIRE(run.p_trace.back() == Catch::Approx(2.0 * p_plus).margin(1e-8));
}

TEST_CASE("noisy run settles at the steady covariance level") {
    ObserverConfig cfg;  // defaults: seed 42, unit noise scale
    const auto run = run_observer(cfg);

    const double q_cycle = 10.0 * (1.0 / cfg.gyro_rate_hz) * cfg.gyro_std * cfg.gyro_std;
    const double r = cfg.accel_angle_std * cfg.accel_angle_std;
    const double p_plus = steady_posterior(q_cycle, r);
    const double p_minus = p_plus + q_cycle;

    // predicted rms angle error from the per-axis steady band [p+, p-]
    const double rms_oracle = std::sqrt(p_plus + p_minus);
    const double rms = run.rms_error(10.0);
    REQUIRE(rms > 0.7 * rms_oracle);
    REQUIRE(rms < 1.5 * rms_oracle);
    REQUIRE(run.final_error() < 5.0 * rms_oracle);
}

TEST_CASE("runs are reproducible and seed-sensitive") {
    ObserverConfig cfg;
    const auto a = run_observer(cfg);
    const auto b = run_observer(cfg);
    REQUIRE(a.times.size() == b.times.size());
    for (std::size_t i = 0; i < a.times.size(); ++i) {
        REQUIRE(a.q_est[i] == b.q_est[i]);
        REQUIRE(a.omega_meas[i] == b.omega_meas[i]);
        REQUIRE(a.p_trace[i] == b.p_trace[i]);
    }

    cfg.seed = 43;
    const auto c = run_observer(cfg);
    REQUIRE((a.omega_meas[1] - c.omega_meas[1]).norm() > 0.0);
}

TEST_CASE("large initial error collapses within a second") {
    ObserverConfig cfg = quiet_config();
    cfg.initial_error_rad = M_PI / 2.0;
    cfg.duration = 1.0;
    const auto run = run_observer(cfg);
    REQUIRE(run.updates.size() == 10);
    REQUIRE(run.final_error() < 1e-3);
}

TEST_CASE("initial error axis is projected into the horizontal plane") {
    ObserverConfig cfg = quiet_config();
    cfg.initial_error_axis = Vec3(1.0, 0.0, 1.0);
    const auto tilted = run_observer(cfg);
    cfg.initial_error_axis = Vec3(1.0, 0.0, 0.0);
    const auto flat = run_observer(cfg);
    REQUIRE((tilted.q_est.front() - flat.q_est.front()).norm() < 1e-12);

    cfg.initial_error_axis = Vec3(0.0, 0.0, 1.0);
    REQUIRE_THROWS_AS(run_observer(cfg), ConfigError);
}

TEST_CASE("run configuration is validated") {
    ObserverConfig cfg;
    cfg.accel_rate_hz = 30.0;  // 100/30 is not an integer
    REQUIRE_THROWS_AS(run_observer(cfg), ConfigError);

    cfg = ObserverConfig{};
    cfg.duration = 0.105;  // not a multiple of the 10 ms gyro period
    REQUIRE_THROWS_AS(run_observer(cfg), ConfigError);

    cfg = ObserverConfig{};
    cfg.gyro_rate_hz = -1.0;
    REQUIRE_THROWS_AS(run_observer(cfg), ConfigError);
}

TEST_CASE("covariance stays positive semidefinite in the tangent plane") {
    ObserverConfig cfg;
    cfg.duration = 5.0;
    const auto run = run_observer(cfg);

    // replay the final state through the class interface to inspect P
    AttitudeObserver obs(run.q_est.back(), 1.0);
    const Mat3 p0 = obs.covariance();
    Eigen::SelfAdjointEigenSolver<Mat3> eig(p0);
    REQUIRE(eig.eigenvalues().minCoeff() > -1e-12);

    // and the recorded traces are never negative
    for (double tr : run.p_trace) REQUIRE(tr >= 0.0);
}

TEST_CASE("csv export writes one row per sample") {
    ObserverConfig cfg = quiet_config();
    cfg.duration = 0.2;
    const auto run = run_observer(cfg);
    std::ostringstream out;
    write_observer_csv(run, out);

    std::istringstream in(out.str());
    std::string line;
    REQUIRE(std::getline(in, line));
    REQUIRE(line ==
            "t,qx_true,qy_true,qz_true,qx_est,qy_est,qz_est,err_angle_rad,p_trace,wx,wy,wz");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (!line.empty()) ++rows;
    }
    REQUIRE(rows == run.times.size());
    REQUIRE(rows == 21);  // 0.2 s at 100 Hz plus the initial sample
}

TEST_CASE("rms window past the end of the run is empty") {
    ObserverConfig cfg = quiet_config();
    cfg.duration = 1.0;
    const auto run = run_observer(cfg);
    REQUIRE(run.rms_error(2.0) == 0.0);
}
