#include <linobs/manifold.hpp>

#include <catch2/catch_amalgamated.hpp>

#include "support/oracles.hpp"

#include <cmath>
#include <random>

using namespace linobs;

namespace {

Vec random_tangent(const Manifold& m, const Vec& p, std::mt19937& rng, double mag) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    const Mat fr = m.frame(p);
    Vec c(m.dim());
    for (int i = 0; i < m.dim(); ++i) c(i) = gauss(rng);
    c *= mag / c.norm();
    return m.from_frame(fr, c);
}

Vec random_point(const Manifold& m, std::mt19937& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    switch (m.kind()) {
        case ManifoldKind::Euclidean: {
            Vec p(m.dim());
            for (int i = 0; i < m.dim(); ++i) p(i) = gauss(rng);
            return p;
        }
        case ManifoldKind::Sphere2: {
            Vec3 q(gauss(rng), gauss(rng), gauss(rng));
            return q.normalized();
        }
        case ManifoldKind::LieGroup: {
            Vec3 xi(gauss(rng), gauss(rng), gauss(rng));
            if (m.group() == GroupId::SO3) xi *= 1.5 / xi.norm();
            return m.exp(m.identity(), xi);
        }
    }
    return Vec();
}

double roundtrip_worst(const Manifold& m, int count, unsigned seed, double mag) {
    std::mt19937 rng(seed);
    double worst = 0.0;
    for (int i = 0; i < count; ++i) {
        const Vec p = random_point(m, rng);
        const Vec v = random_tangent(m, p, rng, mag);
        const Vec back = m.log(p, m.exp(p, v));
        worst = std::max(worst, (back - v).norm());
    }
    return worst;
}

}  // namespace

TEST_CASE("exp and log invert each other inside the guard radius") {
    std::mt19937 rng(42);
    REQUIRE(roundtrip_worst(Manifold::euclidean(3), 500, 1, 2.0) < 1e-12);
    REQUIRE(roundtrip_worst(Manifold::sphere2(), 500, 2, 2.5) < 1e-9);
    REQUIRE(roundtrip_worst(Manifold::lie_group(GroupId::SO3, 1.0), 500, 3, 2.5) < 1e-9);
    REQUIRE(roundtrip_worst(Manifold::lie_group(GroupId::UT3, 1.0), 500, 4, 4.0) < 1e-9);
}

TEST_CASE("guard radius violations throw instead of wrapping") {
    const Manifold s2 = Manifold::sphere2();
    const Vec p = Vec3::UnitZ();
    REQUIRE_THROWS_AS(s2.exp(p, Vec(M_PI * Vec3::UnitX())), GuardRadiusError);
    REQUIRE_NOTHROW(s2.exp(p, Vec(3.0 * Vec3::UnitX())));
    // log of a near-antipodal point exceeds the guard
    REQUIRE_THROWS_AS(s2.log(p, Vec((-Vec3::UnitZ() + 1e-5 * Vec3::UnitX()).normalized())),
                      GuardRadiusError);

    const Manifold so3 = Manifold::lie_group(GroupId::SO3, 1.0);
    REQUIRE_THROWS_AS(so3.exp(so3.identity(), Vec(3.2 * Vec3::UnitX())), GuardRadiusError);
    // the nilpotent group has no cut locus
    const Manifold ut3 = Manifold::lie_group(GroupId::UT3, 1.0);
    REQUIRE_NOTHROW(ut3.exp(ut3.identity(), Vec(Vec3(50.0, -30.0, 10.0))));
}

TEST_CASE("point validation accepts members and rejects off-manifold data") {
    const Manifold s2 = Manifold::sphere2();
    REQUIRE_NOTHROW(s2.validate_point(Vec(Vec3(0, 0, 1))));
    REQUIRE_THROWS_AS(s2.validate_point(Vec(Vec3(0, 0, 1.01))), NumericalError);
    REQUIRE_THROWS_AS(s2.validate_point(Vec::Ones(4)), DimensionError);

    const Manifold so3 = Manifold::lie_group(GroupId::SO3, 1.0);
    Vec g = so3.identity();
    REQUIRE_NOTHROW(so3.validate_point(g));
    g(0) = 1.01;
    REQUIRE_THROWS_AS(so3.validate_point(g), NumericalError);
    REQUIRE(so3.point_residual(so3.project_point(g)) < 1e-12);

    const Manifold ut3 = Manifold::lie_group(GroupId::UT3, 1.0);
    Vec h = ut3.identity();
    h(1) = 0.2;  // below-diagonal entry (column-major flat layout)
    REQUIRE_THROWS_AS(ut3.validate_point(h), NumericalError);
    REQUIRE(ut3.point_residual(ut3.project_point(h)) < 1e-12);
}

TEST_CASE("geodesics restart from interior points with transported velocity") {
    std::mt19937 rng(9);
    for (const Manifold& m : {Manifold::sphere2(), Manifold::lie_group(GroupId::SO3, 0.5),
                              Manifold::lie_group(GroupId::UT3, 0.0)}) {
        for (int i = 0; i < 50; ++i) {
            const Vec p = random_point(m, rng);
            const Vec v = random_tangent(m, p, rng, 1.0);
            const Vec whole = m.exp(p, v);
            const Vec mid = m.exp(p, 0.4 * v);
            const Vec v_mid = m.transport_geodesic(p, v, v, 0.4);
            const Vec rest = m.exp(mid, 0.6 * v_mid);
            REQUIRE((whole - rest).norm() < 1e-12);
        }
    }
}

TEST_CASE("parallel transport is isometric where the connection is metric") {
    std::mt19937 rng(10);
    for (const Manifold& m : {Manifold::sphere2(), Manifold::lie_group(GroupId::SO3, 0.0),
                              Manifold::lie_group(GroupId::SO3, 0.5),
                              Manifold::lie_group(GroupId::SO3, 1.0)}) {
        for (int i = 0; i < 50; ++i) {
            const Vec p = random_point(m, rng);
            const Vec dir = random_tangent(m, p, rng, 1.2);
            const Vec w1 = random_tangent(m, p, rng, 1.0);
            const Vec w2 = random_tangent(m, p, rng, 0.7);
            const Vec t1 = m.transport_geodesic(p, dir, w1);
            const Vec t2 = m.transport_geodesic(p, dir, w2);
            REQUIRE(std::abs(t1.dot(t2) - w1.dot(w2)) < 1e-12);
        }
    }
}

TEST_CASE("transport at mu=1 is the identity in trivialized coordinates") {
    std::mt19937 rng(11);
    for (GroupId id : {GroupId::SO3, GroupId::UT3}) {
        const Manifold m = Manifold::lie_group(id, 1.0);
        for (int i = 0; i < 30; ++i) {
            const Vec p = random_point(m, rng);
            const Vec dir = random_tangent(m, p, rng, 1.5);
            const Vec w = random_tangent(m, p, rng, 1.0);
            REQUIRE((m.transport_geodesic(p, dir, w) - w).norm() < 1e-15);
        }
    }
}

TEST_CASE("octant loop holonomy is a quarter turn") {
    const Manifold m = Manifold::sphere2();
    const Vec a = Vec3::UnitX();
    const Vec b = Vec3::UnitY();
    const Vec c = Vec3::UnitZ();
    auto leg = [&](const Vec& from, const Vec& to, const Vec& w) {
        return m.transport_geodesic(from, m.log(from, to), w);
    };
    const Vec w0 = Vec3::UnitZ();  // tangent at a
    const Vec w1 = leg(c, a, leg(b, c, leg(a, b, w0)));
    const double cosang = w0.dot(w1) / (w0.norm() * w1.norm());
    const double angle = std::acos(std::clamp(cosang, -1.0, 1.0));
    REQUIRE(std::abs(angle - M_PI / 2.0) < 1e-4);
    REQUIRE(std::abs(w1.norm() - 1.0) < 1e-12);
}

TEST_CASE("small loop holonomy equals enclosed area") {
    const Manifold m = Manifold::sphere2();
    std::mt19937 rng(12);
    for (int i = 0; i < 20; ++i) {
        const Vec p = random_point(m, rng);
        const Mat fr = m.frame(p);
        const Vec x = fr.col(0);
        const Vec y = fr.col(1);
        const double h = 0.2;
        const double angle = oracles::sphere_triangle_holonomy(m, p, x, y, h);
        const double area =
            oracles::spherical_area(Vec3(p), Vec3(m.exp(p, h * x)), Vec3(m.exp(p, h * y)));
        REQUIRE(std::abs(std::abs(angle) - area) < 1e-12);
        // orientation reversal flips the holonomy
        REQUIRE(std::abs(angle + oracles::sphere_triangle_holonomy(m, p, y, x, h)) < 1e-12);
    }
}

TEST_CASE("group curvature closed form matches the transport probe") {
    std::mt19937 rng(13);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (GroupId id : {GroupId::SO3, GroupId::UT3}) {
        for (double mu : {0.0, 0.5, 1.0}) {
            const Manifold m = Manifold::lie_group(id, mu);
            const oracles::ConnectionProbe probe{m};
            for (int i = 0; i < 20; ++i) {
                Vec x(3), y(3), z(3);
                for (int j = 0; j < 3; ++j) {
                    x(j) = unif(rng);
                    y(j) = unif(rng);
                    z(j) = unif(rng);
                }
                const Vec p = i % 2 == 0 ? m.identity() : random_point(m, rng);
                const Vec fd = probe.curvature(p, x, y, z);
                const Vec closed = m.curvature(p, x, y, z);
                REQUIRE((fd - closed).norm() < 1e-6);
                // algebraic form, from raw commutators
                const Vec3 alg = mu * (mu - 1.0) *
                                 oracles::commutator(id, oracles::commutator(id, x, y), Vec3(z));
                REQUIRE((closed - Vec(alg)).norm() < 1e-12);
            }
        }
    }
}

TEST_CASE("group torsion closed form matches the transport probe") {
    std::mt19937 rng(14);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (GroupId id : {GroupId::SO3, GroupId::UT3}) {
        for (double mu : {0.0, 0.5, 1.0}) {
            const Manifold m = Manifold::lie_group(id, mu);
            const oracles::ConnectionProbe probe{m};
            for (int i = 0; i < 20; ++i) {
                Vec x(3), y(3);
                for (int j = 0; j < 3; ++j) {
                    x(j) = unif(rng);
                    y(j) = unif(rng);
                }
                const Vec p = i % 2 == 0 ? m.identity() : random_point(m, rng);
                const Vec fd = probe.torsion(p, x, y);
                const Vec closed = m.torsion(p, x, y);
                REQUIRE((fd - closed).norm() < 1e-6);
                const Vec3 alg = (1.0 - 2.0 * mu) * oracles::commutator(id, x, y);
                REQUIRE((closed - Vec(alg)).norm() < 1e-12);
            }
        }
    }
}

TEST_CASE("torsion convention anchors") {
    const Manifold half = Manifold::lie_group(GroupId::SO3, 0.5);
    const Manifold plus = Manifold::lie_group(GroupId::SO3, 1.0);
    const Vec e1 = Vec3::UnitX();
    const Vec e2 = Vec3::UnitY();
    REQUIRE(half.torsion(half.identity(), e1, e2).norm() == 0.0);
    // at mu=1 the torsion is minus the bracket: tau(e1,e2) = -e3
    REQUIRE((plus.torsion(plus.identity(), e1, e2) + Vec(Vec3::UnitZ())).norm() == 0.0);
    // antisymmetry
    std::mt19937 rng(15);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (int i = 0; i < 20; ++i) {
        Vec x(3), y(3);
        for (int j = 0; j < 3; ++j) {
            x(j) = unif(rng);
            y(j) = unif(rng);
        }
        REQUIRE((plus.torsion(plus.identity(), x, y) + plus.torsion(plus.identity(), y, x))
                    .norm() < 1e-15);
    }
}

TEST_CASE("curvature is antisymmetric in the first two slots") {
    std::mt19937 rng(16);
    for (const Manifold& m : {Manifold::sphere2(), Manifold::lie_group(GroupId::SO3, 0.5),
                              Manifold::lie_group(GroupId::UT3, 0.5)}) {
        for (int i = 0; i < 20; ++i) {
            const Vec p = random_point(m, rng);
            const Vec x = random_tangent(m, p, rng, 1.0);
            const Vec y = random_tangent(m, p, rng, 1.0);
            const Vec z = random_tangent(m, p, rng, 1.0);
            REQUIRE((m.curvature(p, x, y, z) + m.curvature(p, y, x, z)).norm() < 1e-12);
        }
    }
}

TEST_CASE("the curvature tensor is parallel on every shipped geometry") {
    std::mt19937 rng(17);
    for (const Manifold& m : {Manifold::sphere2(), Manifold::lie_group(GroupId::SO3, 0.5),
                              Manifold::lie_group(GroupId::UT3, 0.5)}) {
        for (int i = 0; i < 10; ++i) {
            const Vec p = random_point(m, rng);
            const Vec d = random_tangent(m, p, rng, 1.0);
            const Vec d2 = random_tangent(m, p, rng, 1.0);
            const Vec x = random_tangent(m, p, rng, 1.0);
            const Vec y = random_tangent(m, p, rng, 1.0);
            const Vec z = random_tangent(m, p, rng, 1.0);
            REQUIRE(m.curvature_derivative(p, {d}, x, y, z).norm() < 1e-7);
            REQUIRE(m.curvature_derivative(p, {d, d2}, x, y, z).norm() < 1e-4);
        }
    }
    const Manifold m = Manifold::sphere2();
    REQUIRE_THROWS_AS(
        m.curvature_derivative(Vec(Vec3::UnitZ()), {Vec(3), Vec(3), Vec(3)}, Vec(3), Vec(3),
                               Vec(3)),
        ConfigError);
}

TEST_CASE("frames are orthonormal and tangent") {
    std::mt19937 rng(18);
    for (const Manifold& m : {Manifold::euclidean(3), Manifold::sphere2(),
                              Manifold::lie_group(GroupId::SO3, 1.0)}) {
        for (int i = 0; i < 20; ++i) {
            const Vec p = random_point(m, rng);
            const Mat fr = m.frame(p);
            REQUIRE(fr.cols() == m.dim());
            REQUIRE((fr.transpose() * fr - Mat::Identity(m.dim(), m.dim())).norm() < 1e-12);
            for (int j = 0; j < fr.cols(); ++j) {
                REQUIRE(m.tangency_residual({p, fr.col(j)}) < 1e-12);
            }
            const Vec w = random_tangent(m, p, rng, 1.3);
            REQUIRE((m.from_frame(fr, m.to_frame(fr, w)) - w).norm() < 1e-12);
        }
    }
}

TEST_CASE("normal frames stay orthonormal under transport") {
    const Manifold m = Manifold::sphere2();
    std::mt19937 rng(19);
    for (int i = 0; i < 20; ++i) {
        const Vec p = random_point(m, rng);
        const Vec q = random_point(m, rng);
        if (m.distance(p, q) >= m.guard_radius()) continue;
        const Mat f = m.normal_frame(p, m.frame(p), q);
        REQUIRE((f.transpose() * f - Mat::Identity(2, 2)).norm() < 1e-12);
        for (int j = 0; j < f.cols(); ++j) {
            REQUIRE(m.tangency_residual({q, f.col(j)}) < 1e-12);
        }
    }
}

TEST_CASE("group operations satisfy the group axioms") {
    std::mt19937 rng(20);
    for (GroupId id : {GroupId::SO3, GroupId::UT3}) {
        const Manifold m = Manifold::lie_group(id, 1.0);
        for (int i = 0; i < 30; ++i) {
            const Vec g = random_point(m, rng);
            const Vec h = random_point(m, rng);
            const Vec k = random_point(m, rng);
            REQUIRE((m.compose(m.compose(g, h), k) - m.compose(g, m.compose(h, k))).norm() <
                    1e-12);
            REQUIRE((m.compose(g, m.identity()) - g).norm() < 1e-15);
            REQUIRE((m.compose(g, m.inverse(g)) - m.identity()).norm() < 1e-12);
        }
    }
}

TEST_CASE("nilpotent exponential agrees with the dense matrix exponential") {
    std::mt19937 rng(21);
    std::uniform_real_distribution<double> unif(-2.0, 2.0);
    const Manifold m = Manifold::lie_group(GroupId::UT3, 1.0);
    for (int i = 0; i < 50; ++i) {
        const Vec3 xi(unif(rng), unif(rng), unif(rng));
        const Mat3 got = m.algebra_exp(xi);
        const Mat want = oracles::expm(Mat(oracles::hat_ut3(xi)));
        REQUIRE((got - want).norm() < 1e-13);
        REQUIRE((m.algebra_log_mat(got) - Vec(xi)).norm() < 1e-13);
    }
}

TEST_CASE("bracket matches the matrix commutator") {
    std::mt19937 rng(22);
    std::uniform_real_distribution<double> unif(-1.5, 1.5);
    for (GroupId id : {GroupId::SO3, GroupId::UT3}) {
        const Manifold m = Manifold::lie_group(id, 1.0);
        for (int i = 0; i < 30; ++i) {
            Vec a(3), b(3);
            for (int j = 0; j < 3; ++j) {
                a(j) = unif(rng);
                b(j) = unif(rng);
            }
            REQUIRE((m.bracket(a, b) - Vec(oracles::commutator(id, a, b))).norm() < 1e-14);
        }
    }
}

TEST_CASE("left trivialization inverts left translation of velocities") {
    std::mt19937 rng(23);
    for (GroupId id : {GroupId::SO3, GroupId::UT3}) {
        const Manifold m = Manifold::lie_group(id, 1.0);
        for (int i = 0; i < 20; ++i) {
            const Vec g = random_point(m, rng);
            const Vec xi = random_tangent(m, g, rng, 1.0);
            const Mat3 gm = detail::mat_of(g);
            const Vec gdot = detail::flat_of(Mat3(gm * m.hat(xi)));
            REQUIRE((m.left_trivialize(g, gdot) - xi).norm() < 1e-12);
        }
    }
}

TEST_CASE("affine transformation check separates isometries from distortions") {
    const Manifold s2 = Manifold::sphere2();
    const Vec base = Vec3(1.0, 1.0, 0.3).normalized();

    const Mat3 rot = oracles::rodrigues(Vec3(0.4, -0.2, 0.7));
    auto rotation = [&](const Vec& q) { return Vec(rot * Vec3(q)); };
    const AffineCheckResult good = is_affine_transformation(s2, rotation, base, 0.4, 1e-8);
    REQUIRE(good.pass);

    auto squash = [&](const Vec& q) {
        Vec3 w(q(0), 0.6 * q(1), q(2));
        return Vec(w.normalized());
    };
    const AffineCheckResult bad = is_affine_transformation(s2, squash, base, 0.4, 1e-8);
    REQUIRE_FALSE(bad.pass);
    REQUIRE(bad.max_deviation > 1e-3);

    // left and right translations preserve one-parameter-subgroup geodesics
    const Manifold so3 = Manifold::lie_group(GroupId::SO3, 1.0);
    const Vec a = so3.exp(so3.identity(), Vec(Vec3(0.3, 0.1, -0.2)));
    auto left = [&](const Vec& g) { return so3.compose(a, g); };
    auto right = [&](const Vec& g) { return so3.compose(g, a); };
    REQUIRE(is_affine_transformation(so3, left, so3.identity(), 0.4, 1e-8).pass);
    REQUIRE(is_affine_transformation(so3, right, so3.identity(), 0.4, 1e-8).pass);
}
