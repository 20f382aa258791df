#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include "manip/nlp.hpp"

using namespace manip;
using nlp::Matrix;
using nlp::NlpConfig;
using nlp::NlpProblem;
using nlp::NlpStatus;
using nlp::Vector;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

NlpProblem box_problem(int n, double lo, double hi) {
    NlpProblem p;
    p.n = n;
    p.lower = Vector::Constant(n, lo);
    p.upper = Vector::Constant(n, hi);
    p.x0 = Vector::Zero(n);
    return p;
}

}  // namespace

TEST_CASE("box clipping: min (x-3)^2 with x <= 2") {
    NlpProblem p = box_problem(1, -10.0, 2.0);
    p.objective = [](const Vector& x) { return (x[0] - 3.0) * (x[0] - 3.0); };
    p.objective_grad = [](const Vector& x) { return vec({2.0 * (x[0] - 3.0)}); };
    const auto r = nlp::solve(p);
    REQUIRE(r.status == NlpStatus::Converged);
    CHECK(r.x[0] == doctest::Approx(2.0).epsilon(1e-8));
    CHECK(r.objective == doctest::Approx(1.0));
}

TEST_CASE("equality constraint: min x^2 + y^2 s.t. x + y = 1") {
    NlpProblem p = box_problem(2, -10.0, 10.0);
    p.objective = [](const Vector& x) { return x.squaredNorm(); };
    p.objective_grad = [](const Vector& x) { return Vector(2.0 * x); };
    p.eq_residuals = [](const Vector& x) { return vec({x[0] + x[1] - 1.0}); };
    p.eq_jacobian = [](const Vector&) {
        Matrix j(1, 2);
        j << 1.0, 1.0;
        return j;
    };
    const auto r = nlp::solve(p);
    REQUIRE(r.status == NlpStatus::Converged);
    CHECK(r.x[0] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(r.x[1] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(r.max_eq_violation <= 1e-6);
}

TEST_CASE("inequality constraints activate only when violated") {
    // min (x-2)^2 s.t. x <= 1 expressed as g(x) = 1 - x >= 0.
    NlpProblem p = box_problem(1, -10.0, 10.0);
    p.objective = [](const Vector& x) { return (x[0] - 2.0) * (x[0] - 2.0); };
    p.ineq_residuals = [](const Vector& x) { return vec({1.0 - x[0]}); };
    const auto r = nlp::solve(p);
    REQUIRE(r.status == NlpStatus::Converged);
    CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-5));

    // An inactive inequality leaves the unconstrained optimum alone.
    NlpProblem q = box_problem(1, -10.0, 10.0);
    q.objective = [](const Vector& x) { return (x[0] + 1.0) * (x[0] + 1.0); };
    q.ineq_residuals = [](const Vector& x) { return vec({1.0 - x[0]}); };
    const auto rq = nlp::solve(q);
    REQUIRE(rq.status == NlpStatus::Converged);
    CHECK(rq.x[0] == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("inconsistent constraints end without convergence and report the gap") {
    // x >= 1 and x <= 0 cannot both hold; the residual gap is at least 0.5.
    NlpProblem p = box_problem(1, -5.0, 5.0);
    p.objective = [](const Vector&) { return 0.0; };
    p.ineq_residuals = [](const Vector& x) { return vec({x[0] - 1.0, -x[0]}); };
    NlpConfig cfg;
    cfg.max_outer = 12;
    const auto r = nlp::solve(p, cfg);
    CHECK(r.status != NlpStatus::Converged);
    CHECK(r.max_ineq_violation >= 0.5 - 1e-6);
}

TEST_CASE("NaN from a callable reports divergence") {
    NlpProblem p = box_problem(1, -5.0, 5.0);
    p.objective = [](const Vector& x) {
        return x[0] > 0.5 ? std::numeric_limits<double>::quiet_NaN() : x[0] * x[0] - x[0];
    };
    const auto r = nlp::solve(p);
    CHECK(r.status == NlpStatus::Diverged);
    CHECK(!r.message.empty());
}

TEST_CASE("malformed problems are rejected") {
    NlpProblem p;
    CHECK_THROWS_AS(nlp::solve(p), std::invalid_argument);
    p = box_problem(2, 0.0, 1.0);
    p.objective = [](const Vector&) { return 0.0; };
    p.x0 = vec({2.0, 0.5});  // outside the box
    CHECK_THROWS_AS(nlp::solve(p), std::invalid_argument);
    p.x0 = vec({0.5, 0.5});
    p.lower[1] = 2.0;  // empty box
    CHECK_THROWS_AS(nlp::solve(p), std::invalid_argument);
}

TEST_CASE("random convex QPs match the KKT linear-system solution") {
    std::mt19937 rng(20240818u);
    std::uniform_real_distribution<double> coef(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 9);       // n in [2, 10]
        const int m = 1 + static_cast<int>(rng() % static_cast<unsigned>(n - 1));
        Matrix r = Matrix::NullaryExpr(n, n, [&] { return coef(rng); });
        const Matrix p_mat = r.transpose() * r + 0.5 * Matrix::Identity(n, n);
        const Vector q = Vector::NullaryExpr(n, [&] { return coef(rng); });
        const Matrix a = Matrix::NullaryExpr(m, n, [&] { return coef(rng); });
        const Vector b = Vector::NullaryExpr(m, [&] { return 0.5 * coef(rng); });

        // Oracle: stationarity P x + q + A^T lam = 0 with A x = b.
        Matrix kkt = Matrix::Zero(n + m, n + m);
        kkt.topLeftCorner(n, n) = p_mat;
        kkt.topRightCorner(n, m) = a.transpose();
        kkt.bottomLeftCorner(m, n) = a;
        Vector rhs(n + m);
        rhs.head(n) = -q;
        rhs.tail(m) = b;
        const Vector sol = kkt.fullPivLu().solve(rhs);

        NlpProblem prob = box_problem(n, -50.0, 50.0);
        prob.objective = [p_mat, q](const Vector& x) {
            return 0.5 * x.dot(p_mat * x) + q.dot(x);
        };
        prob.objective_grad = [p_mat, q](const Vector& x) { return Vector(p_mat * x + q); };
        prob.eq_residuals = [a, b](const Vector& x) { return Vector(a * x - b); };
        prob.eq_jacobian = [a](const Vector&) { return a; };
        const auto res = nlp::solve(prob);
        REQUIRE(res.status == NlpStatus::Converged);
        CHECK((res.x - sol.head(n)).lpNorm<Eigen::Infinity>() <= 1e-5);
    }
}

TEST_CASE("merit decreases monotonically within each inner solve") {
    NlpProblem p = box_problem(3, -5.0, 5.0);
    p.objective = [](const Vector& x) {
        return std::pow(x[0] - 1.0, 2) + 2.0 * std::pow(x[1] + 0.5, 2) + x[2] * x[2] +
               0.3 * x[0] * x[1];
    };
    p.eq_residuals = [](const Vector& x) { return vec({x[0] + x[1] + x[2] - 1.0}); };
    NlpConfig cfg;
    std::vector<std::pair<int, double>> trace;  // (outer, merit)
    cfg.on_inner_step = [&](int outer, int, double merit) { trace.emplace_back(outer, merit); };
    const auto r = nlp::solve(p, cfg);
    REQUIRE(r.status == NlpStatus::Converged);
    REQUIRE(trace.size() > 3);
    for (size_t i = 1; i < trace.size(); ++i) {
        if (trace[i].first == trace[i - 1].first) {
            CHECK(trace[i].second <= trace[i - 1].second + 1e-12);
        }
    }
}

TEST_CASE("finite-difference gradients solve without analytic callables") {
    NlpProblem p = box_problem(2, -4.0, 4.0);
    p.objective = [](const Vector& x) {
        return std::pow(x[0] - 0.3, 2) + std::pow(x[1] + 0.7, 2) + 0.1 * std::sin(x[0]);
    };
    p.eq_residuals = [](const Vector& x) { return vec({x[0] - x[1] - 2.0}); };
    const auto r = nlp::solve(p);
    REQUIRE(r.status == NlpStatus::Converged);
    CHECK(r.max_eq_violation <= 1e-6);
    // Stationarity cross-check by finite differences of the Lagrangian along
    // the constraint manifold: parametrize x1 = x0 - 2.
    const auto reduced = [](double t) {
        return std::pow(t - 0.3, 2) + std::pow(t - 2.0 + 0.7, 2) + 0.1 * std::sin(t);
    };
    const double t = r.x[0];
    CHECK(std::abs(reduced(t + 1e-5) - reduced(t - 1e-5)) / 2e-5 <= 1e-3);
}

TEST_CASE("check_gradients accepts correct derivatives and flags wrong ones") {
    NlpProblem p = box_problem(2, -5.0, 5.0);
    p.objective = [](const Vector& x) { return x[0] * x[0] + 3.0 * x[0] * x[1]; };
    p.objective_grad = [](const Vector& x) { return vec({2.0 * x[0] + 3.0 * x[1], 3.0 * x[0]}); };
    p.eq_residuals = [](const Vector& x) { return vec({2.0 * x[0] - x[1] + 1.0}); };
    p.eq_jacobian = [](const Vector&) {
        Matrix j(1, 2);
        j << 2.0, -1.0;
        return j;
    };
    const Vector at = vec({0.7, -1.2});
    const auto good = nlp::check_gradients(p, at);
    CHECK(good.passed);
    CHECK(good.objective_error <= 1e-7);
    // A linear residual has a constant Jacobian; central differences are exact
    // up to roundoff.
    CHECK(good.eq_error <= 1e-9);

    p.objective_grad = [](const Vector& x) { return vec({2.0 * x[0], 3.0 * x[0]}); };  // wrong
    const auto bad = nlp::check_gradients(p, at);
    CHECK_FALSE(bad.passed);
    CHECK(bad.objective_error > 1e-5);
}

TEST_CASE("inequality jacobians feed the merit gradient") {
    // min -x - 2y s.t. x^2 + y^2 <= 1 via g = 1 - x^2 - y^2 >= 0; optimum on
    // the circle at (1, 2) / sqrt(5).
    NlpProblem p = box_problem(2, -2.0, 2.0);
    p.objective = [](const Vector& x) { return -x[0] - 2.0 * x[1]; };
    p.objective_grad = [](const Vector&) { return vec({-1.0, -2.0}); };
    p.ineq_residuals = [](const Vector& x) { return vec({1.0 - x.squaredNorm()}); };
    p.ineq_jacobian = [](const Vector& x) {
        Matrix j(1, 2);
        j << -2.0 * x[0], -2.0 * x[1];
        return j;
    };
    const auto check = nlp::check_gradients(p, vec({0.3, -0.4}));
    CHECK(check.passed);
    const auto r = nlp::solve(p);
    REQUIRE(r.status == NlpStatus::Converged);
    const double s = std::sqrt(5.0);
    CHECK(r.x[0] == doctest::Approx(1.0 / s).epsilon(1e-4));
    CHECK(r.x[1] == doctest::Approx(2.0 / s).epsilon(1e-4));
}
