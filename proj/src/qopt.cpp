#include "manip/qopt.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace manip::qopt {
namespace {

using nlp::Matrix;
using nlp::Vector;

/// Smoothing inside the cone margin only; the outer |c v| <= eps splits into
/// two smooth inequalities instead.
constexpr double kSmoothDelta = 1e-8;
/// Solver-side pull of each alpha toward its stance mean. Keeps sticking
/// stances interior to the complementarity region; excluded from the
/// reported objective.
constexpr double kAlphaAnchor = 1e-4;
const Vec3 kTrackWeight(1.0, 1.0, 0.3);

double smooth_abs(double x) { return std::sqrt(x * x + kSmoothDelta); }
double smooth_abs_deriv(double x) { return x / smooth_abs(x); }

size_t sz(int k) { return static_cast<size_t>(k); }

/// One robot contact frozen by the schedule: body-frame segment data of the
/// assigned surface.
struct RobotContact {
    int t = 0, i = 0, surf = 0;
    Vec2 a_b = Vec2::Zero(), n_b = Vec2::Zero(), t_b = Vec2::Zero();
    double length = 0.0, mu = 0.0;
};

/// One extrinsic contact frozen by the kinematic contact map. The halfspace
/// frame is environment-fixed; the arm to the com is R(theta) d_b.
struct EnvContact {
    int t = 0, v = 0;
    Vec2 v_b = Vec2::Zero(), d_b = Vec2::Zero();
    Vec2 n_w = Vec2::Zero(), t_w = Vec2::Zero();
    double mu = 0.0;
};

/// Complementarity row group: contact list index plus the velocity stencil
/// (steps ta, ta + 1; backward difference at the last step).
struct CompGroup {
    int c = 0;
    int ta = 0;
};

struct Build {
    const Scenario* sc = nullptr;
    kopt::KinematicsSolution kin;
    copt::ContactSchedule sched;
    QoptOptions opt;
    std::shared_ptr<double> eps = std::make_shared<double>(1e-2);
    QoptLayout L;

    int T = 0, S = 0, I = 0, V = 0;
    double h = 0.0, mass = 0.0, cap = 0.0, fcap = 0.0, amax = 0.0, r_obj = 0.0;
    double len0 = 1.0, f0 = 1.0;  // solver units: object radius and weight

    std::vector<RobotContact> rcs;
    std::vector<double> a_mean;  // [rcs] stance-mean schedule alpha
    std::vector<int> rc_of;      // [t*I + i] index into rcs or -1
    std::vector<EnvContact> ecs;
    std::vector<int> ec_of;  // [t*V + v] index into ecs or -1
    std::vector<CompGroup> env_comp, rob_comp;
    std::vector<double> radius;  // [t] com distance of the nearest active contact
    std::vector<Pose2> ref;
    int eq_rows = 0, ineq_rows = 0;

    Build(const Scenario& scenario, const kopt::KinematicsSolution& k,
          const copt::ContactSchedule& schedule, const QoptOptions& options)
        : sc(&scenario), kin(k), sched(schedule), opt(options) {
        T = scenario.horizon;
        S = T + 1;
        I = scenario.num_robots();
        V = scenario.object.num_vertices();
        h = scenario.step;
        mass = scenario.object.mass;
        cap = 5.0 * mass * 9.81;
        fcap = 10.0 * mass * 9.81;
        for (const Surface& sf : scenario.object.surfaces) {
            amax = std::max(amax, sf.length);
            r_obj = std::max(r_obj, std::max(sf.a.norm(), sf.b.norm()));
        }
        len0 = std::max(r_obj, 1e-3);
        f0 = std::max(mass * 9.81, 1e-6);
        validate();
        freeze_contacts();
        layout();
        *eps = opt.eps_schedule.front();
        ref = kopt::reference_trajectory(scenario);
    }

    void validate() const {
        if (opt.robustness_weight < 0.0) {
            throw std::invalid_argument("robustness weight must be nonnegative");
        }
        if (opt.eps_schedule.empty()) {
            throw std::invalid_argument("eps schedule must be nonempty");
        }
        for (double e : opt.eps_schedule) {
            if (e <= 0.0) throw std::invalid_argument("eps schedule must be positive");
        }
        if (static_cast<int>(kin.poses.size()) != S) {
            throw std::invalid_argument("kinematic solution horizon mismatch");
        }
        if (static_cast<int>(kin.contact_map.size()) != V ||
            (V > 0 && static_cast<int>(kin.contact_map.front().size()) != S)) {
            throw std::invalid_argument("contact map dimensions mismatch");
        }
        const int P = sc->object.num_surfaces();
        bool ok = static_cast<int>(sched.z.size()) == S &&
                  static_cast<int>(sched.alpha.size()) == S &&
                  static_cast<int>(sched.lambda.size()) == S &&
                  static_cast<int>(sched.f.size()) == S;
        for (int t = 0; ok && t < S; ++t) {
            ok = static_cast<int>(sched.z[sz(t)].size()) == I &&
                 static_cast<int>(sched.alpha[sz(t)].size()) == I &&
                 static_cast<int>(sched.lambda[sz(t)].size()) == I &&
                 static_cast<int>(sched.f[sz(t)].size()) == V;
            for (int i = 0; ok && i < I; ++i) {
                ok = static_cast<int>(sched.z[sz(t)][sz(i)].size()) == P &&
                     static_cast<int>(sched.lambda[sz(t)][sz(i)].size()) == P;
            }
        }
        if (!ok) throw std::invalid_argument("schedule dimensions mismatch");
        if (!sched.pose_shift.empty() && static_cast<int>(sched.pose_shift.size()) != S) {
            throw std::invalid_argument("schedule pose shift horizon mismatch");
        }
    }

    bool active(int v, int t) const { return kin.contact_map[sz(v)][sz(t)]; }

    void freeze_contacts() {
        rc_of.assign(sz(S * I), -1);
        ec_of.assign(sz(S * V), -1);
        radius.assign(sz(S), 0.0);
        for (int t = 0; t < S; ++t) {
            for (int i = 0; i < I; ++i) {
                const int p = sched.assigned_surface(t, i);
                if (p < 0) continue;
                const Surface& sf = sc->object.surfaces[sz(p)];
                rc_of[sz(t * I + i)] = static_cast<int>(rcs.size());
                rcs.push_back({t, i, p, sf.a, sf.outward_normal, sf.tangent(), sf.length,
                               sc->robots[sz(i)].mu});
            }
            double best = 0.0;
            bool any = false;
            for (int v = 0; v < V; ++v) {
                if (!active(v, t)) continue;
                const int j = closest_halfspace(*sc, kin.poses[sz(t)], v);
                const Halfspace& hs = sc->env.halfspaces[sz(j)];
                const Vec2 v_b = sc->object.vertices[sz(v)];
                ec_of[sz(t * V + v)] = static_cast<int>(ecs.size());
                ecs.push_back({t, v, v_b, Vec2(v_b - sc->object.com), hs.normal, hs.tangent(),
                               sc->object.mu_env[sz(v)]});
                const double d = (v_b - sc->object.com).norm();
                best = any ? std::min(best, d) : d;
                any = true;
            }
            radius[sz(t)] = any ? best : 0.0;
        }
        for (int c = 0; c < static_cast<int>(ecs.size()); ++c) {
            env_comp.push_back({c, std::min(ecs[sz(c)].t, T - 1)});
        }
        for (int c = 0; c < static_cast<int>(rcs.size()); ++c) {
            const RobotContact& rc = rcs[sz(c)];
            const int ta = std::min(rc.t, T - 1);
            const int other = rc.t == ta ? ta + 1 : ta;
            const int oc = rc_of[sz(other * I + rc.i)];
            // Relative slip is undefined across a stance change; skip unless
            // the neighbouring step holds the same surface.
            if (oc >= 0 && rcs[sz(oc)].surf == rc.surf) rob_comp.push_back({c, ta});
        }
        // Stance-mean schedule alpha per robot contact; the solver anchors
        // the flat alpha directions there so sticking stances start and stay
        // inside the complementarity region.
        a_mean.assign(rcs.size(), 0.0);
        for (int i = 0; i < I; ++i) {
            int t = 0;
            while (t < S) {
                const int c0 = rc_of[sz(t * I + i)];
                if (c0 < 0) {
                    ++t;
                    continue;
                }
                int end = t;
                double sum = 0.0;
                while (end < S) {
                    const int c = rc_of[sz(end * I + i)];
                    if (c < 0 || rcs[sz(c)].surf != rcs[sz(c0)].surf) break;
                    sum += sched.alpha[sz(end)][sz(i)];
                    ++end;
                }
                const double mean = sum / (end - t);
                for (int k = t; k < end; ++k) a_mean[sz(rc_of[sz(k * I + i)])] = mean;
                t = end;
            }
        }
    }

    void layout() {
        L.steps = S;
        L.robots = I;
        L.vertices = V;
        L.q0 = 0;
        L.qd0 = 3 * S;
        L.p0 = L.qd0 + 3 * T;
        L.a0 = L.p0 + 2 * S * I;
        int next = L.a0 + S * I;
        L.lam.assign(sz(S * I), -1);
        for (const RobotContact& rc : rcs) {
            L.lam[sz(rc.t * I + rc.i)] = next;
            next += 2;
        }
        L.fv.assign(sz(S * V), -1);
        for (const EnvContact& ec : ecs) {
            L.fv[sz(ec.t * V + ec.v)] = next;
            next += 2;
        }
        L.n = next;
        eq_rows = 3 * T + 2 * static_cast<int>(rcs.size()) + 3 * S;
        ineq_rows = 4 * T * I + 2 * static_cast<int>(rcs.size()) +
                    3 * static_cast<int>(ecs.size()) +
                    3 * static_cast<int>(env_comp.size() + rob_comp.size());
    }

    Vec2 trans(const Vector& x, int t) const { return {x[L.q(t, 0)], x[L.q(t, 1)]}; }

    // --- objective -------------------------------------------------------

    double objective(const Vector& x) const {
        double total = 0.0;
        for (int t = 0; t < S; ++t) {
            const Vec3 d = Vec3(x[L.q(t, 0)], x[L.q(t, 1)], x[L.q(t, 2)]) - ref[sz(t)].vec();
            total += kTrackWeight.dot(d.cwiseProduct(d));
            const double c = std::cos(x[L.q(t, 2)]);
            total -= opt.robustness_weight * radius[sz(t)] * c * c;
        }
        return total;
    }

    Vector objective_grad(const Vector& x) const {
        Vector g = Vector::Zero(L.n);
        for (int t = 0; t < S; ++t) {
            for (int k = 0; k < 3; ++k) {
                g[L.q(t, k)] = 2.0 * kTrackWeight[k] * (x[L.q(t, k)] - ref[sz(t)].vec()[k]);
            }
            g[L.q(t, 2)] += opt.robustness_weight * radius[sz(t)] * std::sin(2.0 * x[L.q(t, 2)]);
        }
        return g;
    }

    // --- equalities ------------------------------------------------------

    Vector eq(const Vector& x) const {
        Vector r(eq_rows);
        int row = 0;
        for (int t = 0; t < T; ++t) {
            for (int k = 0; k < 3; ++k) {
                r[row++] = x[L.q(t + 1, k)] - x[L.q(t, k)] - h * x[L.qd(t, k)];
            }
        }
        for (const RobotContact& rc : rcs) {
            const Mat2 R = rotation2(x[L.q(rc.t, 2)]);
            const Vec2 world = trans(x, rc.t) + R * (rc.a_b + x[L.a(rc.t, rc.i)] * rc.t_b);
            r[row++] = x[L.p(rc.t, rc.i, 0)] - world.x();
            r[row++] = x[L.p(rc.t, rc.i, 1)] - world.y();
        }
        for (int t = 0; t < S; ++t) {
            const Mat2 R = rotation2(x[L.q(t, 2)]);
            Vec2 sum = mass * sc->gravity;
            for (int i = 0; i < I; ++i) {
                const int off = L.lam[sz(t * I + i)];
                if (off < 0) continue;
                const RobotContact& rc = rcs[sz(rc_of[sz(t * I + i)])];
                sum += R * (-x[off] * rc.n_b + x[off + 1] * rc.t_b);
            }
            for (int v = 0; v < V; ++v) {
                const int off = L.fv[sz(t * V + v)];
                if (off >= 0) sum += Vec2(x[off], x[off + 1]);
            }
            r[row++] = sum.x();
            r[row++] = sum.y();
        }
        for (int t = 0; t < S; ++t) {
            const Mat2 R = rotation2(x[L.q(t, 2)]);
            const Vec2 c = trans(x, t) + R * sc->object.com;
            double msum = 0.0;
            for (int i = 0; i < I; ++i) {
                const int off = L.lam[sz(t * I + i)];
                if (off < 0) continue;
                const RobotContact& rc = rcs[sz(rc_of[sz(t * I + i)])];
                const Vec2 u = R * (-x[off] * rc.n_b + x[off + 1] * rc.t_b);
                const Vec2 arm(x[L.p(t, i, 0)] - c.x(), x[L.p(t, i, 1)] - c.y());
                msum += cross2(arm, u);
            }
            for (int v = 0; v < V; ++v) {
                const int off = L.fv[sz(t * V + v)];
                if (off < 0) continue;
                const EnvContact& ec = ecs[sz(ec_of[sz(t * V + v)])];
                msum += cross2(R * ec.d_b, Vec2(x[off], x[off + 1]));
            }
            r[row++] = msum;
        }
        return r;
    }

    Matrix eq_jac(const Vector& x) const {
        Matrix J = Matrix::Zero(eq_rows, L.n);
        int row = 0;
        for (int t = 0; t < T; ++t) {
            for (int k = 0; k < 3; ++k) {
                J(row, L.q(t + 1, k)) = 1.0;
                J(row, L.q(t, k)) = -1.0;
                J(row, L.qd(t, k)) = -h;
                ++row;
            }
        }
        for (const RobotContact& rc : rcs) {
            const double th = x[L.q(rc.t, 2)];
            const Vec2 body = rc.a_b + x[L.a(rc.t, rc.i)] * rc.t_b;
            const Vec2 dth = rotation2_deriv(th) * body;
            const Vec2 da = rotation2(th) * rc.t_b;
            for (int k = 0; k < 2; ++k) {
                J(row, L.p(rc.t, rc.i, k)) = 1.0;
                J(row, L.q(rc.t, k)) = -1.0;
                J(row, L.q(rc.t, 2)) = -dth[k];
                J(row, L.a(rc.t, rc.i)) = -da[k];
                ++row;
            }
        }
        for (int t = 0; t < S; ++t) {
            const Mat2 R = rotation2(x[L.q(t, 2)]);
            const Mat2 Rd = rotation2_deriv(x[L.q(t, 2)]);
            for (int i = 0; i < I; ++i) {
                const int off = L.lam[sz(t * I + i)];
                if (off < 0) continue;
                const RobotContact& rc = rcs[sz(rc_of[sz(t * I + i)])];
                const Vec2 m_b = -x[off] * rc.n_b + x[off + 1] * rc.t_b;
                const Vec2 dth = Rd * m_b;
                const Vec2 dn = R * (-rc.n_b);
                const Vec2 ds = R * rc.t_b;
                for (int k = 0; k < 2; ++k) {
                    J(row + k, L.q(t, 2)) += dth[k];
                    J(row + k, off) = dn[k];
                    J(row + k, off + 1) = ds[k];
                }
            }
            for (int v = 0; v < V; ++v) {
                const int off = L.fv[sz(t * V + v)];
                if (off < 0) continue;
                J(row, off) = 1.0;
                J(row + 1, off + 1) = 1.0;
            }
            row += 2;
        }
        for (int t = 0; t < S; ++t) {
            const Mat2 R = rotation2(x[L.q(t, 2)]);
            const Mat2 Rd = rotation2_deriv(x[L.q(t, 2)]);
            const Vec2 c = trans(x, t) + R * sc->object.com;
            const Vec2 dc_th = Rd * sc->object.com;
            for (int i = 0; i < I; ++i) {
                const int off = L.lam[sz(t * I + i)];
                if (off < 0) continue;
                const RobotContact& rc = rcs[sz(rc_of[sz(t * I + i)])];
                const Vec2 m_b = -x[off] * rc.n_b + x[off + 1] * rc.t_b;
                const Vec2 u = R * m_b;
                const Vec2 arm(x[L.p(t, i, 0)] - c.x(), x[L.p(t, i, 1)] - c.y());
                J(row, L.p(t, i, 0)) += u.y();
                J(row, L.p(t, i, 1)) += -u.x();
                J(row, L.q(t, 0)) += -u.y();
                J(row, L.q(t, 1)) += u.x();
                J(row, L.q(t, 2)) += cross2(-dc_th, u) + cross2(arm, Rd * m_b);
                J(row, off) = cross2(arm, R * (-rc.n_b));
                J(row, off + 1) = cross2(arm, R * rc.t_b);
            }
            for (int v = 0; v < V; ++v) {
                const int off = L.fv[sz(t * V + v)];
                if (off < 0) continue;
                const EnvContact& ec = ecs[sz(ec_of[sz(t * V + v)])];
                const Vec2 arm = R * ec.d_b;
                const Vec2 f(x[off], x[off + 1]);
                J(row, L.q(t, 2)) += cross2(Rd * ec.d_b, f);
                J(row, off) = -arm.y();
                J(row, off + 1) = arm.x();
            }
            ++row;
        }
        return J;
    }

    // --- inequalities (g >= 0) ------------------------------------------

    /// Tangential velocity of vertex v relative to the environment over the
    /// stencil (ta, ta + 1).
    double env_speed(const Vector& x, const EnvContact& ec, int ta) const {
        const Vec2 before = trans(x, ta) + rotation2(x[L.q(ta, 2)]) * ec.v_b;
        const Vec2 after = trans(x, ta + 1) + rotation2(x[L.q(ta + 1, 2)]) * ec.v_b;
        return ec.t_w.dot(after - before) / h;
    }

    Vector ineq(const Vector& x) const {
        Vector g(ineq_rows);
        int row = 0;
        for (int t = 0; t < T; ++t) {
            for (int i = 0; i < I; ++i) {
                const RobotSpec& rb = sc->robots[sz(i)];
                for (int k = 0; k < 2; ++k) {
                    const double d = x[L.p(t + 1, i, k)] - x[L.p(t, i, k)];
                    g[row++] = h * rb.vel_ub[k] - d;
                    g[row++] = d - h * rb.vel_lb[k];
                }
            }
        }
        for (const RobotContact& rc : rcs) {
            const int off = L.lam[sz(rc.t * I + rc.i)];
            g[row++] = rc.mu * x[off] - x[off + 1];
            g[row++] = rc.mu * x[off] + x[off + 1];
        }
        for (const EnvContact& ec : ecs) {
            const int off = L.fv[sz(ec.t * V + ec.v)];
            const Vec2 f(x[off], x[off + 1]);
            const double fn = ec.n_w.dot(f);
            const double fs = ec.t_w.dot(f);
            g[row++] = fn;
            g[row++] = ec.mu * fn - fs;
            g[row++] = ec.mu * fn + fs;
        }
        for (const CompGroup& cg : env_comp) {
            const EnvContact& ec = ecs[sz(cg.c)];
            const int off = L.fv[sz(ec.t * V + ec.v)];
            const Vec2 f(x[off], x[off + 1]);
            const double gs = ec.t_w.dot(f);
            const double c = ec.mu * ec.n_w.dot(f) - smooth_abs(gs);
            const double w = env_speed(x, ec, cg.ta);
            g[row++] = *eps - c * w;
            g[row++] = *eps + c * w;
            g[row++] = *eps - gs * w;
        }
        for (const CompGroup& cg : rob_comp) {
            const RobotContact& rc = rcs[sz(cg.c)];
            const int off = L.lam[sz(rc.t * I + rc.i)];
            const double gs = x[off + 1];
            const double c = rc.mu * x[off] - smooth_abs(gs);
            const double w =
                -(x[L.a(cg.ta + 1, rc.i)] - x[L.a(cg.ta, rc.i)]) / h;
            g[row++] = *eps - c * w;
            g[row++] = *eps + c * w;
            g[row++] = *eps - gs * w;
        }
        return g;
    }

    Matrix ineq_jac(const Vector& x) const {
        Matrix J = Matrix::Zero(ineq_rows, L.n);
        int row = 0;
        for (int t = 0; t < T; ++t) {
            for (int i = 0; i < I; ++i) {
                for (int k = 0; k < 2; ++k) {
                    J(row, L.p(t + 1, i, k)) = -1.0;
                    J(row, L.p(t, i, k)) = 1.0;
                    ++row;
                    J(row, L.p(t + 1, i, k)) = 1.0;
                    J(row, L.p(t, i, k)) = -1.0;
                    ++row;
                }
            }
        }
        for (const RobotContact& rc : rcs) {
            const int off = L.lam[sz(rc.t * I + rc.i)];
            J(row, off) = rc.mu;
            J(row, off + 1) = -1.0;
            ++row;
            J(row, off) = rc.mu;
            J(row, off + 1) = 1.0;
            ++row;
        }
        for (const EnvContact& ec : ecs) {
            const int off = L.fv[sz(ec.t * V + ec.v)];
            for (int k = 0; k < 2; ++k) {
                J(row, off + k) = ec.n_w[k];
                J(row + 1, off + k) = ec.mu * ec.n_w[k] - ec.t_w[k];
                J(row + 2, off + k) = ec.mu * ec.n_w[k] + ec.t_w[k];
            }
            row += 3;
        }
        for (const CompGroup& cg : env_comp) {
            const EnvContact& ec = ecs[sz(cg.c)];
            const int off = L.fv[sz(ec.t * V + ec.v)];
            const Vec2 f(x[off], x[off + 1]);
            const double gs = ec.t_w.dot(f);
            const double c = ec.mu * ec.n_w.dot(f) - smooth_abs(gs);
            const double w = env_speed(x, ec, cg.ta);
            const Vec2 dc = ec.mu * ec.n_w - smooth_abs_deriv(gs) * ec.t_w;
            // dw/dq over the stencil; translation and rotation parts.
            const Vec2 dt = ec.t_w / h;
            const double dthb = ec.t_w.dot(rotation2_deriv(x[L.q(cg.ta + 1, 2)]) * ec.v_b) / h;
            const double dtha = ec.t_w.dot(rotation2_deriv(x[L.q(cg.ta, 2)]) * ec.v_b) / h;
            for (int s = -1; s <= 1; s += 2) {
                // s = -1: eps - c w; s = +1: eps + c w.
                for (int k = 0; k < 2; ++k) {
                    J(row, off + k) = s * w * dc[k];
                    J(row, L.q(cg.ta + 1, k)) = s * c * dt[k];
                    J(row, L.q(cg.ta, k)) = -s * c * dt[k];
                }
                J(row, L.q(cg.ta + 1, 2)) = s * c * dthb;
                J(row, L.q(cg.ta, 2)) = -s * c * dtha;
                ++row;
            }
            for (int k = 0; k < 2; ++k) {
                J(row, off + k) = -w * ec.t_w[k];
                J(row, L.q(cg.ta + 1, k)) = -gs * dt[k];
                J(row, L.q(cg.ta, k)) = gs * dt[k];
            }
            J(row, L.q(cg.ta + 1, 2)) = -gs * dthb;
            J(row, L.q(cg.ta, 2)) = gs * dtha;
            ++row;
        }
        for (const CompGroup& cg : rob_comp) {
            const RobotContact& rc = rcs[sz(cg.c)];
            const int off = L.lam[sz(rc.t * I + rc.i)];
            const double gs = x[off + 1];
            const double c = rc.mu * x[off] - smooth_abs(gs);
            const double w = -(x[L.a(cg.ta + 1, rc.i)] - x[L.a(cg.ta, rc.i)]) / h;
            const double dsa = smooth_abs_deriv(gs);
            for (int s = -1; s <= 1; s += 2) {
                J(row, off) = s * w * rc.mu;
                J(row, off + 1) = -s * w * dsa;
                J(row, L.a(cg.ta + 1, rc.i)) = -s * c / h;
                J(row, L.a(cg.ta, rc.i)) = s * c / h;
                ++row;
            }
            J(row, off + 1) = -w;
            J(row, L.a(cg.ta + 1, rc.i)) = gs / h;
            J(row, L.a(cg.ta, rc.i)) = -gs / h;
            ++row;
        }
        return J;
    }

    // --- boxes and start point ------------------------------------------

    // Solver-space units: lengths in object radii, forces in object weights.
    // The moment rows mix both classes; without this rescale their entries
    // span three orders of magnitude and the refinement crawls.
    Vector var_scale() const {
        Vector s = Vector::Ones(L.n);
        for (int t = 0; t < S; ++t) {
            s[L.q(t, 0)] = len0;
            s[L.q(t, 1)] = len0;
        }
        for (int t = 0; t < T; ++t) {
            s[L.qd(t, 0)] = len0;
            s[L.qd(t, 1)] = len0;
        }
        for (int t = 0; t < S; ++t) {
            for (int i = 0; i < I; ++i) {
                s[L.p(t, i, 0)] = len0;
                s[L.p(t, i, 1)] = len0;
                s[L.a(t, i)] = len0;
            }
        }
        for (int off : L.lam) {
            if (off < 0) continue;
            s[off] = f0;
            s[off + 1] = f0;
        }
        for (int off : L.fv) {
            if (off < 0) continue;
            s[off] = f0;
            s[off + 1] = f0;
        }
        return s;
    }

    Vector eq_scale() const {
        Vector d(eq_rows);
        int row = 0;
        for (int t = 0; t < T; ++t) {
            d[row++] = 1.0 / len0;
            d[row++] = 1.0 / len0;
            d[row++] = 1.0;
        }
        for (size_t c = 0; c < 2 * rcs.size(); ++c) d[row++] = 1.0 / len0;
        for (int t = 0; t < 2 * S; ++t) d[row++] = 1.0 / f0;
        for (int t = 0; t < S; ++t) d[row++] = 1.0 / (f0 * len0);
        return d;
    }

    Vector ineq_scale() const {
        Vector d(ineq_rows);
        int row = 0;
        for (int r = 0; r < 4 * T * I; ++r) d[row++] = 1.0 / len0;
        for (size_t r = 0; r < 2 * rcs.size(); ++r) d[row++] = 1.0 / f0;
        for (size_t r = 0; r < 3 * ecs.size(); ++r) d[row++] = 1.0 / f0;
        for (size_t r = 0; r < 3 * (env_comp.size() + rob_comp.size()); ++r) {
            d[row++] = 1.0 / (f0 * len0);
        }
        return d;
    }

    void fill_bounds(Vector& lower, Vector& upper) const {
        lower = Vector::Constant(L.n, -1e30);
        upper = Vector::Constant(L.n, 1e30);
        for (int t = 0; t < S; ++t) {
            const PoseBounds& b = sc->bounds_at(t);
            for (int k = 0; k < 3; ++k) {
                lower[L.q(t, k)] = b.lower[k];
                upper[L.q(t, k)] = b.upper[k];
            }
            for (int i = 0; i < I; ++i) {
                for (int k = 0; k < 2; ++k) {
                    lower[L.p(t, i, k)] = b.lower[k] - r_obj;
                    upper[L.p(t, i, k)] = b.upper[k] + r_obj;
                }
                const int c = rc_of[sz(t * I + i)];
                lower[L.a(t, i)] = 0.0;
                upper[L.a(t, i)] = c >= 0 ? rcs[sz(c)].length : amax;
            }
        }
        for (int t = 0; t < T; ++t) {
            const PoseBounds& b = sc->bounds_at(t);
            for (int k = 0; k < 3; ++k) {
                lower[L.qd(t, k)] = b.rate_lower[k];
                upper[L.qd(t, k)] = b.rate_upper[k];
            }
        }
        for (const RobotContact& rc : rcs) {
            const int off = L.lam[sz(rc.t * I + rc.i)];
            lower[off] = 0.0;
            upper[off] = cap;
            lower[off + 1] = -cap;
            upper[off + 1] = cap;
        }
        for (const EnvContact& ec : ecs) {
            const int off = L.fv[sz(ec.t * V + ec.v)];
            for (int k = 0; k < 2; ++k) {
                lower[off + k] = -fcap;
                upper[off + k] = fcap;
            }
        }
    }

    Vector start_point(const Vector& lower, const Vector& upper) const {
        Vector x = Vector::Zero(L.n);
        for (int t = 0; t < S; ++t) {
            Vec3 q = kin.poses[sz(t)].vec();
            if (!sched.pose_shift.empty()) q += sched.pose_shift[sz(t)];
            for (int k = 0; k < 3; ++k) x[L.q(t, k)] = q[k];
            for (int i = 0; i < I; ++i) {
                for (int k = 0; k < 2; ++k) x[L.p(t, i, k)] = sched.p_world[sz(t)][sz(i)][k];
                x[L.a(t, i)] = sched.alpha[sz(t)][sz(i)];
            }
        }
        for (int t = 0; t < T; ++t) {
            for (int k = 0; k < 3; ++k) {
                x[L.qd(t, k)] = (x[L.q(t + 1, k)] - x[L.q(t, k)]) / h;
            }
        }
        for (const RobotContact& rc : rcs) {
            const int off = L.lam[sz(rc.t * I + rc.i)];
            const Vec2 l = sched.lambda[sz(rc.t)][sz(rc.i)][sz(rc.surf)];
            x[off] = l.x();
            x[off + 1] = l.y();
        }
        for (const EnvContact& ec : ecs) {
            const int off = L.fv[sz(ec.t * V + ec.v)];
            for (int k = 0; k < 2; ++k) x[off + k] = sched.f[sz(ec.t)][sz(ec.v)][k];
        }
        return x.cwiseMax(lower).cwiseMin(upper);
    }
};

std::vector<copt::ActiveAssignment> active_set(const copt::ContactSchedule& sched) {
    std::vector<copt::ActiveAssignment> out;
    for (int t = 0; t < static_cast<int>(sched.z.size()); ++t) {
        for (int i = 0; i < static_cast<int>(sched.z[sz(t)].size()); ++i) {
            for (int p = 0; p < static_cast<int>(sched.z[sz(t)][sz(i)].size()); ++p) {
                if (sched.z[sz(t)][sz(i)][sz(p)]) out.push_back({t, i, p});
            }
        }
    }
    return out;
}

}  // namespace

QoptProblem build_qopt(const Scenario& scenario, const kopt::KinematicsSolution& kin,
                       const copt::ContactSchedule& schedule, const QoptOptions& options) {
    auto B = std::make_shared<const Build>(scenario, kin, schedule, options);
    QoptProblem out;
    out.layout = B->L;
    out.scenario = &scenario;
    out.kin = kin;
    out.schedule = schedule;
    out.options = options;
    out.eps = B->eps;
    const Vector vs = B->var_scale();
    const Vector de = B->eq_scale();
    const Vector di = B->ineq_scale();
    out.scale = vs;
    out.objective_scale = 1.0 / B->len0;
    const double ko = out.objective_scale;
    std::vector<std::pair<int, double>> anchors;
    anchors.reserve(B->rcs.size());
    for (size_t c = 0; c < B->rcs.size(); ++c) {
        anchors.emplace_back(B->L.a(B->rcs[c].t, B->rcs[c].i), B->a_mean[c] / B->len0);
    }
    out.nlp.n = B->L.n;
    out.nlp.objective = [B, vs, ko, anchors](const Vector& x) {
        double m = ko * B->objective(vs.cwiseProduct(x));
        for (const auto& [k, a] : anchors) m += kAlphaAnchor * (x[k] - a) * (x[k] - a);
        return m;
    };
    out.nlp.objective_grad = [B, vs, ko, anchors](const Vector& x) {
        Vector g = ko * vs.cwiseProduct(B->objective_grad(vs.cwiseProduct(x)));
        for (const auto& [k, a] : anchors) g[k] += 2.0 * kAlphaAnchor * (x[k] - a);
        return g;
    };
    out.nlp.eq_residuals = [B, vs, de](const Vector& x) {
        return Vector(de.cwiseProduct(B->eq(vs.cwiseProduct(x))));
    };
    out.nlp.eq_jacobian = [B, vs, de](const Vector& x) {
        return Matrix(de.asDiagonal() * B->eq_jac(vs.cwiseProduct(x)) * vs.asDiagonal());
    };
    out.nlp.ineq_residuals = [B, vs, di](const Vector& x) {
        return Vector(di.cwiseProduct(B->ineq(vs.cwiseProduct(x))));
    };
    out.nlp.ineq_jacobian = [B, vs, di](const Vector& x) {
        return Matrix(di.asDiagonal() * B->ineq_jac(vs.cwiseProduct(x)) * vs.asDiagonal());
    };
    Vector lower, upper;
    B->fill_bounds(lower, upper);
    out.nlp.lower = lower.cwiseQuotient(vs);
    out.nlp.upper = upper.cwiseQuotient(vs);
    out.nlp.x0 = B->start_point(lower, upper).cwiseQuotient(vs);
    // Feasibility is judged per row at 1e-6 in that row's physical units;
    // the row scaling maps the shared bound into solver space. The eps rows
    // run two orders tighter so the delivered products stay below eps itself
    // rather than eps plus solver slack.
    out.nlp.eq_tol = 1e-6 * de;
    out.nlp.ineq_tol = 1e-6 * di;
    const int comp = 3 * static_cast<int>(B->env_comp.size() + B->rob_comp.size());
    if (comp > 0) out.nlp.ineq_tol.tail(comp) *= 0.01;
    return out;
}

Trajectory decode_trajectory(const QoptProblem& problem, const nlp::Vector& x) {
    const Scenario& s = *problem.scenario;
    const QoptLayout& L = problem.layout;
    const int S = L.steps, T = S - 1, I = L.robots, V = L.vertices;
    const Vector xp = problem.scale.size() == x.size() ? Vector(problem.scale.cwiseProduct(x)) : x;
    Trajectory out;
    out.poses.reserve(sz(S));
    for (int t = 0; t < S; ++t) {
        out.poses.emplace_back(xp[L.q(t, 0)], xp[L.q(t, 1)], xp[L.q(t, 2)]);
    }
    for (int t = 0; t < T; ++t) {
        out.rates.emplace_back(xp[L.qd(t, 0)], xp[L.qd(t, 1)], xp[L.qd(t, 2)]);
    }
    out.p.assign(sz(S), std::vector<Vec2>(sz(I), Vec2::Zero()));
    out.alpha.assign(sz(S), std::vector<double>(sz(I), 0.0));
    out.surface.assign(sz(S), std::vector<int>(sz(I), -1));
    out.lambda.assign(sz(S), std::vector<Vec2>(sz(I), Vec2::Zero()));
    out.u.assign(sz(S), std::vector<Vec2>(sz(I), Vec2::Zero()));
    out.f.assign(sz(S), std::vector<Vec2>(sz(V), Vec2::Zero()));
    out.contact = problem.kin.contact_map;
    for (int t = 0; t < S; ++t) {
        for (int i = 0; i < I; ++i) {
            out.p[sz(t)][sz(i)] = Vec2(xp[L.p(t, i, 0)], xp[L.p(t, i, 1)]);
            out.alpha[sz(t)][sz(i)] = xp[L.a(t, i)];
            const int p = problem.schedule.assigned_surface(t, i);
            out.surface[sz(t)][sz(i)] = p;
            const int off = L.lam[sz(t * I + i)];
            if (p < 0 || off < 0) continue;
            const Vec2 l(xp[off], xp[off + 1]);
            out.lambda[sz(t)][sz(i)] = l;
            const SurfaceFrame fr = surface_frame(s.object.surfaces[sz(p)], out.poses[sz(t)]);
            out.u[sz(t)][sz(i)] = fr.rotation * Vec2(-l.x(), l.y());
        }
        for (int v = 0; v < V; ++v) {
            const int off = L.fv[sz(t * V + v)];
            if (off >= 0) out.f[sz(t)][sz(v)] = Vec2(xp[off], xp[off + 1]);
        }
    }
    const std::vector<Pose2> ref = kopt::reference_trajectory(s);
    out.objective = 0.0;
    out.robustness = 0.0;
    for (int t = 0; t < S; ++t) {
        const Vec3 d = out.poses[sz(t)].vec() - ref[sz(t)].vec();
        out.objective += kTrackWeight.dot(d.cwiseProduct(d));
        double best = 0.0;
        bool any = false;
        for (int v = 0; v < V; ++v) {
            if (!out.contact[sz(v)][sz(t)]) continue;
            const double dist = (s.object.vertices[sz(v)] - s.object.com).norm();
            best = any ? std::min(best, dist) : dist;
            any = true;
        }
        const double c = std::cos(out.poses[sz(t)].theta);
        if (any) out.robustness += best * c * c;
    }
    out.objective -= problem.options.robustness_weight * out.robustness;
    return out;
}

QoptResult solve_qopt(QoptProblem& problem) {
    nlp::NlpConfig config;
    config.max_outer = 60;
    config.max_inner = 2000;
    // Feasibility carries the guarantees here; stationarity only has to be
    // tight enough that the tracking objective settles. Pushing it further
    // stalls against the curvature the penalty puts along the constraints.
    config.opt_tol = 1e-3;
    nlp::Vector x = problem.nlp.x0;
    nlp::NlpResult last;
    const size_t stages = problem.options.eps_schedule.size();
    for (size_t k = 0; k < stages; ++k) {
        const double stage = problem.options.eps_schedule[k];
        const bool final_stage = k + 1 == stages;
        // The last stage runs against a shaved eps so the delivered products
        // clear the unshaved bound even at the feasibility slack.
        *problem.eps = final_stage ? std::max(stage - 2e-8, 0.5 * stage) : stage;
        problem.nlp.x0 = x;
        const nlp::NlpResult res = nlp::solve(problem.nlp, config);
        if (res.status != nlp::NlpStatus::Converged) {
            QoptResult out;
            out.report.active = active_set(problem.schedule);
            out.report.nlp = res;
            out.report.eps = stage;
            out.report.message =
                "refinement stalled at eps " + std::to_string(stage) + ": " + res.message;
            return out;
        }
        x = res.x;
        last = res;
    }
    // The shave is internal; the problem reads back at the nominal eps.
    *problem.eps = problem.options.eps_schedule.back();
    QoptResult out;
    Trajectory traj = decode_trajectory(problem, x);
    const ResidualReport rep = verify_trajectory(*problem.scenario, traj);
    const double eps_final = problem.options.eps_schedule.back();
    if (rep.worst_physical() > 1e-6 || rep.complementarity > eps_final) {
        out.report.active = active_set(problem.schedule);
        out.report.nlp = last;
        out.report.eps = eps_final;
        out.report.message = "refined trajectory failed exact verification";
        return out;
    }
    out.trajectory = std::move(traj);
    return out;
}

double ResidualReport::worst_physical() const {
    return std::max({pose_dynamics, robot_velocity, force, moment, membership, cone, bounds});
}

ResidualReport verify_trajectory(const Scenario& scenario, const Trajectory& trajectory) {
    ResidualReport rep;
    const int S = static_cast<int>(trajectory.poses.size());
    const int T = S - 1;
    const int I = scenario.num_robots();
    const int V = scenario.object.num_vertices();
    const double h = scenario.step;
    const double mass = scenario.object.mass;
    const auto has_contact = [&](int v, int t) {
        return !trajectory.contact.empty() && trajectory.contact[sz(v)][sz(t)];
    };

    for (int t = 0; t < T && t < static_cast<int>(trajectory.rates.size()); ++t) {
        const Vec3 defect = trajectory.poses[sz(t + 1)].vec() - trajectory.poses[sz(t)].vec() -
                            h * trajectory.rates[sz(t)];
        rep.pose_dynamics = std::max(rep.pose_dynamics, defect.cwiseAbs().maxCoeff());
    }
    for (int t = 0; t < S; ++t) {
        const PoseBounds& b = scenario.bounds_at(t);
        const Vec3 q = trajectory.poses[sz(t)].vec();
        rep.bounds = std::max(rep.bounds, (q - b.upper).maxCoeff());
        rep.bounds = std::max(rep.bounds, (b.lower - q).maxCoeff());
        if (t < static_cast<int>(trajectory.rates.size())) {
            rep.bounds = std::max(rep.bounds, (trajectory.rates[sz(t)] - b.rate_upper).maxCoeff());
            rep.bounds = std::max(rep.bounds, (b.rate_lower - trajectory.rates[sz(t)]).maxCoeff());
        }
    }
    for (int t = 0; t + 1 < S && !trajectory.p.empty(); ++t) {
        for (int i = 0; i < I; ++i) {
            const Vec2 d = trajectory.p[sz(t + 1)][sz(i)] - trajectory.p[sz(t)][sz(i)];
            const RobotSpec& rb = scenario.robots[sz(i)];
            for (int k = 0; k < 2; ++k) {
                rep.robot_velocity = std::max(rep.robot_velocity, d[k] - h * rb.vel_ub[k]);
                rep.robot_velocity = std::max(rep.robot_velocity, h * rb.vel_lb[k] - d[k]);
            }
        }
    }
    for (int t = 0; t < S; ++t) {
        const Pose2& q = trajectory.poses[sz(t)];
        const Vec2 com_w = q.apply(scenario.object.com);
        Vec2 force = mass * scenario.gravity;
        double moment = 0.0;
        for (int i = 0; i < I && !trajectory.surface.empty(); ++i) {
            const int p = trajectory.surface[sz(t)][sz(i)];
            const Vec2 l = trajectory.lambda[sz(t)][sz(i)];
            if (p < 0) continue;
            const Surface& sf = scenario.object.surfaces[sz(p)];
            const SurfaceFrame fr = surface_frame(sf, q);
            const Vec2 u = fr.rotation * Vec2(-l.x(), l.y());
            force += u;
            moment += cross2(trajectory.p[sz(t)][sz(i)] - com_w, u);
            const double alpha = trajectory.alpha[sz(t)][sz(i)];
            const Vec2 target = fr.origin + alpha * fr.rotation.col(1);
            rep.membership = std::max(
                rep.membership, (trajectory.p[sz(t)][sz(i)] - target).cwiseAbs().maxCoeff());
            rep.cone = std::max(rep.cone, -l.x());
            rep.cone = std::max(rep.cone, std::abs(l.y()) - scenario.robots[sz(i)].mu * l.x());
            rep.bounds = std::max(rep.bounds, alpha - sf.length);
            rep.bounds = std::max(rep.bounds, -alpha);
        }
        for (int v = 0; v < V && !trajectory.f.empty(); ++v) {
            const Vec2 f = trajectory.f[sz(t)][sz(v)];
            force += f;
            moment += cross2(vertex_world(scenario.object, v, q) - com_w, f);
            if (!has_contact(v, t)) continue;
            const Halfspace& hs =
                scenario.env.halfspaces[sz(closest_halfspace(scenario, q, v))];
            const double fn = hs.normal.dot(f);
            const double fs = hs.tangent().dot(f);
            rep.cone = std::max(rep.cone, -fn);
            rep.cone = std::max(rep.cone, std::abs(fs) - scenario.object.mu_env[sz(v)] * fn);
        }
        rep.force = std::max(rep.force, force.cwiseAbs().maxCoeff());
        rep.moment = std::max(rep.moment, std::abs(moment));
    }
    // Complementarity, exact: |c v| and the dissipation sign g_s v, with v
    // the object's velocity relative to the contacting body.
    for (int t = 0; t < S && T > 0; ++t) {
        const int ta = std::min(t, T - 1);
        for (int v = 0; v < V; ++v) {
            if (!has_contact(v, t)) continue;
            const Pose2& q = trajectory.poses[sz(t)];
            const Halfspace& hs =
                scenario.env.halfspaces[sz(closest_halfspace(scenario, q, v))];
            const Vec2 f = trajectory.f[sz(t)][sz(v)];
            const double fn = hs.normal.dot(f);
            const double gs = hs.tangent().dot(f);
            const double c = scenario.object.mu_env[sz(v)] * fn - std::abs(gs);
            const double w = hs.tangent().dot(vertex_world(scenario.object, v,
                                                           trajectory.poses[sz(ta + 1)]) -
                                              vertex_world(scenario.object, v,
                                                           trajectory.poses[sz(ta)])) /
                             h;
            rep.complementarity = std::max({rep.complementarity, std::abs(c * w), gs * w});
        }
        for (int i = 0; i < I && !trajectory.surface.empty(); ++i) {
            const int p = trajectory.surface[sz(t)][sz(i)];
            if (p < 0 || trajectory.surface[sz(ta)][sz(i)] != trajectory.surface[sz(ta + 1)][sz(i)]) {
                continue;
            }
            const Vec2 l = trajectory.lambda[sz(t)][sz(i)];
            const double c = scenario.robots[sz(i)].mu * l.x() - std::abs(l.y());
            const double w =
                -(trajectory.alpha[sz(ta + 1)][sz(i)] - trajectory.alpha[sz(ta)][sz(i)]) / h;
            rep.complementarity = std::max({rep.complementarity, std::abs(c * w), l.y() * w});
        }
    }
    rep.pose_dynamics = std::max(rep.pose_dynamics, 0.0);
    rep.robot_velocity = std::max(rep.robot_velocity, 0.0);
    rep.membership = std::max(rep.membership, 0.0);
    rep.cone = std::max(rep.cone, 0.0);
    rep.bounds = std::max(rep.bounds, 0.0);
    rep.complementarity = std::max(rep.complementarity, 0.0);
    return rep;
}

}  // namespace manip::qopt
