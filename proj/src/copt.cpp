#include "manip/copt.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "manip/relax.hpp"

namespace manip::copt {
namespace {

using milp::LinExpr;
using milp::LinTerm;
using milp::Model;
using milp::Sense;
using milp::VarId;
using milp::VarKind;

std::string tag(const char* base, int t, int i) {
    return std::string(base) + "_t" + std::to_string(t) + "_" + std::to_string(i);
}
std::string tag(const char* base, int t, int i, int p) {
    return tag(base, t, i) + "_" + std::to_string(p);
}

Pose2 shifted_pose(const Pose2& q, const Vec3& d) {
    return Pose2(q.x + d.x(), q.y + d.y(), q.theta + d.z());
}

struct Builder {
    const Scenario& s;
    const kopt::KinematicsSolution& kin;
    CoptModel out;

    int T, S, I, P, V;
    double h, mass, cap, fcap, amax, r_obj;
    bool relaxed_pose = false;

    Builder(const Scenario& scenario, const kopt::KinematicsSolution& k, const Relaxation& rel,
            std::vector<Vec3> pose_box)
        : s(scenario), kin(k) {
        T = s.horizon;
        S = T + 1;
        I = s.num_robots();
        P = static_cast<int>(s.object.surfaces.size());
        V = s.object.num_vertices();
        h = s.step;
        mass = s.object.mass;
        cap = 5.0 * mass * 9.81;
        fcap = 10.0 * mass * 9.81;
        amax = 0.0;
        r_obj = 0.0;
        for (const Surface& sf : s.object.surfaces) {
            amax = std::max(amax, sf.length);
            r_obj = std::max(r_obj, std::max(sf.a.norm(), sf.b.norm()));
        }
        if (static_cast<int>(kin.poses.size()) != S) {
            throw std::invalid_argument("kinematic solution horizon mismatch");
        }
        if (static_cast<int>(kin.contact_map.size()) != V ||
            (V > 0 && static_cast<int>(kin.contact_map.front().size()) != S)) {
            throw std::invalid_argument("contact map dimensions mismatch");
        }
        out.scenario = &s;
        out.kin = kin;
        out.relaxation = rel;
        out.pose_box = std::move(pose_box);
        out.lambda_cap = cap;
        out.f_cap = fcap;
        out.alpha_max = amax;
        relaxed_pose = !out.pose_box.empty();
        if (relaxed_pose && static_cast<int>(out.pose_box.size()) != S) {
            throw std::invalid_argument("pose_box needs one entry per step");
        }
        build();
    }

    bool contact(int v, int t) const {
        return kin.contact_map[static_cast<size_t>(v)][static_cast<size_t>(t)];
    }
    bool slips(int v, int t) const {
        return kin.slip_map[static_cast<size_t>(v)][static_cast<size_t>(t)];
    }

    // Sign of the tangential vertex velocity used for slip pinning; mirrors
    // the finite differences of the contact-map extraction.
    double slip_sign(int v, int t, const Vec2& tangent) const {
        const int ta = t < T ? t : t - 1;
        const Vec2 before = vertex_world(s.object, v, kin.poses[static_cast<size_t>(ta)]);
        const Vec2 after = vertex_world(s.object, v, kin.poses[static_cast<size_t>(ta) + 1]);
        return tangent.dot(after - before) >= 0.0 ? 1.0 : -1.0;
    }

    void make_variables() {
        Model& m = out.model;
        CoptIndex& ix = out.index;
        ix.steps = S;
        ix.robots = I;
        ix.surfaces = P;
        ix.vertices = V;

        out.gated.assign(static_cast<size_t>(S), std::vector<bool>(static_cast<size_t>(I), false));
        for (int t = 0; t < S; ++t) {
            for (int i = 0; i < I; ++i) {
                for (const WorkspaceGate& g : s.robots[static_cast<size_t>(i)].workspace_gates) {
                    if (g.forbids(kin.poses[static_cast<size_t>(t)].vec(), t)) {
                        out.gated[static_cast<size_t>(t)][static_cast<size_t>(i)] = true;
                    }
                }
            }
        }

        for (int t = 0; t < S; ++t) {
            const PoseBounds& b = s.bounds_at(t);
            for (int i = 0; i < I; ++i) {
                const bool off = out.gated[static_cast<size_t>(t)][static_cast<size_t>(i)];
                ix.px.push_back(m.add_var(tag("px", t, i), VarKind::Continuous,
                                          b.lower.x() - r_obj, b.upper.x() + r_obj));
                ix.py.push_back(m.add_var(tag("py", t, i), VarKind::Continuous,
                                          b.lower.y() - r_obj, b.upper.y() + r_obj));
                ix.ux.push_back(m.add_var(tag("ux", t, i), VarKind::Continuous, -2.0 * P * cap,
                                          2.0 * P * cap));
                ix.uy.push_back(m.add_var(tag("uy", t, i), VarKind::Continuous, -2.0 * P * cap,
                                          2.0 * P * cap));
                ix.alpha.push_back(m.add_var(tag("alpha", t, i), VarKind::Continuous, 0.0, amax));
                for (int p = 0; p < P; ++p) {
                    const VarId z = m.add_var(tag("z", t, i, p), VarKind::Binary, 0.0, 1.0);
                    if (off) m.set_bounds(z, 0.0, 0.0);
                    ix.z.push_back(z);
                    ix.lam_n.push_back(m.add_var(tag("ln", t, i, p), VarKind::Continuous, 0.0,
                                                 off ? 0.0 : cap));
                    ix.lam_s.push_back(m.add_var(tag("ls", t, i, p), VarKind::Continuous,
                                                 off ? 0.0 : -cap, off ? 0.0 : cap));
                    ix.w_n.push_back(m.add_var(tag("wn", t, i, p), VarKind::Continuous, 0.0,
                                               amax * cap));
                    ix.w_s.push_back(m.add_var(tag("ws", t, i, p), VarKind::Continuous,
                                               -amax * cap, amax * cap));
                }
            }
            for (int v = 0; v < V; ++v) {
                const bool on = contact(v, t);
                ix.fx.push_back(m.add_var("fx_t" + std::to_string(t) + "_" + std::to_string(v),
                                          VarKind::Continuous, on ? -fcap : 0.0, on ? fcap : 0.0));
                ix.fy.push_back(m.add_var("fy_t" + std::to_string(t) + "_" + std::to_string(v),
                                          VarKind::Continuous, on ? -fcap : 0.0, on ? fcap : 0.0));
            }
        }
        for (int t = 0; t < T; ++t) {
            for (int i = 0; i < I; ++i) {
                const RobotSpec& r = s.robots[static_cast<size_t>(i)];
                ix.vx.push_back(m.add_var(tag("vx", t, i), VarKind::Continuous, r.vel_lb.x(),
                                          r.vel_ub.x()));
                ix.vy.push_back(m.add_var(tag("vy", t, i), VarKind::Continuous, r.vel_lb.y(),
                                          r.vel_ub.y()));
            }
        }
        if (relaxed_pose) {
            for (int t = 0; t < S; ++t) {
                const Vec3& box = out.pose_box[static_cast<size_t>(t)];
                for (int k = 0; k < 3; ++k) {
                    ix.dq.push_back(m.add_var("dq_t" + std::to_string(t) + "_" + std::to_string(k),
                                              VarKind::Continuous, -box[k], box[k]));
                }
            }
            for (int t = 0; t < T; ++t) {
                const PoseBounds& b = s.bounds_at(t);
                for (int k = 0; k < 3; ++k) {
                    ix.qdot.push_back(m.add_var("dqd_t" + std::to_string(t) + "_" + std::to_string(k),
                                                VarKind::Continuous, b.rate_lower[k],
                                                b.rate_upper[k]));
                }
            }
            for (int t = 0; t < S; ++t) {
                const double bt = out.pose_box[static_cast<size_t>(t)].z();
                for (int i = 0; i < I; ++i) {
                    for (int p = 0; p < P; ++p) {
                        ix.w_th_ln.push_back(m.add_var(tag("wtl", t, i, p), VarKind::Continuous,
                                                       -bt * cap, bt * cap));
                        ix.w_th_ls.push_back(m.add_var(tag("wts", t, i, p), VarKind::Continuous,
                                                       -bt * cap, bt * cap));
                    }
                    ix.w_th_alpha.push_back(m.add_var(tag("wta", t, i), VarKind::Continuous,
                                                      -bt * amax, bt * amax));
                }
                for (int v = 0; v < V; ++v) {
                    const bool on = contact(v, t);
                    const double wb = on ? bt * fcap : 0.0;
                    ix.w_th_fx.push_back(m.add_var("wtfx_t" + std::to_string(t) + "_" +
                                                       std::to_string(v),
                                                   VarKind::Continuous, -wb, wb));
                    ix.w_th_fy.push_back(m.add_var("wtfy_t" + std::to_string(t) + "_" +
                                                       std::to_string(v),
                                                   VarKind::Continuous, -wb, wb));
                }
            }
        }
    }

    // One relaxed product w ~ x*y; deviation products always use plain
    // McCormick per the pose-relaxation contract.
    void relax_product(VarId w, VarId x, VarId y, const relax::Interval& bx,
                       const relax::Interval& by) {
        relax::mccormick(out.model, {w, x, y, bx, by});
    }

    void moment_products(int t, int i) {
        Model& m = out.model;
        CoptIndex& ix = out.index;
        const relax::Interval abox{0.0, amax};
        const relax::Interval nbox{0.0, cap};
        const relax::Interval sbox{-cap, cap};
        const VarId a = ix.alpha[static_cast<size_t>(ix.ti(t, i))];
        if (out.relaxation.kind == Relaxation::Kind::McCormick) {
            for (int p = 0; p < P; ++p) {
                const int k = ix.tip(t, i, p);
                relax::mccormick(m, {ix.w_n[static_cast<size_t>(k)], a,
                                     ix.lam_n[static_cast<size_t>(k)], abox, nbox});
                relax::mccormick(m, {ix.w_s[static_cast<size_t>(k)], a,
                                     ix.lam_s[static_cast<size_t>(k)], abox, sbox});
            }
            return;
        }
        const relax::BilinearTerm proto{ix.w_n[static_cast<size_t>(ix.tip(t, i, 0))], a,
                                        ix.lam_n[static_cast<size_t>(ix.tip(t, i, 0))], abox, nbox};
        const relax::PartitionSpec spec =
            relax::PartitionSpec::uniform(proto, out.relaxation.regions);
        relax::RegionSelector sel =
            out.relaxation.kind == Relaxation::Kind::NaivePiecewise
                ? relax::make_region_selector_naive(m, a, abox, spec)
                : relax::make_region_selector_encoded(m, a, abox, spec);
        for (int p = 0; p < P; ++p) {
            const int k = ix.tip(t, i, p);
            relax::attach_product(m, sel, ix.w_n[static_cast<size_t>(k)],
                                  ix.lam_n[static_cast<size_t>(k)], nbox);
            relax::attach_product(m, sel, ix.w_s[static_cast<size_t>(k)],
                                  ix.lam_s[static_cast<size_t>(k)], sbox);
        }
    }

    void build() {
        make_variables();
        Model& m = out.model;
        CoptIndex& ix = out.index;

        for (int t = 0; t < S; ++t) {
            const Pose2& q = kin.poses[static_cast<size_t>(t)];
            const Mat2 rot_d = rotation2_deriv(q.theta);
            const Vec2 com_w = q.apply(s.object.com);

            LinExpr force_x, force_y, moment;
            for (int i = 0; i < I; ++i) {
                const int k = ix.ti(t, i);
                force_x += {ix.ux[static_cast<size_t>(k)], 1.0};
                force_y += {ix.uy[static_cast<size_t>(k)], 1.0};

                // Force conversion u = sum_p R_p (-lam_n, lam_s), linearized
                // in dtheta when the pose is relaxed.
                LinExpr conv_x = 1.0 * ix.ux[static_cast<size_t>(k)];
                LinExpr conv_y = 1.0 * ix.uy[static_cast<size_t>(k)];
                for (int p = 0; p < P; ++p) {
                    const Surface& sf = s.object.surfaces[static_cast<size_t>(p)];
                    const SurfaceFrame fr = surface_frame(sf, q);
                    const int kp = ix.tip(t, i, p);
                    conv_x += {ix.lam_n[static_cast<size_t>(kp)], fr.rotation(0, 0)};
                    conv_x += {ix.lam_s[static_cast<size_t>(kp)], -fr.rotation(0, 1)};
                    conv_y += {ix.lam_n[static_cast<size_t>(kp)], fr.rotation(1, 0)};
                    conv_y += {ix.lam_s[static_cast<size_t>(kp)], -fr.rotation(1, 1)};
                    if (relaxed_pose) {
                        const Mat2 d = rot_d * (Mat2() << sf.outward_normal, sf.tangent()).finished();
                        conv_x += {ix.w_th_ln[static_cast<size_t>(kp)], d(0, 0)};
                        conv_x += {ix.w_th_ls[static_cast<size_t>(kp)], -d(0, 1)};
                        conv_y += {ix.w_th_ln[static_cast<size_t>(kp)], d(1, 0)};
                        conv_y += {ix.w_th_ls[static_cast<size_t>(kp)], -d(1, 1)};
                    }

                    // Intrinsic moment: cross(a_p - com + alpha tangent,
                    // -n lam_n + t lam_s); rotation-invariant, so exact even
                    // under pose deviations.
                    const Vec2 dp = sf.a - s.object.com;
                    moment += {ix.lam_n[static_cast<size_t>(kp)],
                               -cross2(dp, sf.outward_normal)};
                    moment += {ix.lam_s[static_cast<size_t>(kp)], cross2(dp, sf.tangent())};
                    moment += {ix.w_n[static_cast<size_t>(kp)], 1.0};
                }
                m.add_constraint(std::move(conv_x), Sense::Eq, 0.0);
                m.add_constraint(std::move(conv_y), Sense::Eq, 0.0);
            }

            for (int v = 0; v < V; ++v) {
                if (!contact(v, t)) continue;
                const int kv = ix.tv(t, v);
                force_x += {ix.fx[static_cast<size_t>(kv)], 1.0};
                force_y += {ix.fy[static_cast<size_t>(kv)], 1.0};
                const Vec2 arm = vertex_world(s.object, v, q) - com_w;
                moment += {ix.fx[static_cast<size_t>(kv)], -arm.y()};
                moment += {ix.fy[static_cast<size_t>(kv)], arm.x()};
                if (relaxed_pose) {
                    const Vec2 d1 =
                        rot_d * (s.object.vertices[static_cast<size_t>(v)] - s.object.com);
                    moment += {ix.w_th_fy[static_cast<size_t>(kv)], d1.x()};
                    moment += {ix.w_th_fx[static_cast<size_t>(kv)], -d1.y()};
                }
            }
            m.add_constraint(std::move(force_x), Sense::Eq, -mass * s.gravity.x());
            m.add_constraint(std::move(force_y), Sense::Eq, -mass * s.gravity.y());
            m.add_constraint(std::move(moment), Sense::Eq, 0.0);

            for (int i = 0; i < I; ++i) {
                const int k = ix.ti(t, i);
                const bool off = out.gated[static_cast<size_t>(t)][static_cast<size_t>(i)];
                const VarId a = ix.alpha[static_cast<size_t>(k)];
                if (!off) {
                    LinExpr one_hot;
                    for (int p = 0; p < P; ++p) {
                        one_hot += {ix.z[static_cast<size_t>(ix.tip(t, i, p))], 1.0};
                    }
                    m.add_constraint(std::move(one_hot), Sense::Eq, 1.0);
                }
                const double mu_r = s.robots[static_cast<size_t>(i)].mu;
                for (int p = 0; p < P; ++p) {
                    const int kp = ix.tip(t, i, p);
                    const VarId z = ix.z[static_cast<size_t>(kp)];
                    const VarId ln = ix.lam_n[static_cast<size_t>(kp)];
                    const VarId ls = ix.lam_s[static_cast<size_t>(kp)];

                    // Friction cone |lam_s| <= mu lam_n.
                    LinExpr cone_a = 1.0 * ls;
                    cone_a += {ln, -mu_r};
                    m.add_constraint(std::move(cone_a), Sense::Le, 0.0);
                    LinExpr cone_b = -1.0 * ls;
                    cone_b += {ln, -mu_r};
                    m.add_constraint(std::move(cone_b), Sense::Le, 0.0);

                    // z = 0 forces the normal force (and via the cone the
                    // whole local force) to zero.
                    relax::implication(m, z, 0, 1.0 * ln, 0.0,
                                       relax::compute_big_m(m, 1.0 * ln));

                    // z = 1 pins p onto the alpha-parametrized segment and
                    // keeps alpha within this surface's length.
                    const Surface& sf = s.object.surfaces[static_cast<size_t>(p)];
                    const SurfaceFrame fr = surface_frame(sf, q);
                    const Vec2 dir = fr.rotation.col(1);
                    for (int axis = 0; axis < 2; ++axis) {
                        LinExpr member = 1.0 * (axis == 0 ? ix.px : ix.py)[static_cast<size_t>(k)];
                        member += {a, -dir[axis]};
                        if (relaxed_pose) {
                            member += {ix.dq[static_cast<size_t>(3 * t + axis)], -1.0};
                            const Vec2 da = rot_d * sf.a;
                            member += {ix.dq[static_cast<size_t>(3 * t + 2)], -da[axis]};
                            const Vec2 dt = rot_d * sf.tangent();
                            member += {ix.w_th_alpha[static_cast<size_t>(k)], -dt[axis]};
                        }
                        const double rhs = fr.origin[axis];
                        LinExpr neg;
                        for (const LinTerm& term : member) neg += {term.var, -term.coef};
                        const double big = relax::compute_big_m(m, member, -rhs);
                        relax::implication(m, z, 1, std::move(member), rhs, big);
                        relax::implication(m, z, 1, std::move(neg), -rhs, big);
                    }
                    relax::implication(m, z, 1, 1.0 * a, sf.length,
                                       relax::compute_big_m(m, 1.0 * a, -sf.length));
                }
                moment_products(t, i);
            }

            // Extrinsic cones along the touched halfspace, pinned to the
            // boundary against the slip direction wherever kin says sliding.
            for (int v = 0; v < V; ++v) {
                if (!contact(v, t)) continue;
                const int kv = ix.tv(t, v);
                const int j = closest_halfspace(s, q, v);
                const Halfspace& hsp = s.env.halfspaces[static_cast<size_t>(j)];
                const Vec2 nrm = hsp.normal, tng = hsp.tangent();
                const double mu_e = s.object.mu_env[static_cast<size_t>(v)];
                const VarId fx = ix.fx[static_cast<size_t>(kv)];
                const VarId fy = ix.fy[static_cast<size_t>(kv)];

                LinExpr fn = -nrm.x() * fx;
                fn += {fy, -nrm.y()};
                m.add_constraint(std::move(fn), Sense::Le, 0.0);  // f_n >= 0
                if (slips(v, t)) {
                    const double sg = slip_sign(v, t, tng);
                    LinExpr pin = tng.x() * fx;
                    pin += {fy, tng.y()};
                    pin += {fx, sg * mu_e * nrm.x()};
                    pin += {fy, sg * mu_e * nrm.y()};
                    m.add_constraint(std::move(pin), Sense::Eq, 0.0);
                } else {
                    for (double sign : {1.0, -1.0}) {
                        LinExpr cone = (sign * tng.x()) * fx;
                        cone += {fy, sign * tng.y()};
                        cone += {fx, -mu_e * nrm.x()};
                        cone += {fy, -mu_e * nrm.y()};
                        m.add_constraint(std::move(cone), Sense::Le, 0.0);
                    }
                }
            }
        }

        // Robot contact dynamics and stance-change force zeroing couple
        // consecutive steps.
        const double mstab = relax::compute_big_m(m, {}, cap);
        for (int t = 0; t < T; ++t) {
            for (int i = 0; i < I; ++i) {
                const int k = ix.ti(t, i);
                const int kn = ix.ti(t + 1, i);
                for (int axis = 0; axis < 2; ++axis) {
                    LinExpr dyn = 1.0 * (axis == 0 ? ix.px : ix.py)[static_cast<size_t>(kn)];
                    dyn += {(axis == 0 ? ix.px : ix.py)[static_cast<size_t>(k)], -1.0};
                    dyn += {(axis == 0 ? ix.vx : ix.vy)[static_cast<size_t>(k)], -h};
                    m.add_constraint(std::move(dyn), Sense::Eq, 0.0);
                }
                for (int p = 0; p < P; ++p) {
                    const VarId za = ix.z[static_cast<size_t>(ix.tip(t, i, p))];
                    const VarId zb = ix.z[static_cast<size_t>(ix.tip(t + 1, i, p))];
                    for (const VarId ln : {ix.lam_n[static_cast<size_t>(ix.tip(t, i, p))],
                                           ix.lam_n[static_cast<size_t>(ix.tip(t + 1, i, p))]}) {
                        for (double sign : {1.0, -1.0}) {
                            LinExpr row = 1.0 * ln;
                            row += {za, sign * mstab};
                            row += {zb, -sign * mstab};
                            m.add_constraint(std::move(row), Sense::Le, mstab);
                        }
                    }
                }
            }
        }

        if (relaxed_pose) {
            for (int t = 0; t < S; ++t) {
                const double bt = out.pose_box[static_cast<size_t>(t)].z();
                const relax::Interval thbox{-bt, bt};
                const VarId dth = ix.dq[static_cast<size_t>(3 * t + 2)];
                for (int i = 0; i < I; ++i) {
                    const int k = ix.ti(t, i);
                    relax_product(ix.w_th_alpha[static_cast<size_t>(k)], dth,
                                  ix.alpha[static_cast<size_t>(k)], thbox, {0.0, amax});
                    for (int p = 0; p < P; ++p) {
                        const int kp = ix.tip(t, i, p);
                        relax_product(ix.w_th_ln[static_cast<size_t>(kp)], dth,
                                      ix.lam_n[static_cast<size_t>(kp)], thbox, {0.0, cap});
                        relax_product(ix.w_th_ls[static_cast<size_t>(kp)], dth,
                                      ix.lam_s[static_cast<size_t>(kp)], thbox, {-cap, cap});
                    }
                }
                for (int v = 0; v < V; ++v) {
                    if (!contact(v, t)) continue;
                    const int kv = ix.tv(t, v);
                    relax_product(ix.w_th_fx[static_cast<size_t>(kv)], dth,
                                  ix.fx[static_cast<size_t>(kv)], thbox, {-fcap, fcap});
                    relax_product(ix.w_th_fy[static_cast<size_t>(kv)], dth,
                                  ix.fy[static_cast<size_t>(kv)], thbox, {-fcap, fcap});
                }
            }
            // Perturbed poses still satisfy the forward-Euler chain within
            // the scenario rate boxes.
            for (int t = 0; t < T; ++t) {
                const Vec3 dq_kin = kin.poses[static_cast<size_t>(t)].vec() -
                                    kin.poses[static_cast<size_t>(t) + 1].vec();
                for (int k = 0; k < 3; ++k) {
                    LinExpr dyn = 1.0 * ix.dq[static_cast<size_t>(3 * (t + 1) + k)];
                    dyn += {ix.dq[static_cast<size_t>(3 * t + k)], -1.0};
                    dyn += {ix.qdot[static_cast<size_t>(3 * t + k)], -h};
                    m.add_constraint(std::move(dyn), Sense::Eq, dq_kin[k]);
                }
            }
        }
    }
};

}  // namespace

int ContactSchedule::assigned_surface(int t, int i) const {
    const auto& zi = z.at(static_cast<size_t>(t)).at(static_cast<size_t>(i));
    for (size_t p = 0; p < zi.size(); ++p) {
        if (zi[p]) return static_cast<int>(p);
    }
    return -1;
}

CoptModel build_copt(const Scenario& scenario, const kopt::KinematicsSolution& kin,
                     const Relaxation& relaxation) {
    return std::move(Builder(scenario, kin, relaxation, {}).out);
}

CoptModel relax_pose_variables(const CoptModel& model, const kopt::KinematicsSolution& kin,
                               const std::vector<Vec3>& pose_box) {
    return std::move(Builder(*model.scenario, kin, model.relaxation, pose_box).out);
}

ContactSchedule decode(const CoptModel& model, const std::vector<double>& values) {
    const CoptIndex& ix = model.index;
    const Scenario& s = *model.scenario;
    const auto val = [&](milp::VarId v) { return values.at(static_cast<size_t>(v.index)); };

    ContactSchedule out;
    out.z.resize(static_cast<size_t>(ix.steps));
    out.alpha.resize(static_cast<size_t>(ix.steps));
    out.p_world.resize(static_cast<size_t>(ix.steps));
    out.u.resize(static_cast<size_t>(ix.steps));
    out.lambda.resize(static_cast<size_t>(ix.steps));
    out.f.resize(static_cast<size_t>(ix.steps));
    if (!ix.dq.empty()) out.pose_shift.resize(static_cast<size_t>(ix.steps));

    for (int t = 0; t < ix.steps; ++t) {
        auto& zt = out.z[static_cast<size_t>(t)];
        zt.resize(static_cast<size_t>(ix.robots));
        out.alpha[static_cast<size_t>(t)].resize(static_cast<size_t>(ix.robots), 0.0);
        out.p_world[static_cast<size_t>(t)].resize(static_cast<size_t>(ix.robots));
        out.u[static_cast<size_t>(t)].resize(static_cast<size_t>(ix.robots));
        out.lambda[static_cast<size_t>(t)].resize(static_cast<size_t>(ix.robots));
        out.f[static_cast<size_t>(t)].resize(static_cast<size_t>(ix.vertices));
        if (!ix.dq.empty()) {
            out.pose_shift[static_cast<size_t>(t)] =
                Vec3(val(ix.dq[static_cast<size_t>(3 * t)]), val(ix.dq[static_cast<size_t>(3 * t + 1)]),
                     val(ix.dq[static_cast<size_t>(3 * t + 2)]));
        }
        const Pose2 q = ix.dq.empty()
                            ? model.kin.poses[static_cast<size_t>(t)]
                            : shifted_pose(model.kin.poses[static_cast<size_t>(t)],
                                           out.pose_shift[static_cast<size_t>(t)]);
        for (int i = 0; i < ix.robots; ++i) {
            const int k = ix.ti(t, i);
            zt[static_cast<size_t>(i)].resize(static_cast<size_t>(ix.surfaces), false);
            out.lambda[static_cast<size_t>(t)][static_cast<size_t>(i)].resize(
                static_cast<size_t>(ix.surfaces));
            out.u[static_cast<size_t>(t)][static_cast<size_t>(i)] =
                Vec2(val(ix.ux[static_cast<size_t>(k)]), val(ix.uy[static_cast<size_t>(k)]));
            int assigned = -1;
            for (int p = 0; p < ix.surfaces; ++p) {
                const int kp = ix.tip(t, i, p);
                const bool on = val(ix.z[static_cast<size_t>(kp)]) > 0.5;
                zt[static_cast<size_t>(i)][static_cast<size_t>(p)] = on;
                if (on) assigned = p;
                out.lambda[static_cast<size_t>(t)][static_cast<size_t>(i)][static_cast<size_t>(p)] =
                    Vec2(val(ix.lam_n[static_cast<size_t>(kp)]), val(ix.lam_s[static_cast<size_t>(kp)]));
            }
            double a = val(ix.alpha[static_cast<size_t>(k)]);
            if (assigned >= 0) {
                const Surface& sf = s.object.surfaces[static_cast<size_t>(assigned)];
                a = std::clamp(a, 0.0, sf.length);
                const SurfaceFrame fr = surface_frame(sf, q);
                out.p_world[static_cast<size_t>(t)][static_cast<size_t>(i)] =
                    fr.origin + a * fr.rotation.col(1);
            } else {
                out.p_world[static_cast<size_t>(t)][static_cast<size_t>(i)] =
                    Vec2(val(ix.px[static_cast<size_t>(k)]), val(ix.py[static_cast<size_t>(k)]));
            }
            out.alpha[static_cast<size_t>(t)][static_cast<size_t>(i)] = a;
        }
        for (int v = 0; v < ix.vertices; ++v) {
            const int kv = ix.tv(t, v);
            out.f[static_cast<size_t>(t)][static_cast<size_t>(v)] =
                Vec2(val(ix.fx[static_cast<size_t>(kv)]), val(ix.fy[static_cast<size_t>(kv)]));
        }
    }
    return out;
}

CoptSolve solve_copt(const CoptModel& model, const milp::SolveConfig& config) {
    CoptSolve out;
    out.raw = milp::solve(model.model, config);
    out.status = out.raw.status;
    if (out.feasible()) out.schedule = decode(model, out.raw.values);
    return out;
}

int add_no_good_cut(CoptModel& model, const std::vector<ActiveAssignment>& active_set) {
    if (active_set.empty()) throw std::invalid_argument("no-good cut needs a nonempty active set");
    LinExpr cut;
    for (const ActiveAssignment& a : active_set) {
        if (a.t < 0 || a.t >= model.index.steps || a.i < 0 || a.i >= model.index.robots ||
            a.p < 0 || a.p >= model.index.surfaces) {
            throw std::invalid_argument("active assignment out of range");
        }
        cut += {model.index.z[static_cast<size_t>(model.index.tip(a.t, a.i, a.p))], 1.0};
    }
    return model.model.add_constraint(std::move(cut), Sense::Le,
                                      static_cast<double>(active_set.size()) - 1.0);
}

EquilibriumResidual equilibrium_residual(const CoptModel& model, const ContactSchedule& schedule) {
    const Scenario& s = *model.scenario;
    EquilibriumResidual worst;
    for (int t = 0; t < model.index.steps; ++t) {
        const Pose2 q = schedule.pose_shift.empty()
                            ? model.kin.poses[static_cast<size_t>(t)]
                            : shifted_pose(model.kin.poses[static_cast<size_t>(t)],
                                           schedule.pose_shift[static_cast<size_t>(t)]);
        const Vec2 com_w = q.apply(s.object.com);
        Vec2 force = s.object.mass * s.gravity;
        double moment = 0.0;
        for (int i = 0; i < model.index.robots; ++i) {
            for (int p = 0; p < model.index.surfaces; ++p) {
                const Vec2 lam =
                    schedule.lambda[static_cast<size_t>(t)][static_cast<size_t>(i)][static_cast<size_t>(p)];
                const Surface& sf = s.object.surfaces[static_cast<size_t>(p)];
                const SurfaceFrame fr = surface_frame(sf, q);
                const Vec2 world = fr.rotation * Vec2(-lam.x(), lam.y());
                force += world;
                const double a = std::clamp(
                    schedule.alpha[static_cast<size_t>(t)][static_cast<size_t>(i)], 0.0, sf.length);
                const Vec2 at = fr.origin + a * fr.rotation.col(1);
                moment += cross2(at - com_w, world);
            }
        }
        for (int v = 0; v < model.index.vertices; ++v) {
            const Vec2 f = schedule.f[static_cast<size_t>(t)][static_cast<size_t>(v)];
            moment += cross2(vertex_world(s.object, v, q) - com_w, f);
            force += f;
        }
        worst.force = std::max(worst.force, force.lpNorm<Eigen::Infinity>());
        worst.moment = std::max(worst.moment, std::abs(moment));
    }
    return worst;
}

double moment_gap_bound(const CoptModel& model) {
    const int c = std::max(1, model.relaxation.kind == Relaxation::Kind::McCormick
                                  ? 1
                                  : model.relaxation.regions);
    double bound = model.index.robots * model.index.surfaces *
                   (model.alpha_max / c) * model.lambda_cap / 4.0;
    if (!model.pose_box.empty()) {
        const Scenario& s = *model.scenario;
        double extrinsic = 0.0;
        for (int t = 0; t < model.index.steps; ++t) {
            const double bt = model.pose_box[static_cast<size_t>(t)].z();
            const Mat2 rd = rotation2_deriv(model.kin.poses[static_cast<size_t>(t)].theta);
            double acc = 0.0;
            for (int v = 0; v < model.index.vertices; ++v) {
                if (!model.kin.contact_map[static_cast<size_t>(v)][static_cast<size_t>(t)]) continue;
                const Vec2 d1 = rd * (s.object.vertices[static_cast<size_t>(v)] - s.object.com);
                // Two deviation-force products per contact, each with gap
                // (2 b_theta)(2 f_cap)/4.
                acc += (std::abs(d1.x()) + std::abs(d1.y())) * bt * model.f_cap;
            }
            extrinsic = std::max(extrinsic, acc);
        }
        bound += extrinsic;
    }
    return bound;
}

}  // namespace manip::copt
