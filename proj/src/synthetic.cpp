#include "semshape/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "semshape/errors.hpp"
#include "semshape/rng.hpp"

namespace semshape {

namespace {

constexpr double kTau = 2.0 * std::numbers::pi;
constexpr double kBasisColumnNorm = 0.05;  // metres, Frobenius norm per column

struct Ring {
    Eigen::Index start = 0;  // first vertex id
    Eigen::Index count = 0;  // vertices around the loop
};

struct Tube {
    std::vector<Ring> rings;
};

// Deterministic vertex layout of the body-like template; a pure function of
// the vertex count, shared by the generator and the spec builder.
struct BodyPlan {
    Eigen::Index total = 0;
    bool limbs = false;
    Tube torso, left_leg, right_leg, left_arm, right_arm;
    std::vector<Eigen::Index> collar;  // leftover vertices on the shoulder line
    std::size_t hip_ring = 0, waist_ring = 0, stomach_ring = 0, belly_ring = 0, chest_ring = 0;
    std::size_t calf_ring = 0, thigh_ring = 0;
};

Eigen::Index torso_columns(Eigen::Index budget, bool limbs) {
    if (limbs) return 16;
    return std::clamp<Eigen::Index>(budget / 4, 3, 16);
}

BodyPlan plan_body(Eigen::Index num_vertices) {
    BodyPlan plan;
    plan.total = num_vertices;
    plan.limbs = num_vertices >= 240;

    Eigen::Index next = 0;
    const auto add_tube = [&next](Tube& tube, Eigen::Index rings, Eigen::Index cols) {
        for (Eigen::Index r = 0; r < rings; ++r) {
            tube.rings.push_back({next, cols});
            next += cols;
        }
    };

    Eigen::Index torso_budget = num_vertices;
    if (plan.limbs) {
        const Eigen::Index leg_rings = std::max<Eigen::Index>(3, (num_vertices * 14 / 100) / 10);
        const Eigen::Index arm_rings = std::max<Eigen::Index>(3, (num_vertices * 10 / 100) / 8);
        torso_budget = num_vertices - 2 * leg_rings * 10 - 2 * arm_rings * 8;

        const Eigen::Index cols = torso_columns(torso_budget, true);
        const Eigen::Index torso_rings = torso_budget / cols;
        add_tube(plan.torso, torso_rings, cols);
        add_tube(plan.left_leg, leg_rings, 10);
        add_tube(plan.right_leg, leg_rings, 10);
        add_tube(plan.left_arm, arm_rings, 8);
        add_tube(plan.right_arm, arm_rings, 8);

        plan.calf_ring = static_cast<std::size_t>(std::lround(0.30 * double(leg_rings - 1)));
        plan.thigh_ring = static_cast<std::size_t>(std::lround(0.85 * double(leg_rings - 1)));
    } else {
        const Eigen::Index cols = torso_columns(torso_budget, false);
        add_tube(plan.torso, torso_budget / cols, cols);
    }

    const auto torso_rings = static_cast<Eigen::Index>(plan.torso.rings.size());
    plan.hip_ring = 0;
    plan.waist_ring = static_cast<std::size_t>(std::lround(0.16 * double(torso_rings - 1)));
    plan.stomach_ring = static_cast<std::size_t>(std::lround(0.38 * double(torso_rings - 1)));
    plan.belly_ring = static_cast<std::size_t>(std::lround(0.55 * double(torso_rings - 1)));
    plan.chest_ring = static_cast<std::size_t>(std::lround(0.72 * double(torso_rings - 1)));

    while (next < num_vertices) plan.collar.push_back(next++);
    return plan;
}

// Cross-section radii, tuned so the template reads as a standing figure with
// a chest, a stomach and calves to measure.
double leg_radius(double s) {
    return 0.050 + 0.030 * s + 0.022 * std::exp(-std::pow((s - 0.30) / 0.14, 2));
}
double torso_rx(double s) {
    return 0.125 + 0.045 * std::exp(-std::pow((s - 0.70) / 0.22, 2)) +
           0.025 * std::exp(-std::pow(s / 0.25, 2));
}
double torso_rz(double s) {
    return 0.085 + 0.030 * std::exp(-std::pow((s - 0.38) / 0.25, 2));
}
double arm_radius(double s) { return 0.045 - 0.012 * s; }

void fill_tube_faces(const Tube& tube, std::vector<Face>& faces) {
    for (std::size_t r = 0; r + 1 < tube.rings.size(); ++r) {
        const Ring& a = tube.rings[r];
        const Ring& b = tube.rings[r + 1];
        if (a.count != b.count) continue;
        for (Eigen::Index c = 0; c < a.count; ++c) {
            const auto c2 = (c + 1) % a.count;
            const auto a0 = static_cast<std::uint32_t>(a.start + c);
            const auto a1 = static_cast<std::uint32_t>(a.start + c2);
            const auto b0 = static_cast<std::uint32_t>(b.start + c);
            const auto b1 = static_cast<std::uint32_t>(b.start + c2);
            faces.push_back({a0, a1, b1});
            faces.push_back({a0, b1, b0});
        }
    }
}

Eigen::VectorXd make_body_template(const BodyPlan& plan, std::vector<Face>& faces) {
    Eigen::VectorXd t(3 * plan.total);

    const auto set_vertex = [&t](Eigen::Index v, double x, double y, double z) {
        t[3 * v] = x;
        t[3 * v + 1] = y;
        t[3 * v + 2] = z;
    };

    const auto fill_vertical_tube = [&](const Tube& tube, double cx, double y0, double y1,
                                        auto rx_of, auto rz_of) {
        const auto n_rings = static_cast<Eigen::Index>(tube.rings.size());
        for (Eigen::Index r = 0; r < n_rings; ++r) {
            const double s = n_rings > 1 ? double(r) / double(n_rings - 1) : 0.0;
            const double y = y0 + s * (y1 - y0);
            const Ring& ring = tube.rings[r];
            for (Eigen::Index c = 0; c < ring.count; ++c) {
                const double theta = kTau * double(c) / double(ring.count);
                set_vertex(ring.start + c, cx + rx_of(s) * std::cos(theta), y,
                           rz_of(s) * std::sin(theta));
            }
        }
    };

    fill_vertical_tube(plan.torso, 0.0, 0.88, 1.50, torso_rx, torso_rz);
    if (plan.limbs) {
        fill_vertical_tube(plan.left_leg, -0.10, 0.02, 0.88, leg_radius, leg_radius);
        fill_vertical_tube(plan.right_leg, 0.10, 0.02, 0.88, leg_radius, leg_radius);

        // Arms run horizontally along x at shoulder height, cross-sections in
        // the y-z plane. Kept short of half the height so the figure stays
        // taller than wide.
        const auto fill_arm = [&](const Tube& tube, double sign) {
            const auto n_rings = static_cast<Eigen::Index>(tube.rings.size());
            for (Eigen::Index r = 0; r < n_rings; ++r) {
                const double s = n_rings > 1 ? double(r) / double(n_rings - 1) : 0.0;
                const double x = sign * (0.17 + s * 0.38);
                const Ring& ring = tube.rings[r];
                for (Eigen::Index c = 0; c < ring.count; ++c) {
                    const double theta = kTau * double(c) / double(ring.count);
                    set_vertex(ring.start + c, x, 1.38 + arm_radius(s) * std::cos(theta),
                               arm_radius(s) * std::sin(theta));
                }
            }
        };
        fill_arm(plan.left_arm, -1.0);
        fill_arm(plan.right_arm, 1.0);
    }

    // Leftover vertices sit slightly inset on the top torso ellipse.
    const double rx_top = 0.9 * torso_rx(1.0);
    const double rz_top = 0.9 * torso_rz(1.0);
    for (std::size_t k = 0; k < plan.collar.size(); ++k) {
        const double phi = kTau * (double(k) + 0.5) / double(plan.collar.size());
        set_vertex(plan.collar[k], rx_top * std::cos(phi), 1.50, rz_top * std::sin(phi));
    }

    fill_tube_faces(plan.torso, faces);
    fill_tube_faces(plan.left_leg, faces);
    fill_tube_faces(plan.right_leg, faces);
    fill_tube_faces(plan.left_arm, faces);
    fill_tube_faces(plan.right_arm, faces);
    return t;
}

// Joint order for body-like models with limbs.
enum BodyJoint : Eigen::Index {
    kPelvis = 0,
    kChest,
    kLeftHip,
    kRightHip,
    kLeftAnkle,
    kRightAnkle,
    kLeftShoulder,
    kRightShoulder,
    kLeftWrist,
    kRightWrist,
    kNumBodyJoints,
};

Eigen::MatrixXd make_body_joint_regressor(const BodyPlan& plan) {
    Eigen::MatrixXd reg = Eigen::MatrixXd::Zero(kNumBodyJoints, plan.total);
    const auto set_ring_mean = [&reg](Eigen::Index joint, const Ring& ring) {
        for (Eigen::Index c = 0; c < ring.count; ++c) {
            reg(joint, ring.start + c) = 1.0 / double(ring.count);
        }
    };
    set_ring_mean(kPelvis, plan.torso.rings[plan.hip_ring]);
    set_ring_mean(kChest, plan.torso.rings[plan.chest_ring]);
    set_ring_mean(kLeftHip, plan.left_leg.rings.back());
    set_ring_mean(kRightHip, plan.right_leg.rings.back());
    set_ring_mean(kLeftAnkle, plan.left_leg.rings.front());
    set_ring_mean(kRightAnkle, plan.right_leg.rings.front());
    set_ring_mean(kLeftShoulder, plan.left_arm.rings.front());
    set_ring_mean(kRightShoulder, plan.right_arm.rings.front());
    set_ring_mean(kLeftWrist, plan.left_arm.rings.back());
    set_ring_mean(kRightWrist, plan.right_arm.rings.back());
    return reg;
}

// Evenly distributed points on a sphere (Fibonacci lattice), any count.
Eigen::VectorXd make_sphere_template(Eigen::Index num_vertices, double radius) {
    Eigen::VectorXd t(3 * num_vertices);
    const double golden = std::numbers::phi;
    for (Eigen::Index v = 0; v < num_vertices; ++v) {
        const double u = (double(v) + 0.5) / double(num_vertices);
        const double y = 1.0 - 2.0 * u;
        const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
        const double theta = kTau * double(v) / golden;
        t[3 * v] = radius * r * std::cos(theta);
        t[3 * v + 1] = radius * y;
        t[3 * v + 2] = radius * r * std::sin(theta);
    }
    return t;
}

// Smooth localized displacement bump: dir is either a fixed axis or radial
// about the centre, magnitude falls off as a Gaussian of the distance.
void add_bump(Eigen::Ref<Eigen::VectorXd> column, const Eigen::VectorXd& tmpl,
              const Eigen::Vector3d& center, double length_scale, int type, Rng& rng) {
    Eigen::Vector3d axis = Eigen::Vector3d::Zero();
    if (type >= 1 && type <= 3) {
        axis[type - 1] = 1.0;
    } else if (type == 4) {
        axis = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
        const double n = axis.norm();
        axis = n > 1e-12 ? Eigen::Vector3d(axis / n) : Eigen::Vector3d::UnitY();
    }
    const Eigen::Index num_vertices = tmpl.size() / 3;
    for (Eigen::Index v = 0; v < num_vertices; ++v) {
        const Eigen::Vector3d p = tmpl.segment<3>(3 * v);
        const Eigen::Vector3d d = p - center;
        const double g = std::exp(-d.squaredNorm() / (2.0 * length_scale * length_scale));
        // type 0: unnormalized radial direction keeps the field smooth at the
        // centre (the bump vanishes there instead of flipping direction).
        const Eigen::Vector3d disp = type == 0 ? Eigen::Vector3d(d * (g / length_scale))
                                               : Eigen::Vector3d(axis * g);
        column.segment<3>(3 * v) += disp;
    }
}

Eigen::MatrixXd make_basis(const Eigen::VectorXd& tmpl, Eigen::Index num_coeffs,
                           std::uint64_t seed, SyntheticProfile profile) {
    const Eigen::Index num_vertices = tmpl.size() / 3;
    Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(tmpl.size(), num_coeffs);
    for (Eigen::Index j = 0; j < num_coeffs; ++j) {
        Rng rng(mix_seed(seed, 0x1000 + static_cast<std::uint64_t>(j)));
        auto column = basis.col(j);
        const int bumps = profile == SyntheticProfile::BodyLike ? 2 : 3;
        for (int b = 0; b < bumps; ++b) {
            const auto center_vertex =
                std::min<Eigen::Index>(num_vertices - 1,
                                       static_cast<Eigen::Index>(rng.uniform() * double(num_vertices)));
            const Eigen::Vector3d center = tmpl.segment<3>(3 * center_vertex);
            double length_scale = 0.0;
            int type = 0;
            if (profile == SyntheticProfile::BodyLike) {
                length_scale = 0.04 + 0.11 * rng.uniform();
                const double u = rng.uniform();
                type = u < 0.45 ? 0 : (u < 0.70 ? 2 : (u < 0.85 ? 1 : 3));
            } else {
                length_scale = 0.10 + 0.30 * rng.uniform();
                type = 4;
            }
            add_bump(column, tmpl, center, length_scale, type, rng);
        }
        const double norm = column.norm();
        if (norm < 1e-12) {
            column.setZero();
            for (Eigen::Index v = 0; v < num_vertices; ++v) column[3 * v + 1] = 1.0;
        }
        column *= kBasisColumnNorm / column.norm();
    }
    return basis;
}

MeasurementDef distance_def(std::string name, Anchor a, Anchor b,
                            std::optional<std::string> pair = std::nullopt) {
    MeasurementDef def;
    def.name = std::move(name);
    def.kind = MeasurementKind::Distance;
    def.anchors = {a, b};
    def.pair_with = std::move(pair);
    return def;
}

MeasurementDef axis_def(std::string name, Anchor negative, Anchor positive, Axis axis) {
    MeasurementDef def;
    def.name = std::move(name);
    def.kind = MeasurementKind::AxisDifference;
    def.anchors = {negative, positive};
    def.axis = axis;
    return def;
}

MeasurementDef ring_circumference_def(std::string name, const Ring& ring,
                                      std::optional<std::string> pair = std::nullopt) {
    MeasurementDef def;
    def.name = std::move(name);
    def.kind = MeasurementKind::Circumference;
    for (Eigen::Index c = 0; c < ring.count; ++c) {
        def.anchors.push_back(Anchor::vertex(ring.start + c));
    }
    def.pair_with = std::move(pair);
    return def;
}

MeasurementSpec make_body_spec(const BodyPlan& plan) {
    const Ring& hip = plan.torso.rings[plan.hip_ring];
    const Ring& waist = plan.torso.rings[plan.waist_ring];
    const Ring& stomach = plan.torso.rings[plan.stomach_ring];
    const Ring& belly = plan.torso.rings[plan.belly_ring];
    const Ring& chest = plan.torso.rings[plan.chest_ring];
    const Ring& top = plan.torso.rings.back();

    const auto ring_col = [](const Ring& ring, double frac) {
        const auto c = static_cast<Eigen::Index>(std::lround(frac * double(ring.count))) % ring.count;
        return Anchor::vertex(ring.start + c);
    };

    MeasurementSpec spec;
    // Signed spans: anchors ordered (negative side, positive side) so the
    // difference comes out positive on the template. Each torso ring carries
    // at most two of {width, depth, circumference}; all three together are
    // functionally dependent for near-elliptical sections, which would make
    // single-slot offsets infeasible.
    spec.defs.push_back(axis_def("chest_width", ring_col(chest, 0.5), ring_col(chest, 0.0), Axis::X));
    spec.defs.push_back(axis_def("chest_depth", ring_col(chest, 0.75), ring_col(chest, 0.25), Axis::Z));
    spec.defs.push_back(axis_def("stomach_depth", ring_col(belly, 0.75), ring_col(belly, 0.25), Axis::Z));
    spec.defs.push_back(ring_circumference_def("stomach_circ", stomach));
    spec.defs.push_back(axis_def("hip_width", ring_col(waist, 0.5), ring_col(waist, 0.0), Axis::X));
    spec.defs.push_back(ring_circumference_def("hip_circ", hip));

    if (plan.limbs) {
        const Ring& l_calf = plan.left_leg.rings[plan.calf_ring];
        const Ring& r_calf = plan.right_leg.rings[plan.calf_ring];
        const Ring& l_thigh = plan.left_leg.rings[plan.thigh_ring];
        const Ring& r_thigh = plan.right_leg.rings[plan.thigh_ring];
        const Ring& l_ankle = plan.left_leg.rings.front();
        const Ring& r_ankle = plan.right_leg.rings.front();

        spec.defs.push_back(ring_circumference_def("calf_circ", l_calf, "calf_circ_right"));
        spec.defs.push_back(ring_circumference_def("calf_circ_right", r_calf, "calf_circ"));
        spec.defs.push_back(ring_circumference_def("thigh_circ", l_thigh, "thigh_circ_right"));
        spec.defs.push_back(ring_circumference_def("thigh_circ_right", r_thigh, "thigh_circ"));
        spec.defs.push_back(distance_def("calf_length", Anchor::vertex(l_calf.start),
                                         Anchor::vertex(l_ankle.start), "calf_length_right"));
        spec.defs.push_back(distance_def("calf_length_right", Anchor::vertex(r_calf.start),
                                         Anchor::vertex(r_ankle.start), "calf_length"));
        spec.defs.push_back(distance_def("arm_length", Anchor::joint(kLeftShoulder),
                                         Anchor::joint(kLeftWrist), "arm_length_right"));
        spec.defs.push_back(distance_def("arm_length_right", Anchor::joint(kRightShoulder),
                                         Anchor::joint(kRightWrist), "arm_length"));
        spec.defs.push_back(distance_def("leg_length", Anchor::joint(kLeftHip),
                                         Anchor::joint(kLeftAnkle), "leg_length_right"));
        spec.defs.push_back(distance_def("leg_length_right", Anchor::joint(kRightHip),
                                         Anchor::joint(kRightAnkle), "leg_length"));
        spec.defs.push_back(distance_def("shoulder_width", Anchor::joint(kLeftShoulder),
                                         Anchor::joint(kRightShoulder)));
        spec.defs.push_back(axis_def("torso_length", Anchor::joint(kPelvis), Anchor::joint(kChest),
                                     Axis::Y));
        spec.output_names = {"chest_width", "chest_depth",    "stomach_depth", "stomach_circ",
                             "hip_width",   "hip_circ",       "calf_circ",     "thigh_circ",
                             "calf_length", "arm_length",     "leg_length",    "shoulder_width",
                             "torso_length"};
    } else {
        spec.defs.push_back(distance_def("diag_span", Anchor::vertex(hip.start),
                                         ring_col(top, 0.5)));
        spec.defs.push_back(axis_def("torso_length", Anchor::vertex(hip.start),
                                     Anchor::vertex(top.start), Axis::Y));
        spec.output_names = {"chest_width", "chest_depth", "stomach_depth", "stomach_circ",
                             "hip_width",   "hip_circ",    "diag_span",     "torso_length"};
    }
    spec.validate();
    return spec;
}

MeasurementSpec make_sphere_spec(const LinearShapeModel& model) {
    const Eigen::Index num_vertices = model.num_vertices;
    const auto coord = [&](Eigen::Index v, int axis) {
        return model.template_vertices[3 * v + axis];
    };
    const auto extreme = [&](int axis, bool maximum) {
        Eigen::Index best = 0;
        for (Eigen::Index v = 1; v < num_vertices; ++v) {
            const bool better = maximum ? coord(v, axis) > coord(best, axis)
                                        : coord(v, axis) < coord(best, axis);
            if (better) best = v;
        }
        return best;
    };

    // Equator loop: vertices in a band around y = 0, ordered by angle.
    double band = 0.2 * model.template_vertices.cwiseAbs().maxCoeff();
    std::vector<Eigen::Index> equator;
    for (int attempt = 0; attempt < 8 && equator.size() < 4; ++attempt, band *= 1.7) {
        equator.clear();
        for (Eigen::Index v = 0; v < num_vertices; ++v) {
            if (std::abs(coord(v, 1)) < band) equator.push_back(v);
        }
    }
    std::sort(equator.begin(), equator.end(), [&](Eigen::Index a, Eigen::Index b) {
        return std::atan2(coord(a, 2), coord(a, 0)) < std::atan2(coord(b, 2), coord(b, 0));
    });
    if (equator.size() > 12) {
        std::vector<Eigen::Index> sub;
        for (std::size_t k = 0; k < 12; ++k) sub.push_back(equator[k * equator.size() / 12]);
        equator = std::move(sub);
    }

    MeasurementSpec spec;
    spec.defs.push_back(axis_def("width", Anchor::vertex(extreme(0, false)),
                                 Anchor::vertex(extreme(0, true)), Axis::X));
    spec.defs.push_back(axis_def("height", Anchor::vertex(extreme(1, false)),
                                 Anchor::vertex(extreme(1, true)), Axis::Y));
    spec.defs.push_back(axis_def("depth", Anchor::vertex(extreme(2, false)),
                                 Anchor::vertex(extreme(2, true)), Axis::Z));
    MeasurementDef eq;
    eq.name = "equator_circ";
    eq.kind = MeasurementKind::Circumference;
    for (const auto v : equator) eq.anchors.push_back(Anchor::vertex(v));
    spec.defs.push_back(std::move(eq));
    spec.defs.push_back(distance_def("pole_distance", Anchor::vertex(extreme(1, false)),
                                     Anchor::vertex(extreme(1, true))));
    spec.output_names = {"width", "height", "depth", "equator_circ", "pole_distance"};
    spec.validate();
    return spec;
}

}  // namespace

LinearShapeModel generate_synthetic_model(std::uint64_t seed, Eigen::Index num_vertices,
                                          Eigen::Index num_coeffs, SyntheticProfile profile) {
    if (num_vertices < 8) {
        throw std::invalid_argument("synthetic models need at least 8 vertices, got " +
                                    std::to_string(num_vertices));
    }
    if (num_coeffs < 1) {
        throw std::invalid_argument("synthetic models need at least 1 coefficient, got " +
                                    std::to_string(num_coeffs));
    }

    LinearShapeModel model;
    model.num_vertices = num_vertices;
    model.num_coeffs = num_coeffs;

    if (profile == SyntheticProfile::BodyLike) {
        const BodyPlan plan = plan_body(num_vertices);
        model.template_vertices = make_body_template(plan, model.faces);
        if (plan.limbs) model.joint_regressor = make_body_joint_regressor(plan);
    } else {
        model.template_vertices = make_sphere_template(num_vertices, 0.25);
    }
    model.basis = make_basis(model.template_vertices, num_coeffs, seed, profile);
    model.validate();
    return model;
}

MeasurementSpec generate_synthetic_spec(const LinearShapeModel& model, SyntheticProfile profile) {
    if (profile == SyntheticProfile::BodyLike) {
        return make_body_spec(plan_body(model.num_vertices));
    }
    return make_sphere_spec(model);
}

MeasurementSpec generate_linear_spec(const LinearShapeModel& model, Eigen::Index num_outputs,
                                     std::uint64_t seed) {
    if (num_outputs < 1 || num_outputs > model.num_coeffs) {
        throw std::invalid_argument("linear spec needs 1 <= num_outputs <= num_coeffs, got " +
                                    std::to_string(num_outputs) + " outputs for " +
                                    std::to_string(model.num_coeffs) + " coefficients");
    }

    const Eigen::VectorXd beta0 = Eigen::VectorXd::Zero(model.num_coeffs);
    MeasurementSpec best;
    double best_cond = std::numeric_limits<double>::infinity();

    for (int attempt = 0; attempt < 50; ++attempt) {
        Rng rng(mix_seed(seed, 0x2000 + static_cast<std::uint64_t>(attempt)));
        MeasurementSpec candidate;
        for (Eigen::Index k = 0; k < num_outputs; ++k) {
            const auto pick = [&] {
                return std::min<Eigen::Index>(
                    model.num_vertices - 1,
                    static_cast<Eigen::Index>(rng.uniform() * double(model.num_vertices)));
            };
            Eigen::Index a = pick();
            Eigen::Index b = pick();
            while (b == a) b = pick();
            const auto axis = static_cast<Axis>(static_cast<int>(rng.uniform() * 3.0) % 3);
            char name[32];
            std::snprintf(name, sizeof(name), "ax_diff_%02d", static_cast<int>(k));
            candidate.defs.push_back(axis_def(name, Anchor::vertex(a), Anchor::vertex(b), axis));
            candidate.output_names.push_back(name);
        }
        const Eigen::MatrixXd jac = measurement_jacobian(model, candidate, beta0);
        const Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac);
        const double smin = svd.singularValues().minCoeff();
        const double smax = svd.singularValues().maxCoeff();
        if (smin <= 0.0) continue;
        const double cond = smax / smin;
        if (cond < best_cond) {
            best_cond = cond;
            best = std::move(candidate);
        }
        if (best_cond < 100.0) break;
    }

    if (!std::isfinite(best_cond)) {
        throw NumericalError("could not build a full-rank linear spec for this model");
    }
    best.validate();
    return best;
}

}  // namespace semshape
