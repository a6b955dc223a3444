#include "semshape/measurements.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "semshape/errors.hpp"

namespace semshape {

namespace {

using nlohmann::ordered_json;

const char* kind_name(MeasurementKind kind) {
    switch (kind) {
        case MeasurementKind::Distance: return "distance";
        case MeasurementKind::Circumference: return "circumference";
        case MeasurementKind::AxisDifference: return "axis_difference";
    }
    return "?";
}

MeasurementKind kind_from_name(const std::string& s, const std::string& def_name) {
    if (s == "distance") return MeasurementKind::Distance;
    if (s == "circumference") return MeasurementKind::Circumference;
    if (s == "axis_difference") return MeasurementKind::AxisDifference;
    throw FormatError("definition '" + def_name + "' has unknown kind '" + s + "'");
}

const char* axis_name(Axis axis) {
    switch (axis) {
        case Axis::X: return "x";
        case Axis::Y: return "y";
        case Axis::Z: return "z";
    }
    return "?";
}

Axis axis_from_name(const std::string& s, const std::string& def_name) {
    if (s == "x") return Axis::X;
    if (s == "y") return Axis::Y;
    if (s == "z") return Axis::Z;
    throw FormatError("definition '" + def_name + "' has unknown axis '" + s + "'");
}

constexpr double kSegmentFloor = 1e-12;  // metres; shorter segments are singular

}  // namespace

void MeasurementSpec::validate() const {
    if (defs.empty()) throw FormatError("measurement spec has no definitions");
    if (output_names.empty()) throw FormatError("measurement spec has no output names");

    std::map<std::string, const MeasurementDef*> by_name;
    for (const auto& def : defs) {
        if (def.name.empty()) throw FormatError("measurement definition with empty name");
        if (!by_name.emplace(def.name, &def).second) {
            throw FormatError("duplicate measurement definition '" + def.name + "'");
        }
    }

    for (const auto& def : defs) {
        const std::size_t n = def.anchors.size();
        switch (def.kind) {
            case MeasurementKind::Distance:
            case MeasurementKind::AxisDifference:
                if (n != 2) {
                    throw FormatError("definition '" + def.name + "' (" + kind_name(def.kind) +
                                      ") needs exactly 2 anchors, has " + std::to_string(n));
                }
                break;
            case MeasurementKind::Circumference:
                if (n < 3) {
                    throw FormatError("definition '" + def.name +
                                      "' (circumference) needs at least 3 waypoints, has " +
                                      std::to_string(n));
                }
                break;
        }
        if ((def.kind == MeasurementKind::AxisDifference) != def.axis.has_value()) {
            throw FormatError("definition '" + def.name + "' must carry an axis " +
                              (def.axis ? "only when" : "because") + " its kind is axis_difference");
        }
        for (const auto& anchor : def.anchors) {
            if (anchor.index < 0) {
                throw FormatError("definition '" + def.name + "' has a negative anchor index");
            }
        }
        if (def.pair_with) {
            if (*def.pair_with == def.name) {
                throw FormatError("definition '" + def.name + "' is paired with itself");
            }
            const auto it = by_name.find(*def.pair_with);
            if (it == by_name.end()) {
                throw FormatError("definition '" + def.name + "' pairs with missing definition '" +
                                  *def.pair_with + "'");
            }
            const MeasurementDef& partner = *it->second;
            if (partner.kind != def.kind) {
                throw FormatError("paired definitions '" + def.name + "' and '" + partner.name +
                                  "' have different kinds");
            }
            if (!partner.pair_with || *partner.pair_with != def.name) {
                throw FormatError("pairing between '" + def.name + "' and '" + partner.name +
                                  "' is not symmetric");
            }
        }
    }

    std::set<std::string> seen_outputs;
    std::set<std::string> covered;
    for (const auto& name : output_names) {
        if (!seen_outputs.insert(name).second) {
            throw FormatError("duplicate output name '" + name + "'");
        }
        const auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw FormatError("output name '" + name + "' does not match any definition");
        }
        const MeasurementDef& def = *it->second;
        if (!covered.insert(def.name).second) {
            throw FormatError("definition '" + def.name + "' feeds more than one output slot");
        }
        if (def.pair_with && !covered.insert(*def.pair_with).second) {
            throw FormatError("definition '" + *def.pair_with + "' feeds more than one output slot");
        }
    }
    for (const auto& def : defs) {
        if (!covered.count(def.name)) {
            throw FormatError("definition '" + def.name + "' is not reachable from output_names");
        }
    }
}

Eigen::Index MeasurementSpec::output_slot(const std::string& name) const {
    const auto it = std::find(output_names.begin(), output_names.end(), name);
    if (it == output_names.end()) {
        std::ostringstream msg;
        msg << "unknown measurement '" << name << "'; valid names:";
        for (const auto& n : output_names) msg << " " << n;
        throw std::invalid_argument(msg.str());
    }
    return static_cast<Eigen::Index>(it - output_names.begin());
}

MeasurementEvaluator::MeasurementEvaluator(const LinearShapeModel& model,
                                           const MeasurementSpec& spec)
    : spec_(spec) {
    spec_.validate();

    // Deduplicate anchors into one table; each gets three rows of the affine
    // position map positions = anchor_basis_ * beta + anchor_offset_.
    std::map<std::pair<int, Eigen::Index>, Eigen::Index> anchor_rows;
    std::vector<Anchor> anchors;
    std::map<std::string, Eigen::Index> def_index;

    for (std::size_t d = 0; d < spec_.defs.size(); ++d) {
        const MeasurementDef& def = spec_.defs[d];
        def_index[def.name] = static_cast<Eigen::Index>(d);
        DefEval eval;
        eval.kind = def.kind;
        eval.axis = def.axis ? static_cast<int>(*def.axis) : 0;
        for (const auto& anchor : def.anchors) {
            if (anchor.kind == Anchor::Kind::Vertex) {
                if (anchor.index >= model.num_vertices) {
                    throw std::invalid_argument(
                        "definition '" + def.name + "' references vertex " +
                        std::to_string(anchor.index) + " but the model has " +
                        std::to_string(model.num_vertices) + " vertices");
                }
            } else {
                if (!model.joint_regressor) {
                    throw std::invalid_argument("definition '" + def.name +
                                                "' uses joint anchors but the model has no "
                                                "joint regressor");
                }
                if (anchor.index >= model.num_joints()) {
                    throw std::invalid_argument(
                        "definition '" + def.name + "' references joint " +
                        std::to_string(anchor.index) + " but the model has " +
                        std::to_string(model.num_joints()) + " joints");
                }
            }
            const auto key = std::make_pair(static_cast<int>(anchor.kind), anchor.index);
            auto [it, inserted] = anchor_rows.emplace(key, anchors.size());
            if (inserted) anchors.push_back(anchor);
            eval.anchor_rows.push_back(it->second);
        }
        defs_.push_back(std::move(eval));
    }

    const Eigen::Index num_anchors = static_cast<Eigen::Index>(anchors.size());
    anchor_basis_.setZero(3 * num_anchors, model.num_coeffs);
    anchor_offset_.setZero(3 * num_anchors);
    for (Eigen::Index a = 0; a < num_anchors; ++a) {
        const Anchor& anchor = anchors[a];
        if (anchor.kind == Anchor::Kind::Vertex) {
            anchor_basis_.middleRows(3 * a, 3) = model.basis.middleRows(3 * anchor.index, 3);
            anchor_offset_.segment(3 * a, 3) =
                model.template_vertices.segment(3 * anchor.index, 3);
        } else {
            const auto weights = model.joint_regressor->row(anchor.index);
            for (Eigen::Index v = 0; v < model.num_vertices; ++v) {
                const double w = weights[v];
                if (w == 0.0) continue;
                anchor_basis_.middleRows(3 * a, 3) += w * model.basis.middleRows(3 * v, 3);
                anchor_offset_.segment(3 * a, 3) +=
                    w * model.template_vertices.segment(3 * v, 3);
            }
        }
    }

    for (const auto& name : spec_.output_names) {
        const Eigen::Index d = def_index.at(name);
        OutputEval out{d, -1};
        if (spec_.defs[d].pair_with) out.def_b = def_index.at(*spec_.defs[d].pair_with);
        outputs_.push_back(out);
    }
}

Eigen::VectorXd MeasurementEvaluator::raw_values(const Eigen::VectorXd& positions) const {
    Eigen::VectorXd raw(static_cast<Eigen::Index>(defs_.size()));
    for (std::size_t d = 0; d < defs_.size(); ++d) {
        const DefEval& def = defs_[d];
        const auto point = [&](std::size_t k) {
            return positions.segment<3>(3 * def.anchor_rows[k]);
        };
        switch (def.kind) {
            case MeasurementKind::Distance:
                raw[d] = (point(0) - point(1)).norm();
                break;
            case MeasurementKind::Circumference: {
                double total = 0.0;
                const std::size_t n = def.anchor_rows.size();
                for (std::size_t i = 0; i < n; ++i) {
                    total += (point(i) - point((i + 1) % n)).norm();
                }
                raw[d] = total;
                break;
            }
            case MeasurementKind::AxisDifference:
                raw[d] = positions[3 * def.anchor_rows[1] + def.axis] -
                         positions[3 * def.anchor_rows[0] + def.axis];
                break;
        }
    }
    return raw;
}

Eigen::VectorXd MeasurementEvaluator::measure(const Eigen::VectorXd& beta) const {
    if (beta.size() != num_coeffs()) {
        throw std::invalid_argument("beta has length " + std::to_string(beta.size()) +
                                    ", expected " + std::to_string(num_coeffs()));
    }
    if (!beta.allFinite()) throw std::invalid_argument("beta contains non-finite values");

    const Eigen::VectorXd positions = anchor_basis_ * beta + anchor_offset_;
    const Eigen::VectorXd raw = raw_values(positions);

    Eigen::VectorXd out(num_outputs());
    for (Eigen::Index k = 0; k < num_outputs(); ++k) {
        const OutputEval& o = outputs_[k];
        out[k] = o.def_b < 0 ? raw[o.def_a] : 0.5 * (raw[o.def_a] + raw[o.def_b]);
    }
    return out;
}

Eigen::MatrixXd MeasurementEvaluator::jacobian(const Eigen::VectorXd& beta) const {
    if (beta.size() != num_coeffs()) {
        throw std::invalid_argument("beta has length " + std::to_string(beta.size()) +
                                    ", expected " + std::to_string(num_coeffs()));
    }
    if (!beta.allFinite()) throw std::invalid_argument("beta contains non-finite values");

    const Eigen::VectorXd positions = anchor_basis_ * beta + anchor_offset_;
    Eigen::MatrixXd raw_jac(static_cast<Eigen::Index>(defs_.size()), num_coeffs());
    raw_jac.setZero();

    for (std::size_t d = 0; d < defs_.size(); ++d) {
        const DefEval& def = defs_[d];
        const auto point = [&](std::size_t k) {
            return positions.segment<3>(3 * def.anchor_rows[k]);
        };
        const auto rows = [&](std::size_t k) {
            return anchor_basis_.middleRows(3 * def.anchor_rows[k], 3);
        };
        auto row = raw_jac.row(static_cast<Eigen::Index>(d));
        switch (def.kind) {
            case MeasurementKind::Distance: {
                const Eigen::Vector3d diff = point(0) - point(1);
                const double len = diff.norm();
                if (len <= kSegmentFloor) {
                    throw SingularityError("definition '" + spec_.defs[d].name +
                                           "' has a zero-length segment at this beta");
                }
                const Eigen::Vector3d u = diff / len;
                row = u.transpose() * (rows(0) - rows(1));
                break;
            }
            case MeasurementKind::Circumference: {
                const std::size_t n = def.anchor_rows.size();
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t j = (i + 1) % n;
                    const Eigen::Vector3d diff = point(i) - point(j);
                    const double len = diff.norm();
                    if (len <= kSegmentFloor) {
                        throw SingularityError("definition '" + spec_.defs[d].name +
                                               "' has a zero-length segment at this beta");
                    }
                    const Eigen::Vector3d u = diff / len;
                    row += u.transpose() * (rows(i) - rows(j));
                }
                break;
            }
            case MeasurementKind::AxisDifference:
                row = anchor_basis_.row(3 * def.anchor_rows[1] + def.axis) -
                      anchor_basis_.row(3 * def.anchor_rows[0] + def.axis);
                break;
        }
    }

    Eigen::MatrixXd jac(num_outputs(), num_coeffs());
    for (Eigen::Index k = 0; k < num_outputs(); ++k) {
        const OutputEval& o = outputs_[k];
        if (o.def_b < 0) {
            jac.row(k) = raw_jac.row(o.def_a);
        } else {
            jac.row(k) = 0.5 * (raw_jac.row(o.def_a) + raw_jac.row(o.def_b));
        }
    }
    return jac;
}

Eigen::VectorXd measure(const LinearShapeModel& model, const MeasurementSpec& spec,
                        const Eigen::VectorXd& beta) {
    return MeasurementEvaluator(model, spec).measure(beta);
}

Eigen::MatrixXd measurement_jacobian(const LinearShapeModel& model, const MeasurementSpec& spec,
                                     const Eigen::VectorXd& beta) {
    return MeasurementEvaluator(model, spec).jacobian(beta);
}

MeasurementSpec load_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open spec file: " + path.string());
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("malformed spec file " + path.string() + ": " + e.what());
    }

    MeasurementSpec spec;
    try {
        if (!j.contains("defs") || !j.contains("output_names")) {
            throw FormatError("spec file " + path.string() +
                              " must contain 'defs' and 'output_names'");
        }
        for (const auto& jd : j.at("defs")) {
            MeasurementDef def;
            def.name = jd.at("name").get<std::string>();
            def.kind = kind_from_name(jd.at("kind").get<std::string>(), def.name);
            for (const auto& ja : jd.at("anchors")) {
                if (ja.contains("vertex") == ja.contains("joint")) {
                    throw FormatError("definition '" + def.name +
                                      "' has an anchor that is not exactly one of "
                                      "{\"vertex\": i} or {\"joint\": j}");
                }
                if (ja.contains("vertex")) {
                    def.anchors.push_back(Anchor::vertex(ja.at("vertex").get<std::int64_t>()));
                } else {
                    def.anchors.push_back(Anchor::joint(ja.at("joint").get<std::int64_t>()));
                }
            }
            if (jd.contains("axis")) {
                def.axis = axis_from_name(jd.at("axis").get<std::string>(), def.name);
            }
            if (jd.contains("pair_with")) {
                def.pair_with = jd.at("pair_with").get<std::string>();
            }
            spec.defs.push_back(std::move(def));
        }
        spec.output_names = j.at("output_names").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad spec file " + path.string() + ": " + e.what());
    }

    spec.validate();
    return spec;
}

void save_spec(const MeasurementSpec& spec, const std::filesystem::path& path) {
    spec.validate();
    ordered_json j;
    j["defs"] = ordered_json::array();
    for (const auto& def : spec.defs) {
        ordered_json jd;
        jd["name"] = def.name;
        jd["kind"] = kind_name(def.kind);
        jd["anchors"] = ordered_json::array();
        for (const auto& anchor : def.anchors) {
            if (anchor.kind == Anchor::Kind::Vertex) {
                jd["anchors"].push_back({{"vertex", anchor.index}});
            } else {
                jd["anchors"].push_back({{"joint", anchor.index}});
            }
        }
        if (def.axis) jd["axis"] = axis_name(*def.axis);
        if (def.pair_with) jd["pair_with"] = *def.pair_with;
        j["defs"].push_back(std::move(jd));
    }
    j["output_names"] = spec.output_names;

    std::ofstream out(path);
    if (!out) throw FormatError("cannot open spec file for writing: " + path.string());
    out << j.dump(2) << "\n";
    out.flush();
    if (!out) throw FormatError("write failed for spec file: " + path.string());
}

}  // namespace semshape
