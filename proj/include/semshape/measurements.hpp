#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "semshape/shape_model.hpp"

namespace semshape {

enum class MeasurementKind { Distance, Circumference, AxisDifference };

enum class Axis : int { X = 0, Y = 1, Z = 2 };

// An anchor is a point on the body: either a mesh vertex or a regressed joint.
struct Anchor {
    enum class Kind { Vertex, Joint };
    Kind kind = Kind::Vertex;
    Eigen::Index index = 0;

    static Anchor vertex(Eigen::Index i) { return {Kind::Vertex, i}; }
    static Anchor joint(Eigen::Index j) { return {Kind::Joint, j}; }
    bool operator==(const Anchor&) const = default;
};

// One named scalar measurement over anchor points.
//  Distance        — Euclidean distance between exactly 2 anchors.
//  Circumference   — closed polyline length over >= 3 waypoints (the last
//                    waypoint connects back to the first).
//  AxisDifference  — signed coordinate difference anchors[1] - anchors[0]
//                    along `axis`; exactly linear in the shape coefficients.
struct MeasurementDef {
    std::string name;
    MeasurementKind kind = MeasurementKind::Distance;
    std::vector<Anchor> anchors;
    std::optional<Axis> axis;                 // AxisDifference only
    std::optional<std::string> pair_with;     // left/right sibling to average with
};

// An ordered set of definitions plus the output slot order. Paired
// definitions collapse into a single slot named after whichever member of the
// pair is listed in output_names; its value is the mean of the two sides.
struct MeasurementSpec {
    std::vector<MeasurementDef> defs;
    std::vector<std::string> output_names;

    Eigen::Index num_outputs() const { return static_cast<Eigen::Index>(output_names.size()); }

    // Structural invariants only (anchor ranges are model-dependent and are
    // checked at evaluation time). Throws FormatError naming the definition.
    void validate() const;

    // Index of a named output slot; throws std::invalid_argument with the list
    // of valid names when absent.
    Eigen::Index output_slot(const std::string& name) const;
};

// Precomputed evaluator for repeated measurement of one (model, spec) pair.
// Anchor positions are affine in beta; the evaluator gathers the relevant
// basis rows once so a measurement costs O(anchors x |beta|) instead of a
// full mesh evaluation.
class MeasurementEvaluator {
public:
    MeasurementEvaluator(const LinearShapeModel& model, const MeasurementSpec& spec);

    Eigen::Index num_outputs() const { return static_cast<Eigen::Index>(outputs_.size()); }
    Eigen::Index num_coeffs() const { return anchor_basis_.cols(); }

    Eigen::VectorXd measure(const Eigen::VectorXd& beta) const;

    // Analytic d measure / d beta, K x |beta|. Throws SingularityError when a
    // Distance/Circumference segment is shorter than 1e-12 m at this beta.
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& beta) const;

private:
    struct DefEval {
        MeasurementKind kind;
        std::vector<Eigen::Index> anchor_rows;  // row into the anchor table
        int axis = 0;
    };
    struct OutputEval {
        Eigen::Index def_a;
        Eigen::Index def_b = -1;  // paired sibling, -1 when unpaired
    };

    Eigen::VectorXd raw_values(const Eigen::VectorXd& positions) const;

    const MeasurementSpec spec_;
    Eigen::MatrixXd anchor_basis_;   // 3A x |beta|
    Eigen::VectorXd anchor_offset_;  // 3A
    std::vector<DefEval> defs_;
    std::vector<OutputEval> outputs_;
};

// Measures a body: evaluates the shape at beta and reduces each definition,
// averaging paired sides, ordered by spec.output_names. Metres.
Eigen::VectorXd measure(const LinearShapeModel& model, const MeasurementSpec& spec,
                        const Eigen::VectorXd& beta);

// Analytic Jacobian of measure() at beta (K x |beta|).
Eigen::MatrixXd measurement_jacobian(const LinearShapeModel& model, const MeasurementSpec& spec,
                                     const Eigen::VectorXd& beta);

// JSON spec file I/O; load validates all structural invariants.
MeasurementSpec load_spec(const std::filesystem::path& path);
void save_spec(const MeasurementSpec& spec, const std::filesystem::path& path);

}  // namespace semshape
