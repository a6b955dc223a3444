#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace semshape {

// V x 3 point sets stored row-major, so .data() is the interleaved
// (x,y,z, x,y,z, ...) flat layout used throughout.
using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Face = std::array<std::uint32_t, 3>;

// Linear blend-shape model: vertices(beta) = unflatten(basis * beta + template).
// Flattened vectors interleave per vertex as (x,y,z, x,y,z, ...), so rows
// 3v..3v+2 of `basis` drive vertex v. All geometry is in metres.
struct LinearShapeModel {
    Eigen::Index num_vertices = 0;
    Eigen::Index num_coeffs = 0;
    Eigen::VectorXd template_vertices;                // 3V
    Eigen::MatrixXd basis;                            // 3V x num_coeffs
    std::optional<Eigen::MatrixXd> joint_regressor;   // J x V, rows sum to 1
    std::vector<Face> faces;                          // optional, export only

    Eigen::Index num_joints() const {
        return joint_regressor ? joint_regressor->rows() : 0;
    }

    // Throws std::invalid_argument if any structural invariant is broken.
    void validate() const;
};

struct Mesh {
    Points3 vertices;
    std::optional<Points3> joints;
};

// Evaluates the blend-shape map at beta; joints are regressed when the model
// carries a joint regressor.
Mesh shape_to_vertices(const LinearShapeModel& model, const Eigen::VectorXd& beta);

// Model file I/O: JSON header + little-endian f64 binary payload. The header
// stores the payload path relative to its own directory. Round-trips are
// bit-exact. See README for the exact layout.
LinearShapeModel load_model(const std::filesystem::path& header_path);
void save_model(const LinearShapeModel& model, const std::filesystem::path& header_path);

// Writes an ASCII Wavefront OBJ ("v x y z" then 1-based "f i j k"). When
// vertex_scalars is given (one value per vertex), a sidecar CSV
// "<path>.scalars.csv" with vertex_index,value rows is written alongside.
void export_obj(const Mesh& mesh, const std::filesystem::path& path,
                const std::vector<Face>& faces = {},
                const std::optional<Eigen::VectorXd>& vertex_scalars = std::nullopt);

}  // namespace semshape
