#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "semshape/measurements.hpp"
#include "semshape/regressor.hpp"
#include "semshape/shape_model.hpp"

namespace semshape {

// Fusion rejects variances below this floor instead of forming near-infinite
// precisions; callers clamp their inputs to at least this value. (m^2)
inline constexpr double kFusionVarianceFloor = 1e-12;

// Independent Gaussian: mean plus per-slot variances.
struct DiagGaussian {
    Eigen::VectorXd mean;
    Eigen::VectorXd variances;

    DiagGaussian() = default;
    DiagGaussian(Eigen::VectorXd mean, Eigen::VectorXd variances);

    Eigen::Index size() const { return mean.size(); }
    void validate() const;  // finite mean, finite non-negative variances
};

// Full-covariance Gaussian. Construction symmetrizes the covariance (rejecting
// asymmetry above 1e-9 relative) and clamps slightly negative eigenvalues
// (>= -1e-9 * max eigenvalue) to zero; anything worse is rejected.
class FullGaussian {
public:
    FullGaussian() = default;
    FullGaussian(Eigen::VectorXd mean, const Eigen::MatrixXd& covariance);

    // For covariances that are PSD by construction (e.g. A * PSD * A^T):
    // symmetrizes only, skipping the eigendecomposition. Needed for vertex
    // covariances whose size makes the spectral check impractical.
    static FullGaussian from_psd_parts(Eigen::VectorXd mean, Eigen::MatrixXd covariance);

    const Eigen::VectorXd& mean() const { return mean_; }
    const Eigen::MatrixXd& covariance() const { return covariance_; }
    Eigen::Index size() const { return mean_.size(); }

private:
    Eigen::VectorXd mean_;
    Eigen::MatrixXd covariance_;
};

// One observation of a body's measurement offsets (e.g. from one image).
struct MeasurementObservation {
    std::string id;
    DiagGaussian distribution;  // over measurement offsets, metres / m^2
};

// Pushes a diagonal measurement-offset Gaussian through the regressor:
// mean W^T mu, covariance W^T diag(sigma^2) W.
FullGaussian propagate_to_coeffs(const MeasurementRegressor& reg, const DiagGaussian& d);

struct VertexPropagationOptions {
    // Full (3V)^2 covariances are refused above this vertex count.
    Eigen::Index max_full_vertices = 2000;
};

// Pushes a coefficient Gaussian through the blend-shape map: mean S mu + t,
// covariance S Sigma S^T. Throws CapacityError when the model exceeds the
// cap; use propagate_vertex_variances / vertex_covariance_block instead.
FullGaussian propagate_to_vertices(const LinearShapeModel& model, const FullGaussian& coeff_dist,
                                   const VertexPropagationOptions& options = {});

// Lazy pieces of the vertex covariance for large models: just the 3V diagonal,
// or one 3x3 cross-covariance block between two vertices.
Eigen::VectorXd propagate_vertex_variances(const LinearShapeModel& model,
                                           const FullGaussian& coeff_dist);
Eigen::Matrix3d vertex_covariance_block(const LinearShapeModel& model,
                                        const FullGaussian& coeff_dist, Eigen::Index vertex_i,
                                        Eigen::Index vertex_j);

// Reshapes the covariance diagonal into per-vertex (var_x, var_y, var_z)
// triples following the interleaved flattening.
Points3 directional_vertex_variance(const FullGaussian& vertex_dist);
Points3 directional_vertex_variance(const Eigen::VectorXd& vertex_variances);

// Product-of-Gaussians fusion: per-slot precisions add, means are
// precision-weighted. Throws NumericalError if any variance sits below
// kFusionVarianceFloor, std::invalid_argument on empty input or mismatched
// lengths (naming the offending observation).
DiagGaussian fuse(const std::vector<MeasurementObservation>& observations);

// Unweighted baseline: per-slot mean of means; the reported variance is the
// mean of variances divided by N (informational).
DiagGaussian naive_average(const std::vector<MeasurementObservation>& observations);

struct FusedShapeEstimate {
    DiagGaussian fused;              // fused measurement-offset distribution
    Eigen::VectorXd beta;            // W^T * fused mean
    Mesh mesh;                       // shape at beta
    Eigen::VectorXd measurements;    // measure(beta), metres
};

// Full fusion pipeline: fuse the observations, map the fused mean through the
// regressor, and evaluate the resulting body.
FusedShapeEstimate fused_shape_estimate(const LinearShapeModel& model, const MeasurementSpec& spec,
                                        const MeasurementRegressor& reg,
                                        const std::vector<MeasurementObservation>& observations);

// Observation file I/O. The JSON carries mm / mm^2 for readability; loading
// converts to metres and saving converts back.
std::vector<MeasurementObservation> load_observations(const std::filesystem::path& path);
void save_observations(const std::vector<MeasurementObservation>& observations,
                       const std::filesystem::path& path);

}  // namespace semshape
