#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "semshape/measurements.hpp"
#include "semshape/shape_model.hpp"

namespace semshape {

// Fit record kept with the regressor. rank/residual/rank_deficient describe
// the least-squares solve that produced the weights.
struct FitMeta {
    Eigen::Index num_samples = 0;
    double coeff_stddev = 0.0;
    double rank_tolerance = 0.0;
    std::uint64_t seed = 0;
    Eigen::Index rank = 0;
    bool rank_deficient = false;
    // ||G W - C||_inf / (||dM||_F ||dB||_F), the scaled normal-equation
    // residual at the solution.
    double normal_residual = 0.0;
};

// Linear map from measurement offsets to coefficient offsets:
// delta_beta = weights^T * delta_m, with base_measurements = measure(0).
struct MeasurementRegressor {
    Eigen::MatrixXd weights;            // K x |beta|
    Eigen::VectorXd base_measurements;  // K, metres
    FitMeta meta;

    Eigen::Index num_measurements() const { return weights.rows(); }
    Eigen::Index num_coeffs() const { return weights.cols(); }
    void validate() const;
};

struct FitConfig {
    Eigen::Index num_samples = 100000;         // the CLI default is 1e6
    double coeff_stddev = 1.25;
    double measurement_offset_stddev = 0.02;   // metres; sample_shapes stage (ii) only
    double rank_tolerance = 1e-10;             // relative cutoff on the normal-matrix spectrum
    std::uint64_t seed = 0;

    void validate(Eigen::Index num_outputs = 0) const;
};

// Fits weights by sampling num_samples coefficient vectors ~ N(0, stddev^2 I),
// measuring them, and solving min ||dM W - dB||_F with a rank-tolerant
// eigendecomposition of the accumulated normal matrix. Deterministic for a
// fixed seed regardless of `threads` (samples are drawn in fixed chunks and
// reduced in chunk order).
MeasurementRegressor fit_regressor(const LinearShapeModel& model, const MeasurementSpec& spec,
                                   const FitConfig& config, int threads = 0);

// weights^T * delta_m.
Eigen::VectorXd measurements_to_coeff_offset(const MeasurementRegressor& reg,
                                             const Eigen::VectorXd& delta_m);

struct OffsetResult {
    Eigen::VectorXd new_beta;
    Eigen::VectorXd achieved_delta_m;  // measure(new) - measure(base), metres
};

// Applies a measurement offset to a base body and reports what actually
// changed, so callers can compare achieved vs requested.
OffsetResult apply_measurement_offset(const LinearShapeModel& model, const MeasurementSpec& spec,
                                      const MeasurementRegressor& reg,
                                      const Eigen::VectorXd& base_beta,
                                      const Eigen::VectorXd& delta_m);

struct OffsetProbe {
    Eigen::Index slot = 0;
    double delta_m = 0.0;  // metres
};

struct OffsetReportRow {
    Eigen::Index slot = 0;
    double requested_m = 0.0;
    Eigen::VectorXd achieved_m;  // all K slots
};

// Local-controllability protocol: each probe offsets one slot from the mean
// body (beta = 0) and records the achieved offsets on every slot.
std::vector<OffsetReportRow> eval_local_offsets(const LinearShapeModel& model,
                                                const MeasurementSpec& spec,
                                                const MeasurementRegressor& reg,
                                                const std::vector<OffsetProbe>& probes);

struct ReconstructionReport {
    double meas_mae_mm = 0.0;  // mean |measure(b_hat) - measure(b)| over slots & bodies
    double pve_t_mm = 0.0;     // mean per-vertex Euclidean error over bodies
    Eigen::Index num_bodies = 0;
};

// Reconstruction protocol: sample random bodies, reconstruct each from its
// measurements alone, report measurement MAE and per-vertex error (mm).
ReconstructionReport eval_reconstruction(const LinearShapeModel& model, const MeasurementSpec& spec,
                                         const MeasurementRegressor& reg, Eigen::Index num_bodies,
                                         double coeff_stddev, std::uint64_t seed, int threads = 0);

// Two-stage shape sampling: base ~ N(0, coeff_stddev^2 I), then a measurement
// offset ~ N(0, measurement_offset_stddev^2 I) mapped through the regressor
// and added on. Deterministic for a fixed seed regardless of threads.
std::vector<Eigen::VectorXd> sample_shapes(const LinearShapeModel& model,
                                           const MeasurementSpec& spec,
                                           const MeasurementRegressor& reg, Eigen::Index count,
                                           const FitConfig& config, std::uint64_t seed,
                                           int threads = 0);

// Regressor file I/O: JSON header + f64 payload (weights row-major, then base
// measurements), same envelope convention as the model format.
MeasurementRegressor load_regressor(const std::filesystem::path& header_path);
void save_regressor(const MeasurementRegressor& reg, const std::filesystem::path& header_path);

}  // namespace semshape
