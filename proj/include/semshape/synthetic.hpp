#pragma once

#include <cstdint>

#include "semshape/measurements.hpp"
#include "semshape/shape_model.hpp"

namespace semshape {

enum class SyntheticProfile {
    // Stacked elliptical cross-sections forming a torso and four limb tubes;
    // basis columns are smooth localized bumps. Taller than wide.
    BodyLike,
    // Fibonacci-sphere template with smooth random basis columns.
    RandomSmooth,
};

// Deterministic procedural test model: same seed, same bits, on any thread
// count. Basis columns are normalized to Frobenius norm 0.05 m so unit
// coefficients produce centimetre-scale deformations.
LinearShapeModel generate_synthetic_model(std::uint64_t seed, Eigen::Index num_vertices,
                                          Eigen::Index num_coeffs, SyntheticProfile profile);

// A mixed measurement spec (distances, circumferences, axis differences,
// left/right pairs where the profile has limbs) anchored on the deterministic
// layout of a generated model. Depends only on the model's size and profile.
MeasurementSpec generate_synthetic_spec(const LinearShapeModel& model, SyntheticProfile profile);

// An AxisDifference-only spec over random anchor pairs, retried until the
// (constant) measurement Jacobian is well-conditioned with full row rank.
// Because every output is exactly affine in beta, these specs serve as
// machine-precision oracles. Requires num_outputs <= model.num_coeffs.
MeasurementSpec generate_linear_spec(const LinearShapeModel& model, Eigen::Index num_outputs,
                                     std::uint64_t seed);

}  // namespace semshape
