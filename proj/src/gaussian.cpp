#include "semshape/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "semshape/errors.hpp"

namespace semshape {

namespace {

using nlohmann::ordered_json;

}  // namespace

DiagGaussian::DiagGaussian(Eigen::VectorXd mean_in, Eigen::VectorXd variances_in)
    : mean(std::move(mean_in)), variances(std::move(variances_in)) {
    validate();
}

void DiagGaussian::validate() const {
    if (mean.size() != variances.size()) {
        throw std::invalid_argument("mean has length " + std::to_string(mean.size()) +
                                    " but variances have length " +
                                    std::to_string(variances.size()));
    }
    if (!mean.allFinite() || !variances.allFinite()) {
        throw std::invalid_argument("Gaussian contains non-finite values");
    }
    if ((variances.array() < 0.0).any()) {
        throw std::invalid_argument("variances must be non-negative");
    }
}

FullGaussian::FullGaussian(Eigen::VectorXd mean, const Eigen::MatrixXd& covariance)
    : mean_(std::move(mean)) {
    if (covariance.rows() != covariance.cols() || covariance.rows() != mean_.size()) {
        throw std::invalid_argument("covariance is " + std::to_string(covariance.rows()) + "x" +
                                    std::to_string(covariance.cols()) + " for mean of length " +
                                    std::to_string(mean_.size()));
    }
    if (!mean_.allFinite() || !covariance.allFinite()) {
        throw std::invalid_argument("Gaussian contains non-finite values");
    }

    const double scale = covariance.cwiseAbs().maxCoeff();
    const double asymmetry = (covariance - covariance.transpose()).cwiseAbs().maxCoeff();
    if (asymmetry > 1e-9 * std::max(scale, 1e-300)) {
        throw std::invalid_argument("covariance is asymmetric beyond 1e-9 relative");
    }
    covariance_ = 0.5 * (covariance + covariance.transpose());

    if (mean_.size() > 0 && scale > 0.0) {
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covariance_);
        const Eigen::VectorXd& lambda = es.eigenvalues();
        const double lambda_max = std::max(lambda[lambda.size() - 1], 0.0);
        if (lambda[0] < -1e-9 * std::max(lambda_max, 1e-300)) {
            throw std::invalid_argument("covariance is not positive semi-definite (min eigenvalue " +
                                        std::to_string(lambda[0]) + ")");
        }
        if (lambda[0] < 0.0) {
            // Clamp roundoff-negative eigenvalues to zero.
            covariance_ = es.eigenvectors() * lambda.cwiseMax(0.0).asDiagonal() *
                          es.eigenvectors().transpose();
            covariance_ = 0.5 * (covariance_ + covariance_.transpose()).eval();
        }
    }
}

FullGaussian FullGaussian::from_psd_parts(Eigen::VectorXd mean, Eigen::MatrixXd covariance) {
    if (covariance.rows() != covariance.cols() || covariance.rows() != mean.size()) {
        throw std::invalid_argument("covariance is " + std::to_string(covariance.rows()) + "x" +
                                    std::to_string(covariance.cols()) + " for mean of length " +
                                    std::to_string(mean.size()));
    }
    FullGaussian g;
    g.mean_ = std::move(mean);
    g.covariance_ = 0.5 * (covariance + covariance.transpose()).eval();
    return g;
}

FullGaussian propagate_to_coeffs(const MeasurementRegressor& reg, const DiagGaussian& d) {
    d.validate();
    if (d.size() != reg.num_measurements()) {
        throw std::invalid_argument("distribution has length " + std::to_string(d.size()) +
                                    " but the regressor has " +
                                    std::to_string(reg.num_measurements()) + " measurements");
    }
    Eigen::VectorXd mean = reg.weights.transpose() * d.mean;
    Eigen::MatrixXd cov =
        reg.weights.transpose() * d.variances.asDiagonal() * reg.weights;
    return FullGaussian(std::move(mean), cov);
}

FullGaussian propagate_to_vertices(const LinearShapeModel& model, const FullGaussian& coeff_dist,
                                   const VertexPropagationOptions& options) {
    if (coeff_dist.size() != model.num_coeffs) {
        throw std::invalid_argument("coefficient distribution has length " +
                                    std::to_string(coeff_dist.size()) + ", expected " +
                                    std::to_string(model.num_coeffs));
    }
    if (model.num_vertices > options.max_full_vertices) {
        throw CapacityError("full vertex covariance for " + std::to_string(model.num_vertices) +
                            " vertices exceeds the cap of " +
                            std::to_string(options.max_full_vertices) +
                            "; use propagate_vertex_variances / vertex_covariance_block instead");
    }
    Eigen::VectorXd mean = model.basis * coeff_dist.mean() + model.template_vertices;
    Eigen::MatrixXd cov = model.basis * coeff_dist.covariance() * model.basis.transpose();
    return FullGaussian::from_psd_parts(std::move(mean), std::move(cov));
}

Eigen::VectorXd propagate_vertex_variances(const LinearShapeModel& model,
                                           const FullGaussian& coeff_dist) {
    if (coeff_dist.size() != model.num_coeffs) {
        throw std::invalid_argument("coefficient distribution has length " +
                                    std::to_string(coeff_dist.size()) + ", expected " +
                                    std::to_string(model.num_coeffs));
    }
    // diag(S Sigma S^T) without materializing the full product.
    const Eigen::MatrixXd scratch = model.basis * coeff_dist.covariance();
    return scratch.cwiseProduct(model.basis).rowwise().sum().cwiseMax(0.0);
}

Eigen::Matrix3d vertex_covariance_block(const LinearShapeModel& model,
                                        const FullGaussian& coeff_dist, Eigen::Index vertex_i,
                                        Eigen::Index vertex_j) {
    if (coeff_dist.size() != model.num_coeffs) {
        throw std::invalid_argument("coefficient distribution has length " +
                                    std::to_string(coeff_dist.size()) + ", expected " +
                                    std::to_string(model.num_coeffs));
    }
    if (vertex_i < 0 || vertex_i >= model.num_vertices || vertex_j < 0 ||
        vertex_j >= model.num_vertices) {
        throw std::invalid_argument("vertex index out of range");
    }
    return model.basis.middleRows(3 * vertex_i, 3) * coeff_dist.covariance() *
           model.basis.middleRows(3 * vertex_j, 3).transpose();
}

Points3 directional_vertex_variance(const Eigen::VectorXd& vertex_variances) {
    if (vertex_variances.size() % 3 != 0) {
        throw std::invalid_argument("vertex variance vector has length " +
                                    std::to_string(vertex_variances.size()) +
                                    ", which is not divisible by 3");
    }
    return Eigen::Map<const Points3>(vertex_variances.data(), vertex_variances.size() / 3, 3);
}

Points3 directional_vertex_variance(const FullGaussian& vertex_dist) {
    const Eigen::VectorXd diag = vertex_dist.covariance().diagonal();
    return directional_vertex_variance(diag);
}

DiagGaussian fuse(const std::vector<MeasurementObservation>& observations) {
    if (observations.empty()) {
        throw std::invalid_argument("fuse() needs at least one observation");
    }
    const Eigen::Index size = observations.front().distribution.size();
    for (const auto& obs : observations) {
        obs.distribution.validate();
        if (obs.distribution.size() != size) {
            throw std::invalid_argument("observation '" + obs.id + "' has length " +
                                        std::to_string(obs.distribution.size()) +
                                        " but others have length " + std::to_string(size));
        }
        for (Eigen::Index j = 0; j < size; ++j) {
            if (obs.distribution.variances[j] < kFusionVarianceFloor) {
                throw NumericalError(
                    "observation '" + obs.id + "' slot " + std::to_string(j) + " has variance " +
                    std::to_string(obs.distribution.variances[j]) +
                    " below the fusion floor of 1e-12 m^2; clamp input variances to the floor "
                    "before fusing");
            }
        }
    }
    if (observations.size() == 1) return observations.front().distribution;

    const auto n_obs = static_cast<Eigen::Index>(observations.size());
    DiagGaussian fused;
    fused.mean.resize(size);
    fused.variances.resize(size);

    // Contributions are canonicalized before accumulation: precisions are
    // normalized by their maximum, the mean is accumulated as offsets from the
    // most certain observation (ties broken by value), and the weighted terms
    // are summed in sorted order. Fusion is therefore bit-identical under any
    // permutation of the observations, and with equal variances the weights
    // are exactly 1, making the result bit-equal to the unweighted average.
    std::vector<std::pair<double, double>> terms(static_cast<std::size_t>(n_obs));
    for (Eigen::Index j = 0; j < size; ++j) {
        double p_max = 0.0;
        double anchor_mean = -std::numeric_limits<double>::infinity();
        double min_var = observations[0].distribution.variances[j];
        for (Eigen::Index n = 0; n < n_obs; ++n) {
            const double p = 1.0 / observations[n].distribution.variances[j];
            const double mean_n = observations[n].distribution.mean[j];
            if (p > p_max) {
                p_max = p;
                anchor_mean = mean_n;
            } else if (p == p_max && mean_n > anchor_mean) {
                anchor_mean = mean_n;
            }
            min_var = std::min(min_var, observations[n].distribution.variances[j]);
        }
        for (Eigen::Index n = 0; n < n_obs; ++n) {
            const double w = (1.0 / observations[n].distribution.variances[j]) / p_max;
            terms[static_cast<std::size_t>(n)] = {w, observations[n].distribution.mean[j] -
                                                         anchor_mean};
        }
        std::sort(terms.begin(), terms.end());
        double weight_sum = 0.0;
        double delta_sum = 0.0;
        for (const auto& [w, delta] : terms) {
            weight_sum += w;
            delta_sum += w * delta;
        }
        fused.mean[j] = anchor_mean + delta_sum / weight_sum;
        // Combined precision can only grow, so the exact result never exceeds
        // the smallest input variance; the min guards against rounding.
        fused.variances[j] = std::min((1.0 / p_max) / weight_sum, min_var);
    }
    return fused;
}

DiagGaussian naive_average(const std::vector<MeasurementObservation>& observations) {
    if (observations.empty()) {
        throw std::invalid_argument("naive_average() needs at least one observation");
    }
    const Eigen::Index size = observations.front().distribution.size();
    for (const auto& obs : observations) {
        obs.distribution.validate();
        if (obs.distribution.size() != size) {
            throw std::invalid_argument("observation '" + obs.id + "' has length " +
                                        std::to_string(obs.distribution.size()) +
                                        " but others have length " + std::to_string(size));
        }
    }
    const auto n_obs = static_cast<Eigen::Index>(observations.size());
    DiagGaussian out;
    out.mean.resize(size);
    out.variances.resize(size);
    // Same canonical accumulation as fuse() with all weights equal to one:
    // offsets from the largest mean, summed in sorted order. This keeps the
    // equal-variance degeneracy (fused mean == naive mean) exact.
    std::vector<double> deltas(static_cast<std::size_t>(n_obs));
    for (Eigen::Index j = 0; j < size; ++j) {
        double anchor_mean = observations[0].distribution.mean[j];
        double var_sum = 0.0;
        for (Eigen::Index n = 0; n < n_obs; ++n) {
            anchor_mean = std::max(anchor_mean, observations[n].distribution.mean[j]);
            var_sum += observations[n].distribution.variances[j];
        }
        for (Eigen::Index n = 0; n < n_obs; ++n) {
            deltas[static_cast<std::size_t>(n)] =
                observations[n].distribution.mean[j] - anchor_mean;
        }
        std::sort(deltas.begin(), deltas.end());
        double delta_sum = 0.0;
        for (const double delta : deltas) delta_sum += delta;
        out.mean[j] = anchor_mean + delta_sum / double(n_obs);
        out.variances[j] = (var_sum / double(n_obs)) / double(n_obs);
    }
    return out;
}

FusedShapeEstimate fused_shape_estimate(const LinearShapeModel& model,
                                        const MeasurementSpec& spec,
                                        const MeasurementRegressor& reg,
                                        const std::vector<MeasurementObservation>& observations) {
    const MeasurementEvaluator eval(model, spec);
    if (reg.num_measurements() != eval.num_outputs() || reg.num_coeffs() != eval.num_coeffs()) {
        throw std::invalid_argument("regressor does not match the model/spec pair");
    }

    FusedShapeEstimate estimate;
    estimate.fused = fuse(observations);
    if (estimate.fused.size() != reg.num_measurements()) {
        throw std::invalid_argument("observations have length " +
                                    std::to_string(estimate.fused.size()) +
                                    " but the regressor has " +
                                    std::to_string(reg.num_measurements()) + " measurements");
    }
    estimate.beta = reg.weights.transpose() * estimate.fused.mean;
    estimate.mesh = shape_to_vertices(model, estimate.beta);
    estimate.measurements = eval.measure(estimate.beta);
    return estimate;
}

std::vector<MeasurementObservation> load_observations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open observations file: " + path.string());
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("malformed observations file " + path.string() + ": " + e.what());
    }

    std::vector<MeasurementObservation> observations;
    try {
        for (const auto& jo : j.at("observations")) {
            MeasurementObservation obs;
            obs.id = jo.at("id").get<std::string>();
            const auto mean_mm = jo.at("mean_mm").get<std::vector<double>>();
            const auto var_mm2 = jo.at("variance_mm2").get<std::vector<double>>();
            if (mean_mm.size() != var_mm2.size()) {
                throw FormatError("observation '" + obs.id + "' has " +
                                  std::to_string(mean_mm.size()) + " means but " +
                                  std::to_string(var_mm2.size()) + " variances");
            }
            obs.distribution.mean.resize(static_cast<Eigen::Index>(mean_mm.size()));
            obs.distribution.variances.resize(static_cast<Eigen::Index>(var_mm2.size()));
            for (std::size_t k = 0; k < mean_mm.size(); ++k) {
                obs.distribution.mean[static_cast<Eigen::Index>(k)] = mean_mm[k] / 1000.0;
                obs.distribution.variances[static_cast<Eigen::Index>(k)] = var_mm2[k] / 1e6;
            }
            try {
                obs.distribution.validate();
            } catch (const std::invalid_argument& e) {
                throw FormatError("observation '" + obs.id + "' is invalid: " + e.what());
            }
            observations.push_back(std::move(obs));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad observations file " + path.string() + ": " + e.what());
    }
    if (observations.empty()) {
        throw FormatError("observations file " + path.string() + " contains no observations");
    }
    for (const auto& obs : observations) {
        if (obs.distribution.size() != observations.front().distribution.size()) {
            throw FormatError("observation '" + obs.id + "' has length " +
                              std::to_string(obs.distribution.size()) +
                              " but others have length " +
                              std::to_string(observations.front().distribution.size()));
        }
    }
    return observations;
}

void save_observations(const std::vector<MeasurementObservation>& observations,
                       const std::filesystem::path& path) {
    ordered_json j;
    j["observations"] = ordered_json::array();
    for (const auto& obs : observations) {
        obs.distribution.validate();
        ordered_json jo;
        jo["id"] = obs.id;
        std::vector<double> mean_mm(obs.distribution.size());
        std::vector<double> var_mm2(obs.distribution.size());
        for (Eigen::Index k = 0; k < obs.distribution.size(); ++k) {
            mean_mm[static_cast<std::size_t>(k)] = obs.distribution.mean[k] * 1000.0;
            var_mm2[static_cast<std::size_t>(k)] = obs.distribution.variances[k] * 1e6;
        }
        jo["mean_mm"] = mean_mm;
        jo["variance_mm2"] = var_mm2;
        j["observations"].push_back(std::move(jo));
    }

    std::ofstream out(path);
    if (!out) throw FormatError("cannot open observations file for writing: " + path.string());
    out << j.dump(2) << "\n";
    out.flush();
    if (!out) throw FormatError("write failed for observations file: " + path.string());
}

}  // namespace semshape
