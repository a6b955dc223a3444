#include "semshape/regressor.hpp"

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "detail/payload.hpp"
#include "semshape/errors.hpp"
#include "semshape/parallel.hpp"
#include "semshape/rng.hpp"

namespace semshape {

namespace {

using nlohmann::ordered_json;

constexpr Eigen::Index kChunkSize = 4096;

void check_compatible(const MeasurementRegressor& reg, Eigen::Index num_outputs,
                      Eigen::Index num_coeffs) {
    if (reg.num_measurements() != num_outputs || reg.num_coeffs() != num_coeffs) {
        throw std::invalid_argument(
            "regressor is " + std::to_string(reg.num_measurements()) + "x" +
            std::to_string(reg.num_coeffs()) + " but the model/spec pair needs " +
            std::to_string(num_outputs) + "x" + std::to_string(num_coeffs));
    }
}

}  // namespace

void MeasurementRegressor::validate() const {
    if (weights.rows() <= 0 || weights.cols() <= 0) {
        throw std::invalid_argument("regressor weights are empty");
    }
    if (base_measurements.size() != weights.rows()) {
        throw std::invalid_argument("base measurements have length " +
                                    std::to_string(base_measurements.size()) + ", expected " +
                                    std::to_string(weights.rows()));
    }
    if (!weights.allFinite() || !base_measurements.allFinite()) {
        throw std::invalid_argument("regressor contains non-finite values");
    }
}

void FitConfig::validate(Eigen::Index) const {
    // Fits with fewer samples than measurements are allowed; they come out
    // rank-deficient and are flagged in the fit record.
    if (num_samples < 1) {
        throw std::invalid_argument("num_samples must be at least 1, got " +
                                    std::to_string(num_samples));
    }
    if (!(coeff_stddev > 0.0)) throw std::invalid_argument("coeff_stddev must be positive");
    if (!(measurement_offset_stddev >= 0.0)) {
        throw std::invalid_argument("measurement_offset_stddev must be non-negative");
    }
    if (!(rank_tolerance > 0.0) || rank_tolerance >= 1.0) {
        throw std::invalid_argument("rank_tolerance must lie in (0, 1)");
    }
}

MeasurementRegressor fit_regressor(const LinearShapeModel& model, const MeasurementSpec& spec,
                                   const FitConfig& config, int threads) {
    const MeasurementEvaluator eval(model, spec);
    const Eigen::Index num_outputs = eval.num_outputs();
    const Eigen::Index num_coeffs = eval.num_coeffs();
    config.validate(num_outputs);

    const Eigen::VectorXd base = eval.measure(Eigen::VectorXd::Zero(num_coeffs));

    // Gram/cross accumulation: G = dM^T dM (K x K) and C = dM^T dB (K x B)
    // gathered in fixed-size chunks so memory stays small and the reduction
    // order (and therefore the result) never depends on the thread count.
    struct Accum {
        Eigen::MatrixXd gram;
        Eigen::MatrixXd cross;
        double sum_sq_dm = 0.0;
        double sum_sq_db = 0.0;
    };
    const auto num_chunks =
        static_cast<std::size_t>((config.num_samples + kChunkSize - 1) / kChunkSize);
    std::vector<Accum> partials(num_chunks);

    for_each_chunk(num_chunks, threads, [&](std::size_t chunk) {
        Accum& acc = partials[chunk];
        acc.gram.setZero(num_outputs, num_outputs);
        acc.cross.setZero(num_outputs, num_coeffs);

        Rng rng(mix_seed(config.seed, chunk));
        const Eigen::Index begin = static_cast<Eigen::Index>(chunk) * kChunkSize;
        const Eigen::Index end = std::min(config.num_samples, begin + kChunkSize);
        Eigen::VectorXd beta(num_coeffs);
        for (Eigen::Index sample = begin; sample < end; ++sample) {
            for (Eigen::Index b = 0; b < num_coeffs; ++b) {
                beta[b] = config.coeff_stddev * rng.normal();
            }
            const Eigen::VectorXd m = eval.measure(beta);
            if (!m.allFinite()) {
                throw NumericalError("non-finite measurement at fit sample " +
                                     std::to_string(sample));
            }
            const Eigen::VectorXd dm = m - base;
            acc.gram.selfadjointView<Eigen::Lower>().rankUpdate(dm);
            acc.cross.noalias() += dm * beta.transpose();
            acc.sum_sq_dm += dm.squaredNorm();
            acc.sum_sq_db += beta.squaredNorm();
        }
    });

    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(num_outputs, num_outputs);
    Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(num_outputs, num_coeffs);
    double sum_sq_dm = 0.0;
    double sum_sq_db = 0.0;
    for (const Accum& acc : partials) {
        gram += acc.gram;
        cross += acc.cross;
        sum_sq_dm += acc.sum_sq_dm;
        sum_sq_db += acc.sum_sq_db;
    }
    gram = gram.selfadjointView<Eigen::Lower>();

    // Rank-tolerant solve of G W = C through the spectrum of the normal
    // matrix; the tolerance is relative to its largest eigenvalue. Truncation
    // yields the minimum-norm least-squares solution on the kept subspace.
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    const Eigen::VectorXd& lambda = es.eigenvalues();  // ascending
    const double lambda_max = lambda[num_outputs - 1];

    MeasurementRegressor reg;
    reg.base_measurements = base;
    reg.meta.num_samples = config.num_samples;
    reg.meta.coeff_stddev = config.coeff_stddev;
    reg.meta.rank_tolerance = config.rank_tolerance;
    reg.meta.seed = config.seed;

    if (lambda_max <= 0.0) {
        reg.weights = Eigen::MatrixXd::Zero(num_outputs, num_coeffs);
        reg.meta.rank = 0;
    } else {
        Eigen::VectorXd inv_lambda = Eigen::VectorXd::Zero(num_outputs);
        Eigen::Index rank = 0;
        for (Eigen::Index i = 0; i < num_outputs; ++i) {
            if (lambda[i] >= config.rank_tolerance * lambda_max) {
                inv_lambda[i] = 1.0 / lambda[i];
                ++rank;
            }
        }
        reg.weights = es.eigenvectors() * inv_lambda.asDiagonal() *
                      es.eigenvectors().transpose() * cross;
        reg.meta.rank = rank;
    }
    reg.meta.rank_deficient = reg.meta.rank < num_outputs;

    const double scale = std::sqrt(sum_sq_dm) * std::sqrt(sum_sq_db);
    const double residual = (gram * reg.weights - cross).cwiseAbs().maxCoeff();
    reg.meta.normal_residual = scale > 0.0 ? residual / scale : 0.0;

    reg.validate();
    return reg;
}

Eigen::VectorXd measurements_to_coeff_offset(const MeasurementRegressor& reg,
                                             const Eigen::VectorXd& delta_m) {
    if (delta_m.size() != reg.num_measurements()) {
        throw std::invalid_argument("measurement offset has length " +
                                    std::to_string(delta_m.size()) + ", expected " +
                                    std::to_string(reg.num_measurements()));
    }
    return reg.weights.transpose() * delta_m;
}

OffsetResult apply_measurement_offset(const LinearShapeModel& model, const MeasurementSpec& spec,
                                      const MeasurementRegressor& reg,
                                      const Eigen::VectorXd& base_beta,
                                      const Eigen::VectorXd& delta_m) {
    const MeasurementEvaluator eval(model, spec);
    check_compatible(reg, eval.num_outputs(), eval.num_coeffs());

    OffsetResult result;
    result.new_beta = base_beta + measurements_to_coeff_offset(reg, delta_m);
    result.achieved_delta_m = eval.measure(result.new_beta) - eval.measure(base_beta);
    return result;
}

std::vector<OffsetReportRow> eval_local_offsets(const LinearShapeModel& model,
                                                const MeasurementSpec& spec,
                                                const MeasurementRegressor& reg,
                                                const std::vector<OffsetProbe>& probes) {
    const MeasurementEvaluator eval(model, spec);
    check_compatible(reg, eval.num_outputs(), eval.num_coeffs());
    const Eigen::VectorXd base = eval.measure(Eigen::VectorXd::Zero(eval.num_coeffs()));

    std::vector<OffsetReportRow> rows;
    rows.reserve(probes.size());
    for (const OffsetProbe& probe : probes) {
        if (probe.slot < 0 || probe.slot >= eval.num_outputs()) {
            throw std::invalid_argument("offset probe slot " + std::to_string(probe.slot) +
                                        " is out of range [0, " +
                                        std::to_string(eval.num_outputs()) + ")");
        }
        Eigen::VectorXd delta_m = Eigen::VectorXd::Zero(eval.num_outputs());
        delta_m[probe.slot] = probe.delta_m;
        const Eigen::VectorXd beta = reg.weights.transpose() * delta_m;

        OffsetReportRow row;
        row.slot = probe.slot;
        row.requested_m = probe.delta_m;
        row.achieved_m = eval.measure(beta) - base;
        rows.push_back(std::move(row));
    }
    return rows;
}

ReconstructionReport eval_reconstruction(const LinearShapeModel& model, const MeasurementSpec& spec,
                                         const MeasurementRegressor& reg, Eigen::Index num_bodies,
                                         double coeff_stddev, std::uint64_t seed, int threads) {
    if (num_bodies < 1) throw std::invalid_argument("num_bodies must be at least 1");
    if (!(coeff_stddev > 0.0)) throw std::invalid_argument("coeff_stddev must be positive");
    const MeasurementEvaluator eval(model, spec);
    check_compatible(reg, eval.num_outputs(), eval.num_coeffs());

    const Eigen::Index num_coeffs = eval.num_coeffs();
    const Eigen::Index num_vertices = model.num_vertices;

    struct Sums {
        double abs_meas_err = 0.0;
        double vertex_err = 0.0;
    };
    const auto num_chunks = static_cast<std::size_t>((num_bodies + kChunkSize - 1) / kChunkSize);
    std::vector<Sums> partials(num_chunks);

    for_each_chunk(num_chunks, threads, [&](std::size_t chunk) {
        Rng rng(mix_seed(seed, chunk));
        const Eigen::Index begin = static_cast<Eigen::Index>(chunk) * kChunkSize;
        const Eigen::Index end = std::min(num_bodies, begin + kChunkSize);
        const Eigen::Index count = end - begin;

        // The vertex error is evaluated as one GEMM over the whole chunk.
        Eigen::MatrixXd coeff_diff(num_coeffs, count);
        Sums& sums = partials[chunk];
        Eigen::VectorXd beta(num_coeffs);
        for (Eigen::Index i = 0; i < count; ++i) {
            for (Eigen::Index b = 0; b < num_coeffs; ++b) {
                beta[b] = coeff_stddev * rng.normal();
            }
            const Eigen::VectorXd m = eval.measure(beta);
            const Eigen::VectorXd beta_hat =
                reg.weights.transpose() * (m - reg.base_measurements);
            const Eigen::VectorXd m_hat = eval.measure(beta_hat);
            sums.abs_meas_err += (m_hat - m).cwiseAbs().sum();
            coeff_diff.col(i) = beta_hat - beta;
        }
        const Eigen::MatrixXd vertex_diff = model.basis * coeff_diff;  // 3V x count
        for (Eigen::Index i = 0; i < count; ++i) {
            double body_err = 0.0;
            for (Eigen::Index v = 0; v < num_vertices; ++v) {
                body_err += vertex_diff.col(i).segment<3>(3 * v).norm();
            }
            sums.vertex_err += body_err / double(num_vertices);
        }
    });

    double abs_meas_err = 0.0;
    double vertex_err = 0.0;
    for (const Sums& sums : partials) {
        abs_meas_err += sums.abs_meas_err;
        vertex_err += sums.vertex_err;
    }

    ReconstructionReport report;
    report.num_bodies = num_bodies;
    report.meas_mae_mm =
        1000.0 * abs_meas_err / (double(num_bodies) * double(eval.num_outputs()));
    report.pve_t_mm = 1000.0 * vertex_err / double(num_bodies);
    return report;
}

std::vector<Eigen::VectorXd> sample_shapes(const LinearShapeModel& model,
                                           const MeasurementSpec& spec,
                                           const MeasurementRegressor& reg, Eigen::Index count,
                                           const FitConfig& config, std::uint64_t seed,
                                           int threads) {
    if (count < 0) throw std::invalid_argument("sample count must be non-negative");
    if (!(config.coeff_stddev > 0.0)) throw std::invalid_argument("coeff_stddev must be positive");
    if (!(config.measurement_offset_stddev >= 0.0)) {
        throw std::invalid_argument("measurement_offset_stddev must be non-negative");
    }
    const MeasurementEvaluator eval(model, spec);
    check_compatible(reg, eval.num_outputs(), eval.num_coeffs());

    const Eigen::Index num_coeffs = eval.num_coeffs();
    const Eigen::Index num_outputs = eval.num_outputs();
    std::vector<Eigen::VectorXd> samples(static_cast<std::size_t>(count));

    const auto num_chunks = static_cast<std::size_t>((count + kChunkSize - 1) / kChunkSize);
    for_each_chunk(num_chunks, threads, [&](std::size_t chunk) {
        Rng rng(mix_seed(seed, chunk));
        const Eigen::Index begin = static_cast<Eigen::Index>(chunk) * kChunkSize;
        const Eigen::Index end = std::min(count, begin + kChunkSize);
        Eigen::VectorXd base(num_coeffs);
        Eigen::VectorXd delta_m(num_outputs);
        for (Eigen::Index i = begin; i < end; ++i) {
            for (Eigen::Index b = 0; b < num_coeffs; ++b) {
                base[b] = config.coeff_stddev * rng.normal();
            }
            for (Eigen::Index k = 0; k < num_outputs; ++k) {
                delta_m[k] = config.measurement_offset_stddev * rng.normal();
            }
            samples[static_cast<std::size_t>(i)] =
                base + reg.weights.transpose() * delta_m;
        }
    });
    return samples;
}

MeasurementRegressor load_regressor(const std::filesystem::path& header_path) {
    std::ifstream in(header_path);
    if (!in) throw FormatError("cannot open regressor file: " + header_path.string());
    ordered_json header;
    try {
        header = ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("malformed regressor header " + header_path.string() + ": " + e.what());
    }

    MeasurementRegressor reg;
    Eigen::Index num_measurements = 0;
    Eigen::Index num_coeffs = 0;
    std::string payload_rel;
    try {
        num_measurements = header.at("num_measurements").get<std::int64_t>();
        num_coeffs = header.at("num_coeffs").get<std::int64_t>();
        payload_rel = header.at("payload").get<std::string>();
        const auto& meta = header.at("meta");
        reg.meta.num_samples = meta.at("num_samples").get<std::int64_t>();
        reg.meta.coeff_stddev = meta.at("coeff_stddev").get<double>();
        reg.meta.rank_tolerance = meta.at("rank_tolerance").get<double>();
        reg.meta.seed = meta.at("seed").get<std::uint64_t>();
        reg.meta.rank = meta.at("rank").get<std::int64_t>();
        reg.meta.rank_deficient = meta.at("rank_deficient").get<bool>();
        reg.meta.normal_residual = meta.at("normal_residual").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad regressor header " + header_path.string() + ": " + e.what());
    }
    if (num_measurements <= 0 || num_coeffs <= 0) {
        throw FormatError("regressor header " + header_path.string() +
                          " has non-positive dimensions");
    }

    detail::PayloadReader reader(header_path.parent_path() / payload_rel);
    const Eigen::VectorXd weights_flat = reader.read_f64(
        static_cast<std::uint64_t>(num_measurements) * static_cast<std::uint64_t>(num_coeffs),
        "weights");
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    reg.weights = Eigen::Map<const RowMajor>(weights_flat.data(), num_measurements, num_coeffs);
    reg.base_measurements =
        reader.read_f64(static_cast<std::uint64_t>(num_measurements), "base_measurements");
    reader.expect_exhausted();

    try {
        reg.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError("regressor file " + header_path.string() + " is inconsistent: " +
                          e.what());
    }
    return reg;
}

void save_regressor(const MeasurementRegressor& reg, const std::filesystem::path& header_path) {
    reg.validate();

    std::filesystem::path payload_path = header_path;
    payload_path.replace_extension(".bin");

    ordered_json header;
    header["num_measurements"] = reg.num_measurements();
    header["num_coeffs"] = reg.num_coeffs();
    header["payload"] = payload_path.filename().string();
    header["meta"] = {
        {"num_samples", reg.meta.num_samples},
        {"coeff_stddev", reg.meta.coeff_stddev},
        {"rank_tolerance", reg.meta.rank_tolerance},
        {"seed", reg.meta.seed},
        {"rank", reg.meta.rank},
        {"rank_deficient", reg.meta.rank_deficient},
        {"normal_residual", reg.meta.normal_residual},
    };

    std::ofstream out(header_path);
    if (!out) {
        throw FormatError("cannot open regressor header for writing: " + header_path.string());
    }
    out << header.dump(2) << "\n";
    out.flush();
    if (!out) throw FormatError("write failed for regressor header: " + header_path.string());

    detail::PayloadWriter writer(payload_path);
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const RowMajor weights = reg.weights;
    writer.write_f64(weights.data(), static_cast<std::uint64_t>(weights.size()));
    writer.write_f64(reg.base_measurements.data(),
                     static_cast<std::uint64_t>(reg.base_measurements.size()));
    writer.finish();
}

}  // namespace semshape
