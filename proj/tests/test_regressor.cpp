#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "semshape/errors.hpp"
#include "semshape/regressor.hpp"
#include "semshape/rng.hpp"
#include "semshape/synthetic.hpp"

using namespace semshape;
namespace fs = std::filesystem;

namespace {

struct LinearFixture {
    LinearShapeModel model;
    MeasurementSpec spec;
    MeasurementRegressor reg;
};

// Exactly affine measurement operator with a square full-rank Jacobian; the
// fitted regressor must invert it to working precision.
LinearFixture make_linear_fixture(Eigen::Index num_outputs, Eigen::Index num_coeffs,
                                  std::uint64_t seed) {
    LinearFixture fx;
    fx.model = generate_synthetic_model(seed, 90, num_coeffs, SyntheticProfile::RandomSmooth);
    fx.spec = generate_linear_spec(fx.model, num_outputs, seed + 1);
    FitConfig config;
    config.num_samples = 4000;
    config.seed = seed + 2;
    fx.reg = fit_regressor(fx.model, fx.spec, config);
    return fx;
}

}  // namespace

TEST_CASE("fit inverts an exactly linear measurement map") {
    const auto fx = make_linear_fixture(10, 10, 31);
    const Eigen::MatrixXd jac =
        measurement_jacobian(fx.model, fx.spec, Eigen::VectorXd::Zero(10));
    const Eigen::MatrixXd round_trip = jac * fx.reg.weights.transpose();
    CHECK((round_trip - Eigen::MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(fx.reg.meta.rank == 10);
    CHECK_FALSE(fx.reg.meta.rank_deficient);
}

TEST_CASE("requested offsets are reproduced on the linear oracle") {
    const auto fx = make_linear_fixture(8, 12, 33);
    const Eigen::VectorXd base = measure(fx.model, fx.spec, Eigen::VectorXd::Zero(12));

    SUBCASE("single-slot offset") {
        for (Eigen::Index slot = 0; slot < 8; ++slot) {
            Eigen::VectorXd delta = Eigen::VectorXd::Zero(8);
            delta[slot] = 0.05;
            const Eigen::VectorXd beta = measurements_to_coeff_offset(fx.reg, delta);
            const Eigen::VectorXd achieved = measure(fx.model, fx.spec, beta) - base;
            CHECK((achieved - delta).cwiseAbs().maxCoeff() < 1e-8);
        }
    }

    SUBCASE("random offsets") {
        Rng rng(5);
        for (int trial = 0; trial < 20; ++trial) {
            Eigen::VectorXd delta(8);
            for (int k = 0; k < 8; ++k) delta[k] = 0.02 * rng.normal();
            const auto result = apply_measurement_offset(fx.model, fx.spec, fx.reg,
                                                         Eigen::VectorXd::Zero(12), delta);
            CHECK((result.achieved_delta_m - delta).cwiseAbs().maxCoeff() < 1e-8);
        }
    }
}

TEST_CASE("offset map is linear and zero maps to zero") {
    const auto fx = make_linear_fixture(6, 9, 35);
    CHECK(measurements_to_coeff_offset(fx.reg, Eigen::VectorXd::Zero(6)).isZero(0.0));

    Rng rng(6);
    Eigen::VectorXd d1(6), d2(6);
    for (int k = 0; k < 6; ++k) {
        d1[k] = rng.normal();
        d2[k] = rng.normal();
    }
    const Eigen::VectorXd combined = measurements_to_coeff_offset(fx.reg, 2.0 * d1 - 3.0 * d2);
    const Eigen::VectorXd split = 2.0 * measurements_to_coeff_offset(fx.reg, d1) -
                                  3.0 * measurements_to_coeff_offset(fx.reg, d2);
    CHECK((combined - split).cwiseAbs().maxCoeff() < 1e-12 * split.cwiseAbs().maxCoeff());

    CHECK_THROWS_AS(measurements_to_coeff_offset(fx.reg, Eigen::VectorXd::Zero(5)),
                    std::invalid_argument);
}

TEST_CASE("zero-basis model fits a zero regressor") {
    LinearShapeModel model;
    model.num_vertices = 4;
    model.num_coeffs = 3;
    model.template_vertices.resize(12);
    model.template_vertices << 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0;
    model.basis = Eigen::MatrixXd::Zero(12, 3);

    MeasurementSpec spec;
    MeasurementDef def;
    def.name = "edge";
    def.kind = MeasurementKind::Distance;
    def.anchors = {Anchor::vertex(0), Anchor::vertex(1)};
    spec.defs = {def};
    spec.output_names = {"edge"};

    FitConfig config;
    config.num_samples = 256;
    const auto reg = fit_regressor(model, spec, config);
    CHECK(reg.weights.isZero(0.0));
    CHECK(reg.meta.rank == 0);
    CHECK(reg.meta.rank_deficient);
}

TEST_CASE("fits are bit-identical across reruns and thread counts") {
    const auto model = generate_synthetic_model(41, 320, 12, SyntheticProfile::BodyLike);
    const auto spec = generate_synthetic_spec(model, SyntheticProfile::BodyLike);
    FitConfig config;
    config.num_samples = 20000;
    config.seed = 77;

    const auto reg1 = fit_regressor(model, spec, config, 1);
    const auto reg2 = fit_regressor(model, spec, config, 1);
    const auto reg4 = fit_regressor(model, spec, config, 4);
    CHECK(reg1.weights == reg2.weights);
    CHECK(reg1.weights == reg4.weights);
    CHECK(reg1.base_measurements == reg4.base_measurements);
}

TEST_CASE("normal-equation residual is a stationary point certificate") {
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto model = generate_synthetic_model(seed, 300, 20, SyntheticProfile::BodyLike);
        const auto spec = generate_synthetic_spec(model, SyntheticProfile::BodyLike);
        FitConfig config;
        config.num_samples = 10000;
        config.seed = seed;
        const auto reg = fit_regressor(model, spec, config);
        CHECK(reg.meta.normal_residual < 1e-8);
    }
}

TEST_CASE("under-sampled fits carry a rank warning") {
    const auto model = generate_synthetic_model(43, 320, 8, SyntheticProfile::BodyLike);
    const auto spec = generate_synthetic_spec(model, SyntheticProfile::BodyLike);
    REQUIRE(spec.output_names.size() == 15);
    FitConfig config;
    config.num_samples = 10;  // far fewer samples than measurement slots
    const auto reg = fit_regressor(model, spec, config);
    CHECK(reg.meta.rank_deficient);
    CHECK(reg.meta.rank <= 10);
}

TEST_CASE("single-slot offsets stay local with an expressive basis") {
    // 3K coefficients for K slots; frozen regression guard on leakage.
    const auto model = generate_synthetic_model(51, 450, 45, SyntheticProfile::BodyLike);
    const auto spec = generate_synthetic_spec(model, SyntheticProfile::BodyLike);
    const Eigen::Index num_outputs = spec.num_outputs();
    REQUIRE(num_outputs == 15);

    FitConfig config;
    config.num_samples = 30000;
    config.seed = 13;
    const auto reg = fit_regressor(model, spec, config);

    std::vector<OffsetProbe> probes;
    for (Eigen::Index slot = 0; slot < num_outputs; ++slot) probes.push_back({slot, 0.050});
    const auto rows = eval_local_offsets(model, spec, reg, probes);

    for (const auto& row : rows) {
        const double on_target = row.achieved_m[row.slot];
        CHECK(on_target > 0.0);  // sign agreement with the request
        for (Eigen::Index j = 0; j < num_outputs; ++j) {
            if (j == row.slot) continue;
            CHECK(std::abs(row.achieved_m[j]) < 0.20 * std::abs(on_target));
        }
    }
}

TEST_CASE("offset probes validate their slot") {
    const auto fx = make_linear_fixture(6, 9, 61);
    CHECK_THROWS_AS(eval_local_offsets(fx.model, fx.spec, fx.reg, {{99, 0.05}}),
                    std::invalid_argument);
}

TEST_CASE("reconstruction error vanishes on the linear oracle") {
    const auto fx = make_linear_fixture(10, 14, 71);
    const auto report = eval_reconstruction(fx.model, fx.spec, fx.reg, 500, 1.25, 5);
    CHECK(report.meas_mae_mm < 1e-6);
    CHECK(report.num_bodies == 500);
    CHECK(report.pve_t_mm >= 0.0);
}

TEST_CASE("two-stage sampling adds nothing when the offset stddev is zero") {
    const auto fx = make_linear_fixture(6, 9, 81);
    FitConfig config;
    config.measurement_offset_stddev = 0.0;

    MeasurementRegressor zero_reg = fx.reg;
    zero_reg.weights.setZero();

    const auto with_reg = sample_shapes(fx.model, fx.spec, fx.reg, 500, config, 9);
    const auto without = sample_shapes(fx.model, fx.spec, zero_reg, 500, config, 9);
    REQUIRE(with_reg.size() == 500);
    for (std::size_t i = 0; i < with_reg.size(); ++i) {
        CHECK(with_reg[i] == without[i]);
    }

    config.measurement_offset_stddev = 0.02;
    const auto augmented = sample_shapes(fx.model, fx.spec, fx.reg, 500, config, 9);
    CHECK(augmented[0] != with_reg[0]);
}

TEST_CASE("sampled shapes are deterministic and measurement-centred") {
    const auto fx = make_linear_fixture(8, 12, 91);
    FitConfig config;

    const auto a = sample_shapes(fx.model, fx.spec, fx.reg, 2000, config, 123, 1);
    const auto b = sample_shapes(fx.model, fx.spec, fx.reg, 2000, config, 123, 4);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

    // Monte-Carlo check: on an exactly affine measurement operator the
    // expected measurement of a sampled shape is the base measurement, so the
    // empirical mean must land within 3 standard errors per slot.
    const Eigen::Index count = 100000;
    const auto samples = sample_shapes(fx.model, fx.spec, fx.reg, count, config, 321);
    const MeasurementEvaluator eval(fx.model, fx.spec);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(8);
    Eigen::VectorXd sq_mean = Eigen::VectorXd::Zero(8);
    for (const auto& beta : samples) {
        const Eigen::VectorXd m = eval.measure(beta);
        mean += m;
        sq_mean += m.cwiseProduct(m);
    }
    mean /= double(count);
    sq_mean /= double(count);
    const Eigen::VectorXd stddev = (sq_mean - mean.cwiseProduct(mean)).cwiseMax(0.0).cwiseSqrt();
    for (Eigen::Index k = 0; k < 8; ++k) {
        const double standard_error = stddev[k] / std::sqrt(double(count));
        CHECK(std::abs(mean[k] - fx.reg.base_measurements[k]) < 3.0 * standard_error);
    }
}

TEST_CASE("regressor files round-trip bit-exactly") {
    const auto dir = fs::temp_directory_path() / "semshape_test_reg_io";
    fs::create_directories(dir);
    const auto fx = make_linear_fixture(7, 9, 95);

    save_regressor(fx.reg, dir / "reg.json");
    const auto loaded = load_regressor(dir / "reg.json");
    CHECK(loaded.weights == fx.reg.weights);
    CHECK(loaded.base_measurements == fx.reg.base_measurements);
    CHECK(loaded.meta.num_samples == fx.reg.meta.num_samples);
    CHECK(loaded.meta.seed == fx.reg.meta.seed);
    CHECK(loaded.meta.rank == fx.reg.meta.rank);
    CHECK(loaded.meta.normal_residual == fx.reg.meta.normal_residual);

    fs::resize_file(dir / "reg.bin", 16);
    CHECK_THROWS_AS(load_regressor(dir / "reg.json"), FormatError);
}

TEST_CASE("fit config rejects bad parameters") {
    FitConfig config;
    config.num_samples = 0;
    CHECK_THROWS_AS(config.validate(5), std::invalid_argument);
    config.num_samples = 100;
    config.coeff_stddev = 0.0;
    CHECK_THROWS_AS(config.validate(5), std::invalid_argument);
    config.coeff_stddev = 1.25;
    config.rank_tolerance = 0.0;
    CHECK_THROWS_AS(config.validate(5), std::invalid_argument);
}
