#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "semshape/errors.hpp"
#include "semshape/rng.hpp"
#include "semshape/shape_model.hpp"
#include "semshape/synthetic.hpp"

using namespace semshape;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("semshape_test_" + tag);
    fs::create_directories(dir);
    return dir;
}

LinearShapeModel two_vertex_model() {
    LinearShapeModel model;
    model.num_vertices = 2;
    model.num_coeffs = 1;
    model.template_vertices.resize(6);
    model.template_vertices << 0, 0, 0, 1, 0, 0;
    model.basis.resize(6, 1);
    model.basis << 0, 0, 0, 0.1, 0, 0;
    return model;
}

}  // namespace

TEST_CASE("zero coefficients reproduce the template") {
    const auto model = generate_synthetic_model(7, 40, 5, SyntheticProfile::RandomSmooth);
    const Mesh mesh = shape_to_vertices(model, Eigen::VectorXd::Zero(5));
    const Eigen::Map<const Eigen::VectorXd> flat(mesh.vertices.data(), mesh.vertices.size());
    CHECK(flat.isApprox(model.template_vertices, 0.0));
}

TEST_CASE("a unit coefficient adds exactly one basis column") {
    const auto model = generate_synthetic_model(7, 40, 5, SyntheticProfile::RandomSmooth);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(5);
    beta[0] = 1.0;
    const Mesh mesh = shape_to_vertices(model, beta);
    const Eigen::Map<const Eigen::VectorXd> flat(mesh.vertices.data(), mesh.vertices.size());
    CHECK(flat.isApprox(model.template_vertices + model.basis.col(0), 1e-15));
}

TEST_CASE("hand-evaluated two-vertex model") {
    const auto model = two_vertex_model();
    Eigen::VectorXd beta(1);
    beta << 2.0;
    const Mesh mesh = shape_to_vertices(model, beta);
    CHECK(mesh.vertices(0, 0) == doctest::Approx(0.0));
    CHECK(mesh.vertices(1, 0) == doctest::Approx(1.2));
    CHECK(mesh.vertices(1, 1) == doctest::Approx(0.0));
    CHECK(mesh.vertices(1, 2) == doctest::Approx(0.0));
}

TEST_CASE("beta length mismatch names both lengths") {
    const auto model = two_vertex_model();
    try {
        shape_to_vertices(model, Eigen::VectorXd::Zero(3));
        FAIL("expected invalid_argument");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("3") != std::string::npos);
        CHECK(msg.find("1") != std::string::npos);
    }
}

TEST_CASE("blend-shape map is affine in beta") {
    const auto model = generate_synthetic_model(11, 320, 8, SyntheticProfile::BodyLike);
    Rng rng(99);
    Eigen::VectorXd b1(8), b2(8);
    for (int i = 0; i < 8; ++i) {
        b1[i] = rng.normal();
        b2[i] = rng.normal();
    }
    const Mesh sum = shape_to_vertices(model, b1 + b2);
    const Mesh m1 = shape_to_vertices(model, b1);
    const Mesh m2 = shape_to_vertices(model, b2);
    const Mesh base = shape_to_vertices(model, Eigen::VectorXd::Zero(8));

    const Points3 expected = m1.vertices + m2.vertices - base.vertices;
    CHECK((sum.vertices - expected).cwiseAbs().maxCoeff() <
          1e-12 * expected.cwiseAbs().maxCoeff());

    // Homogeneity of the deformation.
    const Mesh scaled = shape_to_vertices(model, 3.0 * b1);
    const Points3 deform = 3.0 * (m1.vertices - base.vertices);
    CHECK((scaled.vertices - base.vertices - deform).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("regressed joints are affine in beta") {
    const auto model = generate_synthetic_model(3, 400, 6, SyntheticProfile::BodyLike);
    REQUIRE(model.joint_regressor.has_value());
    Rng rng(5);
    Eigen::VectorXd b1(6), b2(6);
    for (int i = 0; i < 6; ++i) {
        b1[i] = rng.normal();
        b2[i] = rng.normal();
    }
    const auto j_sum = *shape_to_vertices(model, b1 + b2).joints;
    const auto j1 = *shape_to_vertices(model, b1).joints;
    const auto j2 = *shape_to_vertices(model, b2).joints;
    const auto j0 = *shape_to_vertices(model, Eigen::VectorXd::Zero(6)).joints;
    CHECK((j_sum - (j1 + j2 - j0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("synthetic generator is deterministic and exact-sized") {
    const auto a = generate_synthetic_model(42, 300, 12, SyntheticProfile::BodyLike);
    const auto b = generate_synthetic_model(42, 300, 12, SyntheticProfile::BodyLike);
    CHECK(a.template_vertices == b.template_vertices);
    CHECK(a.basis == b.basis);
    CHECK(a.num_vertices == 300);
    CHECK(a.template_vertices.size() == 900);

    const auto c = generate_synthetic_model(43, 300, 12, SyntheticProfile::BodyLike);
    CHECK(a.basis != c.basis);

    const auto s = generate_synthetic_model(1, 77, 4, SyntheticProfile::RandomSmooth);
    CHECK(s.num_vertices == 77);
    CHECK_FALSE(s.joint_regressor.has_value());
}

TEST_CASE("body-like template is taller than wide") {
    const auto model = generate_synthetic_model(1, 600, 30, SyntheticProfile::BodyLike);
    const Mesh mesh = shape_to_vertices(model, Eigen::VectorXd::Zero(30));
    const double width =
        mesh.vertices.col(0).maxCoeff() - mesh.vertices.col(0).minCoeff();
    const double height =
        mesh.vertices.col(1).maxCoeff() - mesh.vertices.col(1).minCoeff();
    CHECK(height > width);
    REQUIRE(model.joint_regressor.has_value());
    CHECK(model.joint_regressor->rows() == 10);
    CHECK_FALSE(model.faces.empty());
}

TEST_CASE("degenerate generator sizes are rejected") {
    CHECK_THROWS_AS(generate_synthetic_model(1, 600, 0, SyntheticProfile::BodyLike),
                    std::invalid_argument);
    CHECK_THROWS_AS(generate_synthetic_model(1, 4, 3, SyntheticProfile::BodyLike),
                    std::invalid_argument);
}

TEST_CASE("model file round-trip is bit-exact") {
    const auto dir = temp_dir("model_io");
    const auto model = generate_synthetic_model(9, 280, 7, SyntheticProfile::BodyLike);
    save_model(model, dir / "model.json");
    const auto loaded = load_model(dir / "model.json");

    CHECK(loaded.num_vertices == model.num_vertices);
    CHECK(loaded.template_vertices == model.template_vertices);
    CHECK(loaded.basis == model.basis);
    REQUIRE(loaded.joint_regressor.has_value());
    CHECK(*loaded.joint_regressor == *model.joint_regressor);
    CHECK(loaded.faces == model.faces);
}

TEST_CASE("truncated payload reports expected vs actual bytes") {
    const auto dir = temp_dir("model_trunc");
    const auto model = generate_synthetic_model(2, 64, 3, SyntheticProfile::RandomSmooth);
    save_model(model, dir / "model.json");
    fs::resize_file(dir / "model.bin", 100);
    try {
        load_model(dir / "model.json");
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("truncated") != std::string::npos);
        CHECK(msg.find("need") != std::string::npos);
    }
}

TEST_CASE("header/payload dimension inconsistency is rejected") {
    const auto dir = temp_dir("model_baddim");
    const auto model = generate_synthetic_model(2, 64, 3, SyntheticProfile::RandomSmooth);
    save_model(model, dir / "model.json");
    // Rewrite the header claiming one more vertex than the payload holds.
    std::ofstream out(dir / "model.json");
    out << R"({"num_vertices": 65, "num_coeffs": 3, "has_joints": false,)"
        << R"( "num_joints": 0, "payload": "model.bin"})";
    out.close();
    CHECK_THROWS_AS(load_model(dir / "model.json"), FormatError);
}

TEST_CASE("non-finite payload values are rejected with the field name") {
    const auto dir = temp_dir("model_nan");
    const auto model = generate_synthetic_model(2, 64, 3, SyntheticProfile::RandomSmooth);
    save_model(model, dir / "model.json");
    std::fstream bin(dir / "model.bin", std::ios::binary | std::ios::in | std::ios::out);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    bin.seekp(16);
    bin.write(reinterpret_cast<const char*>(&nan), 8);
    bin.close();
    try {
        load_model(dir / "model.json");
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("template") != std::string::npos);
    }
}

TEST_CASE("missing header field is a format error") {
    const auto dir = temp_dir("model_badheader");
    std::ofstream out(dir / "model.json");
    out << R"({"num_vertices": 4})";
    out.close();
    CHECK_THROWS_AS(load_model(dir / "model.json"), FormatError);
}

TEST_CASE("OBJ export writes v and f lines plus an optional scalar sidecar") {
    const auto dir = temp_dir("obj");
    Mesh mesh;
    mesh.vertices.resize(3, 3);
    mesh.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0;
    const std::vector<Face> faces = {{0, 1, 2}};

    SUBCASE("vertex and face lines") {
        export_obj(mesh, dir / "tri.obj", faces);
        std::ifstream in(dir / "tri.obj");
        int v_lines = 0, f_lines = 0;
        std::string line;
        while (std::getline(in, line)) {
            if (line.starts_with("v ")) ++v_lines;
            if (line.starts_with("f ")) ++f_lines;
        }
        CHECK(v_lines == 3);
        CHECK(f_lines == 1);
    }

    SUBCASE("scalar length mismatch") {
        CHECK_THROWS_AS(export_obj(mesh, dir / "tri.obj", faces, Eigen::VectorXd::Zero(2)),
                        std::invalid_argument);
    }

    SUBCASE("all-zero scalars give an all-zero sidecar") {
        export_obj(mesh, dir / "tri.obj", faces, Eigen::VectorXd::Zero(3));
        std::ifstream in(dir / "tri.obj.scalars.csv");
        std::string line;
        std::getline(in, line);
        CHECK(line == "vertex_index,value");
        int rows = 0;
        while (std::getline(in, line)) {
            CHECK(line.substr(line.find(',') + 1) == "0");
            ++rows;
        }
        CHECK(rows == 3);
    }

    SUBCASE("face index out of range") {
        CHECK_THROWS_AS(export_obj(mesh, dir / "tri.obj", {{0, 1, 7}}), std::invalid_argument);
    }
}
