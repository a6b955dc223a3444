#include "semshape/shape_model.hpp"

#include <cstdio>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "detail/payload.hpp"
#include "semshape/errors.hpp"

namespace semshape {

namespace {

using nlohmann::ordered_json;

ordered_json parse_json_file(const std::filesystem::path& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw FormatError(std::string("cannot open ") + what + " file: " + path.string());
    try {
        return ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("malformed ") + what + " header " + path.string() + ": " +
                          e.what());
    }
}

template <typename T>
T get_field(const ordered_json& j, const char* key, const std::filesystem::path& path) {
    if (!j.contains(key)) {
        throw FormatError("missing field '" + std::string(key) + "' in " + path.string());
    }
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad field '" + std::string(key) + "' in " + path.string() + ": " +
                          e.what());
    }
}

}  // namespace

void LinearShapeModel::validate() const {
    if (num_vertices <= 0) throw std::invalid_argument("model must have at least one vertex");
    if (num_coeffs <= 0) throw std::invalid_argument("model must have at least one coefficient");
    if (template_vertices.size() != 3 * num_vertices) {
        throw std::invalid_argument("template length " + std::to_string(template_vertices.size()) +
                                    " != 3 * num_vertices = " + std::to_string(3 * num_vertices));
    }
    if (basis.rows() != 3 * num_vertices || basis.cols() != num_coeffs) {
        throw std::invalid_argument(
            "basis is " + std::to_string(basis.rows()) + "x" + std::to_string(basis.cols()) +
            ", expected " + std::to_string(3 * num_vertices) + "x" + std::to_string(num_coeffs));
    }
    if (!template_vertices.allFinite() || !basis.allFinite()) {
        throw std::invalid_argument("model contains non-finite values");
    }
    if (joint_regressor) {
        if (joint_regressor->cols() != num_vertices) {
            throw std::invalid_argument("joint regressor has " +
                                        std::to_string(joint_regressor->cols()) +
                                        " columns, expected " + std::to_string(num_vertices));
        }
        if (joint_regressor->rows() == 0 || !joint_regressor->allFinite()) {
            throw std::invalid_argument("joint regressor must be non-empty and finite");
        }
        // Rows must be affine combinations so joints translate with the mesh.
        const Eigen::VectorXd row_sums = joint_regressor->rowwise().sum();
        for (Eigen::Index j = 0; j < row_sums.size(); ++j) {
            if (std::abs(row_sums[j] - 1.0) > 1e-9) {
                throw std::invalid_argument("joint regressor row " + std::to_string(j) +
                                            " sums to " + std::to_string(row_sums[j]) +
                                            ", expected 1.0 within 1e-9");
            }
        }
    }
    for (std::size_t f = 0; f < faces.size(); ++f) {
        for (const auto idx : faces[f]) {
            if (idx >= static_cast<std::uint32_t>(num_vertices)) {
                throw std::invalid_argument("face " + std::to_string(f) + " references vertex " +
                                            std::to_string(idx) + " but the model has only " +
                                            std::to_string(num_vertices) + " vertices");
            }
        }
    }
}

Mesh shape_to_vertices(const LinearShapeModel& model, const Eigen::VectorXd& beta) {
    if (beta.size() != model.num_coeffs) {
        throw std::invalid_argument("beta has length " + std::to_string(beta.size()) +
                                    ", expected " + std::to_string(model.num_coeffs));
    }
    if (!beta.allFinite()) throw std::invalid_argument("beta contains non-finite values");

    const Eigen::VectorXd flat = model.basis * beta + model.template_vertices;
    Mesh mesh;
    mesh.vertices = Eigen::Map<const Points3>(flat.data(), model.num_vertices, 3);
    if (model.joint_regressor) {
        mesh.joints = *model.joint_regressor * mesh.vertices;
    }
    return mesh;
}

LinearShapeModel load_model(const std::filesystem::path& header_path) {
    const ordered_json header = parse_json_file(header_path, "model");

    LinearShapeModel model;
    model.num_vertices = get_field<std::int64_t>(header, "num_vertices", header_path);
    model.num_coeffs = get_field<std::int64_t>(header, "num_coeffs", header_path);
    const bool has_joints = get_field<bool>(header, "has_joints", header_path);
    const auto num_joints = get_field<std::int64_t>(header, "num_joints", header_path);
    const auto payload_rel = get_field<std::string>(header, "payload", header_path);

    if (model.num_vertices <= 0 || model.num_coeffs <= 0) {
        throw FormatError("model header " + header_path.string() +
                          " has non-positive dimensions: num_vertices=" +
                          std::to_string(model.num_vertices) +
                          ", num_coeffs=" + std::to_string(model.num_coeffs));
    }
    if (has_joints != (num_joints > 0)) {
        throw FormatError("model header " + header_path.string() +
                          " is inconsistent: has_joints=" + (has_joints ? "true" : "false") +
                          " but num_joints=" + std::to_string(num_joints));
    }

    const std::uint64_t v3 = static_cast<std::uint64_t>(3 * model.num_vertices);
    detail::PayloadReader reader(header_path.parent_path() / payload_rel);
    model.template_vertices = reader.read_f64(v3, "template");

    const Eigen::VectorXd basis_flat =
        reader.read_f64(v3 * static_cast<std::uint64_t>(model.num_coeffs), "basis");
    model.basis = Eigen::Map<const Eigen::MatrixXd>(basis_flat.data(),
                                                    static_cast<Eigen::Index>(v3),
                                                    model.num_coeffs);

    if (has_joints) {
        const Eigen::VectorXd reg_flat = reader.read_f64(
            static_cast<std::uint64_t>(num_joints) * static_cast<std::uint64_t>(model.num_vertices),
            "joint_regressor");
        using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        model.joint_regressor =
            Eigen::Map<const RowMajor>(reg_flat.data(), num_joints, model.num_vertices);
    }

    const std::uint32_t num_faces = reader.read_u32("face_count");
    const auto face_indices =
        reader.read_u32_array(static_cast<std::uint64_t>(num_faces) * 3, "faces");
    model.faces.resize(num_faces);
    for (std::uint32_t f = 0; f < num_faces; ++f) {
        model.faces[f] = {face_indices[3 * f], face_indices[3 * f + 1], face_indices[3 * f + 2]};
    }
    reader.expect_exhausted();

    try {
        model.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError("model file " + header_path.string() + " is inconsistent: " + e.what());
    }
    return model;
}

void save_model(const LinearShapeModel& model, const std::filesystem::path& header_path) {
    model.validate();

    std::filesystem::path payload_path = header_path;
    payload_path.replace_extension(".bin");

    ordered_json header;
    header["num_vertices"] = model.num_vertices;
    header["num_coeffs"] = model.num_coeffs;
    header["has_joints"] = model.joint_regressor.has_value();
    header["num_joints"] = model.num_joints();
    header["payload"] = payload_path.filename().string();

    std::ofstream out(header_path);
    if (!out) throw FormatError("cannot open model header for writing: " + header_path.string());
    out << header.dump(2) << "\n";
    out.flush();
    if (!out) throw FormatError("write failed for model header: " + header_path.string());

    detail::PayloadWriter writer(payload_path);
    writer.write_f64(model.template_vertices.data(),
                     static_cast<std::uint64_t>(model.template_vertices.size()));
    writer.write_f64(model.basis.data(), static_cast<std::uint64_t>(model.basis.size()));
    if (model.joint_regressor) {
        using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        const RowMajor reg = *model.joint_regressor;
        writer.write_f64(reg.data(), static_cast<std::uint64_t>(reg.size()));
    }
    writer.write_u32(static_cast<std::uint32_t>(model.faces.size()));
    for (const auto& face : model.faces) {
        writer.write_u32_array(face.data(), 3);
    }
    writer.finish();
}

void export_obj(const Mesh& mesh, const std::filesystem::path& path,
                const std::vector<Face>& faces,
                const std::optional<Eigen::VectorXd>& vertex_scalars) {
    const Eigen::Index num_vertices = mesh.vertices.rows();
    if (vertex_scalars && vertex_scalars->size() != num_vertices) {
        throw std::invalid_argument("vertex scalar field has length " +
                                    std::to_string(vertex_scalars->size()) + ", expected " +
                                    std::to_string(num_vertices));
    }
    for (std::size_t f = 0; f < faces.size(); ++f) {
        for (const auto idx : faces[f]) {
            if (idx >= static_cast<std::uint32_t>(num_vertices)) {
                throw std::invalid_argument("face " + std::to_string(f) + " references vertex " +
                                            std::to_string(idx) + " but the mesh has only " +
                                            std::to_string(num_vertices) + " vertices");
            }
        }
    }

    std::ofstream out(path);
    if (!out) throw FormatError("cannot open OBJ file for writing: " + path.string());
    char line[128];
    for (Eigen::Index v = 0; v < num_vertices; ++v) {
        std::snprintf(line, sizeof(line), "v %.9g %.9g %.9g\n", mesh.vertices(v, 0),
                      mesh.vertices(v, 1), mesh.vertices(v, 2));
        out << line;
    }
    for (const auto& face : faces) {
        std::snprintf(line, sizeof(line), "f %u %u %u\n", face[0] + 1, face[1] + 1, face[2] + 1);
        out << line;
    }
    out.flush();
    if (!out) throw FormatError("write failed for OBJ file: " + path.string());

    if (vertex_scalars) {
        const std::filesystem::path sidecar = path.string() + ".scalars.csv";
        std::ofstream csv(sidecar);
        if (!csv) throw FormatError("cannot open scalar sidecar for writing: " + sidecar.string());
        csv << "vertex_index,value\n";
        for (Eigen::Index v = 0; v < num_vertices; ++v) {
            std::snprintf(line, sizeof(line), "%lld,%.9g\n", static_cast<long long>(v),
                          (*vertex_scalars)[v]);
            csv << line;
        }
        csv.flush();
        if (!csv) throw FormatError("write failed for scalar sidecar: " + sidecar.string());
    }
}

}  // namespace semshape
