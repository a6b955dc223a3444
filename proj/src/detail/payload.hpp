#pragma once

// Internal helpers for the JSON-header + little-endian binary payload
// envelope shared by the model and regressor file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "semshape/errors.hpp"

namespace semshape::detail {

static_assert(std::endian::native == std::endian::little,
              "payload I/O assumes a little-endian host");

class PayloadReader {
public:
    explicit PayloadReader(const std::filesystem::path& path) : path_(path) {
        std::ifstream in(path, std::ios::binary | std::ios::ate);
        if (!in) throw FormatError("cannot open payload file: " + path_.string());
        const auto actual = static_cast<std::uint64_t>(in.tellg());
        bytes_.resize(actual);
        in.seekg(0);
        in.read(reinterpret_cast<char*>(bytes_.data()), static_cast<std::streamsize>(actual));
        if (!in) throw FormatError("short read from payload file: " + path_.string());
    }

    // Reads `count` doubles into a flat Eigen vector, checking finiteness.
    Eigen::VectorXd read_f64(std::uint64_t count, const std::string& field) {
        require(count * 8, field);
        Eigen::VectorXd out(static_cast<Eigen::Index>(count));
        std::memcpy(out.data(), bytes_.data() + offset_, count * 8);
        offset_ += count * 8;
        if (!out.allFinite()) {
            throw FormatError("non-finite value in field '" + field + "' of " + path_.string());
        }
        return out;
    }

    std::uint32_t read_u32(const std::string& field) {
        require(4, field);
        std::uint32_t v = 0;
        std::memcpy(&v, bytes_.data() + offset_, 4);
        offset_ += 4;
        return v;
    }

    std::vector<std::uint32_t> read_u32_array(std::uint64_t count, const std::string& field) {
        require(count * 4, field);
        std::vector<std::uint32_t> out(count);
        std::memcpy(out.data(), bytes_.data() + offset_, count * 4);
        offset_ += count * 4;
        return out;
    }

    std::uint64_t offset() const { return offset_; }

    void expect_exhausted() const {
        if (offset_ != bytes_.size()) {
            throw FormatError("payload " + path_.string() + " has " +
                              std::to_string(bytes_.size() - offset_) +
                              " unexpected trailing bytes at offset " + std::to_string(offset_));
        }
    }

private:
    void require(std::uint64_t n, const std::string& field) {
        if (offset_ + n > bytes_.size()) {
            throw FormatError("payload " + path_.string() + " truncated in field '" + field +
                              "': need " + std::to_string(n) + " bytes at offset " +
                              std::to_string(offset_) + ", have " +
                              std::to_string(bytes_.size() - offset_));
        }
    }

    std::filesystem::path path_;
    std::vector<std::uint8_t> bytes_;
    std::uint64_t offset_ = 0;
};

class PayloadWriter {
public:
    explicit PayloadWriter(const std::filesystem::path& path)
        : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw FormatError("cannot open payload file for writing: " + path.string());
    }

    void write_f64(const double* data, std::uint64_t count) {
        out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 8));
    }

    void write_u32(std::uint32_t v) { out_.write(reinterpret_cast<const char*>(&v), 4); }

    void write_u32_array(const std::uint32_t* data, std::uint64_t count) {
        out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 4));
    }

    void finish() {
        out_.flush();
        if (!out_) throw FormatError("write failed for payload file: " + path_.string());
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

}  // namespace semshape::detail
