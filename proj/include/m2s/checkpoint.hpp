#pragma once

// Binary checkpoint: "M2SC" | u32 version | u32 meta_len | meta JSON bytes |
// u32 tensor_count | per tensor: u32 name_len | name | u32 rows | u32 cols |
// rows*cols f64. Little-endian, row-major.

#include <filesystem>
#include <string>

#include "m2s/binary_io.hpp"
#include "m2s/jsonl.hpp"
#include "m2s/numerics/params.hpp"

namespace m2s {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    Json meta;
    ParameterStore params;
};

inline void write_checkpoint(const std::filesystem::path& path, const Json& meta, const ParameterStore& params) {
    auto out = io::open_output(path);
    io::write_magic(out, "M2SC");
    io::write_le<std::uint32_t>(out, kCheckpointVersion);
    const std::string meta_text = meta.dump();
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(meta_text.size()));
    out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.name(i);
        io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const Matrix& m = params[i];
        io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
        io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
        for (Eigen::Index k = 0; k < m.size(); ++k) io::write_le<double>(out, m.data()[k]);
    }
    if (!out) throw IoError("write failed: " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("missing checkpoint " + path.string());
    auto in = io::open_input(path);
    const std::string what = path.string();
    io::expect_magic(in, "M2SC", what);
    const auto version = io::read_le<std::uint32_t>(in, what);
    if (version != kCheckpointVersion) throw IoError(what + ": unsupported checkpoint version");
    const auto meta_len = io::read_le<std::uint32_t>(in, what);
    std::string meta_text(meta_len, '\0');
    in.read(meta_text.data(), meta_len);
    if (!in) throw IoError("truncated " + what);
    Checkpoint ck;
    ck.meta = Json::parse(meta_text);
    const auto count = io::read_le<std::uint32_t>(in, what);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = io::read_le<std::uint32_t>(in, what);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rows = io::read_le<std::uint32_t>(in, what);
        const auto cols = io::read_le<std::uint32_t>(in, what);
        Matrix m(rows, cols);
        for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = io::read_le<double>(in, what);
        ck.params.add(std::move(name), std::move(m));
    }
    return ck;
}

}  // namespace m2s
