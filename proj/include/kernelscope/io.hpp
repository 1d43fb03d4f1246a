#pragma once

// Container format shared by every persisted object (see docs/formats.md):
//
//   bytes 0..7   magic "KSCOPE01"
//   bytes 8..15  header length H, unsigned 64-bit little endian
//   next H bytes UTF-8 JSON header: {"kind": ..., ..., "arrays": [{"name", "shape"}, ...]}
//   then each array in header order as row-major IEEE-754 binary64, little endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kernelscope/dynamics.hpp"
#include "kernelscope/errors.hpp"
#include "kernelscope/features.hpp"
#include "kernelscope/mpls.hpp"
#include "kernelscope/regression.hpp"

namespace kernelscope::io {

using json = nlohmann::json;

inline constexpr std::array<char, 8> magic = {'K', 'S', 'C', 'O', 'P', 'E', '0', '1'};

struct NamedArray {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;
};

struct Container {
    json header = json::object();
    std::vector<NamedArray> arrays;

    const NamedArray& array(const std::string& name) const {
        for (const auto& a : arrays)
            if (a.name == name) return a;
        throw IoError("container has no array '" + name + "'");
    }
};

namespace detail {

inline std::uint64_t to_le(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    std::uint64_t r = 0;
    for (int b = 0; b < 8; ++b) r |= ((v >> (8 * b)) & 0xffu) << (8 * (7 - b));
    return r;
}

inline std::size_t element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t s : shape)
        if (__builtin_mul_overflow(n, s, &n)) throw IoError("array shape overflows");
    return n;
}

}  // namespace detail

inline std::string encode(const Container& c) {
    json header = c.header;
    header["arrays"] = json::array();
    for (const auto& a : c.arrays) {
        if (detail::element_count(a.shape) != a.values.size())
            throw IoError("array '" + a.name + "' does not match its shape");
        header["arrays"].push_back({{"name", a.name}, {"shape", a.shape}});
    }
    const std::string text = header.dump();
    std::string out(magic.begin(), magic.end());
    const std::uint64_t len = detail::to_le(text.size());
    out.append(reinterpret_cast<const char*>(&len), sizeof len);
    out += text;
    for (const auto& a : c.arrays) {
        for (double v : a.values) {
            const std::uint64_t bits = detail::to_le(std::bit_cast<std::uint64_t>(v));
            out.append(reinterpret_cast<const char*>(&bits), sizeof bits);
        }
    }
    return out;
}

inline Container decode(const std::string& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), magic.data(), magic.size()) != 0)
        throw IoError("not a kernelscope container (bad magic)");
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 8, sizeof len);
    len = detail::to_le(len);
    if (len > bytes.size() - 16) throw IoError("truncated container header");
    Container c;
    try {
        c.header = json::parse(bytes.substr(16, len));
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed container header: ") + e.what());
    }
    if (!c.header.is_object() || !c.header.contains("arrays") || !c.header["arrays"].is_array())
        throw IoError("container header has no array table");
    std::size_t pos = 16 + len;
    try {
        for (const auto& spec : c.header.at("arrays")) {
            NamedArray a;
            a.name = spec.at("name").get<std::string>();
            a.shape = spec.at("shape").get<std::vector<std::size_t>>();
            const std::size_t n = detail::element_count(a.shape);
            if (n > (bytes.size() - pos) / 8) throw IoError("truncated array '" + a.name + "'");
            a.values.resize(n);
            for (std::size_t q = 0; q < n; ++q) {
                std::uint64_t bits = 0;
                std::memcpy(&bits, bytes.data() + pos + 8 * q, sizeof bits);
                a.values[q] = std::bit_cast<double>(detail::to_le(bits));
            }
            pos += 8 * n;
            c.arrays.push_back(std::move(a));
        }
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed array table: ") + e.what());
    }
    if (pos != bytes.size()) throw IoError("trailing bytes after last array");
    c.header.erase("arrays");
    return c;
}

/// Writes via a temporary file and rename so readers never see partial output.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open '" + tmp.string() + "' for writing");
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw IoError("write to '" + tmp.string() + "' failed");
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

/// FNV-1a, 64 bit.
inline std::uint64_t checksum(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return s;
}

inline void expect_kind(const Container& c, const std::string& kind) {
    const std::string got = c.header.value("kind", std::string());
    if (got != kind) throw IoError("expected a '" + kind + "' file, found '" + got + "'");
}

// --- trajectory sets --------------------------------------------------------

inline Container to_container(const TrajectorySet& t) {
    Container c;
    c.header = {{"kind", "trajectory_set"}, {"M", t.M}, {"N", t.N}, {"L", t.L}, {"d", t.d},
                {"T", t.T}, {"system", t.system}, {"seed", t.seed}};
    c.arrays.push_back({"times", {t.L}, t.times});
    c.arrays.push_back({"states", {t.M, t.L, t.N, t.d}, t.states});
    c.arrays.push_back({"velocities", {t.M, t.L, t.N, t.d}, t.velocities});
    return c;
}

inline TrajectorySet trajectory_set_from(const Container& c) {
    expect_kind(c, "trajectory_set");
    TrajectorySet t;
    t.M = c.header.at("M").get<std::size_t>();
    t.N = c.header.at("N").get<std::size_t>();
    t.L = c.header.at("L").get<std::size_t>();
    t.d = c.header.at("d").get<std::size_t>();
    t.T = c.header.at("T").get<double>();
    t.system = c.header.at("system").get<std::string>();
    t.seed = c.header.at("seed").get<std::uint64_t>();
    t.times = c.array("times").values;
    t.states = c.array("states").values;
    t.velocities = c.array("velocities").values;
    if (!t.shape_consistent()) throw IoError("trajectory set arrays do not match the header");
    return t;
}

// --- regression samples -----------------------------------------------------

inline Container to_container(const SampleSet& s) {
    Container c;
    c.header = {{"kind", "regression_samples"}, {"D", s.D}, {"Q", s.size()}, {"columns", "y[0..D-1], z, weight_basis"}};
    std::vector<double> rows;
    rows.reserve(s.size() * (s.D + 2));
    for (std::size_t q = 0; q < s.size(); ++q) {
        const auto y = s.features(q);
        rows.insert(rows.end(), y.begin(), y.end());
        rows.push_back(s.z[q]);
        rows.push_back(s.weight_basis[q]);
    }
    c.arrays.push_back({"rows", {s.size(), s.D + 2}, std::move(rows)});
    return c;
}

inline SampleSet samples_from(const Container& c) {
    expect_kind(c, "regression_samples");
    SampleSet s;
    s.D = c.header.at("D").get<std::size_t>();
    const std::size_t Q = c.header.at("Q").get<std::size_t>();
    const auto& rows = c.array("rows").values;
    if (rows.size() != Q * (s.D + 2)) throw IoError("regression sample rows do not match the header");
    for (std::size_t q = 0; q < Q; ++q) {
        const double* r = rows.data() + q * (s.D + 2);
        s.push_back(std::span<const double>(r, s.D), r[s.D], r[s.D + 1]);
    }
    return s;
}

// --- reduction maps ---------------------------------------------------------

inline std::vector<double> row_major(const Eigen::MatrixXd& m) {
    std::vector<double> v(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) v[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
    return v;
}

inline Eigen::MatrixXd from_row_major(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
    if (v.size() != rows * cols) throw IoError("matrix data does not match its shape");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[r * cols + c];
    return m;
}

inline Container to_container(const ReductionMap& B) {
    Container c;
    c.header = {{"kind", "reduction_map"}, {"D", B.D()}, {"dprime", B.dprime()}, {"provenance", to_string(B.provenance)}};
    c.arrays.push_back({"rows", {B.dprime(), B.D()}, row_major(B.rows)});
    return c;
}

inline ReductionMap reduction_map_from(const Container& c) {
    expect_kind(c, "reduction_map");
    ReductionMap B;
    B.rows = from_row_major(c.array("rows").values, c.header.at("dprime").get<std::size_t>(), c.header.at("D").get<std::size_t>());
    B.provenance = provenance_from_string(c.header.at("provenance").get<std::string>());
    return B;
}

// --- kernel models ----------------------------------------------------------

inline Container to_container(const KernelModel& m) {
    Container c;
    c.header = {{"kind", "kernel_model"},
                {"basis_family", to_string(m.space.family)},
                {"degree", m.space.degree},
                {"intervals", m.space.intervals},
                {"n_total", m.space.n_total()},
                {"D", m.reduction.D()},
                {"dprime", m.reduction.dprime()},
                {"provenance", to_string(m.reduction.provenance)}};
    c.arrays.push_back({"support_lower", {m.space.dim()}, m.space.lower});
    c.arrays.push_back({"support_upper", {m.space.dim()}, m.space.upper});
    c.arrays.push_back({"coefficients", {m.coefficients.size()}, m.coefficients});
    c.arrays.push_back({"reduction_rows", {m.reduction.dprime(), m.reduction.D()}, row_major(m.reduction.rows)});
    return c;
}

inline KernelModel kernel_model_from(const Container& c) {
    expect_kind(c, "kernel_model");
    KernelModel m;
    m.space.family = basis_family_from_string(c.header.at("basis_family").get<std::string>());
    m.space.degree = c.header.at("degree").get<int>();
    m.space.intervals = c.header.at("intervals").get<std::vector<std::size_t>>();
    m.space.lower = c.array("support_lower").values;
    m.space.upper = c.array("support_upper").values;
    m.space.validate();
    m.coefficients = c.array("coefficients").values;
    if (m.coefficients.size() != m.space.n_total()) throw IoError("coefficient count does not match the basis");
    m.reduction.rows = from_row_major(c.array("reduction_rows").values, c.header.at("dprime").get<std::size_t>(),
                                      c.header.at("D").get<std::size_t>());
    m.reduction.provenance = provenance_from_string(c.header.at("provenance").get<std::string>());
    return m;
}

template <typename T>
void save(const std::filesystem::path& path, const T& value) {
    write_file_atomic(path, encode(to_container(value)));
}

inline Container load_container(const std::filesystem::path& path) { return decode(read_file(path)); }

namespace detail {

template <typename F>
auto translate_json_errors(F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed container: ") + e.what());
    } catch (const ConfigError& e) {
        throw IoError(std::string("malformed container: ") + e.what());
    }
}

}  // namespace detail

inline TrajectorySet load_trajectories(const std::filesystem::path& p) {
    return detail::translate_json_errors([&] { return trajectory_set_from(load_container(p)); });
}
inline SampleSet load_samples(const std::filesystem::path& p) {
    return detail::translate_json_errors([&] { return samples_from(load_container(p)); });
}
inline ReductionMap load_reduction_map(const std::filesystem::path& p) {
    return detail::translate_json_errors([&] { return reduction_map_from(load_container(p)); });
}
inline KernelModel load_kernel_model(const std::filesystem::path& p) {
    return detail::translate_json_errors([&] { return kernel_model_from(load_container(p)); });
}

}  // namespace kernelscope::io
