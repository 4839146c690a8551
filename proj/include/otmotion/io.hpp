#ifndef OTMOTION_IO_HPP
#define OTMOTION_IO_HPP

// Matrix files and run manifests.
//
// CSV: first line "# rows cols", then one row per line, values separated by
// commas, written with 17 significant digits so every double re-parses to
// the same bits. Binary: 8-byte magic "OTMV0001", uint64 rows, uint64 cols,
// then row-major little-endian float64 values.

#include "errors.hpp"
#include "types.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace otmotion::io {

using json = nlohmann::json;

inline constexpr std::string_view binary_magic = "OTMV0001";

/// Shortest text that round-trips, capped at 17 significant digits.
inline std::string format_double(double x)
{
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x, std::chars_format::general, 17);
    return std::string(buf.data(), res.ptr);
}

namespace detail {

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline double parse_double(std::string_view field, const std::string& file, std::size_t line)
{
    field = trim(field);
    if (field == "inf" || field == "+inf") return std::numeric_limits<double>::infinity();
    if (field == "-inf") return -std::numeric_limits<double>::infinity();
    if (field == "nan") return std::numeric_limits<double>::quiet_NaN();
    double value = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    if (first != last && *first == '+') ++first;
    const auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc{} || res.ptr != last || field.empty()) {
        throw parse_error(file, line, "invalid number '" + std::string(field) + "'");
    }
    return value;
}

inline Index parse_dim(std::string_view field, const std::string& file, std::size_t line)
{
    field = trim(field);
    long long value = 0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
    if (res.ec != std::errc{} || res.ptr != field.data() + field.size() || value < 0) {
        throw parse_error(file, line, "invalid dimension '" + std::string(field) + "'");
    }
    return static_cast<Index>(value);
}

inline void ensure_parent(const std::filesystem::path& path)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

} // namespace detail

inline void write_csv(std::ostream& out, const Matrix& m)
{
    out << "# " << m.rows() << ' ' << m.cols() << '\n';
    std::string line;
    for (Index i = 0; i < m.rows(); ++i) {
        line.clear();
        for (Index j = 0; j < m.cols(); ++j) {
            if (j) line += ',';
            line += format_double(m(i, j));
        }
        line += '\n';
        out << line;
    }
}

inline void write_csv(const std::filesystem::path& path, const Matrix& m)
{
    detail::ensure_parent(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("cannot open " + path.string() + " for writing");
    write_csv(out, m);
    if (!out) throw error("write failed: " + path.string());
}

/// Parses a CSV matrix; `name` labels errors. Blank lines are skipped.
inline Matrix read_csv(std::istream& in, const std::string& name = "<stream>")
{
    std::string line;
    std::size_t lineno = 0;
    Index rows = -1, cols = -1;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view s = detail::trim(line);
        if (s.empty()) continue;
        if (s.front() != '#') throw parse_error(name, lineno, "missing '# rows cols' header");
        std::istringstream hs{std::string(s.substr(1))};
        std::string r, c, extra;
        if (!(hs >> r >> c) || (hs >> extra)) throw parse_error(name, lineno, "malformed header");
        rows = detail::parse_dim(r, name, lineno);
        cols = detail::parse_dim(c, name, lineno);
        break;
    }
    if (rows < 0) throw parse_error(name, lineno ? lineno : 1, "empty file");

    Matrix m(rows, cols);
    Index i = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view s = detail::trim(line);
        if (s.empty()) continue;
        if (i >= rows) throw parse_error(name, lineno, "more than " + std::to_string(rows) + " data rows");
        Index j = 0;
        std::size_t start = 0;
        for (;;) {
            const std::size_t comma = s.find(',', start);
            const std::string_view field = s.substr(start, comma == std::string_view::npos ? s.npos : comma - start);
            if (j >= cols) throw parse_error(name, lineno, "more than " + std::to_string(cols) + " columns");
            m(i, j++) = detail::parse_double(field, name, lineno);
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (j != cols) {
            throw parse_error(name, lineno, "expected " + std::to_string(cols) + " columns, got " + std::to_string(j));
        }
        ++i;
    }
    if (i != rows) {
        throw parse_error(name, lineno + 1, "expected " + std::to_string(rows) + " data rows, got " + std::to_string(i));
    }
    return m;
}

inline Matrix read_csv(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error(path.string(), 0, "cannot open file");
    return read_csv(in, path.string());
}

inline void write_binary(const std::filesystem::path& path, const Matrix& m)
{
    static_assert(std::endian::native == std::endian::little, "binary matrix format assumes a little-endian host");
    detail::ensure_parent(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("cannot open " + path.string() + " for writing");
    out.write(binary_magic.data(), static_cast<std::streamsize>(binary_magic.size()));
    const std::uint64_t dims[2] = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
    if (!out) throw error("write failed: " + path.string());
}

inline Matrix read_binary(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error(path.string(), 0, "cannot open file");
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || std::string_view(magic.data(), magic.size()) != binary_magic) {
        throw parse_error(path.string(), 0, "bad magic, expected OTMV0001");
    }
    std::uint64_t dims[2] = {0, 0};
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    if (!in) throw parse_error(path.string(), 0, "truncated header");
    const auto size = dims[0] * dims[1];
    if (dims[0] > static_cast<std::uint64_t>(std::numeric_limits<Index>::max()) ||
        (dims[0] && size / dims[0] != dims[1])) {
        throw parse_error(path.string(), 0, "dimensions overflow");
    }
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(static_cast<Index>(dims[0]),
                                                                            static_cast<Index>(dims[1]));
    in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(size * sizeof(double)));
    if (!in) throw parse_error(path.string(), 0, "truncated data");
    if (in.peek() != std::char_traits<char>::eof()) throw parse_error(path.string(), 0, "trailing bytes");
    return rm;
}

/// Dispatches on the extension: ".bin" is binary, anything else CSV.
inline Matrix read_matrix(const std::filesystem::path& path)
{
    return path.extension() == ".bin" ? read_binary(path) : read_csv(path);
}

inline void write_matrix(const std::filesystem::path& path, const Matrix& m)
{
    if (path.extension() == ".bin") write_binary(path, m);
    else write_csv(path, m);
}

inline void write_json(const std::filesystem::path& path, const json& j)
{
    detail::ensure_parent(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
    if (!out) throw error("write failed: " + path.string());
}

inline json read_json(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error(path.string(), 0, "cannot open file");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw parse_error(path.string(), 0, e.what());
    }
}

} // namespace otmotion::io

#endif // OTMOTION_IO_HPP
