#pragma once

// Dense matrix support: validation helpers and the two on-disk formats
// (CSV with 17 significant digits, and a raw little-endian binary format
// with an 8-byte header: u32 rows, u32 cols, followed by the entries in
// column-major order).

#include <Eigen/Dense>

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lossmin {

using DenseMatrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require_finite(const DenseMatrix& m, const std::string& what) {
    if (!m.allFinite()) {
        throw DataError(what + ": matrix contains NaN or Inf entries");
    }
}

// vec(M): columns stacked, matching the column-major storage.
inline Vector vectorize(const DenseMatrix& m) {
    return Eigen::Map<const Vector>(m.data(), m.size());
}

inline DenseMatrix unvectorize(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
    if (v.size() != rows * cols) {
        throw DataError("unvectorize: size mismatch");
    }
    return Eigen::Map<const DenseMatrix>(v.data(), rows, cols);
}

inline std::string format_entry(double x) {
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
}

inline void write_csv(const DenseMatrix& m, std::ostream& out) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j > 0) out << ',';
            out << format_entry(m(i, j));
        }
        out << '\n';
    }
}

inline void write_csv(const DenseMatrix& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    write_csv(m, out);
}

inline DenseMatrix read_csv(std::istream& in, const std::string& name = "<stream>") {
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t pos = 0;
                row.push_back(std::stod(cell, &pos));
            } catch (const std::exception&) {
                throw DataError(name + ":" + std::to_string(lineno) + ": bad value '" + cell + "'");
            }
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw DataError(name + ":" + std::to_string(lineno) + ": ragged row");
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) return DenseMatrix(0, 0);
    DenseMatrix m(static_cast<Eigen::Index>(rows.size()),
                  static_cast<Eigen::Index>(rows.front().size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    require_finite(m, name);
    return m;
}

inline DenseMatrix read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    return read_csv(in, path);
}

inline void write_binary(const DenseMatrix& m, std::ostream& out) {
    auto put_u32 = [&out](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
        out.write(reinterpret_cast<const char*>(b), 4);
    };
    put_u32(static_cast<std::uint32_t>(m.rows()));
    put_u32(static_cast<std::uint32_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double)) * m.size());
}

inline void write_binary(const DenseMatrix& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    write_binary(m, out);
}

inline DenseMatrix read_binary(std::istream& in, const std::string& name = "<stream>") {
    auto get_u32 = [&in, &name]() {
        unsigned char b[4];
        if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError(name + ": truncated header");
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    };
    const std::uint32_t rows = get_u32();
    const std::uint32_t cols = get_u32();
    DenseMatrix m(rows, cols);
    if (m.size() > 0 &&
        !in.read(reinterpret_cast<char*>(m.data()),
                 static_cast<std::streamsize>(sizeof(double)) * m.size())) {
        throw DataError(name + ": truncated payload");
    }
    require_finite(m, name);
    return m;
}

inline DenseMatrix read_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    return read_binary(in, path);
}

}  // namespace lossmin
