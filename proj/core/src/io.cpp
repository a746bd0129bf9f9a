#include "headfem/io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "headfem/error.hpp"

namespace headfem {

static_assert(std::endian::native == std::endian::little,
              "binary matrix files assume a little-endian host");

std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw NumericalError("SHA-256 computation failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& file) { return sha256_hex(read_file(file)); }

std::string read_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + file.string() + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& file, std::string_view bytes) {
    if (file.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(file.parent_path(), ec);
        if (ec) {
            throw IoError("cannot create directory '" + file.parent_path().string() +
                          "': " + ec.message());
        }
    }
    const auto tmp = std::filesystem::path(file.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write '" + file.string() + "'");
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw IoError("write to '" + file.string() + "' failed");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, file, ec);
    if (ec) {
        throw IoError("cannot move '" + tmp.string() + "' to '" + file.string() + "': " +
                      ec.message());
    }
}

std::string format_double(double v) {
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

void CsvWriter::row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i > 0) {
            text_ += ',';
        }
        const auto& f = fields[i];
        if (f.find_first_of(",\"\r\n") == std::string::npos) {
            text_ += f;
            continue;
        }
        text_ += '"';
        for (char c : f) {
            if (c == '"') {
                text_ += '"';
            }
            text_ += c;
        }
        text_ += '"';
    }
    text_ += "\r\n";
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    std::size_t i = 0;
    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    while (i < text.size()) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    i += 2;
                    continue;
                }
                quoted = false;
            } else {
                field += c;
            }
            ++i;
            continue;
        }
        if (c == '"' && !field_started && field.empty()) {
            quoted = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\r' || c == '\n') {
            end_field();
            rows.push_back(std::move(row));
            row.clear();
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
                ++i;
            }
        } else {
            field += c;
            field_started = true;
        }
        ++i;
    }
    if (quoted) {
        throw FormatError("unterminated quoted CSV field");
    }
    if (field_started || !field.empty() || !row.empty()) {
        end_field();
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::Index CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) {
            return static_cast<Eigen::Index>(i);
        }
    }
    throw FormatError("CSV has no column '" + name + "'");
}

CsvTable read_numeric_csv(const std::filesystem::path& file) {
    const auto rows = parse_csv(read_file(file));
    if (rows.empty()) {
        throw FormatError(file.string() + ": empty CSV file");
    }
    CsvTable t;
    t.header = rows.front();
    t.values.resize(static_cast<Eigen::Index>(rows.size() - 1),
                    static_cast<Eigen::Index>(t.header.size()));
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != t.header.size()) {
            throw FormatError(file.string() + ":" + std::to_string(r + 1) + ": expected " +
                              std::to_string(t.header.size()) + " fields, found " +
                              std::to_string(rows[r].size()));
        }
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            const auto& s = rows[r][c];
            double v = 0.0;
            const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
            if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
                throw FormatError(file.string() + ":" + std::to_string(r + 1) +
                                  ": not a number: '" + s + "'");
            }
            t.values(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(c)) = v;
        }
    }
    return t;
}

void write_matrix_binary(const std::filesystem::path& file, const Eigen::MatrixXd& m) {
    write_file(file, std::string_view(reinterpret_cast<const char*>(m.data()),
                                      static_cast<std::size_t>(m.size()) * sizeof(double)));
}

Eigen::MatrixXd read_matrix_binary(const std::filesystem::path& file, Eigen::Index rows,
                                   Eigen::Index cols) {
    const std::string bytes = read_file(file);
    const auto expected = static_cast<std::size_t>(rows * cols) * sizeof(double);
    if (bytes.size() != expected) {
        throw FormatError(file.string() + ": expected " + std::to_string(expected) +
                          " bytes for a " + std::to_string(rows) + "x" + std::to_string(cols) +
                          " matrix, found " + std::to_string(bytes.size()));
    }
    Eigen::MatrixXd m(rows, cols);
    std::memcpy(m.data(), bytes.data(), expected);
    return m;
}

std::string matrix_market(const SparseMatrix& m) {
    std::string out = "%%MatrixMarket matrix coordinate real general\n";
    out += std::to_string(m.rows()) + " " + std::to_string(m.cols()) + " " +
           std::to_string(m.nonZeros()) + "\n";
    for (int col = 0; col < m.outerSize(); ++col) {
        for (SparseMatrix::InnerIterator it(m, col); it; ++it) {
            out += std::to_string(it.row() + 1) + " " + std::to_string(it.col() + 1) + " " +
                   format_double(it.value()) + "\n";
        }
    }
    return out;
}

namespace {

std::vector<std::vector<double>> read_rows(const std::filesystem::path& file, std::size_t width) {
    std::istringstream in(read_file(file));
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        std::istringstream ls(line);
        std::vector<double> row(width);
        for (auto& v : row) {
            if (!(ls >> v)) {
                throw FormatError(file.string() + ":" + std::to_string(number) + ": expected " +
                                  std::to_string(width) + " values");
            }
        }
        std::string rest;
        if (ls >> rest) {
            throw FormatError(file.string() + ":" + std::to_string(number) +
                              ": trailing token '" + rest + "'");
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
    return std::filesystem::path(stem.string() + suffix);
}

} // namespace

std::vector<std::filesystem::path> save_mesh(const TetMesh& mesh, const std::filesystem::path& stem) {
    std::string nodes;
    for (const auto& p : mesh.nodes) {
        nodes += format_double(p.x()) + " " + format_double(p.y()) + " " + format_double(p.z()) +
                 "\n";
    }
    std::string tetra;
    for (const auto& t : mesh.tetra) {
        tetra += std::to_string(t[0] + 1) + " " + std::to_string(t[1] + 1) + " " +
                 std::to_string(t[2] + 1) + " " + std::to_string(t[3] + 1) + "\n";
    }
    std::string labels;
    for (int l : mesh.labels) {
        labels += std::to_string(l) + "\n";
    }
    std::string sigma;
    for (const auto& s : mesh.sigma) {
        for (int k = 0; k < 6; ++k) {
            sigma += format_double(s.row[k]) + (k == 5 ? "\n" : " ");
        }
    }
    const std::vector<std::filesystem::path> files = {
        with_suffix(stem, ".nodes"), with_suffix(stem, ".tetra"), with_suffix(stem, ".labels"),
        with_suffix(stem, ".sigma")};
    write_file(files[0], nodes);
    write_file(files[1], tetra);
    write_file(files[2], labels);
    write_file(files[3], sigma);
    return files;
}

TetMesh load_mesh(const std::filesystem::path& stem) {
    TetMesh mesh;
    for (const auto& r : read_rows(with_suffix(stem, ".nodes"), 3)) {
        mesh.nodes.emplace_back(r[0], r[1], r[2]);
    }
    const auto tet_file = with_suffix(stem, ".tetra");
    for (const auto& r : read_rows(tet_file, 4)) {
        Tetrahedron t{};
        for (int k = 0; k < 4; ++k) {
            const double v = r[k];
            if (v < 1 || v > static_cast<double>(mesh.nodes.size()) || v != std::floor(v)) {
                throw IndexError(tet_file.string() + ": node index " + format_double(v) +
                                 " out of range");
            }
            t[k] = static_cast<int>(v) - 1;
        }
        mesh.tetra.push_back(t);
    }
    for (const auto& r : read_rows(with_suffix(stem, ".labels"), 1)) {
        mesh.labels.push_back(static_cast<int>(r[0]));
    }
    for (const auto& r : read_rows(with_suffix(stem, ".sigma"), 6)) {
        mesh.sigma.push_back(Conductivity::tensor({r[0], r[1], r[2], r[3], r[4], r[5]}));
    }
    if (mesh.labels.size() != mesh.tetra.size() || mesh.sigma.size() != mesh.tetra.size()) {
        throw IndexError(stem.string() + ": tetra, labels and sigma files differ in length");
    }
    return mesh;
}

std::string sigma_hash(const TetMesh& mesh) {
    std::string bytes;
    bytes.reserve(mesh.sigma.size() * 6 * sizeof(double));
    for (const auto& s : mesh.sigma) {
        bytes.append(reinterpret_cast<const char*>(s.row.data()), 6 * sizeof(double));
    }
    return sha256_hex(bytes);
}

} // namespace headfem
