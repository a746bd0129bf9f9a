#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "headfem/meshgen.hpp"
#include "headfem/types.hpp"

namespace headfem {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& file);

std::string read_file(const std::filesystem::path& file);
/// Writes via a temporary file in the same directory, then renames.
void write_file(const std::filesystem::path& file, std::string_view bytes);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

/// RFC 4180: fields containing a comma, quote, CR or LF are quoted and inner
/// quotes doubled; records end with CRLF.
class CsvWriter {
public:
    void row(const std::vector<std::string>& fields);
    const std::string& str() const { return text_; }

private:
    std::string text_;
};

std::vector<std::vector<std::string>> parse_csv(std::string_view text);

/// Reads a numeric table with one header row.
struct CsvTable {
    std::vector<std::string> header;
    Eigen::MatrixXd values;

    Eigen::Index column(const std::string& name) const;
};
CsvTable read_numeric_csv(const std::filesystem::path& file);

/// Little-endian 8-byte reals, column-major, no header.
void write_matrix_binary(const std::filesystem::path& file, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix_binary(const std::filesystem::path& file, Eigen::Index rows,
                                   Eigen::Index cols);

/// Matrix Market `coordinate real general`, 1-based entries.
std::string matrix_market(const SparseMatrix& m);

/// Mesh as four ASCII files: `<stem>.nodes` (x y z), `<stem>.tetra` (1-based),
/// `<stem>.labels` (0-based compartment), `<stem>.sigma` (six tensor entries).
std::vector<std::filesystem::path> save_mesh(const TetMesh& mesh, const std::filesystem::path& stem);
TetMesh load_mesh(const std::filesystem::path& stem);

/// Hash of the element conductivities (bitwise).
std::string sigma_hash(const TetMesh& mesh);

} // namespace headfem
