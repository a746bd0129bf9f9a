#pragma once

#include <array>
#include <cstdint>
#include <limits>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SparseCore>

namespace headfem {

using Vec3 = Eigen::Vector3d;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
using Triplet = Eigen::Triplet<double, int>;

using Triangle = std::array<int, 3>;
using Tetrahedron = std::array<int, 4>;

struct BoundingBox {
    Vec3 lower = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 upper = Vec3::Constant(-std::numeric_limits<double>::infinity());

    void expand(const Vec3& p) {
        lower = lower.cwiseMin(p);
        upper = upper.cwiseMax(p);
    }
    void expand(const BoundingBox& other) {
        lower = lower.cwiseMin(other.lower);
        upper = upper.cwiseMax(other.upper);
    }
    bool empty() const { return (upper.array() < lower.array()).any(); }
    bool contains(const Vec3& p, double margin = 0.0) const {
        return (p.array() >= lower.array() - margin).all() &&
               (p.array() <= upper.array() + margin).all();
    }
    Vec3 extent() const { return upper - lower; }
    double radius() const { return 0.5 * extent().norm(); }
};

/// Symmetric conductivity tensor stored as the row (s11, s22, s33, s12, s13, s23) in S/m.
struct Conductivity {
    std::array<double, 6> row{0.0, 0.0, 0.0, 0.0, 0.0, 0.0};

    static Conductivity isotropic(double s) { return {{s, s, s, 0.0, 0.0, 0.0}}; }
    static Conductivity tensor(const std::array<double, 6>& r) { return {r}; }

    bool is_isotropic() const {
        return row[3] == 0.0 && row[4] == 0.0 && row[5] == 0.0 && row[0] == row[1] &&
               row[1] == row[2];
    }
    /// Scalar value for isotropic tensors; mean of the diagonal otherwise.
    double scalar() const { return (row[0] + row[1] + row[2]) / 3.0; }

    Eigen::Matrix3d matrix() const {
        Eigen::Matrix3d m;
        m << row[0], row[3], row[4],
             row[3], row[1], row[5],
             row[4], row[5], row[2];
        return m;
    }
    Conductivity plus_isotropic(double delta) const {
        Conductivity c = *this;
        c.row[0] += delta;
        c.row[1] += delta;
        c.row[2] += delta;
        return c;
    }
    bool operator==(const Conductivity&) const = default;
};

} // namespace headfem
