#include "headfem/leadfield.hpp"

#include <algorithm>
#include <cmath>

#include "headfem/error.hpp"
#include "headfem/rng.hpp"

namespace headfem {

std::vector<Vec3> DofLayout::column_positions() const {
    std::vector<Vec3> out;
    out.reserve(column_source.size());
    for (int s : column_source) {
        out.push_back(positions[s]);
    }
    return out;
}

bool DofLayout::scalar() const {
    return std::all_of(column_direction.begin(), column_direction.end(),
                       [](const Vec3& d) { return d.isZero(0.0); });
}

DofLayout DofLayout::scalar_dofs(std::vector<Vec3> positions) {
    DofLayout layout;
    layout.positions = std::move(positions);
    for (std::size_t i = 0; i < layout.positions.size(); ++i) {
        layout.column_source.push_back(static_cast<int>(i));
        layout.column_direction.push_back(Vec3::Zero());
    }
    return layout;
}

DofLayout source_layout(const TetMesh& mesh, const SourceSpace& sources) {
    DofLayout layout;
    layout.positions = sources.positions;
    std::vector<std::array<int, 4>> neighbors;
    if (sources.mode == SourceMode::Whitney) {
        neighbors = element_neighbors(mesh);
    }
    for (std::size_t s = 0; s < sources.size(); ++s) {
        switch (sources.mode) {
        case SourceMode::Cartesian:
            for (int a = 0; a < 3; ++a) {
                layout.column_source.push_back(static_cast<int>(s));
                layout.column_direction.push_back(Vec3::Unit(a));
            }
            break;
        case SourceMode::Constrained:
            layout.column_source.push_back(static_cast<int>(s));
            layout.column_direction.push_back(sources.orientations[s]);
            break;
        case SourceMode::Whitney: {
            const auto m = face_moments(mesh, neighbors, sources.elements[s]);
            for (int k = 0; k < 4; ++k) {
                layout.column_source.push_back(static_cast<int>(s));
                layout.column_direction.push_back(m[k]);
            }
            break;
        }
        }
    }
    return layout;
}

CemForwardModel::CemForwardModel(const CemSystem& sys, const PcgConfig& cfg) {
    if (sys.electrode_count() == 0) {
        throw ElectrodeError("system has no electrodes");
    }
    transfer_ = transfer_matrix(sys.A, sys.B, cfg);
    Eigen::MatrixXd btt = (sys.B.transpose() * transfer_).eval();
    schur_ = -btt;
    schur_.diagonal() += sys.C;
    schur_ = 0.5 * (schur_ + schur_.transpose()).eval();
    lu_.compute(schur_);
    if (!lu_.isInvertible()) {
        throw SingularSystemError("electrode Schur complement C - B^T A^{-1} B is singular");
    }
}

Eigen::MatrixXd CemForwardModel::solve_schur(const Eigen::MatrixXd& rhs) const {
    return lu_.solve(rhs);
}

LeadField eeg_leadfield(const CemSystem& sys, const DofLayout& layout, const PcgConfig& cfg) {
    const CemForwardModel forward(sys, cfg);
    return eeg_leadfield(sys, forward, layout);
}

LeadField eeg_leadfield(const CemSystem& sys, const CemForwardModel& forward,
                        const DofLayout& layout) {
    if (sys.G.cols() == 0) {
        throw ConfigError("EEG lead field requires a source load matrix");
    }
    if (static_cast<std::size_t>(sys.G.cols()) != layout.columns()) {
        throw ConfigError("source layout has " + std::to_string(layout.columns()) +
                          " columns but the load matrix has " + std::to_string(sys.G.cols()));
    }
    // T^T G computed as (G^T T)^T to keep the sparse operand on the left
    const Eigen::MatrixXd gt = sys.G.transpose() * forward.transfer();
    const Eigen::MatrixXd tg = gt.transpose();
    LeadField lf;
    lf.modality = Modality::Eeg;
    lf.layout = layout;
    lf.matrix = -(sys.R * forward.solve_schur(tg));
    return lf;
}

void check_current_patterns(const Eigen::MatrixXd& currents) {
    for (Eigen::Index p = 0; p < currents.cols(); ++p) {
        const double sum = currents.col(p).sum();
        if (std::abs(sum) > 1e-12 * std::max(currents.col(p).norm(), 1e-300) && sum != 0.0) {
            throw CurrentPatternError("current pattern " + std::to_string(p + 1) +
                                      " does not sum to zero (sum " + std::to_string(sum) + ")");
        }
    }
}

Eigen::MatrixXd eit_forward(const CemSystem& sys, const Eigen::MatrixXd& currents,
                            const PcgConfig& cfg) {
    check_current_patterns(currents);
    const CemForwardModel forward(sys, cfg);
    return eit_forward(sys, forward, currents);
}

Eigen::MatrixXd eit_forward(const CemSystem& sys, const CemForwardModel& forward,
                            const Eigen::MatrixXd& currents) {
    if (static_cast<std::size_t>(currents.rows()) != sys.electrode_count()) {
        throw CurrentPatternError("current patterns have " + std::to_string(currents.rows()) +
                                  " rows for " + std::to_string(sys.electrode_count()) +
                                  " electrodes");
    }
    check_current_patterns(currents);
    return sys.R * forward.solve_schur(currents);
}

Eigen::MatrixXd adjacent_patterns(std::size_t electrodes, double amplitude) {
    if (electrodes < 2) {
        throw CurrentPatternError("current injection needs at least two electrodes");
    }
    const auto l = static_cast<Eigen::Index>(electrodes);
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(l, l - 1);
    for (Eigen::Index k = 0; k + 1 < l; ++k) {
        p(k, k) = amplitude;
        p(k + 1, k) = -amplitude;
    }
    return p;
}

Eigen::VectorXd stack_patterns(const Eigen::MatrixXd& voltages) {
    return voltages.reshaped();
}

void EitDofMap::validate(const TetMesh& mesh) const {
    if (centers.size() != elements.size()) {
        throw DofError("DOF map has mismatched center and element lists");
    }
    std::vector<char> seen(mesh.element_count(), 0);
    for (std::size_t m = 0; m < elements.size(); ++m) {
        if (elements[m].empty()) {
            throw DofError("DOF " + std::to_string(m + 1) + " has an empty element set");
        }
        for (int e : elements[m]) {
            if (e < 0 || static_cast<std::size_t>(e) >= mesh.element_count()) {
                throw DofError("DOF " + std::to_string(m + 1) + " references element " +
                               std::to_string(e));
            }
            if (seen[e]++) {
                throw DofError("element " + std::to_string(e) + " belongs to two DOFs");
            }
        }
    }
}

EitDofMap build_eit_dofs(const TetMesh& mesh, std::span<const std::size_t> compartments,
                         std::size_t count, std::uint64_t seed) {
    std::vector<int> pool;
    for (std::size_t e = 0; e < mesh.element_count(); ++e) {
        if (std::find(compartments.begin(), compartments.end(),
                      static_cast<std::size_t>(mesh.labels[e])) != compartments.end()) {
            pool.push_back(static_cast<int>(e));
        }
    }
    if (count == 0 || pool.size() < count) {
        throw DofError("cannot form " + std::to_string(count) + " DOFs from " +
                       std::to_string(pool.size()) + " perturbable elements");
    }
    // partial Fisher-Yates picks distinct seed elements
    Rng rng(seed);
    std::vector<int> shuffled = pool;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(shuffled.size() - i));
        std::swap(shuffled[i], shuffled[j]);
    }
    std::vector<Vec3> seeds;
    for (std::size_t i = 0; i < count; ++i) {
        seeds.push_back(mesh.centroid(shuffled[i]));
    }
    std::vector<int> owner(pool.size());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(pool.size()); ++i) {
        const Vec3 c = mesh.centroid(pool[i]);
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            const double d = (c - seeds[s]).squaredNorm();
            if (d < best) {
                best = d;
                arg = static_cast<int>(s);
            }
        }
        owner[i] = arg;
    }
    EitDofMap map;
    map.elements.assign(count, {});
    for (std::size_t i = 0; i < pool.size(); ++i) {
        map.elements[owner[i]].push_back(pool[i]);
    }
    for (const auto& els : map.elements) {
        Vec3 c = Vec3::Zero();
        double vol = 0.0;
        for (int e : els) {
            c += mesh.volume(e) * mesh.centroid(e);
            vol += mesh.volume(e);
        }
        map.centers.push_back(vol > 0.0 ? Vec3(c / vol) : Vec3::Zero());
    }
    map.validate(mesh);
    return map;
}

TetMesh perturb_conductivity(const TetMesh& mesh, std::span<const int> elements, double delta) {
    TetMesh out = mesh;
    for (int e : elements) {
        out.sigma[e] = out.sigma[e].plus_isotropic(delta);
    }
    return out;
}

LeadField eit_leadfield(const TetMesh& mesh, const CemSystem& sys, const EitDofMap& dofs,
                        const Eigen::MatrixXd& patterns, const PcgConfig& cfg) {
    dofs.validate(mesh);
    if (static_cast<std::size_t>(patterns.rows()) != sys.electrode_count()) {
        throw CurrentPatternError("pattern rows do not match the electrode count");
    }
    check_current_patterns(patterns);
    const CemForwardModel forward(sys, cfg);
    const Eigen::Index l = patterns.rows();
    const Eigen::Index n_pat = patterns.cols();

    // v = M^{-1} I and the nodal potentials z = A^{-1} B v = T v
    const Eigen::MatrixXd v = forward.solve_schur(patterns);
    const Eigen::MatrixXd z = forward.transfer() * v;
    const Eigen::MatrixXd left = -(sys.R * forward.solve_schur(
                                              Eigen::MatrixXd::Identity(l, l)));
    const Eigen::MatrixXd& t = forward.transfer();
    const Eigen::Matrix3d unit = Eigen::Matrix3d::Identity();

    LeadField lf;
    lf.modality = Modality::Eit;
    lf.patterns = patterns;
    lf.background_data = stack_patterns(sys.R * v);
    lf.layout = DofLayout::scalar_dofs(dofs.centers);
    lf.matrix.resize(l * n_pat, static_cast<Eigen::Index>(dofs.size()));

#pragma omp parallel for schedule(dynamic, 4)
    for (long long m = 0; m < static_cast<long long>(dofs.size()); ++m) {
        // q = T^T (dA/ds_m) z; the grounding row/column does not depend on sigma
        Eigen::MatrixXd q = Eigen::MatrixXd::Zero(l, n_pat);
        for (int e : dofs.elements[m]) {
            const Eigen::Matrix4d k = element_stiffness(mesh, e, unit);
            const auto& nodes = mesh.tetra[e];
            Eigen::Matrix<double, 4, Eigen::Dynamic> kz(4, n_pat);
            kz.setZero();
            for (int i = 0; i < 4; ++i) {
                if (nodes[i] == sys.ground) {
                    continue;
                }
                for (int j = 0; j < 4; ++j) {
                    if (nodes[j] == sys.ground) {
                        continue;
                    }
                    kz.row(i) += k(i, j) * z.row(nodes[j]);
                }
            }
            for (int i = 0; i < 4; ++i) {
                if (nodes[i] != sys.ground) {
                    q.noalias() += t.row(nodes[i]).transpose() * kz.row(i);
                }
            }
        }
        lf.matrix.col(m) = (left * q).reshaped();
    }
    return lf;
}

} // namespace headfem
