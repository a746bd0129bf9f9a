#include "headfem/inverse.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "headfem/error.hpp"

namespace headfem {

void HyperModel::validate() const {
    if (!(theta0 > 0.0) || !std::isfinite(theta0)) {
        throw ParameterError("theta0 must be positive");
    }
    if (family == HyperFamily::Gamma && !(eta() >= 0.0)) {
        throw ParameterError("gamma hypermodel requires beta >= 1.5");
    }
    if (family == HyperFamily::InverseGamma && !(beta > 0.0)) {
        throw ParameterError("inverse gamma hypermodel requires beta > 0");
    }
}

double HyperModel::update(double x) const {
    if (family == HyperFamily::Gamma) {
        const double e = eta();
        return 0.5 * theta0 * (e + std::sqrt(e * e + 2.0 * x * x / theta0));
    }
    return (theta0 + 0.5 * x * x) / kappa();
}

Eigen::VectorXd HyperModel::update(const Eigen::VectorXd& x) const {
    Eigen::VectorXd out(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        out[i] = update(x[i]);
    }
    return out;
}

IasState IasState::initial(Eigen::Index n, const HyperModel& hyper, double nu) {
    IasState s;
    s.x = Eigen::VectorXd::Zero(n);
    s.theta = Eigen::VectorXd::Constant(n, hyper.theta0);
    s.nu = nu;
    return s;
}

void IasState::validate() const {
    if (!(nu > 0.0) || !std::isfinite(nu)) {
        throw ParameterError("likelihood standard deviation nu must be positive");
    }
    if (theta.size() != x.size()) {
        throw ParameterError("theta and x have different lengths");
    }
    // theta may reach 0 exactly under the gamma update with eta = 0 and x = 0
    if (!(theta.array() >= 0.0).all() || !theta.allFinite()) {
        throw ParameterError("theta must be nonnegative and finite");
    }
}

Eigen::VectorXd ias_estimate(const Eigen::MatrixXd& lf, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& theta, double nu) {
    if (!(nu > 0.0)) {
        throw ParameterError("likelihood standard deviation nu must be positive");
    }
    if (lf.rows() != y.size() || lf.cols() != theta.size()) {
        throw DataError("lead field is " + std::to_string(lf.rows()) + "x" +
                        std::to_string(lf.cols()) + " but data has " + std::to_string(y.size()) +
                        " entries and theta " + std::to_string(theta.size()));
    }
    const Eigen::VectorXd sqrt_theta = theta.cwiseSqrt();
    const Eigen::MatrixXd lk = lf * sqrt_theta.asDiagonal();
    Eigen::MatrixXd k = Eigen::MatrixXd::Identity(lf.rows(), lf.rows()) * (nu * nu);
    k.selfadjointView<Eigen::Lower>().rankUpdate(lk);
    const Eigen::LLT<Eigen::MatrixXd, Eigen::Lower> llt(k);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("IAS system L D L^T + nu^2 I is not positive definite");
    }
    const Eigen::VectorXd w = llt.solve(y);
    Eigen::VectorXd x = sqrt_theta.cwiseProduct(lk.transpose() * w);
    if (!x.allFinite()) {
        throw NumericalError("IAS estimate is not finite");
    }
    return x;
}

IasState ias_step(const Eigen::MatrixXd& lf, const Eigen::VectorXd& y, const IasState& state,
                  const HyperModel& hyper) {
    state.validate();
    IasState next;
    next.nu = state.nu;
    next.k = state.k + 1;
    next.x = ias_estimate(lf, y, state.theta, state.nu);
    next.theta = hyper.update(next.x);
    return next;
}

Reconstruction ias_run(const Eigen::MatrixXd& lf, const Eigen::VectorXd& y,
                       const HyperModel& hyper, double nu, int n_iter, Eigen::VectorXd theta) {
    hyper.validate();
    if (n_iter < 1) {
        throw ParameterError("IAS needs at least one iteration");
    }
    IasState state;
    state.x = Eigen::VectorXd::Zero(lf.cols());
    state.theta = std::move(theta);
    state.nu = nu;
    for (int i = 0; i < n_iter; ++i) {
        state = ias_step(lf, y, state, hyper);
    }
    return {state.x, state.theta, state.k};
}

Reconstruction ias_map(const Eigen::MatrixXd& lf, const Eigen::VectorXd& y,
                       const HyperModel& hyper, double nu, int n_iter,
                       std::optional<std::span<const int>> roi) {
    if (!roi) {
        return ias_run(lf, y, hyper, nu, n_iter,
                       Eigen::VectorXd::Constant(lf.cols(), hyper.theta0));
    }
    if (roi->empty()) {
        throw RoiError("region of interest contains no DOFs");
    }
    Eigen::MatrixXd sub(lf.rows(), static_cast<Eigen::Index>(roi->size()));
    for (std::size_t i = 0; i < roi->size(); ++i) {
        const int c = (*roi)[i];
        if (c < 0 || c >= lf.cols()) {
            throw RoiError("ROI column " + std::to_string(c) + " out of range");
        }
        sub.col(static_cast<Eigen::Index>(i)) = lf.col(c);
    }
    const auto inner = ias_run(sub, y, hyper, nu, n_iter,
                               Eigen::VectorXd::Constant(sub.cols(), hyper.theta0));
    Reconstruction out;
    out.iterations = inner.iterations;
    out.x = Eigen::VectorXd::Zero(lf.cols());
    out.theta = Eigen::VectorXd::Zero(lf.cols());
    for (std::size_t i = 0; i < roi->size(); ++i) {
        out.x[(*roi)[i]] = inner.x[static_cast<Eigen::Index>(i)];
        out.theta[(*roi)[i]] = inner.theta[static_cast<Eigen::Index>(i)];
    }
    return out;
}

std::vector<int> roi_columns(const DofLayout& layout, const Vec3& center, double radius) {
    std::vector<int> cols;
    for (std::size_t j = 0; j < layout.columns(); ++j) {
        if ((layout.positions[layout.column_source[j]] - center).norm() <= radius) {
            cols.push_back(static_cast<int>(j));
        }
    }
    return cols;
}

std::vector<int> nearest_assignment(std::span<const Vec3> points, std::span<const Vec3> centers) {
    std::vector<int> out(points.size(), -1);
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(points.size()); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < centers.size(); ++c) {
            const double d = (points[i] - centers[c]).squaredNorm();
            if (d < best) {
                best = d;
                out[i] = static_cast<int>(c);
            }
        }
    }
    return out;
}

Decomposition random_decomposition(std::span<const Vec3> points, std::size_t subsets, Rng& rng,
                                   int max_retries) {
    if (subsets == 0 || subsets > points.size()) {
        throw ParameterError("subset count must be in [1, " + std::to_string(points.size()) +
                             "], got " + std::to_string(subsets));
    }
    Decomposition dec;
    if (subsets == points.size()) {
        // each point is its own subset, also when positions coincide
        dec.centers.assign(points.begin(), points.end());
        dec.assignment.resize(points.size());
        for (std::size_t i = 0; i < points.size(); ++i) {
            dec.assignment[i] = static_cast<int>(i);
        }
    } else {
        BoundingBox box;
        for (const auto& p : points) {
            box.expand(p);
        }
        auto draw = [&] {
            return Vec3(rng.uniform(box.lower.x(), box.upper.x()),
                        rng.uniform(box.lower.y(), box.upper.y()),
                        rng.uniform(box.lower.z(), box.upper.z()));
        };
        for (std::size_t s = 0; s < subsets; ++s) {
            dec.centers.push_back(draw());
        }
        dec.assignment = nearest_assignment(points, dec.centers);
        for (int attempt = 0;; ++attempt) {
            std::vector<int> count(subsets, 0);
            for (int a : dec.assignment) {
                ++count[a];
            }
            bool empty = false;
            for (std::size_t s = 0; s < subsets; ++s) {
                if (count[s] == 0) {
                    empty = true;
                    dec.centers[s] = draw();
                }
            }
            if (!empty) {
                break;
            }
            if (attempt >= max_retries) {
                throw DecompositionError("could not populate all " + std::to_string(subsets) +
                                         " subsets after " + std::to_string(max_retries) +
                                         " redraws");
            }
            dec.assignment = nearest_assignment(points, dec.centers);
        }
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (dec.assignment[i] < 0) {
            throw DecompositionError("point " + std::to_string(i) + " was not assigned");
        }
    }
    return dec;
}

Eigen::MatrixXd aggregate_columns(const Eigen::MatrixXd& lf, const Decomposition& dec,
                                  std::span<const int> column_source,
                                  std::span<const int> column_component, std::size_t components) {
    Eigen::MatrixXd out =
        Eigen::MatrixXd::Zero(lf.rows(), static_cast<Eigen::Index>(dec.subset_count() * components));
    for (Eigen::Index j = 0; j < lf.cols(); ++j) {
        const auto s = static_cast<std::size_t>(dec.assignment[column_source[j]]);
        out.col(static_cast<Eigen::Index>(s * components + column_component[j])) += lf.col(j);
    }
    return out;
}

Eigen::VectorXd mean_estimate(std::span<const Eigen::VectorXd> estimates) {
    if (estimates.empty()) {
        throw ParameterError("cannot average an empty set of estimates");
    }
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(estimates.front().size());
    for (const auto& e : estimates) {
        if (e.size() != sum.size()) {
            throw DataError("estimates have different lengths");
        }
        sum += e;
    }
    return sum / static_cast<double>(estimates.size());
}

namespace {

struct ComponentIndex {
    std::vector<int> component;
    std::size_t components = 0;
};

ComponentIndex component_index(const DofLayout& layout) {
    ComponentIndex ci;
    std::vector<int> seen(layout.positions.size(), 0);
    for (int s : layout.column_source) {
        ci.component.push_back(seen[s]++);
    }
    for (int c : seen) {
        if (ci.components != 0 && static_cast<std::size_t>(c) != ci.components) {
            throw ParameterError("multiresolution inversion needs the same column count per source");
        }
        ci.components = static_cast<std::size_t>(c);
    }
    return ci;
}

} // namespace

MultiresResult multires_ias(const Eigen::MatrixXd& lf, const Eigen::VectorXd& y,
                            const DofLayout& layout, const HyperModel& hyper, double nu,
                            int n_iter, std::size_t subsets, std::size_t decompositions,
                            std::uint64_t seed) {
    hyper.validate();
    if (static_cast<std::size_t>(lf.cols()) != layout.columns()) {
        throw DataError("lead field columns do not match the DOF layout");
    }
    if (decompositions == 0) {
        throw ParameterError("at least one decomposition is required");
    }
    const ComponentIndex ci = component_index(layout);
    Rng rng(seed);
    MultiresResult out;
    std::vector<Eigen::VectorXd> expanded_estimates;
    Eigen::VectorXd previous;
    for (std::size_t d = 0; d < decompositions; ++d) {
        Decomposition dec = random_decomposition(layout.positions, subsets, rng);
        const Eigen::MatrixXd coarse =
            aggregate_columns(lf, dec, layout.column_source, ci.component, ci.components);
        Eigen::VectorXd theta = Eigen::VectorXd::Constant(coarse.cols(), hyper.theta0);
        if (d > 0) {
            Eigen::VectorXd mean = Eigen::VectorXd::Zero(coarse.cols());
            Eigen::VectorXd count = Eigen::VectorXd::Zero(coarse.cols());
            for (Eigen::Index j = 0; j < lf.cols(); ++j) {
                const auto c = dec.assignment[layout.column_source[j]] *
                                   static_cast<Eigen::Index>(ci.components) + ci.component[j];
                mean[c] += previous[j];
                count[c] += 1.0;
            }
            theta = hyper.update(Eigen::VectorXd(mean.cwiseQuotient(count)));
        }
        const Reconstruction rec = ias_run(coarse, y, hyper, nu, n_iter, std::move(theta));
        Eigen::VectorXd expanded(lf.cols());
        for (Eigen::Index j = 0; j < lf.cols(); ++j) {
            expanded[j] = rec.x[dec.assignment[layout.column_source[j]] *
                                    static_cast<Eigen::Index>(ci.components) + ci.component[j]];
        }
        expanded_estimates.push_back(expanded);
        previous = std::move(expanded);
        out.decompositions.push_back(std::move(dec));
    }
    out.averaged = mean_estimate(expanded_estimates);
    out.unaveraged = previous;
    return out;
}

std::vector<Vec3> source_moments(const Eigen::VectorXd& x, const DofLayout& layout) {
    std::vector<Vec3> m(layout.positions.size(), Vec3::Zero());
    for (std::size_t j = 0; j < layout.columns(); ++j) {
        m[layout.column_source[j]] += x[static_cast<Eigen::Index>(j)] * layout.column_direction[j];
    }
    return m;
}

Eigen::VectorXd source_amplitudes(const Eigen::VectorXd& x, const DofLayout& layout) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.positions.size()));
    if (layout.scalar()) {
        for (std::size_t j = 0; j < layout.columns(); ++j) {
            a[layout.column_source[j]] += std::abs(x[static_cast<Eigen::Index>(j)]);
        }
        return a;
    }
    const auto m = source_moments(x, layout);
    for (std::size_t s = 0; s < m.size(); ++s) {
        a[static_cast<Eigen::Index>(s)] = m[s].norm();
    }
    return a;
}

RoiMetrics roi_metrics(const Eigen::VectorXd& x, const DofLayout& layout, const Vec3& roi_center,
                       double roi_radius, const Vec3& true_position,
                       const Vec3& true_orientation) {
    if (static_cast<std::size_t>(x.size()) != layout.columns()) {
        throw DataError("reconstruction length does not match the DOF layout");
    }
    const Eigen::VectorXd amp = source_amplitudes(x, layout);
    const bool scalar = layout.scalar();
    const auto moments = scalar ? std::vector<Vec3>() : source_moments(x, layout);
    RoiMetrics r;
    Vec3 weighted = Vec3::Zero();
    double total = 0.0;
    Vec3 orient = Vec3::Zero();
    for (std::size_t s = 0; s < layout.positions.size(); ++s) {
        if ((layout.positions[s] - roi_center).norm() > roi_radius) {
            continue;
        }
        ++r.roi_size;
        weighted += amp[static_cast<Eigen::Index>(s)] * layout.positions[s];
        total += amp[static_cast<Eigen::Index>(s)];
        if (!scalar) {
            orient += moments[s];
        }
    }
    if (r.roi_size == 0) {
        throw RoiError("region of interest contains no DOFs");
    }
    if (!(total > 0.0)) {
        throw UndefinedMetricError("all reconstructed amplitudes in the ROI are zero");
    }
    r.center_of_mass = weighted / total;
    r.position_error_mm = 1000.0 * (r.center_of_mass - true_position).norm();
    r.orientation = orient;
    if (scalar || orient.norm() == 0.0 || true_orientation.norm() == 0.0) {
        r.angle_error_deg = std::numeric_limits<double>::quiet_NaN();
    } else {
        const double c = std::clamp(orient.normalized().dot(true_orientation.normalized()), -1.0, 1.0);
        r.angle_error_deg = std::acos(c) * 180.0 / std::numbers::pi;
    }
    return r;
}

NormalizedProblem normalize_problem(const Eigen::MatrixXd& lf, const Eigen::VectorXd& y) {
    NormalizedProblem p;
    p.lf_scale = lf.size() ? lf.cwiseAbs().maxCoeff() : 0.0;
    p.data_scale = y.size() ? y.cwiseAbs().maxCoeff() : 0.0;
    if (!(p.lf_scale > 0.0)) {
        throw NumericalError("lead field is identically zero");
    }
    if (!(p.data_scale > 0.0)) {
        p.data_scale = 1.0;
    }
    p.lf = lf / p.lf_scale;
    p.y = y / p.data_scale;
    return p;
}

} // namespace headfem
