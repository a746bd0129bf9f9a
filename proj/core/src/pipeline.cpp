#include "headfem/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "headfem/error.hpp"
#include "headfem/io.hpp"
#include "headfem/rng.hpp"
#include "headfem/solver.hpp"

#ifndef HEADFEM_VERSION
#define HEADFEM_VERSION "unknown"
#endif

namespace headfem {

using nlohmann::json;
namespace fs = std::filesystem;

std::string version() { return HEADFEM_VERSION; }

void apply_overrides(ProjectConfig& cfg, const RunOptions& options) {
    if (options.seed) {
        cfg.seed = *options.seed;
    }
    if (options.output) {
        cfg.output = *options.output;
    }
    if (options.threads > 0) {
        set_thread_count(options.threads);
    }
}

namespace {

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json& j) { return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()); }

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

const char* family_name(HyperFamily f) { return f == HyperFamily::Gamma ? "G" : "IG"; }

const char* modality_name(Modality m) { return m == Modality::Eeg ? "eeg" : "eit"; }

std::string dump(const json& j) { return j.dump(2) + "\n"; }

/// Manifest with the embedded configuration (replayable via --config), seeds,
/// versions and the hashes of every output written by the command.
fs::path write_manifest(const ProjectConfig& cfg, const std::string& command, json body,
                        const std::vector<fs::path>& outputs) {
    json m;
    m["command"] = command;
    m["versions"] = {{"headfem", version()},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                   std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)}};
    m["config"] = {{"text", cfg.canonical_text},
                   {"base_dir", cfg.base_dir.string()},
                   {"seed", cfg.seed},
                   {"sha256", cfg.hash()}};
    json files = json::object();
    for (const auto& f : outputs) {
        files[f.filename().string()] = sha256_file(f);
    }
    m["outputs"] = files;
    for (auto& [k, v] : body.items()) {
        m[k] = v;
    }
    const auto path = cfg.output / (command + "_manifest.json");
    write_file(path, dump(m));
    return path;
}

std::vector<std::size_t> eit_compartments(const ProjectConfig& cfg, const Segmentation& seg) {
    if (cfg.eit.compartments.empty()) {
        auto act = seg.active_compartments();
        if (act.empty()) {
            throw ConfigError("EIT DOFs need [eit] compartments or an active compartment");
        }
        return act;
    }
    std::vector<std::size_t> out;
    for (const auto& name : cfg.eit.compartments) {
        bool found = false;
        for (std::size_t i = 0; i < seg.size(); ++i) {
            if (seg[i].name == name) {
                out.push_back(i);
                found = true;
            }
        }
        if (!found) {
            throw ConfigError("[eit] compartments: unknown compartment '" + name + "'");
        }
    }
    return out;
}

struct ForwardSetup {
    HeadModel model;
    ElectrodeSet electrodes;
    SourceSpace sources;
    EitDofMap dofs;
    CemSystem sys;
};

ForwardSetup forward_setup(const ProjectConfig& cfg) {
    ForwardSetup f{build_head_model(cfg), {}, {}, {}, {}};
    f.electrodes = build_electrodes(cfg, f.model.mesh, f.model.segmentation);
    if (cfg.forward.modality == Modality::Eeg) {
        if (cfg.sources.count == 0) {
            throw ConfigError("EEG lead field needs [sources] count > 0");
        }
        f.sources = place_sources(f.model.mesh, f.model.segmentation, cfg.sources.count,
                                  cfg.sources.mode,
                                  cfg.stream_seed(streams::sources, cfg.sources.seed));
        f.sys = assemble_cem(f.model.mesh, f.electrodes, &f.sources, cfg.forward.scaling);
    } else {
        if (cfg.eit.dofs == 0) {
            throw ConfigError("EIT lead field needs [eit] dofs > 0");
        }
        const auto comps = eit_compartments(cfg, f.model.segmentation);
        f.dofs = build_eit_dofs(f.model.mesh, comps, cfg.eit.dofs,
                                cfg.stream_seed(streams::eit_dofs, cfg.eit.seed));
        f.sys = assemble_cem(f.model.mesh, f.electrodes, nullptr, cfg.forward.scaling);
    }
    return f;
}

json layout_json(const DofLayout& layout) {
    json pos = json::array();
    for (const auto& p : layout.positions) {
        pos.push_back(vec_json(p));
    }
    json dirs = json::array();
    for (const auto& d : layout.column_direction) {
        dirs.push_back(vec_json(d));
    }
    return {{"positions", pos}, {"column_source", layout.column_source}, {"column_direction", dirs}};
}

DofLayout layout_from(const json& j) {
    DofLayout layout;
    for (const auto& p : j.at("positions")) {
        layout.positions.push_back(vec_from(p));
    }
    layout.column_source = j.at("column_source").get<std::vector<int>>();
    for (const auto& d : j.at("column_direction")) {
        layout.column_direction.push_back(vec_from(d));
    }
    if (layout.column_source.size() != layout.column_direction.size()) {
        throw FormatError("sidecar column_source and column_direction differ in length");
    }
    for (int s : layout.column_source) {
        if (s < 0 || static_cast<std::size_t>(s) >= layout.positions.size()) {
            throw FormatError("sidecar column_source entry " + std::to_string(s) + " out of range");
        }
    }
    return layout;
}

LeadField load_leadfield_sidecar(const fs::path& sidecar) {
    json j;
    try {
        j = json::parse(read_file(sidecar));
        LeadField lf;
        const auto rows = j.at("rows").get<Eigen::Index>();
        const auto cols = j.at("cols").get<Eigen::Index>();
        lf.modality = j.at("modality").get<std::string>() == "eit" ? Modality::Eit : Modality::Eeg;
        lf.layout = layout_from(j.at("layout"));
        if (static_cast<Eigen::Index>(lf.layout.columns()) != cols) {
            throw FormatError(sidecar.string() + ": layout has " +
                              std::to_string(lf.layout.columns()) + " columns, matrix " +
                              std::to_string(cols));
        }
        lf.matrix = read_matrix_binary(sidecar.parent_path() / j.at("file").get<std::string>(),
                                       rows, cols);
        if (lf.modality == Modality::Eit) {
            const auto pat = j.at("patterns").get<std::vector<std::vector<double>>>();
            const auto bg = j.at("background").get<std::vector<double>>();
            if (pat.empty()) {
                throw FormatError(sidecar.string() + ": EIT sidecar without current patterns");
            }
            lf.patterns.resize(static_cast<Eigen::Index>(pat.front().size()),
                               static_cast<Eigen::Index>(pat.size()));
            for (std::size_t p = 0; p < pat.size(); ++p) {
                for (std::size_t l = 0; l < pat[p].size(); ++l) {
                    lf.patterns(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(p)) = pat[p][l];
                }
            }
            lf.background_data = Eigen::Map<const Eigen::VectorXd>(bg.data(), static_cast<Eigen::Index>(bg.size()));
            if (lf.background_data.size() != rows) {
                throw FormatError(sidecar.string() + ": background length does not match rows");
            }
        }
        return lf;
    } catch (const json::exception& e) {
        throw FormatError(sidecar.string() + ": " + e.what());
    }
}

/// Lead field of the current model: reused from the run directory when its
/// model hash matches, recomputed otherwise.
LeadField obtain_leadfield(const ProjectConfig& cfg) {
    const auto sidecar = cfg.output / "leadfield.json";
    if (fs::exists(sidecar)) {
        try {
            const json j = json::parse(read_file(sidecar));
            if (j.value("model_sha256", "") == cfg.model_hash()) {
                return load_leadfield_sidecar(sidecar);
            }
        } catch (const json::exception&) {
        }
    }
    return run_leadfield(cfg).lf;
}

Eigen::VectorXd read_data_csv(const fs::path& file) {
    const auto t = read_numeric_csv(file);
    if (t.values.cols() < 2 || t.header.front() != "electrode") {
        throw FormatError(file.string() + ": expected an 'electrode' column and data columns");
    }
    const Eigen::MatrixXd data = t.values.rightCols(t.values.cols() - 1);
    return data.reshaped();
}

fs::path write_data_csv(const fs::path& file, const Eigen::VectorXd& y, Eigen::Index electrodes,
                        const std::string& column_prefix) {
    if (electrodes <= 0 || y.size() % electrodes != 0) {
        throw DataError("data length is not a multiple of the electrode count");
    }
    const Eigen::Index cols = y.size() / electrodes;
    CsvWriter csv;
    std::vector<std::string> header{"electrode"};
    for (Eigen::Index c = 0; c < cols; ++c) {
        header.push_back(column_prefix + std::to_string(c + 1));
    }
    csv.row(header);
    for (Eigen::Index l = 0; l < electrodes; ++l) {
        std::vector<std::string> row{std::to_string(l + 1)};
        for (Eigen::Index c = 0; c < cols; ++c) {
            row.push_back(format_double(y[c * electrodes + l]));
        }
        csv.row(row);
    }
    write_file(file, csv.str());
    return file;
}

fs::path write_reconstruction(const fs::path& file, const Eigen::VectorXd& x,
                              const DofLayout& layout) {
    CsvWriter csv;
    const bool scalar = layout.scalar();
    if (scalar) {
        csv.row({"dof_id", "x", "y", "z", "value", "amplitude"});
    } else {
        csv.row({"dof_id", "x", "y", "z", "mx", "my", "mz", "amplitude"});
    }
    Eigen::VectorXd value = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.positions.size()));
    if (scalar) {
        for (std::size_t j = 0; j < layout.columns(); ++j) {
            value[layout.column_source[j]] += x[static_cast<Eigen::Index>(j)];
        }
    }
    const auto moments = scalar ? std::vector<Vec3>() : source_moments(x, layout);
    const Eigen::VectorXd amp = source_amplitudes(x, layout);
    for (std::size_t s = 0; s < layout.positions.size(); ++s) {
        const auto& p = layout.positions[s];
        std::vector<std::string> row{std::to_string(s), format_double(p.x()), format_double(p.y()),
                                     format_double(p.z())};
        if (scalar) {
            row.push_back(format_double(value[static_cast<Eigen::Index>(s)]));
        } else {
            for (int a = 0; a < 3; ++a) {
                row.push_back(format_double(moments[s][a]));
            }
        }
        row.push_back(format_double(amp[static_cast<Eigen::Index>(s)]));
        csv.row(row);
    }
    write_file(file, csv.str());
    return file;
}

json metrics_json(const RoiMetrics& m) {
    return {{"position_error_mm", m.position_error_mm},
            {"angle_error_deg", finite_or_null(m.angle_error_deg)},
            {"center_of_mass", vec_json(m.center_of_mass)},
            {"orientation", vec_json(m.orientation)},
            {"roi_size", m.roi_size}};
}

double nu_for(const InverseSettings& inv, const Eigen::VectorXd& y) {
    const double scale = inv.nu_rule == NuRule::MaxAbs
                             ? y.cwiseAbs().maxCoeff()
                             : y.norm() / std::sqrt(static_cast<double>(std::max<Eigen::Index>(y.size(), 1)));
    const double nu = inv.nu * scale;
    if (!(nu > 0.0)) {
        throw DataError("data vector is identically zero; cannot set the likelihood deviation");
    }
    return nu;
}

json noise_json(const NoiseSpec& n, double std) {
    return {{"mode", n.mode == NoiseMode::Relative ? "relative" : "snr-db"},
            {"level", n.level},
            {"seed", n.seed},
            {"standard_deviation", std}};
}

} // namespace

HeadModel build_head_model(const ProjectConfig& cfg) {
    HeadModel m{build_segmentation(cfg), {}};
    spdlog::info("generating mesh h={} over {} compartments", cfg.mesh.h, m.segmentation.size());
    m.mesh = generate_mesh(m.segmentation, cfg.mesh.h);
    if (cfg.mesh.smoothing_iterations > 0) {
        m.mesh = smooth_mesh(m.mesh, cfg.mesh.smoothing_iterations, cfg.mesh.smoothing_step);
    }
    m.mesh.validate(m.segmentation.size());
    spdlog::info("mesh: {} nodes, {} elements", m.mesh.node_count(), m.mesh.element_count());
    return m;
}

MeshRun run_mesh(const ProjectConfig& cfg) {
    MeshRun run{build_head_model(cfg), {}};
    auto files = save_mesh(run.model.mesh, cfg.output / "mesh");
    std::vector<std::size_t> per_label(run.model.segmentation.size(), 0);
    for (int l : run.model.mesh.labels) {
        ++per_label[static_cast<std::size_t>(l)];
    }
    json comps = json::array();
    for (std::size_t i = 0; i < per_label.size(); ++i) {
        comps.push_back({{"name", run.model.segmentation[i].name}, {"elements", per_label[i]}});
    }
    run.manifest = write_manifest(cfg, "mesh",
                                  {{"nodes", run.model.mesh.node_count()},
                                   {"elements", run.model.mesh.element_count()},
                                   {"compartments", comps},
                                   {"sigma_sha256", sigma_hash(run.model.mesh)}},
                                  files);
    return run;
}

LeadFieldRun run_leadfield(const ProjectConfig& cfg) {
    auto f = forward_setup(cfg);
    LeadFieldRun run;
    json extra;
    spdlog::info("computing {} lead field: {} electrodes", modality_name(cfg.forward.modality),
                 f.electrodes.size());
    if (cfg.forward.modality == Modality::Eeg) {
        run.lf = eeg_leadfield(f.sys, source_layout(f.model.mesh, f.sources), cfg.forward.pcg);
    } else {
        const auto patterns = adjacent_patterns(f.electrodes.size(), cfg.eit.amplitude);
        run.lf = eit_leadfield(f.model.mesh, f.sys, f.dofs, patterns, cfg.forward.pcg);
    }
    std::vector<fs::path> outputs;
    run.matrix_file = cfg.output / "leadfield.bin";
    write_matrix_binary(run.matrix_file, run.lf.matrix);
    outputs.push_back(run.matrix_file);

    json side;
    side["file"] = "leadfield.bin";
    side["file_sha256"] = sha256_file(run.matrix_file);
    side["rows"] = run.lf.matrix.rows();
    side["cols"] = run.lf.matrix.cols();
    side["dtype"] = "float64";
    side["byte_order"] = "little";
    side["order"] = "column-major";
    side["modality"] = modality_name(run.lf.modality);
    side["electrodes"] = f.electrodes.size();
    side["layout"] = layout_json(run.lf.layout);
    side["sigma_sha256"] = sigma_hash(f.model.mesh);
    side["model_sha256"] = cfg.model_hash();
    side["electrode_scaling"] =
        cfg.forward.scaling == ElectrodeScaling::WeakForm ? "weak-form" : "block-entries";
    if (run.lf.modality == Modality::Eit) {
        json pat = json::array();
        for (Eigen::Index p = 0; p < run.lf.patterns.cols(); ++p) {
            pat.push_back(std::vector<double>(run.lf.patterns.col(p).data(),
                                              run.lf.patterns.col(p).data() + run.lf.patterns.rows()));
        }
        side["patterns"] = pat;
        side["background"] = std::vector<double>(run.lf.background_data.data(),
                                                 run.lf.background_data.data() +
                                                     run.lf.background_data.size());
        json dof_sets = json::array();
        for (const auto& els : f.dofs.elements) {
            dof_sets.push_back(els);
        }
        side["dof_elements"] = dof_sets;
    } else {
        side["source_mode"] = f.sources.mode == SourceMode::Cartesian     ? "cartesian"
                              : f.sources.mode == SourceMode::Constrained ? "constrained"
                                                                          : "whitney";
    }
    run.sidecar = cfg.output / "leadfield.json";
    write_file(run.sidecar, dump(side));
    outputs.push_back(run.sidecar);

    if (cfg.forward.export_system) {
        for (const auto& [name, m] : {std::pair<std::string, const SparseMatrix*>{"A", &f.sys.A},
                                      {"B", &f.sys.B},
                                      {"G", &f.sys.G}}) {
            if (m->size() == 0) {
                continue;
            }
            const auto file = cfg.output / ("system_" + name + ".mtx");
            write_file(file, matrix_market(*m));
            outputs.push_back(file);
        }
    }
    run.manifest = write_manifest(cfg, "leadfield",
                                  {{"rows", run.lf.matrix.rows()},
                                   {"cols", run.lf.matrix.cols()},
                                   {"modality", modality_name(run.lf.modality)},
                                   {"ground_node", f.sys.ground},
                                   {"seeds",
                                    {{"sources", cfg.stream_seed(streams::sources, cfg.sources.seed)},
                                     {"eit_dofs", cfg.stream_seed(streams::eit_dofs, cfg.eit.seed)}}}},
                                  outputs);
    return run;
}

LeadField load_leadfield(const fs::path& dir) { return load_leadfield_sidecar(dir / "leadfield.json"); }

SimulateRun run_simulate(const ProjectConfig& cfg) {
    SimulateRun run;
    NoiseSpec noise{cfg.noise.mode, cfg.noise.level, cfg.stream_seed(streams::noise, cfg.noise.seed)};
    json truth;
    double noise_std = 0.0;
    Eigen::Index electrodes = 0;
    std::string prefix;
    if (cfg.forward.modality == Modality::Eeg) {
        if (cfg.dipoles.empty()) {
            throw ConfigError("EEG simulation needs at least one [dipole.*] section");
        }
        const auto lf = obtain_leadfield(cfg);
        std::vector<Dipole> dipoles;
        for (const auto& d : cfg.dipoles) {
            dipoles.push_back(d.dipole);
        }
        const auto sim = simulate_eeg(lf, dipoles, noise);
        run.clean = sim.clean;
        run.noisy = sim.noisy;
        noise_std = sim.noise_std;
        electrodes = lf.matrix.rows();
        prefix = "sample_";
        truth = json::array();
        for (std::size_t i = 0; i < dipoles.size(); ++i) {
            truth.push_back({{"name", cfg.dipoles[i].name},
                             {"position", vec_json(dipoles[i].position)},
                             {"orientation", vec_json(dipoles[i].orientation)},
                             {"moment", dipoles[i].moment},
                             {"snapped_source", sim.snapped[i]},
                             {"snapped_position", vec_json(lf.layout.positions[sim.snapped[i]])}});
        }
    } else {
        if (!cfg.anomaly) {
            throw ConfigError("EIT simulation needs an [anomaly] section");
        }
        const auto model = build_head_model(cfg);
        const auto els = build_electrodes(cfg, model.mesh, model.segmentation);
        const auto patterns = adjacent_patterns(els.size(), cfg.eit.amplitude);
        const auto sim = simulate_eit(model.mesh, els, *cfg.anomaly, patterns, noise,
                                      cfg.forward.pcg, cfg.forward.scaling);
        run.clean = sim.clean;
        run.noisy = sim.noisy;
        noise_std = sim.noise_std;
        electrodes = static_cast<Eigen::Index>(els.size());
        prefix = "pattern_";
        truth = {{"center", vec_json(cfg.anomaly->center)},
                 {"diameter", cfg.anomaly->diameter},
                 {"delta", cfg.anomaly->delta},
                 {"perturbed_elements", sim.perturbed.size()}};
    }
    run.data_file = write_data_csv(cfg.output / "data.csv", run.noisy, electrodes, prefix);
    const auto clean_file = write_data_csv(cfg.output / "data_clean.csv", run.clean, electrodes, prefix);
    run.manifest = write_manifest(cfg, "simulate",
                                  {{"modality", modality_name(cfg.forward.modality)},
                                   {"truth", truth},
                                   {"noise", noise_json(noise, noise_std)},
                                   {"seeds", {{"noise", noise.seed}}}},
                                  {run.data_file, clean_file});
    return run;
}

InvertRun run_invert(const ProjectConfig& cfg) {
    const auto& inv = cfg.inverse;
    inv.hyper.validate();
    const auto lf = inv.leadfield.empty() ? obtain_leadfield(cfg) : load_leadfield_sidecar(inv.leadfield);
    Eigen::VectorXd y = read_data_csv(inv.data.empty() ? cfg.output / "data.csv" : inv.data);
    if (y.size() != lf.matrix.rows()) {
        throw DataError("data has " + std::to_string(y.size()) + " entries but the lead field has " +
                        std::to_string(lf.matrix.rows()) + " rows");
    }
    if (lf.modality == Modality::Eit) {
        y -= lf.background_data;
    }
    NormalizedProblem prob;
    if (inv.normalize) {
        prob = normalize_problem(lf.matrix, y);
    } else {
        prob.lf = lf.matrix;
        prob.y = y;
    }
    const double nu = nu_for(inv, prob.y);
    InvertRun run;
    json details;
    const std::uint64_t dec_seed = cfg.stream_seed(streams::decompositions, inv.seed);
    switch (inv.mode) {
    case InverseMode::Plain:
        run.x = ias_map(prob.lf, prob.y, inv.hyper, nu, inv.iterations).x;
        details["mode"] = "plain";
        break;
    case InverseMode::Roi: {
        std::optional<Vec3> center = inv.roi_center;
        if (!center && cfg.truth) {
            center = cfg.truth->position;
        }
        if (!center) {
            throw ConfigError("ROI inversion needs [inverse] roi_center or a [truth] section");
        }
        const auto cols = roi_columns(lf.layout, *center, inv.roi_radius);
        run.x = ias_map(prob.lf, prob.y, inv.hyper, nu, inv.iterations, std::span<const int>(cols)).x;
        details["mode"] = "roi";
        details["roi_center"] = vec_json(*center);
        details["roi_radius"] = inv.roi_radius;
        details["roi_columns"] = cols.size();
        break;
    }
    case InverseMode::Multires: {
        const std::size_t subsets = inv.subsets ? inv.subsets : lf.layout.positions.size();
        const auto res = multires_ias(prob.lf, prob.y, lf.layout, inv.hyper, nu, inv.iterations,
                                      subsets, inv.decompositions, dec_seed);
        run.x = res.averaged;
        details["mode"] = "multires";
        details["subsets"] = subsets;
        details["decompositions"] = inv.decompositions;
        const auto un = write_reconstruction(cfg.output / "reconstruction_unaveraged.csv",
                                             prob.restore(res.unaveraged), lf.layout);
        details["unaveraged"] = un.filename().string();
        break;
    }
    }
    run.x = prob.restore(run.x);
    run.x.cwiseAbs().maxCoeff(&run.argmax);
    run.reconstruction = write_reconstruction(cfg.output / "reconstruction.csv", run.x, lf.layout);
    std::vector<fs::path> outputs{run.reconstruction};
    if (inv.mode == InverseMode::Multires) {
        outputs.push_back(cfg.output / "reconstruction_unaveraged.csv");
    }
    if (cfg.truth) {
        run.metrics = roi_metrics(run.x, lf.layout, cfg.truth->position, cfg.truth->roi_radius,
                                  cfg.truth->position, cfg.truth->orientation);
        const auto mfile = cfg.output / "metrics.json";
        write_file(mfile, dump(metrics_json(*run.metrics)));
        outputs.push_back(mfile);
    }
    details["hypermodel"] = family_name(inv.hyper.family);
    details["beta"] = inv.hyper.beta;
    details["theta0"] = inv.hyper.theta0;
    details["nu"] = nu;
    details["nu_rule"] = inv.nu_rule == NuRule::MaxAbs ? "max" : "rms";
    details["nu_fraction"] = inv.nu;
    details["iterations"] = inv.iterations;
    details["normalized"] = inv.normalize;
    details["lf_scale"] = prob.lf_scale;
    details["data_scale"] = prob.data_scale;
    details["argmax_column"] = run.argmax;
    details["argmax_dof"] = lf.layout.column_source[static_cast<std::size_t>(run.argmax)];
    details["seeds"] = {{"decompositions", dec_seed}};
    run.manifest = write_manifest(cfg, "invert", details, outputs);
    spdlog::info("inversion done; largest |x| at column {}", run.argmax);
    return run;
}

RoiMetrics run_metrics(const ProjectConfig& cfg) {
    if (!cfg.truth) {
        throw ConfigError("metrics need a [truth] section");
    }
    const auto t = read_numeric_csv(cfg.output / "reconstruction.csv");
    const Eigen::Index n = t.values.rows();
    std::vector<Vec3> pos;
    for (Eigen::Index i = 0; i < n; ++i) {
        pos.emplace_back(t.values(i, t.column("x")), t.values(i, t.column("y")),
                         t.values(i, t.column("z")));
    }
    DofLayout layout;
    Eigen::VectorXd x;
    if (std::find(t.header.begin(), t.header.end(), "value") != t.header.end()) {
        layout = DofLayout::scalar_dofs(pos);
        x = t.values.col(t.column("value"));
    } else {
        layout.positions = pos;
        x.resize(3 * n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (int a = 0; a < 3; ++a) {
                layout.column_source.push_back(static_cast<int>(i));
                layout.column_direction.push_back(Vec3::Unit(a));
                x[3 * i + a] = t.values(i, t.column(std::string("m") + "xyz"[a]));
            }
        }
    }
    const auto m = roi_metrics(x, layout, cfg.truth->position, cfg.truth->roi_radius,
                               cfg.truth->position, cfg.truth->orientation);
    CsvWriter csv;
    csv.row({"position_error_mm", "angle_error_deg", "com_x", "com_y", "com_z", "roi_size"});
    csv.row({format_double(m.position_error_mm),
             std::isfinite(m.angle_error_deg) ? format_double(m.angle_error_deg) : "",
             format_double(m.center_of_mass.x()), format_double(m.center_of_mass.y()),
             format_double(m.center_of_mass.z()), std::to_string(m.roi_size)});
    const auto csv_file = cfg.output / "metrics.csv";
    write_file(csv_file, csv.str());
    const auto json_file = cfg.output / "metrics.json";
    write_file(json_file, dump(metrics_json(m)));
    write_manifest(cfg, "metrics", {{"metrics", metrics_json(m)}}, {csv_file, json_file});
    return m;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) {
        throw ParameterError("quantile of an empty sample");
    }
    std::sort(values.begin(), values.end());
    const double h = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

const CaseSummary& HypermodelExperiment::find(const std::string& label,
                                              const std::string& source) const {
    for (const auto& c : cases) {
        if (c.label == label && c.source == source) {
            return c;
        }
    }
    throw ParameterError("no experiment case " + label + "/" + source);
}

HypermodelExperiment run_eeg_hypermodel(const ProjectConfig& cfg) {
    if (cfg.forward.modality != Modality::Eeg) {
        throw ConfigError("eeg-hypermodel needs [forward] modality = eeg");
    }
    const auto& x = cfg.eeg_experiment;
    const auto lf = obtain_leadfield(cfg);
    if (lf.layout.scalar()) {
        throw ConfigError("eeg-hypermodel needs oriented sources");
    }
    struct Case {
        const char* label;
        HyperFamily family;
        double theta0;
    };
    const std::vector<Case> cases{{"i", HyperFamily::Gamma, 1e-5},
                                  {"ii", HyperFamily::InverseGamma, 1e-5},
                                  {"iii", HyperFamily::Gamma, 1e-9},
                                  {"iv", HyperFamily::InverseGamma, 1e-9}};
    struct Source {
        const char* name;
        Vec3 position;
        Vec3 orientation;
    };
    const std::vector<Source> sources{{"deep", x.deep_position, x.deep_orientation.normalized()},
                                      {"superficial", x.superficial_position,
                                       x.superficial_orientation.normalized()}};

    std::vector<Dipole> dipoles;
    for (const auto& s : sources) {
        dipoles.push_back({s.position, s.orientation, x.moment});
    }
    // union of the two ROI balls around the true locations
    std::vector<int> roi;
    for (std::size_t j = 0; j < lf.layout.columns(); ++j) {
        const Vec3& p = lf.layout.positions[lf.layout.column_source[j]];
        for (const auto& s : sources) {
            if ((p - s.position).norm() <= x.roi_radius) {
                roi.push_back(static_cast<int>(j));
                break;
            }
        }
    }
    if (roi.empty()) {
        throw RoiError("no source positions within the ROIs");
    }

    const std::uint64_t base_seed = cfg.stream_seed(streams::experiment, std::nullopt);
    // errors[case][source] -> realizations
    std::vector<std::vector<std::vector<double>>> pos_err(
        cases.size(), std::vector<std::vector<double>>(sources.size()));
    auto ang_err = pos_err;
    CsvWriter rows;
    rows.row({"case", "hypermodel", "theta0", "source", "realization", "position_error_mm",
              "angle_error_deg"});
    spdlog::info("eeg-hypermodel: {} realizations, {} ROI columns", x.realizations, roi.size());
    for (std::size_t r = 0; r < x.realizations; ++r) {
        const NoiseSpec noise{NoiseMode::Relative, x.noise_level, derive_seed(base_seed, r)};
        const auto sim = simulate_eeg(lf, dipoles, noise);
        const auto prob = normalize_problem(lf.matrix, sim.noisy);
        const double nu = x.nu * prob.y.cwiseAbs().maxCoeff();
        for (std::size_t c = 0; c < cases.size(); ++c) {
            const HyperModel hyper{cases[c].family, x.beta, cases[c].theta0};
            const auto rec = ias_map(prob.lf, prob.y, hyper, nu, x.iterations,
                                     std::span<const int>(roi));
            const Eigen::VectorXd est = prob.restore(rec.x);
            for (std::size_t s = 0; s < sources.size(); ++s) {
                double pe = std::numeric_limits<double>::quiet_NaN();
                double ae = std::numeric_limits<double>::quiet_NaN();
                try {
                    const auto m = roi_metrics(est, lf.layout, sources[s].position, x.roi_radius,
                                               sources[s].position, sources[s].orientation);
                    pe = m.position_error_mm;
                    ae = m.angle_error_deg;
                } catch (const UndefinedMetricError&) {
                    // an all-zero ROI counts as a missing estimate
                }
                pos_err[c][s].push_back(std::isfinite(pe) ? pe : std::numeric_limits<double>::infinity());
                ang_err[c][s].push_back(std::isfinite(ae) ? ae : 180.0);
                rows.row({cases[c].label, family_name(cases[c].family),
                          format_double(cases[c].theta0), sources[s].name, std::to_string(r + 1),
                          std::isfinite(pe) ? format_double(pe) : "",
                          std::isfinite(ae) ? format_double(ae) : ""});
            }
        }
    }
    HypermodelExperiment out;
    CsvWriter summary;
    summary.row({"case", "hypermodel", "theta0", "source", "position_median_mm", "position_q1_mm",
                 "position_q3_mm", "angle_median_deg", "angle_q1_deg", "angle_q3_deg"});
    for (std::size_t c = 0; c < cases.size(); ++c) {
        for (std::size_t s = 0; s < sources.size(); ++s) {
            CaseSummary cs;
            cs.label = cases[c].label;
            cs.family = cases[c].family;
            cs.theta0 = cases[c].theta0;
            cs.source = sources[s].name;
            cs.median_position_mm = quantile(pos_err[c][s], 0.5);
            cs.q1_position_mm = quantile(pos_err[c][s], 0.25);
            cs.q3_position_mm = quantile(pos_err[c][s], 0.75);
            cs.median_angle_deg = quantile(ang_err[c][s], 0.5);
            cs.q1_angle_deg = quantile(ang_err[c][s], 0.25);
            cs.q3_angle_deg = quantile(ang_err[c][s], 0.75);
            summary.row({cs.label, family_name(cs.family), format_double(cs.theta0), cs.source,
                         format_double(cs.median_position_mm), format_double(cs.q1_position_mm),
                         format_double(cs.q3_position_mm), format_double(cs.median_angle_deg),
                         format_double(cs.q1_angle_deg), format_double(cs.q3_angle_deg)});
            out.cases.push_back(cs);
        }
    }
    out.rows = cfg.output / "eeg_hypermodel_rows.csv";
    out.summary = cfg.output / "eeg_hypermodel_summary.csv";
    write_file(out.rows, rows.str());
    write_file(out.summary, summary.str());
    json src = json::array();
    for (const auto& s : sources) {
        src.push_back({{"name", s.name},
                       {"position", vec_json(s.position)},
                       {"orientation", vec_json(s.orientation)}});
    }
    out.manifest = write_manifest(cfg, "experiment_eeg-hypermodel",
                                  {{"realizations", x.realizations},
                                   {"sources", src},
                                   {"moment", x.moment},
                                   {"noise_level", x.noise_level},
                                   {"roi_radius", x.roi_radius},
                                   {"nu_fraction", x.nu},
                                   {"iterations", x.iterations},
                                   {"beta", x.beta},
                                   {"roi_columns", roi.size()},
                                   {"seeds", {{"realizations_base", base_seed}}}},
                                  {out.rows, out.summary});
    return out;
}

HemorrhageExperiment run_eit_hemorrhage(const ProjectConfig& cfg) {
    if (cfg.forward.modality != Modality::Eit) {
        throw ConfigError("eit-hemorrhage needs [forward] modality = eit");
    }
    const auto& x = cfg.eit_experiment;
    const Anomaly anomaly = cfg.anomaly ? *cfg.anomaly : Phantom::four_layer_head().anomaly;
    auto f = forward_setup(cfg);
    const auto patterns = adjacent_patterns(f.electrodes.size(), cfg.eit.amplitude);
    spdlog::info("eit-hemorrhage: {} DOFs, {} electrodes", f.dofs.size(), f.electrodes.size());
    const auto lf = eit_leadfield(f.model.mesh, f.sys, f.dofs, patterns, cfg.forward.pcg);

    const NoiseSpec noise{NoiseMode::SnrDb, x.snr_db, cfg.stream_seed(streams::noise, cfg.noise.seed)};
    const auto sim = simulate_eit(f.model.mesh, f.electrodes, anomaly, patterns, noise,
                                  cfg.forward.pcg, cfg.forward.scaling);
    const Eigen::VectorXd dy = sim.noisy - sim.background;
    const auto prob = normalize_problem(lf.matrix, dy);
    const double nu = x.nu * prob.y.cwiseAbs().maxCoeff();
    const HyperModel hyper{x.family, x.beta, x.theta0};
    const std::uint64_t dec_seed = cfg.stream_seed(streams::decompositions, cfg.inverse.seed);
    const auto res = multires_ias(prob.lf, prob.y, lf.layout, hyper, nu, x.iterations, x.subsets,
                                  x.decompositions, dec_seed);

    HemorrhageExperiment out;
    out.averaged = prob.restore(res.averaged);
    out.unaveraged = prob.restore(res.unaveraged);
    out.dofs = f.dofs.size();
    out.elements = f.model.mesh.element_count();
    const double everywhere = std::numeric_limits<double>::max();
    const auto ma = roi_metrics(out.averaged, lf.layout, anomaly.center, everywhere,
                                anomaly.center, Vec3::Zero());
    const auto mu = roi_metrics(out.unaveraged, lf.layout, anomaly.center, everywhere,
                                anomaly.center, Vec3::Zero());
    out.averaged_center = ma.center_of_mass;
    out.unaveraged_center = mu.center_of_mass;
    out.averaged_error_mm = ma.position_error_mm;
    out.unaveraged_error_mm = mu.position_error_mm;

    const auto avg_file = write_reconstruction(cfg.output / "eit_averaged.csv", out.averaged, lf.layout);
    const auto un_file =
        write_reconstruction(cfg.output / "eit_unaveraged.csv", out.unaveraged, lf.layout);
    CsvWriter summary;
    summary.row({"variant", "com_x", "com_y", "com_z", "position_error_mm"});
    for (const auto& [name, m] : {std::pair<std::string, const RoiMetrics*>{"averaged", &ma},
                                  {"unaveraged", &mu}}) {
        summary.row({name, format_double(m->center_of_mass.x()),
                     format_double(m->center_of_mass.y()), format_double(m->center_of_mass.z()),
                     format_double(m->position_error_mm)});
    }
    out.summary = cfg.output / "eit_hemorrhage_summary.csv";
    write_file(out.summary, summary.str());
    out.manifest = write_manifest(
        cfg, "experiment_eit-hemorrhage",
        {{"anomaly",
          {{"center", vec_json(anomaly.center)},
           {"diameter", anomaly.diameter},
           {"delta", anomaly.delta},
           {"perturbed_elements", sim.perturbed.size()}}},
         {"dofs", out.dofs},
         {"elements", out.elements},
         {"subsets", x.subsets},
         {"decompositions", x.decompositions},
         {"iterations", x.iterations},
         {"hypermodel", family_name(x.family)},
         {"theta0", x.theta0},
         {"beta", x.beta},
         {"nu", nu},
         {"noise", noise_json(noise, sim.noise_std)},
         {"seeds", {{"noise", noise.seed}, {"decompositions", dec_seed}}}},
        {avg_file, un_file, out.summary});
    return out;
}

} // namespace headfem
