#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "headfem/error.hpp"
#include "headfem/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kInputError = 2;
constexpr int kRuntimeError = 3;

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output;
    int threads = 0;
    bool verbose = false;
};

headfem::ProjectConfig load(const Globals& g) {
    auto cfg = headfem::ProjectConfig::load(g.config);
    headfem::RunOptions opts;
    opts.seed = g.seed;
    if (g.output) {
        opts.output = std::filesystem::path(*g.output);
    }
    opts.threads = g.threads;
    headfem::apply_overrides(cfg, opts);
    return cfg;
}

void print_metrics(const headfem::RoiMetrics& m) {
    std::cout << "position_error_mm " << m.position_error_mm << "\n"
              << "angle_error_deg " << m.angle_error_deg << "\n"
              << "roi_size " << m.roi_size << "\n";
}

int run(int argc, char** argv) {
    CLI::App app{"FEM head model forward and inverse engine", "headfem"};
    app.set_version_flag("--version", headfem::version());
    app.require_subcommand(1);

    Globals g;
    auto add_common = [&g](CLI::App* sub) {
        sub->add_option("-c,--config", g.config, "INI configuration or run manifest")
            ->required();
        sub->add_option("--seed", g.seed, "master seed override");
        sub->add_option("--threads", g.threads, "worker thread cap (0: library default)")
            ->check(CLI::NonNegativeNumber);
        sub->add_option("-o,--output", g.output, "output directory override");
        sub->add_flag("-v,--verbose", g.verbose, "progress logging");
    };

    auto* mesh = app.add_subcommand("mesh", "generate and smooth the tetrahedral mesh");
    auto* leadfield = app.add_subcommand("leadfield", "compute the EEG or EIT lead field");
    auto* simulate = app.add_subcommand("simulate", "synthesize noisy measurements");
    auto* invert = app.add_subcommand("invert", "IAS MAP reconstruction from data.csv");
    auto* experiment = app.add_subcommand("experiment", "run a reference experiment protocol");
    auto* metrics = app.add_subcommand("metrics", "ROI metrics of a reconstruction");
    std::string experiment_name;
    experiment->add_option("name", experiment_name, "eeg-hypermodel or eit-hemorrhage")
        ->required()
        ->check(CLI::IsMember({"eeg-hypermodel", "eit-hemorrhage"}));
    for (auto* sub : {mesh, leadfield, simulate, invert, experiment, metrics}) {
        add_common(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kInputError;
    }

    spdlog::set_default_logger(spdlog::stderr_logger_mt("headfem"));
    spdlog::set_level(g.verbose ? spdlog::level::info : spdlog::level::warn);

    const auto cfg = load(g);
    if (mesh->parsed()) {
        const auto r = headfem::run_mesh(cfg);
        std::cout << "nodes " << r.model.mesh.node_count() << "\n"
                  << "elements " << r.model.mesh.element_count() << "\n"
                  << "manifest " << r.manifest.string() << "\n";
    } else if (leadfield->parsed()) {
        const auto r = headfem::run_leadfield(cfg);
        std::cout << "rows " << r.lf.matrix.rows() << "\n"
                  << "cols " << r.lf.matrix.cols() << "\n"
                  << "sidecar " << r.sidecar.string() << "\n";
    } else if (simulate->parsed()) {
        const auto r = headfem::run_simulate(cfg);
        std::cout << "measurements " << r.noisy.size() << "\n"
                  << "data " << r.data_file.string() << "\n";
    } else if (invert->parsed()) {
        const auto r = headfem::run_invert(cfg);
        std::cout << "argmax_column " << r.argmax << "\n"
                  << "reconstruction " << r.reconstruction.string() << "\n";
        if (r.metrics) {
            print_metrics(*r.metrics);
        }
    } else if (experiment->parsed()) {
        if (experiment_name == "eeg-hypermodel") {
            const auto r = headfem::run_eeg_hypermodel(cfg);
            for (const auto& c : r.cases) {
                std::cout << c.label << " " << c.source << " median_position_mm "
                          << c.median_position_mm << " median_angle_deg " << c.median_angle_deg
                          << "\n";
            }
            std::cout << "summary " << r.summary.string() << "\n";
        } else {
            const auto r = headfem::run_eit_hemorrhage(cfg);
            std::cout << "averaged_error_mm " << r.averaged_error_mm << "\n"
                      << "unaveraged_error_mm " << r.unaveraged_error_mm << "\n"
                      << "summary " << r.summary.string() << "\n";
        }
    } else if (metrics->parsed()) {
        print_metrics(headfem::run_metrics(cfg));
    }
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const headfem::Error& e) {
        std::fprintf(stderr, "headfem: %s: %s\n", e.kind().c_str(), e.what());
        return e.category() == headfem::ErrorCategory::Input ? kInputError : kRuntimeError;
    } catch (const std::bad_alloc&) {
        std::fprintf(stderr, "headfem: out of memory\n");
        return kRuntimeError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "headfem: %s\n", e.what());
        return kRuntimeError;
    }
}
