#include <map>

#include <benchmark/benchmark.h>

#include "headfem/fem.hpp"
#include "headfem/inverse.hpp"
#include "headfem/leadfield.hpp"
#include "headfem/meshgen.hpp"
#include "headfem/rng.hpp"
#include "headfem/solver.hpp"

using namespace headfem;

namespace {

Segmentation two_spheres() {
    std::vector<Compartment> comps(2);
    comps[0].name = "inner";
    comps[0].surfaces.push_back(make_icosphere(0.06, 3));
    comps[0].active = true;
    comps[1].name = "outer";
    comps[1].surfaces.push_back(make_icosphere(0.09, 3));
    comps[1].sigma = Conductivity::isotropic(0.43);
    return Segmentation(std::move(comps));
}

struct Model {
    Segmentation seg;
    TetMesh mesh;
    ElectrodeSet electrodes;
};

const Model& model(double h) {
    static std::map<double, Model> cache;
    auto it = cache.find(h);
    if (it == cache.end()) {
        Model m{two_spheres(), {}, {}};
        m.mesh = generate_mesh(m.seg, h);
        std::vector<ElectrodeDisk> disks;
        for (const auto& c : spherical_cap_layout(32, 0.09, -0.02)) {
            disks.push_back({c, 0.008, 2000.0});
        }
        m.electrodes = electrodes_from_disks(m.mesh, disks);
        it = cache.emplace(h, std::move(m)).first;
    }
    return it->second;
}

double h_of(const benchmark::State& state) { return 1e-3 * static_cast<double>(state.range(0)); }

void BM_GenerateMesh(benchmark::State& state) {
    const auto seg = two_spheres();
    for (auto _ : state) {
        benchmark::DoNotOptimize(generate_mesh(seg, h_of(state)));
    }
}
BENCHMARK(BM_GenerateMesh)->Arg(12)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_AssembleCem(benchmark::State& state) {
    const auto& m = model(h_of(state));
    for (auto _ : state) {
        benchmark::DoNotOptimize(assemble_cem(m.mesh, m.electrodes));
    }
    state.counters["elements"] = static_cast<double>(m.mesh.element_count());
}
BENCHMARK(BM_AssembleCem)->Arg(12)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_PcgSolve(benchmark::State& state) {
    const auto& m = model(h_of(state));
    const auto sys = assemble_cem(m.mesh, m.electrodes);
    const Eigen::VectorXd rhs = Eigen::VectorXd(sys.B.col(0));
    const PcgConfig cfg{1e-8, 0, state.range(1) ? Preconditioner::Ldp : Preconditioner::None};
    int iterations = 0;
    for (auto _ : state) {
        const auto r = pcg_solve(sys.A, rhs, cfg);
        iterations = r.iterations;
        benchmark::DoNotOptimize(r.x.data());
    }
    state.counters["nodes"] = static_cast<double>(sys.A.rows());
    state.counters["iterations"] = iterations;
}
BENCHMARK(BM_PcgSolve)->Args({12, 1})->Args({12, 0})->Args({8, 1})->Unit(benchmark::kMillisecond);

void BM_TransferMatrix(benchmark::State& state) {
    const auto& m = model(h_of(state));
    const auto sys = assemble_cem(m.mesh, m.electrodes);
    for (auto _ : state) {
        benchmark::DoNotOptimize(transfer_matrix(sys.A, sys.B, PcgConfig{}));
    }
}
BENCHMARK(BM_TransferMatrix)->Arg(12)->Unit(benchmark::kMillisecond);

void BM_IasStep(benchmark::State& state) {
    const auto m = static_cast<Eigen::Index>(state.range(0));
    const auto n = static_cast<Eigen::Index>(state.range(1));
    Rng rng(1);
    Eigen::MatrixXd lf(m, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < m; ++i) {
            lf(i, j) = rng.normal();
        }
    }
    Eigen::VectorXd y = lf.col(0);
    const HyperModel hyper{HyperFamily::InverseGamma, 1.5, 1e-3};
    const auto state0 = IasState::initial(n, hyper, 0.05);
    for (auto _ : state) {
        benchmark::DoNotOptimize(ias_step(lf, y, state0, hyper));
    }
}
BENCHMARK(BM_IasStep)->Args({64, 3000})->Args({240, 400})->Args({72, 30000})->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
