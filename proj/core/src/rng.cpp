#include "headfem/rng.hpp"

namespace headfem {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    // splitmix64 finalizer over the combined words
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace headfem
