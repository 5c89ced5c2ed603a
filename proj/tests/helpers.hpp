#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "abt/core.hpp"
#include "abt/datagen.hpp"
#include "abt/oracle.hpp"
#include "abt/search.hpp"

namespace abt::testing {

template <int Dim>
ParticleSet<Dim> make_set(const std::vector<Point<Dim>>& pts, Real h) {
    std::array<std::vector<Real>, Dim> c;
    for (const auto& p : pts)
        for (int l = 0; l < Dim; ++l) c[l].push_back(p[l]);
    return ParticleSet<Dim>(std::move(c), std::vector<Real>(pts.size(), h));
}

// The three small correctness sets: 16^3 lattice, 2000 uniform and 2000
// clustered points, h tuned to 30 neighbors.
struct NamedSet {
    std::string name;
    ParticleSet<3> ps;
};

inline std::vector<NamedSet> correctness_sets() {
    const auto unit = BoundingBox<3>::cube(0, 1);
    return {
        {"lattice16", assign_smoothing_lengths(gen_lattice<3>(16, unit), 30)},
        {"uniform2000", assign_smoothing_lengths(gen_uniform_random<3>(2000, unit, 7), 30)},
        {"clustered2000", assign_smoothing_lengths(gen_center_clustered<3>(2000, unit, 11), 30)},
    };
}

template <int Dim>
IdNeighborSets oracle_sets(const ParticleSet<Dim>& ps, bool include_self = false) {
    return to_id_sets(brute_force_neighbors(ps, include_self), ps);
}

}  // namespace abt::testing
