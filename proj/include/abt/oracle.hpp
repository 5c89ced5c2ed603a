#pragma once

// Brute-force O(n^2) neighbor finder. Ground truth for the tree search.

#include <vector>

#include "abt/core.hpp"
#include "abt/search.hpp"

namespace abt {

/// Positions q (ascending) with |x_q - x_p|^2 <= (2 h_p)^2.
template <int Dim>
std::vector<Index> brute_force_neighbors_of(const ParticleSet<Dim>& particles, std::size_t p,
                                            bool include_self = false) {
    if (p >= particles.size()) throw Error("unknown particle id");
    std::vector<Index> out;
    const Real radius = 2 * particles.h(p);
    const Real r2 = radius * radius;
    for (std::size_t q = 0; q < particles.size(); ++q) {
        if (q == p && !include_self) continue;
        Real d2 = 0;
        for (int l = 0; l < Dim; ++l) {
            const Real d = particles.x(q, l) - particles.x(p, l);
            d2 += d * d;
        }
        if (d2 <= r2) out.push_back(static_cast<Index>(q));
    }
    return out;
}

template <int Dim>
NeighborTable brute_force_neighbors(const ParticleSet<Dim>& particles, bool include_self = false) {
    const std::size_t n = particles.size();
    std::vector<std::size_t> offsets{0};
    std::vector<Index> all;
    offsets.reserve(n + 1);
    for (std::size_t p = 0; p < n; ++p) {
        auto row = brute_force_neighbors_of(particles, p, include_self);
        all.insert(all.end(), row.begin(), row.end());
        offsets.push_back(all.size());
    }
    return NeighborTable(std::move(offsets), std::move(all));
}

}  // namespace abt
