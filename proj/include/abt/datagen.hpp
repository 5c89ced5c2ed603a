#pragma once

// Synthetic particle sets: a regular lattice, a uniform random cloud and a
// centrally condensed cloud, plus smoothing lengths tuned to a target
// neighbor count.
//
// Random draws use std::mt19937_64 (its output sequence is fixed by the C++
// standard) and a hand-written 53-bit conversion to [0,1), so a given seed
// yields the same particles on every platform and standard library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "abt/core.hpp"
#include "abt/parallel.hpp"
#include "abt/search.hpp"
#include "abt/tree.hpp"

namespace abt {

enum class GenKind { Lattice, UniformRandom, CenterClustered };

inline std::string_view to_string(GenKind k) {
    switch (k) {
        case GenKind::Lattice: return "lattice";
        case GenKind::UniformRandom: return "uniform";
        case GenKind::CenterClustered: return "clustered";
    }
    return "?";
}

inline GenKind parse_gen_kind(std::string_view s) {
    if (s == "lattice") return GenKind::Lattice;
    if (s == "uniform") return GenKind::UniformRandom;
    if (s == "clustered") return GenKind::CenterClustered;
    throw Error("unknown dataset kind: " + std::string(s));
}

/// Uniform double in [0, 1) from the top 53 bits of one 64-bit draw.
class UnitRng {
  public:
    explicit UnitRng(std::uint64_t seed) : engine_(seed) {}
    Real operator()() { return static_cast<Real>(engine_() >> 11) * 0x1.0p-53; }

  private:
    std::mt19937_64 engine_;
};

namespace detail {

template <int Dim>
Real placeholder_h(const BoundingBox<Dim>& box, std::size_t n) {
    Real vol = 1;
    for (int l = 0; l < Dim; ++l) vol *= box.extent(l);
    return std::pow(vol / static_cast<Real>(std::max<std::size_t>(n, 1)), Real(1) / Dim);
}

}  // namespace detail

// Generators fill h with the mean inter-particle spacing as a placeholder;
// assign_smoothing_lengths() replaces it.

/// m^k particles at the centers of an m-per-dimension grid over box.
template <int Dim>
ParticleSet<Dim> gen_lattice(std::size_t m, const BoundingBox<Dim>& box) {
    if (m < 2) throw Error("lattice side must be >= 2");
    if (!box.valid()) throw Error("invalid bounding box");
    std::size_t n = 1;
    for (int l = 0; l < Dim; ++l) {
        if (n > std::numeric_limits<Index>::max() / m) throw Error("lattice too large");
        n *= m;
    }
    std::array<std::vector<Real>, Dim> coords;
    for (auto& c : coords) c.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t rest = i;
        for (int l = 0; l < Dim; ++l) {
            const std::size_t c = rest % m;
            rest /= m;
            coords[l][i] = box.min[l] + box.extent(l) * (static_cast<Real>(c) + Real(0.5)) / static_cast<Real>(m);
        }
    }
    return ParticleSet<Dim>(std::move(coords), std::vector<Real>(n, detail::placeholder_h(box, n)));
}

template <int Dim>
ParticleSet<Dim> gen_uniform_random(std::size_t n, const BoundingBox<Dim>& box, std::uint64_t seed) {
    if (n < 1) throw Error("particle count must be >= 1");
    if (!box.valid()) throw Error("invalid bounding box");
    UnitRng rng(seed);
    std::array<std::vector<Real>, Dim> coords;
    for (auto& c : coords) c.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        for (int l = 0; l < Dim; ++l) coords[l][i] = box.min[l] + box.extent(l) * rng();
    return ParticleSet<Dim>(std::move(coords), std::vector<Real>(n, detail::placeholder_h(box, n)));
}

/// Points in the ball inscribed in box with density falling off as 1/r:
/// radius R*sqrt(u), isotropic direction.
template <int Dim>
ParticleSet<Dim> gen_center_clustered(std::size_t n, const BoundingBox<Dim>& box, std::uint64_t seed) {
    if (n < 1) throw Error("particle count must be >= 1");
    if (!box.valid()) throw Error("invalid bounding box");
    UnitRng rng(seed);
    const Point<Dim> c = box.center();
    Real radius = std::numeric_limits<Real>::max();
    for (int l = 0; l < Dim; ++l) radius = std::min(radius, Real(0.5) * box.extent(l));

    std::array<std::vector<Real>, Dim> coords;
    for (auto& col : coords) col.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Real r = radius * std::sqrt(rng());
        const Real phi = 2 * std::numbers::pi * rng();
        if constexpr (Dim == 3) {
            const Real z = 2 * rng() - 1;
            const Real rho = std::sqrt(std::max<Real>(0, 1 - z * z));
            coords[0][i] = c[0] + r * rho * std::cos(phi);
            coords[1][i] = c[1] + r * rho * std::sin(phi);
            coords[2][i] = c[2] + r * z;
        } else {
            coords[0][i] = c[0] + r * std::cos(phi);
            coords[1][i] = c[1] + r * std::sin(phi);
        }
    }
    return ParticleSet<Dim>(std::move(coords), std::vector<Real>(n, detail::placeholder_h(box, n)));
}

/// Sets h_i to half the distance to particle i's target-th nearest
/// neighbor, so that about `target` particles fall within 2h_i.
///
/// When that distance is shared by a shell of equidistant particles (a
/// lattice, say), the radius is placed just outside the shell if that lands
/// closer to `target`, and 1e-9 (relative) inside it otherwise. Distances
/// within 2e-9 relative of the k-th are treated as tied.
template <int Dim>
ParticleSet<Dim> assign_smoothing_lengths(const ParticleSet<Dim>& particles, std::size_t target,
                                          unsigned workers = 1) {
    const std::size_t n = particles.size();
    if (target < 1) throw Error("target neighbor count must be >= 1");
    if (n <= target) throw Error("too few particles for target neighbor count");

    TreeParams tp;
    tp.bucket_size = 8;
    const Tree<Dim> tree = build_tree(particles, tp);

    // Density guess per particle from the leaf that holds it.
    std::vector<Real> guess(n);
    for (const auto* leaf : leaves_in_walk_order(tree)) {
        Real vol = 1;
        for (int l = 0; l < Dim; ++l) vol *= leaf->box.extent(l);
        const Real unit_ball = Dim == 3 ? Real(4) / 3 * std::numbers::pi : std::numbers::pi;
        const Real r = std::pow(static_cast<Real>(target + 1) * vol / (static_cast<Real>(leaf->count) * unit_ball),
                                Real(1) / Dim);
        for (Index i : tree.bucket(*leaf)) guess[i] = r;
    }
    Real diag2 = 0;
    for (int l = 0; l < Dim; ++l) diag2 += tree.box().extent(l) * tree.box().extent(l);
    const Real diag = std::sqrt(diag2);

    std::vector<Real> h(n);
    parallel_for(n, workers, {Schedule::Dynamic, 256}, [&](Chunk c, unsigned) {
        std::vector<Real> d2;
        for (std::size_t t = c.begin; t < c.end; ++t) {
            const Index i = tree.order()[t];
            const Point<Dim> x = particles.position(i);
            Real radius = std::min(guess[i], diag);
            while (true) {
                d2.clear();
                for_each_within(tree, particles, x, radius, [&](Index q) {
                    if (q == i) return;
                    Real s = 0;
                    for (int l = 0; l < Dim; ++l) {
                        const Real d = particles.x(q, l) - x[l];
                        s += d * d;
                    }
                    d2.push_back(s);
                });
                if (d2.size() >= target || radius >= diag) break;
                const Real grow = d2.empty() ? 2 : std::pow(static_cast<Real>(target + 1) / d2.size(), Real(1) / Dim);
                radius = std::min(diag, radius * std::max<Real>(1.25, grow * Real(1.1)));
            }
            std::nth_element(d2.begin(), d2.begin() + (target - 1), d2.end());
            const Real dk2 = d2[target - 1];
            const auto inside = std::count_if(d2.begin(), d2.end(), [&](Real v) { return v < dk2 * (1 - 2e-9); });
            const auto shell = std::count_if(d2.begin(), d2.end(), [&](Real v) { return v <= dk2 * (1 + 2e-9); });
            const Real dk = std::sqrt(dk2);
            const auto over = static_cast<std::ptrdiff_t>(shell) - static_cast<std::ptrdiff_t>(target);
            const auto under = static_cast<std::ptrdiff_t>(target) - static_cast<std::ptrdiff_t>(inside);
            const Real two_h = over > under ? dk * (1 - 1e-9) : dk * (1 + 1e-9);
            if (!(two_h > 0)) throw Error("coincident particles: zero neighbor distance");
            h[i] = two_h / 2;
        }
    });
    return particles.with_smoothing_lengths(std::move(h));
}

/// Recipe for a generated dataset.
template <int Dim>
struct GenSpec {
    GenKind kind = GenKind::UniformRandom;
    std::size_t n = 1000;  // lattice: side m
    std::uint64_t seed = 1;
    std::size_t target_neighbors = 100;  // 0 keeps placeholder h
    BoundingBox<Dim> box = BoundingBox<Dim>::cube(0, 1);
};

template <int Dim>
ParticleSet<Dim> generate(const GenSpec<Dim>& spec, unsigned workers = 1) {
    ParticleSet<Dim> ps;
    switch (spec.kind) {
        case GenKind::Lattice: ps = gen_lattice<Dim>(spec.n, spec.box); break;
        case GenKind::UniformRandom: ps = gen_uniform_random<Dim>(spec.n, spec.box, spec.seed); break;
        case GenKind::CenterClustered: ps = gen_center_clustered<Dim>(spec.n, spec.box, spec.seed); break;
    }
    if (spec.target_neighbors == 0) return ps;
    return assign_smoothing_lengths(ps, spec.target_neighbors, workers);
}

}  // namespace abt
