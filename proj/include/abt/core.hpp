#pragma once

// Shared particle and geometry types.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace abt {

using Real = double;
using Index = std::uint32_t;

/// Raised for every contract violation in the library. The message is the
/// short, stable reason string (e.g. "empty particle set").
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

template <int Dim>
concept SupportedDim = (Dim == 2 || Dim == 3);

template <int Dim>
using Point = std::array<Real, Dim>;

template <int Dim>
    requires SupportedDim<Dim>
struct BoundingBox {
    Point<Dim> min{};
    Point<Dim> max{};

    Real extent(int l) const { return max[l] - min[l]; }

    bool valid() const {
        for (int l = 0; l < Dim; ++l)
            if (!(max[l] > min[l]) || !std::isfinite(min[l]) || !std::isfinite(max[l])) return false;
        return true;
    }

    // Closed containment: min <= x <= max in every dimension.
    bool contains(const Point<Dim>& x) const {
        for (int l = 0; l < Dim; ++l)
            if (x[l] < min[l] || x[l] > max[l]) return false;
        return true;
    }

    bool strictly_contains(const Point<Dim>& x) const {
        for (int l = 0; l < Dim; ++l)
            if (!(x[l] > min[l] && x[l] < max[l])) return false;
        return true;
    }

    Point<Dim> center() const {
        Point<Dim> c;
        for (int l = 0; l < Dim; ++l) c[l] = Real(0.5) * (min[l] + max[l]);
        return c;
    }

    static BoundingBox cube(Real lo, Real hi) {
        BoundingBox b;
        b.min.fill(lo);
        b.max.fill(hi);
        return b;
    }

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Integer sub-cell coordinates of a point inside a node subdivided b ways
/// per dimension. Each component lies in [0, b-1].
template <int Dim>
struct CellCoords {
    std::array<std::uint32_t, Dim> idx{};

    std::uint32_t operator[](int l) const { return idx[l]; }
    std::uint32_t& operator[](int l) { return idx[l]; }
    friend bool operator==(const CellCoords&, const CellCoords&) = default;
};

/// Columnar particle store: one coordinate array per dimension, smoothing
/// lengths and stable ids. Immutable once constructed.
template <int Dim>
    requires SupportedDim<Dim>
class ParticleSet {
  public:
    static constexpr int dim = Dim;

    ParticleSet() = default;

    ParticleSet(std::array<std::vector<Real>, Dim> coords, std::vector<Real> h, std::vector<Index> ids)
        : coords_(std::move(coords)), h_(std::move(h)), ids_(std::move(ids)) {
        validate();
    }

    // Ids default to 0..n-1.
    ParticleSet(std::array<std::vector<Real>, Dim> coords, std::vector<Real> h)
        : coords_(std::move(coords)), h_(std::move(h)) {
        ids_.resize(h_.size());
        std::iota(ids_.begin(), ids_.end(), Index{0});
        validate();
    }

    std::size_t size() const { return h_.size(); }
    bool empty() const { return h_.empty(); }

    std::span<const Real> coord(int l) const { return coords_[l]; }
    std::span<const Real> h() const { return h_; }
    std::span<const Index> ids() const { return ids_; }

    Real x(std::size_t i, int l) const { return coords_[l][i]; }
    Real h(std::size_t i) const { return h_[i]; }
    Index id(std::size_t i) const { return ids_[i]; }

    Point<Dim> position(std::size_t i) const {
        Point<Dim> p;
        for (int l = 0; l < Dim; ++l) p[l] = coords_[l][i];
        return p;
    }

    /// Same positions and ids with a new smoothing-length array.
    ParticleSet with_smoothing_lengths(std::vector<Real> h) const {
        return ParticleSet(coords_, std::move(h), ids_);
    }

    /// Row i of the result is row perm[i] of this set. perm must be a
    /// permutation of 0..n-1.
    ParticleSet permuted(std::span<const Index> perm) const {
        if (perm.size() != size()) throw Error("permutation size mismatch");
        std::array<std::vector<Real>, Dim> c;
        for (int l = 0; l < Dim; ++l) {
            c[l].resize(size());
            for (std::size_t i = 0; i < size(); ++i) c[l][i] = coords_[l][perm[i]];
        }
        std::vector<Real> h(size());
        std::vector<Index> ids(size());
        for (std::size_t i = 0; i < size(); ++i) {
            h[i] = h_[perm[i]];
            ids[i] = ids_[perm[i]];
        }
        return ParticleSet(std::move(c), std::move(h), std::move(ids));
    }

  private:
    void validate() const {
        const std::size_t n = h_.size();
        for (int l = 0; l < Dim; ++l)
            if (coords_[l].size() != n) throw Error("column length mismatch");
        if (ids_.size() != n) throw Error("column length mismatch");
        for (int l = 0; l < Dim; ++l)
            for (Real v : coords_[l])
                if (!std::isfinite(v)) throw Error("invalid coordinates");
        for (Real v : h_)
            if (!std::isfinite(v) || !(v > 0)) throw Error("invalid smoothing length");
        std::vector<bool> seen(n, false);
        for (Index id : ids_) {
            if (id >= n || seen[id]) throw Error("ids are not a permutation");
            seen[id] = true;
        }
    }

    std::array<std::vector<Real>, Dim> coords_;
    std::vector<Real> h_;
    std::vector<Index> ids_;
};

/// Coordinate extents expanded by 1e-9 of each side (at least 1e-12
/// absolute) so that every particle lies strictly inside.
template <int Dim>
BoundingBox<Dim> compute_root_box(const ParticleSet<Dim>& particles) {
    if (particles.empty()) throw Error("empty particle set");
    BoundingBox<Dim> box;
    for (int l = 0; l < Dim; ++l) {
        auto c = particles.coord(l);
        // Four independent lanes; a single min/max chain is latency bound.
        std::array<Real, 4> lo4, hi4;
        lo4.fill(c[0]);
        hi4.fill(c[0]);
        std::size_t i = 0;
        for (; i + 4 <= c.size(); i += 4)
            for (int k = 0; k < 4; ++k) {
                lo4[k] = c[i + k] < lo4[k] ? c[i + k] : lo4[k];
                hi4[k] = c[i + k] > hi4[k] ? c[i + k] : hi4[k];
            }
        for (; i < c.size(); ++i) {
            lo4[0] = std::min(lo4[0], c[i]);
            hi4[0] = std::max(hi4[0], c[i]);
        }
        const Real lo = *std::min_element(lo4.begin(), lo4.end());
        const Real hi = *std::max_element(hi4.begin(), hi4.end());
        if (!std::isfinite(lo) || !std::isfinite(hi)) throw Error("invalid coordinates");
        const Real pad = std::max(Real(1e-9) * (hi - lo), Real(1e-12));
        box.min[l] = lo - pad;
        box.max[l] = hi + pad;
        // Large magnitudes can swallow the pad; step outward until strict.
        while (!(box.min[l] < lo)) box.min[l] = std::nextafter(box.min[l], -INFINITY);
        while (!(box.max[l] > hi)) box.max[l] = std::nextafter(box.max[l], INFINITY);
    }
    return box;
}

/// inverse[perm[i]] = i.
inline std::vector<Index> invert_permutation(std::span<const Index> perm) {
    std::vector<Index> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<Index>(i);
    return inv;
}

}  // namespace abt
