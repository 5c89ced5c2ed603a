#pragma once

// Fixed-radius (2h) neighbor search over a Tree.
//
// At every internal node the query's reach [x - 2h, x + 2h] is mapped onto
// the node's sub-cell grid and the resulting rectangular block of sub-cells
// is visited; leaves are scanned with squared-distance tests. Neighbor
// relations use gather semantics: only the query's own h matters.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <mutex>
#include <span>
#include <type_traits>
#include <vector>

#include "abt/core.hpp"
#include "abt/parallel.hpp"
#include "abt/tree.hpp"

namespace abt {

/// Inclusive per-dimension sub-cell index ranges.
template <int Dim>
struct VisitRange {
    std::array<std::uint32_t, Dim> lo{};
    std::array<std::uint32_t, Dim> hi{};

    std::size_t cells() const {
        std::size_t c = 1;
        for (int l = 0; l < Dim; ++l) c *= hi[l] - lo[l] + 1;
        return c;
    }
    friend bool operator==(const VisitRange&, const VisitRange&) = default;
};

/// Sub-cells of `box` (split b ways) that can hold points within `radius`
/// of p, clamped to [0, b-1].
template <int Dim>
VisitRange<Dim> visit_range(const std::type_identity_t<Point<Dim>>& p, Real radius, const BoundingBox<Dim>& box, std::uint32_t b) {
    if (b < 1) throw Error("branching factor must be >= 1");
    if (!(radius > 0)) throw Error("radius must be positive");
    VisitRange<Dim> r;
    const Real top = static_cast<Real>(b) - 1;
    for (int l = 0; l < Dim; ++l) {
        const Real w = box.max[l] - box.min[l];
        const Real lo = std::floor(((p[l] - radius) - box.min[l]) / w * b);
        const Real hi = std::floor(((p[l] + radius) - box.min[l]) / w * b);
        r.lo[l] = static_cast<std::uint32_t>(std::clamp<Real>(lo, 0, top));
        r.hi[l] = static_cast<std::uint32_t>(std::clamp<Real>(hi, 0, top));
    }
    return r;
}

struct SearchOptions {
    bool include_self = false;
    unsigned workers = 1;
    ScheduleSpec schedule{};
};

/// Traversal counters. node_visits counts every tree node entered by a
/// walk, leaf_scans every bucket whose particles were distance-tested.
struct SearchStats {
    std::uint64_t node_visits = 0;
    std::uint64_t leaf_scans = 0;
    std::uint64_t distance_checks = 0;

    SearchStats& operator+=(const SearchStats& o) {
        node_visits += o.node_visits;
        leaf_scans += o.leaf_scans;
        distance_checks += o.distance_checks;
        return *this;
    }
};

/// Neighbor lists of all particles in compressed row form. Row i lists the
/// positions (not stable ids) of particle i's neighbors in walk order.
class NeighborTable {
  public:
    NeighborTable() = default;
    NeighborTable(std::vector<std::size_t> offsets, std::vector<Index> neighbors)
        : offsets_(std::move(offsets)), neighbors_(std::move(neighbors)) {}

    std::size_t size() const { return offsets_.size() - 1; }
    std::size_t total() const { return neighbors_.size(); }

    std::span<const Index> operator[](std::size_t i) const {
        return std::span<const Index>(neighbors_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
    }

    Real mean_count() const { return size() ? static_cast<Real>(total()) / static_cast<Real>(size()) : 0; }

  private:
    std::vector<std::size_t> offsets_{0};
    std::vector<Index> neighbors_;
};

/// Neighbor sets keyed and valued by stable particle id, each ascending:
/// the canonical form used for comparison and serialization.
using IdNeighborSets = std::vector<std::vector<Index>>;

template <int Dim>
IdNeighborSets to_id_sets(const NeighborTable& table, const ParticleSet<Dim>& particles) {
    if (table.size() != particles.size()) throw Error("table size mismatch");
    IdNeighborSets out(particles.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
        auto& row = out[particles.id(i)];
        for (Index q : table[i]) row.push_back(particles.id(q));
        std::sort(row.begin(), row.end());
    }
    return out;
}

namespace detail {

// Growable index array that hands out uninitialized space, so leaf scans
// can write candidates unconditionally and keep only the accepted ones.
class IndexBuffer {
  public:
    std::size_t size() const { return size_; }
    const Index* data() const { return data_.get(); }

    Index* grow(std::size_t extra) {
        if (size_ + extra > capacity_) {
            const std::size_t cap = std::max({size_ + extra, 2 * capacity_, std::size_t{256}});
            auto fresh = std::make_unique_for_overwrite<Index[]>(cap);
            std::copy_n(data_.get(), size_, fresh.get());
            data_ = std::move(fresh);
            capacity_ = cap;
        }
        return data_.get() + size_;
    }
    void commit(std::size_t k) { size_ += k; }

  private:
    std::unique_ptr<Index[]> data_;
    std::size_t size_ = 0;
    std::size_t capacity_ = 0;
};

// Rows produced by one chunk of work: row k belongs to query queries[k].
struct RowBlock {
    std::vector<Index> queries;
    std::vector<std::size_t> offsets{0};
    IndexBuffer neighbors;

    void close_row(Index q) {
        queries.push_back(q);
        offsets.push_back(neighbors.size());
    }
};

inline NeighborTable assemble(std::size_t n, std::vector<RowBlock>& blocks) {
    std::vector<std::size_t> offsets(n + 1, 0);
    for (const auto& blk : blocks)
        for (std::size_t k = 0; k < blk.queries.size(); ++k)
            offsets[blk.queries[k] + 1] = blk.offsets[k + 1] - blk.offsets[k];
    for (std::size_t i = 0; i < n; ++i) offsets[i + 1] += offsets[i];
    std::vector<Index> neighbors(offsets[n]);
    for (auto& blk : blocks) {
        for (std::size_t k = 0; k < blk.queries.size(); ++k)
            std::copy(blk.neighbors.data() + blk.offsets[k], blk.neighbors.data() + blk.offsets[k + 1],
                      neighbors.begin() + offsets[blk.queries[k]]);
        blk = RowBlock{};
    }
    return NeighborTable(std::move(offsets), std::move(neighbors));
}

// Lower and upper reach of a query along each axis, widened by a few ulps so
// that rounding in x +- r can never drop a cell holding an accepted point.
template <int Dim>
struct Reach {
    Point<Dim> lo;
    Point<Dim> hi;
    Point<Dim> center{};
    Real r2 = -1;  // negative: box only, no sphere

    Reach(const Point<Dim>& x, Real radius) : center(x), r2(radius * radius) {
        for (int l = 0; l < Dim; ++l) {
            const Real pad = 8 * std::numeric_limits<Real>::epsilon() * (std::abs(x[l]) + radius);
            lo[l] = x[l] - (radius + pad);
            hi[l] = x[l] + (radius + pad);
        }
    }
    Reach(const Point<Dim>& lo_, const Point<Dim>& hi_) : lo(lo_), hi(hi_) {}

    bool contains(const BoundingBox<Dim>& box) const {
        for (int l = 0; l < Dim; ++l)
            if (box.min[l] < lo[l] || box.max[l] > hi[l]) return false;
        return true;
    }

    bool overlaps(const BoundingBox<Dim>& box) const {
        for (int l = 0; l < Dim; ++l)
            if (hi[l] < box.min[l] || lo[l] > box.max[l]) return false;
        return true;
    }
};

inline std::uint32_t clamp_cell(Real t, std::uint32_t b) {
    if (!(t > 0)) return 0;
    if (t >= static_cast<Real>(b)) return b - 1;
    return static_cast<std::uint32_t>(t);
}

// Calls on_leaf(leaf) for every leaf reached by the range walk from `node`.
template <int Dim, class OnLeaf>
void walk(const Tree<Dim>& tree, const TreeNode<Dim>& node, const Reach<Dim>& reach, OnLeaf&& on_leaf,
          SearchStats& stats) {
    ++stats.node_visits;
    if (node.is_leaf()) {
        on_leaf(node);
        return;
    }
    const std::uint32_t b = node.b;
    const Point<Dim> scale = node.cell_scale();
    std::array<std::uint32_t, Dim> lo, hi;
    for (int l = 0; l < Dim; ++l) {
        lo[l] = clamp_cell((reach.lo[l] - node.box.min[l]) * scale[l], b);
        hi[l] = clamp_cell((reach.hi[l] - node.box.min[l]) * scale[l], b);
    }
    if constexpr (Dim == 3) {
        for (std::uint32_t z = lo[2]; z <= hi[2]; ++z)
            for (std::uint32_t y = lo[1]; y <= hi[1]; ++y) {
                const std::size_t row = (static_cast<std::size_t>(z) * b + y) * b;
                for (std::uint32_t x = lo[0]; x <= hi[0]; ++x) {
                    const std::int32_t rank = tree.child_rank(node, row + x);
                    if (rank >= 0) walk(tree, tree.node(node.first_child + rank), reach, on_leaf, stats);
                }
            }
    } else {
        for (std::uint32_t y = lo[1]; y <= hi[1]; ++y) {
            const std::size_t row = static_cast<std::size_t>(y) * b;
            for (std::uint32_t x = lo[0]; x <= hi[0]; ++x) {
                const std::int32_t rank = tree.child_rank(node, row + x);
                if (rank >= 0) walk(tree, tree.node(node.first_child + rank), reach, on_leaf, stats);
            }
        }
    }
}

// Like walk(), but calls on_run(span) with runs of particles from children
// that sit next to each other along a cell row. A child is taken whole,
// without descending, when it is a leaf or lies inside the reach; either
// way it counts as one node visit.
template <int Dim, class OnRun>
void walk_runs(const Tree<Dim>& tree, const TreeNode<Dim>& node, const Reach<Dim>& reach, OnRun&& on_run,
               SearchStats& stats) {
    ++stats.node_visits;
    if (node.is_leaf()) {
        ++stats.leaf_scans;
        on_run(tree.particles_of(node));
        return;
    }
    const std::uint32_t b = node.b;
    const Index* order = tree.order().data();
    const Point<Dim> scale = node.cell_scale();
    std::array<std::uint32_t, Dim> lo, hi;
    for (int l = 0; l < Dim; ++l) {
        lo[l] = clamp_cell((reach.lo[l] - node.box.min[l]) * scale[l], b);
        hi[l] = clamp_cell((reach.hi[l] - node.box.min[l]) * scale[l], b);
    }
    const std::int32_t* slot = tree.slot_table(node);
    const std::uint32_t* start = tree.cell_starts(node);
    const std::size_t total = ipow(b, Dim);
    auto emit = [&](std::uint32_t first, std::uint32_t last) {
        if (last > first) on_run(std::span<const Index>(order + first, last - first));
    };
    // The cells of a row hold one contiguous run of order(), broken only
    // around internal children that must be descended into. Runs of
    // successive rows merge when nothing lies between them.
    std::uint32_t run_begin = 0, run_end = 0;
    auto row_scan = [&](std::size_t row, std::uint32_t xlo, std::uint32_t xhi) {
        const std::size_t jend = row + xhi + 1;
        const std::uint32_t first = start[row + xlo];
        if (first != run_end) {
            emit(run_begin, run_end);
            run_begin = first;
        }
        std::size_t leaves = 0;
        for (std::size_t j = row + xlo; j < jend; ++j) {
            const std::int32_t v = slot[j];
            if (v >= -1) {
                leaves += v >= 0;
                continue;
            }
            const TreeNode<Dim>& c = tree.node(node.first_child + Tree<Dim>::decode_slot(v));
            if (reach.contains(c.box)) {
                ++stats.node_visits;
                ++stats.leaf_scans;
                continue;
            }
            emit(run_begin, c.begin);
            walk_runs(tree, c, reach, on_run, stats);
            run_begin = c.begin + c.count;
        }
        run_end = jend < total ? start[jend] : node.begin + node.count;
        stats.node_visits += leaves;
        stats.leaf_scans += leaves;
    };
    // With a sphere, each row of cells is cut down to the x-range of the
    // chord through its nearest point; only worth it on wide ranges.
    // `slack` keeps the cut conservative against rounding in the cell bounds.
    bool cut = reach.r2 >= 0;
    for (int l = 1; l < Dim; ++l) cut = cut && hi[l] - lo[l] >= 2;
    Point<Dim> w{}, slack{};
    if (cut)
        for (int l = 0; l < Dim; ++l) {
            w[l] = node.box.extent(l) / b;
            slack[l] = 1e-9 * w[l] + 16 * std::numeric_limits<Real>::epsilon() *
                                         (std::abs(reach.center[l]) + std::abs(node.box.min[l]) + node.box.extent(l));
        }
    auto gap2 = [&](int l, std::uint32_t c) {
        if (!cut) return Real(0);
        const Real cmin = node.box.min[l] + static_cast<Real>(c) * w[l];
        const Real d = std::max({Real(0), cmin - reach.center[l], reach.center[l] - (cmin + w[l])}) - slack[l];
        return d > 0 ? d * d : Real(0);
    };
    auto row_range = [&](Real used, std::uint32_t& xlo, std::uint32_t& xhi) {
        xlo = lo[0];
        xhi = hi[0];
        if (!cut) return true;
        if (used > reach.r2) return false;
        const Real half = std::sqrt(reach.r2 - used) + slack[0];
        xlo = std::max(xlo, clamp_cell((reach.center[0] - half - node.box.min[0]) * scale[0], b));
        xhi = std::min(xhi, clamp_cell((reach.center[0] + half - node.box.min[0]) * scale[0], b));
        return xlo <= xhi;
    };
    std::uint32_t xlo, xhi;
    if constexpr (Dim == 3) {
        for (std::uint32_t z = lo[2]; z <= hi[2]; ++z) {
            const Real dz2 = gap2(2, z);
            for (std::uint32_t y = lo[1]; y <= hi[1]; ++y)
                if (row_range(dz2 + gap2(1, y), xlo, xhi))
                    row_scan((static_cast<std::size_t>(z) * b + y) * b, xlo, xhi);
        }
    } else {
        for (std::uint32_t y = lo[1]; y <= hi[1]; ++y)
            if (row_range(gap2(1, y), xlo, xhi)) row_scan(static_cast<std::size_t>(y) * b, xlo, xhi);
    }
    emit(run_begin, run_end);
}

template <int Dim>
struct Columns {
    std::array<const Real*, Dim> x;
    explicit Columns(const ParticleSet<Dim>& ps) {
        for (int l = 0; l < Dim; ++l) x[l] = ps.coord(l).data();
    }
    Real dist2(std::size_t q, const Point<Dim>& p) const {
        Real d2 = 0;
        for (int l = 0; l < Dim; ++l) {
            const Real d = x[l][q] - p[l];
            d2 += d * d;
        }
        return d2;
    }
};

// Coordinates copied into tree order, so a run of order() is scanned
// from contiguous memory. slot_of inverts order().
template <int Dim>
struct SortedColumns {
    std::array<std::vector<Real>, Dim> x;
    std::vector<Index> slot_of;
    const Index* order;
    SortedColumns(const Tree<Dim>& tree, const ParticleSet<Dim>& ps) : order(tree.order().data()) {
        const std::size_t n = tree.size();
        for (int l = 0; l < Dim; ++l) {
            x[l].resize(n);
            const Real* src = ps.coord(l).data();
            for (std::size_t t = 0; t < n; ++t) x[l][t] = src[order[t]];
        }
        slot_of.resize(n);
        for (std::size_t t = 0; t < n; ++t) slot_of[order[t]] = static_cast<Index>(t);
    }
    std::size_t slot(std::span<const Index> run) const { return static_cast<std::size_t>(run.data() - order); }
    Point<Dim> point(std::size_t t) const {
        Point<Dim> p;
        for (int l = 0; l < Dim; ++l) p[l] = x[l][t];
        return p;
    }
};

// Appends the particles in tree slots [a, e) within sqrt(r2) of p.
template <int Dim>
void scan_slots(const SortedColumns<Dim>& cols, std::size_t a, std::size_t e, const std::type_identity_t<Point<Dim>>& p,
                Real r2, IndexBuffer& out) {
    if (e <= a) return;
    Index* dst = out.grow(e - a);
    const Index* ids = cols.order;
    std::size_t k = 0;
    if constexpr (Dim == 3) {
        const Real px = p[0], py = p[1], pz = p[2];
        const Real *x = cols.x[0].data(), *y = cols.x[1].data(), *z = cols.x[2].data();
        for (std::size_t t = a; t < e; ++t) {
            const Real dx = x[t] - px, dy = y[t] - py, dz = z[t] - pz;
            dst[k] = ids[t];
            k += dx * dx + dy * dy + dz * dz <= r2;
        }
    } else {
        const Real px = p[0], py = p[1];
        const Real *x = cols.x[0].data(), *y = cols.x[1].data();
        for (std::size_t t = a; t < e; ++t) {
            const Real dx = x[t] - px, dy = y[t] - py;
            dst[k] = ids[t];
            k += dx * dx + dy * dy <= r2;
        }
    }
    out.commit(k);
}

// Appends the particles of `run` (a subrange of the tree order) within
// sqrt(r2) of p, except the one in tree slot `skip`.
template <int Dim>
void scan_run(const SortedColumns<Dim>& cols, std::span<const Index> run, const std::type_identity_t<Point<Dim>>& p,
              Real r2, std::size_t skip, IndexBuffer& out) {
    const std::size_t a = cols.slot(run);
    const std::size_t e = a + run.size();
    if (skip >= a && skip < e) {
        scan_slots(cols, a, skip, p, r2, out);
        scan_slots(cols, skip + 1, e, p, r2, out);
    } else {
        scan_slots(cols, a, e, p, r2, out);
    }
}

template <int Dim>
void check_tree_matches(const Tree<Dim>& tree, const ParticleSet<Dim>& particles) {
    if (tree.size() != particles.size()) throw Error("tree was built over a different particle set");
}

}  // namespace detail

/// Calls fn(q) for every particle q with |x_q - point|^2 <= radius^2,
/// starting the walk at `start`.
template <int Dim, class Fn>
void for_each_within(const Tree<Dim>& tree, const ParticleSet<Dim>& particles, const std::type_identity_t<Point<Dim>>& point,
                     Real radius, Fn&& fn, const TreeNode<Dim>& start, SearchStats* stats = nullptr) {
    const detail::Columns<Dim> cols(particles);
    const Real r2 = radius * radius;
    SearchStats local;
    detail::walk_runs(
        tree, start, detail::Reach<Dim>(point, radius),
        [&](std::span<const Index> run) {
            for (Index q : run) {
                ++local.distance_checks;
                if (cols.dist2(q, point) <= r2) fn(q);
            }
        },
        local);
    if (stats) *stats += local;
}

template <int Dim, class Fn>
void for_each_within(const Tree<Dim>& tree, const ParticleSet<Dim>& particles, const std::type_identity_t<Point<Dim>>& point,
                     Real radius, Fn&& fn, SearchStats* stats = nullptr) {
    for_each_within(tree, particles, point, radius, std::forward<Fn>(fn), tree.root(), stats);
}

/// Neighbors of particle `p` within 2*h_p, walking from `start` (normally
/// the root). Returns positions in walk order.
template <int Dim>
std::vector<Index> find_neighbors_one(const Tree<Dim>& tree, const ParticleSet<Dim>& particles, std::size_t p,
                                      Real h_p, const TreeNode<Dim>& start, bool include_self = false,
                                      SearchStats* stats = nullptr) {
    detail::check_tree_matches(tree, particles);
    if (p >= particles.size()) throw Error("unknown particle id");
    if (!(h_p > 0)) throw Error("invalid smoothing length");
    std::vector<Index> out;
    for_each_within(
        tree, particles, particles.position(p), 2 * h_p,
        [&](Index q) {
            if (include_self || q != p) out.push_back(q);
        },
        start, stats);
    return out;
}

template <int Dim>
std::vector<Index> find_neighbors_one(const Tree<Dim>& tree, const ParticleSet<Dim>& particles, std::size_t p,
                                      bool include_self = false, SearchStats* stats = nullptr) {
    if (p >= particles.size()) throw Error("unknown particle id");
    return find_neighbors_one(tree, particles, p, particles.h(p), tree.root(), include_self, stats);
}

/// Neighbor lists of every particle; row i equals find_neighbors_one(i)
/// whatever the schedule and worker count.
template <int Dim>
NeighborTable find_neighbors_all(const Tree<Dim>& tree, const ParticleSet<Dim>& particles,
                                 const SearchOptions& opt = {}, SearchStats* stats = nullptr) {
    detail::check_tree_matches(tree, particles);
    const std::size_t n = particles.size();
    const detail::SortedColumns<Dim> cols(tree, particles);
    const unsigned workers = std::max(1u, opt.workers);

    std::vector<detail::RowBlock> blocks;
    std::mutex blocks_mutex;
    std::vector<SearchStats> worker_stats(workers);

    parallel_for(n, workers, opt.schedule, [&](Chunk c, unsigned w) {
        detail::RowBlock blk;
        blk.queries.reserve(c.end - c.begin);
        SearchStats& st = worker_stats[w];
        // Queries go in tree order, so consecutive walks touch the same nodes.
        for (std::size_t t = c.begin; t < c.end; ++t) {
            const Index i = cols.order[t];
            const Point<Dim> x = cols.point(t);
            const Real radius = 2 * particles.h(i);
            const Real r2 = radius * radius;
            const std::size_t skip = opt.include_self ? n : t;
            detail::walk_runs(
                tree, tree.root(), detail::Reach<Dim>(x, radius),
                [&](std::span<const Index> run) {
                    st.distance_checks += run.size();
                    detail::scan_run(cols, run, x, r2, skip, blk.neighbors);
                },
                st);
            blk.close_row(i);
        }
        std::lock_guard lock(blocks_mutex);
        blocks.push_back(std::move(blk));
    });

    if (stats)
        for (const auto& s : worker_stats) *stats += s;
    return detail::assemble(n, blocks);
}

/// Particles permuted into depth-first walk order. permutation[new] = old;
/// stable ids travel with their particles.
template <int Dim>
struct Reordered {
    ParticleSet<Dim> particles;
    std::vector<Index> permutation;
};

template <int Dim>
Reordered<Dim> reorder_particles(const Tree<Dim>& tree, const ParticleSet<Dim>& particles) {
    detail::check_tree_matches(tree, particles);
    std::vector<Index> perm(tree.order().begin(), tree.order().end());
    return {particles.permuted(perm), std::move(perm)};
}

/// Leaves in depth-first walk order.
template <int Dim>
std::vector<const TreeNode<Dim>*> leaves_in_walk_order(const Tree<Dim>& tree) {
    std::vector<const TreeNode<Dim>*> leaves;
    std::vector<const TreeNode<Dim>*> stack{&tree.root()};
    while (!stack.empty()) {
        const auto* nd = stack.back();
        stack.pop_back();
        if (nd->is_leaf()) {
            leaves.push_back(nd);
            continue;
        }
        auto kids = tree.children(*nd);
        for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back(&*it);
    }
    return leaves;
}

/// Same result as find_neighbors_all, computed one group of `block`
/// consecutive leaves at a time: the tree is walked once for the union of
/// the group's search boxes, and every query in the group is then tested
/// only against the leaves that walk found. Most effective after
/// reorder_particles(), when a group's queries are adjacent in memory.
template <int Dim>
NeighborTable find_neighbors_blocked(const Tree<Dim>& tree, const ParticleSet<Dim>& particles, std::size_t block,
                                     const SearchOptions& opt = {}, SearchStats* stats = nullptr) {
    detail::check_tree_matches(tree, particles);
    if (block < 1) throw Error("block size must be >= 1");
    const std::size_t n = particles.size();
    const detail::SortedColumns<Dim> cols(tree, particles);
    const unsigned workers = std::max(1u, opt.workers);
    const auto leaves = leaves_in_walk_order(tree);
    const std::size_t groups = (leaves.size() + block - 1) / block;

    std::vector<detail::RowBlock> blocks;
    std::mutex blocks_mutex;
    std::vector<SearchStats> worker_stats(workers);
    ScheduleSpec sched = opt.schedule;
    sched.chunk = std::max<std::size_t>(1, sched.chunk / 8);

    parallel_for(groups, workers, sched, [&](Chunk c, unsigned w) {
        detail::RowBlock blk;
        SearchStats& st = worker_stats[w];
        std::vector<const TreeNode<Dim>*> candidates;
        std::vector<detail::Reach<Dim>> reaches;
        for (std::size_t g = c.begin; g < c.end; ++g) {
            const std::size_t first = g * block;
            const std::size_t last = std::min(leaves.size(), first + block);

            reaches.clear();
            Point<Dim> lo, hi;
            lo.fill(std::numeric_limits<Real>::infinity());
            hi.fill(-std::numeric_limits<Real>::infinity());
            for (std::size_t li = first; li < last; ++li)
                for (Index i : tree.bucket(*leaves[li])) {
                    reaches.emplace_back(particles.position(i), 2 * particles.h(i));
                    for (int l = 0; l < Dim; ++l) {
                        lo[l] = std::min(lo[l], reaches.back().lo[l]);
                        hi[l] = std::max(hi[l], reaches.back().hi[l]);
                    }
                }

            candidates.clear();
            detail::walk(tree, tree.root(), detail::Reach<Dim>(lo, hi),
                         [&](const TreeNode<Dim>& leaf) { candidates.push_back(&leaf); }, st);

            std::size_t k = 0;
            for (std::size_t li = first; li < last; ++li)
                for (Index i : tree.bucket(*leaves[li])) {
                    const detail::Reach<Dim>& reach = reaches[k++];
                    const Point<Dim> x = particles.position(i);
                    const Real radius = 2 * particles.h(i);
                    const Real r2 = radius * radius;
                    const std::size_t skip = opt.include_self ? n : cols.slot_of[i];
                    for (const auto* leaf : candidates) {
                        if (!reach.overlaps(leaf->box)) continue;
                        ++st.leaf_scans;
                        st.distance_checks += leaf->count;
                        detail::scan_run(cols, tree.particles_of(*leaf), x, r2, skip, blk.neighbors);
                    }
                    blk.close_row(i);
                }
        }
        std::lock_guard lock(blocks_mutex);
        blocks.push_back(std::move(blk));
    });

    if (stats)
        for (const auto& s : worker_stats) *stats += s;
    return detail::assemble(n, blocks);
}

}  // namespace abt
