#pragma once

// Adaptive-branching spatial tree and its classical octree special case.
//
// A node holding more than s particles is cut into b^k equal sub-cells,
// b = ceil((n/s)^(1/k)). When too many of those sub-cells are underfull
// (hold <= alpha*s particles) b is halved and the particles redistributed,
// bottoming out at b = 2. Only non-empty sub-cells become child nodes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <map>
#include <mutex>
#include <span>
#include <type_traits>
#include <string>
#include <string_view>
#include <vector>

#include "abt/core.hpp"
#include "abt/parallel.hpp"

namespace abt {

enum class BuildPolicy { Adaptive, FixedOctree };

inline std::string_view to_string(BuildPolicy p) {
    return p == BuildPolicy::Adaptive ? "adaptive" : "octree";
}

inline BuildPolicy parse_policy(std::string_view s) {
    if (s == "adaptive") return BuildPolicy::Adaptive;
    if (s == "octree") return BuildPolicy::FixedOctree;
    throw Error("unknown policy: " + std::string(s));
}

/// Largest b with b^k <= 2^31, so sub-cell ids and slot ranks fit 32 bits.
constexpr std::uint32_t default_b_cap(int k) {
    const std::uint64_t limit = std::uint64_t{1} << 31;
    std::uint64_t b = 2;
    auto pow_k = [k](std::uint64_t v) {
        std::uint64_t r = 1;
        for (int i = 0; i < k; ++i) r *= v;
        return r;
    };
    while (pow_k(b + 1) <= limit) ++b;
    return static_cast<std::uint32_t>(b);
}

struct TreeParams {
    std::size_t bucket_size = 8;  // s
    Real alpha = 0.5;
    Real beta = 0.5;
    BuildPolicy policy = BuildPolicy::Adaptive;
    unsigned depth_cap = 64;
    std::uint32_t b_cap = 0;  // 0 selects default_b_cap(k)
    unsigned workers = 1;

    void validate() const {
        if (bucket_size < 1) throw Error("bucket size must be >= 1");
        if (!(alpha > 0 && alpha <= 1)) throw Error("alpha must be in (0,1]");
        if (!(beta > 0 && beta <= 1)) throw Error("beta must be in (0,1]");
        if (depth_cap < 1) throw Error("depth cap must be >= 1");
        if (b_cap == 1) throw Error("b cap must be >= 2");
    }
};

// ---------------------------------------------------------------------------
// Per-node arithmetic
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t ipow(std::uint64_t base, int k) {
    std::uint64_t r = 1;
    for (int i = 0; i < k; ++i) r *= base;
    return r;
}

// b^k * s >= n without overflow.
inline bool covers(std::uint64_t b, std::size_t s, std::size_t n, int k) {
    unsigned __int128 v = s;
    for (int i = 0; i < k; ++i) v *= b;
    return v >= n;
}

}  // namespace detail

/// Per-dimension branching factor for a node of n particles:
/// ceil((n/s)^(1/k)) clamped into [2, b_cap]. Requires n > s.
inline std::uint32_t compute_branching_factor(std::size_t n, std::size_t s, int k,
                                              std::uint32_t b_cap = 0) {
    if (s < 1) throw Error("bucket size must be >= 1");
    if (k != 2 && k != 3) throw Error("dimension must be 2 or 3");
    if (n <= s) throw Error("no subdivision needed");
    if (b_cap == 0) b_cap = default_b_cap(k);

    const double q = static_cast<double>(n) / static_cast<double>(s);
    auto b = static_cast<std::uint64_t>(std::ceil(k == 3 ? std::cbrt(q) : std::sqrt(q)));
    // The floating-point root can land off an exact integer; settle it exactly.
    while (b > 1 && detail::covers(b - 1, s, n, k)) --b;
    while (!detail::covers(b, s, n, k)) ++b;
    return static_cast<std::uint32_t>(std::clamp<std::uint64_t>(b, 2, std::max<std::uint32_t>(2, b_cap)));
}

/// Sub-cell coordinates of x inside box split b ways per dimension. A point
/// on an upper face is clamped into the last cell.
template <int Dim>
CellCoords<Dim> subcell_coords(const std::type_identity_t<Point<Dim>>& x, const BoundingBox<Dim>& box, std::uint32_t b) {
    if (b < 1) throw Error("branching factor must be >= 1");
    if (!box.contains(x)) throw Error("particle outside cell");
    CellCoords<Dim> c;
    for (int l = 0; l < Dim; ++l) {
        const Real t = std::floor((x[l] - box.min[l]) / (box.max[l] - box.min[l]) * b);
        c[l] = static_cast<std::uint32_t>(std::clamp<Real>(t, 0, b - 1));
    }
    return c;
}

/// Row-major sub-cell id, first dimension fastest.
template <int Dim>
std::uint64_t subcell_index(const CellCoords<Dim>& c, std::uint32_t b) {
    std::uint64_t j = 0;
    std::uint64_t stride = 1;
    for (int l = 0; l < Dim; ++l) {
        if (c[l] >= b) throw Error("sub-cell coordinate out of range");
        j += c[l] * stride;
        stride *= b;
    }
    return j;
}

/// Fraction of all b^k sub-cells holding at most alpha*s particles; `counts`
/// is the dense per-cell table (empty cells are zero).
inline Real distribution_ratio(std::span<const std::uint32_t> counts, Real alpha, std::size_t s) {
    if (counts.empty()) return 0;
    const Real threshold = alpha * static_cast<Real>(s);
    std::size_t under = 0;
    for (auto c : counts)
        if (static_cast<Real>(c) <= threshold) ++under;
    return static_cast<Real>(under) / static_cast<Real>(counts.size());
}

/// Sparse form: only occupied cells are listed; all others count as empty.
inline Real distribution_ratio(const std::map<std::uint64_t, std::uint32_t>& counts, std::uint32_t b, int k,
                               Real alpha, std::size_t s) {
    const std::uint64_t total = detail::ipow(b, k);
    const Real threshold = alpha * static_cast<Real>(s);
    std::uint64_t over = 0;
    for (auto [j, c] : counts) {
        if (j >= total) throw Error("sub-cell id out of range");
        if (static_cast<Real>(c) > threshold) ++over;
    }
    return static_cast<Real>(total - over) / static_cast<Real>(total);
}

namespace detail {

// Affine map from coordinates to fractional sub-cell coordinates of a node.
template <int Dim>
struct CellMap {
    Point<Dim> origin{};
    Point<Dim> scale{};  // b / extent
    std::uint32_t b = 0;

    CellMap() = default;
    CellMap(const BoundingBox<Dim>& box, std::uint32_t b_) : origin(box.min), b(b_) {
        for (int l = 0; l < Dim; ++l) scale[l] = static_cast<Real>(b) / (box.max[l] - box.min[l]);
    }

    std::uint32_t axis_index(Real x, int l) const {
        Real t = (x - origin[l]) * scale[l];
        if (!(t > 0)) return 0;
        return std::min(static_cast<std::uint32_t>(t), b - 1);
    }

    std::uint32_t cell_of(const Point<Dim>& x) const {
        std::uint32_t j = 0;
        std::uint32_t stride = 1;
        for (int l = 0; l < Dim; ++l) {
            j += axis_index(x[l], l) * stride;
            stride *= b;
        }
        return j;
    }

    template <class Coord>
    std::uint32_t cell_of(const Coord& coord, std::size_t i) const {
        std::uint32_t j = 0;
        std::uint32_t stride = 1;
        for (int l = 0; l < Dim; ++l) {
            j += axis_index(coord[l][i], l) * stride;
            stride *= b;
        }
        return j;
    }
};

template <int Dim>
BoundingBox<Dim> child_box(const BoundingBox<Dim>& parent, std::uint32_t b, std::uint32_t j) {
    BoundingBox<Dim> box;
    for (int l = 0; l < Dim; ++l) {
        const std::uint32_t c = j % b;
        j /= b;
        const Real w = parent.max[l] - parent.min[l];
        box.min[l] = parent.min[l] + w * c / b;
        box.max[l] = (c + 1 == b) ? parent.max[l] : parent.min[l] + w * (c + 1) / b;
    }
    return box;
}

// Largest per-dimension split that still leaves every sub-cell a positive
// floating-point width.
template <int Dim>
std::uint32_t resolvable_b(const BoundingBox<Dim>& box) {
    Real limit = std::numeric_limits<Real>::max();
    for (int l = 0; l < Dim; ++l) {
        const Real mag = std::max({std::abs(box.min[l]), std::abs(box.max[l]), std::numeric_limits<Real>::min()});
        const Real q = (box.max[l] - box.min[l]) / (64 * std::numeric_limits<Real>::epsilon() * mag);
        limit = std::min(limit, q);
    }
    if (!(limit >= 2)) return 1;
    return limit > 4e9 ? 4000000000u : static_cast<std::uint32_t>(limit);
}

}  // namespace detail

/// Result of assigning a set of particles to the b^k sub-cells of a box.
/// Particles of cell j are members[offsets[j] .. offsets[j+1]), kept in input
/// order.
struct Distribution {
    std::uint32_t b = 0;
    std::vector<std::uint32_t> counts;
    std::vector<std::size_t> offsets;
    std::vector<Index> members;

    std::span<const Index> cell(std::size_t j) const {
        return std::span<const Index>(members).subspan(offsets[j], offsets[j + 1] - offsets[j]);
    }
};

/// One distribution pass. Per-worker count tables are merged in worker
/// order, so the result does not depend on `workers`.
template <int Dim>
Distribution distribute_once(const ParticleSet<Dim>& particles, std::span<const Index> indices,
                             const BoundingBox<Dim>& box, std::uint32_t b, unsigned workers = 1) {
    if (b < 1) throw Error("branching factor must be >= 1");
    std::array<std::span<const Real>, Dim> coord;
    for (int l = 0; l < Dim; ++l) coord[l] = particles.coord(l);
    for (Index i : indices) {
        if (i >= particles.size()) throw Error("unknown particle index");
        if (!box.contains(particles.position(i))) throw Error("particle outside cell");
    }

    const detail::CellMap<Dim> map(box, b);
    const std::size_t total = detail::ipow(b, Dim);
    std::vector<std::uint32_t> cell(indices.size());
    workers = std::max(1u, workers);
    std::vector<std::vector<std::uint32_t>> local(workers, std::vector<std::uint32_t>(total, 0));
    parallel_for(indices.size(), workers, {Schedule::Static, 1}, [&](Chunk c, unsigned w) {
        auto& counts = local[w];
        for (std::size_t i = c.begin; i < c.end; ++i) {
            cell[i] = map.cell_of(coord, indices[i]);
            ++counts[cell[i]];
        }
    });

    Distribution d;
    d.b = b;
    d.counts.assign(total, 0);
    for (const auto& counts : local)
        for (std::size_t j = 0; j < total; ++j) d.counts[j] += counts[j];
    d.offsets.assign(total + 1, 0);
    for (std::size_t j = 0; j < total; ++j) d.offsets[j + 1] = d.offsets[j] + d.counts[j];
    d.members.resize(indices.size());
    std::vector<std::size_t> cursor(d.offsets.begin(), d.offsets.end() - 1);
    for (std::size_t i = 0; i < indices.size(); ++i) d.members[cursor[cell[i]]++] = indices[i];
    return d;
}

// ---------------------------------------------------------------------------
// Tree
// ---------------------------------------------------------------------------

template <int Dim>
struct TreeNode {
    BoundingBox<Dim> box;
    std::uint32_t b = 0;  // per-dimension branching factor; 0 for leaves
    std::uint32_t depth = 0;
    std::uint32_t count = 0;        // particles under this node
    std::uint32_t begin = 0;        // first of them in Tree::order()
    std::uint32_t cell_id = 0;      // j within the parent
    std::uint32_t first_child = 0;  // children are contiguous, ascending j
    std::uint32_t num_children = 0;
    float ratio = 0;           // distribution ratio at the accepted b
    std::uint16_t rounds = 0;  // halvings performed before b was accepted
    bool capped = false;       // leaf forced by the depth cap or box resolution
    std::size_t slot_offset = 0;

    bool is_leaf() const { return b == 0; }

    // b / extent per dimension, as CellMap computes it.
    Point<Dim> cell_scale() const {
        Point<Dim> sc{};
        for (int l = 0; l < Dim; ++l) sc[l] = static_cast<Real>(b) / (box.max[l] - box.min[l]);
        return sc;
    }
};

struct BuildDiagnostics {
    std::uint32_t max_depth = 0;
    std::size_t total_nodes = 0;
    std::size_t total_leaves = 0;
    std::size_t capped_leaves = 0;
    std::size_t total_rounds = 0;
    std::vector<std::size_t> rounds_histogram;  // [r] = internal nodes needing r halvings
    std::vector<Real> final_ratios;             // one per internal node, node order
    Real mean_branching = 0;                    // over internal nodes
    std::vector<std::size_t> branching_histogram;  // [b] = internal nodes with that b
};

template <int Dim>
class Tree;

namespace detail {
template <int Dim>
Tree<Dim> build_checked(const ParticleSet<Dim>& particles, const BoundingBox<Dim>& box, const TreeParams& params);
}

template <int Dim>
class Tree {
  public:
    using Node = TreeNode<Dim>;

    Tree() = default;

    const Node& root() const { return nodes_.front(); }
    std::span<const Node> nodes() const { return nodes_; }
    const Node& node(std::size_t i) const { return nodes_[i]; }
    std::size_t size() const { return order_.size(); }
    const TreeParams& params() const { return params_; }
    const BoundingBox<Dim>& box() const { return nodes_.front().box; }

    /// Particle indices in depth-first walk order; every node's particles
    /// form the contiguous run [begin, begin + count).
    std::span<const Index> order() const { return order_; }

    std::span<const Index> particles_of(const Node& n) const {
        return std::span<const Index>(order_).subspan(n.begin, n.count);
    }

    /// Leaf bucket: ascending particle indices.
    std::span<const Index> bucket(const Node& n) const {
        if (!n.is_leaf()) throw Error("not a leaf");
        return particles_of(n);
    }

    std::span<const Node> children(const Node& n) const {
        if (n.is_leaf()) return {};
        return std::span<const Node>(nodes_).subspan(n.first_child, n.num_children);
    }

    /// Child in sub-cell j, or nullptr when that sub-cell is empty.
    const Node* child(const Node& n, std::size_t j) const {
        if (n.is_leaf()) return nullptr;
        const std::int32_t rank = child_rank(n, j);
        return rank < 0 ? nullptr : &nodes_[n.first_child + rank];
    }

    /// Rank of the child in sub-cell j among n's children, or -1 if empty.
    std::int32_t child_rank(const Node& n, std::size_t j) const { return decode_slot(slots_[n.slot_offset + j]); }

    // Dense per-cell tables of an internal node, indexed by sub-cell id.
    // Slot values: -1 empty, r >= 0 leaf child of rank r, -(r + 2) internal
    // child of rank r. Starts: position in order() of the cell's first
    // particle (for an empty cell, where it would be).
    const std::int32_t* slot_table(const Node& n) const { return slots_.data() + n.slot_offset; }
    const std::uint32_t* cell_starts(const Node& n) const { return starts_.data() + n.slot_offset; }
    static std::int32_t decode_slot(std::int32_t v) { return v < -1 ? -v - 2 : v; }

    const BuildDiagnostics& diagnostics() const { return diagnostics_; }

  private:
    template <int D>
    friend Tree<D> detail::build_checked(const ParticleSet<D>&, const BoundingBox<D>&, const TreeParams&);

    TreeParams params_;
    std::vector<Node> nodes_;
    std::vector<std::int32_t> slots_;
    std::vector<std::uint32_t> starts_;
    std::vector<Index> order_;
    BuildDiagnostics diagnostics_;
};

template <int Dim>
BuildDiagnostics tree_stats(const Tree<Dim>& tree);

namespace detail {

template <int Dim>
class Builder {
  public:
    using Node = TreeNode<Dim>;

    // A particle as the builder moves it around.
    struct Item {
        Point<Dim> x;
        Index id;
        std::uint32_t cell;  // only set by the two-pass sort
    };

    // Per-worker work tables.
    struct Scratch {
        std::vector<std::uint32_t> counts;
        std::vector<Real> edges;
        std::vector<Item> moved;
        std::vector<std::uint32_t> coarse;
    };

    struct Fragment {
        std::vector<Node> nodes;  // nodes[0] is the fragment root
        std::vector<std::int32_t> slots;
    };

    Builder(const ParticleSet<Dim>& ps, const TreeParams& params)
        : params_(params), b_cap_(params.b_cap ? params.b_cap : default_b_cap(Dim)) {
        for (int l = 0; l < Dim; ++l) coord_[l] = ps.coord(l);
        n_ = ps.size();
        items_.reset(new Item[n_]);  // left uninitialized until the root is sorted
        cells_.reset(new std::uint32_t[n_]);
    }

    std::vector<Index> take_order() const {
        std::vector<Index> order(n_);
        if (root_sorted_)
            for (std::size_t i = 0; i < n_; ++i) order[i] = items_[i].id;
        else
            std::iota(order.begin(), order.end(), Index{0});
        return order;
    }

    // Decides b for `self` and, if it splits, appends its children to
    // `frag`. Does not recurse.
    void split(Fragment& frag, std::size_t self, Scratch& ws, unsigned workers) {
        auto& counts = ws.counts;
        const std::size_t n = frag.nodes[self].count;
        const std::size_t s = params_.bucket_size;
        if (n <= s) {
            frag.nodes[self].b = 0;
            return;
        }
        Node node = frag.nodes[self];
        const std::uint32_t res = resolvable_b(node.box);
        if (node.depth >= params_.depth_cap || res < 2) {
            frag.nodes[self].b = 0;
            frag.nodes[self].capped = true;
            return;
        }

        std::uint32_t b = params_.policy == BuildPolicy::FixedOctree ? 2u
                                                                     : compute_branching_factor(n, s, Dim, b_cap_);
        b = std::min(b, std::max(2u, res));
        std::uint16_t rounds = 0;
        Real ratio = 0;
        std::size_t total = 0;
        // The root reads the input columns; below it, particles sit in
        // items_ in run order.
        const bool root = node.depth == 0;
        Item* run = items_.get() + node.begin;
        while (true) {
            const CellMap<Dim> map(node.box, b);
            total = ipow(b, Dim);
            counts.assign(total, 0);
            auto assign = [&](Chunk c, unsigned) {
                if (root)
                    for (std::size_t i = c.begin; i < c.end; ++i) cells_[i] = map.cell_of(coord_, i);
                else
                    for (std::size_t i = c.begin; i < c.end; ++i) cells_[node.begin + i] = map.cell_of(run[i].x);
            };
            if (workers > 1)
                parallel_for(n, workers, {Schedule::Static, 1}, assign);
            else
                assign({0, n}, 0);
            for (std::size_t i = 0; i < n; ++i) ++counts[cells_[node.begin + i]];
            ratio = distribution_ratio(counts, params_.alpha, s);
            if (params_.policy == BuildPolicy::Adaptive && ratio >= params_.beta && b > 2) {
                b = std::max(2u, b / 2);
                ++rounds;
                continue;
            }
            break;
        }

        // Stable counting sort of this node's run by sub-cell id.
        std::size_t running = 0;
        for (std::size_t j = 0; j < total; ++j) {
            const std::size_t c = counts[j];
            counts[j] = static_cast<std::uint32_t>(running);
            running += c;
        }
        const std::uint32_t* cell = cells_.get() + node.begin;
        auto load = [&](std::size_t i) {
            if (!root) return run[i];
            Item it{};
            for (int l = 0; l < Dim; ++l) it.x[l] = coord_[l][i];
            it.id = static_cast<Index>(i);
            return it;
        };
        if (total >= wide_cells && n >= wide_count) {
            // Wide fan-out: scatter by the high bits of the cell id into a
            // few dozen ranges, then finish each range in cache.
            unsigned shift = 0;
            while ((total >> shift) > coarse_ranges) ++shift;
            auto& coarse = ws.coarse;
            coarse.resize(((total - 1) >> shift) + 1);
            for (std::size_t h = 0; h < coarse.size(); ++h) coarse[h] = counts[h << shift];
            const auto bound = [&](std::size_t h) {
                return h < coarse.size() ? counts[h << shift] : static_cast<std::uint32_t>(n);
            };
            if (root) {
                for (std::size_t i = 0; i < n; ++i) {
                    Item it = load(i);
                    it.cell = cell[i];
                    run[coarse[it.cell >> shift]++] = it;
                }
            } else {
                ws.moved.resize(n);
                for (std::size_t i = 0; i < n; ++i) {
                    Item it = run[i];
                    it.cell = cell[i];
                    ws.moved[coarse[it.cell >> shift]++] = it;
                }
                std::copy_n(ws.moved.begin(), n, run);
            }
            for (std::size_t h = 0; h < coarse.size(); ++h) {
                const std::uint32_t first = bound(h), last = bound(h + 1);
                ws.moved.assign(run + first, run + last);
                for (const Item& it : ws.moved) run[counts[it.cell]++] = it;
            }
        } else if (root) {
            for (std::size_t i = 0; i < n; ++i) run[counts[cell[i]]++] = load(i);
        } else {
            ws.moved.resize(n);
            for (std::size_t i = 0; i < n; ++i) ws.moved[counts[cell[i]]++] = run[i];
            std::copy_n(ws.moved.begin(), n, run);
        }
        root_sorted_ = root_sorted_ || root;

        node.b = b;
        node.rounds = rounds;
        node.ratio = static_cast<float>(ratio);
        node.first_child = static_cast<std::uint32_t>(frag.nodes.size());
        node.slot_offset = frag.slots.size();
        frag.slots.resize(frag.slots.size() + total, -1);

        // Cell edges per dimension, as child_box() computes them.
        ws.edges.resize(static_cast<std::size_t>(Dim) * (b + 1));
        for (int l = 0; l < Dim; ++l) {
            Real* e = ws.edges.data() + static_cast<std::size_t>(l) * (b + 1);
            const Real w = node.box.max[l] - node.box.min[l];
            for (std::uint32_t c = 0; c < b; ++c) e[c] = node.box.min[l] + w * c / b;
            e[b] = node.box.max[l];
        }

        // counts[j] now holds the end offset of cell j.
        std::uint32_t start = 0;
        std::int32_t rank = 0;
        std::array<std::uint32_t, Dim> cc{};  // coordinates of cell j
        for (std::size_t j = 0; j < total; ++j) {
            if (j > 0)
                for (int l = 0; l < Dim && ++cc[l] == b; ++l) cc[l] = 0;
            const std::uint32_t end = counts[j];
            if (end == start) continue;
            Node child;
            for (int l = 0; l < Dim; ++l) {
                const Real* e = ws.edges.data() + static_cast<std::size_t>(l) * (b + 1);
                child.box.min[l] = e[cc[l]];
                child.box.max[l] = e[cc[l] + 1];
            }
            child.depth = node.depth + 1;
            child.count = end - start;
            child.begin = node.begin + start;
            child.cell_id = static_cast<std::uint32_t>(j);
            frag.slots[node.slot_offset + j] = rank++;
            frag.nodes.push_back(child);
            start = end;
        }
        node.num_children = static_cast<std::uint32_t>(rank);
        frag.nodes[self] = node;
    }

    // Depth-first completion of the subtree rooted at frag.nodes[self].
    void grow(Fragment& frag, std::size_t self, Scratch& ws) {
        split(frag, self, ws, 1);
        const Node& node = frag.nodes[self];
        if (node.is_leaf()) return;
        const std::size_t first = node.first_child;
        const std::size_t num = node.num_children;
        for (std::size_t c = first; c < first + num; ++c) grow(frag, c, ws);
    }

    std::vector<Node> nodes;
    std::vector<std::int32_t> slots;

    void run(const BoundingBox<Dim>& box) {
        Fragment top;
        Node root;
        root.box = box;
        root.count = static_cast<std::uint32_t>(n_);
        top.nodes.push_back(root);
        Scratch ws;
        const unsigned workers = std::max(1u, params_.workers);
        split(top, 0, ws, workers);

        const Node r = top.nodes[0];
        const std::size_t num = r.is_leaf() ? 0 : r.num_children;
        if (workers == 1) {
            top.nodes.reserve(4 * n_ / params_.bucket_size + num + 1);
            for (std::size_t i = 0; i < num; ++i) grow(top, r.first_child + i, ws);
            nodes = std::move(top.nodes);
            slots = std::move(top.slots);
            return;
        }

        // Each chunk of root children grows into its own fragment: the
        // chunk's m children first, then their descendants.
        struct Piece {
            std::size_t first;
            std::size_t m;
            Fragment frag;
        };
        std::vector<Piece> pieces;
        std::mutex pieces_mutex;
        parallel_for(num, workers, {Schedule::Dynamic, 16}, [&](Chunk c, unsigned) {
            Piece p{c.begin, c.end - c.begin, {}};
            Scratch local;
            for (std::size_t i = c.begin; i < c.end; ++i) p.frag.nodes.push_back(top.nodes[r.first_child + i]);
            for (std::size_t k = 0; k < p.m; ++k) grow(p.frag, k, local);
            std::lock_guard lock(pieces_mutex);
            pieces.push_back(std::move(p));
        });
        std::sort(pieces.begin(), pieces.end(), [](const Piece& a, const Piece& b) { return a.first < b.first; });

        // Splice in child order: fragment node k < m is root child first + k,
        // node k >= m lands at base + (k - m).
        nodes = std::move(top.nodes);
        slots = std::move(top.slots);
        for (Piece& p : pieces) {
            Fragment& f = p.frag;
            const std::size_t base = nodes.size();
            const std::size_t slot_shift = slots.size();
            for (Node& nd : f.nodes)
                if (!nd.is_leaf()) {
                    nd.first_child = static_cast<std::uint32_t>(nd.first_child + base - p.m);
                    nd.slot_offset += slot_shift;
                }
            std::copy_n(f.nodes.begin(), p.m, nodes.begin() + r.first_child + p.first);
            nodes.insert(nodes.end(), f.nodes.begin() + p.m, f.nodes.end());
            slots.insert(slots.end(), f.slots.begin(), f.slots.end());
            f = Fragment{};
        }
    }

  private:
    static constexpr std::size_t wide_cells = 4096;
    static constexpr std::size_t wide_count = 1 << 16;
    static constexpr std::size_t coarse_ranges = 64;

    TreeParams params_;
    std::uint32_t b_cap_;
    std::array<std::span<const Real>, Dim> coord_;
    std::size_t n_ = 0;
    std::unique_ptr<Item[]> items_;
    std::unique_ptr<std::uint32_t[]> cells_;
    bool root_sorted_ = false;
};

}  // namespace detail

namespace detail {

template <int Dim>
void check_contains(const ParticleSet<Dim>& particles, const BoundingBox<Dim>& box) {
    for (int l = 0; l < Dim; ++l) {
        bool inside = true;
        for (Real v : particles.coord(l)) inside &= v >= box.min[l] && v <= box.max[l];
        if (!inside) throw Error("particle outside cell");
    }
}

}  // namespace detail

/// Builds the tree over all particles. `box` must contain every particle;
/// compute_root_box() gives a suitable one.
template <int Dim>
Tree<Dim> build_tree(const ParticleSet<Dim>& particles, const BoundingBox<Dim>& box, const TreeParams& params) {
    if (particles.empty()) throw Error("empty particle set");
    detail::check_contains(particles, box);
    return detail::build_checked(particles, box, params);
}

/// Builds over compute_root_box(particles).
template <int Dim>
Tree<Dim> build_tree(const ParticleSet<Dim>& particles, const TreeParams& params) {
    return detail::build_checked(particles, compute_root_box(particles), params);
}

namespace detail {

// build_tree() minus the containment check.
template <int Dim>
Tree<Dim> build_checked(const ParticleSet<Dim>& particles, const BoundingBox<Dim>& box, const TreeParams& params) {
    params.validate();
    if (particles.empty()) throw Error("empty particle set");
    if (!box.valid()) throw Error("invalid bounding box");
    if (particles.size() > std::numeric_limits<std::uint32_t>::max()) throw Error("too many particles");

    detail::Builder<Dim> builder(particles, params);
    builder.run(box);

    Tree<Dim> tree;
    tree.params_ = params;
    tree.nodes_ = std::move(builder.nodes);
    tree.slots_ = std::move(builder.slots);
    tree.order_ = builder.take_order();
    tree.starts_.resize(tree.slots_.size());
    for (const auto& nd : tree.nodes_) {
        if (nd.is_leaf()) continue;
        std::int32_t* slot = tree.slots_.data() + nd.slot_offset;
        std::uint32_t* start = tree.starts_.data() + nd.slot_offset;
        std::uint32_t pos = nd.begin;
        for (std::size_t j = 0, total = detail::ipow(nd.b, Dim); j < total; ++j) {
            if (slot[j] >= 0) {
                const auto& c = tree.nodes_[nd.first_child + slot[j]];
                pos = c.begin;
                if (!c.is_leaf()) slot[j] = -slot[j] - 2;
                start[j] = pos;
                pos += c.count;
            } else {
                start[j] = pos;
            }
        }
    }
    tree.diagnostics_ = tree_stats(tree);
    return tree;
}

}  // namespace detail

/// Tallies depth, node counts, halving rounds and branching factors.
template <int Dim>
BuildDiagnostics tree_stats(const Tree<Dim>& tree) {
    BuildDiagnostics d;
    if (tree.nodes().empty()) return d;
    std::size_t branching_sum = 0;
    d.total_nodes = tree.nodes().size();
    for (const auto& nd : tree.nodes()) {
        d.max_depth = std::max(d.max_depth, nd.depth);
        if (nd.is_leaf()) {
            ++d.total_leaves;
            d.capped_leaves += nd.capped;
            continue;
        }
        if (d.rounds_histogram.size() <= nd.rounds) d.rounds_histogram.resize(nd.rounds + 1, 0);
        ++d.rounds_histogram[nd.rounds];
        d.total_rounds += nd.rounds;
        d.final_ratios.push_back(nd.ratio);
        if (d.branching_histogram.size() <= nd.b) d.branching_histogram.resize(nd.b + 1, 0);
        ++d.branching_histogram[nd.b];
        branching_sum += nd.b;
    }
    const std::size_t internal = d.total_nodes - d.total_leaves;
    d.mean_branching = internal ? static_cast<Real>(branching_sum) / static_cast<Real>(internal) : 0;
    return d;
}

}  // namespace abt
