#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "abt/datagen.hpp"
#include "abt/tree.hpp"
#include "helpers.hpp"

using namespace abt;
using abt::testing::make_set;

TEST(BranchingFactor, Examples) {
    EXPECT_EQ(compute_branching_factor(1000, 8, 3), 5u);
    EXPECT_EQ(compute_branching_factor(9, 8, 3), 2u);
    EXPECT_EQ(compute_branching_factor(1000000, 8, 3), 50u);
}

TEST(BranchingFactor, ExactCubesAndNeighbors) {
    for (std::uint64_t b = 2; b < 400; ++b) {
        const std::size_t n = b * b * b * 3;
        EXPECT_EQ(compute_branching_factor(n, 3, 3), b);
        EXPECT_EQ(compute_branching_factor(n + 1, 3, 3), b + 1);
    }
    for (std::uint64_t b = 2; b < 3000; b += 7) EXPECT_EQ(compute_branching_factor(b * b * 5, 5, 2), b);
}

TEST(BranchingFactor, CapAndErrors) {
    EXPECT_EQ(compute_branching_factor(1000000, 1, 3, 10), 10u);
    EXPECT_THROW(compute_branching_factor(8, 8, 3), Error);
    EXPECT_THROW(compute_branching_factor(100, 0, 3), Error);
    EXPECT_THROW(compute_branching_factor(100, 8, 4), Error);
}

TEST(SubcellCoords, WorkedExample) {
    const auto box = BoundingBox<3>::cube(0, 5);
    const auto c = subcell_coords<3>({3.6, 4.2, 0.6}, box, 10);
    EXPECT_EQ(c[0], 7u);
    EXPECT_EQ(c[1], 8u);
    EXPECT_EQ(c[2], 1u);
    EXPECT_EQ(subcell_index(c, 10), 187u);
}

TEST(SubcellCoords, BoundsAndClamp) {
    const auto box = BoundingBox<3>::cube(0, 5);
    EXPECT_EQ(subcell_coords<3>({0, 0, 0}, box, 7), (CellCoords<3>{{0, 0, 0}}));
    EXPECT_EQ(subcell_coords<3>({5, 5, 5}, box, 7), (CellCoords<3>{{6, 6, 6}}));
    EXPECT_THROW(subcell_coords<3>({5.1, 0, 0}, box, 7), Error);
}

TEST(SubcellIndex, Examples) {
    EXPECT_EQ(subcell_index(CellCoords<3>{{0, 0, 0}}, 9), 0u);
    EXPECT_EQ(subcell_index(CellCoords<3>{{8, 8, 8}}, 9), 9u * 9 * 9 - 1);
    EXPECT_EQ(subcell_index(CellCoords<2>{{3, 2}}, 5), 13u);
    EXPECT_THROW(subcell_index(CellCoords<3>{{9, 0, 0}}, 9), Error);
}

TEST(DistributionRatio, Examples) {
    const std::vector<std::uint32_t> full{8, 8, 8, 8};
    EXPECT_EQ(distribution_ratio(full, 0.5, 8), 0.0);
    const std::vector<std::uint32_t> one_low{4, 8, 8, 8};
    EXPECT_EQ(distribution_ratio(one_low, 0.5, 8), 0.25);  // 4 <= alpha*s counts as underfull
    const std::vector<std::uint32_t> one_small{1, 8, 8, 8};
    EXPECT_EQ(distribution_ratio(one_small, 0.5, 8), 0.25);
    std::map<std::uint64_t, std::uint32_t> single{{3, 20}};
    EXPECT_EQ(distribution_ratio(single, 2, 3, 0.5, 8), 7.0 / 8.0);
    std::map<std::uint64_t, std::uint32_t> sparse{{0, 4}, {1, 8}, {2, 8}, {3, 8}};
    EXPECT_EQ(distribution_ratio(sparse, 2, 2, 0.5, 8), 0.25);
}

TEST(DistributeOnce, LatticeSplitsEvenly) {
    const auto ps = gen_lattice<3>(4, BoundingBox<3>::cube(0, 1));
    std::vector<Index> idx(ps.size());
    std::iota(idx.begin(), idx.end(), Index{0});
    const auto d = distribute_once(ps, idx, BoundingBox<3>::cube(0, 1), 2);
    ASSERT_EQ(d.counts.size(), 8u);
    for (auto c : d.counts) EXPECT_EQ(c, 8u);
}

TEST(DistributeOnce, CoincidentPointsShareOneCell) {
    const auto ps = make_set<3>(std::vector<Point<3>>(10, {0.3, 0.3, 0.3}), 1);
    std::vector<Index> idx(10);
    std::iota(idx.begin(), idx.end(), Index{0});
    const auto d = distribute_once(ps, idx, BoundingBox<3>::cube(0, 1), 4);
    EXPECT_EQ(std::count(d.counts.begin(), d.counts.end(), 10u), 1);
    EXPECT_EQ(std::accumulate(d.counts.begin(), d.counts.end(), 0u), 10u);
}

TEST(DistributeOnce, MatchesScalarAssignmentAndIgnoresWorkers) {
    const auto box = BoundingBox<3>::cube(0, 1);
    const auto ps = gen_uniform_random<3>(100, box, 3);
    std::vector<Index> idx(ps.size());
    std::iota(idx.begin(), idx.end(), Index{0});
    const auto d = distribute_once(ps, idx, box, 3);
    std::vector<std::uint32_t> ref(27, 0);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        std::size_t j = 0, stride = 1;
        for (int l = 0; l < 3; ++l) {
            const auto c = std::min<std::size_t>(2, static_cast<std::size_t>(std::floor(ps.x(i, l) * 3)));
            j += c * stride;
            stride *= 3;
        }
        ++ref[j];
    }
    EXPECT_EQ(d.counts, ref);
    EXPECT_EQ(std::accumulate(d.counts.begin(), d.counts.end(), 0u), 100u);
    const auto d4 = distribute_once(ps, idx, box, 3, 4);
    EXPECT_EQ(d4.counts, d.counts);
    EXPECT_EQ(d4.members, d.members);
}

namespace {

template <int Dim>
void check_invariants(const Tree<Dim>& tree, const ParticleSet<Dim>& ps) {
    const std::size_t s = tree.params().bucket_size;
    std::vector<int> seen(ps.size(), 0);
    std::size_t leaf_total = 0;
    for (const auto& nd : tree.nodes()) {
        if (nd.is_leaf()) {
            auto bucket = tree.bucket(nd);
            ASSERT_TRUE(std::is_sorted(bucket.begin(), bucket.end()));
            if (!nd.capped) {
                ASSERT_LE(bucket.size(), s);
            }
            leaf_total += bucket.size();
            for (Index i : bucket) {
                ++seen[i];
                ASSERT_TRUE(nd.box.contains(ps.position(i)));
            }
            continue;
        }
        ASSERT_GE(nd.b, 2u);
        std::size_t sum = 0;
        for (const auto& c : tree.children(nd)) {
            sum += c.count;
            ASSERT_EQ(c.depth, nd.depth + 1);
            ASSERT_EQ(c.box, detail::child_box(nd.box, nd.b, c.cell_id));
            ASSERT_EQ(tree.child(nd, c.cell_id), &c);
        }
        ASSERT_EQ(sum, nd.count);
    }
    EXPECT_EQ(leaf_total, ps.size());
    for (int v : seen) ASSERT_EQ(v, 1);
}

std::vector<ParticleSet<3>> build_inputs() {
    const auto box = BoundingBox<3>::cube(0, 1);
    return {gen_lattice<3>(10, box), gen_uniform_random<3>(5000, box, 1), gen_center_clustered<3>(5000, box, 2)};
}

}  // namespace

TEST(BuildTree, LatticeIsOneLevel) {
    const auto ps = gen_lattice<3>(4, BoundingBox<3>::cube(0, 1));
    const auto tree = build_tree(ps, TreeParams{});
    EXPECT_EQ(tree.root().b, 2u);
    EXPECT_EQ(tree.root().num_children, 8u);
    for (const auto& c : tree.children(tree.root())) {
        EXPECT_TRUE(c.is_leaf());
        EXPECT_EQ(c.count, 8u);
    }
    EXPECT_EQ(tree.diagnostics().max_depth, 1u);
    EXPECT_EQ(tree.diagnostics().total_leaves, 8u);
    EXPECT_EQ(tree.diagnostics().total_rounds, 0u);
}

TEST(BuildTree, SmallSetIsSingleLeaf) {
    const auto ps = make_set<3>({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, 1);
    const auto tree = build_tree(ps, TreeParams{});
    EXPECT_TRUE(tree.root().is_leaf());
    EXPECT_EQ(tree.diagnostics().max_depth, 0u);
    EXPECT_EQ(tree.diagnostics().total_nodes, 1u);
    EXPECT_EQ(tree.bucket(tree.root()).size(), 3u);
}

TEST(BuildTree, CoincidentPointsStopAtCap) {
    auto pts = std::vector<Point<3>>(9, {0.5, 0.5, 0.5});
    pts.push_back({0, 0, 0});
    const auto ps = make_set<3>(pts, 1);
    TreeParams tp;
    tp.depth_cap = 20;
    const auto tree = build_tree(ps, tp);
    EXPECT_LE(tree.diagnostics().max_depth, 20u);
    EXPECT_EQ(tree.diagnostics().capped_leaves, 1u);
    check_invariants(tree, ps);
}

TEST(BuildTree, InvalidParams) {
    const auto ps = make_set<3>({{0, 0, 0}}, 1);
    TreeParams tp;
    tp.bucket_size = 0;
    EXPECT_THROW(build_tree(ps, tp), Error);
    tp = {};
    tp.alpha = 0;
    EXPECT_THROW(build_tree(ps, tp), Error);
    tp = {};
    tp.beta = 1.5;
    EXPECT_THROW(build_tree(ps, tp), Error);
    tp = {};
    tp.depth_cap = 0;
    EXPECT_THROW(build_tree(ps, tp), Error);
    EXPECT_THROW(build_tree(make_set<3>({{2, 0, 0}}, 1), BoundingBox<3>::cube(0, 1), TreeParams{}), Error);
}

TEST(BuildTree, InvariantsAcrossInputsAndParams) {
    for (const auto& ps : build_inputs())
        for (auto policy : {BuildPolicy::Adaptive, BuildPolicy::FixedOctree})
            for (std::size_t s : {1, 3, 8, 40}) {
                TreeParams tp;
                tp.policy = policy;
                tp.bucket_size = s;
                check_invariants(build_tree(ps, tp), ps);
            }
    const auto ps2 = gen_center_clustered<2>(3000, BoundingBox<2>::cube(-1, 1), 4);
    check_invariants(build_tree(ps2, TreeParams{}), ps2);
}

TEST(BuildTree, OctreePolicyAlwaysHalves) {
    for (const auto& ps : build_inputs()) {
        TreeParams tp;
        tp.policy = BuildPolicy::FixedOctree;
        const auto tree = build_tree(ps, tp);
        for (const auto& nd : tree.nodes()) {
            if (!nd.is_leaf()) {
                ASSERT_EQ(nd.b, 2u);
            }
        }
        EXPECT_EQ(tree.diagnostics().total_rounds, 0u);
    }
}

TEST(BuildTree, OctreeMatchesAdaptiveWhenEveryNodePicksTwo) {
    // n <= 8s at every node: the adaptive factor is 2 throughout.
    const auto ps = gen_lattice<3>(4, BoundingBox<3>::cube(0, 1));
    for (std::size_t s : {8, 16, 40}) {
        TreeParams a;
        a.bucket_size = s;
        TreeParams o = a;
        o.policy = BuildPolicy::FixedOctree;
        const auto ta = build_tree(ps, a), to = build_tree(ps, o);
        ASSERT_EQ(ta.nodes().size(), to.nodes().size());
        for (std::size_t k = 0; k < ta.nodes().size(); ++k) {
            EXPECT_EQ(ta.node(k).b, to.node(k).b);
            EXPECT_EQ(ta.node(k).box, to.node(k).box);
        }
        EXPECT_TRUE(std::equal(ta.order().begin(), ta.order().end(), to.order().begin()));
    }
}

TEST(BuildTree, HalvingRoundsBounded) {
    for (const auto& ps : build_inputs()) {
        TreeParams tp;
        tp.beta = 0.1;
        const auto tree = build_tree(ps, tp);
        for (const auto& nd : tree.nodes()) {
            if (nd.is_leaf()) continue;
            const auto b0 = compute_branching_factor(nd.count, tp.bucket_size, 3);
            // b0 halved `rounds` times gives the accepted b.
            std::uint32_t b = b0;
            for (unsigned r = 0; r < nd.rounds; ++r) b = std::max(2u, b / 2);
            EXPECT_EQ(b, nd.b);
            EXPECT_LE(nd.rounds, static_cast<unsigned>(std::ceil(std::log2(b0))));
        }
    }
}

TEST(BuildTree, SameTreeForAnyWorkerCount) {
    for (const auto& ps : build_inputs())
        for (auto policy : {BuildPolicy::Adaptive, BuildPolicy::FixedOctree}) {
            TreeParams tp;
            tp.policy = policy;
            const auto t1 = build_tree(ps, tp);
            tp.workers = 4;
            const auto t4 = build_tree(ps, tp);
            ASSERT_EQ(t1.nodes().size(), t4.nodes().size());
            for (std::size_t k = 0; k < t1.nodes().size(); ++k) {
                const auto &a = t1.node(k), &b = t4.node(k);
                ASSERT_EQ(a.b, b.b);
                ASSERT_EQ(a.cell_id, b.cell_id);
                ASSERT_EQ(a.count, b.count);
                ASSERT_EQ(a.begin, b.begin);
                ASSERT_EQ(a.box, b.box);
            }
            EXPECT_TRUE(std::equal(t1.order().begin(), t1.order().end(), t4.order().begin()));
        }
}

// Large nodes with many sub-cells take a two-pass sort; buckets must still
// come out stable (ascending positions) at the root and below it.
TEST(BuildTree, WideFanOutAtRootAndBelow) {
    const auto box = BoundingBox<3>::cube(0, 1);
    const auto uniform = gen_uniform_random<3>(100000, box, 5);
    auto packed = gen_uniform_random<3>(100000, BoundingBox<3>::cube(0, 0.1), 6);
    std::array<std::vector<Real>, 3> c;
    for (int l = 0; l < 3; ++l) {
        c[l].assign(packed.coord(l).begin(), packed.coord(l).end());
        c[l].push_back(1);
    }
    std::vector<Real> h(packed.h().begin(), packed.h().end());
    h.push_back(0.01);
    const ParticleSet<3> corner(c, h);

    for (const auto* ps : {&uniform, &corner}) {
        const auto tree = build_tree(*ps, TreeParams{});
        check_invariants(tree, *ps);
        bool wide = false;
        for (const auto& nd : tree.nodes()) wide = wide || (nd.count >= 65536 && nd.b >= 16);
        EXPECT_TRUE(wide);
    }
    const auto tree = build_tree(corner, TreeParams{});
    EXPECT_EQ(tree.root().b, 2u);
}

TEST(TreeStats, Examples) {
    const auto leaf = build_tree(make_set<3>({{0, 0, 0}}, 1), TreeParams{});
    EXPECT_EQ(tree_stats(leaf).max_depth, 0u);
    EXPECT_EQ(tree_stats(leaf).total_nodes, 1u);

    const auto lat = build_tree(gen_lattice<3>(4, BoundingBox<3>::cube(0, 1)), TreeParams{});
    EXPECT_EQ(tree_stats(lat).max_depth, 1u);
    EXPECT_EQ(tree_stats(lat).total_leaves, 8u);

    const auto ps = gen_center_clustered<3>(10000, BoundingBox<3>::cube(0, 1), 5);
    TreeParams o;
    o.policy = BuildPolicy::FixedOctree;
    EXPECT_LE(build_tree(ps, TreeParams{}).diagnostics().max_depth, build_tree(ps, o).diagnostics().max_depth);
}
