#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "abt/core.hpp"
#include "abt/datagen.hpp"
#include "helpers.hpp"

using namespace abt;
using abt::testing::make_set;

TEST(RootBox, TwoPointsGivePaddedUnitCube) {
    const auto ps = make_set<3>({{0, 0, 0}, {1, 1, 1}}, 1);
    const auto box = compute_root_box(ps);
    for (int l = 0; l < 3; ++l) {
        EXPECT_NEAR(box.min[l], -1e-9, 1e-15);
        EXPECT_NEAR(box.max[l], 1 + 1e-9, 1e-15);
    }
    for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_TRUE(box.strictly_contains(ps.position(i)));
}

TEST(RootBox, SinglePointUsesAbsolutePad) {
    const auto ps = make_set<3>({{0, 0, 0}}, 1);
    const auto box = compute_root_box(ps);
    for (int l = 0; l < 3; ++l) {
        EXPECT_DOUBLE_EQ(box.min[l], -1e-12);
        EXPECT_DOUBLE_EQ(box.max[l], 1e-12);
    }
    EXPECT_TRUE(box.valid());
}

TEST(RootBox, LatticePointsAreInterior) {
    const auto ps = gen_lattice<3>(4, BoundingBox<3>::cube(0, 1));
    const auto box = compute_root_box(ps);
    ASSERT_EQ(ps.size(), 64u);
    for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_TRUE(box.strictly_contains(ps.position(i)));
}

TEST(RootBox, LargeCoordinatesStayStrict) {
    const auto ps = make_set<2>({{1e17, -1e17}, {1e17, -1e17}}, 1);
    const auto box = compute_root_box(ps);
    EXPECT_TRUE(box.strictly_contains(ps.position(0)));
}

TEST(RootBox, Errors) {
    EXPECT_THROW(compute_root_box(ParticleSet<3>{}), Error);
    try {
        compute_root_box(ParticleSet<3>{});
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "empty particle set");
    }
}

TEST(ParticleSet, RejectsBadInput) {
    const Real nan = std::numeric_limits<Real>::quiet_NaN();
    EXPECT_THROW(make_set<3>({{nan, 0, 0}}, 1), Error);
    EXPECT_THROW(make_set<3>({{0, 0, 0}}, 0), Error);
    EXPECT_THROW(make_set<3>({{0, 0, 0}}, -1), Error);
    std::array<std::vector<Real>, 2> c{std::vector<Real>{0, 1}, std::vector<Real>{0}};
    EXPECT_THROW(ParticleSet<2>(c, std::vector<Real>(2, 1)), Error);
    std::array<std::vector<Real>, 2> d{std::vector<Real>{0, 1}, std::vector<Real>{0, 1}};
    EXPECT_THROW(ParticleSet<2>(d, std::vector<Real>(2, 1), std::vector<Index>{0, 0}), Error);
}

TEST(ParticleSet, PermutedCarriesIds) {
    const auto ps = make_set<2>({{0, 0}, {1, 0}, {2, 0}}, 1);
    const std::vector<Index> perm{2, 0, 1};
    const auto q = ps.permuted(perm);
    EXPECT_EQ(q.x(0, 0), 2);
    EXPECT_EQ(q.id(0), 2u);
    EXPECT_EQ(q.id(1), 0u);
    const auto inv = invert_permutation(perm);
    const auto back = q.permuted(inv);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back.x(i, 0), ps.x(i, 0));
        EXPECT_EQ(back.id(i), ps.id(i));
    }
}
