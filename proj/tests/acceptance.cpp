// Acceptance checks. `acceptance <name>` runs one criterion, `acceptance all`
// runs every one; each prints a single PASS/FAIL line.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "abt/bench.hpp"
#include "abt/datagen.hpp"
#include "abt/oracle.hpp"
#include "abt/search.hpp"
#include "abt/tree.hpp"
#include "helpers.hpp"

using namespace abt;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// Desk-scale datasets: non-uniform 1e5 and uniform 1e6, both with h tuned
// to 100 neighbors.
ParticleSet<3> clustered_desk() {
    GenSpec<3> g;
    g.kind = GenKind::CenterClustered;
    g.n = 100000;
    g.seed = 1;
    g.target_neighbors = 100;
    return generate(g, 1);
}

ParticleSet<3> uniform_desk() {
    GenSpec<3> g;
    g.kind = GenKind::UniformRandom;
    g.n = 1000000;
    g.seed = 1;
    g.target_neighbors = 100;
    return generate(g, 1);
}

void save(const std::string& name, const std::vector<BenchRecord>& recs) {
    save_bench_csv("acceptance_" + name + ".csv", recs);
    write_summary(std::cerr, summarize(recs));
}

Outcome worked_example() {
    const auto t0 = Clock::now();
    const auto c = subcell_coords<3>({3.6, 4.2, 0.6}, BoundingBox<3>::cube(0, 5), 10);
    const auto j = subcell_index(c, 10);
    const double ms = seconds_since(t0) * 1e3;
    const bool ok = c[0] == 7 && c[1] == 8 && c[2] == 1 && j == 187 && ms < 1;
    return {ok, fmt("coords (%u,%u,%u) id %llu in %.4f ms", c[0], c[1], c[2], (unsigned long long)j, ms)};
}

Outcome oracle_equivalence() {
    const auto t0 = Clock::now();
    std::size_t runs = 0, mismatched = 0;
    for (const auto& set : abt::testing::correctness_sets()) {
        const auto want = abt::testing::oracle_sets(set.ps);
        for (auto policy : {BuildPolicy::Adaptive, BuildPolicy::FixedOctree})
            for (auto kind : {Schedule::Static, Schedule::Dynamic, Schedule::Guided})
                for (unsigned w : {1u, 4u}) {
                    TreeParams tp;
                    tp.policy = policy;
                    tp.workers = w;
                    const auto tree = build_tree(set.ps, tp);
                    SearchOptions opt;
                    opt.workers = w;
                    opt.schedule.kind = kind;
                    const auto got = to_id_sets(find_neighbors_all(tree, set.ps, opt), set.ps);
                    ++runs;
                    for (std::size_t i = 0; i < got.size(); ++i) mismatched += got[i] != want[i];
                }
    }
    const double secs = seconds_since(t0);
    return {mismatched == 0 && secs < 60,
            fmt("%zu runs, %zu mismatched lists, %.1f s total", runs, mismatched, secs)};
}

Outcome best_case_depth() {
    bool ok = true;
    std::string detail;
    std::set<std::uint64_t> interior_ref;
    std::uint64_t max_ref = 0;
    for (std::size_t m : {8, 16, 32}) {
        const auto box = BoundingBox<3>::cube(0, 1);
        const Real spacing = 1.0 / static_cast<Real>(m);
        const auto ps = gen_lattice<3>(m, box).with_smoothing_lengths(std::vector<Real>(m * m * m, 0.75 * spacing));
        // The root box is the lattice box itself, so cells align with the grid.
        const auto tree = build_tree(ps, box, TreeParams{});
        const auto& d = tree.diagnostics();
        ok = ok && d.max_depth == 1 && d.total_rounds == 0;

        // Visits per query: the largest over all queries, and the set of
        // values seen by queries at least one cell away from the boundary.
        const std::uint32_t b = tree.root().b;
        std::set<std::uint64_t> interior;
        std::uint64_t max_visits = 0;
        for (std::size_t p = 0; p < ps.size(); ++p) {
            SearchStats st;
            find_neighbors_one(tree, ps, p, false, &st);
            max_visits = std::max(max_visits, st.node_visits);
            const auto c = subcell_coords<3>(ps.position(p), tree.box(), b);
            bool inner = true;
            for (int l = 0; l < 3; ++l) inner = inner && c[l] >= 1 && c[l] + 2 <= b;
            if (inner) interior.insert(st.node_visits);
        }
        if (m == 8) {
            interior_ref = interior;
            max_ref = max_visits;
        }
        ok = ok && !interior.empty() && interior == interior_ref && max_visits == max_ref;
        std::string vals;
        for (auto v : interior) vals += (vals.empty() ? "" : "/") + std::to_string(v);
        detail += fmt("m=%zu: depth %u rounds %zu b %u visits/query max %llu interior {%s}; ", m, d.max_depth,
                      d.total_rounds, b, (unsigned long long)max_visits, vals.c_str());
    }
    return {ok, detail};
}

Outcome octree_limit() {
    bool ok = true;
    std::size_t internal = 0;
    std::vector<ParticleSet<3>> sets;
    for (auto& s : abt::testing::correctness_sets()) sets.push_back(std::move(s.ps));
    sets.push_back(gen_center_clustered<3>(100000, BoundingBox<3>::cube(0, 1), 1));
    sets.push_back(gen_uniform_random<3>(100000, BoundingBox<3>::cube(0, 1), 1));
    for (const auto& ps : sets) {
        TreeParams tp;
        tp.policy = BuildPolicy::FixedOctree;
        const auto tree = build_tree(ps, tp);
        for (const auto& nd : tree.nodes())
            if (!nd.is_leaf()) {
                ++internal;
                ok = ok && nd.b == 2;
            }
    }
    // Two-point inputs that force splitting at s = 1: coincident, and a
    // pair 1e-15 apart.
    std::string pairs;
    for (Real gap : {0.0, 1e-15}) {
        const auto ps = abt::testing::make_set<3>({{0.3, 0.3, 0.3}, {0.3 + gap, 0.3, 0.3}}, 1);
        TreeParams tp;
        tp.bucket_size = 1;
        try {
            const auto tree = build_tree(ps, tp);
            ok = ok && tree.diagnostics().max_depth <= tp.depth_cap;
            pairs += fmt(" gap %g: depth %u;", gap, tree.diagnostics().max_depth);
        } catch (const std::exception& e) {
            ok = false;
            pairs += std::string(" error: ") + e.what();
        }
    }
    return {ok, fmt("%zu octree internal nodes checked for b=2;", internal) + pairs};
}

Outcome distribution_ratio_semantics() {
    const std::vector<std::uint32_t> a{4, 8, 8, 8};
    const Real r1 = distribution_ratio(a, 0.5, 8);
    std::vector<std::uint32_t> b(8, 0);
    b[5] = 40;
    const Real r2 = distribution_ratio(b, 0.5, 8);
    const Real r3 = distribution_ratio(std::map<std::uint64_t, std::uint32_t>{{5, 40}}, 2, 3, 0.5, 8);
    return {r1 == 0.25 && r2 == 7.0 / 8.0 && r3 == 7.0 / 8.0, fmt("r = %.17g, %.17g, %.17g", r1, r2, r3)};
}

Outcome directional() {
    const auto t0 = Clock::now();
    const auto ps = uniform_desk();
    BenchConfig cfg;
    cfg.dataset = "uniform1e6";
    cfg.reps = 5;
    const auto recs = run_scaling(ps, {1}, cfg);
    save("directional", recs);
    std::map<std::string, BenchSummary> by;
    for (const auto& s : summarize(recs)) by[s.policy] = s;
    const auto &a = by["adaptive"], &o = by["octree"];
    const double rb = a.build_median / o.build_median, rf = a.find_median / o.find_median;
    return {rb <= 0.8 && rf <= 1.05,
            fmt("build %.3f/%.3f s (ratio %.2f, need <= 0.80), find %.3f/%.3f s (ratio %.3f, need <= 1.05); "
                "%.0f s total",
                a.build_median, o.build_median, rb, a.find_median, o.find_median, rf, seconds_since(t0))};
}

std::size_t argmin_find(const std::vector<BenchSummary>& rows, const std::string& policy) {
    std::size_t best = 0;
    double t = 1e300;
    for (const auto& r : rows)
        if (r.policy == policy && r.find_median < t) {
            t = r.find_median;
            best = r.s;
        }
    return best;
}

std::string curve(const std::vector<BenchSummary>& rows, const std::string& policy) {
    std::string out;
    for (const auto& r : rows)
        if (r.policy == policy) out += fmt("%s%zu:%.3f", out.empty() ? "" : " ", r.s, r.find_median);
    return out;
}

Outcome bucket_sweep() {
    bool ok = true;
    std::string detail;
    auto one = [&](const std::string& name, const ParticleSet<3>& ps) {
        BenchConfig cfg;
        cfg.dataset = name;
        cfg.reps = 5;
        const auto recs = run_bucket_sweep(ps, default_bucket_sizes, cfg);
        save("bucket_" + name, recs);
        const auto rows = summarize(recs);
        const std::size_t sa = argmin_find(rows, "adaptive"), so = argmin_find(rows, "octree");
        ok = ok && sa >= 4 && sa <= 16;
        detail += fmt("%s: adaptive argmin s=%zu [%s], octree argmin s=%zu [%s]; ", name.c_str(), sa,
                      curve(rows, "adaptive").c_str(), so, curve(rows, "octree").c_str());
    };
    one("clustered1e5", clustered_desk());
    one("uniform1e6", uniform_desk());
    return {ok, detail + "need argmin in {4,8,16}"};
}

Outcome beta_sweep() {
    BenchConfig cfg;
    cfg.dataset = "clustered1e5";
    cfg.reps = 5;
    const auto recs = run_beta_sweep(clustered_desk(), default_betas, cfg);
    save("beta", recs);
    bool ok = true;
    double prev = 1e300;
    std::string detail;
    for (const auto& r : summarize(recs)) {
        ok = ok && r.rounds_median <= prev;
        prev = r.rounds_median;
        detail += fmt("beta %.1f: %.0f rounds; ", r.beta, r.rounds_median);
    }
    return {ok, detail};
}

Outcome reorder_blocked() {
    bool ok = true;
    std::string detail;
    for (const auto& set : abt::testing::correctness_sets()) {
        const auto tree = build_tree(set.ps, TreeParams{});
        const auto plain = to_id_sets(find_neighbors_all(tree, set.ps), set.ps);
        const auto r = reorder_particles(tree, set.ps);
        const auto rtree = build_tree(r.particles, TreeParams{});
        const auto blocked = find_neighbors_blocked(rtree, r.particles, 8);
        // Map rows and entries back to original positions via the permutation.
        std::size_t bad = 0;
        for (std::size_t row = 0; row < blocked.size(); ++row) {
            std::vector<Index> mapped;
            for (Index q : blocked[row]) mapped.push_back(set.ps.id(r.permutation[q]));
            std::sort(mapped.begin(), mapped.end());
            bad += mapped != plain[set.ps.id(r.permutation[row])];
        }
        ok = ok && bad == 0;
        detail += fmt("%s: %zu/%zu lists differ; ", set.name.c_str(), bad, blocked.size());
    }
    return {ok, detail};
}

Outcome scaling() {
    const auto ps = uniform_desk();
    BenchConfig cfg;
    cfg.dataset = "uniform1e6";
    cfg.reps = 3;
    const auto recs = run_scaling(ps, {1, 4}, cfg);
    save("scaling", recs);
    double t1 = 0, t4 = 0;
    for (const auto& s : summarize(recs))
        if (s.policy == "adaptive") (s.threads == 1 ? t1 : t4) = s.find_median;
    const double speedup = t1 / t4;
    return {speedup >= 2.5, fmt("adaptive find %.3f s at 1 worker, %.3f s at 4 (speedup %.2f, need >= 2.5); "
                                "hardware threads available: %u",
                                t1, t4, speedup, std::thread::hardware_concurrency())};
}

const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
    {"worked_example", worked_example},
    {"oracle_equivalence", oracle_equivalence},
    {"best_case_depth", best_case_depth},
    {"octree_limit", octree_limit},
    {"distribution_ratio", distribution_ratio_semantics},
    {"directional_performance", directional},
    {"bucket_sweep", bucket_sweep},
    {"beta_sweep", beta_sweep},
    {"reorder_blocked", reorder_blocked},
    {"scaling", scaling},
};

}  // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: acceptance <criterion|all|list>\n";
        return 2;
    }
    const std::string which = argv[1];
    if (which == "list") {
        for (const auto& [name, fn] : criteria) std::cout << name << '\n';
        return 0;
    }
    int failed = 0, ran = 0;
    for (const auto& [name, fn] : criteria) {
        if (which != "all" && which != name) continue;
        ++ran;
        Outcome out;
        try {
            out = fn();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        std::cout << (out.pass ? "PASS " : "FAIL ") << name << ": " << out.detail << std::endl;
        failed += !out.pass;
    }
    if (!ran) {
        std::cerr << "unknown criterion " << which << '\n';
        return 2;
    }
    return failed ? 1 : 0;
}
