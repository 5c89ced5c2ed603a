#pragma once

// Benchmark harness: timed build + all-particles search over parameter
// sweeps, CSV records, and a walk-order slice export (CSV + SVG).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "abt/core.hpp"
#include "abt/datagen.hpp"
#include "abt/io.hpp"
#include "abt/oracle.hpp"
#include "abt/parallel.hpp"
#include "abt/search.hpp"
#include "abt/tree.hpp"

namespace abt {

struct BenchRecord {
    std::string experiment;
    std::string dataset;
    std::size_t n = 0;
    std::string policy;
    std::size_t s = 0;
    Real alpha = 0;
    Real beta = 0;
    unsigned threads = 1;
    std::string schedule;
    unsigned repetition = 0;
    Real build_time_s = 0;
    Real find_time_s = 0;
    std::uint32_t max_depth = 0;
    std::size_t total_nodes = 0;
    Real mean_neighbors = 0;
    std::size_t redistribution_rounds = 0;
    Real mean_branching = 0;
    std::string validation;  // "pass", "fail" or "skipped"
};

inline constexpr const char* bench_csv_header =
    "experiment,dataset,n,policy,s,alpha,beta,threads,schedule,repetition,build_time_s,find_time_s,"
    "max_depth,total_nodes,mean_neighbors,redistribution_rounds,mean_branching,validation";

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRecord>& records) {
    os << bench_csv_header << '\n';
    char buf[64];
    auto real = [&](Real v) {
        std::snprintf(buf, sizeof buf, "%.9g", v);
        return std::string(buf);
    };
    for (const auto& r : records)
        os << r.experiment << ',' << r.dataset << ',' << r.n << ',' << r.policy << ',' << r.s << ',' << real(r.alpha)
           << ',' << real(r.beta) << ',' << r.threads << ',' << r.schedule << ',' << r.repetition << ','
           << real(r.build_time_s) << ',' << real(r.find_time_s) << ',' << r.max_depth << ',' << r.total_nodes << ','
           << real(r.mean_neighbors) << ',' << r.redistribution_rounds << ',' << real(r.mean_branching) << ','
           << r.validation << '\n';
    if (!os) throw Error("CSV write failed");
}

inline void save_bench_csv(const std::string& path, const std::vector<BenchRecord>& records) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path);
    write_bench_csv(out, records);
}

/// Settings shared by every run of an experiment.
struct BenchConfig {
    std::string dataset = "dataset";
    TreeParams tree{};
    unsigned threads = 1;
    ScheduleSpec schedule{};
    unsigned reps = 5;
    bool warmup = true;
    std::uint64_t seed = 1;  // picks the validation sample
    std::size_t validate_max_n = 100000;
};

inline Real median(std::vector<Real> v) {
    if (v.empty()) return 0;
    const std::size_t m = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + m, v.end());
    if (v.size() % 2) return v[m];
    const Real hi = v[m];
    return (*std::max_element(v.begin(), v.begin() + m) + hi) / 2;
}

inline Real mean(const std::vector<Real>& v) {
    return v.empty() ? 0 : std::accumulate(v.begin(), v.end(), Real(0)) / static_cast<Real>(v.size());
}

namespace detail {

/// One parameter point of a sweep.
struct RunSpec {
    TreeParams tree;
    unsigned threads = 1;
};

/// Compares 1% of the rows (at least one) against the brute-force finder.
template <int Dim>
bool spot_check(const ParticleSet<Dim>& ps, const NeighborTable& table, std::uint64_t seed) {
    const std::size_t n = ps.size();
    const std::size_t samples = std::max<std::size_t>(1, n / 100);
    UnitRng rng(seed);
    for (std::size_t k = 0; k < samples; ++k) {
        const auto p = std::min(n - 1, static_cast<std::size_t>(rng() * static_cast<Real>(n)));
        std::vector<Index> got(table[p].begin(), table[p].end());
        std::sort(got.begin(), got.end());
        if (got != brute_force_neighbors_of(ps, p)) return false;
    }
    return true;
}

template <int Dim>
BenchRecord timed_run(const ParticleSet<Dim>& ps, const RunSpec& run, const BenchConfig& cfg, bool validate) {
    using clock = std::chrono::steady_clock;
    TreeParams tp = run.tree;
    tp.workers = run.threads;

    const auto t0 = clock::now();
    const Tree<Dim> tree = build_tree(ps, tp);
    const auto t1 = clock::now();
    SearchOptions opt;
    opt.workers = run.threads;
    opt.schedule = cfg.schedule;
    const NeighborTable table = find_neighbors_all(tree, ps, opt);
    const auto t2 = clock::now();

    const auto& d = tree.diagnostics();
    BenchRecord r;
    r.dataset = cfg.dataset;
    r.n = ps.size();
    r.policy = std::string(to_string(tp.policy));
    r.s = tp.bucket_size;
    r.alpha = tp.alpha;
    r.beta = tp.beta;
    r.threads = run.threads;
    r.schedule = std::string(to_string(cfg.schedule.kind));
    r.build_time_s = std::chrono::duration<Real>(t1 - t0).count();
    r.find_time_s = std::chrono::duration<Real>(t2 - t1).count();
    r.max_depth = d.max_depth;
    r.total_nodes = d.total_nodes;
    r.mean_neighbors = table.mean_count();
    r.redistribution_rounds = d.total_rounds;
    r.mean_branching = d.mean_branching;
    if (ps.size() > cfg.validate_max_n)
        r.validation = "skipped";
    else if (validate)
        r.validation = spot_check(ps, table, cfg.seed) ? "pass" : "fail";
    return r;
}

/// Warms up every point once, then runs cfg.reps rounds over all points so
/// slow drift in machine speed spreads evenly across them. Validation runs
/// on the first round; later rounds repeat its verdict.
template <int Dim>
std::vector<BenchRecord> run_points(const ParticleSet<Dim>& ps, const std::string& experiment,
                                    const std::vector<RunSpec>& points, const BenchConfig& cfg) {
    if (cfg.reps < 1) throw Error("reps must be >= 1");
    if (cfg.warmup)
        for (const auto& p : points) timed_run(ps, p, cfg, false);
    std::vector<BenchRecord> out;
    std::vector<std::string> verdicts(points.size());
    for (unsigned rep = 0; rep < cfg.reps; ++rep)
        for (std::size_t k = 0; k < points.size(); ++k) {
            BenchRecord r = timed_run(ps, points[k], cfg, rep == 0);
            if (rep == 0)
                verdicts[k] = r.validation;
            else
                r.validation = verdicts[k];
            r.experiment = experiment;
            r.repetition = rep;
            out.push_back(std::move(r));
        }
    return out;
}

inline const BuildPolicy both_policies[] = {BuildPolicy::Adaptive, BuildPolicy::FixedOctree};

}  // namespace detail

/// One record per (policy, threads, rep), both policies.
template <int Dim>
std::vector<BenchRecord> run_scaling(const ParticleSet<Dim>& ps, const std::vector<unsigned>& threads,
                                     const BenchConfig& cfg) {
    if (threads.empty()) throw Error("no thread counts given");
    std::vector<detail::RunSpec> points;
    for (unsigned t : threads) {
        if (t < 1) throw Error("thread count must be >= 1");
        for (BuildPolicy p : detail::both_policies) {
            detail::RunSpec rs{cfg.tree, t};
            rs.tree.policy = p;
            points.push_back(rs);
        }
    }
    return detail::run_points(ps, "scaling", points, cfg);
}

inline const std::vector<std::size_t> default_bucket_sizes{2, 4, 8, 16, 32, 64};
inline const std::vector<Real> default_betas{0.1, 0.3, 0.5, 0.7, 0.9};

/// Records for every s, both policies: 2 * |s_values| per rep.
template <int Dim>
std::vector<BenchRecord> run_bucket_sweep(const ParticleSet<Dim>& ps, const std::vector<std::size_t>& s_values,
                                          const BenchConfig& cfg) {
    std::vector<detail::RunSpec> points;
    for (std::size_t s : s_values) {
        if (s < 1) throw Error("bucket size must be >= 1");
        for (BuildPolicy p : detail::both_policies) {
            detail::RunSpec rs{cfg.tree, cfg.threads};
            rs.tree.bucket_size = s;
            rs.tree.policy = p;
            points.push_back(rs);
        }
    }
    return detail::run_points(ps, "sweep-bucket", points, cfg);
}

/// Adaptive policy only, one record per beta per rep.
template <int Dim>
std::vector<BenchRecord> run_beta_sweep(const ParticleSet<Dim>& ps, const std::vector<Real>& betas,
                                        const BenchConfig& cfg) {
    std::vector<detail::RunSpec> points;
    for (Real beta : betas) {
        if (!(beta > 0 && beta <= 1)) throw Error("beta must be in (0, 1]");
        detail::RunSpec rs{cfg.tree, cfg.threads};
        rs.tree.beta = beta;
        rs.tree.policy = BuildPolicy::Adaptive;
        points.push_back(rs);
    }
    return detail::run_points(ps, "sweep-beta", points, cfg);
}

/// Runs of a single configuration (used by the build/find subcommands).
template <int Dim>
std::vector<BenchRecord> run_single(const ParticleSet<Dim>& ps, const std::string& experiment, const BenchConfig& cfg) {
    return detail::run_points(ps, experiment, {detail::RunSpec{cfg.tree, cfg.threads}}, cfg);
}

/// Median and mean over the repetitions of one parameter point.
struct BenchSummary {
    std::string experiment, dataset, policy, schedule;
    std::size_t n = 0, s = 0;
    Real alpha = 0, beta = 0;
    unsigned threads = 1;
    std::size_t reps = 0;
    Real build_median = 0, build_mean = 0;
    Real find_median = 0, find_mean = 0;
    Real rounds_median = 0;
    std::uint32_t max_depth = 0;
    Real mean_neighbors = 0;
    std::string validation;
};

/// Groups records by parameter tuple, in order of first appearance.
inline std::vector<BenchSummary> summarize(const std::vector<BenchRecord>& records) {
    using Key = std::tuple<std::string, std::string, std::string, std::string, std::size_t, std::size_t, Real, Real,
                           unsigned>;
    std::map<Key, std::size_t> index;
    std::vector<BenchSummary> out;
    std::vector<std::vector<Real>> builds, finds, rounds;
    for (const auto& r : records) {
        const Key key{r.experiment, r.dataset, r.policy, r.schedule, r.n, r.s, r.alpha, r.beta, r.threads};
        auto [it, fresh] = index.try_emplace(key, out.size());
        if (fresh) {
            BenchSummary s;
            s.experiment = r.experiment;
            s.dataset = r.dataset;
            s.policy = r.policy;
            s.schedule = r.schedule;
            s.n = r.n;
            s.s = r.s;
            s.alpha = r.alpha;
            s.beta = r.beta;
            s.threads = r.threads;
            s.max_depth = r.max_depth;
            s.mean_neighbors = r.mean_neighbors;
            s.validation = r.validation;
            out.push_back(s);
            builds.emplace_back();
            finds.emplace_back();
            rounds.emplace_back();
        }
        const std::size_t k = it->second;
        builds[k].push_back(r.build_time_s);
        finds[k].push_back(r.find_time_s);
        rounds[k].push_back(static_cast<Real>(r.redistribution_rounds));
    }
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k].reps = builds[k].size();
        out[k].build_median = median(builds[k]);
        out[k].build_mean = mean(builds[k]);
        out[k].find_median = median(finds[k]);
        out[k].find_mean = mean(finds[k]);
        out[k].rounds_median = median(rounds[k]);
    }
    return out;
}

inline void write_summary(std::ostream& os, const std::vector<BenchSummary>& rows) {
    char line[512];
    std::snprintf(line, sizeof line, "%-12s %-9s %4s %5s %5s %3s %-8s %10s %10s %10s %10s %7s %5s %9s %s\n",
                  "experiment", "policy", "s", "alpha", "beta", "thr", "schedule", "build_med", "build_mean",
                  "find_med", "find_mean", "rounds", "depth", "mean_nbrs", "check");
    os << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line,
                      "%-12s %-9s %4zu %5.2f %5.2f %3u %-8s %10.4f %10.4f %10.4f %10.4f %7.0f %5u %9.2f %s\n",
                      r.experiment.c_str(), r.policy.c_str(), r.s, r.alpha, r.beta, r.threads, r.schedule.c_str(),
                      r.build_median, r.build_mean, r.find_median, r.find_mean, r.rounds_median, r.max_depth,
                      r.mean_neighbors, r.validation.c_str());
        os << line;
    }
}

// ---------------------------------------------------------------------------
// Walk-order slice export
// ---------------------------------------------------------------------------

struct SliceCell {
    std::size_t node = 0;    // index into Tree::nodes()
    std::uint32_t depth = 0;
    std::size_t ordinal = 0;  // position among all leaves in depth-first order
    std::size_t block = 0;    // ordinal / leaves_per_block
    std::vector<Real> min, max;
};

struct SliceExport {
    std::vector<SliceCell> cells;  // ascending ordinal
    std::set<std::uint32_t> depths;
    std::string csv_path, svg_path;
};

/// Leaves cut by the plane x_axis = coordinate, in walk order. Cells are
/// half-open along the axis, so a plane on a cell face selects the upper
/// cell only (the root's upper face still selects the top cells). A 2-D
/// tree is its own slice: every leaf is returned and axis is ignored.
template <int Dim>
std::vector<SliceCell> walk_slice(const Tree<Dim>& tree, int axis, Real coordinate, std::size_t leaves_per_block = 8) {
    if (leaves_per_block < 1) throw Error("block size must be >= 1");
    const auto& root = tree.box();
    if constexpr (Dim == 3) {
        if (axis < 0 || axis >= Dim) throw Error("invalid slice axis");
        if (!(coordinate >= root.min[axis] && coordinate <= root.max[axis]))
            throw Error("slice coordinate outside root box");
    }
    std::vector<SliceCell> cells;
    const auto leaves = leaves_in_walk_order(tree);
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        const auto& box = leaves[k]->box;
        if constexpr (Dim == 3) {
            const bool top = box.max[axis] == root.max[axis];
            if (coordinate < box.min[axis] || (coordinate >= box.max[axis] && !(top && coordinate == box.max[axis])))
                continue;
        }
        SliceCell c;
        c.node = static_cast<std::size_t>(leaves[k] - tree.nodes().data());
        c.depth = leaves[k]->depth;
        c.ordinal = k;
        c.block = k / leaves_per_block;
        c.min.assign(box.min.begin(), box.min.end());
        c.max.assign(box.max.begin(), box.max.end());
        cells.push_back(std::move(c));
    }
    return cells;
}

/// Writes the slice as CSV to `path` and as SVG next to it (same stem,
/// .svg extension). Rectangles are colored by block; a polyline joins the
/// cell centers in visit order.
template <int Dim>
SliceExport export_walk_slice(const Tree<Dim>& tree, int axis, Real coordinate, const std::string& path,
                              std::size_t leaves_per_block = 8) {
    SliceExport ex;
    ex.cells = walk_slice(tree, axis, coordinate, leaves_per_block);
    for (const auto& c : ex.cells) ex.depths.insert(c.depth);

    std::filesystem::path p(path);
    ex.csv_path = path;
    ex.svg_path = std::filesystem::path(p).replace_extension(".svg").string();
    if (ex.svg_path == ex.csv_path) ex.svg_path += ".svg";

    {
        std::ofstream csv(ex.csv_path);
        if (!csv) throw Error("cannot open for writing: " + ex.csv_path);
        csv << "cell,depth";
        const char* names = "xyz";
        for (int l = 0; l < Dim; ++l) csv << ",min_" << names[l] << ",max_" << names[l];
        csv << ",visit,block\n";
        for (const auto& c : ex.cells) {
            csv << c.node << ',' << c.depth;
            for (int l = 0; l < Dim; ++l) {
                csv << ',';
                detail::put_real(csv, c.min[l]);
                csv << ',';
                detail::put_real(csv, c.max[l]);
            }
            csv << ',' << c.ordinal << ',' << c.block << '\n';
        }
        if (!csv) throw Error("CSV write failed");
    }

    // In-plane axes: the two that are not sliced (3-D) or both (2-D).
    int u = 0, v = 1;
    if constexpr (Dim == 3) {
        u = axis == 0 ? 1 : 0;
        v = axis == 2 ? 1 : 2;
    }
    const auto& root = tree.box();
    const Real size = 800;
    const Real sx = size / root.extent(u), sy = size / root.extent(v);
    auto X = [&](Real x) { return (x - root.min[u]) * sx; };
    auto Y = [&](Real y) { return size - (y - root.min[v]) * sy; };

    std::ofstream svg(ex.svg_path);
    if (!svg) throw Error("cannot open for writing: " + ex.svg_path);
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                  size, size, size, size);
    svg << buf;
    for (const auto& c : ex.cells) {
        const int hue = static_cast<int>((c.block * 47) % 360);
        std::snprintf(buf, sizeof buf,
                      "<rect x=\"%.3f\" y=\"%.3f\" width=\"%.3f\" height=\"%.3f\" fill=\"hsl(%d,70%%,80%%)\" "
                      "stroke=\"#333\" stroke-width=\"0.5\"/>\n",
                      X(c.min[u]), Y(c.max[v]), (c.max[u] - c.min[u]) * sx, (c.max[v] - c.min[v]) * sy, hue);
        svg << buf;
    }
    svg << "<polyline fill=\"none\" stroke=\"#c00\" stroke-width=\"1.5\" points=\"";
    for (const auto& c : ex.cells) {
        std::snprintf(buf, sizeof buf, "%.3f,%.3f ", X((c.min[u] + c.max[u]) / 2), Y((c.min[v] + c.max[v]) / 2));
        svg << buf;
    }
    svg << "\"/>\n</svg>\n";
    if (!svg) throw Error("SVG write failed");
    return ex;
}

}  // namespace abt
