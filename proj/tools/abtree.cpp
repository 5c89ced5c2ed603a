// abtree: command-line front end for dataset generation, tree builds,
// neighbor searches, benchmark sweeps and walk-slice export.

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "abt/bench.hpp"
#include "abt/datagen.hpp"
#include "abt/io.hpp"
#include "abt/oracle.hpp"
#include "abt/search.hpp"
#include "abt/tree.hpp"

namespace {

struct Common {
    std::string dataset;
    std::string policy = "adaptive";
    std::size_t s = 8;
    double alpha = 0.5;
    double beta = 0.5;
    unsigned threads = 1;
    std::string schedule = "static";
    std::size_t chunk = 64;
    unsigned reps = 5;
    std::uint64_t seed = 1;
    std::string out;
    bool no_warmup = false;
};

void add_dataset(CLI::App* cmd, Common& c) {
    cmd->add_option("--dataset", c.dataset, "Particle snapshot file")->required();
}

void add_tree(CLI::App* cmd, Common& c) {
    cmd->add_option("--policy", c.policy, "adaptive | octree")->check(CLI::IsMember({"adaptive", "octree"}));
    cmd->add_option("--s", c.s, "Bucket size");
    cmd->add_option("--alpha", c.alpha, "Underfull threshold as a fraction of s");
    cmd->add_option("--beta", c.beta, "Maximum accepted fraction of underfull cells");
}

void add_run(CLI::App* cmd, Common& c, bool threads = true) {
    if (threads) cmd->add_option("--threads", c.threads, "Worker count");
    cmd->add_option("--schedule", c.schedule, "static | dynamic | guided")
        ->check(CLI::IsMember({"static", "dynamic", "guided"}));
    cmd->add_option("--chunk", c.chunk, "Chunk size for dynamic/guided schedules");
    cmd->add_option("--reps", c.reps, "Timed repetitions");
    cmd->add_option("--seed", c.seed, "Seed for the validation sample");
    cmd->add_option("--out", c.out, "CSV output path");
    cmd->add_flag("--no-warmup", c.no_warmup, "Skip the untimed warm-up run");
}

abt::TreeParams tree_params(const Common& c) {
    abt::TreeParams tp;
    tp.bucket_size = c.s;
    tp.alpha = c.alpha;
    tp.beta = c.beta;
    tp.policy = abt::parse_policy(c.policy);
    tp.workers = c.threads;
    tp.validate();
    return tp;
}

abt::BenchConfig bench_config(const Common& c) {
    abt::BenchConfig cfg;
    cfg.dataset = std::filesystem::path(c.dataset).stem().string();
    cfg.tree = tree_params(c);
    cfg.threads = c.threads;
    cfg.schedule = {abt::parse_schedule(c.schedule), c.chunk};
    cfg.reps = c.reps;
    cfg.warmup = !c.no_warmup;
    cfg.seed = c.seed;
    return cfg;
}

template <class Fn>
void with_dataset(const std::string& path, Fn&& fn) {
    auto any = abt::load_snapshot(path);
    std::visit(fn, any);
}

int report(const std::vector<abt::BenchRecord>& records, const std::string& out) {
    abt::write_summary(std::cout, abt::summarize(records));
    if (!out.empty()) {
        abt::save_bench_csv(out, records);
        std::cout << "wrote " << records.size() << " records to " << out << '\n';
    }
    for (const auto& r : records)
        if (r.validation == "fail") {
            std::cerr << "validation failed\n";
            return 1;
        }
    return 0;
}

void print_diagnostics(const abt::BuildDiagnostics& d) {
    std::cout << "max_depth " << d.max_depth << "\ntotal_nodes " << d.total_nodes << "\ntotal_leaves "
              << d.total_leaves << "\ncapped_leaves " << d.capped_leaves << "\nredistribution_rounds "
              << d.total_rounds << "\nmean_branching " << d.mean_branching << "\nbranching_histogram";
    for (std::size_t b = 0; b < d.branching_histogram.size(); ++b)
        if (d.branching_histogram[b]) std::cout << ' ' << b << ':' << d.branching_histogram[b];
    std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive branching tree: fixed-radius neighbor search toolkit"};
    app.require_subcommand(1);
    Common c;

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a particle snapshot");
    std::string kind = "uniform";
    std::size_t n = 100000;
    int k = 3;
    std::size_t target = 100;
    gen->add_option("--kind", kind, "lattice | uniform | clustered")
        ->check(CLI::IsMember({"lattice", "uniform", "clustered"}));
    gen->add_option("--n", n, "Particle count (lattice: points per side)");
    gen->add_option("--k", k, "Dimensions")->check(CLI::IsMember({2, 3}));
    gen->add_option("--target", target, "Target neighbor count for h (0 keeps the spacing placeholder)");
    gen->add_option("--seed", c.seed, "Random seed");
    gen->add_option("--threads", c.threads, "Workers for smoothing-length assignment");
    gen->add_option("--out", c.out, "Snapshot output path")->required();

    // build / find
    auto* build = app.add_subcommand("build", "Time tree construction and print tree statistics");
    add_dataset(build, c);
    add_tree(build, c);
    add_run(build, c);
    auto* find = app.add_subcommand("find", "Time the all-particles neighbor search");
    add_dataset(find, c);
    add_tree(find, c);
    add_run(find, c);
    std::string dump;
    find->add_option("--dump", dump, "Write neighbor lists (one line per particle id)");

    // sweeps
    auto* scale = app.add_subcommand("scale", "Strong scaling over worker counts, both policies");
    add_dataset(scale, c);
    add_tree(scale, c);
    add_run(scale, c, false);
    std::vector<unsigned> thread_list{1, 2, 4};
    scale->add_option("--threads", thread_list, "Worker counts, comma separated")->delimiter(',');

    auto* sweep_s = app.add_subcommand("sweep-bucket", "Bucket size sweep, both policies");
    add_dataset(sweep_s, c);
    add_tree(sweep_s, c);
    add_run(sweep_s, c);
    std::vector<std::size_t> s_values = abt::default_bucket_sizes;
    sweep_s->add_option("--values", s_values, "Bucket sizes, comma separated")->delimiter(',');

    auto* sweep_b = app.add_subcommand("sweep-beta", "Beta sweep, adaptive policy");
    add_dataset(sweep_b, c);
    add_tree(sweep_b, c);
    add_run(sweep_b, c);
    std::vector<double> betas = abt::default_betas;
    sweep_b->add_option("--values", betas, "Beta values, comma separated")->delimiter(',');

    // viz
    auto* viz = app.add_subcommand("viz", "Export the leaves cut by an axis-aligned plane, in walk order");
    add_dataset(viz, c);
    add_tree(viz, c);
    int axis = 2;
    std::optional<double> coord;
    std::size_t block = 8;
    viz->add_option("--axis", axis, "Axis normal to the plane (0, 1, 2)")->check(CLI::Range(0, 2));
    viz->add_option("--coord", coord, "Plane position (default: root box center)");
    viz->add_option("--block", block, "Leaves per color band");
    viz->add_option("--out", c.out, "CSV output path; the SVG goes next to it")->required();

    // validate
    auto* validate = app.add_subcommand("validate", "Compare the tree search with brute force on every particle");
    add_dataset(validate, c);
    add_tree(validate, c);
    validate->add_option("--threads", c.threads, "Worker count");
    validate->add_option("--schedule", c.schedule, "static | dynamic | guided")
        ->check(CLI::IsMember({"static", "dynamic", "guided"}));

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            auto make = [&]<int D>() {
                abt::GenSpec<D> spec;
                spec.kind = abt::parse_gen_kind(kind);
                spec.n = n;
                spec.seed = c.seed;
                spec.target_neighbors = target;
                const auto ps = abt::generate(spec, c.threads);
                abt::save_snapshot(c.out, ps);
                std::cout << "wrote " << ps.size() << " particles to " << c.out << '\n';
            };
            if (k == 2)
                make.template operator()<2>();
            else
                make.template operator()<3>();
            return 0;
        }
        if (build->parsed() || find->parsed()) {
            int rc = 0;
            with_dataset(c.dataset, [&](const auto& ps) {
                const auto cfg = bench_config(c);
                const auto tree = abt::build_tree(ps, cfg.tree);
                print_diagnostics(tree.diagnostics());
                if (find->parsed() && !dump.empty()) {
                    abt::SearchOptions opt;
                    opt.workers = cfg.threads;
                    opt.schedule = cfg.schedule;
                    std::ofstream os(dump);
                    if (!os) throw abt::Error("cannot open for writing: " + dump);
                    abt::write_neighbor_dump(os, abt::to_id_sets(abt::find_neighbors_all(tree, ps, opt), ps));
                }
                rc = report(abt::run_single(ps, build->parsed() ? "build" : "find", cfg), c.out);
            });
            return rc;
        }
        if (scale->parsed()) {
            int rc = 0;
            with_dataset(c.dataset, [&](const auto& ps) {
                rc = report(abt::run_scaling(ps, thread_list, bench_config(c)), c.out);
            });
            return rc;
        }
        if (sweep_s->parsed()) {
            int rc = 0;
            with_dataset(c.dataset, [&](const auto& ps) {
                rc = report(abt::run_bucket_sweep(ps, s_values, bench_config(c)), c.out);
            });
            return rc;
        }
        if (sweep_b->parsed()) {
            int rc = 0;
            with_dataset(c.dataset, [&](const auto& ps) {
                rc = report(abt::run_beta_sweep(ps, betas, bench_config(c)), c.out);
            });
            return rc;
        }
        if (viz->parsed()) {
            with_dataset(c.dataset, [&](const auto& ps) {
                const auto tree = abt::build_tree(ps, tree_params(c));
                const double at = coord ? *coord : tree.box().center()[ps.dim == 3 ? axis : 0];
                const auto ex = abt::export_walk_slice(tree, axis, at, c.out, block);
                std::cout << ex.cells.size() << " cells, " << ex.depths.size() << " distinct depths\nwrote "
                          << ex.csv_path << " and " << ex.svg_path << '\n';
            });
            return 0;
        }
        if (validate->parsed()) {
            int rc = 0;
            with_dataset(c.dataset, [&](const auto& ps) {
                const auto tree = abt::build_tree(ps, tree_params(c));
                abt::SearchOptions opt;
                opt.workers = c.threads;
                opt.schedule = {abt::parse_schedule(c.schedule), c.chunk};
                const auto got = abt::to_id_sets(abt::find_neighbors_all(tree, ps, opt), ps);
                const auto want = abt::to_id_sets(abt::brute_force_neighbors(ps), ps);
                std::size_t bad = 0;
                for (std::size_t i = 0; i < got.size(); ++i) bad += got[i] != want[i];
                std::cout << (bad ? "FAIL " : "OK ") << got.size() - bad << '/' << got.size()
                          << " neighbor sets match\n";
                rc = bad ? 1 : 0;
            });
            return rc;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
