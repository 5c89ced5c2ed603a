#pragma once

// Text formats: particle snapshots and neighbor-list dumps.
//
// Snapshot: a header line "n k", then n rows "x_1 ... x_k h id", ASCII,
// space separated, reals printed with 17 significant digits.
// Neighbor dump: one line per particle in ascending id order,
// "id count q_1 ... q_count" with neighbor ids ascending.

#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "abt/core.hpp"
#include "abt/search.hpp"

namespace abt {

namespace detail {

inline void put_real(std::ostream& os, Real v) {
    char buf[32];
    const int len = std::snprintf(buf, sizeof buf, "%.17g", v);
    os.write(buf, len);
}

}  // namespace detail

template <int Dim>
void write_snapshot(std::ostream& os, const ParticleSet<Dim>& ps) {
    os << ps.size() << ' ' << Dim << '\n';
    for (std::size_t i = 0; i < ps.size(); ++i) {
        for (int l = 0; l < Dim; ++l) {
            detail::put_real(os, ps.x(i, l));
            os << ' ';
        }
        detail::put_real(os, ps.h(i));
        os << ' ' << ps.id(i) << '\n';
    }
    if (!os) throw Error("snapshot write failed");
}

/// Header of a snapshot stream: (n, k).
inline std::pair<std::size_t, int> read_snapshot_header(std::istream& is) {
    std::size_t n = 0;
    int k = 0;
    if (!(is >> n >> k)) throw Error("malformed snapshot header");
    if (k != 2 && k != 3) throw Error("unsupported dimension " + std::to_string(k));
    return {n, k};
}

/// Reads the body of a snapshot whose header has already been consumed.
template <int Dim>
ParticleSet<Dim> read_snapshot_body(std::istream& is, std::size_t n) {
    std::array<std::vector<Real>, Dim> coords;
    for (auto& c : coords) c.resize(n);
    std::vector<Real> h(n);
    std::vector<Index> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (int l = 0; l < Dim; ++l)
            if (!(is >> coords[l][i])) throw Error("malformed snapshot row " + std::to_string(i));
        if (!(is >> h[i] >> ids[i])) throw Error("malformed snapshot row " + std::to_string(i));
    }
    return ParticleSet<Dim>(std::move(coords), std::move(h), std::move(ids));
}

template <int Dim>
ParticleSet<Dim> read_snapshot(std::istream& is) {
    auto [n, k] = read_snapshot_header(is);
    if (k != Dim) throw Error("snapshot dimension mismatch");
    return read_snapshot_body<Dim>(is, n);
}

using AnyParticleSet = std::variant<ParticleSet<2>, ParticleSet<3>>;

inline AnyParticleSet load_snapshot(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open dataset: " + path);
    auto [n, k] = read_snapshot_header(in);
    if (k == 2) return read_snapshot_body<2>(in, n);
    return read_snapshot_body<3>(in, n);
}

template <int Dim>
void save_snapshot(const std::string& path, const ParticleSet<Dim>& ps) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path);
    write_snapshot(out, ps);
}

inline void write_neighbor_dump(std::ostream& os, const IdNeighborSets& sets) {
    for (std::size_t id = 0; id < sets.size(); ++id) {
        os << id << ' ' << sets[id].size();
        for (Index q : sets[id]) os << ' ' << q;
        os << '\n';
    }
    if (!os) throw Error("neighbor dump write failed");
}

inline IdNeighborSets read_neighbor_dump(std::istream& is) {
    IdNeighborSets sets;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::size_t id = 0, count = 0;
        if (!(ls >> id >> count) || id != sets.size()) throw Error("malformed neighbor dump line");
        std::vector<Index> row(count);
        for (auto& q : row)
            if (!(ls >> q)) throw Error("malformed neighbor dump line");
        sets.push_back(std::move(row));
    }
    return sets;
}

}  // namespace abt
