#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "captopt/error.hpp"
#include "captopt/fem.hpp"
#include "captopt/mesh.hpp"
#include "captopt/optimizer.hpp"

namespace captopt {

using NamedFields = std::vector<std::pair<std::string, const NodalField*>>;

namespace detail {

inline std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
}

/// write-temp-then-rename so partially written files never appear
inline void atomic_write(const std::string& path, const std::string& content) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out)
            throw Error("cannot open '" + tmp + "' for writing");
        out << content;
        if (!out)
            throw Error("write failed for '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw Error("cannot rename '" + tmp + "' to '" + path + "'");
}

} // namespace detail

/// Legacy VTK ASCII, UNSTRUCTURED_GRID with triangle cells (type 5) and one
/// SCALARS block per field. Values carry 17 significant digits, so identical
/// inputs produce byte-identical files.
inline void write_vtk_snapshot(const std::string& path, const TriangleMesh& mesh,
                               const NamedFields& fields) {
    for (const auto& [name, f] : fields)
        if (static_cast<int>(f->size()) != mesh.num_vertices())
            throw Error("write_vtk_snapshot: field '" + name + "' size mismatch");

    std::ostringstream out;
    out << "# vtk DataFile Version 3.0\n";
    out << "captopt fields\n";
    out << "ASCII\n";
    out << "DATASET UNSTRUCTURED_GRID\n";
    out << "POINTS " << mesh.num_vertices() << " double\n";
    for (const auto& p : mesh.vertices)
        out << detail::fmt17(p.x) << " " << detail::fmt17(p.y) << " 0\n";
    out << "CELLS " << mesh.num_triangles() << " " << 4 * mesh.num_triangles() << "\n";
    for (const auto& t : mesh.triangles)
        out << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
    out << "CELL_TYPES " << mesh.num_triangles() << "\n";
    for (int k = 0; k < mesh.num_triangles(); ++k)
        out << "5\n";
    if (!fields.empty()) {
        out << "POINT_DATA " << mesh.num_vertices() << "\n";
        for (const auto& [name, f] : fields) {
            out << "SCALARS " << name << " double 1\n";
            out << "LOOKUP_TABLE default\n";
            for (double v : *f)
                out << detail::fmt17(v) << "\n";
        }
    }
    detail::atomic_write(path, out.str());
}

/// Minimal reader for the writer's own output (self-consistency checks and
/// tooling). Returns point count, cell count and the named fields.
struct VtkSnapshot {
    int num_points = 0;
    int num_cells = 0;
    std::vector<std::pair<std::string, NodalField>> fields;
};

inline VtkSnapshot read_vtk_snapshot(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw Error("cannot open '" + path + "'");
    VtkSnapshot snap;
    std::string word;
    while (in >> word) {
        if (word == "POINTS") {
            in >> snap.num_points;
            in >> word; // type
            for (int i = 0; i < 3 * snap.num_points; ++i) {
                double d;
                in >> d;
            }
        } else if (word == "CELLS") {
            int list_len = 0;
            in >> snap.num_cells >> list_len;
            for (int i = 0; i < list_len; ++i) {
                int d;
                in >> d;
            }
        } else if (word == "SCALARS") {
            std::string name, type;
            int comps;
            in >> name >> type >> comps;
            in >> word >> word; // LOOKUP_TABLE default
            NodalField f(static_cast<std::size_t>(snap.num_points));
            for (auto& v : f)
                in >> v;
            snap.fields.emplace_back(name, std::move(f));
        }
    }
    return snap;
}

/// History CSV with the fixed header; wall_time_s is the only
/// run-to-run-varying column.
inline void write_history_csv(const std::string& path, const OptimizationHistory& history) {
    if (history.empty())
        throw Error("write_history_csv: empty history");
    std::ostringstream out;
    out << "iter,objective,energy,penalized_energy,volume,volume_error,gummel_iters,"
           "wall_time_s\n";
    for (const auto& r : history) {
        out << r.iter << "," << detail::fmt17(r.objective) << "," << detail::fmt17(r.energy)
            << "," << detail::fmt17(r.penalized_energy) << "," << detail::fmt17(r.volume) << ","
            << detail::fmt17(r.volume_error) << "," << r.gummel_iters << ","
            << detail::fmt17(r.wall_time_s) << "\n";
    }
    detail::atomic_write(path, out.str());
}

inline OptimizationHistory read_history_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw Error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line))
        throw Error("empty history file '" + path + "'");
    if (line != "iter,objective,energy,penalized_energy,volume,volume_error,gummel_iters,"
                "wall_time_s")
        throw Error("unexpected CSV header in '" + path + "'");
    OptimizationHistory hist;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        HistoryRecord r;
        std::istringstream row(line);
        char comma;
        row >> r.iter >> comma >> r.objective >> comma >> r.energy >> comma >>
            r.penalized_energy >> comma >> r.volume >> comma >> r.volume_error >> comma >>
            r.gummel_iters >> comma >> r.wall_time_s;
        if (!row)
            throw Error("malformed CSV row in '" + path + "': " + line);
        hist.push_back(r);
    }
    return hist;
}

} // namespace captopt
