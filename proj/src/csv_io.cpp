#include "twostage/csv_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "twostage/errors.hpp"

namespace twostage {

namespace {

std::vector<std::string> split_row(const std::string& line, const std::string& name,
                                   std::size_t lineno) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(field);
            field.clear();
        } else if (ch != '\r') {
            field += ch;
        }
    }
    if (quoted)
        throw Error(ErrorCategory::io,
                    name + ":" + std::to_string(lineno) + ": unterminated quote");
    out.push_back(field);
    return out;
}

double to_real(const std::string& s, const std::string& ctx) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw Error(ErrorCategory::io, ctx + ": cannot parse real value '" + s + "'");
    }
}

long long to_int(const std::string& s, const std::string& ctx) {
    try {
        std::size_t pos = 0;
        long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw Error(ErrorCategory::io, ctx + ": cannot parse integer '" + s + "'");
    }
}

std::string quote_if_needed(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += "\"\"";
        else out += ch;
    }
    out += '"';
    return out;
}

// Column lookup: returns -1 for absent optional columns.
int col_of(const CsvTable& t, const std::string& name) {
    for (std::size_t i = 0; i < t.header.size(); ++i)
        if (t.header[i] == name) return static_cast<int>(i);
    return -1;
}

int require_col(const CsvTable& t, const std::string& name, const std::string& file) {
    int c = col_of(t, name);
    if (c < 0)
        throw Error(ErrorCategory::io, file + ": missing required column '" + name + "'");
    return c;
}

// Indices of numbered covariate columns prefix_1, prefix_2, ... in order.
std::vector<int> numbered_cols(const CsvTable& t, const std::string& prefix) {
    std::vector<int> cols;
    for (int j = 1;; ++j) {
        int c = col_of(t, prefix + std::to_string(j));
        if (c < 0) break;
        cols.push_back(c);
    }
    return cols;
}

}  // namespace

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

CsvTable parse_csv(std::istream& in, const std::string& name) {
    CsvTable t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() && in.peek() == EOF) break;
        auto row = split_row(line, name, lineno);
        if (t.header.empty()) {
            t.header = std::move(row);
        } else {
            if (row.size() != t.header.size())
                throw Error(ErrorCategory::io,
                            name + ":" + std::to_string(lineno) + ": expected " +
                                std::to_string(t.header.size()) + " fields, got " +
                                std::to_string(row.size()));
            t.rows.push_back(std::move(row));
        }
    }
    if (t.header.empty())
        throw Error(ErrorCategory::io, name + ": empty file (header required)");
    return t;
}

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCategory::io, "cannot open " + path);
    return parse_csv(in, path);
}

void write_csv(const std::string& path, const CsvTable& table) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCategory::io, "cannot write " + path);
    auto emit = [&](const std::vector<std::string>& row) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            out << quote_if_needed(row[i]);
        }
        out << '\n';
    };
    emit(table.header);
    for (const auto& r : table.rows) emit(r);
    if (!out) throw Error(ErrorCategory::io, "write failed for " + path);
}

std::vector<ClusterRecord> read_clusters_csv(const std::string& path) {
    CsvTable t = read_csv(path);
    int c_id = require_col(t, "cluster_id", path);
    int c_n = require_col(t, "n_g", path);
    int c_h = col_of(t, "h");
    int c_s = col_of(t, "s_g");
    auto cov = numbered_cols(t, "c_");

    std::vector<ClusterRecord> clusters;
    clusters.reserve(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string ctx = path + " row " + std::to_string(r + 2);
        ClusterRecord cl;
        cl.cluster_id = row[static_cast<std::size_t>(c_id)];
        cl.n_g = static_cast<int>(to_int(row[static_cast<std::size_t>(c_n)], ctx));
        if (c_h >= 0 && !row[static_cast<std::size_t>(c_h)].empty())
            cl.h = to_real(row[static_cast<std::size_t>(c_h)], ctx);
        if (c_s >= 0) cl.s_g = row[static_cast<std::size_t>(c_s)];
        for (int cc : cov) {
            // Trailing covariate cells may be blank (ragged widths).
            if (row[static_cast<std::size_t>(cc)].empty()) break;
            cl.c.push_back(to_real(row[static_cast<std::size_t>(cc)], ctx));
        }
        clusters.push_back(std::move(cl));
    }
    return clusters;
}

void read_units_csv(const std::string& path, std::vector<ClusterRecord>& clusters) {
    CsvTable t = read_csv(path);
    int c_cid = require_col(t, "cluster_id", path);
    int c_uid = require_col(t, "unit_id", path);
    int c_y = col_of(t, "outcome");
    int c_z = col_of(t, "z");
    int c_sm = col_of(t, "sampled");
    int c_b = col_of(t, "b_g");
    auto cov = numbered_cols(t, "x_");

    std::map<std::string, ClusterRecord*> by_id;
    for (auto& cl : clusters) by_id[cl.cluster_id] = &cl;

    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string ctx = path + " row " + std::to_string(r + 2);
        auto it = by_id.find(row[static_cast<std::size_t>(c_cid)]);
        if (it == by_id.end())
            throw Error(ErrorCategory::io,
                        ctx + ": unknown cluster_id '" +
                            row[static_cast<std::size_t>(c_cid)] + "'");
        UnitRecord u;
        u.unit_id = row[static_cast<std::size_t>(c_uid)];
        if (c_y >= 0 && !row[static_cast<std::size_t>(c_y)].empty())
            u.outcome = to_real(row[static_cast<std::size_t>(c_y)], ctx);
        if (c_z >= 0 && !row[static_cast<std::size_t>(c_z)].empty())
            u.z = static_cast<int>(to_int(row[static_cast<std::size_t>(c_z)], ctx));
        if (c_sm >= 0 && !row[static_cast<std::size_t>(c_sm)].empty())
            u.sampled = to_int(row[static_cast<std::size_t>(c_sm)], ctx) != 0;
        if (c_b >= 0) u.second_stage_stratum = row[static_cast<std::size_t>(c_b)];
        for (int cc : cov) {
            if (row[static_cast<std::size_t>(cc)].empty()) break;
            u.x.push_back(to_real(row[static_cast<std::size_t>(cc)], ctx));
        }
        it->second->units.push_back(std::move(u));
    }
}

void write_clusters_csv(const std::string& path,
                        const std::vector<ClusterRecord>& clusters) {
    std::size_t p = 0;
    for (const auto& cl : clusters) p = std::max(p, cl.c.size());
    CsvTable t;
    t.header = {"cluster_id", "n_g", "h", "s_g"};
    for (std::size_t j = 1; j <= p; ++j) t.header.push_back("c_" + std::to_string(j));
    for (const auto& cl : clusters) {
        std::vector<std::string> row = {cl.cluster_id, std::to_string(cl.n_g),
                                        format_real(cl.h), cl.s_g};
        for (std::size_t j = 0; j < p; ++j)
            row.push_back(j < cl.c.size() ? format_real(cl.c[j]) : "");
        t.rows.push_back(std::move(row));
    }
    write_csv(path, t);
}

void write_units_csv(const std::string& path,
                     const std::vector<ClusterRecord>& clusters) {
    std::size_t q = 0;
    for (const auto& cl : clusters)
        for (const auto& u : cl.units) q = std::max(q, u.x.size());
    CsvTable t;
    t.header = {"cluster_id", "unit_id", "outcome", "z", "sampled", "b_g"};
    for (std::size_t j = 1; j <= q; ++j) t.header.push_back("x_" + std::to_string(j));
    for (const auto& cl : clusters) {
        for (const auto& u : cl.units) {
            std::vector<std::string> row = {cl.cluster_id,
                                            u.unit_id,
                                            format_real(u.outcome),
                                            std::to_string(u.z),
                                            u.sampled ? "1" : "0",
                                            u.second_stage_stratum};
            for (std::size_t j = 0; j < q; ++j)
                row.push_back(j < u.x.size() ? format_real(u.x[j]) : "");
            t.rows.push_back(std::move(row));
        }
    }
    write_csv(path, t);
}

}  // namespace twostage
