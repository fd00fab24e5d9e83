#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "twostage/types.hpp"

namespace twostage {

// Two-file panel schema.
//
//   clusters.csv: cluster_id, n_g, h, s_g, c_1..c_p
//   units.csv:    cluster_id, unit_id, outcome, z, sampled, b_g, x_1..x_q
//
// Headers are required; s_g, b_g, sampled and the covariate columns are
// optional. Reals are written with 17 significant digits so a round trip
// reproduces them bit-exactly.

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::string& path);
CsvTable parse_csv(std::istream& in, const std::string& name);
void write_csv(const std::string& path, const CsvTable& table);

std::vector<ClusterRecord> read_clusters_csv(const std::string& path);

// Attaches unit rows to the given clusters (matched by cluster_id).
void read_units_csv(const std::string& path, std::vector<ClusterRecord>& clusters);

void write_clusters_csv(const std::string& path,
                        const std::vector<ClusterRecord>& clusters);
void write_units_csv(const std::string& path,
                     const std::vector<ClusterRecord>& clusters);

std::string format_real(double v);

}  // namespace twostage
