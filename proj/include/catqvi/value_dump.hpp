#pragma once

// Binary value/policy dump. Layout: the five magic bytes "CBQV1", a
// little-endian uint32 header length, the JSON header (axes, configuration
// classes and tuples, slice table, config hash), then for every slice in
// order its float64 values (only when the header marks them present) and
// its uint8 action codes (0 = wait, k = issue a bond on layer k).

#include "catqvi/pde_solver.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace catqvi {

inline constexpr std::string_view kDumpMagic = "CBQV1";

nlohmann::json dump_header(const Solution& solution, const std::string& config_hash);

void write_dump(std::ostream& out, const Solution& solution, const std::string& config_hash);
void write_dump(const std::filesystem::path& path, const Solution& solution, const std::string& config_hash);

struct LoadedDump {
    nlohmann::json header;
    std::vector<std::vector<double>> values;
    std::vector<std::vector<std::uint8_t>> policy;
};

/// Throws IoError on unreadable or malformed files.
LoadedDump read_dump(std::istream& in);
LoadedDump read_dump(const std::filesystem::path& path);

/// Reattaches dumped slices to a workspace rebuilt from the same
/// configuration; throws DomainError if the shapes disagree.
Solution solution_from_dump(std::shared_ptr<const Workspace> ws, LoadedDump dump);

/// Two-dimensional section of one slice. The free axes are two of
/// "x1", "x2", "prior"; the third is held at its fixed index.
struct SectionSpec {
    std::size_t slice = 0;
    std::size_t tuple = 0;
    std::string axis_a = "x1";
    std::string axis_b = "x2";
    std::size_t x1_index = 0;
    std::size_t x2_index = 0;
    std::size_t prior_index = 0;
};

/// CSV columns: <axis_a>,<axis_b>,value,action. Values are empty when the
/// slice was not kept.
void export_section_csv(const Solution& solution, const SectionSpec& spec, std::ostream& out);

}  // namespace catqvi
