#include "catqvi/value_dump.hpp"

#include "catqvi/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <ostream>

namespace catqvi {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
        std::memcpy(&v, b, sizeof(T));
        return v;
    }
}

json axis_json(const Axis& a) {
    return {{"name", a.name}, {"min", a.min}, {"step", a.step}, {"count", a.count}};
}

void write_doubles(std::ostream& out, std::span<const double> v) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    } else {
        for (double d : v) {
            const double le = to_little(d);
            out.write(reinterpret_cast<const char*>(&le), sizeof le);
        }
    }
}

void read_exact(std::istream& in, char* dst, std::size_t n) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) throw IoError("value dump is truncated");
}

}  // namespace

json dump_header(const Solution& solution, const std::string& config_hash) {
    const Workspace& ws = solution.workspace();
    json h;
    h["format"] = std::string(kDumpMagic);
    h["config_sha256"] = config_hash;
    h["node_count"] = ws.node_count();
    h["max_bonds"] = ws.max_bonds();
    h["layers"] = ws.layer_count();
    json axes = json::array();
    axes.push_back({{"name", "t"}, {"min", 0.0}, {"step", ws.h()}, {"count", ws.steps() + 1}});
    axes.push_back(axis_json(ws.x1()));
    axes.push_back(axis_json(ws.x2()));
    if (ws.prior().variant() == IntensityVariant::Gamma) {
        axes.push_back(axis_json(ws.prior().alpha_axis()));
    } else {
        axes.push_back({{"name", "simplex"}, {"levels", ws.prior().levels()},
                        {"divisions", ws.prior().divisions()}, {"count", ws.prior().size()}});
    }
    axes.push_back({{"name", "elapsed"}, {"min", 0.0}, {"step", ws.h()}, {"count", ws.elapsed_count()}});
    for (std::size_t k = 1; k <= ws.layer_count(); ++k) axes.push_back(axis_json(ws.coupon_axis(static_cast<int>(k))));
    h["axes"] = axes;
    h["node_order"] = {"configuration", "prior", "x2", "x1"};
    h["cell_id"] = "((layer - 1) * elapsed_count + elapsed) * coupon_count + coupon";
    json classes = json::array();
    for (const auto& c : ws.classes()) {
        classes.push_back({{"running", c.running}, {"first", c.first_tuple}, {"count", c.tuple_count}});
    }
    h["classes"] = classes;
    json tuples = json::array();
    for (std::size_t t = 0; t < ws.tuple_count(); ++t) {
        const auto cells = ws.tuple_cells(t);
        tuples.push_back(std::vector<std::uint32_t>(cells.begin(), cells.end()));
    }
    h["tuples"] = tuples;
    json slices = json::array();
    for (std::size_t n = 0; n < solution.slices(); ++n) {
        slices.push_back({{"index", n}, {"t", ws.time_at(n)}, {"has_values", solution.has_values(n)}});
    }
    h["slices"] = slices;
    h["action_codes"] = {{"0", "wait"}, {"k", "issue a bond on layer k"}};
    return h;
}

void write_dump(std::ostream& out, const Solution& solution, const std::string& config_hash) {
    const std::string header = dump_header(solution, config_hash).dump();
    out.write(kDumpMagic.data(), static_cast<std::streamsize>(kDumpMagic.size()));
    const std::uint32_t len = to_little(static_cast<std::uint32_t>(header.size()));
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (std::size_t n = 0; n < solution.slices(); ++n) {
        if (solution.has_values(n)) write_doubles(out, solution.values(n));
        const auto pol = solution.policy(n);
        out.write(reinterpret_cast<const char*>(pol.data()), static_cast<std::streamsize>(pol.size()));
    }
    if (!out) throw IoError("failed while writing the value dump");
}

void write_dump(const std::filesystem::path& path, const Solution& solution, const std::string& config_hash) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path.string());
    write_dump(out, solution, config_hash);
}

LoadedDump read_dump(std::istream& in) {
    char magic[5];
    read_exact(in, magic, sizeof magic);
    if (std::string_view(magic, 5) != kDumpMagic) throw IoError("not a CBQV1 value dump");
    std::uint32_t len = 0;
    read_exact(in, reinterpret_cast<char*>(&len), sizeof len);
    len = to_little(len);
    std::string text(len, '\0');
    read_exact(in, text.data(), len);
    LoadedDump d;
    try {
        d.header = json::parse(text);
    } catch (const json::parse_error& e) {
        throw IoError(std::string("corrupt dump header: ") + e.what());
    }
    const auto nodes = d.header.at("node_count").get<std::size_t>();
    for (const auto& s : d.header.at("slices")) {
        std::vector<double> vals;
        if (s.at("has_values").get<bool>()) {
            vals.resize(nodes);
            read_exact(in, reinterpret_cast<char*>(vals.data()), nodes * sizeof(double));
            for (auto& v : vals) v = to_little(v);
        }
        std::vector<std::uint8_t> pol(nodes);
        read_exact(in, reinterpret_cast<char*>(pol.data()), nodes);
        d.values.push_back(std::move(vals));
        d.policy.push_back(std::move(pol));
    }
    return d;
}

LoadedDump read_dump(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return read_dump(in);
}

Solution solution_from_dump(std::shared_ptr<const Workspace> ws, LoadedDump dump) {
    if (dump.header.at("node_count").get<std::size_t>() != ws->node_count() ||
        dump.policy.size() != ws->steps() + 1) {
        throw DomainError("value dump does not match the grid of this configuration");
    }
    return Solution(std::move(ws), std::move(dump.values), std::move(dump.policy));
}

void export_section_csv(const Solution& solution, const SectionSpec& spec, std::ostream& out) {
    const Workspace& ws = solution.workspace();
    const auto extent = [&](const std::string& name) -> std::size_t {
        if (name == "x1") return ws.x1().count;
        if (name == "x2") return ws.x2().count;
        if (name == "prior") return ws.prior_count();
        throw DomainError("unknown section axis '" + name + "' (use x1, x2 or prior)");
    };
    if (spec.axis_a == spec.axis_b) throw DomainError("section axes must differ");
    if (spec.slice >= solution.slices()) throw DomainError("slice index out of range");
    if (spec.tuple >= ws.tuple_count()) throw DomainError("configuration index out of range");
    const std::size_t na = extent(spec.axis_a);
    const std::size_t nb = extent(spec.axis_b);
    const auto coord = [&](const std::string& name, std::size_t i) -> double {
        if (name == "x1") return ws.x1().at(i);
        if (name == "x2") return ws.x2().at(i);
        return ws.prior().variant() == IntensityVariant::Gamma ? ws.prior().alpha_at(i) : static_cast<double>(i);
    };
    const bool has_values = solution.has_values(spec.slice);
    out << spec.axis_a << ',' << spec.axis_b << ",value,action\n" << std::setprecision(17);
    for (std::size_t a = 0; a < na; ++a) {
        for (std::size_t b = 0; b < nb; ++b) {
            std::size_t i1 = spec.x1_index, i2 = spec.x2_index, ip = spec.prior_index;
            for (const auto& [name, i] : {std::pair{spec.axis_a, a}, std::pair{spec.axis_b, b}}) {
                if (name == "x1") i1 = i;
                if (name == "x2") i2 = i;
                if (name == "prior") ip = i;
            }
            if (i1 >= ws.x1().count || i2 >= ws.x2().count || ip >= ws.prior_count()) {
                throw DomainError("fixed section index out of range");
            }
            const std::size_t node = ws.node_index(spec.tuple, ip, i2, i1);
            out << coord(spec.axis_a, a) << ',' << coord(spec.axis_b, b) << ',';
            if (has_values) out << solution.values(spec.slice)[node];
            out << ',' << static_cast<int>(solution.policy(spec.slice)[node]) << '\n';
        }
    }
}

}  // namespace catqvi
