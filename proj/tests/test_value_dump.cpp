#include "catqvi/error.hpp"
#include "catqvi/value_dump.hpp"

#include "support.hpp"

#include <sstream>

#include <gtest/gtest.h>

using namespace catqvi;
using catqvi::testing::profile_json;
using nlohmann::json;

namespace {

ModelBundle tiny(std::size_t kappa, bool keep_all) {
    json raw = profile_json("desk_k0");
    raw["economics"]["max_bonds"] = kappa;
    raw["economics"]["horizon"] = 0.3;
    raw["economics"]["maturity"] = 0.15;
    raw["model"]["severity"]["n_atoms"] = 5;
    raw["grid"]["x1"] = {{"min", -8.0}, {"max", 6.0}, {"step", 1.0}};
    raw["grid"]["x2"] = {{"min", 0.0}, {"max", 1.5}, {"step", 0.5}};
    raw["grid"]["alpha"] = {{"min", 25.0}, {"max", 27.0}, {"step", 1.0}};
    raw["grid"]["store_all_values"] = keep_all;
    return validate_config(raw);
}

json axis(const json& h, const std::string& name) {
    for (const auto& a : h["axes"]) {
        if (a["name"] == name) return a;
    }
    return json();
}

std::string dump_bytes(const Solution& s, const std::string& hash = "abc") {
    std::ostringstream out(std::ios::binary);
    write_dump(out, s, hash);
    return out.str();
}

}  // namespace

TEST(ValueDump, RoundTripPreservesValuesAndPolicy) {
    for (bool keep : {false, true}) {
        const Solution sol = backward_induction(Workspace::build(tiny(2, keep)));
        std::istringstream in(dump_bytes(sol), std::ios::binary);
        LoadedDump d = read_dump(in);
        EXPECT_EQ(d.header["format"], "CBQV1");
        EXPECT_EQ(d.header["config_sha256"], "abc");
        EXPECT_EQ(d.header["node_count"], sol.workspace().node_count());
        const Solution back = solution_from_dump(sol.workspace_ptr(), std::move(d));
        ASSERT_EQ(back.slices(), sol.slices());
        for (std::size_t n = 0; n < sol.slices(); ++n) {
            ASSERT_EQ(back.has_values(n), sol.has_values(n));
            EXPECT_TRUE(std::equal(sol.values(n).begin(), sol.values(n).end(), back.values(n).begin()));
            EXPECT_TRUE(std::equal(sol.policy(n).begin(), sol.policy(n).end(), back.policy(n).begin()));
        }
        EXPECT_EQ(dump_bytes(back), dump_bytes(sol));
    }
}

TEST(ValueDump, RerunProducesIdenticalBytes) {
    const std::string a = dump_bytes(backward_induction(Workspace::build(tiny(1, false))));
    const std::string b = dump_bytes(backward_induction(Workspace::build(tiny(1, false))));
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.substr(0, 5), "CBQV1");
}

TEST(ValueDump, HeaderDescribesTheGrid) {
    const Solution sol = backward_induction(Workspace::build(tiny(2, false)));
    const json h = dump_header(sol, "h");
    const auto& ws = sol.workspace();
    EXPECT_EQ(h["max_bonds"], 2);
    EXPECT_EQ(h["layers"], 3);
    EXPECT_EQ(axis(h, "x1")["count"], ws.x1().count);
    EXPECT_EQ(axis(h, "x2")["count"], ws.x2().count);
    EXPECT_EQ(axis(h, "elapsed")["count"], ws.elapsed_count());
    EXPECT_EQ(h["classes"].size(), 3u);
    EXPECT_EQ(h["slices"].size(), ws.steps() + 1);
    EXPECT_TRUE(h["slices"][0]["has_values"].get<bool>());
    EXPECT_FALSE(h["slices"][1]["has_values"].get<bool>());
}

TEST(ValueDump, RejectsForeignAndTruncatedFiles) {
    std::istringstream bad("NOTADUMP........", std::ios::binary);
    EXPECT_THROW((void)read_dump(bad), IoError);
    const std::string bytes = dump_bytes(backward_induction(Workspace::build(tiny(1, false))));
    std::istringstream cut(bytes.substr(0, bytes.size() - 7), std::ios::binary);
    EXPECT_THROW((void)read_dump(cut), IoError);
    std::string garbled = bytes;
    garbled[12] = '\x01';
    std::istringstream g(garbled, std::ios::binary);
    EXPECT_THROW((void)read_dump(g), IoError);
    EXPECT_THROW((void)read_dump(std::filesystem::path("/nonexistent/value.cbqv")), IoError);
}

TEST(ValueDump, ShapeMismatchIsRejected) {
    const Solution sol = backward_induction(Workspace::build(tiny(1, false)));
    std::istringstream in(dump_bytes(sol), std::ios::binary);
    LoadedDump d = read_dump(in);
    EXPECT_THROW((void)solution_from_dump(Workspace::build(tiny(2, false)), std::move(d)), DomainError);
}

TEST(Section, ExportsOneRowPerNodePair) {
    const Solution sol = backward_induction(Workspace::build(tiny(1, false)));
    const auto& ws = sol.workspace();
    SectionSpec spec;
    spec.axis_a = "x1";
    spec.axis_b = "prior";
    spec.x2_index = 1;
    std::ostringstream out;
    export_section_csv(sol, spec, out);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "x1,prior,value,action");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, ws.x1().count * ws.prior_count());

    spec.axis_b = "x1";
    EXPECT_THROW(export_section_csv(sol, spec, out), DomainError);
    spec.axis_b = "beta";
    EXPECT_THROW(export_section_csv(sol, spec, out), DomainError);
    spec.axis_b = "x2";
    spec.slice = 999;
    EXPECT_THROW(export_section_csv(sol, spec, out), DomainError);
}
