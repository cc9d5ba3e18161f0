#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qdyn/sweep.hpp"

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

using namespace qdyn;
using namespace qdyn::sweep;
using nlohmann::json;

namespace {

namespace fs = std::filesystem;

fs::path work_dir() {
    const fs::path dir = fs::temp_directory_path() / "qdyn_test_sweep";
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

size_t line_count(const std::string& text) {
    size_t n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(QDYN_CLI_PATH) + " " + args + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json basic_config(const fs::path& out_csv) {
    return json{{"axes", json::array({json{{"name", "delta"}, {"values", {-0.5, 0.0, 0.5}}},
                                      json{{"name", "gamma"}, {"values", {0.5, 1.0}}}})},
                {"base", {{"n_spins", 2}}},
                {"backend", "flat"},
                {"strategy", "candidates"},
                {"out", out_csv.string()}};
}

}  // namespace

TEST_CASE("sweep spec parses from JSON and indexes its grid") {
    const auto spec = SweepSpec::from_json(basic_config("sweep.csv"));
    CHECK(spec.grid_size() == 6);
    REQUIRE(spec.axes.size() == 2);
    CHECK(spec.axes[0].name == "delta");
    CHECK(spec.backend == blp::Backend::FlatKernel);
    CHECK(spec.strategy.kind == blp::Strategy::Kind::CandidateSet);
    CHECK(spec.base.n_spins == 2);
    CHECK(spec.mk_eps == 1e-4);

    // first axis is slowest: (delta, gamma) in row-major order
    CHECK(spec.point(0).detuning == -0.5);
    CHECK(spec.point(0).gamma == 0.5);
    CHECK(spec.point(1).detuning == -0.5);
    CHECK(spec.point(1).gamma == 1.0);
    CHECK(spec.point(2).detuning == 0.0);
    CHECK(spec.point(2).gamma == 0.5);
    CHECK(spec.point(5).detuning == 0.5);
    CHECK(spec.point(5).gamma == 1.0);

    // range axes expand to inclusive uniform grids
    json cfg = basic_config("sweep.csv");
    cfg["axes"] = json::array(
        {json{{"name", "n_spins"}, {"min", 2}, {"max", 8}, {"count", 4}}});
    const auto ranged = SweepSpec::from_json(cfg);
    CHECK(ranged.axes[0].values == std::vector<double>{2, 4, 6, 8});
    CHECK(ranged.point(3).n_spins == 8);

    // the header echo is self-describing
    const json echo = spec.to_json();
    CHECK(echo.at("backend") == "flat");
    CHECK(echo.at("axes").size() == 2);
    CHECK(echo.at("base").at("n_spins") == 2);
}

TEST_CASE("sweep spec validation") {
    const auto reject = [](json cfg) {
        CHECK_THROWS_AS((void)SweepSpec::from_json(cfg).validate(), validation_error);
    };

    json cfg = basic_config("sweep.csv");
    cfg["axes"] = json::array();
    reject(cfg);

    cfg = basic_config("sweep.csv");
    cfg["axes"][0]["name"] = "bogus";
    reject(cfg);

    cfg = basic_config("sweep.csv");
    cfg["axes"][1]["name"] = "delta";  // duplicate
    reject(cfg);

    cfg = basic_config("sweep.csv");
    cfg["unknown_key"] = 1;
    CHECK_THROWS_AS((void)SweepSpec::from_json(cfg), validation_error);

    // flat kernel cannot cover an anisotropic region
    cfg = basic_config("sweep.csv");
    cfg["axes"][1] = json{{"name", "lambda"}, {"values", {0.0, 0.5}}};
    reject(cfg);

    // backend/spectrum mismatches
    cfg = basic_config("sweep.csv");
    cfg["backend"] = "lorentzian";
    reject(cfg);
    cfg["base"]["spectrum"] = {{"kind", "lorentzian"}, {"width", 0.5}};
    CHECK_NOTHROW(SweepSpec::from_json(cfg).validate());
    cfg["backend"] = "engine";
    reject(cfg);

    cfg = basic_config("sweep.csv");
    cfg["axes"][0] = json{{"name", "n_spins"}, {"values", {1.5}}};
    CHECK_THROWS_AS((void)SweepSpec::from_json(cfg).point(0), validation_error);

    cfg = basic_config("");
    reject(cfg);

    cfg = basic_config("sweep.csv");
    cfg["strategy"] = "grid";
    cfg["resolution"] = 1;
    reject(cfg);

    CHECK_THROWS_AS((void)parse_backend("nope"), validation_error);
    CHECK_THROWS_AS((void)parse_strategy("nope"), validation_error);
}

TEST_CASE("run_sweep writes ordered rows and captures per-point failures") {
    const fs::path dir = work_dir();
    const fs::path csv = dir / "rows.csv";
    const fs::path jsonl = dir / "rows.jsonl";

    json cfg = basic_config(csv);
    // middle point is invalid (negative rate): recorded in-row, sweep continues
    cfg["axes"] = json::array({json{{"name", "gamma"}, {"values", {0.5, -1.0, 1.0}}}});
    cfg["jsonl"] = jsonl.string();
    cfg["workers"] = 2;
    cfg["mk_eps"] = 1e-4;
    auto spec = SweepSpec::from_json(cfg);
    const auto rows = run_sweep(spec);

    REQUIRE(rows.size() == 3);
    CHECK(rows[0].error.empty());
    CHECK(rows[1].error == "validation");
    CHECK(rows[2].error.empty());
    CHECK(rows[0].nm_value > 0.0);
    for (const auto& row : rows)
        if (row.error.empty()) CHECK(row.markovian == (row.nm_value < spec.mk_eps));
    CHECK(rows[0].index == 0);
    CHECK(rows[2].params.gamma == 1.0);
    CHECK(rows[0].wall_time_s == 0.0);  // timing off: deterministic output

    const std::string text = slurp(csv);
    CHECK(text.rfind("# {", 0) == 0);
    CHECK(line_count(text) == 5);  // header + columns + 3 rows
    CHECK(text.find(",validation") != std::string::npos);
    CHECK(text.find("theta1") != std::string::npos);

    // the in-process writer and the standalone serializer agree byte for byte
    std::ostringstream rewritten;
    write_sweep_csv(rewritten, spec, rows);
    CHECK(rewritten.str() == text);

    // JSONL mirror: spec line plus one parseable object per row
    std::istringstream lines(slurp(jsonl));
    std::string line;
    size_t parsed = 0;
    while (std::getline(lines, line)) {
        const json j = json::parse(line);
        if (parsed == 0) {
            CHECK(j.contains("spec"));
        } else {
            CHECK(j.at("index") == parsed - 1);
            if (j.at("error").get<std::string>().empty()) CHECK(j.at("nm").is_number());
            else CHECK(j.at("nm").is_null());
        }
        ++parsed;
    }
    CHECK(parsed == 4);
}

TEST_CASE("sweep output is byte-identical across runs and worker counts") {
    const fs::path dir = work_dir();
    const fs::path a = dir / "a.csv", b = dir / "b.csv";

    json cfg = basic_config(a);
    cfg["workers"] = 3;
    auto spec = SweepSpec::from_json(cfg);
    run_sweep(spec);
    spec.csv_path = b.string();
    spec.workers = 1;
    run_sweep(spec);

    // the header echoes the computation, not paths or thread counts, so the
    // whole file is byte-identical
    const std::string ta = slurp(a), tb = slurp(b);
    CHECK(ta == tb);
    CHECK(line_count(ta) == 8);
}

TEST_CASE("trajectories sample the central Bloch vector") {
    ModelParams params;
    params.n_spins = 4;
    params.gamma = 1.0;
    const std::vector<BlochAngles> states{{M_PI / 2, 0.0}, {M_PI / 2, M_PI}};
    const auto times = time_grid(6.0, 31);
    const auto records = export_trajectories(params, states, times);

    REQUIRE(records.size() == states.size() * times.size());
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        CHECK(r.x * r.x + r.y * r.y + r.z * r.z <= 1.0 + 1e-9);
        CHECK(r.state_index == static_cast<int>(i / times.size()));
        CHECK(r.time == times[i % times.size()]);
        CHECK(r.purity <= 1.0 + 1e-9);
    }
    CHECK(records[0].theta0 == M_PI / 2);
    CHECK(records[times.size()].phi0 == M_PI);
    // pure initial states start on the sphere
    CHECK(records[0].purity == doctest::Approx(1.0).epsilon(1e-12));

    // frozen model: gamma = 0 and J = 0 leave the Bloch vector constant
    ModelParams frozen;
    frozen.j_coupling = 0.0;
    frozen.gamma = 0.0;
    const auto still = export_trajectories(frozen, {{1.0, 2.0}}, time_grid(5.0, 11));
    for (const auto& r : still) {
        CHECK(r.x == doctest::Approx(still[0].x).epsilon(1e-12));
        CHECK(r.y == doctest::Approx(still[0].y).epsilon(1e-12));
        CHECK(r.z == doctest::Approx(still[0].z).epsilon(1e-12));
    }

    CHECK_THROWS_AS((void)export_trajectories(params, {}, times), validation_error);
    CHECK_THROWS_AS((void)export_trajectories(params, states, {1.0, 0.5}), validation_error);

    std::ostringstream out;
    write_trajectory_csv(out, params, records);
    const std::string text = out.str();
    CHECK(text.rfind("# {", 0) == 0);
    CHECK(line_count(text) == records.size() + 2);
    CHECK(text.find("state_index,theta0,phi0,time,x,y,z,purity") != std::string::npos);
}

TEST_CASE("cross check compares fast paths against the reference") {
    ModelParams params;
    params.n_spins = 2;
    params.gamma = 0.7;
    params.detuning = 0.4;
    const auto times = time_grid(3.0, 7);

    const auto report = cross_check(params, times);
    CHECK(report.pass);
    CHECK(report.engine_discrepancy < 1e-6);
    CHECK(report.kernel_checked);
    CHECK(report.kernel_discrepancy < 1e-6);

    // anisotropic point: the kernel is skipped unless explicitly required
    ModelParams aniso = params;
    aniso.anisotropy = 0.3;
    const auto partial = cross_check(aniso, times);
    CHECK(partial.pass);
    CHECK_FALSE(partial.kernel_checked);
    CHECK(partial.kernel_discrepancy == 0.0);
    CHECK_THROWS_AS((void)cross_check(aniso, times, true), validation_error);

    ModelParams big = params;
    big.n_spins = 12;
    CHECK_THROWS_AS((void)cross_check(big, times), validation_error);
    CHECK_THROWS_AS((void)cross_check(params, {}), validation_error);
}

TEST_CASE("CLI end to end") {
    const fs::path dir = work_dir();

    SUBCASE("sweep subcommand reruns byte-identically") {
        const fs::path cfg_path = dir / "cli_sweep.json";
        const fs::path out1 = dir / "cli1.csv", out2 = dir / "cli2.csv";
        json cfg = basic_config(out1);
        cfg["axes"] = json::array({json{{"name", "delta"}, {"values", {0.0, 1.0}}}});
        std::ofstream(cfg_path) << cfg.dump();

        CHECK(run_cli("sweep --config " + cfg_path.string()) == 0);
        CHECK(run_cli("sweep --config " + cfg_path.string() + " --out " + out2.string()
                      + " --workers 2")
              == 0);
        const std::string t1 = slurp(out1), t2 = slurp(out2);
        const auto rows_only = [](const std::string& t) {
            return t.substr(t.find("\nindex"));  // drop the path-bearing header echo
        };
        CHECK(rows_only(t1) == rows_only(t2));
        CHECK(line_count(t1) == 4);
    }

    SUBCASE("nm subcommand reports a measure") {
        const fs::path out = dir / "nm.json";
        CHECK(run_cli("nm --n 2 --gamma 0.5 --backend flat --out " + out.string()) == 0);
        const json report = json::parse(slurp(out));
        CHECK(report.at("nm").get<double>() > 0.0);
        CHECK(report.at("pair").at("theta1").get<double>() > 0.0);
        CHECK(report.at("warnings").is_array());
    }

    SUBCASE("trajectories subcommand emits CSV") {
        const fs::path out = dir / "traj.csv";
        CHECK(run_cli("trajectories --n 2 --gamma 1 --tmax 4 --samples 9 --out " + out.string())
              == 0);
        CHECK(line_count(slurp(out)) == 2 * 9 + 2);
    }

    SUBCASE("crosscheck subcommand passes on a small star") {
        CHECK(run_cli("crosscheck --n 2 --gamma 1 --tmax 2 --samples 5 > /dev/null") == 0);
    }

    SUBCASE("validation failures exit with code 2") {
        CHECK(run_cli("nm --n 2 --backend bogus") == 2);
        CHECK(run_cli("nm --n 2 --lambda 0.5 --backend flat") == 2);
        CHECK(run_cli("sweep --config " + (dir / "missing.json").string()) == 2);
        CHECK(run_cli("crosscheck --n 12") == 2);
        CHECK(run_cli("bogus-subcommand") == 2);
    }
}
