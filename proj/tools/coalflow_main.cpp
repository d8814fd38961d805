// coalflow: command-line front end for the coalescing stochastic flow
// simulator.  Subcommands:
//   kernel      inspect a covariance kernel (functionals, optional grid dump)
//   flow        run one flow configuration and write trajectory CSV
//   experiment  run a named statistical experiment and print its JSON report
//   report      render an existing report.json as a pass/fail table
//
// Exit codes: 0 success; 1 completed run with a failed statistic;
// 2 usage or configuration error (message on standard error).

#include "coalflow/flow_engine.hpp"
#include "coalflow/harness.hpp"
#include "coalflow/kernels.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using coalflow::ConfigInvalid;
using nlohmann::ordered_json;

ordered_json finite_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigInvalid("cannot open \"" + path + "\" for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw ConfigInvalid("cannot write \"" + path.string() + "\"");
}

// ---------------------------------------------------------------------------
// kernel subcommand

struct KernelArgs {
    std::string id;
    double epsilon = 0.2;
    bool report = false;
    double grid_max = 0.0;   // 0: derived from the support radius
    double grid_step = 0.0;  // 0: grid_max / 100
};

int cmd_kernel(const KernelArgs& a) {
    coalflow::Kernel kernel = [&] {
        try {
            return coalflow::kernel_from_id(a.id, a.epsilon);
        } catch (const std::invalid_argument& e) {
            throw ConfigInvalid(e.what());
        }
    }();
    const coalflow::KernelFunctionals f = coalflow::compute_functionals(kernel);

    ordered_json doc;
    doc["schema_version"] = 1;
    doc["id"] = kernel.id();
    doc["epsilon"] = kernel.is_mollified() ? ordered_json(kernel.epsilon()) : ordered_json(nullptr);
    doc["C"] = finite_or_null(f.c_smooth);
    doc["C_m"] = finite_or_null(f.c_m);
    doc["L2"] = f.l_squared ? ordered_json(*f.l_squared) : ordered_json(nullptr);

    if (a.report) {
        double gmax = a.grid_max;
        if (gmax <= 0.0) {
            const double support = kernel.support_radius();
            gmax = std::isfinite(support) ? 1.1 * support : 4.0;
        }
        double step = a.grid_step > 0.0 ? a.grid_step : gmax / 100.0;
        if (!(step > 0.0)) throw ConfigInvalid("--grid-step must be positive");
        std::vector<double> grid, gamma;
        for (double x = 0.0; x <= gmax + 0.5 * step; x += step) {
            grid.push_back(x);
            gamma.push_back(kernel(x));
        }
        doc["grid"] = grid;
        doc["gamma"] = gamma;
    }
    std::cout << doc.dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// flow subcommand

struct FlowArgs {
    std::string kernel_id = "gaussian";
    double epsilon = 0.2;
    long long n = 256;
    std::vector<double> starts = {0.0, 0.25, 0.5, 0.75, 1.0};
    long long replicas = 1;
    std::uint64_t seed = 42;
    std::string out;
    double merge_tol = 0.005;
};

// Instantaneous clusters of one recorded state: adjacent positions closer
// than merge_tol share a cluster id (ids count up from the leftmost start).
std::vector<long long> instant_clusters(const std::vector<double>& xs, double tol) {
    std::vector<long long> ids(xs.size(), 0);
    for (size_t j = 1; j < xs.size(); ++j)
        ids[j] = ids[j - 1] + (std::abs(xs[j] - xs[j - 1]) < tol ? 0 : 1);
    return ids;
}

void write_flow_csv_clustered(std::ostream& os, const coalflow::FlowPath& path,
                              std::uint64_t replica, double merge_tol, bool header) {
    if (header) os << "replica,start_index,step,time,position,cluster_id\n";
    const long long n = path.steps();
    std::vector<std::vector<long long>> clusters(path.positions.size());
    for (size_t k = 0; k < path.positions.size(); ++k)
        clusters[k] = instant_clusters(path.positions[k], merge_tol);
    char buf[40];
    for (size_t j = 0; j < path.positions.front().size(); ++j)
        for (long long k = 0; k <= n; ++k) {
            const double t = n == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(n);
            os << replica << ',' << j << ',' << k << ',';
            std::snprintf(buf, sizeof buf, "%.17g", t);
            os << buf << ',';
            std::snprintf(buf, sizeof buf, "%.17g", path.positions[static_cast<size_t>(k)][j]);
            os << buf << ',' << clusters[static_cast<size_t>(k)][j] << '\n';
        }
}

int cmd_flow(const FlowArgs& a) {
    if (a.n < 1) throw ConfigInvalid("--n must be at least 1");
    if (a.replicas < 1) throw ConfigInvalid("--replicas must be at least 1");
    if (a.starts.empty()) throw ConfigInvalid("--starts must name at least one point");
    for (size_t j = 1; j < a.starts.size(); ++j)
        if (a.starts[j] < a.starts[j - 1])
            throw ConfigInvalid("--starts must be nondecreasing");

    coalflow::FlowConfig fc;
    fc.kernel = [&] {
        try {
            return coalflow::kernel_from_id(a.kernel_id, a.epsilon);
        } catch (const std::invalid_argument& e) {
            throw ConfigInvalid(e.what());
        }
    }();
    fc.scheme = fc.kernel.is_mollified() ? coalflow::Scheme::WhiteNoise
                                         : coalflow::Scheme::DirectGP;
    fc.n_steps = a.n;
    fc.starts = a.starts;

    std::ostringstream csv;
    std::vector<double> terminal_map;
    for (long long r = 0; r < a.replicas; ++r) {
        const coalflow::FlowPath path =
            coalflow::run_flow(fc, coalflow::RngStream(a.seed, static_cast<std::uint64_t>(r)));
        if (r == 0) terminal_map = path.positions.back();
        if (fc.kernel.is_mollified())
            write_flow_csv_clustered(csv, path, static_cast<std::uint64_t>(r), a.merge_tol,
                                     r == 0);
        else
            coalflow::write_flow_csv(csv, path, static_cast<std::uint64_t>(r), r == 0);
    }

    if (a.out.empty()) {
        std::cout << csv.str();
        return 0;
    }

    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(a.out, ec);
    if (ec) throw ConfigInvalid("cannot create output directory \"" + a.out + "\"");
    write_text_file(fs::path(a.out) / "paths.csv", csv.str());

    std::ostringstream dat;
    dat << "# u x_u_at_unit_time\n";
    char buf[40];
    for (size_t j = 0; j < a.starts.size(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", a.starts[j]);
        dat << buf << ' ';
        std::snprintf(buf, sizeof buf, "%.17g", terminal_map[j]);
        dat << buf << '\n';
    }
    write_text_file(fs::path(a.out) / "flow_map.dat", dat.str());

    ordered_json doc;
    doc["schema_version"] = 1;
    doc["kernel"] = fc.kernel.id();
    doc["epsilon"] =
        fc.kernel.is_mollified() ? ordered_json(fc.kernel.epsilon()) : ordered_json(nullptr);
    doc["scheme"] = fc.scheme == coalflow::Scheme::WhiteNoise ? "white_noise" : "direct";
    doc["n"] = a.n;
    doc["starts"] = a.starts;
    doc["replicas"] = a.replicas;
    doc["seed"] = a.seed;
    doc["files"] = {"paths.csv", "flow_map.dat"};
    std::cout << doc.dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// experiment subcommand

struct ExperimentArgs {
    std::string id;
    std::string config_path;
    bool list = false;
    std::optional<std::uint64_t> seed;
    std::optional<long long> replicas;
    std::optional<std::string> out;
    std::optional<int> jobs;
};

int cmd_experiment(const ExperimentArgs& a) {
    if (a.list) {
        for (const std::string& id : coalflow::experiment_ids()) std::cout << id << "\n";
        return 0;
    }
    coalflow::ExperimentConfig cfg;
    if (!a.config_path.empty())
        cfg = coalflow::config_from_json(read_text_file(a.config_path));
    else if (!a.id.empty())
        cfg.experiment = a.id;
    else
        throw ConfigInvalid("experiment needs --id or --config (or --list)");

    if (a.seed) cfg.seed = *a.seed;
    if (a.replicas) cfg.replicas = *a.replicas;
    if (a.out) cfg.out_dir = *a.out;
    if (a.jobs) cfg.jobs = *a.jobs;

    const coalflow::ExperimentReport rep = coalflow::run_experiment(cfg);
    std::cout << rep.to_json().dump(2) << "\n";
    return rep.pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// report subcommand

int cmd_report(const std::string& in_path) {
    namespace fs = std::filesystem;
    fs::path path(in_path);
    if (fs::is_directory(path)) path /= "report.json";

    ordered_json doc;
    try {
        doc = ordered_json::parse(read_text_file(path.string()));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigInvalid("cannot parse \"" + path.string() + "\": " + e.what());
    }
    if (!doc.contains("experiment") || !doc.contains("statistics") || !doc.contains("pass"))
        throw ConfigInvalid("\"" + path.string() +
                            "\" is not an experiment report "
                            "(missing experiment/statistics/pass)");

    std::cout << "experiment: " << doc["experiment"].get<std::string>() << "\n";
    for (const auto& s : doc["statistics"]) {
        const bool info = s["threshold"].is_null();
        const bool pass = s["pass"].get<bool>();
        std::cout << "  [" << (info ? "info" : pass ? "PASS" : "FAIL") << "] "
                  << s["name"].get<std::string>() << " = " << s["value"].dump();
        if (!info) std::cout << " (threshold " << s["threshold"].dump() << ")";
        std::cout << "\n        " << s["claim"].get<std::string>() << "\n";
    }
    const bool pass = doc["pass"].get<bool>();
    std::cout << "overall: " << (pass ? "PASS" : "FAIL") << "\n";
    return pass ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"coalescing stochastic flow simulator"};
    app.require_subcommand(1);

    KernelArgs ka;
    CLI::App* kernel = app.add_subcommand("kernel", "inspect a covariance kernel");
    kernel->add_option("--id", ka.id, "kernel id: gaussian | indicator | mollified")->required();
    kernel->add_option("--epsilon", ka.epsilon, "bump width for mollified kernels");
    kernel->add_flag("--report", ka.report, "include the kernel values on a grid");
    kernel->add_option("--grid-max", ka.grid_max, "largest grid abscissa (0 = automatic)");
    kernel->add_option("--grid-step", ka.grid_step, "grid spacing (0 = grid-max / 100)");

    FlowArgs fa;
    CLI::App* flow = app.add_subcommand("flow", "run one flow and write trajectory CSV");
    flow->add_option("--kernel", fa.kernel_id, "kernel id: gaussian | indicator | mollified");
    flow->add_option("--epsilon", fa.epsilon, "bump width for mollified kernels");
    flow->add_option("--n", fa.n, "number of time steps on [0,1]");
    flow->add_option("--starts", fa.starts, "tracked start positions (nondecreasing)")
        ->delimiter(',');
    flow->add_option("--replicas", fa.replicas, "independent runs to record");
    flow->add_option("--seed", fa.seed, "base rng seed");
    flow->add_option("--out", fa.out, "output directory (default: CSV on stdout)");
    flow->add_option("--merge-tol", fa.merge_tol, "cluster tolerance for the cluster_id column");

    ExperimentArgs ea;
    CLI::App* experiment =
        app.add_subcommand("experiment", "run a named statistical experiment");
    experiment->add_option("--id", ea.id, "experiment id (see --list)");
    experiment->add_option("--config", ea.config_path, "JSON config document");
    experiment->add_flag("--list", ea.list, "print the known experiment ids and exit");
    std::uint64_t seed_val = 0;
    long long replicas_val = 0;
    std::string out_val;
    int jobs_val = 0;
    CLI::Option* seed_opt = experiment->add_option("--seed", seed_val, "override the rng seed");
    CLI::Option* replicas_opt =
        experiment->add_option("--replicas", replicas_val, "override the replica count");
    CLI::Option* out_opt =
        experiment->add_option("--out", out_val, "directory for report.json / samples.csv / .dat");
    CLI::Option* jobs_opt =
        experiment->add_option("--jobs", jobs_val, "replica workers (0 = one per execution unit)");

    std::string report_in;
    CLI::App* report = app.add_subcommand("report", "render an existing report.json");
    report->add_option("--in", report_in, "report.json or a directory containing it")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (kernel->parsed()) return cmd_kernel(ka);
        if (flow->parsed()) return cmd_flow(fa);
        if (experiment->parsed()) {
            if (seed_opt->count()) ea.seed = seed_val;
            if (replicas_opt->count()) ea.replicas = replicas_val;
            if (out_opt->count()) ea.out = out_val;
            if (jobs_opt->count()) ea.jobs = jobs_val;
            return cmd_experiment(ea);
        }
        if (report->parsed()) return cmd_report(report_in);
        std::cerr << "no subcommand given\n";
        return 2;
    } catch (const ConfigInvalid& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
