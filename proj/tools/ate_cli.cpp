// ate: run experiments, trace single replicates, and tabulate summaries.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "ate/ate.hpp"
#include "ate/config.hpp"
#include "ate/csv.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int exit_config = 2;
constexpr int exit_runtime = 3;
constexpr int exit_interrupted = 130;

std::atomic<bool> interrupted{false};

extern "C" void on_signal(int) { interrupted.store(true); }

// Error carrying a process exit status.
struct Failure {
    int code;
    std::string message;
};

std::size_t default_threads() {
    if (const char* env = std::getenv("ATE_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
        std::cerr << "warning: ignoring ATE_THREADS='" << env << "'\n";
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> replicates;
    std::optional<std::string> out;
};

ate::ExperimentConfig load(const std::string& path, const Overrides& o) {
    auto cfg = ate::load_config(path);
    if (o.seed) cfg.spec.master_seed = *o.seed;
    if (o.replicates) {
        if (*o.replicates == 0) throw ate::ConfigError("replicates", "must be positive");
        cfg.spec.replicates = *o.replicates;
    }
    if (o.out) cfg.outputs.directory = *o.out;
    return cfg;
}

template <class Write>
void write_file(const fs::path& p, Write&& w) {
    auto f = ate::csv::open(p.string());
    w(f);
    if (!f) throw std::runtime_error("write failed: " + p.string());
}

std::string digest(const ate::ExperimentSpec& spec, const ate::CellResult& cell,
                   const std::vector<ate::SummaryRow>& rows) {
    const auto& d = spec.designs[cell.design].label;
    const auto& sc = spec.scenarios[cell.scenario];
    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    os << d << " / " << sc.label << ": R=" << cell.replicates;
    if (cell.replicates == 0) return os.str();
    const std::uint64_t h = spec.horizon();
    if (!spec.final_tests.empty() && spec.model != ate::Model::TimeToEvent && spec.num_arms == 2) {
        const auto names = ate::rate_names(sc.role);
        os << " " << spec.final_tests[0].label << "@" << h << " ";
        for (std::size_t v = 0; v < 3; ++v) {
            os << (v ? " " : "") << names[v] << "="
               << ate::find_metric(rows, d, sc.label, spec.final_tests[0].label + "/" + names[v], h).value;
        }
    }
    os << " mean_N";
    for (std::size_t k = 0; k < spec.num_arms; ++k) {
        os << (k ? "/" : "=") << std::setprecision(1)
           << ate::find_metric(rows, d, sc.label, "mean_N_" + std::to_string(k), h).value;
    }
    return os.str();
}

int cmd_simulate(const std::string& config_path, const Overrides& o, std::size_t threads, bool progress) {
    ate::ExperimentConfig cfg;
    try {
        cfg = load(config_path, o);
    } catch (const ate::ConfigError& e) {
        throw Failure{exit_config, e.what()};
    }
    const auto& spec = cfg.spec;
    const fs::path dir = cfg.outputs.directory;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Failure{exit_runtime, "cannot create " + dir.string() + ": " + ec.message()};

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::function<void(std::size_t, std::size_t)> report;
    if (progress) {
        report = [](std::size_t done, std::size_t total) {
            if (done == total || done % 256 < 8) std::cerr << "\r" << done << "/" << total << std::flush;
        };
    }
    std::vector<ate::CellResult> cells;
    try {
        cells = ate::run_experiment(spec, threads, report, &interrupted);
    } catch (const std::exception& e) {
        throw Failure{exit_runtime, e.what()};
    }
    if (progress) std::cerr << "\n";

    const auto rows = ate::summarize(spec, cells);
    write_file(dir / "resolved_config.json", [&](std::ostream& f) { f << ate::to_json(cfg).dump(2) << "\n"; });
    if (cfg.outputs.wants("summary")) write_file(dir / "summary.csv", [&](std::ostream& f) { ate::csv::write_summary(f, rows); });
    if (cfg.outputs.wants("band") && !spec.bands.empty()) {
        write_file(dir / "bands.csv", [&](std::ostream& f) { ate::csv::write_bands(f, ate::band_rows(spec, cells)); });
    }
    if (cfg.outputs.wants("cdf")) {
        write_file(dir / "cdf.csv", [&](std::ostream& f) { ate::csv::write_cdf(f, ate::cdf_rows(spec, cells)); });
    }
    if (cfg.outputs.wants("verdict") && spec.keep_verdicts) {
        write_file(dir / "verdicts.csv", [&](std::ostream& f) { ate::csv::write_verdicts(f, spec, cells); });
    }
    for (const auto& c : cells) std::cout << digest(spec, c, rows) << "\n";
    if (interrupted.load()) {
        std::cerr << "interrupted: wrote completed replicates only\n";
        return exit_interrupted;
    }
    return 0;
}

// Accepts a label or a zero-based index.
template <class Items, class Label>
std::size_t pick(const Items& items, const std::string& what, const std::string& key, Label label) {
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (label(items[i]) == key) return i;
    }
    std::size_t pos = 0;
    try {
        const unsigned long v = std::stoul(key, &pos);
        if (pos == key.size() && v < items.size()) return v;
    } catch (const std::exception&) {
    }
    throw Failure{exit_config, "no " + what + " '" + key + "'"};
}

int cmd_trace(const std::string& config_path, const Overrides& o, const std::string& design,
              const std::string& scenario, std::size_t replicate, const std::string& out) {
    ate::ExperimentConfig cfg;
    try {
        cfg = load(config_path, o);
    } catch (const ate::ConfigError& e) {
        throw Failure{exit_config, e.what()};
    }
    const auto& spec = cfg.spec;
    const std::size_t d = pick(spec.designs, "design", design, [](const auto& x) { return x.label; });
    const std::size_t s = pick(spec.scenarios, "scenario", scenario, [](const auto& x) { return x.label; });
    if (replicate >= spec.replicates) {
        throw Failure{exit_config, "replicate " + std::to_string(replicate) + " out of range (config has " +
                                       std::to_string(spec.replicates) + ")"};
    }
    ate::TrialTrace trace;
    try {
        trace = ate::trace_replicate(spec, d, s, replicate);
    } catch (const std::exception& e) {
        throw Failure{exit_runtime, e.what()};
    }
    const bool tte = spec.model == ate::Model::TimeToEvent;
    if (out.empty()) {
        ate::csv::write_trace(std::cout, trace, replicate, spec.num_arms, tte);
        return 0;
    }
    const fs::path path = out;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file(path, [&](std::ostream& f) { ate::csv::write_trace(f, trace, replicate, spec.num_arms, tte); });
    fs::path side = path;
    side.replace_filename(path.stem().string() + "_summary" + path.extension().string());
    write_file(side, [&](std::ostream& f) { ate::csv::write_trace_summary(f, trace, replicate, spec.num_arms); });
    std::cout << "wrote " << path.string() << " (" << trace.rows.size() << " rows, " << ate::to_string(trace.stop)
              << ")\n";
    return 0;
}

// Minimal reader for summary.csv (no quoted fields are produced for rates).
std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

int cmd_report(const std::string& dir) {
    const fs::path path = fs::path(dir) / "summary.csv";
    std::ifstream f(path);
    if (!f) throw Failure{exit_config, "missing " + path.string()};
    std::string line;
    if (!std::getline(f, line) || line != "design,scenario,metric,i,value,std_error") {
        throw Failure{exit_config, path.string() + ": not a summary file"};
    }
    const std::vector<std::string> order{"false_positive", "true_negative", "inconclusive_null",
                                         "true_positive",  "false_negative", "inconclusive_alt"};
    const std::map<std::string, std::string> short_name{
        {"false_positive", "FP"}, {"true_negative", "TN"},  {"inconclusive_null", "Inc"},
        {"true_positive", "TP"},  {"false_negative", "FN"}, {"inconclusive_alt", "Inc"}};

    struct Cell {
        double value, se;
    };
    // (test, i) -> (rate, scenario) -> design -> cell
    std::map<std::pair<std::string, std::uint64_t>, std::map<std::pair<std::size_t, std::string>,
                                                             std::map<std::string, Cell>>>
        tables;
    std::vector<std::string> designs;
    std::size_t n = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto c = split(line);
        if (c.size() != 6) throw Failure{exit_config, path.string() + ": malformed row: " + line};
        const auto slash = c[2].rfind('/');
        if (slash == std::string::npos || c[2].compare(0, slash, "drop") == 0) continue;
        const auto rate = std::find(order.begin(), order.end(), c[2].substr(slash + 1));
        if (rate == order.end()) continue;
        if (std::find(designs.begin(), designs.end(), c[0]) == designs.end()) designs.push_back(c[0]);
        const auto key = std::make_pair(c[2].substr(0, slash), std::stoull(c[3]));
        const std::size_t r = static_cast<std::size_t>(rate - order.begin());
        tables[key][{r, c[1]}][c[0]] = {c[4].empty() ? NAN : std::stod(c[4]), c[5].empty() ? NAN : std::stod(c[5])};
        ++n;
    }
    if (n == 0) throw Failure{exit_config, path.string() + ": no rate rows"};

    for (const auto& [key, rows] : tables) {
        std::cout << "test " << key.first << ", i = " << key.second << "\n";
        std::cout << std::left << std::setw(22) << "";
        for (const auto& d : designs) std::cout << std::right << std::setw(16) << d;
        std::cout << "\n";
        for (const auto& [rk, by_design] : rows) {
            std::cout << std::left << std::setw(22) << (short_name.at(order[rk.first]) + " (" + rk.second + ")");
            for (const auto& d : designs) {
                std::ostringstream cell;
                const auto it = by_design.find(d);
                if (it == by_design.end()) {
                    cell << "-";
                } else {
                    cell << std::fixed << std::setprecision(3) << it->second.value << " (" << std::setprecision(3)
                         << it->second.se << ")";
                }
                std::cout << std::right << std::setw(16) << cell.str();
            }
            std::cout << "\n";
        }
        std::cout << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian adaptive multi-arm trial simulator"};
    app.require_subcommand(1);

    Overrides o;
    std::string config;
    std::size_t threads = default_threads();
    bool progress = false;

    auto* sim = app.add_subcommand("simulate", "run every (design, scenario) cell of an experiment");
    sim->add_option("--config", config, "experiment JSON")->required()->check(CLI::ExistingFile);
    sim->add_option("--out", o.out, "output directory (overrides outputs.directory)");
    sim->add_option("--threads", threads, "worker threads (default: ATE_THREADS or all cores)")
        ->check(CLI::PositiveNumber);
    sim->add_option("--seed", o.seed, "master seed override");
    sim->add_option("--replicates", o.replicates, "replicate count override");
    sim->add_flag("--progress", progress, "print progress to stderr");

    std::string design;
    std::string scenario;
    std::size_t replicate = 0;
    std::string trace_out;
    auto* tr = app.add_subcommand("trace", "per-patient trace of one replicate");
    tr->add_option("--config", config, "experiment JSON")->required()->check(CLI::ExistingFile);
    tr->add_option("--design", design, "design label or index")->required();
    tr->add_option("--scenario", scenario, "scenario label or index")->required();
    tr->add_option("--replicate", replicate, "replicate index")->required();
    tr->add_option("--out", trace_out, "trace CSV path (default: stdout)");
    tr->add_option("--seed", o.seed, "master seed override");

    std::string summary_dir;
    auto* rep = app.add_subcommand("report", "rate tables from a simulate output directory");
    rep->add_option("dir", summary_dir, "directory holding summary.csv")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }

    try {
        if (*sim) return cmd_simulate(config, o, threads, progress);
        if (*tr) return cmd_trace(config, o, design, scenario, replicate, trace_out);
        if (*rep) return cmd_report(summary_dir);
    } catch (const Failure& f) {
        std::cerr << "error: " << f.message << "\n";
        return f.code;
    } catch (const ate::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_runtime;
    }
    return 0;
}
