#include "hanguard/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "hanguard/controller.hpp"
#include "hanguard/policy.hpp"
#include "hanguard/policy_text.hpp"
#include "hanguard/procfs.hpp"
#include "hanguard/sim/runner.hpp"

namespace hanguard::cli {

namespace fs = std::filesystem;

namespace {

// Failure with a fixed exit status; the message goes to stderr.
struct Exit {
    int code;
    std::string message;
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Exit{kExitFailure, "cannot read " + path};
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text)) throw Exit{kExitFailure, "cannot write " + path.string()};
}

policy::Policy load_policy(const std::string& path) {
    const auto text = read_file(path);
    policy::Policy p;
    try {
        p = policy::parse_policy(text);
    } catch (const ParseError& e) {
        throw Exit{kExitFailure, path + ": " + e.what()};
    }
    return p;
}

void require_valid(const policy::Policy& p) {
    const auto violations = policy::validate_policy(p);
    if (violations.empty()) return;
    std::string msg = "policy is invalid:";
    for (const auto& v : violations) msg += "\n  " + v.record + ": " + v.message;
    throw Exit{kExitFailure, msg};
}

void save_policy(const std::string& path, const policy::Policy& p) {
    controller::FilePolicyStore store(path);
    if (!store.persist(p)) throw Exit{kExitFailure, "cannot write " + path};
}

MacAddress parse_mac(const std::string& text) {
    try {
        return MacAddress::parse(text);
    } catch (const ParseError& e) {
        throw Exit{kExitUsage, "bad MAC address '" + text + "': " + e.what()};
    }
}

// ── Policy verbs ─────────────────────────────────────────────────────────────

int policy_init(const std::string& policy_path, const std::string& topology_path, std::ostream& out) {
    policy::Topology topo;
    try {
        topo = policy::parse_topology(read_file(topology_path));
    } catch (const ParseError& e) {
        throw Exit{kExitFailure, topology_path + ": " + e.what()};
    }
    policy::Policy p;
    try {
        p = policy::default_policy(topo.phones, topo.devices, topo.apps);
    } catch (const policy::ConfigError& e) {
        throw Exit{kExitFailure, e.what()};
    }
    require_valid(p);
    save_policy(policy_path, p);
    out << "wrote " << policy_path << " version " << p.version << '\n';
    return kExitOk;
}

int policy_show(const std::string& policy_path, std::ostream& out) {
    const auto p = load_policy(policy_path);
    require_valid(p);
    out << policy::format_policy(p);
    return kExitOk;
}

int policy_bind(const std::string& policy_path, const std::string& app, const std::string& device,
                const std::string& category, std::ostream& out) {
    const auto p = load_policy(policy_path);
    policy::Policy next;
    try {
        next = policy::bind_app_device(p, app, parse_mac(device), category);
    } catch (const policy::ConfigError& e) {
        throw Exit{kExitFailure, e.what()};
    }
    require_valid(next);
    save_policy(policy_path, next);
    out << "bound " << app << " to " << device << " in category " << category << "; version " << next.version
        << '\n';
    return kExitOk;
}

int policy_update(const std::string& policy_path, const std::string& delta_path, const std::string& actor,
                  const std::string& log_path, std::ostream& out, std::ostream& err) {
    const auto p = load_policy(policy_path);
    policy::PolicyUpdate update;
    try {
        update = policy::parse_update(read_file(delta_path));
    } catch (const ParseError& e) {
        throw Exit{kExitFailure, delta_path + ": " + e.what()};
    }
    controller::Controller router(controller::ControllerConfig{}, p,
                                  std::make_shared<controller::FilePolicyStore>(policy_path));
    const auto result = router.policy_update_service(update, parse_mac(actor), SimTime{0}, {});
    const auto log = router.log().to_csv();
    if (!log_path.empty())
        write_file(log_path, log);
    else
        err << log;
    if (const auto* f = std::get_if<controller::UpdateFailure>(&result))
        throw Exit{kExitFailure, "update rejected: " + f->reason};
    out << "updated " << policy_path << " to version " << std::get<std::uint64_t>(result) << '\n';
    return kExitOk;
}

// ── Scenarios ────────────────────────────────────────────────────────────────

std::vector<sim::Scenario> resolve_scenarios(const std::string& target) {
    for (const auto& name : sim::builtin_names())
        if (name == target) return {sim::builtin_scenario(name)};
    if (!fs::exists(target)) throw Exit{kExitUsage, "no built-in scenario or file named '" + target + "'"};
    try {
        return sim::parse_scenario_file(read_file(target));
    } catch (const ParseError& e) {
        throw Exit{kExitFailure, target + ": " + e.what()};
    } catch (const sim::ScenarioError& e) {
        throw Exit{kExitFailure, target + ": " + e.what()};
    }
}

std::string events_csv(const sim::MetricsReport& report) {
    std::ostringstream os;
    os << "trial,time,component,event,detail\n";
    for (const auto& t : report.trials) {
        std::istringstream in(t.event_log);
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line))
            if (!line.empty()) os << t.index << ',' << line << '\n';
    }
    return os.str();
}

int run_scenarios(const std::string& target, const sim::RunOptions& options, const std::string& out_dir,
                  std::ostream& out, std::ostream& err) {
    // Reject bad overrides as usage errors before any work starts.
    for (const auto& [k, v] : options.overrides) {
        sim::SimParams probe;
        try {
            probe.set(k, v);
        } catch (const sim::ScenarioError& e) {
            throw Exit{kExitUsage, std::string("--set ") + k + "=" + v + ": " + e.what()};
        }
    }
    const auto scenarios = resolve_scenarios(target);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw Exit{kExitFailure, "cannot create " + out_dir + ": " + ec.message()};

    int status = kExitOk;
    for (const auto& sc : scenarios) {
        sim::MetricsReport report;
        try {
            report = sim::run_scenario(sc, options);
        } catch (const sim::ScenarioError& e) {
            throw Exit{kExitFailure, e.what()};
        }
        const fs::path dir(out_dir);
        write_file(dir / (sc.name + "_metrics.csv"), sim::metrics_csv(report));
        write_file(dir / (sc.name + "_events.csv"), events_csv(report));
        if (options.trace) write_file(dir / (sc.name + "_trace.csv"), sim::trace_csv(report));
        if (report.ok()) {
            out << sc.name << ": " << report.trials.size() << " trials, all checks passed\n";
        } else {
            out << sc.name << ": " << report.trials.size() << " trials, " << report.failures.size()
                << " check failures\n";
            err << "first failure: " << report.failures.front() << '\n';
            status = kExitFailure;
        }
    }
    return status;
}

// ── Report ───────────────────────────────────────────────────────────────────

// flow.<i>.<label>.<metric>[.<n>] -> flow.<label>.<metric>
std::string metric_class(const std::string& metric) {
    if (metric.rfind("flow.", 0) != 0) return metric;
    std::vector<std::string> parts;
    std::stringstream ss(metric);
    std::string p;
    while (std::getline(ss, p, '.')) parts.push_back(p);
    if (parts.size() < 4) return metric;
    return "flow." + parts[2] + "." + parts[3];
}

std::vector<std::string> split_csv(const std::string& line) {
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
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

int report(const std::string& dir, std::ostream& out) {
    if (!fs::is_directory(dir)) throw Exit{kExitUsage, dir + " is not a directory"};
    struct Agg {
        std::size_t n = 0;
        double sum = 0, lo = 0, hi = 0;
    };
    // (scenario, mode, poll_ms, metric class)
    std::map<std::tuple<std::string, std::string, std::string, std::string>, Agg> table;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().filename().string().ends_with("_metrics.csv")) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw Exit{kExitFailure, "no *_metrics.csv files in " + dir};

    for (const auto& file : files) {
        std::istringstream in(read_file(file.string()));
        std::string line;
        std::getline(in, line);
        std::map<std::string, std::map<std::string, std::string>> trials;  // trial -> metric -> value
        std::vector<std::vector<std::string>> rows;
        while (std::getline(in, line)) {
            auto f = split_csv(line);
            if (f.size() != 4) continue;
            trials[f[1]][f[2]] = f[3];
            rows.push_back(std::move(f));
        }
        for (const auto& r : rows) {
            double v = 0;
            try {
                std::size_t used = 0;
                v = std::stod(r[3], &used);
                if (used != r[3].size()) continue;
            } catch (const std::exception&) {
                continue;
            }
            const auto& t = trials[r[1]];
            auto get = [&](const char* k) {
                auto it = t.find(k);
                return it == t.end() ? std::string() : it->second;
            };
            if (r[2] == "seed" || r[2] == "poll_ms" || r[2] == "repetition") continue;
            auto& a = table[{r[0], get("mode"), get("poll_ms"), metric_class(r[2])}];
            if (a.n == 0) a.lo = a.hi = v;
            a.lo = std::min(a.lo, v);
            a.hi = std::max(a.hi, v);
            a.sum += v;
            ++a.n;
        }
    }
    out << "scenario,mode,poll_ms,metric,count,mean,min,max\n";
    for (const auto& [k, a] : table) {
        const auto& [sc, mode, poll, metric] = k;
        out << sc << ',' << mode << ',' << poll << ',' << metric << ',' << a.n << ',' << (a.sum / a.n) << ','
            << a.lo << ',' << a.hi << '\n';
    }
    return kExitOk;
}

// ── procfs ───────────────────────────────────────────────────────────────────

std::string endpoint_text(const procfs::Endpoint& e) {
    const auto v4 = e.addr.to_v4();
    const auto host = v4 ? v4->to_string() : "[" + e.addr.to_string() + "]";
    return host + ":" + std::to_string(e.port);
}

int procfs_parse(const std::string& path, std::ostream& out) {
    std::istringstream in(read_file(path));
    std::string line;
    std::size_t number = 0;
    std::ostringstream rows;
    rows << "slot,local,remote,state,uid\n";
    while (std::getline(in, line)) {
        ++number;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        if (number == 1 && line.compare(first, 2, "sl") == 0) continue;
        try {
            const auto p = procfs::parse_line(line);
            std::ostringstream st;
            st << std::uppercase << std::hex << std::setw(2) << std::setfill('0') << int{p.state};
            rows << p.slot << ',' << endpoint_text(p.local) << ',' << endpoint_text(p.remote) << ',' << st.str()
                 << ',' << p.uid << '\n';
        } catch (const ParseError& e) {
            throw Exit{kExitFailure, path + ": line " + std::to_string(number) + ": " + e.what()};
        }
    }
    out << rows.str();
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Home network flow access control: policy administration and simulation", "hanguard"};
    app.require_subcommand(1);

    std::string policy_path, topology_path, app_id, device, category, delta_path, actor, log_path;
    std::string target, out_dir = ".", in_dir, procfs_path;
    sim::RunOptions opts;
    std::int64_t trials = 0, poll_ms = 0;
    std::string strategy;
    std::vector<std::string> sets;

    auto* init = app.add_subcommand("policy-init", "Write a default policy from a topology file");
    init->add_option("--policy", policy_path, "Policy file to write")->required();
    init->add_option("--topology", topology_path, "Topology file")->required()->check(CLI::ExistingFile);

    auto* show = app.add_subcommand("policy-show", "Print the policy in canonical form");
    show->add_option("--policy", policy_path, "Policy file")->required()->check(CLI::ExistingFile);

    auto* bind = app.add_subcommand("policy-bind", "Bind an app to a device under a category");
    bind->add_option("--policy", policy_path, "Policy file")->required()->check(CLI::ExistingFile);
    bind->add_option("app", app_id, "App id")->required();
    bind->add_option("device", device, "Device MAC")->required();
    bind->add_option("category", category, "Category")->required();

    auto* update = app.add_subcommand("policy-update", "Apply an update delta as a named phone");
    update->add_option("--policy", policy_path, "Policy file")->required()->check(CLI::ExistingFile);
    update->add_option("--actor", actor, "MAC of the phone making the change")->required();
    update->add_option("--log", log_path, "Write the event log here instead of stderr");
    update->add_option("delta", delta_path, "Update delta file")->required()->check(CLI::ExistingFile);

    auto* run_cmd = app.add_subcommand("run", "Run a built-in scenario (S1..S10) or a scenario file");
    run_cmd->add_option("scenario", target, "Scenario name or parameter file")->required();
    run_cmd->add_option("--seed", opts.seed, "Base seed");
    run_cmd->add_option("--out", out_dir, "Output directory");
    run_cmd->add_option("--trials", trials, "Repetitions per configuration")->check(CLI::PositiveNumber);
    run_cmd->add_option("--poll-ms", poll_ms, "Single polling interval instead of the sweep")
        ->check(CLI::PositiveNumber);
    run_cmd->add_option("--strategy", strategy, "procfs polling strategy")
        ->check(CLI::IsMember({"naive", "smarter"}));
    run_cmd->add_flag("--vanilla", "Run with enforcement disabled only");
    run_cmd->add_flag("--trace", opts.trace, "Also write the event trace");
    run_cmd->add_option("--set", sets, "Parameter override key=value")->allow_extra_args(false);

    auto* rep = app.add_subcommand("report", "Summarize metrics CSV files in a directory");
    rep->add_option("dir", in_dir, "Directory with *_metrics.csv files")->required();

    auto* pp = app.add_subcommand("procfs-parse", "Decode a /proc/net/{tcp,tcp6,udp,udp6} file");
    pp->add_option("file", procfs_path, "File to decode")->required()->check(CLI::ExistingFile);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*init) return policy_init(policy_path, topology_path, out);
        if (*show) return policy_show(policy_path, out);
        if (*bind) return policy_bind(policy_path, app_id, device, category, out);
        if (*update) return policy_update(policy_path, delta_path, actor, log_path, out, err);
        if (*run_cmd) {
            if (trials > 0) opts.trials = trials;
            if (poll_ms > 0) opts.poll_ms = poll_ms;
            if (!strategy.empty())
                opts.strategy = strategy == "naive" ? monitor::Strategy::Naive : monitor::Strategy::Smarter;
            if (run_cmd->count("--vanilla") > 0) opts.vanilla = true;
            for (const auto& s : sets) {
                const auto eq = s.find('=');
                if (eq == std::string::npos || eq == 0) throw Exit{kExitUsage, "--set expects key=value, got " + s};
                opts.overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
            }
            return run_scenarios(target, opts, out_dir, out, err);
        }
        if (*rep) return report(in_dir, out);
        if (*pp) return procfs_parse(procfs_path, out);
    } catch (const Exit& e) {
        err << "error: " << e.message << '\n';
        return e.code;
    }
    return kExitUsage;
}

}  // namespace hanguard::cli
