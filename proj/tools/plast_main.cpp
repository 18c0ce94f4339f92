#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "json.hpp"
#include "plast/harness.hpp"
#include "plast/selfcheck.hpp"

namespace {

using nlohmann::json;

int run_command(const std::string& config_path, long seed, const std::string& out,
                const std::vector<std::string>& overrides) {
    plast::RunConfig cfg = plast::parse_config(config_path);
    for (const auto& o : overrides) plast::apply_override(cfg, o);
    if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
    if (!out.empty()) cfg.out_dir = out;
    cfg.validate();
    if (cfg.out_dir.empty()) cfg.out_dir = "runs/" + cfg.method + "_s" + std::to_string(cfg.seed);

    plast::RunLog log = plast::run_cycle_protocol(cfg);
    plast::write_run_outputs(log);
    std::cout << log.run_id << ": ACC " << log.final_acc() * 100.0 << "  TAA "
              << log.taa_value() * 100.0 << "  TAOA " << log.taoa_value() * 100.0 << "  ("
              << log.wall_seconds << "s, " << log.total_steps << " steps)\n";
    std::cout << "outputs in " << cfg.out_dir << "\n";
    return 0;
}

int ticket_command(const std::string& from_dir, const std::string& out) {
    std::string kind;
    double paired_acc = 0.0;
    plast::RunConfig cfg = plast::read_run_config(from_dir, &kind, &paired_acc);
    if (kind != "cycle")
        throw plast::ValidationError("ticket: '" + from_dir + "' is not a cycle run");
    const auto mask = plast::read_final_mask(from_dir);
    const std::string paired_id = std::filesystem::path(from_dir).filename().string();
    cfg.out_dir = out.empty() ? from_dir + "_ticket" : out;

    plast::RunLog log = plast::run_winning_ticket(cfg, mask, paired_id, paired_acc);
    plast::write_run_outputs(log);
    std::cout << log.run_id << ": WT-ACC " << log.final_acc() * 100.0 << "  WT-TAA "
              << log.taa_value() * 100.0;
    if (log.has_delta) std::cout << "  delta_wt_c " << log.delta_wt_c * 100.0;
    std::cout << "\noutputs in " << cfg.out_dir << "\n";
    return 0;
}

int stress_command(const std::string& config_path, const std::string& out, int horizon,
                   const std::vector<std::string>& overrides) {
    plast::RunConfig cfg = plast::parse_config(config_path);
    for (const auto& o : overrides) plast::apply_override(cfg, o);
    if (!out.empty()) cfg.out_dir = out;
    if (cfg.out_dir.empty()) cfg.out_dir = "runs/stress_s" + std::to_string(cfg.seed);
    if (cfg.method != "grow")
        throw plast::ValidationError("stress: the growth-cycle stress test needs run.method=grow");

    const std::vector<int> ks = {5, 10, 20};
    auto logs = plast::run_stress_test(cfg, ks, horizon);
    for (size_t i = 0; i < logs.size(); ++i) {
        plast::write_run_outputs(logs[i]);
        std::cout << "K=" << ks[i] << ": Cycle-TAA " << logs[i].taa_value() * 100.0
                  << "  Cycle-ACC " << logs[i].final_acc() * 100.0 << "\n";
    }
    return 0;
}

struct RunSummary {
    std::string run_id, method, kind;
    double compactness = 0.0;
    uint64_t seed = 0;
    double acc = 0.0, taa = 0.0;
    double birth_act_logparity = 0.0, birth_grad_logparity = 0.0;
    bool has_parity = false;
};

RunSummary summarize_run(const std::string& dir) {
    RunSummary s;
    std::ifstream cin(std::filesystem::path(dir) / "config.json");
    if (!cin) throw plast::ParseError(dir + ": missing config.json");
    json cj;
    cin >> cj;
    s.run_id = cj.value("run_id", dir);
    s.kind = cj.value("kind", "cycle");
    s.method = cj["run"]["method"];
    s.compactness = cj["run"]["compactness"];
    s.seed = cj["run"]["seed"];
    std::ifstream sin(std::filesystem::path(dir) / "summary.json");
    if (sin) {
        json sj;
        sin >> sj;
        s.acc = sj.value("acc", 0.0);
        s.taa = sj.value("taa", 0.0);
    }
    // birth parity from cohorts.csv: post rows, newborn vs incumbent
    std::ifstream coh(std::filesystem::path(dir) / "cohorts.csv");
    if (coh) {
        std::string line;
        std::getline(coh, line);  // header
        std::map<std::pair<int, int>, std::pair<double, double>> newborn, incumbent;
        while (std::getline(coh, line)) {
            std::stringstream ss(line);
            std::string field;
            std::vector<std::string> f;
            while (std::getline(ss, field, ',')) f.push_back(field);
            if (f.size() < 10 || f[3] != "post") continue;
            const std::pair<int, int> key{std::stoi(f[0]), std::stoi(f[1])};
            const std::pair<double, double> stats{std::stod(f[6]), std::stod(f[7])};
            if (f[2] == "newborn") newborn[key] = stats;
            if (f[2] == "incumbent") incumbent[key] = stats;
        }
        if (!newborn.empty()) {
            double act = 0.0, grad = 0.0;
            int n = 0;
            for (const auto& [key, nb] : newborn) {
                auto it = incumbent.find(key);
                if (it == incumbent.end()) continue;
                act += plast::parity(nb.first, it->second.first).log_ratio;
                grad += plast::parity(nb.second, it->second.second).log_ratio;
                ++n;
            }
            if (n > 0) {
                s.birth_act_logparity = act / n;
                s.birth_grad_logparity = grad / n;
                s.has_parity = true;
            }
        }
    }
    return s;
}

int analyze_command(const std::vector<std::string>& run_dirs, const std::string& out_file) {
    std::vector<RunSummary> runs;
    for (const auto& d : run_dirs) runs.push_back(summarize_run(d));

    json report;
    report["runs"] = json::array();
    for (const auto& r : runs) {
        json j{{"run_id", r.run_id}, {"kind", r.kind},       {"method", r.method},
               {"compactness", r.compactness}, {"seed", r.seed}, {"acc", r.acc},
               {"taa", r.taa}};
        if (r.has_parity) {
            j["birth_act_logparity"] = r.birth_act_logparity;
            j["birth_grad_logparity"] = r.birth_grad_logparity;
        }
        report["runs"].push_back(j);
    }

    // Welch tests between method groups on final accuracy.
    std::map<std::string, std::vector<double>> by_method;
    for (const auto& r : runs) by_method[r.method + ":" + r.kind].push_back(r.acc);
    report["welch"] = json::array();
    for (auto a = by_method.begin(); a != by_method.end(); ++a) {
        for (auto b = std::next(a); b != by_method.end(); ++b) {
            if (a->second.size() < 2 || b->second.size() < 2) continue;
            try {
                const auto w = plast::welch_ttest(a->second, b->second);
                report["welch"].push_back({{"a", a->first},
                                           {"b", b->first},
                                           {"t", w.t},
                                           {"df", w.df},
                                           {"p_two_sided", w.p_two_sided}});
            } catch (const plast::ConfigError&) {
                // degenerate variance; skip the pair
            }
        }
    }

    // Parity/TAA rank correlation across runs with diagnostics.
    std::vector<double> parities, taas;
    for (const auto& r : runs) {
        if (!r.has_parity) continue;
        parities.push_back(r.birth_grad_logparity);
        taas.push_back(r.taa);
    }
    if (parities.size() >= 3) {
        report["spearman_grad_parity_vs_taa"] = plast::spearman_rho(parities, taas);
    }

    const std::string text = report.dump(2);
    if (out_file.empty()) {
        std::cout << text << "\n";
    } else {
        std::ofstream(out_file) << text << "\n";
        std::cout << "report written to " << out_file << "\n";
    }
    return 0;
}

int selftest_command() {
    const auto results = plast::check::run_fast_checks();
    bool all = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  (" << r.seconds << "s)  "
                  << r.detail << "\n";
        all = all && r.pass;
    }
    return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"structural-plasticity training engine"};
    app.require_subcommand(1);

    std::string config_path, out_dir, from_dir, report_file;
    long seed = -1;
    int horizon = 200;
    std::vector<std::string> overrides, run_dirs;

    auto* run = app.add_subcommand("run", "run the structural-edit cycle protocol");
    run->add_option("--config", config_path, "config file")->required();
    run->add_option("--seed", seed, "override the run seed");
    run->add_option("--out", out_dir, "output directory");
    run->add_option("--override", overrides, "config override key=value");

    auto* ticket = app.add_subcommand("ticket", "retrain a discovered mask from scratch");
    ticket->add_option("--from", from_dir, "completed cycle-run directory")->required();
    ticket->add_option("--out", out_dir, "output directory");

    auto* stress = app.add_subcommand("stress", "growth-cycle stress test (K = 5, 10, 20)");
    stress->add_option("--config", config_path, "config file")->required();
    stress->add_option("--out", out_dir, "output directory");
    stress->add_option("--horizon", horizon, "total training epochs");
    stress->add_option("--override", overrides, "config override key=value");

    auto* analyze = app.add_subcommand("analyze", "parity/correlation report over run dirs");
    analyze->add_option("--runs", run_dirs, "run directories")->required();
    analyze->add_option("--out", report_file, "report file (stdout when omitted)");

    app.add_subcommand("selftest", "run the fast invariant suite");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return run_command(config_path, seed, out_dir, overrides);
        if (ticket->parsed()) return ticket_command(from_dir, out_dir);
        if (stress->parsed()) return stress_command(config_path, out_dir, horizon, overrides);
        if (analyze->parsed()) return analyze_command(run_dirs, report_file);
        return selftest_command();
    } catch (const plast::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const plast::NumericFault& e) {
        std::cerr << "numeric fault: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
