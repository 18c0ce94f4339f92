#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "plast/harness.hpp"

namespace plast {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ValidationError("config: '" + key + "' expects a boolean, got '" + v + "'");
}

double parse_double(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return d;
    } catch (...) {
        throw ValidationError("config: '" + key + "' expects a number, got '" + v + "'");
    }
}

long parse_long(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        const long d = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return d;
    } catch (...) {
        throw ValidationError("config: '" + key + "' expects an integer, got '" + v + "'");
    }
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

// One table drives the file parser, the override flag and the echo.
const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"run.method", [](RunConfig& c, const std::string& v, const std::string&) { c.method = v; }},
        {"run.dataset",
         [](RunConfig& c, const std::string& v, const std::string&) { c.dataset = v; }},
        {"run.arch", [](RunConfig& c, const std::string& v, const std::string&) { c.arch = v; }},
        {"run.stream",
         [](RunConfig& c, const std::string& v, const std::string&) { c.stream = v; }},
        {"run.compactness",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.compactness = parse_double(v, k);
         }},
        {"run.schedule",
         [](RunConfig& c, const std::string& v, const std::string&) { c.schedule = v; }},
        {"run.cycles",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.cycles = static_cast<int>(parse_long(v, k));
         }},
        {"run.epochs_per_cycle",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.epochs_per_cycle = static_cast<int>(parse_long(v, k));
         }},
        {"run.batch_size",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.batch_size = static_cast<int>(parse_long(v, k));
         }},
        {"run.tau",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.tau = parse_double(v, k);
         }},
        {"run.seed_fraction",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.seed_fraction = parse_double(v, k);
         }},
        {"run.seed",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.seed = static_cast<uint64_t>(parse_long(v, k));
         }},
        {"run.out_dir",
         [](RunConfig& c, const std::string& v, const std::string&) { c.out_dir = v; }},
        {"run.train_limit",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.train_limit = static_cast<int>(parse_long(v, k));
         }},
        {"run.test_limit",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.test_limit = static_cast<int>(parse_long(v, k));
         }},
        {"run.mlp_hidden",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.mlp_hidden = static_cast<int>(parse_long(v, k));
         }},
        {"optimizer.kind",
         [](RunConfig& c, const std::string& v, const std::string&) { c.optimizer = v; }},
        {"optimizer.lr",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.lr = parse_double(v, k);
         }},
        {"optimizer.cosine",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.cosine = parse_bool(v, k);
         }},
        {"prune.imp_rewind",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.imp_rewind = parse_bool(v, k);
         }},
        {"prune.rewind_epoch",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.rewind_epoch = static_cast<int>(parse_long(v, k));
         }},
        {"replay.enabled",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.replay = parse_bool(v, k);
         }},
        {"replay.fraction",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.replay_fraction = parse_double(v, k);
         }},
        {"replay.per_class",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.replay_per_class = static_cast<int>(parse_long(v, k));
         }},
        {"replay.total",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.replay_total = static_cast<int>(parse_long(v, k));
         }},
        {"stream.n_tasks",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.n_tasks = static_cast<int>(parse_long(v, k));
         }},
        {"stream.subset_size",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.subset_size = static_cast<int>(parse_long(v, k));
         }},
        {"stream.steps_per_task",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.steps_per_task = parse_long(v, k);
         }},
        {"stream.images_per_class",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.images_per_class = static_cast<int>(parse_long(v, k));
         }},
        {"stream.images_per_task",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.images_per_task = static_cast<int>(parse_long(v, k));
         }},
        {"stream.epochs_per_task",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.epochs_per_task = static_cast<int>(parse_long(v, k));
         }},
        {"data.dir", [](RunConfig& c, const std::string& v, const std::string&) { c.data_dir = v; }},
        {"data.synthetic_train",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.synthetic_train = static_cast<int>(parse_long(v, k));
         }},
        {"data.synthetic_test",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.synthetic_test = static_cast<int>(parse_long(v, k));
         }},
        {"data.synthetic_classes",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.synthetic_classes = static_cast<int>(parse_long(v, k));
         }},
        {"diagnostics.early_window",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.early_window = parse_double(v, k);
         }},
        {"diagnostics.diag_batch",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.diag_batch = static_cast<int>(parse_long(v, k));
         }},
        {"diagnostics.catchup_every",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.catchup_every = static_cast<int>(parse_long(v, k));
         }},
        {"interventions.two_speed",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.iv.two_speed = parse_bool(v, k);
         }},
        {"interventions.two_speed_r",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.iv.two_speed_r = parse_double(v, k);
         }},
        {"interventions.two_speed_window",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.iv.two_speed_window = static_cast<int>(parse_long(v, k));
         }},
        {"interventions.moment_transplant",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.iv.moment_transplant = parse_bool(v, k);
         }},
        {"interventions.net2wider",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.iv.net2wider = parse_bool(v, k);
         }},
        {"interventions.net2wider_noise",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.iv.net2wider_noise = parse_double(v, k);
         }},
        {"interventions.gradmax",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.iv.gradmax = parse_bool(v, k);
         }},
        {"interventions.rsl",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.iv.rsl = parse_bool(v, k);
         }},
        {"interventions.rsl_c",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.iv.rsl_params.c = parse_double(v, k);
         }},
        {"interventions.rsl_p",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.iv.rsl_params.p = parse_double(v, k);
         }},
        {"interventions.rsl_lower",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.iv.rsl_params.lower = parse_double(v, k);
         }},
        {"interventions.rsl_upper",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.iv.rsl_params.upper = parse_double(v, k);
         }},
    };
    return table;
}

void set_key(RunConfig& cfg, const std::string& full_key, const std::string& value) {
    auto it = setters().find(full_key);
    if (it == setters().end()) throw ValidationError("config: unknown key '" + full_key + "'");
    it->second(cfg, value, full_key);
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section = "run";
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ValidationError("config line " + std::to_string(lineno) +
                                      ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        set_key(cfg, section + "." + key, value);
    }
    cfg.validate();
    return cfg;
}

RunConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos)
        throw ValidationError("override '" + spec + "': expected key=value");
    std::string key = trim(spec.substr(0, eq));
    const std::string value = trim(spec.substr(eq + 1));
    if (key.find('.') == std::string::npos) {
        // bare key: resolve against the table (keys are unique by name)
        std::string resolved;
        for (const auto& [full, _] : setters()) {
            const auto dot = full.find('.');
            if (full.substr(dot + 1) == key) {
                if (!resolved.empty())
                    throw ValidationError("override '" + key + "' is ambiguous");
                resolved = full;
            }
        }
        if (resolved.empty()) throw ValidationError("override: unknown key '" + key + "'");
        key = resolved;
    }
    set_key(cfg, key, value);
}

void RunConfig::validate() const {
    std::vector<std::string> problems;
    auto is_one_of = [](const std::string& v, std::initializer_list<const char*> opts) {
        return std::any_of(opts.begin(), opts.end(), [&](const char* o) { return v == o; });
    };
    if (!is_one_of(method, {"dense", "grow", "prune"}))
        problems.push_back("run.method must be dense|grow|prune (got '" + method + "')");
    if (!is_one_of(dataset, {"mnist", "fashion", "cifar10", "synthetic"}))
        problems.push_back("run.dataset must be mnist|fashion|cifar10|synthetic");
    if (!arch.empty() && !is_one_of(arch, {"mlp", "convnet"}))
        problems.push_back("run.arch must be mlp|convnet");
    if (!is_one_of(stream, {"iid", "split", "permuted", "random_label", "hard_easy", "binary_pair"}))
        problems.push_back("run.stream is not a known stream kind");
    if (!(compactness > 0.0) || compactness > 1.0)
        problems.push_back("run.compactness must lie in (0, 1]");
    if (cycles < 1) problems.push_back("run.cycles must be >= 1");
    if (epochs_per_cycle < 1) problems.push_back("run.epochs_per_cycle must be >= 1");
    if (batch_size < 1) problems.push_back("run.batch_size must be >= 1");
    if (!(seed_fraction > 0.0) || seed_fraction >= 1.0)
        problems.push_back("run.seed_fraction must lie in (0, 1)");
    if (!is_one_of(optimizer, {"sgd", "adam"}))
        problems.push_back("optimizer.kind must be sgd|adam");
    if (!(lr > 0.0)) problems.push_back("optimizer.lr must be positive");
    if (!is_one_of(schedule, {"neutral", "fc1_protect", "fc3_protect", "ends_skewed"}))
        problems.push_back("run.schedule is not a known bias schedule");

    // grow-only interventions
    std::vector<std::string> grow_only;
    if (iv.two_speed) grow_only.push_back("interventions.two_speed");
    if (iv.moment_transplant) grow_only.push_back("interventions.moment_transplant");
    if (iv.net2wider) grow_only.push_back("interventions.net2wider");
    if (iv.gradmax) grow_only.push_back("interventions.gradmax");
    if (!grow_only.empty() && method != "grow") {
        std::string msg = "these interventions require run.method=grow:";
        for (const auto& k : grow_only) msg += " " + k;
        problems.push_back(msg);
    }
    if (iv.moment_transplant && optimizer != "adam")
        problems.push_back("interventions.moment_transplant requires optimizer.kind=adam");
    if (iv.two_speed && !(iv.two_speed_r > 0.0))
        problems.push_back("interventions.two_speed_r must be positive");
    if (iv.rsl) {
        try {
            iv.rsl_params.validate();
        } catch (const ConfigError& e) {
            problems.push_back(std::string("interventions.rsl: ") + e.what());
        }
    }
    if (stream == "binary_pair" && dataset == "mnist" && n_tasks > 5)
        problems.push_back("stream.binary_pair over 10 classes supports at most 5 disjoint pairs");

    if (!problems.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ValidationError(msg);
    }
}

}  // namespace plast
