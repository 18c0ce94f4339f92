#pragma once

#include <string>
#include <vector>

namespace plast::check {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

// Mechanism-level checks (fast, dataset-free).
CheckResult check_gradient_correctness();
CheckResult check_net2wider_preservation();
CheckResult check_budget_matching();
CheckResult check_quota_schedules();
CheckResult check_optimizer_interventions();
CheckResult check_metric_oracles();
CheckResult check_stream_invariants();

// Desk-scale training checks (need the bundled MNIST subset).
CheckResult check_mnist_desk_run(const std::string& data_dir, int threads);
CheckResult check_newborn_diagnostics(const std::string& data_dir);
CheckResult check_stress_monotonicity(const std::string& data_dir, int threads);

std::vector<CheckResult> run_fast_checks();
std::vector<CheckResult> run_desk_checks(const std::string& data_dir, int threads);

}  // namespace plast::check
