#pragma once

#include <string>
#include <vector>

#include "plast/tensor.hpp"

namespace plast {

/// Cumulative accuracy: mean test accuracy over the tasks seen so far.
double cum_acc(const std::vector<double>& per_task_acc);

/// Trajectory-average accuracy: mean of the cumulative accuracies across
/// checkpoints. The final element is ACC.
double taa(const std::vector<double>& cumulative_accs);

/// Total average online accuracy over all processed mini-batches.
double taoa(const std::vector<double>& online_batch_accs);

/// Mean online accuracy over the first ceil(window_fraction * len) batches
/// of each task, averaged over tasks.
double early_task_taa(const std::vector<std::vector<double>>& per_task_online,
                      double window_fraction);

/// Final_WT - Final_Cycle. Positive: the retrained ticket ends above the
/// warm-started cycle endpoint.
double ticket_cycle_delta(double final_wt, double final_cycle);

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p_two_sided = 1.0;
};

/// Welch two-sample t-test with Satterthwaite degrees of freedom. Each
/// sample needs >= 2 values and the pooled standard error must be nonzero.
WelchResult welch_ttest(const std::vector<double>& a, const std::vector<double>& b);

/// Regularized incomplete beta I_x(a, b) (used for the t CDF).
double incomplete_beta(double a, double b, double x);

/// Two-sided p-value for a t statistic at df degrees of freedom.
double t_two_sided_p(double t, double df);

/// Fraction of post-activation values exceeding tau.
double activation_rate(const std::vector<double>& post_activations, double tau);

/// Mean absolute pre-activation gradient.
double grad_magnitude(const std::vector<double>& pre_activation_grads);

struct Parity {
    double ratio = 1.0;      // a / (b + eps)
    double log_ratio = 0.0;  // ln(ratio)
};

/// Cohort parity a vs b with an epsilon-guarded denominator.
Parity parity(double cohort_a_mean, double cohort_b_mean, double eps = 1e-8);

struct SurvivorStability {
    double additive = 0.0;  // mean(post) - mean(end)
    double log_form = 0.0;  // ln(mean(post) / (mean(end) + eps))
};

/// Post-edit vs end-of-segment activation change of surviving units.
SurvivorStability survivor_stability(const std::vector<double>& post_acts,
                                     const std::vector<double>& end_acts, double eps = 1e-8);

/// Spearman rank correlation with average ranks for ties.
double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys);

/// One measured cohort statistic at one event/timepoint.
struct CohortRow {
    int event = 0;      // edit-event ordinal (cycle)
    int layer = 0;
    std::string cohort;     // newborn | incumbent | kept | pruned | survivor
    std::string timepoint;  // post | exit | end | age
    int age_epochs = 0;     // for catch-up rows
    int n_units = 0;
    double mean_act = 0.0;
    double mean_grad = 0.0;
    double tau = 0.0;
    int batch_id = 0;
};

struct RatioPoint {
    int event = 0;
    int age_epochs = 0;
    double act_ratio = 0.0;
    double grad_ratio = 0.0;
};

/// Newborn/incumbent ratio curves per post-birth age, averaged over layers
/// within (event, age) and aggregated across events.
std::vector<RatioPoint> catchup_series(const std::vector<CohortRow>& rows, double eps = 1e-8);

}  // namespace plast
