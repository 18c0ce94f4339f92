#pragma once

#include <optional>
#include <string>
#include <vector>

#include "plast/budget.hpp"
#include "plast/metrics.hpp"
#include "plast/network.hpp"
#include "plast/optim.hpp"
#include "plast/streams.hpp"
#include "plast/structural.hpp"

namespace plast {

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InterventionConfig {
    bool two_speed = false;
    double two_speed_r = 5.0;
    int two_speed_window = 1955;
    bool moment_transplant = false;
    bool net2wider = false;
    double net2wider_noise = 1e-3;
    bool gradmax = false;
    bool rsl = false;
    RslParams rsl_params{3.0, 5.0, 0.125, 0.333};
};

struct RunConfig {
    std::string method = "dense";  // dense | grow | prune
    std::string dataset = "synthetic";  // mnist | fashion | cifar10 | synthetic
    std::string arch;                   // mlp | convnet; derived from dataset when empty
    std::string stream = "iid";  // iid | split | permuted | random_label | hard_easy | binary_pair
    double compactness = 0.5;
    std::string schedule = "neutral";
    int cycles = 5;
    int epochs_per_cycle = 20;
    int batch_size = 64;
    double tau = 0.05;
    double seed_fraction = 0.10;
    uint64_t seed = 0;

    std::string optimizer = "sgd";
    double lr = 0.01;
    bool cosine = true;

    bool imp_rewind = true;
    int rewind_epoch = 0;

    bool replay = true;  // split streams only
    double replay_fraction = 0.5;
    int replay_per_class = 50;
    int replay_total = 200;

    // stream shape knobs (defaults mirror the benchmark table)
    int n_tasks = 0;  // 0 -> stream default
    int subset_size = 0;
    long steps_per_task = 780;
    int images_per_class = 500;
    int images_per_task = 1200;
    int epochs_per_task = 0;  // 0 -> stream default

    std::string data_dir = "data/mnist";
    int train_limit = 0;  // truncate the train set (0 = all); desk-scale runs
    int test_limit = 0;

    int synthetic_train = 2048;
    int synthetic_test = 512;
    int synthetic_classes = 10;

    int mlp_hidden = 256;

    double early_window = 0.1;
    int diag_batch = 128;
    int catchup_every = 1;  // measure newborn ages every k epochs

    InterventionConfig iv;
    std::string out_dir;

    void validate() const;
};

/// Key-value config file with [sections]; unknown keys are rejected.
RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text);
/// Applies one "section.key=value" override.
void apply_override(RunConfig& cfg, const std::string& spec);

struct CheckpointRecord {
    int index = 0;
    int epoch = 0;
    std::vector<double> per_task_acc;
    double acc_cum = 0.0;
    std::vector<int> active_counts;
    double lr = 0.0;
};

struct RunLog {
    RunConfig config;
    std::string kind;  // cycle | ticket
    std::string run_id;
    std::string paired_run;
    CompactnessPlan plan;
    bool has_plan = false;
    std::vector<std::vector<uint8_t>> initial_masks;
    std::vector<std::vector<uint8_t>> final_masks;
    std::vector<CheckpointRecord> checkpoints;
    std::vector<EditEvent> events;
    std::vector<CohortRow> cohorts;
    std::vector<std::vector<double>> per_task_online;
    double wall_seconds = 0.0;
    long total_steps = 0;
    bool has_delta = false;
    double delta_wt_c = 0.0;  // ticket runs: Final_WT - Final_Cycle
    std::string fault;        // set when the run aborted mid-way

    double final_acc() const;
    double taa_value() const;
    double taoa_value() const;
    double early_taa_value(double window_fraction) const;
};

/// Structural-edit protocol: per cycle, edit (grow/prune, dense is a no-op)
/// then train, checkpointing at every cycle end.
RunLog run_cycle_protocol(const RunConfig& cfg);

/// Winning-ticket retraining: the mask is frozen, weights reinitialized
/// from a derived seed, stream and budget identical to the cycle run.
RunLog run_winning_ticket(const RunConfig& cfg, const std::vector<std::vector<uint8_t>>& final_mask,
                          const std::string& paired_run = "",
                          std::optional<double> paired_final_acc = std::nullopt);

/// Fixed total horizon split into K in {5,10,20} grow cycles.
std::vector<RunLog> run_stress_test(const RunConfig& cfg, const std::vector<int>& k_values,
                                    int total_epochs = 200);

/// Writes config.json, metrics.csv, events.jsonl, cohorts.csv, online.csv,
/// mask_final.json and summary.json into log.config.out_dir.
void write_run_outputs(const RunLog& log);

/// Reads the final mask of a completed run directory.
std::vector<std::vector<uint8_t>> read_final_mask(const std::string& run_dir);
/// Reads a run's config echo back into a RunConfig.
RunConfig read_run_config(const std::string& run_dir, std::string* kind = nullptr,
                          double* final_acc = nullptr);

/// Dataset/stream assembly shared by the protocols (exposed for tests).
struct RunData {
    Dataset train;
    Dataset test;
    TaskStream stream;
};
RunData prepare_run_data(const RunConfig& cfg);

MaskedNetwork build_network(const RunConfig& cfg, const Dataset& train);

/// Accuracy of the network on the given (index, label) items.
double evaluate_accuracy(const MaskedNetwork& net, const Dataset& ds, const Task& task,
                         const std::vector<int>& indices, const std::vector<int>& labels,
                         int batch_size);

}  // namespace plast
