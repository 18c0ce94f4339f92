#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "plast/structural.hpp"
#include "plast/tensor.hpp"

namespace plast {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Image classification dataset. Images live in [0,1] unless normalization
/// was applied at load time (recorded in norm_mean / norm_std).
struct Dataset {
    Tensor images;  // {N, D} or {N, C, H, W}
    std::vector<int> labels;
    int num_classes = 10;
    std::string name;
    double norm_mean = 0.0;
    double norm_std = 1.0;

    int size() const { return images.rows(); }
    std::vector<int> indices_of_class(int c) const;
};

/// IDX container (MNIST / FashionMNIST layout). Image files are flattened
/// to {N, rows*cols} and scaled to [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
Tensor load_idx_images(const std::string& path);
std::vector<int> load_idx_labels(const std::string& path);

/// CIFAR-style binary batches: 3073-byte records, 1 label + 3072 pixels
/// (3x32x32, channel-major). Multiple files are concatenated.
Dataset load_cifar(const std::vector<std::string>& paths, int num_classes = 10);

/// Deterministic class-blob images for dataset-free testing. shape is the
/// per-sample shape ({784} or {3,32,32}). Class templates derive from
/// template_seed (0 -> same as seed), so train/test splits of one synthetic
/// task share templates while drawing independent noise.
Dataset synthetic_dataset(int n, int classes, const std::vector<int>& shape, uint64_t seed,
                          uint64_t template_seed = 0);

struct Task {
    std::vector<int> train_indices;  // into the train dataset
    std::vector<int> train_labels;   // empty -> dataset labels
    std::vector<int> pixel_perm;     // empty -> identity
    std::vector<int> eval_indices;
    std::vector<int> eval_labels;    // empty -> eval-side dataset labels
    bool eval_on_train = false;      // eval indices address the train dataset
    int epochs = 1;
    long steps = -1;  // when > 0, a fixed optimizer-step budget instead of epochs
    int batch_size = 16;
    bool is_hard = true;
};

struct TaskStream {
    std::string kind;
    uint64_t seed = 0;
    bool cumulative_eval = false;  // checkpoint t evaluates tasks 1..t separately
    std::vector<Task> tasks;
};

/// Class-balanced reservoir: first-M-seen per class, hard caps of
/// `per_class_cap` per class and `total_cap` overall.
class ReplayBuffer {
public:
    ReplayBuffer(int per_class_cap = 50, int total_cap = 200)
        : per_class_cap_(per_class_cap), total_cap_(total_cap) {}

    /// Inserts examples of newly finished-task classes, first-seen order.
    void add_task_examples(const std::vector<int>& indices, const std::vector<int>& labels);

    bool empty() const { return total_ == 0; }
    int total() const { return total_; }
    int count_for_class(int c) const;

    /// n samples uniform with replacement: (dataset index, label).
    std::vector<std::pair<int, int>> sample(int n, Rng& rng) const;

private:
    int per_class_cap_;
    int total_cap_;
    int total_ = 0;
    std::map<int, std::vector<std::pair<int, int>>> store_;
    std::vector<std::pair<int, int>> flat_;
};

/// Mixes ceil(fraction * B) replay samples into a current-task batch of B
/// items; with an empty buffer the current batch passes through unchanged.
std::vector<std::pair<int, int>> replay_mix(const ReplayBuffer& buffer,
                                            const std::vector<std::pair<int, int>>& current,
                                            double fraction, Rng& rng);

/// IID stream: `cycles` tasks over the full train set, shared eval set.
TaskStream make_iid_stream(const Dataset& train, const Dataset& test, int cycles,
                           int epochs_per_cycle, int batch_size);

/// Five 2-class tasks over a 10-class dataset, single shared head,
/// cumulative eval. The class-pair ordering is seeded and shared across
/// methods within a seed.
TaskStream make_split_stream(const Dataset& train, const Dataset& test, int n_tasks, int epochs,
                             int batch_size, Rng rng);

/// Fixed subset, fresh pixel permutation per task.
TaskStream make_permuted_stream(const Dataset& train, int n_tasks, int subset_size, int epochs,
                                int batch_size, Rng rng);

/// Fixed inputs, labels resampled i.i.d. uniform per task.
TaskStream make_random_label_stream(const Dataset& train, int subset_size, int n_tasks, int epochs,
                                    int batch_size, Rng rng);

/// Alternating 5-class hard / 1-class easy tasks, classes never reused,
/// fixed step budget per task; evaluation restricted to hard tasks.
TaskStream make_hard_easy_stream(const Dataset& train, int n_tasks, long steps_per_task,
                                 int batch_size, int images_per_class, Rng rng);

/// Binary classification between two never-reused classes, labels remapped
/// to {0,1}, 600 images per class by default.
TaskStream make_binary_pair_stream(const Dataset& train, int images_per_task, int n_tasks,
                                   int epochs, int batch_size, Rng rng);

/// Gathers (index, label) items into a training batch, applying the task's
/// pixel permutation and label remap.
Batch assemble_batch(const Dataset& ds, const Task& task,
                     const std::vector<std::pair<int, int>>& items);

}  // namespace plast
