#include "plast/streams.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace plast {

std::vector<int> Dataset::indices_of_class(int c) const {
    std::vector<int> out;
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == c) out.push_back(static_cast<int>(i));
    return out;
}

namespace {

uint32_t read_be32(std::istream& in, const std::string& path, size_t offset) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in)
        throw ParseError(path + ": truncated header at byte " + std::to_string(offset));
    return (uint32_t(buf[0]) << 24) | (uint32_t(buf[1]) << 16) | (uint32_t(buf[2]) << 8) |
           uint32_t(buf[3]);
}

std::vector<unsigned char> read_payload(std::istream& in, size_t expected,
                                        const std::string& path, size_t offset) {
    std::vector<unsigned char> data(expected);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(expected));
    const size_t got = static_cast<size_t>(in.gcount());
    if (got != expected)
        throw ParseError(path + ": expected " + std::to_string(expected) + " payload bytes at " +
                         std::to_string(offset) + ", got " + std::to_string(got));
    return data;
}

}  // namespace

Tensor load_idx_images(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path + ": cannot open");
    const uint32_t magic = read_be32(in, path, 0);
    if (magic != 0x00000803u)
        throw ParseError(path + ": bad image magic 0x" + std::to_string(magic));
    const uint32_t n = read_be32(in, path, 4);
    const uint32_t rows = read_be32(in, path, 8);
    const uint32_t cols = read_be32(in, path, 12);
    const size_t count = static_cast<size_t>(n) * rows * cols;
    const auto raw = read_payload(in, count, path, 16);
    Tensor images({static_cast<int>(n), static_cast<int>(rows * cols)});
    for (size_t i = 0; i < count; ++i) images[i] = raw[i] / 255.0;
    return images;
}

std::vector<int> load_idx_labels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path + ": cannot open");
    const uint32_t magic = read_be32(in, path, 0);
    if (magic != 0x00000801u)
        throw ParseError(path + ": bad label magic 0x" + std::to_string(magic));
    const uint32_t n = read_be32(in, path, 4);
    const auto raw = read_payload(in, n, path, 8);
    return std::vector<int>(raw.begin(), raw.end());
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    Dataset ds;
    ds.images = load_idx_images(images_path);
    ds.labels = load_idx_labels(labels_path);
    if (static_cast<int>(ds.labels.size()) != ds.images.rows())
        throw ParseError(images_path + ": image count " + std::to_string(ds.images.rows()) +
                         " != label count " + std::to_string(ds.labels.size()));
    ds.num_classes = 10;
    ds.name = images_path;
    return ds;
}

Dataset load_cifar(const std::vector<std::string>& paths, int num_classes) {
    constexpr size_t kRecord = 3073;
    std::vector<unsigned char> all;
    for (const auto& path : paths) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ParseError(path + ": cannot open");
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
        if (bytes.empty() || bytes.size() % kRecord != 0)
            throw ParseError(path + ": size " + std::to_string(bytes.size()) +
                             " is not a multiple of 3073-byte records");
        all.insert(all.end(), bytes.begin(), bytes.end());
    }
    const int n = static_cast<int>(all.size() / kRecord);
    Dataset ds;
    ds.num_classes = num_classes;
    ds.images = Tensor({n, 3, 32, 32});
    ds.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        const unsigned char* rec = all.data() + static_cast<size_t>(i) * kRecord;
        const int label = rec[0];
        if (label < 0 || label >= num_classes)
            throw ParseError("cifar record " + std::to_string(i) + ": label " +
                             std::to_string(label) + " out of range");
        ds.labels[i] = label;
        for (int k = 0; k < 3072; ++k)
            ds.images[static_cast<size_t>(i) * 3072 + k] = rec[1 + k] / 255.0;
    }
    ds.name = "cifar";
    return ds;
}

Dataset synthetic_dataset(int n, int classes, const std::vector<int>& shape, uint64_t seed,
                          uint64_t template_seed) {
    Dataset ds;
    ds.num_classes = classes;
    ds.name = "synthetic";
    std::vector<int> full_shape = {n};
    full_shape.insert(full_shape.end(), shape.begin(), shape.end());
    ds.images = Tensor(full_shape);
    ds.labels.resize(n);
    const int dim = static_cast<int>(Tensor::count(shape));

    // A sparse bright template per class, plus noise.
    Rng troot(template_seed == 0 ? seed : template_seed);
    std::vector<std::vector<int>> hot(classes);
    for (int c = 0; c < classes; ++c) {
        Rng crng = troot.child(1000 + c);
        const int k = std::max(4, dim / 16);
        for (int i = 0; i < k; ++i) hot[c].push_back(crng.index(dim));
    }
    Rng root(seed);
    Rng noise = root.child(1);
    for (int i = 0; i < n; ++i) {
        const int c = i % classes;
        ds.labels[i] = c;
        double* row = ds.images.data() + static_cast<size_t>(i) * dim;
        for (int d = 0; d < dim; ++d) row[d] = 0.1 * noise.uniform();
        for (int d : hot[c]) row[d] = 0.7 + 0.3 * noise.uniform();
    }
    return ds;
}

void ReplayBuffer::add_task_examples(const std::vector<int>& indices,
                                     const std::vector<int>& labels) {
    if (indices.size() != labels.size())
        throw ConfigError("replay buffer: index/label count mismatch");
    for (size_t i = 0; i < indices.size(); ++i) {
        if (total_ >= total_cap_) break;
        auto& bucket = store_[labels[i]];
        if (static_cast<int>(bucket.size()) >= per_class_cap_) continue;
        bucket.emplace_back(indices[i], labels[i]);
        flat_.emplace_back(indices[i], labels[i]);
        total_ += 1;
    }
}

int ReplayBuffer::count_for_class(int c) const {
    auto it = store_.find(c);
    return it == store_.end() ? 0 : static_cast<int>(it->second.size());
}

std::vector<std::pair<int, int>> ReplayBuffer::sample(int n, Rng& rng) const {
    std::vector<std::pair<int, int>> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) out.push_back(flat_[rng.index(static_cast<int>(flat_.size()))]);
    return out;
}

std::vector<std::pair<int, int>> replay_mix(const ReplayBuffer& buffer,
                                            const std::vector<std::pair<int, int>>& current,
                                            double fraction, Rng& rng) {
    if (buffer.empty() || fraction <= 0.0) return current;
    const int b = static_cast<int>(current.size());
    const int k = std::min(b, static_cast<int>(std::ceil(fraction * b)));
    std::vector<std::pair<int, int>> out = buffer.sample(k, rng);
    out.insert(out.end(), current.begin(), current.begin() + (b - k));
    return out;
}

TaskStream make_iid_stream(const Dataset& train, const Dataset& test, int cycles,
                           int epochs_per_cycle, int batch_size) {
    TaskStream s;
    s.kind = "iid";
    std::vector<int> all_train(train.size());
    for (int i = 0; i < train.size(); ++i) all_train[i] = i;
    std::vector<int> all_test(test.size());
    for (int i = 0; i < test.size(); ++i) all_test[i] = i;
    for (int t = 0; t < cycles; ++t) {
        Task task;
        task.train_indices = all_train;
        task.eval_indices = all_test;
        task.epochs = epochs_per_cycle;
        task.batch_size = batch_size;
        s.tasks.push_back(std::move(task));
    }
    return s;
}

TaskStream make_split_stream(const Dataset& train, const Dataset& test, int n_tasks, int epochs,
                             int batch_size, Rng rng) {
    if (train.num_classes % n_tasks != 0)
        throw ConfigError("split stream: class count not divisible by task count");
    const int per_task = train.num_classes / n_tasks;
    std::vector<int> class_order(train.num_classes);
    for (int c = 0; c < train.num_classes; ++c) class_order[c] = c;
    rng.shuffle(class_order);

    TaskStream s;
    s.kind = "split";
    s.cumulative_eval = true;
    for (int t = 0; t < n_tasks; ++t) {
        Task task;
        task.epochs = epochs;
        task.batch_size = batch_size;
        for (int k = 0; k < per_task; ++k) {
            const int cls = class_order[t * per_task + k];
            for (int i : train.indices_of_class(cls)) task.train_indices.push_back(i);
            for (int i : test.indices_of_class(cls)) task.eval_indices.push_back(i);
        }
        std::sort(task.train_indices.begin(), task.train_indices.end());
        std::sort(task.eval_indices.begin(), task.eval_indices.end());
        s.tasks.push_back(std::move(task));
    }
    return s;
}

namespace {

std::vector<int> sample_subset(int population, int size, Rng& rng) {
    if (size > population) throw ConfigError("stream: subset exceeds dataset size");
    std::vector<int> all(population);
    for (int i = 0; i < population; ++i) all[i] = i;
    rng.shuffle(all);
    all.resize(size);
    std::sort(all.begin(), all.end());
    return all;
}

}  // namespace

TaskStream make_permuted_stream(const Dataset& train, int n_tasks, int subset_size, int epochs,
                                int batch_size, Rng rng) {
    const int dim = train.images.cols();
    Rng subset_rng = rng.child(0);
    const std::vector<int> subset = sample_subset(train.size(), subset_size, subset_rng);

    TaskStream s;
    s.kind = "permuted";
    for (int t = 0; t < n_tasks; ++t) {
        Task task;
        task.train_indices = subset;
        task.eval_indices = subset;
        task.eval_on_train = true;
        task.epochs = epochs;
        task.batch_size = batch_size;
        task.pixel_perm.resize(dim);
        for (int i = 0; i < dim; ++i) task.pixel_perm[i] = i;
        Rng perm_rng = rng.child(100 + t);
        perm_rng.shuffle(task.pixel_perm);
        s.tasks.push_back(std::move(task));
    }
    return s;
}

TaskStream make_random_label_stream(const Dataset& train, int subset_size, int n_tasks, int epochs,
                                    int batch_size, Rng rng) {
    Rng subset_rng = rng.child(0);
    const std::vector<int> subset = sample_subset(train.size(), subset_size, subset_rng);

    TaskStream s;
    s.kind = "random_label";
    for (int t = 0; t < n_tasks; ++t) {
        Task task;
        task.train_indices = subset;
        task.eval_indices = subset;
        task.eval_on_train = true;
        task.epochs = epochs;
        task.batch_size = batch_size;
        Rng label_rng = rng.child(200 + t);
        task.train_labels.resize(subset.size());
        for (auto& l : task.train_labels) l = label_rng.index(train.num_classes);
        task.eval_labels = task.train_labels;
        s.tasks.push_back(std::move(task));
    }
    return s;
}

TaskStream make_hard_easy_stream(const Dataset& train, int n_tasks, long steps_per_task,
                                 int batch_size, int images_per_class, Rng rng) {
    std::vector<int> class_order(train.num_classes);
    for (int c = 0; c < train.num_classes; ++c) class_order[c] = c;
    rng.shuffle(class_order);

    TaskStream s;
    s.kind = "hard_easy";
    size_t next_class = 0;
    for (int t = 0; t < n_tasks; ++t) {
        const bool hard = (t % 2) == 0;
        const int n_classes = hard ? 5 : 1;
        if (next_class + n_classes > class_order.size())
            throw ConfigError("hard/easy stream: ran out of unused classes");
        Task task;
        task.is_hard = hard;
        task.steps = steps_per_task;
        task.epochs = 0;
        task.batch_size = batch_size;
        for (int k = 0; k < n_classes; ++k) {
            const int cls = class_order[next_class++];
            const auto idx = train.indices_of_class(cls);
            const int take = std::min<int>(images_per_class, static_cast<int>(idx.size()));
            for (int i = 0; i < take; ++i) task.train_indices.push_back(idx[i]);
        }
        std::sort(task.train_indices.begin(), task.train_indices.end());
        if (hard) {
            task.eval_indices = task.train_indices;
            task.eval_on_train = true;
        }
        s.tasks.push_back(std::move(task));
    }
    return s;
}

TaskStream make_binary_pair_stream(const Dataset& train, int images_per_task, int n_tasks,
                                   int epochs, int batch_size, Rng rng) {
    std::vector<int> class_order(train.num_classes);
    for (int c = 0; c < train.num_classes; ++c) class_order[c] = c;
    rng.shuffle(class_order);
    if (2 * n_tasks > train.num_classes)
        throw ConfigError("binary pair stream: not enough classes for disjoint pairs");

    const int per_class = images_per_task / 2;
    TaskStream s;
    s.kind = "binary_pair";
    for (int t = 0; t < n_tasks; ++t) {
        Task task;
        task.epochs = epochs;
        task.batch_size = batch_size;
        task.eval_on_train = true;
        for (int side = 0; side < 2; ++side) {
            const int cls = class_order[2 * t + side];
            const auto idx = train.indices_of_class(cls);
            const int take = std::min<int>(per_class, static_cast<int>(idx.size()));
            for (int i = 0; i < take; ++i) {
                task.train_indices.push_back(idx[i]);
                task.train_labels.push_back(side);
            }
        }
        task.eval_indices = task.train_indices;
        task.eval_labels = task.train_labels;
        s.tasks.push_back(std::move(task));
    }
    return s;
}

Batch assemble_batch(const Dataset& ds, const Task& task,
                     const std::vector<std::pair<int, int>>& items) {
    const int b = static_cast<int>(items.size());
    const int dim = static_cast<int>(ds.images.size() / std::max(1, ds.size()));
    std::vector<int> shape = ds.images.shape();
    shape[0] = b;
    Batch batch;
    batch.images = Tensor(shape);
    batch.labels.resize(b);
    const bool permuted = !task.pixel_perm.empty();
    for (int i = 0; i < b; ++i) {
        const auto [src, label] = items[i];
        batch.labels[i] = label;
        const double* from = ds.images.data() + static_cast<size_t>(src) * dim;
        double* to = batch.images.data() + static_cast<size_t>(i) * dim;
        if (permuted) {
            for (int d = 0; d < dim; ++d) to[d] = from[task.pixel_perm[d]];
        } else {
            std::copy(from, from + dim, to);
        }
    }
    return batch;
}

}  // namespace plast
