#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "plast/harness.hpp"

namespace plast {

namespace {

using nlohmann::json;

// rng sub-stream tags
constexpr uint64_t kStreamTag = 0x5eed0001;
constexpr uint64_t kInitTag = 0x5eed0002;
constexpr uint64_t kDataTag = 0x5eed0003;
constexpr uint64_t kDiagTag = 0x5eed0004;
constexpr uint64_t kReplayTag = 0x5eed0005;
constexpr uint64_t kSeedMaskTag = 0x5eed0006;
constexpr uint64_t kNewbornTag = 0x5eed0007;
constexpr uint64_t kRslTag = 0x5eed0008;
constexpr uint64_t kSyntheticTag = 0x5eed0009;
constexpr uint64_t kTicketDerive = 0x71c4e7;

}  // namespace

double RunLog::final_acc() const {
    return checkpoints.empty() ? 0.0 : checkpoints.back().acc_cum;
}

double RunLog::taa_value() const {
    if (checkpoints.empty()) return 0.0;
    std::vector<double> cums;
    for (const auto& c : checkpoints) cums.push_back(c.acc_cum);
    return taa(cums);
}

double RunLog::taoa_value() const {
    std::vector<double> all;
    for (const auto& task : per_task_online) all.insert(all.end(), task.begin(), task.end());
    return all.empty() ? 0.0 : taoa(all);
}

double RunLog::early_taa_value(double window_fraction) const {
    std::vector<std::vector<double>> nonempty;
    for (const auto& t : per_task_online)
        if (!t.empty()) nonempty.push_back(t);
    return nonempty.empty() ? 0.0 : early_task_taa(nonempty, window_fraction);
}

namespace {

Dataset limited(Dataset ds, int limit) {
    if (limit <= 0 || limit >= ds.size()) return ds;
    std::vector<int> new_shape = ds.images.shape();
    new_shape[0] = limit;
    const size_t dim = ds.images.size() / ds.size();
    Dataset out;
    out.images = Tensor::from(new_shape, std::vector<double>(ds.images.values().begin(),
                                                             ds.images.values().begin() +
                                                                 limit * dim));
    out.labels.assign(ds.labels.begin(), ds.labels.begin() + limit);
    out.num_classes = ds.num_classes;
    out.name = ds.name;
    return out;
}

}  // namespace

RunData prepare_run_data(const RunConfig& cfg) {
    RunData data;
    const bool conv = (!cfg.arch.empty() ? cfg.arch == "convnet" : cfg.dataset == "cifar10");
    if (cfg.dataset == "synthetic") {
        const std::vector<int> shape = conv ? std::vector<int>{3, 32, 32}
                                            : std::vector<int>{784};
        const uint64_t dseed = Rng::mix(cfg.seed, kSyntheticTag);
        data.train =
            synthetic_dataset(cfg.synthetic_train, cfg.synthetic_classes, shape, dseed, dseed);
        data.test = synthetic_dataset(cfg.synthetic_test, cfg.synthetic_classes, shape,
                                      Rng::mix(dseed, 1), dseed);
    } else if (cfg.dataset == "mnist" || cfg.dataset == "fashion") {
        data.train = load_idx(cfg.data_dir + "/train-images-idx3-ubyte",
                              cfg.data_dir + "/train-labels-idx1-ubyte");
        data.test = load_idx(cfg.data_dir + "/t10k-images-idx3-ubyte",
                             cfg.data_dir + "/t10k-labels-idx1-ubyte");
    } else if (cfg.dataset == "cifar10") {
        std::vector<std::string> train_files;
        for (int i = 1; i <= 5; ++i)
            train_files.push_back(cfg.data_dir + "/data_batch_" + std::to_string(i) + ".bin");
        data.train = load_cifar(train_files, 10);
        data.test = load_cifar({cfg.data_dir + "/test_batch.bin"}, 10);
    }
    data.train = limited(std::move(data.train), cfg.train_limit);
    data.test = limited(std::move(data.test), cfg.test_limit);

    // Stream construction depends only on the seed, never on the method, so
    // task orderings are shared across methods within a seed.
    Rng stream_rng(Rng::mix(cfg.seed, kStreamTag));
    const int n_tasks = cfg.n_tasks;
    if (cfg.stream == "iid") {
        data.stream =
            make_iid_stream(data.train, data.test, cfg.cycles, cfg.epochs_per_cycle,
                            cfg.batch_size);
    } else if (cfg.stream == "split") {
        const int tasks = n_tasks > 0 ? n_tasks : 5;
        const int epochs = cfg.epochs_per_task > 0 ? cfg.epochs_per_task : cfg.epochs_per_cycle;
        data.stream = make_split_stream(data.train, data.test, tasks, epochs, cfg.batch_size,
                                        stream_rng);
    } else if (cfg.stream == "permuted") {
        const int tasks = n_tasks > 0 ? n_tasks : 10;
        const int subset = cfg.subset_size > 0 ? std::min(cfg.subset_size, data.train.size())
                                               : std::min(10000, data.train.size());
        const int epochs = cfg.epochs_per_task > 0 ? cfg.epochs_per_task : 1;
        data.stream = make_permuted_stream(data.train, tasks, subset, epochs, 16, stream_rng);
    } else if (cfg.stream == "random_label") {
        const int tasks = n_tasks > 0 ? n_tasks : 5;
        const int subset = cfg.subset_size > 0 ? std::min(cfg.subset_size, data.train.size())
                                               : std::min(1200, data.train.size());
        const int epochs = cfg.epochs_per_task > 0 ? cfg.epochs_per_task : 400;
        data.stream =
            make_random_label_stream(data.train, subset, tasks, epochs, 16, stream_rng);
    } else if (cfg.stream == "hard_easy") {
        const int tasks = n_tasks > 0 ? n_tasks : 30;
        data.stream = make_hard_easy_stream(data.train, tasks, cfg.steps_per_task, 32,
                                            cfg.images_per_class, stream_rng);
    } else if (cfg.stream == "binary_pair") {
        const int tasks = n_tasks > 0 ? n_tasks : 5;
        const int epochs = cfg.epochs_per_task > 0 ? cfg.epochs_per_task : 10;
        data.stream = make_binary_pair_stream(data.train, cfg.images_per_task, tasks, epochs, 100,
                                              stream_rng);
    }
    data.stream.seed = cfg.seed;
    return data;
}

MaskedNetwork build_network(const RunConfig& cfg, const Dataset& train) {
    const bool conv = (!cfg.arch.empty() ? cfg.arch == "convnet" : cfg.dataset == "cifar10");
    const Activation act = cfg.iv.rsl ? Activation::rsl : Activation::relu;
    const int classes = cfg.stream == "binary_pair" ? 2 : train.num_classes;
    MaskedNetwork net;
    if (conv) {
        net = make_convnet(classes, act);
    } else {
        const int input_dim = static_cast<int>(train.images.size() / std::max(1, train.size()));
        net = make_mlp(cfg.mlp_hidden, act, input_dim, classes);
    }
    if (cfg.iv.rsl) net.rsl = cfg.iv.rsl_params;
    net.rng_seed = cfg.seed;
    return net;
}

double evaluate_accuracy(const MaskedNetwork& net, const Dataset& ds, const Task& task,
                         const std::vector<int>& indices, const std::vector<int>& labels,
                         int batch_size) {
    if (indices.empty()) return 0.0;
    int correct = 0;
    const int n = static_cast<int>(indices.size());
    for (int start = 0; start < n; start += batch_size) {
        const int end = std::min(n, start + batch_size);
        std::vector<std::pair<int, int>> items;
        items.reserve(end - start);
        for (int i = start; i < end; ++i)
            items.emplace_back(indices[i], labels.empty() ? ds.labels[indices[i]] : labels[i]);
        const Batch batch = assemble_batch(ds, task, items);
        const Tensor logits = forward(net, batch.images, Mode::eval);
        const int classes = logits.cols();
        for (int r = 0; r < logits.rows(); ++r) {
            const double* row = logits.row(r);
            int best = 0;
            for (int c = 1; c < classes; ++c)
                if (row[c] > row[best]) best = c;
            if (best == batch.labels[r]) ++correct;
        }
    }
    return static_cast<double>(correct) / n;
}

namespace {

struct Runner {
    const RunConfig& cfg;
    RunData data;
    MaskedNetwork net;
    OptimizerState opt;
    std::optional<TwoSpeedController> two_speed;
    RewindSnapshot rewind_snap;
    bool rewind_taken = false;
    CompactnessPlan plan;
    bool has_plan = false;
    ReplayBuffer buffer;
    RunLog log;

    Rng data_rng, diag_rng, replay_rng, newborn_rng, rsl_rng;
    double work_done = 0.0;
    double work_total = 1.0;
    int global_epoch = 0;
    bool ticket_mode = false;

    explicit Runner(const RunConfig& c, uint64_t root_seed, bool ticket)
        : cfg(c),
          buffer(c.replay_per_class, c.replay_total),
          data_rng(Rng::mix(root_seed, kDataTag)),
          diag_rng(Rng::mix(root_seed, kDiagTag)),
          replay_rng(Rng::mix(root_seed, kReplayTag)),
          newborn_rng(Rng::mix(root_seed, kNewbornTag)),
          rsl_rng(Rng::mix(root_seed, kRslTag)),
          ticket_mode(ticket) {
        data = prepare_run_data(cfg);
        net = build_network(cfg, data.train);
        Rng init_rng(Rng::mix(root_seed, kInitTag));
        init_network(net, init_rng);

        work_total = 0.0;
        for (const auto& t : data.stream.tasks) work_total += t.steps > 0 ? 1.0 : t.epochs;
        if (work_total <= 0.0) work_total = 1.0;
    }

    double lr_now() const {
        if (!cfg.cosine) return cfg.lr;
        return cosine_lr(cfg.lr, work_done / work_total, 1.0);
    }

    void apply_seed_mask(uint64_t root_seed) {
        Rng rng(Rng::mix(root_seed, kSeedMaskTag));
        for (int li : net.masked_layer_indices()) {
            Layer& layer = net.layers[li];
            const int d = layer.spec.out_dim;
            const int keep = std::max(1, static_cast<int>(std::lround(cfg.seed_fraction * d)));
            std::vector<int> order(d);
            for (int i = 0; i < d; ++i) order[i] = i;
            rng.shuffle(order);
            std::fill(layer.mask.begin(), layer.mask.end(), uint8_t{0});
            for (int i = 0; i < keep; ++i) layer.mask[order[i]] = 1;
        }
    }

    Batch draw_diag_batch(const Dataset& ds, const Task& task,
                          const std::vector<std::pair<int, int>>& items) {
        const int n = std::min<int>(cfg.diag_batch, static_cast<int>(items.size()));
        std::vector<std::pair<int, int>> chosen;
        chosen.reserve(n);
        for (int i = 0; i < n; ++i) chosen.push_back(items[diag_rng.index(items.size())]);
        return assemble_batch(ds, task, chosen);
    }

    void record_cohort_rows(const std::map<int, UnitSignals>& signals, int event,
                            const std::string& cohort, const std::string& timepoint, int age,
                            const std::map<int, std::vector<int>>& units_per_layer) {
        for (const auto& [li, units] : units_per_layer) {
            if (units.empty()) continue;
            const auto& sig = signals.at(li);
            CohortRow row;
            row.event = event;
            row.layer = li;
            row.cohort = cohort;
            row.timepoint = timepoint;
            row.age_epochs = age;
            row.n_units = static_cast<int>(units.size());
            double act = 0.0, grad = 0.0;
            for (int j : units) {
                act += sig.act_rate[j];
                grad += sig.grad_mag[j];
            }
            row.mean_act = act / units.size();
            row.mean_grad = grad / units.size();
            row.tau = cfg.tau;
            row.batch_id = event;
            log.cohorts.push_back(row);
        }
    }

    // Cohort membership of the current event; populated at edit time and
    // reused for the age/end snapshots of the same cycle.
    std::map<int, std::vector<int>> newborn_units, incumbent_units, kept_units, pruned_units;
    std::optional<Batch> event_batch;
    int event_cycle = -1;

    void grow_edit(int cycle, const Task& task, const std::vector<std::pair<int, int>>& items) {
        event_batch = draw_diag_batch(data.train, task, items);
        GrowOptions opts;
        opts.scorer = cfg.iv.gradmax ? GrowScorer::gradmax : GrowScorer::activation;
        opts.init = cfg.iv.net2wider ? InitPolicy::net2wider : InitPolicy::fresh_kaiming;
        opts.tau = cfg.tau;
        opts.net2wider_noise = cfg.iv.net2wider_noise;

        // Incumbents are the pre-edit active sets.
        std::map<int, std::vector<int>> pre_active;
        for (int li : net.masked_layer_indices()) pre_active[li] = net.active_units(li);

        EditEvent ev = grow_step(net, plan, cycle, *event_batch, opts, newborn_rng);
        if (ev.edits.empty()) {
            // zero-quota step: the structural step still happened
            log.events.push_back(std::move(ev));
            event_cycle = -1;
            return;
        }

        newborn_units.clear();
        incumbent_units.clear();
        for (const auto& edit : ev.edits) {
            newborn_units[edit.layer] = edit.units;
            incumbent_units[edit.layer] = pre_active[edit.layer];
        }
        event_cycle = cycle;

        if (two_speed) {
            std::vector<UnitSlice> slices;
            for (const auto& edit : ev.edits)
                for (int j : edit.units) slices.push_back({edit.layer, j});
            two_speed->register_birth(slices);
        }
        if (cfg.iv.moment_transplant) {
            for (const auto& edit : ev.edits) {
                std::map<int, int> donor_map;
                for (size_t i = 0; i < edit.units.size(); ++i)
                    if (edit.donors[i] >= 0) donor_map[edit.units[i]] = edit.donors[i];
                if (!donor_map.empty()) moment_transplant(opt, net, edit.layer, donor_map);
            }
        }
        log.events.push_back(std::move(ev));

        const auto post = unit_signals(net, *event_batch, cfg.tau);
        record_cohort_rows(post, cycle, "newborn", "post", 0, newborn_units);
        record_cohort_rows(post, cycle, "incumbent", "post", 0, incumbent_units);
    }

    void prune_edit(int cycle, const Task& task, const std::vector<std::pair<int, int>>& items) {
        event_batch = draw_diag_batch(data.train, task, items);
        // Exit snapshot: decision-time statistics, taken before the edit.
        const auto exit_signals = unit_signals(net, *event_batch, cfg.tau);

        EditEvent ev = prune_step(net, plan, cycle, rewind_taken ? &rewind_snap : nullptr);
        if (ev.edits.empty()) {
            log.events.push_back(std::move(ev));
            event_cycle = -1;
            return;
        }
        kept_units.clear();
        pruned_units.clear();
        for (const auto& edit : ev.edits) {
            kept_units[edit.layer] = edit.kept;
            pruned_units[edit.layer] = edit.units;
        }
        event_cycle = cycle;
        record_cohort_rows(exit_signals, cycle, "kept", "exit", 0, kept_units);
        record_cohort_rows(exit_signals, cycle, "pruned", "exit", 0, pruned_units);

        // Rewound weights invalidate accumulated moments.
        if (rewind_taken && opt.kind == OptimKind::adam) opt.reset(net);

        log.events.push_back(std::move(ev));
        const auto post = unit_signals(net, *event_batch, cfg.tau);
        record_cohort_rows(post, cycle, "survivor", "post", 0, kept_units);
    }

    void age_snapshot(int age) {
        if (event_cycle < 0 || !event_batch) return;
        const auto sig = unit_signals(net, *event_batch, cfg.tau);
        if (cfg.method == "grow") {
            record_cohort_rows(sig, event_cycle, "newborn", "age", age, newborn_units);
            record_cohort_rows(sig, event_cycle, "incumbent", "age", age, incumbent_units);
        }
    }

    void end_snapshot() {
        if (event_cycle < 0 || !event_batch) return;
        const auto sig = unit_signals(net, *event_batch, cfg.tau);
        if (cfg.method == "grow") {
            record_cohort_rows(sig, event_cycle, "newborn", "end", 0, newborn_units);
            record_cohort_rows(sig, event_cycle, "incumbent", "end", 0, incumbent_units);
        } else if (cfg.method == "prune") {
            record_cohort_rows(sig, event_cycle, "survivor", "end", 0, kept_units);
        }
        event_cycle = -1;
        event_batch.reset();
    }

    void train_one_batch(const Dataset& ds, const Task& task,
                         const std::vector<std::pair<int, int>>& raw_items,
                         std::vector<double>& online, double lr) {
        std::vector<std::pair<int, int>> items = raw_items;
        if (data.stream.kind == "split" && cfg.replay)
            items = replay_mix(buffer, items, cfg.replay_fraction, replay_rng);
        const Batch batch = assemble_batch(ds, task, items);
        ForwardCache cache;
        const Tensor logits = forward(net, batch.images, Mode::train, &cache, &rsl_rng);

        int correct = 0;
        for (int r = 0; r < logits.rows(); ++r) {
            const double* row = logits.row(r);
            int best = 0;
            for (int c = 1; c < logits.cols(); ++c)
                if (row[c] > row[best]) best = c;
            if (best == batch.labels[r]) ++correct;
        }
        online.push_back(static_cast<double>(correct) / logits.rows());

        const LossResult loss = softmax_xent(logits, batch.labels);
        const Gradients grads = backward(net, cache, loss.grad_logits);
        if (two_speed) two_speed->capture(net);
        optim_step(net, grads, opt, lr);
        if (two_speed) two_speed->apply(net);
        log.total_steps += 1;
    }

    void checkpoint(int task_index, const Task& task) {
        CheckpointRecord rec;
        rec.index = static_cast<int>(log.checkpoints.size()) + 1;
        rec.epoch = global_epoch;
        rec.lr = lr_now();
        if (data.stream.cumulative_eval) {
            for (int k = 0; k <= task_index; ++k) {
                const Task& tk = data.stream.tasks[k];
                rec.per_task_acc.push_back(evaluate_accuracy(
                    net, tk.eval_on_train ? data.train : data.test, tk, tk.eval_indices,
                    tk.eval_labels, std::max(cfg.batch_size, 256)));
            }
        } else {
            rec.per_task_acc.push_back(evaluate_accuracy(
                net, task.eval_on_train ? data.train : data.test, task, task.eval_indices,
                task.eval_labels, std::max(cfg.batch_size, 256)));
        }
        rec.acc_cum = cum_acc(rec.per_task_acc);
        for (int li : net.masked_layer_indices()) rec.active_counts.push_back(net.active_count(li));
        log.checkpoints.push_back(std::move(rec));
    }

    void run() {
        const auto t0 = std::chrono::steady_clock::now();
        for (int li : net.masked_layer_indices())
            log.initial_masks.push_back(net.layers[li].mask);

        for (size_t ti = 0; ti < data.stream.tasks.size(); ++ti) {
            const Task& task = data.stream.tasks[ti];
            const int cycle = static_cast<int>(ti) + 1;

            std::vector<std::pair<int, int>> items;
            items.reserve(task.train_indices.size());
            for (size_t i = 0; i < task.train_indices.size(); ++i)
                items.emplace_back(task.train_indices[i],
                                   task.train_labels.empty() ? data.train.labels[task.train_indices[i]]
                                                             : task.train_labels[i]);

            if (!ticket_mode && cycle <= cfg.cycles) {
                if (cfg.method == "grow") grow_edit(cycle, task, items);
                else if (cfg.method == "prune") prune_edit(cycle, task, items);
            }

            log.per_task_online.emplace_back();
            auto& online = log.per_task_online.back();

            if (task.steps > 0) {
                std::vector<std::pair<int, int>> order = items;
                size_t pos = order.size();  // trigger reshuffle on first use
                const double lr_base_work = work_done;
                for (long step = 0; step < task.steps; ++step) {
                    std::vector<std::pair<int, int>> chunk;
                    chunk.reserve(task.batch_size);
                    for (int i = 0; i < task.batch_size; ++i) {
                        if (pos >= order.size()) {
                            data_rng.shuffle(order);
                            pos = 0;
                        }
                        chunk.push_back(order[pos++]);
                    }
                    work_done = lr_base_work + static_cast<double>(step) / task.steps;
                    train_one_batch(data.train, task, chunk, online, lr_now());
                }
                work_done = lr_base_work + 1.0;
            } else {
                for (int epoch = 0; epoch < task.epochs; ++epoch) {
                    if (!ticket_mode && !rewind_taken && cfg.method == "prune" &&
                        cfg.imp_rewind && global_epoch >= cfg.rewind_epoch) {
                        rewind_snap = snapshot_params(net);
                        rewind_taken = true;
                    }
                    const double lr = lr_now();
                    std::vector<std::pair<int, int>> order = items;
                    data_rng.shuffle(order);
                    for (size_t start = 0; start < order.size();
                         start += static_cast<size_t>(task.batch_size)) {
                        const size_t end =
                            std::min(order.size(), start + static_cast<size_t>(task.batch_size));
                        train_one_batch(
                            data.train, task,
                            {order.begin() + static_cast<long>(start),
                             order.begin() + static_cast<long>(end)},
                            online, lr);
                    }
                    global_epoch += 1;
                    work_done += 1.0;
                    if (!ticket_mode && event_cycle >= 0 && epoch + 1 < task.epochs &&
                        (epoch + 1) % cfg.catchup_every == 0)
                        age_snapshot(epoch + 1);
                }
            }

            if (!ticket_mode) end_snapshot();
            if (data.stream.kind == "split" && cfg.replay) {
                std::vector<int> idx, lab;
                for (const auto& [i, l] : items) {
                    idx.push_back(i);
                    lab.push_back(l);
                }
                buffer.add_task_examples(idx, lab);
            }
            if (!task.eval_indices.empty()) checkpoint(static_cast<int>(ti), task);
        }

        for (int li : net.masked_layer_indices()) log.final_masks.push_back(net.layers[li].mask);
        log.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

std::string derive_run_id(const RunConfig& cfg, const std::string& kind) {
    if (!cfg.out_dir.empty())
        return std::filesystem::path(cfg.out_dir).filename().string();
    std::ostringstream id;
    id << cfg.method << "_" << cfg.dataset << "_" << cfg.stream << "_c"
       << static_cast<int>(std::lround(cfg.compactness * 100)) << "_T" << cfg.cycles << "_s"
       << cfg.seed;
    if (kind == "ticket") id << "_ticket";
    return id.str();
}

}  // namespace

RunLog run_cycle_protocol(const RunConfig& cfg) {
    cfg.validate();
    Runner runner(cfg, cfg.seed, /*ticket=*/false);
    runner.log.config = cfg;
    runner.log.kind = "cycle";
    runner.log.run_id = derive_run_id(cfg, "cycle");

    if (cfg.method == "grow") runner.apply_seed_mask(cfg.seed);
    if (cfg.method != "dense") {
        runner.plan = plan_targets(
            runner.net, cfg.compactness,
            BiasSchedule::named(cfg.schedule, runner.net.masked_layer_indices().size()),
            cfg.cycles);
        runner.has_plan = true;
        runner.log.plan = runner.plan;
        runner.log.has_plan = true;
    }
    runner.opt = OptimizerState::make(cfg.optimizer == "adam" ? OptimKind::adam : OptimKind::sgd,
                                      cfg.lr, runner.net);
    if (cfg.method == "prune" && cfg.imp_rewind && cfg.rewind_epoch == 0) {
        runner.rewind_snap = snapshot_params(runner.net);
        runner.rewind_taken = true;
    }
    // A positive rewind epoch is honored by snapshotting lazily once that
    // many epochs have elapsed; until then prune steps skip rewinding.
    if (cfg.iv.two_speed)
        runner.two_speed.emplace(cfg.iv.two_speed_r, cfg.iv.two_speed_window);

    // A module fault aborts the run but flushes the partial log first.
    try {
        runner.run();
    } catch (const std::exception& e) {
        runner.log.fault = e.what();
        if (!cfg.out_dir.empty()) write_run_outputs(runner.log);
        throw;
    }
    return std::move(runner.log);
}

RunLog run_winning_ticket(const RunConfig& cfg,
                          const std::vector<std::vector<uint8_t>>& final_mask,
                          const std::string& paired_run, std::optional<double> paired_final_acc) {
    cfg.validate();
    const uint64_t wt_seed = Rng::mix(cfg.seed, kTicketDerive);
    Runner runner(cfg, wt_seed, /*ticket=*/true);
    runner.log.config = cfg;
    runner.log.kind = "ticket";
    runner.log.run_id = derive_run_id(cfg, "ticket");
    runner.log.paired_run = paired_run;

    const auto masked = runner.net.masked_layer_indices();
    if (final_mask.size() != masked.size())
        throw ConfigError("winning ticket: mask layer count does not match the architecture");
    for (size_t i = 0; i < masked.size(); ++i) {
        Layer& layer = runner.net.layers[masked[i]];
        if (final_mask[i].size() != layer.mask.size())
            throw ConfigError("winning ticket: mask width mismatch on layer " +
                              std::to_string(masked[i]));
        layer.mask = final_mask[i];
    }
    runner.opt = OptimizerState::make(cfg.optimizer == "adam" ? OptimKind::adam : OptimKind::sgd,
                                      cfg.lr, runner.net);
    runner.run();
    RunLog out = std::move(runner.log);
    if (paired_final_acc) {
        out.has_delta = true;
        out.delta_wt_c = ticket_cycle_delta(out.final_acc(), *paired_final_acc);
    }
    return out;
}

std::vector<RunLog> run_stress_test(const RunConfig& cfg, const std::vector<int>& k_values,
                                    int total_epochs) {
    std::vector<RunLog> out;
    for (int k : k_values) {
        if (total_epochs % k != 0)
            throw ValidationError("stress test: horizon " + std::to_string(total_epochs) +
                                  " is not divisible by K=" + std::to_string(k));
        RunConfig c = cfg;
        c.cycles = k;
        c.epochs_per_cycle = total_epochs / k;
        if (!cfg.out_dir.empty()) c.out_dir = cfg.out_dir + "/K" + std::to_string(k);
        out.push_back(run_cycle_protocol(c));
    }
    return out;
}

namespace {

json config_to_json(const RunConfig& c) {
    json j;
    j["run"] = {{"method", c.method},
                {"dataset", c.dataset},
                {"arch", c.arch},
                {"stream", c.stream},
                {"compactness", c.compactness},
                {"schedule", c.schedule},
                {"cycles", c.cycles},
                {"epochs_per_cycle", c.epochs_per_cycle},
                {"batch_size", c.batch_size},
                {"tau", c.tau},
                {"seed_fraction", c.seed_fraction},
                {"seed", c.seed},
                {"train_limit", c.train_limit},
                {"test_limit", c.test_limit},
                {"mlp_hidden", c.mlp_hidden},
                {"out_dir", c.out_dir}};
    j["optimizer"] = {{"kind", c.optimizer}, {"lr", c.lr}, {"cosine", c.cosine}};
    j["prune"] = {{"imp_rewind", c.imp_rewind}, {"rewind_epoch", c.rewind_epoch}};
    j["replay"] = {{"enabled", c.replay},
                   {"fraction", c.replay_fraction},
                   {"per_class", c.replay_per_class},
                   {"total", c.replay_total}};
    j["stream"] = {{"n_tasks", c.n_tasks},
                   {"subset_size", c.subset_size},
                   {"steps_per_task", c.steps_per_task},
                   {"images_per_class", c.images_per_class},
                   {"images_per_task", c.images_per_task},
                   {"epochs_per_task", c.epochs_per_task}};
    j["data"] = {{"dir", c.data_dir},
                 {"synthetic_train", c.synthetic_train},
                 {"synthetic_test", c.synthetic_test},
                 {"synthetic_classes", c.synthetic_classes}};
    j["diagnostics"] = {{"early_window", c.early_window},
                        {"diag_batch", c.diag_batch},
                        {"catchup_every", c.catchup_every}};
    j["interventions"] = {{"two_speed", c.iv.two_speed},
                          {"two_speed_r", c.iv.two_speed_r},
                          {"two_speed_window", c.iv.two_speed_window},
                          {"moment_transplant", c.iv.moment_transplant},
                          {"net2wider", c.iv.net2wider},
                          {"net2wider_noise", c.iv.net2wider_noise},
                          {"gradmax", c.iv.gradmax},
                          {"rsl", c.iv.rsl},
                          {"rsl_c", c.iv.rsl_params.c},
                          {"rsl_p", c.iv.rsl_params.p},
                          {"rsl_lower", c.iv.rsl_params.lower},
                          {"rsl_upper", c.iv.rsl_params.upper}};
    return j;
}

RunConfig config_from_json(const json& j) {
    RunConfig c;
    const auto& r = j.at("run");
    c.method = r.at("method");
    c.dataset = r.at("dataset");
    c.arch = r.value("arch", "");
    c.stream = r.at("stream");
    c.compactness = r.at("compactness");
    c.schedule = r.at("schedule");
    c.cycles = r.at("cycles");
    c.epochs_per_cycle = r.at("epochs_per_cycle");
    c.batch_size = r.at("batch_size");
    c.tau = r.at("tau");
    c.seed_fraction = r.at("seed_fraction");
    c.seed = r.at("seed");
    c.train_limit = r.at("train_limit");
    c.test_limit = r.at("test_limit");
    c.mlp_hidden = r.at("mlp_hidden");
    c.out_dir = r.at("out_dir");
    const auto& o = j.at("optimizer");
    c.optimizer = o.at("kind");
    c.lr = o.at("lr");
    c.cosine = o.at("cosine");
    const auto& p = j.at("prune");
    c.imp_rewind = p.at("imp_rewind");
    c.rewind_epoch = p.at("rewind_epoch");
    const auto& rp = j.at("replay");
    c.replay = rp.at("enabled");
    c.replay_fraction = rp.at("fraction");
    c.replay_per_class = rp.at("per_class");
    c.replay_total = rp.at("total");
    const auto& s = j.at("stream");
    c.n_tasks = s.at("n_tasks");
    c.subset_size = s.at("subset_size");
    c.steps_per_task = s.at("steps_per_task");
    c.images_per_class = s.at("images_per_class");
    c.images_per_task = s.at("images_per_task");
    c.epochs_per_task = s.at("epochs_per_task");
    const auto& d = j.at("data");
    c.data_dir = d.at("dir");
    c.synthetic_train = d.at("synthetic_train");
    c.synthetic_test = d.at("synthetic_test");
    c.synthetic_classes = d.at("synthetic_classes");
    const auto& dg = j.at("diagnostics");
    c.early_window = dg.at("early_window");
    c.diag_batch = dg.at("diag_batch");
    c.catchup_every = dg.at("catchup_every");
    const auto& iv = j.at("interventions");
    c.iv.two_speed = iv.at("two_speed");
    c.iv.two_speed_r = iv.at("two_speed_r");
    c.iv.two_speed_window = iv.at("two_speed_window");
    c.iv.moment_transplant = iv.at("moment_transplant");
    c.iv.net2wider = iv.at("net2wider");
    c.iv.net2wider_noise = iv.at("net2wider_noise");
    c.iv.gradmax = iv.at("gradmax");
    c.iv.rsl = iv.at("rsl");
    c.iv.rsl_params.c = iv.at("rsl_c");
    c.iv.rsl_params.p = iv.at("rsl_p");
    c.iv.rsl_params.lower = iv.at("rsl_lower");
    c.iv.rsl_params.upper = iv.at("rsl_upper");
    return c;
}

json plan_to_json(const CompactnessPlan& plan) {
    return json{{"global_c", plan.global_c},
                {"schedule", plan.schedule.name},
                {"scalars", plan.schedule.scalars},
                {"masked_layers", plan.masked_layers},
                {"unit_targets", plan.unit_targets},
                {"cycles", plan.cycles},
                {"budget_note", plan.budget_note}};
}

}  // namespace

void write_run_outputs(const RunLog& log) {
    if (log.config.out_dir.empty()) throw ConfigError("write_run_outputs: out_dir is empty");
    namespace fs = std::filesystem;
    const fs::path dir(log.config.out_dir);
    fs::create_directories(dir);

    {
        json j = config_to_json(log.config);
        j["kind"] = log.kind;
        j["run_id"] = log.run_id;
        if (!log.paired_run.empty()) j["paired_run"] = log.paired_run;
        if (log.has_plan) j["plan"] = plan_to_json(log.plan);
        std::ofstream(dir / "config.json") << j.dump(2) << "\n";
    }
    {
        std::ofstream out(dir / "metrics.csv");
        out << "checkpoint,epoch,acc_cum,n_tasks,per_task_acc,lr";
        for (size_t i = 0; i < log.final_masks.size(); ++i) out << ",active_m" << i;
        out << "\n";
        for (const auto& c : log.checkpoints) {
            out << c.index << "," << c.epoch << "," << c.acc_cum << "," << c.per_task_acc.size()
                << ",\"";
            for (size_t i = 0; i < c.per_task_acc.size(); ++i)
                out << (i ? ";" : "") << c.per_task_acc[i];
            out << "\"," << c.lr;
            for (int a : c.active_counts) out << "," << a;
            out << "\n";
        }
    }
    {
        std::ofstream out(dir / "events.jsonl");
        for (const auto& ev : log.events) {
            json j{{"cycle", ev.cycle}, {"action", ev.action}};
            j["edits"] = json::array();
            for (const auto& e : ev.edits) {
                j["edits"].push_back({{"layer", e.layer},
                                      {"units", e.units},
                                      {"scores", e.scores},
                                      {"donors", e.donors},
                                      {"kept", e.kept}});
            }
            out << j.dump() << "\n";
        }
    }
    {
        std::ofstream out(dir / "cohorts.csv");
        out << "event,layer,cohort,timepoint,age_epochs,n_units,mean_act,mean_grad,tau,batch_id\n";
        for (const auto& r : log.cohorts)
            out << r.event << "," << r.layer << "," << r.cohort << "," << r.timepoint << ","
                << r.age_epochs << "," << r.n_units << "," << r.mean_act << "," << r.mean_grad
                << "," << r.tau << "," << r.batch_id << "\n";
    }
    {
        std::ofstream out(dir / "online.csv");
        out << "task,batch,acc\n";
        for (size_t t = 0; t < log.per_task_online.size(); ++t)
            for (size_t b = 0; b < log.per_task_online[t].size(); ++b)
                out << t + 1 << "," << b << "," << log.per_task_online[t][b] << "\n";
    }
    {
        json j;
        j["initial_masks"] = log.initial_masks;
        j["final_masks"] = log.final_masks;
        std::vector<int> counts;
        for (const auto& m : log.final_masks)
            counts.push_back(static_cast<int>(std::count(m.begin(), m.end(), uint8_t{1})));
        j["final_active_counts"] = counts;
        if (log.has_plan) j["plan"] = plan_to_json(log.plan);
        std::ofstream(dir / "mask_final.json") << j.dump(2) << "\n";
    }
    {
        json j{{"run_id", log.run_id},
               {"kind", log.kind},
               {"acc", log.final_acc()},
               {"taa", log.taa_value()},
               {"taoa", log.taoa_value()},
               {"early_task_taa", log.early_taa_value(log.config.early_window)},
               {"checkpoints", log.checkpoints.size()},
               {"events", log.events.size()},
               {"total_steps", log.total_steps},
               {"wall_seconds", log.wall_seconds}};
        if (!log.paired_run.empty()) j["paired_run"] = log.paired_run;
        if (log.has_delta) j["delta_wt_c"] = log.delta_wt_c;
        if (!log.fault.empty()) j["fault"] = log.fault;
        std::ofstream(dir / "summary.json") << j.dump(2) << "\n";
    }
}

std::vector<std::vector<uint8_t>> read_final_mask(const std::string& run_dir) {
    std::ifstream in(std::filesystem::path(run_dir) / "mask_final.json");
    if (!in) throw ParseError(run_dir + ": missing mask_final.json");
    json j;
    in >> j;
    std::vector<std::vector<uint8_t>> masks;
    for (const auto& m : j.at("final_masks")) masks.push_back(m.get<std::vector<uint8_t>>());
    return masks;
}

RunConfig read_run_config(const std::string& run_dir, std::string* kind, double* final_acc) {
    std::ifstream in(std::filesystem::path(run_dir) / "config.json");
    if (!in) throw ParseError(run_dir + ": missing config.json");
    json j;
    in >> j;
    if (kind) *kind = j.value("kind", "cycle");
    if (final_acc) {
        std::ifstream sin(std::filesystem::path(run_dir) / "summary.json");
        if (sin) {
            json s;
            sin >> s;
            *final_acc = s.value("acc", 0.0);
        }
    }
    return config_from_json(j);
}

}  // namespace plast
