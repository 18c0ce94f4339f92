#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "doctest.h"
#include "plast/streams.hpp"

using namespace plast;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("plast_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_be32(std::ofstream& out, uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_idx_fixture(const fs::path& img_path, const fs::path& lab_path, int n) {
    std::ofstream img(img_path, std::ios::binary);
    write_be32(img, 0x803);
    write_be32(img, n);
    write_be32(img, 28);
    write_be32(img, 28);
    for (int i = 0; i < n; ++i)
        for (int p = 0; p < 784; ++p) img.put(static_cast<char>((i * 31 + p) % 256));
    std::ofstream lab(lab_path, std::ios::binary);
    write_be32(lab, 0x801);
    write_be32(lab, n);
    for (int i = 0; i < n; ++i) lab.put(static_cast<char>(i % 10));
}

}  // namespace

TEST_CASE("load_idx: fixture round trip, bad magic, truncation") {
    TempDir tmp;
    const auto img = tmp.path / "img";
    const auto lab = tmp.path / "lab";
    write_idx_fixture(img, lab, 4);

    const Dataset ds = load_idx(img.string(), lab.string());
    CHECK(ds.images.shape() == std::vector<int>{4, 784});
    CHECK(ds.labels == std::vector<int>{0, 1, 2, 3});
    CHECK(ds.images[0] == doctest::Approx(0.0));
    CHECK(ds.images[1] == doctest::Approx(1.0 / 255.0));

    // bad magic
    {
        std::ofstream bad(tmp.path / "badmagic", std::ios::binary);
        write_be32(bad, 0x1234);
        write_be32(bad, 1);
        write_be32(bad, 28);
        write_be32(bad, 28);
    }
    CHECK_THROWS_WITH_AS(load_idx_images((tmp.path / "badmagic").string()),
                         doctest::Contains("magic"), ParseError);

    // truncated payload names expected vs actual byte counts
    {
        std::ofstream cut(tmp.path / "cut", std::ios::binary);
        write_be32(cut, 0x803);
        write_be32(cut, 2);
        write_be32(cut, 28);
        write_be32(cut, 28);
        for (int i = 0; i < 100; ++i) cut.put(0);
    }
    CHECK_THROWS_WITH_AS(load_idx_images((tmp.path / "cut").string()),
                         doctest::Contains("expected 1568"), ParseError);

    CHECK_THROWS_AS(load_idx_images((tmp.path / "missing").string()), ParseError);
}

TEST_CASE("load_cifar: 3073-byte records") {
    TempDir tmp;
    const auto bin = tmp.path / "batch.bin";
    {
        std::ofstream out(bin, std::ios::binary);
        for (int rec = 0; rec < 2; ++rec) {
            out.put(static_cast<char>(rec + 3));  // label
            for (int i = 0; i < 3072; ++i) out.put(static_cast<char>((rec + i) % 256));
        }
    }
    const Dataset ds = load_cifar({bin.string()}, 10);
    CHECK(ds.images.shape() == std::vector<int>{2, 3, 32, 32});
    CHECK(ds.labels == std::vector<int>{3, 4});
    CHECK(ds.images[0] == doctest::Approx(0.0));
    CHECK(ds.images[3072] == doctest::Approx(1.0 / 255.0));

    {
        std::ofstream out(tmp.path / "short.bin", std::ios::binary);
        for (int i = 0; i < 100; ++i) out.put(0);
    }
    CHECK_THROWS_WITH_AS(load_cifar({(tmp.path / "short.bin").string()}, 10),
                         doctest::Contains("3073"), ParseError);
}

TEST_CASE("split stream: disjoint pairs, cumulative eval, shared ordering") {
    const Dataset train = synthetic_dataset(400, 10, {16}, 1);
    const Dataset test = synthetic_dataset(200, 10, {16}, 2, 1);

    const TaskStream a = make_split_stream(train, test, 5, 2, 8, Rng(42));
    const TaskStream b = make_split_stream(train, test, 5, 2, 8, Rng(42));
    REQUIRE(a.tasks.size() == 5);
    CHECK(a.cumulative_eval);

    std::set<int> seen;
    for (const auto& t : a.tasks) {
        std::set<int> classes;
        for (int i : t.train_indices) classes.insert(train.labels[i]);
        CHECK(classes.size() == 2);
        for (int c : classes) {
            CHECK(!seen.count(c));
            seen.insert(c);
        }
    }
    CHECK(seen.size() == 10);

    // same seed, same partitions (shared across methods within a seed)
    for (int t = 0; t < 5; ++t) {
        CHECK(a.tasks[t].train_indices == b.tasks[t].train_indices);
        CHECK(a.tasks[t].eval_indices == b.tasks[t].eval_indices);
    }

    // cumulative eval at t=2 covers four classes
    std::set<int> eval_classes;
    for (int t = 0; t < 2; ++t)
        for (int i : a.tasks[t].eval_indices) eval_classes.insert(test.labels[i]);
    CHECK(eval_classes.size() == 4);

    const Dataset odd = synthetic_dataset(100, 9, {16}, 3);
    CHECK_THROWS_AS(make_split_stream(odd, odd, 5, 2, 8, Rng(1)), ConfigError);
}

TEST_CASE("replay buffer: first-M-seen insertion with hard caps") {
    ReplayBuffer buffer(50, 200);
    CHECK(buffer.empty());

    // two tasks of a 10-class stream: caps must hold at every point
    std::vector<int> idx, lab;
    for (int i = 0; i < 300; ++i) {
        idx.push_back(i);
        lab.push_back(i % 2);
    }
    buffer.add_task_examples(idx, lab);
    CHECK(buffer.count_for_class(0) == 50);
    CHECK(buffer.count_for_class(1) == 50);
    CHECK(buffer.total() == 100);

    idx.clear();
    lab.clear();
    for (int i = 0; i < 300; ++i) {
        idx.push_back(1000 + i);
        lab.push_back(2 + i % 2);
    }
    buffer.add_task_examples(idx, lab);
    CHECK(buffer.total() == 200);

    // a third task cannot push past the total cap
    idx.assign({5000, 5001});
    lab.assign({4, 4});
    buffer.add_task_examples(idx, lab);
    CHECK(buffer.total() == 200);
    CHECK(buffer.count_for_class(4) == 0);
}

TEST_CASE("replay_mix: half-and-half composition") {
    ReplayBuffer buffer(50, 200);
    std::vector<int> idx, lab;
    for (int i = 0; i < 40; ++i) {
        idx.push_back(10000 + i);  // marker range for buffer items
        lab.push_back(i % 4);
    }
    buffer.add_task_examples(idx, lab);

    std::vector<std::pair<int, int>> current;
    for (int i = 0; i < 16; ++i) current.push_back({i, 5});

    Rng rng(9);
    const auto mixed = replay_mix(buffer, current, 0.5, rng);
    REQUIRE(mixed.size() == 16);
    int from_buffer = 0;
    for (const auto& [i, l] : mixed)
        if (i >= 10000) ++from_buffer;
    CHECK(from_buffer == 8);

    // empty buffer passes the current batch through
    ReplayBuffer empty(50, 200);
    const auto passthrough = replay_mix(empty, current, 0.5, rng);
    CHECK(passthrough == current);
}

TEST_CASE("permuted stream: fixed subset, per-task bijections") {
    const Dataset train = synthetic_dataset(300, 10, {25}, 4);
    const TaskStream s = make_permuted_stream(train, 4, 100, 1, 16, Rng(7));
    REQUIRE(s.tasks.size() == 4);

    for (const auto& t : s.tasks) {
        CHECK(t.train_indices == s.tasks[0].train_indices);  // shared subset
        std::vector<int> sorted = t.pixel_perm;
        std::sort(sorted.begin(), sorted.end());
        for (size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == static_cast<int>(i));
    }
    CHECK(s.tasks[0].pixel_perm != s.tasks[1].pixel_perm);

    // identity permutation leaves assembled images unchanged
    Task identity = s.tasks[0];
    for (size_t i = 0; i < identity.pixel_perm.size(); ++i)
        identity.pixel_perm[i] = static_cast<int>(i);
    const Batch batch = assemble_batch(train, identity, {{3, 0}});
    for (int d = 0; d < 25; ++d) CHECK(batch.images[d] == train.images[3 * 25 + d]);

    // permutation rearranges but preserves the multiset of pixels
    const Batch permuted = assemble_batch(train, s.tasks[1], {{3, 0}});
    std::vector<double> a(batch.images.values()), b(permuted.images.values());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);

    CHECK_THROWS_AS(make_permuted_stream(train, 2, 400, 1, 16, Rng(1)), ConfigError);
}

TEST_CASE("random-label stream: fixed inputs, fresh uniform labels per task") {
    const Dataset train = synthetic_dataset(2000, 10, {9}, 5);
    const TaskStream s = make_random_label_stream(train, 1200, 3, 2, 16, Rng(11));
    REQUIRE(s.tasks.size() == 3);

    CHECK(s.tasks[1].train_indices == s.tasks[0].train_indices);
    CHECK(s.tasks[2].train_indices == s.tasks[0].train_indices);
    CHECK(s.tasks[0].train_labels != s.tasks[1].train_labels);

    // regeneration with the same seed reproduces labels exactly
    const TaskStream again = make_random_label_stream(train, 1200, 3, 2, 16, Rng(11));
    CHECK(again.tasks[0].train_labels == s.tasks[0].train_labels);

    // label histogram is consistent with uniform sampling (chi^2, 9 dof;
    // 27.88 is the p = 0.001 cutoff)
    for (const auto& t : s.tasks) {
        std::vector<int> counts(10, 0);
        for (int l : t.train_labels) counts[l] += 1;
        double chi2 = 0.0;
        const double expected = 120.0;
        for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
        CHECK(chi2 < 27.88);
    }
}

TEST_CASE("hard/easy stream: alternation, class budgets, step budget") {
    const Dataset train = synthetic_dataset(4000, 100, {9}, 6);
    const TaskStream s = make_hard_easy_stream(train, 12, 780, 32, 20, Rng(13));
    REQUIRE(s.tasks.size() == 12);

    std::set<int> used;
    for (size_t t = 0; t < s.tasks.size(); ++t) {
        const Task& task = s.tasks[t];
        CHECK(task.is_hard == (t % 2 == 0));
        CHECK(task.steps == 780);
        std::set<int> classes;
        for (int i : task.train_indices) classes.insert(train.labels[i]);
        CHECK(classes.size() == (task.is_hard ? 5 : 1));
        for (int c : classes) {
            CHECK(!used.count(c));
            used.insert(c);
        }
        // evaluation restricted to hard tasks
        CHECK(task.eval_indices.empty() == !task.is_hard);
    }
}

TEST_CASE("binary-pair stream: remapped labels, balance, no reuse") {
    const Dataset train = synthetic_dataset(4000, 100, {9}, 14);
    const TaskStream s = make_binary_pair_stream(train, 40, 8, 10, 100, Rng(15));
    REQUIRE(s.tasks.size() == 8);

    std::set<int> used;
    for (const auto& t : s.tasks) {
        int zero = 0, one = 0;
        for (int l : t.train_labels) (l == 0 ? zero : one) += 1;
        CHECK(zero == 20);
        CHECK(one == 20);
        std::set<int> classes;
        for (int i : t.train_indices) classes.insert(train.labels[i]);
        CHECK(classes.size() == 2);
        for (int c : classes) {
            CHECK(!used.count(c));
            used.insert(c);
        }
    }
}

TEST_CASE("iid stream: one task per cycle over the full data") {
    const Dataset train = synthetic_dataset(100, 10, {9}, 20);
    const Dataset test = synthetic_dataset(40, 10, {9}, 21, 20);
    const TaskStream s = make_iid_stream(train, test, 5, 20, 64);
    REQUIRE(s.tasks.size() == 5);
    for (const auto& t : s.tasks) {
        CHECK(t.train_indices.size() == 100);
        CHECK(t.eval_indices.size() == 40);
        CHECK(t.epochs == 20);
    }
}
