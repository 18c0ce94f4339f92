// Acceptance suite: one pass/fail line per criterion.
//
//   acceptance            run everything
//   acceptance --fast     mechanism-level criteria only (no training runs)
//   acceptance --desk     desk-scale training criteria (bundled MNIST subset)

#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "plast/selfcheck.hpp"

int main(int argc, char** argv) {
    std::string mode = "all";
    if (argc > 1) {
        const std::string arg = argv[1];
        if (arg == "--fast") mode = "fast";
        else if (arg == "--desk") mode = "desk";
        else if (arg != "--all") {
            std::cerr << "usage: acceptance [--fast|--desk|--all]\n";
            return 2;
        }
    }
    const char* env_dir = std::getenv("PLAST_DATA_DIR");
    const std::string data_dir = env_dir ? env_dir : "data/mnist";
    const int threads = std::max(2u, std::thread::hardware_concurrency());

    std::vector<plast::check::CheckResult> results;
    if (mode == "fast" || mode == "all") {
        for (auto& r : plast::check::run_fast_checks()) results.push_back(std::move(r));
    }
    if (mode == "desk" || mode == "all") {
        for (auto& r : plast::check::run_desk_checks(data_dir, threads))
            results.push_back(std::move(r));
    }

    bool all_pass = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  (" << r.seconds << "s)\n"
                  << "      " << r.detail << "\n";
        all_pass = all_pass && r.pass;
    }
    std::cout << (all_pass ? "ALL CRITERIA PASSED" : "CRITERIA FAILED") << " (" << results.size()
              << " checks)\n";
    return all_pass ? 0 : 1;
}
