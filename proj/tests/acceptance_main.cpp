// Runs every acceptance criterion and prints one PASS/FAIL line each.

#include "poltomo/acceptance.hpp"
#include "poltomo/error.hpp"
#include "poltomo/pipeline.hpp"

#include <filesystem>
#include <iostream>

int main(int argc, char** argv) {
    std::vector<int> ids;
    for (int i = 1; i < argc; ++i) ids.push_back(std::atoi(argv[i]));
    try {
        poltomo::configure_threads(std::nullopt);
        poltomo::acceptance::Options opts;
        opts.work_dir = (std::filesystem::temp_directory_path() / "poltomo-acceptance").string();
        const auto results = poltomo::acceptance::run(ids, opts, [](const auto& r) {
            std::cout << poltomo::acceptance::format_line(r) << std::endl;
        });
        int failed = 0;
        for (const auto& r : results) failed += !r.passed;
        std::cout << (results.size() - failed) << "/" << results.size() << " criteria passed" << std::endl;
        return failed ? 1 : 0;
    } catch (const poltomo::Error& e) {
        std::cerr << "acceptance: " << e.what() << "\n";
        return static_cast<int>(e.code());
    }
}
