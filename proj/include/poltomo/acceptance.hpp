#pragma once

// Executable acceptance gate: numbered criteria, each reporting one line.

#include <functional>
#include <string>
#include <vector>

namespace poltomo::acceptance {

struct CriterionResult {
    int id = 0;
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

struct Options {
    // Scratch space for the file-based pipeline criteria.
    std::string work_dir = "poltomo-selftest";
    bool keep_files = false;
};

// Criterion ids 1..9; an empty list runs all of them. `sink` is called after
// each criterion finishes.
std::vector<CriterionResult> run(const std::vector<int>& ids, const Options& options,
                                 const std::function<void(const CriterionResult&)>& sink = {});

std::string format_line(const CriterionResult& r);

}  // namespace poltomo::acceptance
