// poltomo command line: simulate, symmetrize, reconstruct, analyze, selftest.
//
// Exit codes: 0 ok, 2 configuration error, 3 format error, 4 numerical
// diagnostic failure. POLTOMO_THREADS sets the default thread count.

#include "poltomo/acceptance.hpp"
#include "poltomo/error.hpp"
#include "poltomo/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace poltomo;

namespace {

struct CommonArgs {
    std::string config;
    std::vector<std::string> overrides;
    int threads = 0;
    std::string input;
    std::string output;
};

void add_common(CLI::App* sub, CommonArgs& a) {
    sub->add_option("-c,--config", a.config, "JSON pipeline config")->check(CLI::ExistingFile);
    sub->add_option("--set", a.overrides, "Config override, key.path=value (repeatable)");
    sub->add_option("-j,--threads", a.threads, "Worker threads (default: POLTOMO_THREADS or all cores)")
        ->check(CLI::PositiveNumber);
}

PipelineConfig load(const CommonArgs& a, std::vector<std::string> extra = {}) {
    std::vector<std::string> all = a.overrides;
    all.insert(all.end(), extra.begin(), extra.end());
    configure_threads(a.threads > 0 ? std::optional<int>(a.threads) : std::nullopt);
    return load_config(a.config.empty() ? std::nullopt : std::optional<fs::path>(a.config), all);
}

void list(const std::vector<fs::path>& files) {
    for (const auto& f : files) std::cout << f.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Polarization quantum tomography: simulate Stokes measurements and reconstruct states"};
    app.require_subcommand(1);

    CommonArgs sim, sym, rec, ana;
    std::string rule, path;

    auto* c_sim = app.add_subcommand("simulate", "Simulate a tomogram scan and write a tomogram set");
    add_common(c_sim, sim);
    c_sim->add_option("-o,--out", sim.output, "Output directory")->required();

    auto* c_sym = app.add_subcommand("symmetrize", "Complete a quarter-sphere scan by symmetry");
    add_common(c_sym, sym);
    c_sym->add_option("-i,--in", sym.input, "Input tomogram directory")->required();
    c_sym->add_option("-o,--out", sym.output, "Output directory")->required();
    c_sym->add_option("--rule", rule, "Reflection rule (mirror_x | mirror_y), overrides scan.reflection");

    auto* c_rec = app.add_subcommand("reconstruct", "Reconstruct density blocks (exact) or a volume (radon)");
    add_common(c_rec, rec);
    c_rec->add_option("-i,--in", rec.input, "Input tomogram directory")->required();
    c_rec->add_option("-o,--out", rec.output, "Output directory")->required();
    c_rec->add_option("--path", path, "exact | radon, overrides reconstruction.path");

    auto* c_ana = app.add_subcommand("analyze", "Moments, half widths, slices and sphere maps");
    add_common(c_ana, ana);
    c_ana->add_option("-i,--in", ana.input, "Reconstruction directory, volume file or blocks file")->required();
    c_ana->add_option("-o,--out", ana.output, "Output directory")->required();

    std::vector<int> criteria;
    std::string work_dir = (fs::temp_directory_path() / "poltomo-selftest").string();
    bool keep = false;
    int st_threads = 0;
    auto* c_self = app.add_subcommand("selftest", "Run the acceptance criteria and print one line each");
    c_self->add_option("--criteria", criteria, "Subset of criterion numbers (1-9)")->delimiter(',');
    c_self->add_option("--work-dir", work_dir, "Scratch directory for pipeline runs");
    c_self->add_flag("--keep", keep, "Keep scratch files");
    c_self->add_option("-j,--threads", st_threads, "Worker threads")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ExitCode::config);
    }

    try {
        if (c_sim->parsed()) {
            list(cmd_simulate(load(sim), sim.output));
        } else if (c_sym->parsed()) {
            std::vector<std::string> extra;
            if (!rule.empty()) extra.push_back("scan.reflection=\"" + rule + "\"");
            list(cmd_symmetrize(load(sym, extra), sym.input, sym.output));
        } else if (c_rec->parsed()) {
            std::vector<std::string> extra;
            if (!path.empty()) extra.push_back("reconstruction.path=\"" + path + "\"");
            list(cmd_reconstruct(load(rec, extra), rec.input, rec.output));
        } else if (c_ana->parsed()) {
            list(cmd_analyze(load(ana), ana.input, ana.output));
        } else if (c_self->parsed()) {
            configure_threads(st_threads > 0 ? std::optional<int>(st_threads) : std::nullopt);
            acceptance::Options opts{work_dir, keep};
            const auto results = acceptance::run(criteria, opts, [](const acceptance::CriterionResult& r) {
                std::cout << acceptance::format_line(r) << std::endl;
            });
            std::size_t passed = 0;
            for (const auto& r : results) passed += r.passed;
            std::cout << passed << "/" << results.size() << " criteria passed" << std::endl;
            return passed == results.size() ? 0 : static_cast<int>(ExitCode::numerical);
        }
    } catch (const Error& e) {
        std::cerr << "poltomo: " << e.what() << "\n";
        return static_cast<int>(e.code());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "poltomo: " << e.what() << "\n";
        return static_cast<int>(ExitCode::config);
    } catch (const std::exception& e) {
        std::cerr << "poltomo: unexpected error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
