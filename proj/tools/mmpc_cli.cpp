#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mmpc/error.hpp"
#include "mmpc/experiment.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"Subspace identification and multi-model MPC experiments on the FCCU surrogate"};
    app.require_subcommand(1);
    std::string output_root;
    app.add_option("--output-root", output_root, "Override [output] directory and $MMPC_OUTPUT_ROOT");

    std::string config;
    auto* identify = app.add_subcommand("identify", "PRBS experiment and N4SID estimation of every bank model");
    identify->add_option("config", config, "Experiment INI file")->required();

    std::string mode = "single";
    bool inline_identify = false;
    auto* control = app.add_subcommand("control", "Closed-loop run with single- or multi-model MPC");
    control->add_option("config", config, "Experiment INI file")->required();
    control->add_option("--mode", mode, "single or multi")->check(CLI::IsMember({"single", "multi"}));
    control->add_flag("--identify", inline_identify, "Run identify first");

    std::string dir_a, dir_b, out_dir;
    auto* compare = app.add_subcommand("compare", "Overlay series and metric deltas of two runs");
    compare->add_option("run_a", dir_a, "First run directory")->required();
    compare->add_option("run_b", dir_b, "Second run directory")->required();
    compare->add_option("--out", out_dir, "Output directory (default: next to run_a)");

    auto* preview = app.add_subcommand("prbs-preview", "Write the excitation signals without running the plant");
    preview->add_option("config", config, "Experiment INI file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    std::optional<fs::path> root;
    if (!output_root.empty()) {
        root = output_root;
    }
    try {
        fs::path written;
        if (*identify) {
            written = mmpc::cmd_identify(mmpc::load_experiment(config, root));
        } else if (*control) {
            written = mmpc::cmd_control(mmpc::load_experiment(config, root), mmpc::parse_control_mode(mode),
                                        inline_identify);
        } else if (*compare) {
            std::optional<fs::path> out;
            if (!out_dir.empty()) {
                out = out_dir;
            }
            written = mmpc::cmd_compare(dir_a, dir_b, out);
        } else if (*preview) {
            written = mmpc::cmd_prbs_preview(mmpc::load_experiment(config, root));
        }
        std::cout << written.string() << '\n';
    } catch (const mmpc::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
