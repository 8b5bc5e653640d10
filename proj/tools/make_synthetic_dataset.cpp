// Writes a balanced four-class synthetic lesion dataset plus manifest.csv.

#include <iostream>

#include <CLI11.hpp>

#include "mpox/data/synthetic.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Generate a synthetic stand-in dataset with the four lesion classes"};
    std::string out;
    mpox::SyntheticOptions opt;
    app.add_option("output", out, "Output directory")->required();
    app.add_option("--per-class", opt.per_class, "Images per class")->capture_default_str();
    app.add_option("--size", opt.size, "Image side in pixels")->capture_default_str();
    app.add_option("--seed", opt.seed, "Generator seed")->capture_default_str();
    CLI11_PARSE(app, argc, argv);
    try {
        const auto m = mpox::write_synthetic_dataset(out, opt);
        std::cout << m.records.size() << " records, manifest " << out << "/manifest.csv\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
