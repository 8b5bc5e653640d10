// Compare per-fold accuracies of several models evaluated on the same folds.
// Scores below are made up; in practice they come from `mpoxscreen cv` reports.

#include <iostream>

#include "mpox/stats/compare.hpp"

int main() {
    using mpox::stats::SampleVector;
    std::vector<SampleVector> models{
        {"MobileNetV3Small", {0.95, 0.90, 0.93, 0.88, 0.97, 0.90, 0.93, 0.95, 0.88, 0.93}, {}},
        {"MobileNetV3Large", {0.93, 0.90, 0.95, 0.90, 0.93, 0.88, 0.95, 0.93, 0.90, 0.90}, {}},
        {"VGG16", {0.85, 0.83, 0.88, 0.80, 0.88, 0.83, 0.85, 0.85, 0.80, 0.83}, {}},
    };
    const auto report = mpox::stats::compare_models(models);
    std::cout << mpox::stats::narrative(report) << "\n";

    // augmentation on vs off for one backbone
    const auto aug = mpox::stats::compare_augmentation(
        {"MobileNetV3Small", {0.90, 0.88, 0.93, 0.85, 0.95, 0.88, 0.90, 0.93, 0.85, 0.90}, {}}, models[0]);
    std::cout << mpox::stats::to_json(aug).dump(2) << "\n";
}
