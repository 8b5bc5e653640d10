// End-to-end on the synthetic set: folds, one head trained on fold 0, test
// metrics, fp16 export, and a Grad-CAM overlay for the first test image.
//
//   train_and_explain <backbone-dir> <out-dir>

#include <iostream>

#include "mpox/data/folds.hpp"
#include "mpox/data/synthetic.hpp"
#include "mpox/deploy/artifact.hpp"
#include "mpox/eval/cross_validation.hpp"
#include "mpox/xai/grad_cam.hpp"

using namespace mpox;

int main(int argc, char** argv) {
    if (argc != 3) {
        std::cerr << "usage: train_and_explain <backbone-dir> <out-dir>\n";
        return 1;
    }
    const std::filesystem::path out = argv[2];
    try {
        SyntheticOptions so;
        so.per_class = 40;
        const auto manifest = write_synthetic_dataset(out / "data", so);
        const auto plan = make_stratified_folds(manifest, 10, 7);

        const auto backbone = load_backbone(BackboneId::mobilenet_v3_small, argv[1]);
        const auto images = load_images(manifest, *backbone);

        CVOptions opt;
        opt.task = manifest.task;
        opt.final_epochs = 30;
        TrialConfig cfg;
        EmbeddingCache cache;
        const auto fm = train_fold_model(plan, 0, images, backbone, cfg, opt, cache);

        const auto a16 = deploy::quantize_fp16(fm.model);
        const auto fp32 = deploy::evaluate_model(fm.model, fm.test);
        const auto fp16 = deploy::evaluate_artifact(a16, fm.test);
        std::cout << "fold 0 accuracy fp32 " << fp32.metrics.accuracy << ", fp16 " << fp16.metrics.accuracy << "\n";
        deploy::save_artifact(a16, out / "artifact");

        const auto cam = xai::grad_cam(fm.model, normalize(fm.test.images[0], backbone->value_range()),
                                       argmax(fp32.probabilities[0]));
        write_file_bytes((out / "overlay.png").string(),
                         encode_image(xai::overlay(fm.test.images[0], cam.heatmap, 0.5), ".png"));
        std::cout << "Grad-CAM layer " << cam.layer << ", overlay at " << (out / "overlay.png").string() << "\n";
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
