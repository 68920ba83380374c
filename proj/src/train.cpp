#include "microseg/train.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include <json.hpp>

#include "microseg/checkpoint.hpp"

namespace microseg {

using nlohmann::json;

void TrainConfig::validate() const {
    if (images_per_batch < 1 || pixels_per_image < 1)
        throw ImageError("train: batch sizes must be >= 1");
    if (phase1_lr < 0 || phase2_lr < 0) throw ImageError("train: learning rates must be >= 0");
    if (phase1_updates < 0 || phase2_updates < 0)
        throw ImageError("train: update counts must be >= 0");
    augment.validate();
}

TrainResult train(Model& model, const std::vector<DatasetItem>& dataset,
                  const TrainConfig& config, const LossParams& loss) {
    config.validate();
    if (dataset.empty()) throw ImageError("train: empty dataset");

    std::mt19937_64 rng(config.seed);
    OptState opt = init_opt_state(model);
    TrainResult result;

    auto draw_indices = [&](int count) {
        std::vector<size_t> idx;
        if (dataset.size() >= static_cast<size_t>(count)) {
            std::vector<size_t> all(dataset.size());
            std::iota(all.begin(), all.end(), size_t{0});
            for (int i = 0; i < count; ++i) {
                std::uniform_int_distribution<size_t> pick(i, all.size() - 1);
                std::swap(all[i], all[pick(rng)]);
                idx.push_back(all[i]);
            }
        } else {
            std::uniform_int_distribution<size_t> pick(0, dataset.size() - 1);
            for (int i = 0; i < count; ++i) idx.push_back(pick(rng));
        }
        return idx;
    };

    int update = 0;
    for (int phase = 1; phase <= 2; ++phase) {
        const double lr = phase == 1 ? config.phase1_lr : config.phase2_lr;
        const int updates = phase == 1 ? config.phase1_updates : config.phase2_updates;
        const bool freeze = phase == 1;

        for (int u = 0; u < updates; ++u) {
            const auto indices = draw_indices(config.images_per_batch);

            std::vector<Micrograph> aug_images(indices.size());
            std::vector<LabelMap> aug_labels(indices.size());
            std::vector<std::vector<std::pair<int, int>>> coords(indices.size());
            for (size_t i = 0; i < indices.size(); ++i) {
                const DatasetItem& item = dataset[indices[i]];
                const AugmentParams params = config.augment.enabled
                                                 ? sample_augmentation(rng, config.augment)
                                                 : AugmentParams::identity();
                auto [img, lbl] = apply_augmentation(item.image, item.labels, params);
                coords[i] = sample_pixels(lbl, config.pixels_per_image, rng);
                aug_images[i] = std::move(img);
                aug_labels[i] = std::move(lbl);
            }

            std::vector<const Micrograph*> img_ptrs;
            std::vector<const LabelMap*> lbl_ptrs;
            for (size_t i = 0; i < indices.size(); ++i) {
                img_ptrs.push_back(&aug_images[i]);
                lbl_ptrs.push_back(&aug_labels[i]);
            }

            SparseBatch batch = forward_sparse(model, img_ptrs, lbl_ptrs, coords, &rng);
            LossResult lr_res = evaluate_loss(batch.mlp.logits, batch.labels, loss);

            model.zero_grads();
            backward_sparse(model, batch, lr_res.d_logits, freeze);
            adamw_step(model, opt, lr, config.adamw, freeze);

            result.history.push_back({++update, phase, lr_res.loss});
        }
    }
    return result;
}

std::vector<std::vector<size_t>> crossval_split(size_t n, int k, std::mt19937_64& rng) {
    if (k < 1 || static_cast<size_t>(k) > n)
        throw ImageError("crossval_split: k must lie in [1, n]");
    if (n % k != 0)
        std::cerr << "warning: dataset size " << n << " not divisible by " << k
                  << "; fold sizes differ by one\n";

    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    for (size_t i = 0; i + 1 < n; ++i) {
        std::uniform_int_distribution<size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    std::vector<std::vector<size_t>> folds(k);
    for (size_t i = 0; i < n; ++i) folds[i % k].push_back(idx[i]);
    return folds;
}

MetricStat mean_se(const std::vector<double>& values) {
    MetricStat s;
    s.n = static_cast<int>(values.size());
    if (values.empty()) return s;
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / s.n;
    s.mean = mean;
    if (s.n == 1) {
        s.se = 0.0;
        return s;
    }
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (s.n - 1));
    s.se = sd / std::sqrt(static_cast<double>(s.n));
    return s;
}

CrossvalReport run_crossval(const std::vector<DatasetItem>& dataset,
                            const ClassTaxonomy& taxonomy, const CrossvalConfig& config) {
    const int k = taxonomy.num_classes();
    CrossvalReport report;
    report.class_names = taxonomy.names;
    report.folds = config.folds;

    std::mt19937_64 split_rng(config.train.seed);
    const auto folds = crossval_split(dataset.size(), config.folds, split_rng);

    std::vector<std::vector<double>> prec(k), rec(k), iu_vals(k);
    std::vector<double> accs, mean_ius;

    for (size_t f = 0; f < folds.size(); ++f) {
        std::vector<DatasetItem> train_set;
        std::vector<const LabelMap*> train_labels;
        for (size_t g = 0; g < folds.size(); ++g) {
            if (g == f) continue;
            for (size_t i : folds[g]) train_set.push_back(dataset[i]);
        }
        for (const auto& item : train_set) train_labels.push_back(&item.labels);

        LossParams loss = config.loss;
        if (loss.alpha.empty())
            loss.alpha = class_weights_inverse_frequency(train_labels, 1e-4);

        TrainConfig tc = config.train;
        tc.seed = config.train.seed + f + 1;
        Model model = init_model(config.net, tc.seed);
        train(model, train_set, tc, loss);

        for (size_t i : folds[f]) {
            DensePrediction pred = predict_dense(model, dataset[i].image);
            ConfusionMatrix cm = confusion_matrix(pred.labels, dataset[i].labels);
            ClassMetrics m = compute_metrics(cm);
            for (int c = 0; c < k; ++c) {
                if (m.precision[c]) prec[c].push_back(*m.precision[c]);
                if (m.recall[c]) rec[c].push_back(*m.recall[c]);
                if (m.iu[c]) iu_vals[c].push_back(*m.iu[c]);
                if (!m.precision[c] || !m.recall[c] || !m.iu[c])
                    std::cerr << "warning: undefined metric for class "
                              << taxonomy.names[c] << " on a validation image; "
                              << "skipped in averages\n";
            }
            accs.push_back(m.accuracy);
            if (m.mean_iu) mean_ius.push_back(*m.mean_iu);
        }
    }

    for (int c = 0; c < k; ++c) {
        report.precision.push_back(mean_se(prec[c]));
        report.recall.push_back(mean_se(rec[c]));
        report.iu.push_back(mean_se(iu_vals[c]));
    }
    report.accuracy = mean_se(accs);
    report.mean_iu = mean_se(mean_ius);
    return report;
}

namespace {

json augment_to_json(const AugmentSpec& a) {
    return json{{"enabled", a.enabled},
                {"rotation_min", a.rotation_min},
                {"rotation_max", a.rotation_max},
                {"scale_min", a.scale_min},
                {"scale_max", a.scale_max},
                {"mirror_h", a.mirror_h},
                {"mirror_v", a.mirror_v},
                {"intensity_shift", a.intensity_shift}};
}

AugmentSpec augment_from_json(const json& j) {
    AugmentSpec a;
    a.enabled = j.value("enabled", a.enabled);
    a.rotation_min = j.value("rotation_min", a.rotation_min);
    a.rotation_max = j.value("rotation_max", a.rotation_max);
    a.scale_min = j.value("scale_min", a.scale_min);
    a.scale_max = j.value("scale_max", a.scale_max);
    a.mirror_h = j.value("mirror_h", a.mirror_h);
    a.mirror_v = j.value("mirror_v", a.mirror_v);
    a.intensity_shift = j.value("intensity_shift", a.intensity_shift);
    return a;
}

}  // namespace

TrainSetup load_train_setup(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ImageError("cannot open training config " + path.string());
    json j;
    in >> j;

    TrainSetup setup;
    if (j.contains("net")) setup.net = net_config_from_json(j["net"].dump());
    if (j.contains("train")) {
        const json& t = j["train"];
        setup.train.images_per_batch = t.value("images_per_batch", setup.train.images_per_batch);
        setup.train.pixels_per_image = t.value("pixels_per_image", setup.train.pixels_per_image);
        setup.train.phase1_lr = t.value("phase1_lr", setup.train.phase1_lr);
        setup.train.phase1_updates = t.value("phase1_updates", setup.train.phase1_updates);
        setup.train.phase2_lr = t.value("phase2_lr", setup.train.phase2_lr);
        setup.train.phase2_updates = t.value("phase2_updates", setup.train.phase2_updates);
        setup.train.adamw.weight_decay = t.value("weight_decay", setup.train.adamw.weight_decay);
        setup.train.adamw.beta1 = t.value("adam_beta1", setup.train.adamw.beta1);
        setup.train.adamw.beta2 = t.value("adam_beta2", setup.train.adamw.beta2);
        setup.train.adamw.eps = t.value("adam_eps", setup.train.adamw.eps);
        setup.train.seed = t.value("seed", setup.train.seed);
    }
    if (j.contains("augment")) setup.train.augment = augment_from_json(j["augment"]);
    if (j.contains("loss")) {
        const json& l = j["loss"];
        const std::string kind = l.value("kind", std::string("focal"));
        if (kind == "focal")
            setup.loss.kind = LossParams::Kind::Focal;
        else if (kind == "ce" || kind == "cross_entropy")
            setup.loss.kind = LossParams::Kind::CrossEntropy;
        else
            throw ImageError("unknown loss kind '" + kind + "'");
        setup.loss.gamma = l.value("gamma", setup.loss.gamma);
        if (l.contains("alpha") && !l["alpha"].is_null())
            setup.loss.alpha = l["alpha"].get<std::vector<double>>();
    }
    return setup;
}

void save_train_setup(const TrainSetup& setup, const std::filesystem::path& path) {
    json j;
    j["net"] = json::parse(net_config_to_json(setup.net));
    j["train"] = {{"images_per_batch", setup.train.images_per_batch},
                  {"pixels_per_image", setup.train.pixels_per_image},
                  {"phase1_lr", setup.train.phase1_lr},
                  {"phase1_updates", setup.train.phase1_updates},
                  {"phase2_lr", setup.train.phase2_lr},
                  {"phase2_updates", setup.train.phase2_updates},
                  {"weight_decay", setup.train.adamw.weight_decay},
                  {"adam_beta1", setup.train.adamw.beta1},
                  {"adam_beta2", setup.train.adamw.beta2},
                  {"adam_eps", setup.train.adamw.eps},
                  {"seed", setup.train.seed}};
    j["augment"] = augment_to_json(setup.train.augment);
    j["loss"] = {{"kind", setup.loss.kind == LossParams::Kind::Focal ? "focal" : "ce"},
                 {"gamma", setup.loss.gamma}};
    if (!setup.loss.alpha.empty()) j["loss"]["alpha"] = setup.loss.alpha;
    std::ofstream out(path);
    if (!out) throw ImageError("cannot write training config " + path.string());
    out << j.dump(2) << "\n";
}

}  // namespace microseg
