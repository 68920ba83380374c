#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "microseg/augment.hpp"
#include "microseg/checkpoint.hpp"
#include "microseg/dzone.hpp"
#include "microseg/equalize.hpp"
#include "microseg/manifest.hpp"
#include "microseg/metrics.hpp"
#include "microseg/model.hpp"
#include "microseg/particles.hpp"
#include "microseg/png_io.hpp"
#include "microseg/synthgen.hpp"
#include "microseg/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace microseg;

namespace {

constexpr const char* kVersion = "microseg 1.0.0";

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string file_hash(const fs::path& p) {
    if (p.empty()) return "none";
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ImageError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    std::ostringstream hex;
    hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a(ss.str());
    return hex.str();
}

// Every output set gets a run-manifest so the run can be reproduced from it.
void write_run_manifest(const fs::path& out_dir, const std::string& subcommand,
                        const json& inputs, const std::string& config_hash,
                        uint64_t seed, const std::vector<std::string>& outputs) {
    json j{{"tool", kVersion},
           {"subcommand", subcommand},
           {"inputs", inputs},
           {"config_hash", config_hash},
           {"seed", seed},
           {"outputs", outputs}};
    std::ofstream out(out_dir / "run_manifest.json");
    out << j.dump(2) << "\n";
}

void ensure_out(const fs::path& out) { fs::create_directories(out); }

void write_samples_csv(const EmpiricalDistribution& d, const fs::path& path,
                       const std::string& column) {
    std::ofstream out(path);
    out << column << "_" << d.units << "\n";
    out << std::setprecision(10);
    for (double v : d.samples) out << v << "\n";
}

json distribution_summary(const EmpiricalDistribution& d) {
    json j{{"n", d.samples.size()}, {"units", d.units}};
    if (!d.samples.empty()) {
        j["min"] = d.samples.front();
        j["max"] = d.samples.back();
        j["median"] = d.median();
        j["q25"] = d.quantile(0.25);
        j["q75"] = d.quantile(0.75);
    }
    return j;
}

json metrics_to_json(const ClassMetrics& m, const ClassTaxonomy& taxonomy) {
    json per = json::object();
    for (int c = 0; c < taxonomy.num_classes(); ++c) {
        json e{{"support", m.support[c]}, {"predicted", m.predicted[c]}};
        e["precision"] = m.precision[c] ? json(*m.precision[c]) : json(nullptr);
        e["recall"] = m.recall[c] ? json(*m.recall[c]) : json(nullptr);
        e["iu"] = m.iu[c] ? json(*m.iu[c]) : json(nullptr);
        per[taxonomy.names[c]] = e;
    }
    json j{{"classes", per}, {"accuracy", m.accuracy}};
    j["mean_iu"] = m.mean_iu ? json(*m.mean_iu) : json(nullptr);
    j["weighted_mean_iu"] =
        m.weighted_mean_iu ? json(*m.weighted_mean_iu) : json(nullptr);
    return j;
}

json stat_to_json(const MetricStat& s) {
    json j{{"n", s.n}};
    j["mean"] = s.mean ? json(*s.mean) : json(nullptr);
    j["se"] = s.se ? json(*s.se) : json(nullptr);
    return j;
}

EmpiricalDistribution load_samples_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ImageError("cannot open sample file " + path.string());
    std::string line;
    std::vector<double> values;
    std::string units = "px";
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            try {
                values.push_back(std::stod(line));
            } catch (const std::exception&) {
                // header row, e.g. "radius_px"
                auto us = line.rfind('_');
                if (us != std::string::npos) units = line.substr(us + 1);
            }
            continue;
        }
        values.push_back(std::stod(line));
    }
    return EmpiricalDistribution::from(std::move(values), units);
}

// ---- subcommand bodies ----

int cmd_synth(const fs::path& out, uint64_t seed, int count, int size,
              const std::string& mode) {
    ensure_out(out);
    std::vector<ManifestEntry> entries;
    std::vector<std::string> outputs;
    std::ofstream truth(out / "truth.csv");
    truth << "scene,particle,area_px,centroid_r,centroid_c,touches_border\n";

    for (int i = 0; i < count; ++i) {
        SceneSpec spec;
        spec.size = size;
        spec.seed = seed + static_cast<uint64_t>(i);
        std::ostringstream stem;
        stem << "scene_" << std::setw(3) << std::setfill('0') << i;

        Micrograph image;
        LabelMap labels;
        const ClassTaxonomy* taxonomy = &ClassTaxonomy::microconstituent();
        if (mode == "micro") {
            auto scene = generate_microconstituent_scene(spec);
            image = std::move(scene.image);
            labels = std::move(scene.labels);
        } else if (mode == "particles") {
            auto scene = generate_particle_scene(spec);
            image = std::move(scene.image);
            labels = std::move(scene.labels);
            taxonomy = &ClassTaxonomy::particle();
            for (size_t p = 0; p < scene.truth.particles.size(); ++p) {
                const Particle& pt = scene.truth.particles[p];
                truth << stem.str() << "," << p << "," << pt.area_px << ","
                      << pt.centroid_r << "," << pt.centroid_c << ","
                      << (pt.touches_border ? 1 : 0) << "\n";
            }
        } else {
            throw ImageError("synth: unknown mode '" + mode + "'");
        }

        const std::string img_name = stem.str() + ".png";
        const std::string lbl_name = stem.str() + "_labels.png";
        save_micrograph(image, out / img_name);
        save_labelmap(labels, *taxonomy, out / lbl_name);
        outputs.push_back(img_name);
        outputs.push_back(lbl_name);

        ManifestEntry e;
        e.image_path = img_name;
        e.label_path = lbl_name;
        e.um_per_px = spec.um_per_px;
        entries.push_back(std::move(e));
    }

    save_manifest(entries, out / "manifest.json");
    outputs.push_back("manifest.json");
    outputs.push_back("truth.csv");
    write_run_manifest(out, "synth",
                       json{{"count", count}, {"size", size}, {"mode", mode}},
                       "none", seed, outputs);
    return 0;
}

int cmd_train(const fs::path& manifest, const fs::path& config, const fs::path& out,
              uint64_t seed, const std::string& loss_kind) {
    ensure_out(out);
    TrainSetup setup;
    if (!config.empty()) setup = load_train_setup(config);
    setup.train.seed = seed;
    if (!loss_kind.empty())
        setup.loss.kind = loss_kind == "ce" ? LossParams::Kind::CrossEntropy
                                            : LossParams::Kind::Focal;

    const ClassTaxonomy& taxonomy = ClassTaxonomy::microconstituent();
    setup.net.num_classes = taxonomy.num_classes();
    auto dataset = load_dataset(manifest, taxonomy);

    if (setup.loss.alpha.empty()) {
        std::vector<const LabelMap*> maps;
        for (const auto& item : dataset) maps.push_back(&item.labels);
        setup.loss.alpha = class_weights_inverse_frequency(maps, 1e-4);
    }

    Model model = init_model(setup.net, seed);
    TrainResult result = train(model, dataset, setup.train, setup.loss);

    save_checkpoint(model, taxonomy, out / "model.ckpt");
    std::ofstream hist(out / "history.csv");
    hist << "update,phase,loss\n" << std::setprecision(12);
    for (const auto& r : result.history)
        hist << r.update << "," << r.phase << "," << r.loss << "\n";
    save_train_setup(setup, out / "config_used.json");

    write_run_manifest(out, "train",
                       json{{"manifest", manifest.string()},
                            {"config", config.string()},
                            {"loss", setup.loss.kind == LossParams::Kind::Focal
                                         ? "focal"
                                         : "ce"}},
                       file_hash(config), seed,
                       {"model.ckpt", "history.csv", "config_used.json"});
    return 0;
}

int cmd_predict(const fs::path& manifest, const fs::path& ckpt_path,
                const fs::path& out, const std::string& taxonomy_name) {
    ensure_out(out);
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    if (!taxonomy_name.empty()) {
        const ClassTaxonomy& requested = taxonomy_name == "particle"
                                             ? ClassTaxonomy::particle()
                                             : ClassTaxonomy::microconstituent();
        if (requested.num_classes() != ckpt.taxonomy.num_classes())
            throw ImageError("checkpoint has K=" +
                             std::to_string(ckpt.taxonomy.num_classes()) +
                             " classes but palette '" + taxonomy_name + "' has K=" +
                             std::to_string(requested.num_classes()));
    }

    const fs::path base = manifest.parent_path();
    std::vector<std::string> outputs;
    for (const ManifestEntry& e : load_manifest(manifest)) {
        fs::path img_path = e.image_path;
        if (img_path.is_relative()) img_path = base / img_path;
        Micrograph image = local_hist_equalize(load_micrograph(img_path));
        DensePrediction pred = predict_dense(ckpt.model, image);
        const std::string name = img_path.stem().string() + "_pred.png";
        save_labelmap(pred.labels, ckpt.taxonomy, out / name);
        outputs.push_back(name);
    }

    write_run_manifest(out, "predict",
                       json{{"manifest", manifest.string()},
                            {"checkpoint", ckpt_path.string()}},
                       file_hash(ckpt_path), 0, outputs);
    return 0;
}

// With a checkpoint, predictions come from dense inference; without one the
// manifest's image_path column is read as an already-predicted label map.
int cmd_evaluate(const fs::path& manifest, const fs::path& ckpt_path,
                 const fs::path& out) {
    ensure_out(out);
    const ClassTaxonomy& taxonomy = ClassTaxonomy::microconstituent();
    const fs::path base = manifest.parent_path();

    ConfusionMatrix total(taxonomy.num_classes());
    json per_image = json::array();
    for (const ManifestEntry& e : load_manifest(manifest)) {
        fs::path img_path = e.image_path, lbl_path = e.label_path;
        if (img_path.is_relative()) img_path = base / img_path;
        if (lbl_path.is_relative()) lbl_path = base / lbl_path;
        LabelMap gt = load_labelmap(lbl_path, taxonomy);

        LabelMap pred;
        if (!ckpt_path.empty()) {
            Checkpoint ckpt = load_checkpoint(ckpt_path);
            Micrograph image = local_hist_equalize(load_micrograph(img_path));
            pred = predict_dense(ckpt.model, image).labels;
        } else {
            pred = load_labelmap(img_path, taxonomy);
        }

        ConfusionMatrix cm = confusion_matrix(pred, gt);
        json entry = metrics_to_json(compute_metrics(cm), taxonomy);
        entry["image"] = e.image_path;
        per_image.push_back(entry);
        total += cm;
    }

    json report{{"overall", metrics_to_json(compute_metrics(total), taxonomy)},
                {"per_image", per_image}};
    std::ofstream(out / "metrics.json") << report.dump(2) << "\n";

    write_run_manifest(out, "evaluate",
                       json{{"manifest", manifest.string()},
                            {"checkpoint", ckpt_path.string()}},
                       file_hash(ckpt_path), 0, {"metrics.json"});
    return 0;
}

int cmd_crossval(const fs::path& manifest, const fs::path& config,
                 const fs::path& out, uint64_t seed, int folds,
                 const std::string& loss_kind) {
    ensure_out(out);
    TrainSetup setup;
    if (!config.empty()) setup = load_train_setup(config);
    setup.train.seed = seed;
    if (!loss_kind.empty())
        setup.loss.kind = loss_kind == "ce" ? LossParams::Kind::CrossEntropy
                                            : LossParams::Kind::Focal;

    const ClassTaxonomy& taxonomy = ClassTaxonomy::microconstituent();
    setup.net.num_classes = taxonomy.num_classes();
    auto dataset = load_dataset(manifest, taxonomy);

    CrossvalConfig cfg{setup.net, setup.train, setup.loss, folds};
    CrossvalReport report = run_crossval(dataset, taxonomy, cfg);

    json per = json::object();
    for (int c = 0; c < taxonomy.num_classes(); ++c)
        per[report.class_names[c]] = json{{"precision", stat_to_json(report.precision[c])},
                                          {"recall", stat_to_json(report.recall[c])},
                                          {"iu", stat_to_json(report.iu[c])}};
    json j{{"folds", report.folds},
           {"classes", per},
           {"accuracy", stat_to_json(report.accuracy)},
           {"mean_iu", stat_to_json(report.mean_iu)}};
    std::ofstream(out / "crossval.json") << j.dump(2) << "\n";

    write_run_manifest(out, "crossval",
                       json{{"manifest", manifest.string()},
                            {"config", config.string()},
                            {"folds", folds}},
                       file_hash(config), seed, {"crossval.json"});
    return 0;
}

// Particle size distributions from predicted label maps, or from raw images
// via Otsu thresholding when --otsu is given.
int cmd_psd(const fs::path& manifest, const fs::path& out, bool use_otsu,
            long min_area, int connectivity, bool keep_border) {
    ensure_out(out);
    const fs::path base = manifest.parent_path();
    std::vector<std::string> outputs;
    json summary = json::array();

    for (const ManifestEntry& e : load_manifest(manifest)) {
        fs::path src = use_otsu ? fs::path(e.image_path) : fs::path(e.label_path);
        if (src.is_relative()) src = base / src;

        Mask mask;
        if (use_otsu) {
            mask = otsu_threshold(load_micrograph(src)).mask;
        } else {
            LabelMap map = load_labelmap(src, ClassTaxonomy::particle());
            mask = class_mask(map, kParticleSpheroidite);
        }

        ParticleSet ps = connected_components(mask, connectivity, e.um_per_px);
        if (!keep_border) ps = remove_border_particles(ps);
        EmpiricalDistribution dist = particle_size_distribution(ps, min_area);

        const std::string name = src.stem().string() + "_psd.csv";
        write_samples_csv(dist, out / name, "radius");
        outputs.push_back(name);

        json entry = distribution_summary(dist);
        entry["source"] = src.filename().string();
        entry["particles"] = ps.particles.size();
        summary.push_back(entry);
    }

    std::ofstream(out / "psd_summary.json") << summary.dump(2) << "\n";
    outputs.push_back("psd_summary.json");
    write_run_manifest(out, "psd",
                       json{{"manifest", manifest.string()},
                            {"otsu", use_otsu},
                            {"min_area", min_area},
                            {"connectivity", connectivity}},
                       "none", 0, outputs);
    return 0;
}

int cmd_dzone(const fs::path& manifest, const fs::path& out, int closing_radius,
              long min_network) {
    ensure_out(out);
    const fs::path base = manifest.parent_path();
    DzoneParams params{closing_radius, min_network};
    std::vector<std::string> outputs;
    json summary = json::array();

    for (const ManifestEntry& e : load_manifest(manifest)) {
        fs::path src = e.label_path;
        if (src.is_relative()) src = base / src;
        LabelMap map = load_labelmap(src, ClassTaxonomy::microconstituent());

        LabelMap cleaned = clean_microconstituent_map(map, params);
        EmpiricalDistribution widths = denuded_zone_widths(map, params, e.um_per_px);

        const std::string stem = src.stem().string();
        write_samples_csv(widths, out / (stem + "_widths.csv"), "width");
        save_labelmap(cleaned, ClassTaxonomy::microconstituent(),
                      out / (stem + "_cleaned.png"));
        outputs.push_back(stem + "_widths.csv");
        outputs.push_back(stem + "_cleaned.png");

        json entry = distribution_summary(widths);
        entry["source"] = src.filename().string();
        summary.push_back(entry);
    }

    std::ofstream(out / "dzone_summary.json") << summary.dump(2) << "\n";
    outputs.push_back("dzone_summary.json");
    write_run_manifest(out, "dzone",
                       json{{"manifest", manifest.string()},
                            {"closing_radius", closing_radius},
                            {"min_network_component_px", min_network}},
                       "none", 0, outputs);
    return 0;
}

int cmd_fuse(const fs::path& particle_path, const fs::path& micro_path,
             const fs::path& out) {
    ensure_out(out);
    LabelMap particle = load_labelmap(particle_path, ClassTaxonomy::particle());
    LabelMap micro = load_labelmap(micro_path, ClassTaxonomy::microconstituent());
    LabelMap fused = fuse_predictions(particle, micro);
    save_labelmap(fused, ClassTaxonomy::particle(), out / "fused.png");
    write_run_manifest(out, "fuse",
                       json{{"particle", particle_path.string()},
                            {"micro", micro_path.string()}},
                       "none", 0, {"fused.png"});
    return 0;
}

// --a/--b compare two sample files; --pairs scores a list of pairs.
int cmd_ks(const fs::path& a_path, const fs::path& b_path, const fs::path& pairs_path,
           const fs::path& out, double significance) {
    ensure_out(out);
    json report;
    if (!pairs_path.empty()) {
        std::ifstream in(pairs_path);
        if (!in) throw ImageError("cannot open pairs file " + pairs_path.string());
        std::vector<std::pair<EmpiricalDistribution, EmpiricalDistribution>> pairs;
        std::string line;
        const fs::path base = pairs_path.parent_path();
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto comma = line.find(',');
            if (comma == std::string::npos)
                throw ImageError("pairs file: expected 'a.csv,b.csv' per line");
            fs::path pa = line.substr(0, comma), pb = line.substr(comma + 1);
            if (pa.is_relative()) pa = base / pa;
            if (pb.is_relative()) pb = base / pb;
            pairs.emplace_back(load_samples_csv(pa), load_samples_csv(pb));
        }
        report["pairs"] = pairs.size();
        report["consistency_score"] = ks_consistency_score(pairs, significance);
    } else {
        KsResult r = ks_two_sample(load_samples_csv(a_path), load_samples_csv(b_path),
                                   significance);
        report = json{{"d", r.d}, {"critical", r.critical}, {"reject", r.reject}};
    }
    report["significance"] = significance;
    std::ofstream(out / "ks.json") << report.dump(2) << "\n";

    write_run_manifest(out, "ks",
                       json{{"a", a_path.string()},
                            {"b", b_path.string()},
                            {"pairs", pairs_path.string()},
                            {"significance", significance}},
                       "none", 0, {"ks.json"});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Microstructure segmentation and metrology toolkit"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    fs::path manifest, config, out = ".", ckpt, particle_path, micro_path;
    fs::path ks_a, ks_b, ks_pairs;
    uint64_t seed = 0;
    int threads = 0, count = 16, size = 128, folds = 6, connectivity = 8;
    int closing_radius = 5;
    long min_area = 1, min_network = 0;
    double significance = 0.05;
    std::string mode = "micro", loss_kind, taxonomy_name;
    bool use_otsu = false, keep_border = false;

    auto add_common = [&](CLI::App* sub, bool needs_manifest) {
        if (needs_manifest)
            sub->add_option("--manifest", manifest, "Dataset manifest JSON")
                ->required()
                ->check(CLI::ExistingFile);
        sub->add_option("--out", out, "Output directory");
        sub->add_option("--threads", threads, "Worker threads (0 = default)");
    };

    CLI::App* synth = app.add_subcommand("synth", "Generate synthetic scenes");
    add_common(synth, false);
    synth->add_option("--seed", seed, "Generator seed");
    synth->add_option("--count", count, "Number of scenes");
    synth->add_option("--size", size, "Scene side length, px");
    synth->add_option("--mode", mode, "micro | particles")
        ->check(CLI::IsMember({"micro", "particles"}));

    CLI::App* train_cmd = app.add_subcommand("train", "Train a segmentation model");
    add_common(train_cmd, true);
    train_cmd->add_option("--config", config, "Training config JSON")
        ->check(CLI::ExistingFile);
    train_cmd->add_option("--seed", seed, "Training seed");
    train_cmd->add_option("--loss", loss_kind, "focal | ce")
        ->check(CLI::IsMember({"focal", "ce"}));

    CLI::App* predict = app.add_subcommand("predict", "Dense inference");
    add_common(predict, true);
    predict->add_option("--checkpoint", ckpt, "Model checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    predict->add_option("--taxonomy", taxonomy_name, "micro | particle palette check")
        ->check(CLI::IsMember({"micro", "particle"}));

    CLI::App* evaluate = app.add_subcommand("evaluate", "Score predictions");
    add_common(evaluate, true);
    evaluate->add_option("--checkpoint", ckpt, "Predict with this checkpoint")
        ->check(CLI::ExistingFile);

    CLI::App* crossval = app.add_subcommand("crossval", "k-fold cross-validation");
    add_common(crossval, true);
    crossval->add_option("--config", config, "Training config JSON")
        ->check(CLI::ExistingFile);
    crossval->add_option("--seed", seed, "Training seed");
    crossval->add_option("--folds", folds, "Fold count");
    crossval->add_option("--loss", loss_kind, "focal | ce")
        ->check(CLI::IsMember({"focal", "ce"}));

    CLI::App* psd = app.add_subcommand("psd", "Particle size distributions");
    add_common(psd, true);
    psd->add_flag("--otsu", use_otsu, "Threshold raw images instead of label maps");
    psd->add_option("--min-area", min_area, "Minimum particle area, px");
    psd->add_option("--connectivity", connectivity, "4 | 8")
        ->check(CLI::IsMember({4, 8}));
    psd->add_flag("--keep-border", keep_border, "Keep border-touching particles");

    CLI::App* dzone = app.add_subcommand("dzone", "Denuded-zone width maps");
    add_common(dzone, true);
    dzone->add_option("--closing-radius", closing_radius, "Morphological closing radius");
    dzone->add_option("--min-network", min_network,
                      "Drop network components below this pixel count");

    CLI::App* fuse = app.add_subcommand("fuse", "Fuse particle and microconstituent maps");
    add_common(fuse, false);
    fuse->add_option("--particle", particle_path, "Particle label map")
        ->required()
        ->check(CLI::ExistingFile);
    fuse->add_option("--micro", micro_path, "Microconstituent label map")
        ->required()
        ->check(CLI::ExistingFile);

    CLI::App* ks = app.add_subcommand("ks", "Two-sample Kolmogorov-Smirnov test");
    add_common(ks, false);
    ks->add_option("--a", ks_a, "First sample CSV")->check(CLI::ExistingFile);
    ks->add_option("--b", ks_b, "Second sample CSV")->check(CLI::ExistingFile);
    ks->add_option("--pairs", ks_pairs, "CSV pair list for a consistency score")
        ->check(CLI::ExistingFile);
    ks->add_option("--significance", significance, "Significance level");

    CLI11_PARSE(app, argc, argv);

#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#endif

    try {
        if (synth->parsed()) return cmd_synth(out, seed, count, size, mode);
        if (train_cmd->parsed()) return cmd_train(manifest, config, out, seed, loss_kind);
        if (predict->parsed()) return cmd_predict(manifest, ckpt, out, taxonomy_name);
        if (evaluate->parsed()) return cmd_evaluate(manifest, ckpt, out);
        if (crossval->parsed())
            return cmd_crossval(manifest, config, out, seed, folds, loss_kind);
        if (psd->parsed())
            return cmd_psd(manifest, out, use_otsu, min_area, connectivity, keep_border);
        if (dzone->parsed()) return cmd_dzone(manifest, out, closing_radius, min_network);
        if (fuse->parsed()) return cmd_fuse(particle_path, micro_path, out);
        if (ks->parsed()) {
            if (ks_pairs.empty() && (ks_a.empty() || ks_b.empty()))
                throw ImageError("ks: pass --a and --b, or --pairs");
            return cmd_ks(ks_a, ks_b, ks_pairs, out, significance);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
