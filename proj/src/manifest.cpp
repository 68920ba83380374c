#include "microseg/manifest.hpp"

#include <fstream>

#include <json.hpp>

#include "microseg/equalize.hpp"
#include "microseg/png_io.hpp"

namespace microseg {

using nlohmann::json;

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ImageError("cannot open manifest " + path.string());
    json j;
    in >> j;
    if (!j.is_array()) throw ImageError("manifest must be a JSON array: " + path.string());

    std::vector<ManifestEntry> entries;
    for (const auto& rec : j) {
        ManifestEntry e;
        e.image_path = rec.at("image_path").get<std::string>();
        e.label_path = rec.at("label_path").get<std::string>();
        if (rec.contains("um_per_px") && !rec["um_per_px"].is_null())
            e.um_per_px = rec["um_per_px"].get<double>();
        if (rec.contains("split_tags"))
            e.split_tags = rec["split_tags"].get<std::vector<std::string>>();
        entries.push_back(std::move(e));
    }
    return entries;
}

void save_manifest(const std::vector<ManifestEntry>& entries,
                   const std::filesystem::path& path) {
    json j = json::array();
    for (const auto& e : entries) {
        json rec{{"image_path", e.image_path}, {"label_path", e.label_path}};
        if (e.um_per_px)
            rec["um_per_px"] = *e.um_per_px;
        else
            rec["um_per_px"] = nullptr;
        rec["split_tags"] = e.split_tags;
        j.push_back(std::move(rec));
    }
    std::ofstream out(path);
    if (!out) throw ImageError("cannot write manifest " + path.string());
    out << j.dump(2) << "\n";
}

std::vector<DatasetItem> load_dataset(const std::filesystem::path& manifest_path,
                                      const ClassTaxonomy& taxonomy, bool equalize,
                                      int equalize_tile, double equalize_clip) {
    const auto base = manifest_path.parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : base / fp;
    };

    std::vector<DatasetItem> items;
    for (const auto& e : load_manifest(manifest_path)) {
        DatasetItem item;
        item.image = load_micrograph(resolve(e.image_path));
        if (e.um_per_px) item.image.um_per_px = e.um_per_px;
        item.labels = load_labelmap(resolve(e.label_path), taxonomy);
        if (item.image.height != item.labels.height || item.image.width != item.labels.width)
            throw ImageError("image/label dimension mismatch for " + e.image_path);
        if (equalize)
            item.image = local_hist_equalize(item.image, equalize_tile, equalize_clip);
        item.split_tags = e.split_tags;
        items.push_back(std::move(item));
    }
    return items;
}

}  // namespace microseg
