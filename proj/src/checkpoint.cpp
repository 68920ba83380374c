#include "microseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace microseg {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
constexpr uint32_t kFormatVersion = 1;

json config_json(const NetConfig& c) {
    return json{{"block_channels", c.block_channels},
                {"convs_per_block", c.convs_per_block},
                {"kernel", c.kernel},
                {"deep_tap", c.deep_tap},
                {"deep_tap_channels", c.deep_tap_channels},
                {"deep_tap_kernel", c.deep_tap_kernel},
                {"mlp_widths", c.mlp_widths},
                {"dropout_rate", c.dropout_rate},
                {"num_classes", c.num_classes},
                {"bn_momentum", c.bn_momentum},
                {"bn_eps", c.bn_eps}};
}

NetConfig config_from(const json& j) {
    NetConfig c;
    c.block_channels = j.value("block_channels", c.block_channels);
    c.convs_per_block = j.value("convs_per_block", c.convs_per_block);
    c.kernel = j.value("kernel", c.kernel);
    c.deep_tap = j.value("deep_tap", c.deep_tap);
    c.deep_tap_channels = j.value("deep_tap_channels", c.deep_tap_channels);
    c.deep_tap_kernel = j.value("deep_tap_kernel", c.deep_tap_kernel);
    c.mlp_widths = j.value("mlp_widths", c.mlp_widths);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
    c.bn_eps = j.value("bn_eps", c.bn_eps);
    c.validate();
    return c;
}

void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
           (uint32_t(b[3]) << 24);
}

void write_f32_array(std::ostream& out, const Tensor& t) {
    std::vector<float> buf(t.size());
    for (size_t i = 0; i < t.size(); ++i) buf[i] = static_cast<float>(t.data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

void read_f32_array(std::istream& in, Tensor& t) {
    std::vector<float> buf(t.size());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw ImageError("checkpoint truncated");
    for (size_t i = 0; i < t.size(); ++i) t.data[i] = buf[i];
}

}  // namespace

std::string net_config_to_json(const NetConfig& config) {
    return config_json(config).dump(2);
}

NetConfig net_config_from_json(const std::string& json_text) {
    return config_from(json::parse(json_text));
}

void save_checkpoint(const Model& model, const ClassTaxonomy& taxonomy,
                     const std::filesystem::path& path) {
    json header;
    header["format_version"] = kFormatVersion;
    header["config"] = config_json(model.config);
    json tax;
    tax["names"] = taxonomy.names;
    json palette = json::array();
    for (const auto& rgb : taxonomy.palette) palette.push_back({rgb[0], rgb[1], rgb[2]});
    tax["palette"] = palette;
    header["taxonomy"] = tax;

    json dir = json::array();
    for (const auto& p : model.params)
        dir.push_back({{"name", p.name}, {"shape", p.value.shape}, {"kind", "param"}});
    for (const auto& [name, t] : model.buffers)
        dir.push_back({{"name", name}, {"shape", t.shape}, {"kind", "buffer"}});
    header["tensors"] = dir;

    const std::string header_text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, kFormatVersion);
    write_u32(out, static_cast<uint32_t>(header_text.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& p : model.params) write_f32_array(out, p.value);
    for (const auto& [name, t] : model.buffers) write_f32_array(out, t);
    if (!out) throw ImageError("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ImageError("not a checkpoint file: " + path.string());
    const uint32_t version = read_u32(in);
    if (version != kFormatVersion)
        throw ImageError("unsupported checkpoint version " + std::to_string(version));
    const uint32_t header_len = read_u32(in);
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), header_len);
    if (!in) throw ImageError("checkpoint truncated");

    const json header = json::parse(header_text);
    Checkpoint ckpt;
    ckpt.model = init_model(config_from(header.at("config")), 0);
    ckpt.taxonomy.names = header.at("taxonomy").at("names").get<std::vector<std::string>>();
    for (const auto& rgb : header.at("taxonomy").at("palette"))
        ckpt.taxonomy.palette.push_back(
            Rgb{rgb[0].get<uint8_t>(), rgb[1].get<uint8_t>(), rgb[2].get<uint8_t>()});

    for (const auto& entry : header.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const auto shape = entry.at("shape").get<std::vector<int>>();
        const std::string kind = entry.at("kind").get<std::string>();
        Tensor& dst = kind == "param" ? ckpt.model.param(name).value
                                      : ckpt.model.buffer(name);
        if (dst.shape != shape)
            throw ImageError("checkpoint shape mismatch for " + name);
        read_f32_array(in, dst);
    }
    return ckpt;
}

}  // namespace microseg
