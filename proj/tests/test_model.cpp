#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "microseg/checkpoint.hpp"
#include "microseg/loss.hpp"
#include "microseg/model.hpp"

using namespace microseg;
namespace fs = std::filesystem;

namespace {

NetConfig tiny_config() {
    NetConfig cfg;
    cfg.block_channels = {4, 8};
    cfg.convs_per_block = 1;
    cfg.mlp_widths = {8};
    cfg.num_classes = 3;
    return cfg;
}

Micrograph random_image(int h, int w, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    Micrograph m(h, w);
    for (double& v : m.pixels) v = u(rng);
    return m;
}

LabelMap random_labels(int h, int w, int k, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> li(0, k - 1);
    LabelMap l(h, w, k);
    for (auto& v : l.labels) v = static_cast<uint8_t>(li(rng));
    return l;
}

}  // namespace

TEST_CASE("initialization is deterministic and He-scaled") {
    NetConfig cfg = tiny_config();
    Model a = init_model(cfg, 5);
    Model b = init_model(cfg, 5);
    REQUIRE(a.params.size() == b.params.size());
    for (size_t i = 0; i < a.params.size(); ++i) {
        CHECK(a.params[i].name == b.params[i].name);
        CHECK(a.params[i].value.data == b.params[i].value.data);
    }

    Model c = init_model(cfg, 6);
    CHECK(a.param("block0.conv0.w").value.data != c.param("block0.conv0.w").value.data);

    // biases start at zero, batch-norm at identity
    for (double v : a.param("block0.conv0.b").value.data) CHECK(v == 0.0);
    for (double v : a.param("tap0.gamma").value.data) CHECK(v == 1.0);
    for (double v : a.buffer("tap0.var").data) CHECK(v == 1.0);

    // weight spread roughly sqrt(2/fan_in)
    const Tensor& w = a.param("mlp0.w").value;
    double ss = 0;
    for (double v : w.data) ss += v * v;
    const double fan_in = w.shape[1];
    CHECK(std::sqrt(ss / w.size()) ==
          doctest::Approx(std::sqrt(2.0 / fan_in)).epsilon(0.3));
}

TEST_CASE("backbone rejects undersized input") {
    NetConfig cfg;  // five blocks, min input 16
    Model m = init_model(cfg, 0);
    CHECK_THROWS_AS(backbone_forward(m, random_image(8, 8, 1)), ImageError);
    CHECK_NOTHROW(backbone_forward(m, random_image(16, 16, 1)));
}

TEST_CASE("stride-1 tap contributes its exact map value to the hypercolumn") {
    NetConfig cfg = tiny_config();
    Model model = init_model(cfg, 9);
    const Micrograph img = random_image(8, 8, 2);

    std::vector<BackboneCache> caches;
    caches.push_back(backbone_forward(model, img));
    TapBatch taps = batchnorm_taps(model, caches, /*train=*/true);

    const std::vector<std::pair<int, int>> coords{{3, 5}};
    std::vector<double> row(cfg.hypercolumn_dim());
    HypercolumnCache hc;
    sparse_hypercolumn(cfg, taps.maps[0], coords, 8, 8, row.data(), &hc);

    // tap 0 runs at input resolution: sampling must be exact
    const Tensor& t0 = taps.maps[0][0];
    for (int ch = 0; ch < cfg.block_channels[0]; ++ch)
        CHECK(row[ch] ==
              doctest::Approx(t0.data[(static_cast<size_t>(ch) * 8 + 3) * 8 + 5])
                  .epsilon(1e-12));

    CHECK_THROWS_AS(sparse_hypercolumn(cfg, taps.maps[0], {{8, 0}}, 8, 8, row.data(),
                                       nullptr),
                    ImageError);
}

TEST_CASE("sparse gradients match finite differences on a tiny net") {
    NetConfig cfg = tiny_config();
    Model model = init_model(cfg, 31);

    std::vector<Micrograph> images{random_image(8, 8, 41), random_image(8, 8, 42)};
    std::vector<LabelMap> labels{random_labels(8, 8, 3, 43), random_labels(8, 8, 3, 44)};
    std::vector<const Micrograph*> img_ptrs{&images[0], &images[1]};
    std::vector<const LabelMap*> lbl_ptrs{&labels[0], &labels[1]};
    std::vector<std::vector<std::pair<int, int>>> coords{{{0, 0}, {3, 4}, {7, 7}},
                                                         {{2, 2}, {5, 1}, {6, 6}}};

    // fix the dropout mask so the forward pass replays exactly
    const size_t mask_n = 6 * static_cast<size_t>(cfg.mlp_widths.back());
    std::vector<uint8_t> mask(mask_n, 1);
    std::mt19937_64 mask_rng(7);
    for (auto& v : mask) v = (mask_rng() % 10) != 0;

    LossParams loss;
    loss.kind = LossParams::Kind::Focal;
    loss.alpha = {0.5, 0.3, 0.2};

    auto objective = [&]() {
        SparseBatch b = forward_sparse(model, img_ptrs, lbl_ptrs, coords, nullptr, &mask);
        return evaluate_loss(b.mlp.logits, b.labels, loss).loss;
    };

    SparseBatch batch = forward_sparse(model, img_ptrs, lbl_ptrs, coords, nullptr, &mask);
    LossResult lr = evaluate_loss(batch.mlp.logits, batch.labels, loss);
    model.zero_grads();
    backward_sparse(model, batch, lr.d_logits, /*freeze_backbone=*/false);

    const double eps = 1e-5;
    for (const Param& p : model.params) {
        Param& mut = model.param(p.name);
        for (size_t i = 0; i < mut.value.size(); i += std::max<size_t>(1, mut.value.size() / 4)) {
            const double saved = mut.value.data[i];
            mut.value.data[i] = saved + eps;
            const double up = objective();
            mut.value.data[i] = saved - eps;
            const double down = objective();
            mut.value.data[i] = saved;
            const double fd = (up - down) / (2 * eps);
            const double an = mut.grad.data[i];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
            INFO(p.name << "[" << i << "] fd=" << fd << " an=" << an);
            CHECK(std::abs(fd - an) / denom < 1e-3);
        }
    }
}

TEST_CASE("freezing the backbone zeroes exactly the backbone gradients") {
    NetConfig cfg = tiny_config();
    Model model = init_model(cfg, 11);
    std::vector<Micrograph> images{random_image(8, 8, 1)};
    std::vector<LabelMap> labels{random_labels(8, 8, 3, 2)};
    std::vector<const Micrograph*> img_ptrs{&images[0]};
    std::vector<const LabelMap*> lbl_ptrs{&labels[0]};
    std::vector<std::vector<std::pair<int, int>>> coords{{{1, 1}, {4, 4}}};

    std::mt19937_64 rng(3);
    SparseBatch batch = forward_sparse(model, img_ptrs, lbl_ptrs, coords, &rng);
    LossParams loss;
    LossResult lr = evaluate_loss(batch.mlp.logits, batch.labels, loss);
    model.zero_grads();
    backward_sparse(model, batch, lr.d_logits, /*freeze_backbone=*/true);

    bool head_has_grad = false;
    for (const Param& p : model.params) {
        double mag = 0;
        for (double g : p.grad.data) mag += std::abs(g);
        if (p.backbone)
            CHECK(mag == 0.0);
        else if (mag > 0)
            head_has_grad = true;
    }
    CHECK(head_has_grad);
}

TEST_CASE("dense prediction is deterministic and tiling-invariant") {
    NetConfig cfg = tiny_config();
    Model model = init_model(cfg, 13);
    const Micrograph img = random_image(16, 12, 3);

    DensePrediction a = predict_dense(model, img);
    DensePrediction b = predict_dense(model, img);
    CHECK(a.labels.labels == b.labels.labels);
    CHECK(a.probs == b.probs);

    DensePrediction c = predict_dense(model, img, 17);  // awkward tile size
    CHECK(a.labels.labels == c.labels.labels);
    CHECK(a.probs == c.probs);

    REQUIRE(a.probs.size() == 3);
    for (size_t i = 0; i < img.size(); ++i) {
        double total = 0;
        for (int k = 0; k < 3; ++k) total += a.probs[k][i];
        CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(a.labels.labels[i] < 3);
    }
}

TEST_CASE("checkpoint save/load round trip is stable") {
    NetConfig cfg = tiny_config();
    cfg.deep_tap = true;
    cfg.deep_tap_channels = 6;
    cfg.num_classes = 4;
    Model model = init_model(cfg, 21);
    const ClassTaxonomy& tax = ClassTaxonomy::microconstituent();

    const fs::path dir = fs::temp_directory_path() / "microseg_ckpt_tests";
    fs::create_directories(dir);
    const fs::path p1 = dir / "a.ckpt", p2 = dir / "b.ckpt";

    save_checkpoint(model, tax, p1);
    Checkpoint back = load_checkpoint(p1);
    CHECK(back.taxonomy.names == tax.names);
    CHECK(back.model.config.block_channels == cfg.block_channels);
    CHECK(back.model.config.deep_tap == cfg.deep_tap);
    REQUIRE(back.model.params.size() == model.params.size());
    for (size_t i = 0; i < model.params.size(); ++i)
        for (size_t j = 0; j < model.params[i].value.size(); ++j)
            CHECK(back.model.params[i].value.data[j] ==
                  static_cast<double>(static_cast<float>(model.params[i].value.data[j])));

    // a second save of the loaded model is byte-identical
    save_checkpoint(back.model, back.taxonomy, p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::ostringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());
}

TEST_CASE("net config json round trip") {
    NetConfig cfg = tiny_config();
    cfg.deep_tap = true;
    cfg.dropout_rate = 0.2;
    NetConfig back = net_config_from_json(net_config_to_json(cfg));
    CHECK(back.block_channels == cfg.block_channels);
    CHECK(back.convs_per_block == cfg.convs_per_block);
    CHECK(back.mlp_widths == cfg.mlp_widths);
    CHECK(back.deep_tap == cfg.deep_tap);
    CHECK(back.dropout_rate == cfg.dropout_rate);
    CHECK(back.num_classes == cfg.num_classes);
}
